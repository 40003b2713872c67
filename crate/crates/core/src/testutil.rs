//! Synthetic paragraphs for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::{assemble_example, build_window, AssembleOptions, MaskPolicy, TrainingExample};
use crate::corpus::{energy_from_mel, PhonemeInventory, Utterance};
use crate::matrix::Matrix;
use crate::model::ModelConfig;

pub const BINS: usize = 8;
pub const D_PBE: usize = 6;

pub fn inventory() -> PhonemeInventory {
    PhonemeInventory::new(["a", "b", "c", "d"].map(String::from))
}

pub fn tiny_config() -> ModelConfig {
    let mut c = ModelConfig::tiny(inventory().len(), BINS, D_PBE);
    c.d_model = 16;
    c.cu.hidden = 16;
    c
}

pub fn utterance(rng: &mut ChaCha8Rng, index: usize) -> Utterance {
    let n = rng.random_range(3..6);
    let syms = ["sil", "a", "b", "c", "d"];
    let phonemes: Vec<String> = (0..n).map(|_| syms[rng.random_range(0..5)].to_string()).collect();
    let durations: Vec<u32> = (0..n).map(|_| rng.random_range(1..5)).collect();
    let frames: usize = durations.iter().map(|&d| d as usize).sum();
    let mel = Matrix::new(
        frames,
        BINS,
        (0..frames * BINS).map(|_| rng.random_range(-4.0..1.0)).collect(),
    )
    .unwrap();
    Utterance {
        utterance_id: format!("u{index}"),
        paragraph_id: "p".into(),
        index_in_paragraph: index,
        text: format!("sentence {index}"),
        phonemes,
        durations,
        f0: (0..frames)
            .map(|i| if i % 3 == 0 { 0.0 } else { rng.random_range(80.0..300.0) })
            .collect(),
        energy: energy_from_mel(&mel),
        mel,
    }
}

pub fn paragraph(seed: u64) -> Vec<Utterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..3).map(|i| utterance(&mut rng, i)).collect()
}

pub fn example(par: &[Utterance], policy: &MaskPolicy) -> TrainingExample {
    let w = build_window(par, 1, 2).unwrap();
    assemble_example(&w, policy, &inventory(), &AssembleOptions::default()).unwrap()
}

pub fn pbes(seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(4, D_PBE, (0..4 * D_PBE).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}
