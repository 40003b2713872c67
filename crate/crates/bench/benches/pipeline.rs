use candle_core::DType;
use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use maskedspeech_core::context::{assemble_example, build_window, derive_pairs, AssembleOptions};
use maskedspeech_core::corpus::toy::{toy_lexicon, write_toy_corpus, ToyCorpusConfig};
use maskedspeech_core::corpus::{ingest, read_manifest, MelExtractor, SplitConfig};
use maskedspeech_core::eval::dtw_align;
use maskedspeech_core::nn::Ctx;
use maskedspeech_core::semantic::{embed_pairs, ToyEmbedder};
use maskedspeech_core::synth::mel_to_wave;
use maskedspeech_core::{AudioConfig, MaskPolicy, MaskedSpeech, Matrix, Mode, ModelConfig, PhonemeInventory};

fn random_mel(rows: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(rows, 80, (0..rows * 80).map(|_| rng.random_range(-11.0..2.0)).collect()).unwrap()
}

fn features(c: &mut Criterion) {
    let audio = AudioConfig::default();
    let extractor = MelExtractor::new(&audio).unwrap();
    let wave: Vec<f32> = (0..audio.sample_rate_hz as usize)
        .map(|i| (i as f32 * 0.07).sin() * 0.3)
        .collect();
    c.bench_function("mel extraction, 1 s", |b| b.iter(|| extractor.mel(black_box(&wave)).unwrap()));
    let mel = random_mel(84, 1);
    c.bench_function("griffin-lim 8 iters, 1 s", |b| {
        b.iter(|| mel_to_wave(black_box(&mel), &audio, 8, 0).unwrap())
    });
}

fn alignment(c: &mut Criterion) {
    let (a, b) = (random_mel(200, 2), random_mel(220, 3));
    c.bench_function("dtw 200x220", |bch| bch.iter(|| dtw_align(black_box(&a), black_box(&b)).unwrap()));
}

fn model(c: &mut Criterion) {
    let dir = std::env::temp_dir().join("maskedspeech-bench-corpus");
    let audio = AudioConfig::default();
    let manifest = write_toy_corpus(&dir, &ToyCorpusConfig::default(), &audio).unwrap();
    let lexicon = toy_lexicon();
    let inv = PhonemeInventory::from_lexicon(&lexicon);
    let split = SplitConfig { valid_sentences: 0, test_sentences: 0, ..SplitConfig::default() };
    let store = ingest(&read_manifest(&manifest).unwrap(), &audio, &inv, &split, 0).unwrap();
    let window = build_window(&store.paragraphs[0], 1, 2).unwrap();
    let example = assemble_example(&window, &MaskPolicy::CurrentSentence, &inv, &AssembleOptions::default()).unwrap();
    let embedder = ToyEmbedder::new(64, 0).unwrap();
    let pbes = embed_pairs(&derive_pairs(&window), &embedder).unwrap();
    let cfg = ModelConfig::tiny(inv.len(), audio.mel_bins, 64);
    let tiny = MaskedSpeech::new(&cfg, DType::F32, 0).unwrap();
    c.bench_function("tiny model forward", |b| {
        b.iter(|| tiny.forward(&Ctx::eval(), black_box(&example), &pbes, Mode::Infer).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = features, alignment, model
}
criterion_main!(benches);
