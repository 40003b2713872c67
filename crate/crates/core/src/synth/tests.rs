use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::Lexicon;
use crate::semantic::ToyEmbedder;
use crate::testutil::{inventory, tiny_config, BINS, D_PBE};

fn lexicon() -> Lexicon {
    Lexicon::parse("ab a b\ncd c d\nba b a\ndc d c\n").unwrap()
}

const TEXTS: [&str; 3] = ["ab cd", "ba dc ab", "cd ab"];

fn spoken(lex: &Lexicon, text: &str, index: usize, rng: &mut ChaCha8Rng) -> Utterance {
    let phonemes = lex.phonemize(text, true).unwrap().phonemes;
    let durations: Vec<u32> = phonemes.iter().map(|_| rng.random_range(2..5)).collect();
    let frames: usize = durations.iter().map(|&d| d as usize).sum();
    let mel = Matrix::new(frames, BINS, (0..frames * BINS).map(|_| rng.random_range(-4.0..1.0)).collect()).unwrap();
    Utterance {
        utterance_id: format!("u{index}"),
        paragraph_id: "p".into(),
        index_in_paragraph: index,
        text: text.into(),
        phonemes,
        durations,
        f0: (0..frames).map(|i| if i % 4 == 0 { 0.0 } else { 150.0 }).collect(),
        energy: energy_from_mel(&mel),
        mel,
    }
}

fn paragraph() -> Vec<Utterance> {
    let lex = lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    TEXTS.iter().enumerate().map(|(i, t)| spoken(&lex, t, i, &mut rng)).collect()
}

struct Fixture {
    model: MaskedSpeech,
    embedder: ToyEmbedder,
    lexicon: Lexicon,
    inventory: PhonemeInventory,
}

impl Fixture {
    fn new() -> Self {
        let mut cfg = tiny_config();
        cfg.max_duration = 6;
        Self {
            model: MaskedSpeech::new(&cfg, candle_core::DType::F32, 3).unwrap(),
            embedder: ToyEmbedder::new(D_PBE, 0).unwrap(),
            lexicon: lexicon(),
            inventory: inventory(),
        }
    }

    fn synth(&self) -> Synthesizer<'_> {
        Synthesizer {
            model: &self.model,
            embedder: &self.embedder,
            lexicon: &self.lexicon,
            inventory: &self.inventory,
            semantic_context: 2,
        }
    }
}

fn texts() -> Vec<String> {
    TEXTS.iter().map(|s| s.to_string()).collect()
}

fn request(mode: SynthMode, index: usize, par: &[Utterance]) -> SynthesisRequest {
    SynthesisRequest {
        mode,
        texts: texts(),
        index,
        previous: (index > 0 && mode != SynthMode::TextOnly).then(|| par[index - 1].clone()),
        following: (mode == SynthMode::FullContext).then(|| par.get(index + 1).cloned()).flatten(),
    }
}

#[test]
fn text_only_frames_match_durations() {
    let f = Fixture::new();
    let out = f.synth().synthesize(&request(SynthMode::TextOnly, 1, &[])).unwrap();
    assert_eq!(out.phonemes.len(), 8);
    assert_eq!(out.frames(), out.durations.iter().map(|&d| d as usize).sum::<usize>());
    assert!(out.durations.iter().all(|&d| (1..=6).contains(&d)));
    assert!(out.mel.all_finite());
    assert_eq!(out.context_mel.rows(), 0);
}

#[test]
fn every_mode_runs_and_is_deterministic() {
    let f = Fixture::new();
    let par = paragraph();
    for mode in [SynthMode::FullContext, SynthMode::PrevSpeechOnly, SynthMode::TextOnly] {
        for index in 0..3 {
            let a = f.synth().synthesize(&request(mode, index, &par)).unwrap();
            let b = f.synth().synthesize(&request(mode, index, &par)).unwrap();
            assert!(a.mel.bit_eq(&b.mel), "{mode:?} {index}");
            assert_eq!(a.mel.cols(), BINS);
        }
    }
}

#[test]
fn missing_context_is_rejected() {
    let f = Fixture::new();
    let mut req = request(SynthMode::PrevSpeechOnly, 1, &paragraph());
    req.previous = None;
    assert!(matches!(f.synth().synthesize(&req), Err(Error::InvalidRequest(_))));
    let mut req = request(SynthMode::FullContext, 1, &paragraph());
    req.following = None;
    assert!(matches!(f.synth().synthesize(&req), Err(Error::InvalidRequest(_))));
    let mut req = request(SynthMode::TextOnly, 0, &[]);
    req.index = 3;
    assert!(matches!(f.synth().synthesize(&req), Err(Error::InvalidRequest(_))));
    let mut req = request(SynthMode::TextOnly, 0, &[]);
    req.texts[0] = "zz".into();
    assert!(matches!(f.synth().synthesize(&req), Err(Error::Frontend(_))));
}

#[test]
fn paragraph_reading_chains_outputs() {
    let f = Fixture::new();
    let outs = f.synth().synthesize_paragraph(&texts(), "p").unwrap();
    assert_eq!(outs.len(), 3);
    assert_eq!(outs[0].context_mel.rows(), 0);
    for k in 1..3 {
        assert!(outs[k].context_mel.bit_eq(&outs[k - 1].mel));
    }
    let u = outs[1].to_utterance("x", "p", 1);
    u.validate().unwrap();
}

#[test]
fn edit_preserves_frames_away_from_the_span() {
    let f = Fixture::new();
    let par = paragraph();
    let radius = f.model.cfg.postnet_radius();
    let base = &par[1];
    // "ba dc ab" with silence padding: replace "dc" (phonemes 3..5).
    let out = f
        .synth()
        .edit(&EditRequest { paragraph: &par, index: 1, span: (3, 5), replacement: "cd ab".into() })
        .unwrap();
    let (fa, fb) = base.frame_range(3, 5);
    let (ea, eb) = out.edited_frames;
    assert_eq!(ea, fa);
    assert_eq!(out.phonemes.len(), base.phonemes.len() + 2);
    assert_eq!(out.mel.rows(), out.durations.iter().map(|&d| d as usize).sum::<usize>());
    for r in 0..out.mel.rows() {
        if r + radius < ea {
            assert_eq!(out.mel.row(r), base.mel.row(r));
        } else if r >= eb + radius {
            assert_eq!(out.mel.row(r), base.mel.row(r - eb + fb));
        }
    }
    // Unchanged phonemes keep their durations.
    assert_eq!(out.durations[..3], base.durations[..3]);
    assert_eq!(out.durations[7..], base.durations[5..]);
}

#[test]
fn edit_deletion_and_noop() {
    let f = Fixture::new();
    let par = paragraph();
    let base = &par[1];
    let same = f
        .synth()
        .edit(&EditRequest { paragraph: &par, index: 1, span: (2, 2), replacement: String::new() })
        .unwrap();
    assert!(same.mel.bit_eq(&base.mel));
    let del = f
        .synth()
        .edit(&EditRequest { paragraph: &par, index: 1, span: (3, 5), replacement: String::new() })
        .unwrap();
    let (fa, fb) = base.frame_range(3, 5);
    assert_eq!(del.mel.rows(), base.frames() - (fb - fa));
    assert_eq!(del.edited_frames, (fa, fa));
    for bad in [(4, 3), (0, 99)] {
        let r = f.synth().edit(&EditRequest { paragraph: &par, index: 1, span: bad, replacement: "ab".into() });
        assert!(matches!(r, Err(Error::Edit(_))));
    }
}
