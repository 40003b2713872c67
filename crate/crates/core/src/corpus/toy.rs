//! Deterministic synthetic corpus: harmonic "vowels", noisy "consonants" and
//! digital silence, with exact frame-aligned phoneme tiers. Lets every tool in
//! the crate run without external data.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ingest::ManifestRecord;
use super::lexicon::{Lexicon, SILENCE};
use super::{wav, AudioConfig};
use crate::error::Result;

const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const VOICED: [&str; 5] = ["b", "d", "g", "m", "n"];
const UNVOICED: [&str; 3] = ["k", "s", "t"];
const WORDS: [&str; 12] = [
    "bada", "kumi", "sote", "gina", "mobu", "tekasi", "nuda", "bimo", "sagu", "dekon", "tima",
    "gobe",
];

#[derive(Debug, Clone)]
pub struct ToyCorpusConfig {
    pub paragraphs: usize,
    pub sentences_per_paragraph: usize,
    pub words_per_sentence: (usize, usize),
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            paragraphs: 3,
            sentences_per_paragraph: 4,
            words_per_sentence: (2, 4),
            seed: 7,
        }
    }
}

/// Lexicon covering the toy words plus single-letter fallbacks.
pub fn toy_lexicon() -> Lexicon {
    let mut lex = Lexicon::default();
    for w in WORDS {
        lex.insert(w, w.chars().map(|c| c.to_string()).collect());
    }
    for p in VOWELS.iter().chain(&VOICED).chain(&UNVOICED) {
        lex.insert(p, vec![p.to_string()]);
    }
    lex
}

struct Voice {
    rng: ChaCha8Rng,
    phase: f64,
    lowpass: f64,
}

impl Voice {
    /// Renders one phoneme of `n` samples at pitch `f0` (Hz).
    fn render(&mut self, phoneme: &str, n: usize, f0: f64, sr: f64, out: &mut Vec<f32>) {
        if phoneme == SILENCE {
            out.extend(std::iter::repeat_n(0.0, n));
            return;
        }
        let vowel = VOWELS.iter().position(|v| *v == phoneme);
        let voiced = VOICED.iter().position(|v| *v == phoneme);
        let unvoiced = UNVOICED.iter().position(|v| *v == phoneme);
        for _ in 0..n {
            self.phase += 2.0 * PI * f0 / sr;
            if self.phase > 2.0 * PI {
                self.phase -= 2.0 * PI;
            }
            let noise: f64 = self.rng.random_range(-1.0..1.0);
            let s = if let Some(v) = vowel {
                // vowel identity lives in the harmonic envelope
                (1..=6)
                    .map(|h| {
                        let w = 1.0 / (1.0 + ((h as f64) - 1.0 - v as f64).abs());
                        w * (h as f64 * self.phase).sin()
                    })
                    .sum::<f64>()
                    * 0.12
                    + 0.002 * noise
            } else if let Some(c) = voiced {
                0.1 * self.phase.sin() + 0.03 * (2.0 * self.phase).sin() * (c as f64 + 1.0) / 5.0
                    + 0.004 * noise
            } else {
                let c = unvoiced.unwrap_or(0);
                let alpha = 0.2 + 0.3 * c as f64;
                self.lowpass = alpha * self.lowpass + (1.0 - alpha) * noise;
                0.05 * (noise - self.lowpass)
            };
            out.push(s as f32);
        }
    }
}

/// Writes `wav/`, `lab/`, `manifest.jsonl` and `lexicon.txt` under `dir` and
/// returns the manifest path.
pub fn write_toy_corpus(dir: &Path, cfg: &ToyCorpusConfig, audio: &AudioConfig) -> Result<PathBuf> {
    audio.validate()?;
    let hop = audio.hop_samples()?;
    let sr = audio.sample_rate_hz as f64;
    let lex = toy_lexicon();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fs::create_dir_all(dir.join("wav"))?;
    fs::create_dir_all(dir.join("lab"))?;
    let mut manifest = String::new();
    for p in 0..cfg.paragraphs {
        let pid = format!("p{p:02}");
        // paragraph-level prosody shared by its sentences
        let base_f0 = rng.random_range(95.0..170.0);
        let tempo = rng.random_range(0.8..1.25);
        for s in 0..cfg.sentences_per_paragraph {
            let uid = format!("{pid}_s{s:02}");
            let n_words = rng.random_range(cfg.words_per_sentence.0..=cfg.words_per_sentence.1);
            let words: Vec<&str> = (0..n_words)
                .map(|_| WORDS[rng.random_range(0..WORDS.len())])
                .collect();
            let text = words.join(" ");
            let phonemes = lex.phonemize(&text, true)?.phonemes;
            let mut voice = Voice {
                rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ ((p as u64) << 32 | s as u64)),
                phase: 0.0,
                lowpass: 0.0,
            };
            let mut wave = Vec::new();
            let mut lab = String::new();
            let mut frame = 0usize;
            let sentence_f0 = base_f0 * (1.0 + 0.04 * s as f64);
            let total = phonemes.len();
            for (k, ph) in phonemes.iter().enumerate() {
                let base = if ph == SILENCE {
                    rng.random_range(3..6)
                } else if VOWELS.contains(&ph.as_str()) {
                    rng.random_range(5..9)
                } else {
                    rng.random_range(3..6)
                };
                let frames = ((base as f64 * tempo).round() as usize).max(1);
                // declination over the sentence
                let f0 = sentence_f0 * (1.1 - 0.25 * k as f64 / total as f64);
                voice.render(ph, frames * hop, f0, sr, &mut wave);
                lab.push_str(&format!(
                    "{ph} {:.6} {:.6}\n",
                    (frame * hop) as f64 / sr,
                    ((frame + frames) * hop) as f64 / sr
                ));
                frame += frames;
            }
            let wav_rel = format!("wav/{uid}.wav");
            let lab_rel = format!("lab/{uid}.lab");
            wav::write_wav(&dir.join(&wav_rel), &wave, audio.sample_rate_hz)?;
            fs::write(dir.join(&lab_rel), lab)?;
            let rec = ManifestRecord {
                utterance_id: uid,
                paragraph_id: pid.clone(),
                index: s,
                text,
                audio_path: wav_rel.into(),
                alignment_path: lab_rel.into(),
            };
            manifest.push_str(&serde_json::to_string(&rec)?);
            manifest.push('\n');
        }
    }
    fs::write(dir.join("lexicon.txt"), lex.to_text())?;
    let path = dir.join("manifest.jsonl");
    fs::write(&path, manifest)?;
    Ok(path)
}
