//! Inference orchestration: context-conditioned sentence synthesis, sequential
//! paragraph reading, speech editing, and a Griffin-Lim waveform fallback.

mod vocoder;

pub use vocoder::mel_to_wave;

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::context::{derive_pairs_from_texts, Segment, TrainingExample};
use crate::corpus::{energy_from_mel, Lexicon, PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{MaskedSpeech, Mode};
use crate::nn::{tensor_to_vec, Ctx};
use crate::semantic::{embed_pairs, PairEmbedder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthMode {
    /// Previous and following speech as acoustic context.
    FullContext,
    /// Previous speech only; the following sentence contributes text alone.
    PrevSpeechOnly,
    /// No acoustic context.
    TextOnly,
}

impl FromStr for SynthMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full-context" => Ok(Self::FullContext),
            "prev-speech-only" => Ok(Self::PrevSpeechOnly),
            "text-only" => Ok(Self::TextOnly),
            other => Err(Error::InvalidRequest(format!(
                "unknown mode '{other}' (full-context, prev-speech-only, text-only)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub mode: SynthMode,
    pub griffin_lim_iters: usize,
    pub vocoder_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            mode: SynthMode::PrevSpeechOnly,
            griffin_lim_iters: 32,
            vocoder_seed: 0,
        }
    }
}

/// One sentence of a paragraph to synthesize.
#[derive(Debug, Clone)]
pub struct SynthesisRequest {
    pub mode: SynthMode,
    pub texts: Vec<String>,
    pub index: usize,
    pub previous: Option<Utterance>,
    pub following: Option<Utterance>,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub text: String,
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    /// Predicted per-phoneme F0 in Hz.
    pub pitch: Vec<f32>,
    pub mel: Matrix,
    /// Previous-sentence mel that was fed to the model as context.
    pub context_mel: Matrix,
}

impl SynthesisOutput {
    pub fn frames(&self) -> usize {
        self.mel.rows()
    }

    /// Packs the output as an utterance so it can serve as context for the next sentence.
    pub fn to_utterance(&self, utterance_id: &str, paragraph_id: &str, index: usize) -> Utterance {
        let f0 = self
            .pitch
            .iter()
            .zip(&self.durations)
            .flat_map(|(&p, &d)| std::iter::repeat_n(if p >= 30.0 { p } else { 0.0 }, d as usize))
            .collect();
        Utterance {
            utterance_id: utterance_id.to_string(),
            paragraph_id: paragraph_id.to_string(),
            index_in_paragraph: index,
            text: self.text.clone(),
            phonemes: self.phonemes.clone(),
            durations: self.durations.clone(),
            f0,
            energy: energy_from_mel(&self.mel),
            mel: self.mel.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EditRequest<'a> {
    /// Paragraph holding the utterance; neighbours provide acoustic context.
    pub paragraph: &'a [Utterance],
    pub index: usize,
    /// Phoneme range `[start, end)` of the base utterance to replace.
    pub span: (usize, usize),
    pub replacement: String,
}

#[derive(Debug, Clone)]
pub struct EditOutput {
    pub mel: Matrix,
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    /// Frames of the regenerated material in the output.
    pub edited_frames: (usize, usize),
}

/// A sentence segment under construction.
struct Part {
    segment: Segment,
    phonemes: Vec<String>,
    durations: Vec<u32>,
    pitch: Vec<f32>,
    energy: Vec<f32>,
    mel: Matrix,
    regenerate: Vec<bool>,
}

impl Part {
    fn speech(u: &Utterance, segment: Segment) -> Result<Self> {
        u.validate()?;
        Ok(Self {
            segment,
            phonemes: u.phonemes.clone(),
            durations: u.durations.clone(),
            pitch: u.phoneme_pitch()?,
            energy: u.phoneme_energy()?,
            mel: u.mel.clone(),
            regenerate: vec![false; u.phonemes.len()],
        })
    }

    fn text(phonemes: Vec<String>, segment: Segment, bins: usize, regenerate: bool) -> Self {
        let n = phonemes.len();
        Self {
            segment,
            phonemes,
            durations: vec![0; n],
            pitch: vec![0.0; n],
            energy: vec![0.0; n],
            mel: Matrix::zeros(0, bins),
            regenerate: vec![regenerate; n],
        }
    }
}

pub struct Synthesizer<'a> {
    pub model: &'a MaskedSpeech,
    pub embedder: &'a dyn PairEmbedder,
    pub lexicon: &'a Lexicon,
    pub inventory: &'a PhonemeInventory,
    /// Sentences per side for pair derivation.
    pub semantic_context: usize,
}

impl<'a> Synthesizer<'a> {
    fn phonemize(&self, text: &str) -> Result<Vec<String>> {
        let p = self.lexicon.phonemize(text, true)?.phonemes;
        for s in &p {
            if self.inventory.id(s).is_none() {
                return Err(Error::Frontend(format!(
                    "phoneme '{s}' from '{text}' is not in the model inventory"
                )));
            }
        }
        Ok(p)
    }

    fn run(&self, parts: &[Part], pairs_texts: (&[&str], &str, &[&str])) -> Result<(TrainingExample, crate::model::ModelOutputs)> {
        let bins = self.model.cfg.mel_bins;
        let (pre, cur_text, fol) = pairs_texts;
        let pairs = derive_pairs_from_texts(pre, cur_text, fol, self.semantic_context);
        let pbes = embed_pairs(&pairs, self.embedder)?;
        let mut ex = TrainingExample {
            utterance_id: String::new(),
            phoneme_ids: Vec::new(),
            segments: Vec::new(),
            durations: Vec::new(),
            pitch: Vec::new(),
            energy: Vec::new(),
            concat_mel: Matrix::zeros(0, bins),
            mask_flags: Vec::new(),
            regenerate: Vec::new(),
            current_phoneme_span: (0, 0),
            current_frame_span: (0, 0),
            pairs,
            target_mel: Matrix::zeros(0, bins),
        };
        let mut frame = 0;
        for p in parts {
            if p.mel.cols() != bins {
                return Err(Error::InvalidRequest(format!(
                    "context mel has {} bins, model expects {bins}",
                    p.mel.cols()
                )));
            }
            if p.segment == Segment::Cur {
                ex.current_phoneme_span = (ex.phoneme_ids.len(), ex.phoneme_ids.len() + p.phonemes.len());
                ex.current_frame_span = (frame, frame + p.mel.rows());
            }
            ex.phoneme_ids.extend(self.inventory.ids(&p.phonemes)?);
            ex.segments.extend(std::iter::repeat_n(p.segment, p.phonemes.len()));
            ex.durations.extend(&p.durations);
            ex.pitch.extend(&p.pitch);
            ex.energy.extend(&p.energy);
            ex.regenerate.extend(&p.regenerate);
            frame += p.mel.rows();
        }
        let mels: Vec<&Matrix> = parts.iter().map(|p| &p.mel).collect();
        ex.concat_mel = Matrix::vstack(&mels)?;
        ex.target_mel = ex.concat_mel.clone();
        ex.mask_flags = vec![false; frame];
        let out = self.model.forward(&Ctx::eval(), &ex, &pbes, Mode::Infer)?;
        Ok((ex, out))
    }

    pub fn synthesize(&self, req: &SynthesisRequest) -> Result<SynthesisOutput> {
        let n = req.texts.len();
        if req.index >= n {
            return Err(Error::InvalidRequest(format!(
                "sentence index {} outside a paragraph of {n}",
                req.index
            )));
        }
        let bins = self.model.cfg.mel_bins;
        let has_prev = req.index > 0;
        let has_next = req.index + 1 < n;
        if !has_prev && req.previous.is_some() {
            return Err(Error::InvalidRequest("previous speech given for the first sentence".into()));
        }
        if !has_next && req.following.is_some() {
            return Err(Error::InvalidRequest("following speech given for the last sentence".into()));
        }
        let mut parts = Vec::new();
        if has_prev {
            let text_part = || -> Result<Part> {
                Ok(Part::text(self.phonemize(&req.texts[req.index - 1])?, Segment::Prev, bins, false))
            };
            parts.push(match req.mode {
                SynthMode::TextOnly => text_part()?,
                _ => Part::speech(
                    req.previous.as_ref().ok_or_else(|| {
                        Error::InvalidRequest(format!("{:?} needs the previous sentence's speech", req.mode))
                    })?,
                    Segment::Prev,
                )?,
            });
        }
        let current = self.phonemize(&req.texts[req.index])?;
        parts.push(Part::text(current.clone(), Segment::Cur, bins, true));
        if has_next {
            parts.push(match req.mode {
                SynthMode::FullContext => Part::speech(
                    req.following.as_ref().ok_or_else(|| {
                        Error::InvalidRequest("full-context needs the following sentence's speech".into())
                    })?,
                    Segment::Next,
                )?,
                _ => Part::text(self.phonemize(&req.texts[req.index + 1])?, Segment::Next, bins, false),
            });
        }
        let context_mel = match (req.mode, has_prev) {
            (SynthMode::TextOnly, _) | (_, false) => Matrix::zeros(0, bins),
            _ => parts[0].mel.clone(),
        };
        let texts: Vec<&str> = req.texts.iter().map(String::as_str).collect();
        let (ex, out) = self.run(
            &parts,
            (&texts[..req.index], texts[req.index], &texts[req.index + 1..]),
        )?;
        let (ps, pe) = ex.current_phoneme_span;
        let pitch: Vec<f32> = tensor_to_vec(&out.pitch_pred)?[ps..pe]
            .iter()
            .map(|v| v.exp_m1().max(0.0))
            .collect();
        Ok(SynthesisOutput {
            text: req.texts[req.index].clone(),
            phonemes: current,
            durations: out.durations[ps..pe].to_vec(),
            pitch,
            mel: out.current_mel()?,
            context_mel,
        })
    }

    /// Reads a paragraph in order, feeding each emitted mel to the next sentence
    /// as its previous-speech context.
    pub fn synthesize_paragraph(&self, texts: &[String], paragraph_id: &str) -> Result<Vec<SynthesisOutput>> {
        let mut outs: Vec<SynthesisOutput> = Vec::with_capacity(texts.len());
        for index in 0..texts.len() {
            let previous = outs
                .last()
                .map(|o| o.to_utterance(&format!("{paragraph_id}_{:03}", index - 1), paragraph_id, index - 1));
            outs.push(self.synthesize(&SynthesisRequest {
                mode: SynthMode::PrevSpeechOnly,
                texts: texts.to_vec(),
                index,
                previous,
                following: None,
            })?);
        }
        Ok(outs)
    }

    /// Regenerates phonemes `[a, b)` of an utterance with `replacement` text.
    /// Frames further than the PostNet radius from the edit are copied from
    /// the original.
    pub fn edit(&self, req: &EditRequest) -> Result<EditOutput> {
        let base = req
            .paragraph
            .get(req.index)
            .ok_or_else(|| Error::Edit(format!("no utterance at index {}", req.index)))?;
        base.validate()?;
        let (a, b) = req.span;
        if a > b || b > base.phonemes.len() {
            return Err(Error::Edit(format!(
                "span {a}:{b} is outside the {} phonemes of {}",
                base.phonemes.len(),
                base.utterance_id
            )));
        }
        let replacement = self.lexicon.phonemize(&req.replacement, false)?.phonemes;
        if a == b && replacement.is_empty() {
            return Ok(EditOutput {
                mel: base.mel.clone(),
                phonemes: base.phonemes.clone(),
                durations: base.durations.clone(),
                edited_frames: base.frame_range(a, a),
            });
        }
        for s in &replacement {
            if self.inventory.id(s).is_none() {
                return Err(Error::Frontend(format!("phoneme '{s}' is not in the model inventory")));
            }
        }
        let bins = self.model.cfg.mel_bins;
        let (fa, fb) = base.frame_range(a, b);
        let pitch = base.phoneme_pitch()?;
        let energy = base.phoneme_energy()?;
        let keep = |r: std::ops::Range<usize>| r.clone().map(move |k| (k, false));
        let layout: Vec<(usize, bool)> = keep(0..a)
            .chain((0..replacement.len()).map(|k| (k, true)))
            .chain(keep(b..base.phonemes.len()))
            .collect();
        let mut cur = Part::text(Vec::new(), Segment::Cur, bins, false);
        for &(k, new) in &layout {
            if new {
                cur.phonemes.push(replacement[k].clone());
                cur.durations.push(0);
                cur.pitch.push(0.0);
                cur.energy.push(0.0);
                cur.regenerate.push(true);
            } else {
                cur.phonemes.push(base.phonemes[k].clone());
                cur.durations.push(base.durations[k]);
                cur.pitch.push(pitch[k]);
                cur.energy.push(energy[k]);
                cur.regenerate.push(false);
            }
        }
        cur.mel = Matrix::vstack(&[&base.mel.slice_rows(0, fa)?, &base.mel.slice_rows(fb, base.frames())?])?;

        let mut parts = Vec::new();
        if req.index > 0 {
            parts.push(Part::speech(&req.paragraph[req.index - 1], Segment::Prev)?);
        }
        parts.push(cur);
        if let Some(next) = req.paragraph.get(req.index + 1) {
            parts.push(Part::speech(next, Segment::Next)?);
        }
        let texts: Vec<&str> = req.paragraph.iter().map(|u| u.text.as_str()).collect();
        let (ex, out) = self.run(
            &parts,
            (&texts[..req.index], texts[req.index], &texts[req.index + 1..]),
        )?;
        let (ps, pe) = ex.current_phoneme_span;
        let durations = out.durations[ps..pe].to_vec();
        let generated = out.current_mel()?;
        let new_frames: usize = durations[a..a + replacement.len()].iter().map(|&d| d as usize).sum();
        let (ea, eb) = (fa, fa + new_frames);
        let radius = self.model.cfg.postnet_radius();
        let mut mel = Matrix::zeros(generated.rows(), bins);
        for r in 0..generated.rows() {
            let src = if r + radius < ea {
                base.mel.row(r)
            } else if r >= eb + radius {
                base.mel.row(r - eb + fb)
            } else {
                generated.row(r)
            };
            mel.row_mut(r).copy_from_slice(src);
        }
        let phonemes = layout
            .iter()
            .map(|&(k, new)| if new { replacement[k].clone() } else { base.phonemes[k].clone() })
            .collect();
        Ok(EditOutput {
            mel,
            phonemes,
            durations,
            edited_frames: (ea, eb),
        })
    }
}

#[cfg(test)]
mod tests;
