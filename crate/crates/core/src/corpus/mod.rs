//! Corpus ingestion: waveform, transcript and forced-alignment tiers in,
//! paragraph-ordered utterances with mel, F0, energy and duration features out.

pub(crate) mod features;
mod ingest;
mod lexicon;
pub mod record;
pub mod toy;
pub mod wav;

pub use features::{
    energy_from_mel, extract_f0, extract_mel, mel_filterbank, phoneme_average, phoneme_average_f0,
    MelExtractor,
};
pub use ingest::{
    ingest, quantize_durations, read_alignment, read_manifest, AlignmentSegment, CorpusManifest,
    CorpusStore, ManifestRecord, ParagraphEntry, Split, SplitConfig, StoredUtterance,
};
pub use lexicon::{Lexicon, PhonemeInventory, Phonemized, SILENCE};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Lowest and highest F0 a valid utterance may carry (Hz); 0 marks unvoiced.
pub const F0_VALID_RANGE: (f32, f32) = (30.0, 800.0);

/// Framing and filterbank parameters shared by feature extraction and the vocoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AudioConfig {
    pub sample_rate_hz: u32,
    pub frame_shift_ms: f64,
    pub frame_length_ms: f64,
    pub mel_bins: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Natural-log floor applied to mel magnitudes.
    pub log_floor: f64,
    pub f0_min_hz: f64,
    pub f0_max_hz: f64,
    /// Minimum normalized autocorrelation peak for a frame to count as voiced.
    pub voicing_threshold: f64,
}

impl Default for AudioConfig {
    fn default() -> Self {
        Self {
            sample_rate_hz: 16_000,
            frame_shift_ms: 12.0,
            frame_length_ms: 48.0,
            mel_bins: 80,
            fmin_hz: 0.0,
            fmax_hz: 8_000.0,
            log_floor: 1e-5f64.ln(),
            f0_min_hz: 50.0,
            f0_max_hz: 600.0,
            voicing_threshold: 0.3,
        }
    }
}

impl AudioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        if !(self.frame_shift_ms > 0.0 && self.frame_length_ms > self.frame_shift_ms) {
            return Err(Error::InvalidConfig(
                "need frame_length_ms > frame_shift_ms > 0".into(),
            ));
        }
        if self.mel_bins == 0 {
            return Err(Error::InvalidConfig("mel_bins must be positive".into()));
        }
        if !(self.fmin_hz >= 0.0 && self.fmax_hz > self.fmin_hz) {
            return Err(Error::InvalidConfig("need 0 <= fmin_hz < fmax_hz".into()));
        }
        if self.fmax_hz > self.sample_rate_hz as f64 / 2.0 + 1e-9 {
            return Err(Error::InvalidConfig("fmax_hz exceeds Nyquist".into()));
        }
        if !(self.f0_min_hz > 0.0 && self.f0_max_hz > self.f0_min_hz) {
            return Err(Error::InvalidConfig("need 0 < f0_min_hz < f0_max_hz".into()));
        }
        self.hop_samples()?;
        self.win_samples()?;
        Ok(())
    }

    fn samples_for(&self, ms: f64, what: &str) -> Result<usize> {
        let exact = self.sample_rate_hz as f64 * ms / 1000.0;
        let rounded = exact.round();
        if (exact - rounded).abs() > 1e-9 || rounded < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "{what} of {ms} ms is {exact} samples at {} Hz, not an integer",
                self.sample_rate_hz
            )));
        }
        Ok(rounded as usize)
    }

    pub fn hop_samples(&self) -> Result<usize> {
        self.samples_for(self.frame_shift_ms, "frame shift")
    }

    pub fn win_samples(&self) -> Result<usize> {
        self.samples_for(self.frame_length_ms, "frame length")
    }

    pub fn n_fft(&self) -> Result<usize> {
        Ok(self.win_samples()?.next_power_of_two())
    }

    pub fn frames_for(&self, samples: usize) -> Result<usize> {
        Ok(samples.div_ceil(self.hop_samples()?))
    }
}

/// One sentence with its aligned acoustic features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub utterance_id: String,
    pub paragraph_id: String,
    pub index_in_paragraph: usize,
    pub text: String,
    pub phonemes: Vec<String>,
    /// Frames per phoneme.
    pub durations: Vec<u32>,
    /// Hz per frame, 0 = unvoiced.
    pub f0: Vec<f32>,
    pub energy: Vec<f32>,
    /// `[frames x mel_bins]` natural-log mel.
    pub mel: Matrix,
}

impl Utterance {
    pub fn frames(&self) -> usize {
        self.mel.rows()
    }

    pub fn total_duration(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.utterance_id;
        if self.durations.len() != self.phonemes.len() {
            return Err(Error::alignment(
                id,
                format!(
                    "{} durations for {} phonemes",
                    self.durations.len(),
                    self.phonemes.len()
                ),
            ));
        }
        let frames = self.frames();
        if self.total_duration() != frames || self.f0.len() != frames || self.energy.len() != frames
        {
            return Err(Error::alignment(
                id,
                format!(
                    "framing mismatch: durations {}, mel {}, f0 {}, energy {}",
                    self.total_duration(),
                    frames,
                    self.f0.len(),
                    self.energy.len()
                ),
            ));
        }
        let (lo, hi) = F0_VALID_RANGE;
        if let Some(bad) = self.f0.iter().find(|&&f| f != 0.0 && !(lo..=hi).contains(&f)) {
            return Err(Error::alignment(id, format!("F0 value {bad} out of range")));
        }
        Ok(())
    }

    /// Per-phoneme mean F0 over voiced frames.
    pub fn phoneme_pitch(&self) -> Result<Vec<f32>> {
        phoneme_average_f0(&self.f0, &self.durations)
    }

    pub fn phoneme_energy(&self) -> Result<Vec<f32>> {
        phoneme_average(&self.energy, &self.durations)
    }

    /// Frame range `[start, end)` covered by phonemes `[p_start, p_end)`.
    pub fn frame_range(&self, p_start: usize, p_end: usize) -> (usize, usize) {
        let start: usize = self.durations[..p_start].iter().map(|&d| d as usize).sum();
        let len: usize = self.durations[p_start..p_end]
            .iter()
            .map(|&d| d as usize)
            .sum();
        (start, start + len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_framing() {
        let cfg = AudioConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.hop_samples().unwrap(), 192);
        assert_eq!(cfg.win_samples().unwrap(), 768);
        assert_eq!(cfg.n_fft().unwrap(), 1024);
        assert!((cfg.log_floor - (-11.512925464970229)).abs() < 1e-12);
    }

    #[test]
    fn rejects_fractional_hop() {
        let cfg = AudioConfig {
            frame_shift_ms: 12.01,
            ..Default::default()
        };
        assert!(matches!(cfg.hop_samples(), Err(Error::InvalidConfig(_))));
        let cfg = AudioConfig {
            frame_length_ms: 10.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }
}
