use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::semantic::CuAttentionConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Phoneme inventory size; filled in from the corpus when zero.
    pub vocab_size: usize,
    pub mel_bins: usize,
    pub d_model: usize,

    pub encoder_layers: usize,
    pub encoder_heads: usize,
    pub encoder_ffn: usize,
    pub encoder_kernel: usize,

    pub decoder_blocks: usize,
    pub decoder_heads: usize,
    pub decoder_ffn: usize,
    pub conformer_kernel: usize,

    pub melenc_layers: usize,
    pub melenc_filters: usize,
    pub melenc_kernel: usize,

    pub postnet_layers: usize,
    pub postnet_channels: usize,
    pub postnet_kernel: usize,

    pub variance_filters: usize,
    pub variance_kernel: usize,
    pub pitch_bins: usize,
    pub pitch_min_hz: f32,
    pub pitch_max_hz: f32,
    pub energy_bins: usize,
    pub energy_max: f32,
    /// Upper clamp on predicted frames per phoneme.
    pub max_duration: u32,

    pub dropout: f64,
    pub d_pbe: usize,
    /// Sentence pairs per example (`2L`).
    pub num_pairs: usize,
    pub cu: CuAttentionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            mel_bins: 80,
            d_model: 256,
            encoder_layers: 4,
            encoder_heads: 2,
            encoder_ffn: 1024,
            encoder_kernel: 9,
            decoder_blocks: 4,
            decoder_heads: 2,
            decoder_ffn: 1024,
            conformer_kernel: 15,
            melenc_layers: 2,
            melenc_filters: 256,
            melenc_kernel: 3,
            postnet_layers: 5,
            postnet_channels: 256,
            postnet_kernel: 5,
            variance_filters: 256,
            variance_kernel: 3,
            pitch_bins: 256,
            pitch_min_hz: 50.0,
            pitch_max_hz: 600.0,
            energy_bins: 256,
            energy_max: 110.0,
            max_duration: 64,
            dropout: 0.2,
            d_pbe: 768,
            num_pairs: 4,
            cu: CuAttentionConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Small network for the toy corpus and tests.
    pub fn tiny(vocab_size: usize, mel_bins: usize, d_pbe: usize) -> Self {
        Self {
            vocab_size,
            mel_bins,
            d_model: 32,
            encoder_layers: 1,
            encoder_heads: 2,
            encoder_ffn: 64,
            encoder_kernel: 3,
            decoder_blocks: 1,
            decoder_heads: 2,
            decoder_ffn: 64,
            conformer_kernel: 7,
            melenc_filters: 32,
            postnet_channels: 32,
            variance_filters: 32,
            pitch_bins: 32,
            energy_bins: 32,
            dropout: 0.0,
            d_pbe,
            cu: CuAttentionConfig {
                heads: 2,
                hidden: 32,
                use_pair_position: true,
                dropout: 0.0,
            },
            ..Self::default()
        }
    }

    /// Position of the unvoiced pitch bin is 0; voiced bins follow.
    pub fn pitch_embeddings(&self) -> usize {
        self.pitch_bins + 1
    }

    pub fn postnet_radius(&self) -> usize {
        self.postnet_layers * (self.postnet_kernel / 2)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("mel_bins", self.mel_bins),
            ("d_model", self.d_model),
            ("encoder_heads", self.encoder_heads),
            ("encoder_ffn", self.encoder_ffn),
            ("encoder_kernel", self.encoder_kernel),
            ("decoder_heads", self.decoder_heads),
            ("decoder_ffn", self.decoder_ffn),
            ("conformer_kernel", self.conformer_kernel),
            ("melenc_layers", self.melenc_layers),
            ("melenc_filters", self.melenc_filters),
            ("melenc_kernel", self.melenc_kernel),
            ("postnet_layers", self.postnet_layers),
            ("postnet_channels", self.postnet_channels),
            ("postnet_kernel", self.postnet_kernel),
            ("variance_filters", self.variance_filters),
            ("variance_kernel", self.variance_kernel),
            ("pitch_bins", self.pitch_bins),
            ("energy_bins", self.energy_bins),
            ("d_pbe", self.d_pbe),
            ("num_pairs", self.num_pairs),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("model.{name} must be positive")));
            }
        }
        for (name, heads) in [
            ("encoder_heads", self.encoder_heads),
            ("decoder_heads", self.decoder_heads),
        ] {
            if !self.d_model.is_multiple_of(heads) {
                return Err(Error::InvalidConfig(format!(
                    "model.d_model {} is not divisible by model.{name} {heads}",
                    self.d_model
                )));
            }
        }
        for (name, k) in [
            ("encoder_kernel", self.encoder_kernel),
            ("conformer_kernel", self.conformer_kernel),
            ("melenc_kernel", self.melenc_kernel),
            ("postnet_kernel", self.postnet_kernel),
            ("variance_kernel", self.variance_kernel),
        ] {
            if k % 2 == 0 {
                return Err(Error::InvalidConfig(format!("model.{name} must be odd, got {k}")));
            }
        }
        if !(self.pitch_min_hz > 0.0 && self.pitch_min_hz < self.pitch_max_hz) {
            return Err(Error::InvalidConfig(
                "model.pitch_min_hz must be positive and below model.pitch_max_hz".into(),
            ));
        }
        if !(self.energy_max > 0.0) {
            return Err(Error::InvalidConfig("model.energy_max must be positive".into()));
        }
        if self.max_duration == 0 {
            return Err(Error::InvalidConfig("model.max_duration must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("model.dropout must be in [0, 1)".into()));
        }
        self.cu.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_reference_settings() {
        let c = ModelConfig::default();
        assert_eq!((c.melenc_layers, c.melenc_filters, c.melenc_kernel), (2, 256, 3));
        assert_eq!(c.postnet_layers, 5);
        assert_eq!((c.cu.heads, c.cu.hidden), (4, 512));
        assert_eq!(c.postnet_radius(), 10);
    }

    #[test]
    fn validation() {
        assert!(ModelConfig::tiny(10, 8, 8).validate().is_ok());
        assert!(ModelConfig::default().validate().is_err());
        let mut c = ModelConfig::tiny(10, 8, 8);
        c.postnet_kernel = 4;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::tiny(10, 8, 8);
        c.encoder_heads = 3;
        assert!(c.validate().is_err());
    }
}
