use candle_core::Tensor;

use super::ModelConfig;
use crate::context::Segment;
use crate::error::{Error, Result};
use crate::nn::{sinusoidal_positions, Conv1d, Ctx, Embedding, LayerNorm, MultiHeadAttention, ParamStore};

/// Self-attention + conv feed-forward block with post-norm residuals.
#[derive(Debug, Clone)]
pub struct FftBlock {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    conv1: Conv1d,
    conv2: Conv1d,
    norm2: LayerNorm,
    dropout: f64,
}

impl FftBlock {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            attn: MultiHeadAttention::new(ps, &format!("{path}.attn"), d, d, d, d, cfg.encoder_heads)?,
            norm1: LayerNorm::new(ps, &format!("{path}.norm1"), d)?,
            conv1: Conv1d::new(ps, &format!("{path}.conv1"), d, cfg.encoder_ffn, cfg.encoder_kernel)?,
            conv2: Conv1d::new(ps, &format!("{path}.conv2"), cfg.encoder_ffn, d, 1)?,
            norm2: LayerNorm::new(ps, &format!("{path}.norm2"), d)?,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let (a, _) = self.attn.forward(x, x, None)?;
        let x = self.norm1.forward(&x.add(&ctx.dropout(&a, self.dropout)?)?)?;
        let h = self.conv2.forward(&self.conv1.forward(&x)?.relu()?)?;
        self.norm2.forward(&x.add(&ctx.dropout(&h, self.dropout)?)?)
    }
}

/// Token + position + segment embeddings followed by FFT blocks.
#[derive(Debug, Clone)]
pub struct PhonemeEncoder {
    tokens: Embedding,
    segments: Embedding,
    blocks: Vec<FftBlock>,
    d_model: usize,
    dropout: f64,
}

impl PhonemeEncoder {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            tokens: Embedding::new(ps, &format!("{path}.tokens"), cfg.vocab_size, cfg.d_model)?,
            segments: Embedding::new(ps, &format!("{path}.segments"), 3, cfg.d_model)?,
            blocks: (0..cfg.encoder_layers)
                .map(|i| FftBlock::new(ps, &format!("{path}.blocks.{i}"), cfg))
                .collect::<Result<_>>()?,
            d_model: cfg.d_model,
            dropout: cfg.dropout,
        })
    }

    /// `[T_ph, d_model]`
    pub fn forward(&self, ctx: &Ctx, ids: &[u32], segments: &[Segment]) -> Result<Tensor> {
        if ids.is_empty() || ids.len() != segments.len() {
            return Err(Error::InvalidInput(format!(
                "phoneme encoder needs matching non-empty ids and segments, got {} and {}",
                ids.len(),
                segments.len()
            )));
        }
        let seg: Vec<u32> = segments.iter().map(|&s| s as u32).collect();
        let table = &self.tokens.table;
        let pos = sinusoidal_positions(ids.len(), self.d_model, table.dtype(), table.device())?;
        let x = self
            .tokens
            .forward(ids)?
            .add(&pos)?
            .add(&self.segments.forward(&seg)?)?;
        let mut x = ctx.dropout(&x, self.dropout)?;
        for b in &self.blocks {
            x = b.forward(ctx, &x)?;
        }
        Ok(x)
    }
}
