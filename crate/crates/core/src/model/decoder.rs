use candle_core::{Tensor, D};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{
    glu, sinusoidal_positions, Conv1d, Ctx, DepthwiseConv1d, Init, LayerNorm, Linear,
    MultiHeadAttention, ParamStore,
};

/// Conv stack over the concatenated mel with masked rows replaced by a learned
/// MASK vector.
#[derive(Debug, Clone)]
pub struct MaskedMelEncoder {
    mask: Tensor,
    layers: Vec<(Conv1d, LayerNorm)>,
    dropout: f64,
    mel_bins: usize,
}

impl MaskedMelEncoder {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        let mut layers = Vec::new();
        let mut d_in = cfg.mel_bins;
        for i in 0..cfg.melenc_layers {
            layers.push((
                Conv1d::new(
                    ps,
                    &format!("{path}.conv{i}"),
                    d_in,
                    cfg.melenc_filters,
                    cfg.melenc_kernel,
                )?,
                LayerNorm::new(ps, &format!("{path}.norm{i}"), cfg.melenc_filters)?,
            ));
            d_in = cfg.melenc_filters;
        }
        Ok(Self {
            mask: ps.param(&format!("{path}.mask"), &[cfg.mel_bins], Init::Normal(0.3))?,
            layers,
            dropout: cfg.dropout,
            mel_bins: cfg.mel_bins,
        })
    }

    /// `mel` is `[T_fr, mel_bins]` with masked rows already zeroed; `mask` is a
    /// `[T_fr]` u8 tensor.
    pub fn substitute(&self, mel: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let (t, bins) = mel.dims2()?;
        if bins != self.mel_bins || mask.dims() != [t] {
            return Err(Error::InvalidInput(format!(
                "masked mel encoder expects [T, {}] mel and [T] mask, got {:?} and {:?}",
                self.mel_bins,
                mel.dims(),
                mask.dims()
            )));
        }
        let m = mask.unsqueeze(1)?.broadcast_as((t, bins))?;
        let fill = self.mask.unsqueeze(0)?.broadcast_as((t, bins))?;
        Ok(m.where_cond(&fill, mel)?)
    }

    pub fn forward(&self, ctx: &Ctx, mel: &Tensor, mask: &Tensor) -> Result<Tensor> {
        let mut h = self.substitute(mel, mask)?;
        for (conv, norm) in &self.layers {
            h = ctx.dropout(&norm.forward(&conv.forward(&h)?.relu()?)?, self.dropout)?;
        }
        Ok(h)
    }
}

#[derive(Debug, Clone)]
struct FeedForward {
    norm: LayerNorm,
    w1: Linear,
    w2: Linear,
}

impl FeedForward {
    fn new(ps: &mut ParamStore, path: &str, d: usize, ffn: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{path}.norm"), d)?,
            w1: Linear::new(ps, &format!("{path}.w1"), d, ffn)?,
            w2: Linear::new(ps, &format!("{path}.w2"), ffn, d)?,
        })
    }

    fn forward(&self, ctx: &Ctx, x: &Tensor, p: f64) -> Result<Tensor> {
        let h = ctx.dropout(&self.w1.forward(&self.norm.forward(x)?)?.silu()?, p)?;
        ctx.dropout(&self.w2.forward(&h)?, p)
    }
}

#[derive(Debug, Clone)]
struct ConvModule {
    norm: LayerNorm,
    pw1: Linear,
    dw: DepthwiseConv1d,
    mid_norm: LayerNorm,
    pw2: Linear,
}

impl ConvModule {
    fn new(ps: &mut ParamStore, path: &str, d: usize, kernel: usize) -> Result<Self> {
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{path}.norm"), d)?,
            pw1: Linear::new(ps, &format!("{path}.pw1"), d, 2 * d)?,
            dw: DepthwiseConv1d::new(ps, &format!("{path}.dw"), d, kernel)?,
            mid_norm: LayerNorm::new(ps, &format!("{path}.mid_norm"), d)?,
            pw2: Linear::new(ps, &format!("{path}.pw2"), d, d)?,
        })
    }

    fn forward(&self, ctx: &Ctx, x: &Tensor, p: f64) -> Result<Tensor> {
        let h = glu(&self.pw1.forward(&self.norm.forward(x)?)?)?;
        let h = self.mid_norm.forward(&self.dw.forward(&h)?)?.silu()?;
        ctx.dropout(&self.pw2.forward(&h)?, p)
    }
}

/// Half-step FFN, self-attention, convolution module, half-step FFN, final norm.
#[derive(Debug, Clone)]
pub struct ConformerBlock {
    ffn1: FeedForward,
    attn_norm: LayerNorm,
    attn: MultiHeadAttention,
    conv: ConvModule,
    ffn2: FeedForward,
    out_norm: LayerNorm,
    dropout: f64,
}

impl ConformerBlock {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            ffn1: FeedForward::new(ps, &format!("{path}.ffn1"), d, cfg.decoder_ffn)?,
            attn_norm: LayerNorm::new(ps, &format!("{path}.attn_norm"), d)?,
            attn: MultiHeadAttention::new(ps, &format!("{path}.attn"), d, d, d, d, cfg.decoder_heads)?,
            conv: ConvModule::new(ps, &format!("{path}.conv"), d, cfg.conformer_kernel)?,
            ffn2: FeedForward::new(ps, &format!("{path}.ffn2"), d, cfg.decoder_ffn)?,
            out_norm: LayerNorm::new(ps, &format!("{path}.out_norm"), d)?,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let p = self.dropout;
        let x = x.add(&(self.ffn1.forward(ctx, x, p)? * 0.5)?)?;
        let n = self.attn_norm.forward(&x)?;
        let (a, _) = self.attn.forward(&n, &n, None)?;
        let x = x.add(&ctx.dropout(&a, p)?)?;
        let x = x.add(&self.conv.forward(ctx, &x, p)?)?;
        let x = x.add(&(self.ffn2.forward(ctx, &x, p)? * 0.5)?)?;
        self.out_norm.forward(&x)
    }
}

/// Projects `frame_hidden ‖ melenc` to `d_model`, runs the Conformer stack and
/// maps to mel bins.
#[derive(Debug, Clone)]
pub struct Decoder {
    input: Linear,
    blocks: Vec<ConformerBlock>,
    out: Linear,
    d_model: usize,
}

impl Decoder {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            input: Linear::new(
                ps,
                &format!("{path}.input"),
                cfg.d_model + cfg.melenc_filters,
                cfg.d_model,
            )?,
            blocks: (0..cfg.decoder_blocks)
                .map(|i| ConformerBlock::new(ps, &format!("{path}.blocks.{i}"), cfg))
                .collect::<Result<_>>()?,
            out: Linear::new(ps, &format!("{path}.out"), cfg.d_model, cfg.mel_bins)?,
            d_model: cfg.d_model,
        })
    }

    pub fn forward(&self, ctx: &Ctx, frame_hidden: &Tensor, melenc: &Tensor) -> Result<Tensor> {
        let t = frame_hidden.dim(0)?;
        if melenc.dim(0)? != t {
            return Err(Error::InvalidInput(format!(
                "decoder inputs differ in length: {t} frames vs {} mel-encoder frames",
                melenc.dim(0)?
            )));
        }
        let x = self.input.forward(&Tensor::cat(&[frame_hidden, melenc], D::Minus1)?)?;
        let pos = sinusoidal_positions(t, self.d_model, x.dtype(), x.device())?;
        let mut x = x.add(&pos)?;
        for b in &self.blocks {
            x = b.forward(ctx, &x)?;
        }
        self.out.forward(&x)
    }
}

/// Residual conv refiner: `mel + convs(mel)`, tanh on all but the last layer.
#[derive(Debug, Clone)]
pub struct PostNet {
    pub layers: Vec<Conv1d>,
    dropout: f64,
}

impl PostNet {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        let n = cfg.postnet_layers;
        let layers = (0..n)
            .map(|i| {
                let d_in = if i == 0 { cfg.mel_bins } else { cfg.postnet_channels };
                let d_out = if i + 1 == n { cfg.mel_bins } else { cfg.postnet_channels };
                Conv1d::new(ps, &format!("{path}.conv{i}"), d_in, d_out, cfg.postnet_kernel)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layers,
            dropout: cfg.dropout,
        })
    }

    pub fn forward(&self, ctx: &Ctx, mel: &Tensor) -> Result<Tensor> {
        let mut h = mel.clone();
        let last = self.layers.len() - 1;
        for (i, conv) in self.layers.iter().enumerate() {
            h = conv.forward(&h)?;
            if i != last {
                h = h.tanh()?;
            }
            h = ctx.dropout(&h, self.dropout)?;
        }
        Ok(mel.add(&h)?)
    }
}
