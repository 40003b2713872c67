//! Cross-attention from phoneme states (queries) onto pair embeddings (keys
//! and values), and the fusion projection back to the phoneme stream.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Ctx, Init, Linear, MultiHeadAttention, ParamStore};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CuAttentionConfig {
    pub heads: usize,
    pub hidden: usize,
    /// Adds a learned per-pair-index embedding to the projected keys.
    pub use_pair_position: bool,
    pub dropout: f64,
}

impl Default for CuAttentionConfig {
    fn default() -> Self {
        Self {
            heads: 4,
            hidden: 512,
            use_pair_position: true,
            dropout: 0.1,
        }
    }
}

impl CuAttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.hidden == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!(
                "cu attention: hidden {} must be a positive multiple of heads {}",
                self.hidden, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig("cu attention: dropout must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct CuAttention {
    pub attn: MultiHeadAttention,
    pub pair_position: Option<Tensor>,
    pub cfg: CuAttentionConfig,
    d_model: usize,
    d_pbe: usize,
    num_pairs: usize,
}

impl CuAttention {
    pub fn new(
        ps: &mut ParamStore,
        path: &str,
        d_model: usize,
        d_pbe: usize,
        num_pairs: usize,
        cfg: &CuAttentionConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let attn = MultiHeadAttention::new(
            ps,
            &format!("{path}.attn"),
            d_model,
            d_pbe,
            cfg.hidden,
            d_model,
            cfg.heads,
        )?;
        let pair_position = if cfg.use_pair_position {
            Some(ps.param(
                &format!("{path}.pair_position"),
                &[num_pairs, cfg.hidden],
                Init::Normal(0.02),
            )?)
        } else {
            None
        };
        Ok(Self {
            attn,
            pair_position,
            cfg: cfg.clone(),
            d_model,
            d_pbe,
            num_pairs,
        })
    }

    /// `query` is `[T_ph, d_model]`, `pbes` is `[num_pairs, d_pbe]`. Returns
    /// the attended output `[T_ph, d_model]` and weights `[heads, T_ph, num_pairs]`.
    pub fn forward(&self, ctx: &Ctx, query: &Tensor, pbes: &Tensor) -> Result<(Tensor, Tensor)> {
        let (_, dq) = query.dims2()?;
        let (np, dp) = pbes.dims2()?;
        if dq != self.d_model || dp != self.d_pbe || np != self.num_pairs {
            return Err(Error::InvalidInput(format!(
                "cu attention expects query [*, {}] and pbes [{}, {}], got [*, {dq}] and [{np}, {dp}]",
                self.d_model, self.num_pairs, self.d_pbe
            )));
        }
        let (out, w) = self.attn.forward(query, pbes, self.pair_position.as_ref())?;
        Ok((ctx.dropout(&out, self.cfg.dropout)?, w))
    }
}

/// Concatenates phoneme states with the attended context and projects 2d -> d.
#[derive(Debug, Clone)]
pub struct Fuse {
    pub proj: Linear,
}

impl Fuse {
    pub fn new(ps: &mut ParamStore, path: &str, d_model: usize) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(ps, &format!("{path}.proj"), 2 * d_model, d_model)?,
        })
    }

    pub fn forward(&self, hidden: &Tensor, cu: &Tensor) -> Result<Tensor> {
        if hidden.dims() != cu.dims() {
            return Err(Error::InvalidInput(format!(
                "fuse inputs differ in shape: {:?} vs {:?}",
                hidden.dims(),
                cu.dims()
            )));
        }
        self.proj.forward(&Tensor::cat(&[hidden, cu], 1)?)
    }
}
