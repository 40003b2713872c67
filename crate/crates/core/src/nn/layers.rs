use candle_core::{Tensor, D};

use super::{Init, ParamStore};
use crate::error::{Error, Result};

fn join(prefix: &str, name: &str) -> String {
    format!("{prefix}.{name}")
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// `[in, out]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn new(ps: &mut ParamStore, path: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            weight: ps.param(&join(path, "weight"), &[d_in, d_out], Init::Uniform(bound))?,
            bias: Some(ps.param(&join(path, "bias"), &[d_out], Init::Zeros)?),
        })
    }

    pub fn no_bias(ps: &mut ParamStore, path: &str, d_in: usize, d_out: usize) -> Result<Self> {
        let bound = 1.0 / (d_in as f64).sqrt();
        Ok(Self {
            weight: ps.param(&join(path, "weight"), &[d_in, d_out], Init::Uniform(bound))?,
            bias: None,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight)?;
        Ok(match &self.bias {
            Some(b) => y.broadcast_add(b)?,
            None => y,
        })
    }
}

/// Same-padded 1-D convolution over `[time, in]`, implemented as im2col + matmul.
#[derive(Debug, Clone)]
pub struct Conv1d {
    /// `[kernel * in, out]`, tap-major.
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(
        ps: &mut ParamStore,
        path: &str,
        d_in: usize,
        d_out: usize,
        kernel: usize,
    ) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "{path}: same-padded convolution needs an odd kernel, got {kernel}"
            )));
        }
        let bound = 1.0 / ((d_in * kernel) as f64).sqrt();
        Ok(Self {
            weight: ps.param(
                &join(path, "weight"),
                &[kernel * d_in, d_out],
                Init::Uniform(bound),
            )?,
            bias: ps.param(&join(path, "bias"), &[d_out], Init::Zeros)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(0)?;
        let pad = self.kernel / 2;
        let cols = if self.kernel == 1 {
            x.clone()
        } else {
            let xp = x.pad_with_zeros(0, pad, pad)?;
            let taps = (0..self.kernel)
                .map(|j| xp.narrow(0, j, t))
                .collect::<candle_core::Result<Vec<_>>>()?;
            Tensor::cat(&taps, 1)?
        };
        Ok(cols.matmul(&self.weight)?.broadcast_add(&self.bias)?)
    }
}

/// Per-channel convolution, `[time, c] -> [time, c]`.
#[derive(Debug, Clone)]
pub struct DepthwiseConv1d {
    /// `[kernel, c]`
    pub weight: Tensor,
    pub bias: Tensor,
    pub kernel: usize,
}

impl DepthwiseConv1d {
    pub fn new(ps: &mut ParamStore, path: &str, channels: usize, kernel: usize) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!("{path}: kernel must be odd")));
        }
        let bound = 1.0 / (kernel as f64).sqrt();
        Ok(Self {
            weight: ps.param(&join(path, "weight"), &[kernel, channels], Init::Uniform(bound))?,
            bias: ps.param(&join(path, "bias"), &[channels], Init::Zeros)?,
            kernel,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(0)?;
        let pad = self.kernel / 2;
        let xp = x.pad_with_zeros(0, pad, pad)?;
        let mut acc = self.bias.unsqueeze(0)?.broadcast_as(x.dims())?.contiguous()?;
        for j in 0..self.kernel {
            let w = self.weight.narrow(0, j, 1)?;
            acc = acc.add(&xp.narrow(0, j, t)?.broadcast_mul(&w)?)?;
        }
        Ok(acc)
    }
}

pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let mean = x.mean_keepdim(D::Minus1)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(D::Minus1)?;
    let normed = centered.broadcast_div(&(var + eps)?.sqrt()?)?;
    Ok(normed.broadcast_mul(gamma)?.broadcast_add(beta)?)
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(ps: &mut ParamStore, path: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gamma: ps.param(&join(path, "gamma"), &[dim], Init::Ones)?,
            beta: ps.param(&join(path, "beta"), &[dim], Init::Zeros)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, Self::EPS)
    }
}

#[derive(Debug, Clone)]
pub struct Embedding {
    /// `[count, dim]`
    pub table: Tensor,
}

impl Embedding {
    pub fn new(ps: &mut ParamStore, path: &str, count: usize, dim: usize) -> Result<Self> {
        Ok(Self {
            table: ps.param(&join(path, "table"), &[count, dim], Init::Normal(0.3))?,
        })
    }

    pub fn count(&self) -> usize {
        self.table.dims()[0]
    }

    pub fn forward(&self, ids: &[u32]) -> Result<Tensor> {
        let n = self.count();
        if let Some(bad) = ids.iter().find(|&&i| i as usize >= n) {
            return Err(Error::invalid(format!("id {bad} outside embedding table of {n}")));
        }
        let idx = Tensor::from_slice(ids, ids.len(), self.table.device())?;
        Ok(self.table.index_select(&idx, 0)?)
    }
}

/// Softmax over the last dimension. The row max is detached; softmax is
/// shift-invariant so gradients are unaffected.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let e = x.broadcast_sub(&max)?.exp()?;
    Ok(e.broadcast_div(&e.sum_keepdim(D::Minus1)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// Gated linear unit over the channel dimension: `a * sigmoid(b)`.
pub fn glu(x: &Tensor) -> Result<Tensor> {
    let c = x.dim(D::Minus1)? / 2;
    let a = x.narrow(D::Minus1, 0, c)?;
    let b = x.narrow(D::Minus1, c, c)?;
    Ok(a.mul(&sigmoid(&b)?)?)
}

/// Standard sine/cosine position table `[len, dim]`.
pub fn sinusoidal_positions(
    len: usize,
    dim: usize,
    dtype: candle_core::DType,
    device: &candle_core::Device,
) -> Result<Tensor> {
    let mut data = vec![0f64; len * dim];
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let a = pos as f64 * rate;
            data[pos * dim + i] = if i % 2 == 0 { a.sin() } else { a.cos() };
        }
    }
    Ok(Tensor::from_vec(data, (len, dim), device)?.to_dtype(dtype)?)
}

/// Scaled dot-product weights `[heads, tq, tk]` for already-split heads.
pub fn attention_weights(q: &Tensor, k: &Tensor) -> Result<Tensor> {
    let dh = q.dim(D::Minus1)? as f64;
    let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / dh.sqrt())?;
    softmax_last(&scores)
}

#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub heads: usize,
    pub hidden: usize,
}

impl MultiHeadAttention {
    /// Queries of width `d_query`, keys/values of width `d_kv`, output `d_out`.
    pub fn new(
        ps: &mut ParamStore,
        path: &str,
        d_query: usize,
        d_kv: usize,
        hidden: usize,
        d_out: usize,
        heads: usize,
    ) -> Result<Self> {
        if heads == 0 || !hidden.is_multiple_of(heads) {
            return Err(Error::InvalidConfig(format!(
                "{path}: hidden {hidden} not divisible by {heads} heads"
            )));
        }
        Ok(Self {
            q: Linear::new(ps, &join(path, "q"), d_query, hidden)?,
            k: Linear::new(ps, &join(path, "k"), d_kv, hidden)?,
            v: Linear::new(ps, &join(path, "v"), d_kv, hidden)?,
            o: Linear::new(ps, &join(path, "o"), hidden, d_out)?,
            heads,
            hidden,
        })
    }

    fn split(&self, x: &Tensor) -> Result<Tensor> {
        let t = x.dim(0)?;
        Ok(x
            .reshape((t, self.heads, self.hidden / self.heads))?
            .transpose(0, 1)?
            .contiguous()?)
    }

    /// Returns the projected output `[tq, d_out]` and weights `[heads, tq, tk]`.
    /// `key_bias` (`[tk, hidden]`) is added to the projected keys.
    pub fn forward(
        &self,
        query: &Tensor,
        kv: &Tensor,
        key_bias: Option<&Tensor>,
    ) -> Result<(Tensor, Tensor)> {
        let tq = query.dim(0)?;
        let q = self.split(&self.q.forward(query)?)?;
        let mut k = self.k.forward(kv)?;
        if let Some(b) = key_bias {
            k = k.add(b)?;
        }
        let k = self.split(&k)?;
        let v = self.split(&self.v.forward(kv)?)?;
        let w = attention_weights(&q, &k)?;
        let ctx = w
            .matmul(&v)?
            .transpose(0, 1)?
            .contiguous()?
            .reshape((tq, self.hidden))?;
        Ok((self.o.forward(&ctx)?, w))
    }
}
