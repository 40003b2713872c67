//! Small layer kit over `candle_core`: a named parameter store, a forward
//! context carrying train/eval mode and dropout randomness, and 2-D
//! (`[time, channels]`) layers.

mod layers;

pub use layers::{
    attention_weights, glu, layer_norm, sigmoid, sinusoidal_positions, softmax_last, Conv1d,
    DepthwiseConv1d, Embedding, LayerNorm, Linear, MultiHeadAttention,
};

use std::cell::RefCell;
use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Normal(f64),
}

/// Trainable tensors keyed by canonical dotted path (`decoder.blocks.0.ffn1.w1.weight`).
pub struct ParamStore {
    vars: BTreeMap<String, Var>,
    dtype: DType,
    device: Device,
    rng: ChaCha8Rng,
}

impl ParamStore {
    pub fn new(dtype: DType, seed: u64) -> Self {
        Self {
            vars: BTreeMap::new(),
            dtype,
            device: Device::Cpu,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// Creates a parameter. Paths must be unique.
    pub fn param(&mut self, path: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        if self.vars.contains_key(path) {
            return Err(Error::InvalidConfig(format!("duplicate parameter {path}")));
        }
        let n: usize = shape.iter().product();
        let data: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Uniform(b) => (0..n).map(|_| self.rng.random_range(-b..=b)).collect(),
            Init::Normal(s) => (0..n).map(|_| s * normal(&mut self.rng)).collect(),
        };
        let t = Tensor::from_vec(data, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let out = var.as_tensor().clone();
        self.vars.insert(path.to_string(), var);
        Ok(out)
    }

    pub fn vars(&self) -> &BTreeMap<String, Var> {
        &self.vars
    }

    pub fn get(&self, path: &str) -> Option<&Var> {
        self.vars.get(path)
    }

    /// Overwrites a parameter in place; every layer holding it sees the change.
    pub fn set(&self, path: &str, value: &Tensor) -> Result<()> {
        let var = self
            .vars
            .get(path)
            .ok_or_else(|| Error::invalid(format!("no parameter {path}")))?;
        if var.dims() != value.dims() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for {path}: have {:?}, got {:?}",
                var.dims(),
                value.dims()
            )));
        }
        var.set(&value.to_dtype(self.dtype)?)?;
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.vars.values().map(|v| v.elem_count()).sum()
    }
}

/// Standard normal sample (Box–Muller).
fn normal<R: Rng>(rng: &mut R) -> f64 {
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Per-forward state: mode and the dropout RNG.
pub struct Ctx {
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl Ctx {
    pub fn eval() -> Self {
        Self {
            train: false,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(0)),
        }
    }

    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    /// Inverted dropout; identity in eval mode or when `p == 0`.
    pub fn dropout(&self, x: &Tensor, p: f64) -> Result<Tensor> {
        if !self.train || p <= 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - p;
        let mut rng = self.rng.borrow_mut();
        let mask: Vec<f64> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mask = Tensor::from_vec(mask, x.dims(), x.device())?.to_dtype(x.dtype())?;
        Ok(x.mul(&mask)?)
    }
}

pub fn matrix_to_tensor(m: &Matrix, dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(m.as_slice(), m.shape(), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_matrix(t: &Tensor) -> Result<Matrix> {
    let (r, c) = t.dims2()?;
    let data = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    Matrix::new(r, c, data)
}

pub fn vec_tensor(v: &[f32], dtype: DType) -> Result<Tensor> {
    Ok(Tensor::from_slice(v, v.len(), &Device::Cpu)?.to_dtype(dtype)?)
}

pub fn tensor_to_vec(t: &Tensor) -> Result<Vec<f32>> {
    Ok(t.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?)
}

pub fn scalar(t: &Tensor) -> Result<f64> {
    Ok(t.to_dtype(DType::F64)?.to_scalar::<f64>()?)
}
