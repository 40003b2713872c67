use candle_core::{DType, Tensor};
use serde::{Deserialize, Serialize};

use crate::context::TrainingExample;
use crate::error::{Error, Result};
use crate::model::ModelOutputs;
use crate::nn::{matrix_to_tensor, scalar, vec_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub mel_before: f64,
    pub mel_after: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            mel_before: 1.0,
            mel_after: 1.0,
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mel_before_mae: f64,
    pub mel_after_mae: f64,
    pub duration_mse: f64,
    pub pitch_mse: f64,
    pub energy_mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn terms(&self) -> [(&'static str, f64); 6] {
        [
            ("mel_before_mae", self.mel_before_mae),
            ("mel_after_mae", self.mel_after_mae),
            ("duration_mse", self.duration_mse),
            ("pitch_mse", self.pitch_mse),
            ("energy_mse", self.energy_mse),
            ("total", self.total),
        ]
    }

    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let n = items.len().max(1) as f64;
        let mut m = LossBreakdown::default();
        for b in items {
            m.mel_before_mae += b.mel_before_mae / n;
            m.mel_after_mae += b.mel_after_mae / n;
            m.duration_mse += b.duration_mse / n;
            m.pitch_mse += b.pitch_mse / n;
            m.energy_mse += b.energy_mse / n;
            m.total += b.total / n;
        }
        m
    }
}

/// Full-length targets over every phoneme and frame of an example. Only the
/// current-sentence slices enter the loss.
#[derive(Debug, Clone)]
pub struct LossTargets {
    pub mel: Tensor,
    /// `ln(d + 1)`
    pub log_duration: Tensor,
    /// `ln(1 + f0_hz)`
    pub pitch: Tensor,
    /// `ln(1 + energy)`
    pub energy: Tensor,
    pub phoneme_span: (usize, usize),
    pub frame_span: (usize, usize),
}

impl LossTargets {
    pub fn from_example(ex: &TrainingExample, dtype: DType) -> Result<Self> {
        let ln1p = |v: &[f32]| v.iter().map(|x| x.max(0.0).ln_1p()).collect::<Vec<_>>();
        let durs: Vec<f32> = ex.durations.iter().map(|&d| (d as f32).ln_1p()).collect();
        Ok(Self {
            mel: matrix_to_tensor(&ex.target_mel, dtype)?,
            log_duration: vec_tensor(&durs, dtype)?,
            pitch: vec_tensor(&ln1p(&ex.pitch), dtype)?,
            energy: vec_tensor(&ln1p(&ex.energy), dtype)?,
            phoneme_span: ex.current_phoneme_span,
            frame_span: ex.current_frame_span,
        })
    }
}

fn span(t: &Tensor, (s, e): (usize, usize)) -> Result<Tensor> {
    if e <= s {
        return Err(Error::InvalidInput(format!("empty loss span [{s},{e})")));
    }
    Ok(t.narrow(0, s, e - s)?)
}

/// Differentiable total loss plus its breakdown.
pub fn loss_tensors(
    out: &ModelOutputs,
    targets: &LossTargets,
    weights: &LossWeights,
) -> Result<(Tensor, LossBreakdown)> {
    if out.mel_before.dims() != targets.mel.dims() {
        return Err(Error::InvalidInput(format!(
            "prediction {:?} and target {:?} mel shapes differ",
            out.mel_before.dims(),
            targets.mel.dims()
        )));
    }
    let fs = targets.frame_span;
    let ps = targets.phoneme_span;
    let tgt_mel = span(&targets.mel, fs)?;
    let mae = |pred: &Tensor| -> Result<Tensor> {
        Ok(span(pred, fs)?.sub(&tgt_mel)?.abs()?.mean_all()?)
    };
    let mse = |pred: &Tensor, tgt: &Tensor| -> Result<Tensor> {
        Ok(span(pred, ps)?.sub(&span(tgt, ps)?)?.sqr()?.mean_all()?)
    };
    let terms = [
        (mae(&out.mel_before)?, weights.mel_before),
        (mae(&out.mel_after)?, weights.mel_after),
        (mse(&out.log_duration_pred, &targets.log_duration)?, weights.duration),
        (mse(&out.pitch_pred, &targets.pitch)?, weights.pitch),
        (mse(&out.energy_pred, &targets.energy)?, weights.energy),
    ];
    let mut values = [0f64; 5];
    let mut total: Option<Tensor> = None;
    for (i, (t, w)) in terms.iter().enumerate() {
        values[i] = scalar(t)?;
        let weighted = (t * *w)?;
        total = Some(match total {
            Some(acc) => acc.add(&weighted)?,
            None => weighted,
        });
    }
    let total = total.expect("five terms");
    let b = LossBreakdown {
        mel_before_mae: values[0],
        mel_after_mae: values[1],
        duration_mse: values[2],
        pitch_mse: values[3],
        energy_mse: values[4],
        total: scalar(&total)?,
    };
    if let Some((name, v)) = b.terms().into_iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Numerical(format!("{name} is {v}")));
    }
    Ok((total, b))
}

pub fn compute_losses(out: &ModelOutputs, ex: &TrainingExample) -> Result<LossBreakdown> {
    let targets = LossTargets::from_example(ex, out.mel_before.dtype())?;
    Ok(loss_tensors(out, &targets, &LossWeights::default())?.1)
}
