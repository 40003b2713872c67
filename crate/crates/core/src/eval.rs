//! Objective evaluation: DTW alignment of mel-spectrograms, mel distortion and
//! F0 metrics along the alignment path.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{extract_f0, record, wav, AudioConfig};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Monotone index pairs `(pred, ref)` from `(0, 0)` to `(P-1, R-1)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignmentPath {
    pub pairs: Vec<(usize, usize)>,
}

impl AlignmentPath {
    pub fn diagonal(n: usize) -> Self {
        Self {
            pairs: (0..n).map(|i| (i, i)).collect(),
        }
    }

    /// Checks endpoints and unit steps.
    pub fn validate(&self, p: usize, r: usize) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(format!("invalid alignment path: {m}")));
        match (self.pairs.first(), self.pairs.last()) {
            (Some(&(0, 0)), Some(&end)) if end == (p.wrapping_sub(1), r.wrapping_sub(1)) => {}
            _ => return bad(format!("must run from (0,0) to ({}, {})", p as isize - 1, r as isize - 1)),
        }
        for w in self.pairs.windows(2) {
            let (di, dj) = (w[1].0.wrapping_sub(w[0].0), w[1].1.wrapping_sub(w[0].1));
            if !matches!((di, dj), (1, 0) | (0, 1) | (1, 1)) {
                return bad(format!("step {:?} -> {:?}", w[0], w[1]));
            }
        }
        Ok(())
    }
}

pub fn euclidean(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Minimum-cost monotone alignment under steps (1,0), (0,1), (1,1). Ties prefer
/// the diagonal.
pub fn dtw_align(pred: &Matrix, reference: &Matrix) -> Result<(AlignmentPath, f64)> {
    let (p, r) = (pred.rows(), reference.rows());
    if p == 0 || r == 0 {
        return Err(Error::InvalidInput("DTW needs non-empty sequences".into()));
    }
    if pred.cols() != reference.cols() {
        return Err(Error::InvalidInput(format!(
            "DTW inputs differ in width: {} vs {}",
            pred.cols(),
            reference.cols()
        )));
    }
    let mut acc = vec![f64::INFINITY; p * r];
    let at = |i: usize, j: usize| i * r + j;
    for i in 0..p {
        for j in 0..r {
            let d = euclidean(pred.row(i), reference.row(j));
            let best = if i == 0 && j == 0 {
                0.0
            } else {
                let diag = if i > 0 && j > 0 { acc[at(i - 1, j - 1)] } else { f64::INFINITY };
                let up = if i > 0 { acc[at(i - 1, j)] } else { f64::INFINITY };
                let left = if j > 0 { acc[at(i, j - 1)] } else { f64::INFINITY };
                diag.min(up).min(left)
            };
            acc[at(i, j)] = best + d;
        }
    }
    let mut pairs = vec![(p - 1, r - 1)];
    let (mut i, mut j) = (p - 1, r - 1);
    while (i, j) != (0, 0) {
        let mut cands = Vec::with_capacity(3);
        if i > 0 && j > 0 {
            cands.push((i - 1, j - 1));
        }
        if i > 0 {
            cands.push((i - 1, j));
        }
        if j > 0 {
            cands.push((i, j - 1));
        }
        let mut best = cands[0];
        for &c in &cands[1..] {
            if acc[at(c.0, c.1)] < acc[at(best.0, best.1)] {
                best = c;
            }
        }
        (i, j) = best;
        pairs.push(best);
    }
    pairs.reverse();
    Ok((AlignmentPath { pairs }, acc[at(p - 1, r - 1)]))
}

/// Mean Euclidean frame distance along `path`.
pub fn msd(pred: &Matrix, reference: &Matrix, path: &AlignmentPath) -> Result<f64> {
    path.validate(pred.rows(), reference.rows())?;
    let sum: f64 = path
        .pairs
        .iter()
        .map(|&(i, j)| euclidean(pred.row(i), reference.row(j)))
        .sum();
    Ok(sum / path.pairs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F0Metrics {
    /// `None` when no aligned pair is voiced on both sides.
    pub rmse_hz: Option<f64>,
    pub vuv_pct: f64,
    /// `None` with fewer than two both-voiced pairs or zero variance.
    pub corr: Option<f64>,
}

pub fn f0_metrics(pred: &[f32], reference: &[f32], path: &AlignmentPath) -> Result<F0Metrics> {
    path.validate(pred.len(), reference.len())?;
    let mut disagree = 0usize;
    let mut voiced = Vec::new();
    for &(i, j) in &path.pairs {
        let (a, b) = (pred[i], reference[j]);
        if (a > 0.0) != (b > 0.0) {
            disagree += 1;
        } else if a > 0.0 {
            voiced.push((a as f64, b as f64));
        }
    }
    let vuv_pct = 100.0 * disagree as f64 / path.pairs.len() as f64;
    let n = voiced.len() as f64;
    let rmse_hz = (!voiced.is_empty())
        .then(|| (voiced.iter().map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n).sqrt());
    let corr = if voiced.len() < 2 {
        None
    } else {
        let ma = voiced.iter().map(|v| v.0).sum::<f64>() / n;
        let mb = voiced.iter().map(|v| v.1).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for &(a, b) in &voiced {
            sab += (a - ma) * (b - mb);
            saa += (a - ma) * (a - ma);
            sbb += (b - mb) * (b - mb);
        }
        (saa > 0.0 && sbb > 0.0).then(|| (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
    };
    Ok(F0Metrics {
        rmse_hz,
        vuv_pct,
        corr,
    })
}

/// Population standard deviation of all voiced values pooled across `sets`.
pub fn f0_sd<S: AsRef<[f32]>>(sets: &[S]) -> Result<f64> {
    let voiced: Vec<f64> = sets
        .iter()
        .flat_map(|s| s.as_ref().iter())
        .filter(|&&v| v > 0.0)
        .map(|&v| v as f64)
        .collect();
    if voiced.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "F0 SD needs at least 2 voiced frames, found {}",
            voiced.len()
        )));
    }
    let n = voiced.len() as f64;
    let mean = voiced.iter().sum::<f64>() / n;
    Ok((voiced.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtteranceReport {
    pub utterance_id: String,
    pub pred_frames: usize,
    pub ref_frames: usize,
    pub msd: f64,
    pub f0_rmse_hz: Option<f64>,
    pub vuv_pct: f64,
    pub f0_corr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub utterances: usize,
    pub msd: f64,
    pub f0_rmse_hz: Option<f64>,
    pub vuv_pct: f64,
    pub f0_corr: Option<f64>,
    pub f0_sd_hz_pred: Option<f64>,
    pub f0_sd_hz_ref: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub aggregate: Aggregate,
    pub per_utterance: Vec<UtteranceReport>,
}

/// Mel and F0 of one utterance.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub mel: Matrix,
    pub f0: Vec<f32>,
}

pub fn evaluate_item(id: &str, pred: &EvalItem, reference: &EvalItem) -> Result<UtteranceReport> {
    if pred.f0.len() != pred.mel.rows() || reference.f0.len() != reference.mel.rows() {
        return Err(Error::InvalidInput(format!(
            "{id}: F0 length does not match mel frames"
        )));
    }
    let (path, _) = dtw_align(&pred.mel, &reference.mel)?;
    let f = f0_metrics(&pred.f0, &reference.f0, &path)?;
    Ok(UtteranceReport {
        utterance_id: id.to_string(),
        pred_frames: pred.mel.rows(),
        ref_frames: reference.mel.rows(),
        msd: msd(&pred.mel, &reference.mel, &path)?,
        f0_rmse_hz: f.rmse_hz,
        vuv_pct: f.vuv_pct,
        f0_corr: f.corr,
    })
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Evaluates `(id, pred, ref)` triples; per-utterance work runs in parallel and
/// results keep the input order.
pub fn evaluate_items(items: &[(String, EvalItem, EvalItem)]) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let per: Vec<UtteranceReport> = items
        .par_iter()
        .map(|(id, p, r)| evaluate_item(id, p, r))
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let pred_f0: Vec<&[f32]> = items.iter().map(|(_, p, _)| p.f0.as_slice()).collect();
    let ref_f0: Vec<&[f32]> = items.iter().map(|(_, _, r)| r.f0.as_slice()).collect();
    Ok(EvalReport {
        aggregate: Aggregate {
            utterances: per.len(),
            msd: per.iter().map(|u| u.msd).sum::<f64>() / n,
            f0_rmse_hz: mean_of(per.iter().map(|u| u.f0_rmse_hz)),
            vuv_pct: per.iter().map(|u| u.vuv_pct).sum::<f64>() / n,
            f0_corr: mean_of(per.iter().map(|u| u.f0_corr)),
            f0_sd_hz_pred: f0_sd(&pred_f0).ok(),
            f0_sd_hz_ref: f0_sd(&ref_f0).ok(),
        },
        per_utterance: per,
    })
}

/// Loads `<id>.feat` (mel + F0 + energy columns) or `<id>.mel` with F0 taken
/// from `<id>.wav`.
pub fn load_item(dir: &Path, id: &str, audio: &AudioConfig) -> Result<EvalItem> {
    let feat = dir.join(format!("{id}.feat"));
    if feat.exists() {
        let m = record::read(&feat)?;
        if m.cols() != audio.mel_bins + 2 {
            return Err(Error::Format(format!(
                "{}: expected {} columns, found {}",
                feat.display(),
                audio.mel_bins + 2,
                m.cols()
            )));
        }
        return Ok(EvalItem {
            f0: m.column(audio.mel_bins),
            mel: m.slice_cols(0, audio.mel_bins)?,
        });
    }
    let mel = record::read(&dir.join(format!("{id}.mel")))?;
    if mel.cols() != audio.mel_bins {
        return Err(Error::Format(format!(
            "{id}.mel has {} bins, expected {}",
            mel.cols(),
            audio.mel_bins
        )));
    }
    let wav_path = dir.join(format!("{id}.wav"));
    if !wav_path.exists() {
        return Err(Error::InvalidInput(format!(
            "{id}: no F0 source (.feat or .wav) in {}",
            dir.display()
        )));
    }
    let (samples, sr) = wav::read_wav(&wav_path)?;
    if sr != audio.sample_rate_hz {
        return Err(Error::Format(format!(
            "{}: sample rate {sr}, expected {}",
            wav_path.display(),
            audio.sample_rate_hz
        )));
    }
    let mut f0 = extract_f0(&samples, audio)?;
    f0.resize(mel.rows(), 0.0);
    Ok(EvalItem { mel, f0 })
}

fn ids_in(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if matches!(path.extension().and_then(|e| e.to_str()), Some("feat" | "mel")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

/// Evaluates every utterance in `pred_dir` against the same id in `ref_dir`.
pub fn evaluate_dirs(pred_dir: &Path, ref_dir: &Path, audio: &AudioConfig) -> Result<EvalReport> {
    let ids = ids_in(pred_dir)?;
    if ids.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no .feat or .mel files in {}",
            pred_dir.display()
        )));
    }
    let items = ids
        .into_iter()
        .map(|id| {
            let p = load_item(pred_dir, &id, audio)?;
            let r = load_item(ref_dir, &id, audio)?;
            Ok((id, p, r))
        })
        .collect::<Result<Vec<_>>>()?;
    evaluate_items(&items)
}
