use candle_core::{Tensor, D};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::nn::{Conv1d, Ctx, Embedding, LayerNorm, Linear, ParamStore};

/// F0 below this is treated as unvoiced by the pitch quantizer.
pub const UNVOICED_HZ: f32 = 30.0;

/// Interior boundaries of `pitch_bins` log-spaced voiced bins over
/// `[pitch_min_hz, pitch_max_hz]`.
pub fn pitch_bin_edges(cfg: &ModelConfig) -> Vec<f32> {
    let (lo, hi) = ((cfg.pitch_min_hz as f64).ln(), (cfg.pitch_max_hz as f64).ln());
    let n = cfg.pitch_bins;
    (1..n)
        .map(|k| (lo + (hi - lo) * k as f64 / n as f64).exp() as f32)
        .collect()
}

/// Interior boundaries of `energy_bins` linear bins over `[0, energy_max]`.
pub fn energy_bin_edges(cfg: &ModelConfig) -> Vec<f32> {
    let n = cfg.energy_bins;
    (1..n)
        .map(|k| (cfg.energy_max as f64 * k as f64 / n as f64) as f32)
        .collect()
}

/// Number of edges `<= v`.
pub fn bucketize(v: f32, edges: &[f32]) -> usize {
    edges.partition_point(|&e| e <= v)
}

/// Bin 0 is unvoiced; voiced values map to `1..=pitch_bins`.
pub fn pitch_bin(hz: f32, edges: &[f32]) -> usize {
    if !(hz >= UNVOICED_HZ) {
        0
    } else {
        1 + bucketize(hz, edges)
    }
}

/// Frame-to-phoneme index map for the given durations.
pub fn frame_to_phoneme(durations: &[u32]) -> Vec<u32> {
    durations
        .iter()
        .enumerate()
        .flat_map(|(k, &d)| std::iter::repeat_n(k as u32, d as usize))
        .collect()
}

/// Repeats row `k` of `hidden` `durations[k]` times.
pub fn length_regulate(hidden: &Tensor, durations: &[u32]) -> Result<Tensor> {
    let t = hidden.dim(0)?;
    if durations.len() != t {
        return Err(Error::InvalidInput(format!(
            "{} durations for {t} phonemes",
            durations.len()
        )));
    }
    let map = frame_to_phoneme(durations);
    if map.is_empty() {
        return Err(Error::InvalidInput("durations sum to zero frames".into()));
    }
    let idx = Tensor::from_slice(&map, map.len(), hidden.device())?;
    Ok(hidden.index_select(&idx, 0)?)
}

/// Frames from a predicted log-duration (`ln(d + 1)`), clamped to `[1, max]`.
pub fn duration_from_log(log_d: f64, max: u32) -> u32 {
    let d = (log_d.exp() - 1.0).round();
    if d.is_nan() || d < 1.0 {
        1
    } else if d > max as f64 {
        max
    } else {
        d as u32
    }
}

/// Two conv/relu/norm/dropout layers and a scalar projection per phoneme.
#[derive(Debug, Clone)]
pub struct VariancePredictor {
    convs: Vec<(Conv1d, LayerNorm)>,
    out: Linear,
    dropout: f64,
}

impl VariancePredictor {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        let f = cfg.variance_filters;
        let mut convs = Vec::new();
        for (i, d_in) in [cfg.d_model, f].into_iter().enumerate() {
            convs.push((
                Conv1d::new(ps, &format!("{path}.conv{i}"), d_in, f, cfg.variance_kernel)?,
                LayerNorm::new(ps, &format!("{path}.norm{i}"), f)?,
            ));
        }
        Ok(Self {
            convs,
            out: Linear::new(ps, &format!("{path}.out"), f, 1)?,
            dropout: cfg.dropout,
        })
    }

    /// `[T_ph, d_model] -> [T_ph]`
    pub fn forward(&self, ctx: &Ctx, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for (conv, norm) in &self.convs {
            h = ctx.dropout(&norm.forward(&conv.forward(&h)?.relu()?)?, self.dropout)?;
        }
        Ok(self.out.forward(&h)?.squeeze(D::Minus1)?)
    }
}

#[derive(Debug, Clone)]
pub struct VarianceAdaptor {
    pub duration: VariancePredictor,
    pub pitch: VariancePredictor,
    pub energy: VariancePredictor,
    pitch_embedding: Embedding,
    energy_embedding: Embedding,
    pitch_edges: Vec<f32>,
    energy_edges: Vec<f32>,
}

impl VarianceAdaptor {
    pub fn new(ps: &mut ParamStore, path: &str, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            duration: VariancePredictor::new(ps, &format!("{path}.duration"), cfg)?,
            pitch: VariancePredictor::new(ps, &format!("{path}.pitch"), cfg)?,
            energy: VariancePredictor::new(ps, &format!("{path}.energy"), cfg)?,
            pitch_embedding: Embedding::new(
                ps,
                &format!("{path}.pitch_embedding"),
                cfg.pitch_embeddings(),
                cfg.d_model,
            )?,
            energy_embedding: Embedding::new(
                ps,
                &format!("{path}.energy_embedding"),
                cfg.energy_bins,
                cfg.d_model,
            )?,
            pitch_edges: pitch_bin_edges(cfg),
            energy_edges: energy_bin_edges(cfg),
        })
    }

    pub fn pitch_edges(&self) -> &[f32] {
        &self.pitch_edges
    }

    pub fn energy_edges(&self) -> &[f32] {
        &self.energy_edges
    }

    pub fn embed_pitch(&self, hz: &[f32]) -> Result<Tensor> {
        let bins: Vec<u32> = hz.iter().map(|&f| pitch_bin(f, &self.pitch_edges) as u32).collect();
        self.pitch_embedding.forward(&bins)
    }

    pub fn embed_energy(&self, energy: &[f32]) -> Result<Tensor> {
        let bins: Vec<u32> = energy
            .iter()
            .map(|&e| bucketize(e, &self.energy_edges) as u32)
            .collect();
        self.energy_embedding.forward(&bins)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn length_regulator_map() {
        assert_eq!(frame_to_phoneme(&[2, 1, 3]), vec![0, 0, 1, 2, 2, 2]);
        assert_eq!(frame_to_phoneme(&[0, 2]), vec![1, 1]);
        let h = Tensor::from_vec(vec![1f64, 2., 3.], (3, 1), &Device::Cpu).unwrap();
        let out = length_regulate(&h, &[2, 1, 3]).unwrap();
        assert_eq!(
            out.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
            vec![1., 1., 2., 3., 3., 3.]
        );
        assert!(length_regulate(&h, &[1, 1]).is_err());
        assert!(length_regulate(&h, &[0, 0, 0]).is_err());
    }

    #[test]
    fn duration_clamp() {
        assert_eq!(duration_from_log(f64::NEG_INFINITY, 50), 1);
        assert_eq!(duration_from_log(-30.0, 50), 1);
        assert_eq!(duration_from_log(f64::NAN, 50), 1);
        assert_eq!(duration_from_log((5f64).ln(), 50), 4);
        assert_eq!(duration_from_log(100.0, 50), 50);
    }

    #[test]
    fn quantizer_tables() {
        let cfg = ModelConfig::tiny(4, 8, 8);
        let pe = pitch_bin_edges(&cfg);
        assert_eq!(pe.len(), cfg.pitch_bins - 1);
        assert!(pe.windows(2).all(|w| w[0] < w[1]));
        // log spacing: constant ratio between successive edges
        let r = pe[1] / pe[0];
        assert!(pe.windows(2).all(|w| ((w[1] / w[0]) - r).abs() < 1e-4));
        assert_eq!(pitch_bin(0.0, &pe), 0);
        assert_eq!(pitch_bin(29.9, &pe), 0);
        assert_eq!(pitch_bin(50.0, &pe), 1);
        assert_eq!(pitch_bin(1000.0, &pe), cfg.pitch_bins);
        assert!(pitch_bin(200.0, &pe) > pitch_bin(100.0, &pe));
        let ee = energy_bin_edges(&cfg);
        assert_eq!(bucketize(0.0, &ee), 0);
        assert_eq!(bucketize(cfg.energy_max * 2.0, &ee), cfg.energy_bins - 1);
        let mid = cfg.energy_max / 2.0;
        assert_eq!(bucketize(mid, &ee), cfg.energy_bins / 2);
    }

    #[test]
    fn predictor_shape() {
        let cfg = ModelConfig::tiny(4, 8, 8);
        let mut ps = ParamStore::new(DType::F32, 0);
        let p = VariancePredictor::new(&mut ps, "p", &cfg).unwrap();
        let x = Tensor::zeros((7, cfg.d_model), DType::F32, &Device::Cpu).unwrap();
        assert_eq!(p.forward(&Ctx::eval(), &x).unwrap().dims(), &[7]);
    }
}
