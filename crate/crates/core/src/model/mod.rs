//! The acoustic model: phoneme encoder, cross-utterance fusion, variance
//! adaptor, masked mel encoder, Conformer decoder, splice and PostNet.

pub mod checkpoint;
mod config;
mod decoder;
mod encoder;
mod variance;

pub use config::ModelConfig;
pub use decoder::{ConformerBlock, Decoder, MaskedMelEncoder, PostNet};
pub use encoder::{FftBlock, PhonemeEncoder};
pub use variance::{
    bucketize, duration_from_log, energy_bin_edges, frame_to_phoneme, length_regulate, pitch_bin,
    pitch_bin_edges, VarianceAdaptor, VariancePredictor, UNVOICED_HZ,
};

use std::collections::BTreeMap;

use candle_core::{DType, Tensor};

use crate::context::TrainingExample;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{matrix_to_tensor, tensor_to_matrix, tensor_to_vec, Ctx, ParamStore};
use crate::semantic::{CuAttention, Fuse};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Durations, pitch and energy are teacher-forced from the example.
    Train,
    /// Durations, pitch and energy of `regenerate` phonemes are predicted and
    /// the masked segment is rebuilt at the predicted length.
    Infer,
}

#[derive(Debug, Clone)]
pub struct ModelOutputs {
    /// Predicted `ln(d + 1)` per phoneme.
    pub log_duration_pred: Tensor,
    /// Predicted `ln(1 + f0_hz)` per phoneme.
    pub pitch_pred: Tensor,
    /// Predicted `ln(1 + energy)` per phoneme.
    pub energy_pred: Tensor,
    pub mel_before: Tensor,
    pub mel_spliced: Tensor,
    pub mel_after: Tensor,
    /// Durations used by the length regulator.
    pub durations: Vec<u32>,
    pub frame_mask: Vec<bool>,
    pub current_frame_span: (usize, usize),
    /// CU attention weights `[heads, T_ph, num_pairs]`.
    pub cu_weights: Tensor,
}

impl ModelOutputs {
    pub fn frames(&self) -> usize {
        self.durations.iter().map(|&d| d as usize).sum()
    }

    /// PostNet output restricted to the current sentence.
    pub fn current_mel(&self) -> Result<Matrix> {
        let (s, e) = self.current_frame_span;
        tensor_to_matrix(&self.mel_after.narrow(0, s, e - s)?)
    }
}

pub struct MaskedSpeech {
    pub cfg: ModelConfig,
    ps: ParamStore,
    pub encoder: PhonemeEncoder,
    pub cu: CuAttention,
    pub fuse: Fuse,
    pub variance: VarianceAdaptor,
    pub melenc: MaskedMelEncoder,
    pub decoder: Decoder,
    pub postnet: PostNet,
}

impl MaskedSpeech {
    pub fn new(cfg: &ModelConfig, dtype: DType, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut ps = ParamStore::new(dtype, seed);
        let encoder = PhonemeEncoder::new(&mut ps, "encoder", cfg)?;
        let cu = CuAttention::new(&mut ps, "cu", cfg.d_model, cfg.d_pbe, cfg.num_pairs, &cfg.cu)?;
        let fuse = Fuse::new(&mut ps, "fuse", cfg.d_model)?;
        let variance = VarianceAdaptor::new(&mut ps, "variance", cfg)?;
        let melenc = MaskedMelEncoder::new(&mut ps, "melenc", cfg)?;
        let decoder = Decoder::new(&mut ps, "decoder", cfg)?;
        let postnet = PostNet::new(&mut ps, "postnet", cfg)?;
        Ok(Self {
            cfg: cfg.clone(),
            ps,
            encoder,
            cu,
            fuse,
            variance,
            melenc,
            decoder,
            postnet,
        })
    }

    pub fn params(&self) -> &ParamStore {
        &self.ps
    }

    pub fn dtype(&self) -> DType {
        self.ps.dtype()
    }

    pub fn num_params(&self) -> usize {
        self.ps.num_params()
    }

    /// Parameter values as `(shape, f32 data)` keyed by path.
    pub fn state(&self) -> Result<checkpoint::State> {
        self.ps
            .vars()
            .iter()
            .map(|(k, v)| Ok((k.clone(), (v.dims().to_vec(), tensor_to_vec(v.as_tensor())?))))
            .collect()
    }

    /// Loads parameters; every name must exist with the expected shape.
    pub fn load_state(&self, state: &BTreeMap<String, (Vec<usize>, Vec<f32>)>) -> Result<()> {
        for name in state.keys() {
            if self.ps.get(name).is_none() {
                return Err(Error::Checkpoint(format!("unexpected parameter {name}")));
            }
        }
        for (name, var) in self.ps.vars() {
            let (shape, data) = state
                .get(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            if shape.as_slice() != var.dims() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {shape:?}, model expects {:?}",
                    var.dims()
                )));
            }
            let t = Tensor::from_slice(data, shape.as_slice(), self.ps.device())?;
            self.ps.set(name, &t)?;
        }
        Ok(())
    }

    fn check(&self, ex: &TrainingExample, pbes: &Tensor) -> Result<()> {
        let n = ex.phoneme_ids.len();
        let lens = [
            ("segments", ex.segments.len()),
            ("durations", ex.durations.len()),
            ("pitch", ex.pitch.len()),
            ("energy", ex.energy.len()),
            ("regenerate", ex.regenerate.len()),
        ];
        for (name, len) in lens {
            if len != n {
                return Err(Error::InvalidInput(format!(
                    "example has {n} phonemes but {len} {name}"
                )));
            }
        }
        let frames: usize = ex.durations.iter().map(|&d| d as usize).sum();
        if frames != ex.concat_mel.rows() || ex.mask_flags.len() != frames {
            return Err(Error::InvalidInput(format!(
                "durations sum to {frames} frames, mel has {} rows and {} mask flags",
                ex.concat_mel.rows(),
                ex.mask_flags.len()
            )));
        }
        if ex.concat_mel.cols() != self.cfg.mel_bins {
            return Err(Error::InvalidInput(format!(
                "mel has {} bins, model expects {}",
                ex.concat_mel.cols(),
                self.cfg.mel_bins
            )));
        }
        let (ps, pe) = ex.current_phoneme_span;
        if ps > pe || pe > n {
            return Err(Error::InvalidInput(format!(
                "current phoneme span [{ps},{pe}) outside {n} phonemes"
            )));
        }
        if pbes.dims() != [self.cfg.num_pairs, self.cfg.d_pbe] {
            return Err(Error::InvalidInput(format!(
                "pair embeddings have shape {:?}, expected [{}, {}]",
                pbes.dims(),
                self.cfg.num_pairs,
                self.cfg.d_pbe
            )));
        }
        Ok(())
    }

    pub fn forward(
        &self,
        ctx: &Ctx,
        ex: &TrainingExample,
        pbes: &Matrix,
        mode: Mode,
    ) -> Result<ModelOutputs> {
        let pbes = matrix_to_tensor(pbes, self.dtype())?;
        self.forward_with(ctx, ex, &pbes, mode)
    }

    pub fn forward_with(
        &self,
        ctx: &Ctx,
        ex: &TrainingExample,
        pbes: &Tensor,
        mode: Mode,
    ) -> Result<ModelOutputs> {
        self.check(ex, pbes)?;
        let dtype = self.dtype();
        let pbes = pbes.to_dtype(dtype)?;

        let h = self.encoder.forward(ctx, &ex.phoneme_ids, &ex.segments)?;
        let (cu, cu_weights) = self.cu.forward(ctx, &h, &pbes)?;
        let h = self.fuse.forward(&h, &cu)?;

        let log_duration_pred = self.variance.duration.forward(ctx, &h)?;
        let pitch_pred = self.variance.pitch.forward(ctx, &h)?;
        let infer = mode == Mode::Infer;
        let (durations, pitch) = if infer {
            let logd = tensor_to_vec(&log_duration_pred)?;
            let lp = tensor_to_vec(&pitch_pred)?;
            let mut d = ex.durations.clone();
            let mut p = ex.pitch.clone();
            for k in 0..d.len() {
                if ex.regenerate[k] {
                    d[k] = duration_from_log(logd[k] as f64, self.cfg.max_duration);
                    p[k] = lp[k].exp_m1();
                }
            }
            (d, p)
        } else {
            (ex.durations.clone(), ex.pitch.clone())
        };
        let h = h.add(&self.variance.embed_pitch(&pitch)?)?;
        let energy_pred = self.variance.energy.forward(ctx, &h)?;
        let energy = if infer {
            let le = tensor_to_vec(&energy_pred)?;
            ex.energy
                .iter()
                .zip(&ex.regenerate)
                .zip(le)
                .map(|((&e, &r), p)| if r { p.exp_m1().max(0.0) } else { e })
                .collect()
        } else {
            ex.energy.clone()
        };
        let h = h.add(&self.variance.embed_energy(&energy)?)?;
        let frame_hidden = length_regulate(&h, &durations)?;

        let (mel, frame_mask) = if infer {
            rebuild_input(ex, &durations)?
        } else {
            (ex.concat_mel.clone(), ex.mask_flags.clone())
        };
        let mel = clean(&mel);
        let frames = mel.rows();
        let mel_t = matrix_to_tensor(&mel, dtype)?;
        let mask_u8: Vec<u8> = frame_mask.iter().map(|&m| m as u8).collect();
        let mask_t = Tensor::from_vec(mask_u8, frames, self.ps.device())?;

        let melenc = self.melenc.forward(ctx, &mel_t, &mask_t)?;
        let mel_before = self.decoder.forward(ctx, &frame_hidden, &melenc)?;
        let m = mask_t.unsqueeze(1)?.broadcast_as(mel_before.dims())?;
        let mel_spliced = m.where_cond(&mel_before, &mel_t)?;
        let mel_after = self.postnet.forward(ctx, &mel_spliced)?;

        let (ps, pe) = ex.current_phoneme_span;
        let start: usize = durations[..ps].iter().map(|&d| d as usize).sum();
        let len: usize = durations[ps..pe].iter().map(|&d| d as usize).sum();
        Ok(ModelOutputs {
            log_duration_pred,
            pitch_pred,
            energy_pred,
            mel_before,
            mel_spliced,
            mel_after,
            durations,
            frame_mask,
            current_frame_span: (start, start + len),
            cu_weights,
        })
    }
}

/// Masked cells are zeroed so no sentinel reaches the tensor graph.
fn clean(mel: &Matrix) -> Matrix {
    let mut m = mel.clone();
    m.as_mut_slice().iter_mut().for_each(|v| {
        if v.is_nan() {
            *v = 0.0
        }
    });
    m
}

/// Known phonemes keep their rows; regenerated ones get `durations[k]` masked rows.
fn rebuild_input(ex: &TrainingExample, durations: &[u32]) -> Result<(Matrix, Vec<bool>)> {
    let bins = ex.concat_mel.cols();
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    let mut data = Vec::with_capacity(total * bins);
    let mut mask = Vec::with_capacity(total);
    let mut src = 0usize;
    for (k, &d) in durations.iter().enumerate() {
        let old = ex.durations[k] as usize;
        if ex.regenerate[k] {
            data.extend(std::iter::repeat_n(0.0, d as usize * bins));
            mask.extend(std::iter::repeat_n(true, d as usize));
        } else {
            for r in src..src + old {
                data.extend_from_slice(ex.concat_mel.row(r));
                mask.push(ex.mask_flags[r]);
            }
        }
        src += old;
    }
    Ok((Matrix::new(total, bins, data)?, mask))
}
