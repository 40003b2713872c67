//! Masked-reconstruction training: current-sentence losses, Adam with
//! decoupled weight decay, warmup/decay schedule, JSONL metrics, checkpoints.

mod loss;
mod optim;
mod schedule;

pub use loss::{compute_losses, loss_tensors, LossBreakdown, LossTargets, LossWeights};
pub use optim::{clip_grad_norm, collect_grads, Adam, AdamConfig};
pub use schedule::{lr_schedule, Schedule};

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{assemble_example, build_window, AssembleOptions, MaskPolicy, TrainingExample};
use crate::corpus::{CorpusStore, Split};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::checkpoint::{self, Checkpoint};
use crate::model::{MaskedSpeech, Mode};
use crate::nn::{matrix_to_tensor, Ctx};
use crate::semantic::PbeCache;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub warmup_steps: u64,
    pub peak_lr: f64,
    pub decay_rate: f64,
    pub schedule: Schedule,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub valid_every: u64,
    /// Consecutive numerically failed batches tolerated before aborting.
    pub max_bad_batches: usize,
    pub loss_weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            max_steps: 200_000,
            warmup_steps: 4000,
            peak_lr: 1e-3,
            decay_rate: 0.99995,
            schedule: Schedule::Exponential,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            weight_decay: 1e-5,
            grad_clip_norm: 1.0,
            seed: 0,
            checkpoint_every: 5000,
            valid_every: 1000,
            max_bad_batches: 10,
            loss_weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("train.{m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive");
        }
        if !(self.peak_lr > 0.0) || !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad("peak_lr must be positive and decay_rate in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0)
        {
            return bad("adam betas must be in [0, 1) and eps positive");
        }
        if self.weight_decay < 0.0 || self.grad_clip_norm < 0.0 {
            return bad("weight_decay and grad_clip_norm must be non-negative");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// An assembled example with its cached pair embeddings.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub example: TrainingExample,
    pub pbes: Matrix,
}

/// Assembles current-sentence-masked examples for every utterance of `split`.
pub fn prepare_examples(
    store: &CorpusStore,
    split: Split,
    semantic_context: usize,
    opts: &AssembleOptions,
    cache: &PbeCache,
) -> Result<Vec<Prepared>> {
    store
        .positions(split)
        .into_iter()
        .map(|(p, i)| {
            let window = build_window(&store.paragraphs[p], i, semantic_context)?;
            let example =
                assemble_example(&window, &MaskPolicy::CurrentSentence, &store.inventory, opts)?;
            let pbes = cache.get(&example.utterance_id)?.clone();
            Ok(Prepared { example, pbes })
        })
        .collect()
}

/// Forward + loss for one example.
pub fn example_loss(
    model: &MaskedSpeech,
    ctx: &Ctx,
    p: &Prepared,
    weights: &LossWeights,
) -> Result<(candle_core::Tensor, LossBreakdown)> {
    let pbes = matrix_to_tensor(&p.pbes, model.dtype())?;
    let out = model.forward_with(ctx, &p.example, &pbes, Mode::Train)?;
    let targets = LossTargets::from_example(&p.example, model.dtype())?;
    loss_tensors(&out, &targets, weights)
}

/// Mean teacher-forced losses in eval mode.
pub fn evaluate_losses(model: &MaskedSpeech, data: &[Prepared]) -> Result<LossBreakdown> {
    let ctx = Ctx::eval();
    let items = data
        .iter()
        .map(|p| Ok(example_loss(model, &ctx, p, &LossWeights::default())?.1))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossBreakdown::mean(&items))
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainOutcome {
    pub steps: u64,
    pub skipped: u64,
    pub last: LossBreakdown,
    pub checkpoint: PathBuf,
}

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

fn append_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        OpenOptions::new().create(true).truncate(true).write(true).open(path)?,
    ))
}

fn json_line(w: &mut impl Write, v: &serde_json::Value) -> Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn loss_json(step: u64, b: &LossBreakdown) -> serde_json::Map<String, serde_json::Value> {
    let mut m = serde_json::Map::new();
    m.insert("step".into(), step.into());
    for (k, v) in b.terms() {
        m.insert(k.into(), v.into());
    }
    m
}

/// Deterministic epoch-cycling batch sampler.
struct Sampler {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(n: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            order: (0..n).collect(),
            pos: n,
        }
    }

    fn batch(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

fn snapshot(model: &MaskedSpeech, meta: &serde_json::Value, step: u64) -> Result<Checkpoint> {
    let mut meta = meta.clone();
    if let Some(obj) = meta.as_object_mut() {
        obj.insert("step".into(), step.into());
    }
    Ok(Checkpoint {
        meta,
        state: model.state()?,
    })
}

/// Runs `cfg.max_steps` optimizer steps and writes metrics and checkpoints to `out_dir`.
pub fn train(
    model: &MaskedSpeech,
    train_set: &[Prepared],
    valid_set: &[Prepared],
    cfg: &TrainConfig,
    out_dir: &Path,
    meta: &serde_json::Value,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::invalid("training split is empty"));
    }
    std::fs::create_dir_all(out_dir.join("checkpoints"))?;
    let mut metrics = append_writer(&out_dir.join(METRICS_FILE))?;
    let mut valid_log = append_writer(&out_dir.join(VALID_FILE))?;
    let mut sampler = Sampler::new(train_set.len(), cfg.seed);
    let mut opt = Adam::new(cfg.adam());
    let vars = model.params().vars();
    let started = Instant::now();
    let mut writer: Option<JoinHandle<Result<()>>> = None;
    let mut skipped = 0u64;
    let mut bad_run = 0usize;
    let mut last = LossBreakdown::default();

    let save = |writer: &mut Option<JoinHandle<Result<()>>>, step: u64| -> Result<()> {
        if let Some(h) = writer.take() {
            h.join().map_err(|_| Error::Checkpoint("checkpoint writer panicked".into()))??;
        }
        let bytes = checkpoint::encode(&snapshot(model, meta, step)?)?;
        let dir = out_dir.to_path_buf();
        *writer = Some(std::thread::spawn(move || {
            crate::corpus::record::write_atomic(
                &dir.join("checkpoints").join(format!("step_{step:07}.ckpt")),
                &bytes,
            )?;
            crate::corpus::record::write_atomic(&dir.join(CHECKPOINT_FILE), &bytes)
        }));
        Ok(())
    };

    for step in 1..=cfg.max_steps {
        let lr = lr_schedule(step, cfg);
        let batch = sampler.batch(cfg.batch_size);
        let result = (|| -> Result<(LossBreakdown, f64)> {
            let mut total: Option<candle_core::Tensor> = None;
            let mut parts = Vec::with_capacity(batch.len());
            for (i, &idx) in batch.iter().enumerate() {
                let ctx = Ctx::train(
                    cfg.seed
                        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                        .wrapping_add(step * 1024 + i as u64),
                );
                let (t, b) = example_loss(model, &ctx, &train_set[idx], &cfg.loss_weights)?;
                parts.push(b);
                total = Some(match total {
                    Some(acc) => acc.add(&t)?,
                    None => t,
                });
            }
            let loss = (total.expect("non-empty batch") / batch.len() as f64)?;
            let mut grads = collect_grads(vars, &loss.backward()?);
            let norm = clip_grad_norm(&mut grads, cfg.grad_clip_norm)?;
            opt.step(vars, &grads, lr)?;
            Ok((LossBreakdown::mean(&parts), norm))
        })();
        let elapsed = started.elapsed().as_millis() as u64;
        match result {
            Ok((b, norm)) => {
                bad_run = 0;
                last = b;
                let mut line = loss_json(step, &b);
                line.insert("lr".into(), lr.into());
                line.insert("grad_norm".into(), norm.into());
                line.insert("wall_ms".into(), elapsed.into());
                json_line(&mut metrics, &line.into())?;
            }
            Err(Error::Numerical(reason)) => {
                skipped += 1;
                bad_run += 1;
                tracing::warn!(step, %reason, "skipping batch");
                let line = serde_json::json!({
                    "step": step, "lr": lr, "skipped": true, "reason": reason, "wall_ms": elapsed
                });
                json_line(&mut metrics, &line)?;
                if bad_run >= cfg.max_bad_batches {
                    return Err(Error::Numerical(format!(
                        "{bad_run} consecutive batches failed; last: {reason}"
                    )));
                }
            }
            Err(e) => return Err(e),
        }
        if step % cfg.checkpoint_every.max(1) == 0 || step == cfg.max_steps {
            save(&mut writer, step)?;
        }
        if !valid_set.is_empty() && (step % cfg.valid_every.max(1) == 0 || step == cfg.max_steps) {
            let v = evaluate_losses(model, valid_set)?;
            json_line(&mut valid_log, &loss_json(step, &v).into())?;
            tracing::info!(step, valid_mel_after = v.mel_after_mae, "validation");
        }
        if step % 100 == 0 {
            tracing::info!(step, lr, total = last.total, "training");
        }
    }
    if let Some(h) = writer.take() {
        h.join().map_err(|_| Error::Checkpoint("checkpoint writer panicked".into()))??;
    }
    Ok(TrainOutcome {
        steps: cfg.max_steps,
        skipped,
        last,
        checkpoint: out_dir.join(CHECKPOINT_FILE),
    })
}

#[cfg(test)]
mod tests;
