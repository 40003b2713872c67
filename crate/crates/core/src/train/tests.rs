use super::*;
use crate::model::ModelOutputs;
use crate::nn::tensor_to_vec;
use crate::testutil::{example, paragraph, pbes, tiny_config};
use candle_core::{DType, Tensor, Var};

fn outputs_matching(targets: &LossTargets, ex: &TrainingExample) -> ModelOutputs {
    ModelOutputs {
        log_duration_pred: targets.log_duration.clone(),
        pitch_pred: targets.pitch.clone(),
        energy_pred: targets.energy.clone(),
        mel_before: targets.mel.clone(),
        mel_spliced: targets.mel.clone(),
        mel_after: targets.mel.clone(),
        durations: ex.durations.clone(),
        frame_mask: ex.mask_flags.clone(),
        current_frame_span: ex.current_frame_span,
        cu_weights: Tensor::zeros((1, 1, 1), DType::F64, &candle_core::Device::Cpu).unwrap(),
    }
}

#[test]
fn perfect_predictions_cost_nothing() {
    let ex = example(&paragraph(1), &MaskPolicy::CurrentSentence);
    let t = LossTargets::from_example(&ex, DType::F64).unwrap();
    let b = compute_losses(&outputs_matching(&t, &ex), &ex).unwrap();
    assert_eq!(b, LossBreakdown::default());
}

#[test]
fn constant_mel_offset_gives_unit_mae() {
    let ex = example(&paragraph(2), &MaskPolicy::CurrentSentence);
    let t = LossTargets::from_example(&ex, DType::F64).unwrap();
    let mut out = outputs_matching(&t, &ex);
    out.mel_before = (&t.mel + 1.0).unwrap();
    out.mel_after = (&t.mel - 1.0).unwrap();
    let b = compute_losses(&out, &ex).unwrap();
    assert!((b.mel_before_mae - 1.0).abs() < 1e-12);
    assert!((b.mel_after_mae - 1.0).abs() < 1e-12);
    assert!((b.total - 2.0).abs() < 1e-12);
}

#[test]
fn nan_is_a_numerical_error() {
    let ex = example(&paragraph(3), &MaskPolicy::CurrentSentence);
    let t = LossTargets::from_example(&ex, DType::F64).unwrap();
    let mut out = outputs_matching(&t, &ex);
    let (ps, _) = ex.current_phoneme_span;
    let mut p = tensor_to_vec(&t.pitch).unwrap();
    p[ps] = f32::NAN;
    out.pitch_pred = Tensor::from_vec(p.iter().map(|&v| v as f64).collect::<Vec<_>>(), p.len(), &candle_core::Device::Cpu).unwrap();
    assert!(matches!(compute_losses(&out, &ex), Err(Error::Numerical(_))));
}

/// Loss on the model's outputs with targets held in `Var`s.
fn var_targets(ex: &TrainingExample) -> (LossTargets, [Var; 4]) {
    let t = LossTargets::from_example(ex, DType::F64).unwrap();
    let vars = [
        Var::from_tensor(&t.mel).unwrap(),
        Var::from_tensor(&t.log_duration).unwrap(),
        Var::from_tensor(&t.pitch).unwrap(),
        Var::from_tensor(&t.energy).unwrap(),
    ];
    let targets = LossTargets {
        mel: vars[0].as_tensor().clone(),
        log_duration: vars[1].as_tensor().clone(),
        pitch: vars[2].as_tensor().clone(),
        energy: vars[3].as_tensor().clone(),
        ..t
    };
    (targets, vars)
}

#[test]
fn context_targets_do_not_matter() {
    let ex = example(&paragraph(4), &MaskPolicy::CurrentSentence);
    let model = MaskedSpeech::new(&tiny_config(), DType::F64, 3).unwrap();
    let out = model.forward(&Ctx::eval(), &ex, &pbes(2), Mode::Train).unwrap();
    let (targets, vars) = var_targets(&ex);
    let (loss, base) = loss_tensors(&out, &targets, &LossWeights::default()).unwrap();
    let grads = loss.backward().unwrap();
    let (fs, fe) = ex.current_frame_span;
    let (ps, pe) = ex.current_phoneme_span;
    let spans = [(fs, fe), (ps, pe), (ps, pe), (ps, pe)];
    for (v, (s, e)) in vars.iter().zip(spans) {
        let g = grads.get(v.as_tensor()).unwrap();
        let rows = g.dim(0).unwrap();
        let flat = |r0: usize, r1: usize| {
            g.narrow(0, r0, r1 - r0).unwrap().flatten_all().unwrap().to_vec1::<f64>().unwrap()
        };
        assert!(flat(0, s).iter().chain(flat(e, rows).iter()).all(|&x| x == 0.0));
        assert!(flat(s, e).iter().any(|&x| x != 0.0));
    }

    // perturb every context target
    let mut p = ex.clone();
    for r in (0..fs).chain(fe..ex.frames()) {
        p.target_mel.row_mut(r).iter_mut().for_each(|v| *v += 3.0);
    }
    for k in (0..ps).chain(pe..ex.phonemes()) {
        p.pitch[k] += 50.0;
        p.energy[k] += 2.0;
    }
    let t2 = LossTargets::from_example(&p, DType::F64).unwrap();
    let (_, b2) = loss_tensors(&out, &t2, &LossWeights::default()).unwrap();
    for ((_, a), (_, b)) in base.terms().iter().zip(b2.terms()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

fn prepared(seed: u64) -> Vec<Prepared> {
    (0..3)
        .map(|i| Prepared {
            example: example(&paragraph(seed + i), &MaskPolicy::CurrentSentence),
            pbes: pbes(seed + i),
        })
        .collect()
}

#[test]
fn every_parameter_gets_a_finite_gradient() {
    let model = MaskedSpeech::new(&tiny_config(), DType::F32, 5).unwrap();
    let data = prepared(10);
    let mut total: Option<Tensor> = None;
    for p in &data {
        let (t, _) = example_loss(&model, &Ctx::eval(), p, &LossWeights::default()).unwrap();
        total = Some(match total {
            None => t,
            Some(a) => a.add(&t).unwrap(),
        });
    }
    let grads = collect_grads(model.params().vars(), &total.unwrap().backward().unwrap());
    for name in model.params().vars().keys() {
        let g = grads.get(name).unwrap_or_else(|| panic!("{name} has no gradient"));
        assert!(tensor_to_vec(g).unwrap().iter().all(|v| v.is_finite()), "{name}");
    }
}

fn short_cfg() -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        max_steps: 6,
        warmup_steps: 3,
        checkpoint_every: 4,
        valid_every: 3,
        seed: 11,
        ..TrainConfig::default()
    }
}

fn strip_wall(text: &str) -> Vec<serde_json::Value> {
    text.lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("wall_ms");
            v
        })
        .collect()
}

#[test]
fn training_is_deterministic_and_logs_schedule() {
    let data = prepared(20);
    let cfg = short_cfg();
    let run = |dir: &Path| {
        let model = MaskedSpeech::new(&tiny_config(), DType::F32, 1).unwrap();
        let out = train(&model, &data, &data[..1], &cfg, dir, &serde_json::json!({"k": 1})).unwrap();
        assert_eq!(out.steps, 6);
        std::fs::read_to_string(dir.join(METRICS_FILE)).unwrap()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (la, lb) = (run(a.path()), run(b.path()));
    let (ja, jb) = (strip_wall(&la), strip_wall(&lb));
    assert_eq!(ja.len(), 6);
    assert_eq!(ja, jb);
    for (i, line) in ja.iter().enumerate() {
        assert_eq!(line["lr"].as_f64().unwrap(), lr_schedule(i as u64 + 1, &cfg));
    }
    let ckpt_a = std::fs::read(a.path().join(CHECKPOINT_FILE)).unwrap();
    assert_eq!(ckpt_a, std::fs::read(b.path().join(CHECKPOINT_FILE)).unwrap());
    let c = checkpoint::decode(&ckpt_a).unwrap();
    assert_eq!(c.meta["step"], 6);
    assert!(a.path().join("checkpoints/step_0000004.ckpt").exists());
    let valid = std::fs::read_to_string(a.path().join(VALID_FILE)).unwrap();
    assert_eq!(valid.lines().count(), 2);
}

#[test]
fn sampler_cycles_epochs() {
    let mut s = Sampler::new(3, 0);
    let b: Vec<usize> = (0..4).flat_map(|_| s.batch(3)).collect();
    for epoch in b.chunks(3) {
        let mut e = epoch.to_vec();
        e.sort();
        assert_eq!(e, vec![0, 1, 2]);
    }
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    // Smoke runs shorter than the warmup are allowed.
    let short = TrainConfig {
        warmup_steps: 100,
        max_steps: 10,
        ..TrainConfig::default()
    };
    assert!(short.validate().is_ok());
    for bad in [
        TrainConfig { batch_size: 0, ..TrainConfig::default() },
        TrainConfig { max_steps: 0, ..TrainConfig::default() },
        TrainConfig { decay_rate: 1.5, ..TrainConfig::default() },
        TrainConfig { beta2: 1.0, ..TrainConfig::default() },
    ] {
        assert!(bad.validate().is_err());
    }
}
