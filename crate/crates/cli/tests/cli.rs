use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use maskedspeech_cli::{run, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maskedspeech")).args(args).output().unwrap()
}

fn toy_conf() -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs/toy.conf")
        .to_string_lossy()
        .into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = bin(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

/// Toy corpus, prepared data and a 50-step model, built once for the file.
struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn p(&self, rel: &str) -> String {
        self.root.join(rel).to_string_lossy().into_owned()
    }
}

fn workspace() -> &'static Workspace {
    static WS: OnceLock<Workspace> = OnceLock::new();
    WS.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let ws = Workspace {
            root: dir.path().to_path_buf(),
            _dir: dir,
        };
        let conf = toy_conf();
        ok(&["make-toy-corpus", "--out", &ws.p("corpus")]);
        ok(&["prepare", "--manifest", &ws.p("corpus/manifest.jsonl"), "--out", &ws.p("data"), "--config", &conf]);
        ok(&["train", "--data", &ws.p("data"), "--out", &ws.p("run"), "--config", &conf, "--max-steps", "50"]);
        ws
    })
}

#[test]
fn prepare_writes_every_record() {
    let ws = workspace();
    let feats = std::fs::read_dir(ws.root.join("data/features")).unwrap().count();
    assert_eq!(feats, 12);
    let pbes = std::fs::read_dir(ws.root.join("data/pbes")).unwrap().count();
    assert_eq!(pbes, 12);
    let snap = std::fs::read_to_string(ws.root.join("data/config.snapshot")).unwrap();
    assert!(snap.contains("model.d_model = 32  # file toy.conf"));
}

#[test]
fn train_logs_one_line_per_step() {
    let ws = workspace();
    let metrics = std::fs::read_to_string(ws.root.join("run/metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 50);
    assert!(ws.root.join("run/model.ckpt").exists());
    let snap = std::fs::read_to_string(ws.root.join("run/config.snapshot")).unwrap();
    assert!(snap.contains("train.max_steps = 50  # flag"));
    assert!(snap.contains("# derived"));
    assert!(!ws.root.join("run/.lock").exists());
}

#[test]
fn synth_text_file_and_evaluate_against_itself() {
    let ws = workspace();
    let out = tempfile::tempdir().unwrap();
    let text = out.path().join("para.txt");
    std::fs::write(&text, "bada kumi\nsote gina mobu\n").unwrap();
    let s = out.path().join("s");
    ok(&["synth", "--ckpt", &ws.p("run/model.ckpt"), "--out", s.to_str().unwrap(), "--text", text.to_str().unwrap()]);
    for k in 0..2 {
        assert!(s.join(format!("para_{k:03}.wav")).exists());
        assert!(s.join(format!("para_{k:03}.mel")).exists());
    }
    let e = out.path().join("e");
    ok(&["evaluate", "--pred", s.to_str().unwrap(), "--ref", s.to_str().unwrap(), "--out", e.to_str().unwrap()]);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(e.join("eval.json")).unwrap()).unwrap();
    assert_eq!(report["aggregate"]["msd"].as_f64().unwrap(), 0.0);
    assert_eq!(report["aggregate"]["vuv_pct"].as_f64().unwrap(), 0.0);
    if let Some(c) = report["aggregate"]["f0_corr"].as_f64() {
        assert!((c - 1.0).abs() < 1e-9);
    }
}

#[test]
fn synth_with_reference_context_in_every_mode() {
    let ws = workspace();
    let out = tempfile::tempdir().unwrap();
    let store = maskedspeech_core::CorpusStore::load(&ws.root.join("data")).unwrap();
    let pid = store.paragraphs[0][0].paragraph_id.clone();
    for mode in ["full-context", "prev-speech-only", "text-only"] {
        let dir = out.path().join(mode);
        ok(&[
            "synth", "--ckpt", &ws.p("run/model.ckpt"), "--out", dir.to_str().unwrap(), "--mode", mode,
            "--context-audio", &ws.p("data"), "--paragraph", &pid, "--index", "1",
        ]);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.join("synth.json")).unwrap()).unwrap();
        assert_eq!(summary["outputs"].as_array().unwrap().len(), 1);
    }
}

#[test]
fn edit_writes_a_full_utterance() {
    let ws = workspace();
    let out = tempfile::tempdir().unwrap();
    let store = maskedspeech_core::CorpusStore::load(&ws.root.join("data")).unwrap();
    let u = &store.paragraphs[0][1];
    ok(&[
        "edit", "--ckpt", &ws.p("run/model.ckpt"), "--data", &ws.p("data"), "--utterance", &u.utterance_id,
        "--span", "1:3", "--replacement", "kumi", "--out", out.path().to_str().unwrap(),
    ]);
    let info: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.path().join("edit.json")).unwrap()).unwrap();
    assert_eq!(info["phonemes"].as_array().unwrap().len(), u.phonemes.len() - 2 + 4);
    let noop = out.path().join("noop");
    ok(&[
        "edit", "--ckpt", &ws.p("run/model.ckpt"), "--data", &ws.p("data"), "--utterance", &u.utterance_id,
        "--span", "2:2", "--out", noop.to_str().unwrap(),
    ]);
    let mel = maskedspeech_core::corpus::record::read(&noop.join(format!("{}.mel", u.utterance_id))).unwrap();
    assert!(mel.bit_eq(&u.mel));
}

#[test]
fn exit_codes() {
    let ws = workspace();
    let out = tempfile::tempdir().unwrap();
    let o = |s: &str| out.path().join(s).to_string_lossy().into_owned();
    assert_eq!(run(["maskedspeech", "prepare", "--bogus"]), EXIT_VALIDATION);
    assert_eq!(run(["maskedspeech", "--help"]), EXIT_OK);
    assert_eq!(run(["maskedspeech", "train", "--data", &ws.p("data"), "--out", &o("a"), "--set", "train.nope=1"]), EXIT_VALIDATION);
    // full-context needs reference speech
    let text = o("t.txt");
    std::fs::write(&text, "bada\nkumi\n").unwrap();
    assert_eq!(
        run(["maskedspeech", "synth", "--ckpt", &ws.p("run/model.ckpt"), "--out", &o("b"), "--text", &text, "--mode", "full-context"]),
        EXIT_VALIDATION
    );
    std::fs::write(&text, "zzz\n").unwrap();
    assert_eq!(run(["maskedspeech", "synth", "--ckpt", &ws.p("run/model.ckpt"), "--out", &o("c"), "--text", &text]), EXIT_VALIDATION);
    assert_eq!(
        run(["maskedspeech", "edit", "--ckpt", &ws.p("run/model.ckpt"), "--data", &ws.p("data"), "--utterance", "missing", "--span", "0:1", "--out", &o("d")]),
        EXIT_VALIDATION
    );
    // missing checkpoint is a runtime failure
    assert_eq!(run(["maskedspeech", "synth", "--ckpt", &o("none.ckpt"), "--out", &o("e"), "--text", &text]), EXIT_RUNTIME);
}

#[test]
fn locked_run_directory_is_rejected() {
    let ws = workspace();
    let out = tempfile::tempdir().unwrap();
    let _held = maskedspeech_cli::RunLock::acquire(out.path()).unwrap();
    let code = run(["maskedspeech", "evaluate", "--pred", &ws.p("data/features"), "--ref", &ws.p("data"), "--out", out.path().to_str().unwrap()]);
    assert_eq!(code, EXIT_RUNTIME);
}
