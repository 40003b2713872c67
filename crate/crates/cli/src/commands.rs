use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use candle_core::DType;
use serde_json::{json, Value};
use tracing::info;

use maskedspeech_core::config::{ResolvedConfig, RunConfig, Source};
use maskedspeech_core::context::{build_window, derive_pairs};
use maskedspeech_core::corpus::toy::{write_toy_corpus, ToyCorpusConfig};
use maskedspeech_core::corpus::{ingest, read_manifest, record, wav, Split};
use maskedspeech_core::eval::evaluate_dirs;
use maskedspeech_core::model::checkpoint;
use maskedspeech_core::semantic::{embed_pairs, PairEmbedder, PbeCache};
use maskedspeech_core::synth::{mel_to_wave, EditRequest, SynthesisOutput, SynthesisRequest};
use maskedspeech_core::train::{prepare_examples, train};
use maskedspeech_core::{
    AudioConfig, CorpusStore, Error, Lexicon, MaskedSpeech, Matrix, PhonemeInventory, Result, SynthMode,
    Synthesizer,
};

use crate::rundir::{write_snapshot, RunLock};
use crate::{Command, ConfigArgs, SNAPSHOT_FILE};

const PBE_DIR: &str = "pbes";
const LEXICON_FILE: &str = "lexicon.txt";

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare { manifest, out, lexicon, seed, cfg } => prepare(&manifest, &out, lexicon, seed, &cfg),
        Command::Train { data, out, seed, max_steps, cfg } => train_cmd(&data, &out, seed, max_steps, &cfg),
        Command::Synth { ckpt, out, mode, text, context_audio, paragraph, index, seed, cfg } => synth(SynthArgs {
            ckpt,
            out,
            mode,
            text,
            context_audio,
            paragraph,
            index,
            seed,
            cfg,
        }),
        Command::Edit { ckpt, data, utterance, span, replacement, out, seed, cfg } => {
            edit(&ckpt, &data, &utterance, &span, &replacement, &out, seed, &cfg)
        }
        Command::Evaluate { pred, reference, out, cfg } => evaluate(&pred, &reference, &out, &cfg),
        Command::MakeToyCorpus { out, paragraphs, sentences, seed } => {
            let cfg = ToyCorpusConfig {
                paragraphs,
                sentences_per_paragraph: sentences,
                seed,
                ..ToyCorpusConfig::default()
            };
            let manifest = write_toy_corpus(&out, &cfg, &AudioConfig::default())?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn resolve(files: &[&Path], args: &ConfigArgs) -> Result<ResolvedConfig> {
    let mut all: Vec<&Path> = files.to_vec();
    if let Some(c) = &args.config {
        all.push(c);
    }
    ResolvedConfig::resolve(&all, &args.set)
}

fn set_seed(r: &mut ResolvedConfig, seed: Option<u64>) -> Result<()> {
    if let Some(s) = seed {
        r.set("train.seed", json!(s), Source::Flag)?;
    }
    Ok(())
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn prepare(manifest: &Path, out: &Path, lexicon: Option<PathBuf>, seed: Option<u64>, args: &ConfigArgs) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let mut r = resolve(&[], args)?;
    set_seed(&mut r, seed)?;
    r.config.validate()?;
    let cfg = &r.config;
    let lex_path = lexicon.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join(LEXICON_FILE));
    let lex = Lexicon::load(&lex_path)?;
    let inventory = PhonemeInventory::from_lexicon(&lex);
    let store = ingest(&read_manifest(manifest)?, &cfg.audio, &inventory, &cfg.data.split, cfg.train.seed)?;
    store.save(out)?;
    fs::write(out.join(LEXICON_FILE), lex.to_text())?;

    let embedder = cfg.embedder.build()?;
    let mut cache = PbeCache::default();
    for par in &store.paragraphs {
        for i in 0..par.len() {
            let window = build_window(par, i, cfg.data.semantic_context)?;
            cache.insert(&par[i].utterance_id, embed_pairs(&derive_pairs(&window), embedder.as_ref())?);
        }
    }
    fs::create_dir_all(out.join(PBE_DIR))?;
    cache.save(&out.join(PBE_DIR))?;
    write_snapshot(out, &r)?;
    info!(utterances = store.len(), dir = %out.display(), "prepared");
    Ok(())
}

fn train_cmd(data: &Path, out: &Path, seed: Option<u64>, max_steps: Option<u64>, args: &ConfigArgs) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let mut r = resolve(&[&data.join(SNAPSHOT_FILE)], args)?;
    set_seed(&mut r, seed)?;
    if let Some(n) = max_steps {
        r.set("train.max_steps", json!(n), Source::Flag)?;
    }
    let store = CorpusStore::load(data)?;
    let vocab = store.inventory.len();
    match r.config.model.vocab_size {
        0 => r.set("model.vocab_size", json!(vocab), Source::Derived)?,
        v if v != vocab => {
            return Err(Error::InvalidConfig(format!(
                "model.vocab_size = {v} but the data has {vocab} phonemes"
            )))
        }
        _ => {}
    }
    r.config.validate()?;
    let cfg = &r.config;
    if store.audio != cfg.audio {
        return Err(Error::InvalidConfig(format!(
            "audio settings differ from those used to prepare {}",
            data.display()
        )));
    }
    let ids = store.utterances().map(|u| u.utterance_id.clone());
    let cache = PbeCache::load(&data.join(PBE_DIR), ids)?;
    let opts = &cfg.data.assemble;
    let train_set = prepare_examples(&store, Split::Train, cfg.data.semantic_context, opts, &cache)?;
    let valid_set = prepare_examples(&store, Split::Valid, cfg.data.semantic_context, opts, &cache)?;
    let model = MaskedSpeech::new(&cfg.model, DType::F32, cfg.train.seed)?;
    info!(params = model.num_params(), train = train_set.len(), valid = valid_set.len(), "training");
    let lexicon = fs::read_to_string(data.join(LEXICON_FILE))
        .map_err(|e| Error::InvalidInput(format!("{}: {e}", data.join(LEXICON_FILE).display())))?;
    let meta = json!({
        "config": cfg,
        "inventory": store.inventory,
        "lexicon": lexicon,
    });
    write_snapshot(out, &r)?;
    let outcome = train(&model, &train_set, &valid_set, &cfg.train, out, &meta)?;
    let mut summary = serde_json::to_value(&outcome)?;
    // Relative, so identical runs in different directories write identical files.
    let rel = outcome.checkpoint.strip_prefix(out).unwrap_or(&outcome.checkpoint);
    summary["checkpoint"] = json!(rel.display().to_string());
    write_json(&out.join("outcome.json"), &summary)?;
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

/// Everything needed to run inference from a checkpoint.
struct Loaded {
    config: ResolvedConfig,
    model: MaskedSpeech,
    lexicon: Lexicon,
    inventory: PhonemeInventory,
    embedder: Box<dyn PairEmbedder>,
}

impl Loaded {
    fn open(ckpt: &Path, args: &ConfigArgs, seed: Option<u64>) -> Result<Self> {
        let c = checkpoint::load(ckpt)?;
        let field = |k: &str| {
            c.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("{} has no '{k}' metadata", ckpt.display())))
        };
        let base: RunConfig = serde_json::from_value(field("config")?)?;
        let inventory: PhonemeInventory = serde_json::from_value(field("inventory")?)?;
        let lexicon = Lexicon::parse(field("lexicon")?.as_str().unwrap_or_default())?;
        let mut config = ResolvedConfig::from_config(base.clone());
        if let Some(path) = &args.config {
            config.apply_file(path)?;
        }
        config.apply_pairs(&args.set, Source::Flag)?;
        if let Some(s) = seed {
            config.set("synth.vocoder_seed", json!(s), Source::Flag)?;
        }
        let cfg = &config.config;
        if cfg.model != base.model || cfg.audio != base.audio || cfg.embedder != base.embedder {
            return Err(Error::InvalidConfig(
                "model, audio and embedder settings are fixed by the checkpoint".into(),
            ));
        }
        let model = MaskedSpeech::new(&cfg.model, DType::F32, 0)?;
        model.load_state(&c.state)?;
        let embedder = cfg.embedder.build()?;
        Ok(Self {
            config,
            model,
            lexicon,
            inventory,
            embedder,
        })
    }

    fn synthesizer(&self) -> Synthesizer<'_> {
        Synthesizer {
            model: &self.model,
            embedder: self.embedder.as_ref(),
            lexicon: &self.lexicon,
            inventory: &self.inventory,
            semantic_context: self.config.config.data.semantic_context,
        }
    }

    /// Writes `<id>.mel` and a Griffin-Lim `<id>.wav`.
    fn write_audio(&self, out: &Path, id: &str, mel: &Matrix) -> Result<()> {
        let cfg = &self.config.config;
        record::write(&out.join(format!("{id}.mel")), mel)?;
        let wave = mel_to_wave(mel, &cfg.audio, cfg.synth.griffin_lim_iters, cfg.synth.vocoder_seed)?;
        wav::write_wav(&out.join(format!("{id}.wav")), &wave, cfg.audio.sample_rate_hz)
    }
}

struct SynthArgs {
    ckpt: PathBuf,
    out: PathBuf,
    mode: Option<String>,
    text: Option<PathBuf>,
    context_audio: Option<PathBuf>,
    paragraph: Option<String>,
    index: Option<usize>,
    seed: Option<u64>,
    cfg: ConfigArgs,
}

fn synth(a: SynthArgs) -> Result<()> {
    let _lock = RunLock::acquire(&a.out)?;
    let mut loaded = Loaded::open(&a.ckpt, &a.cfg, a.seed)?;
    if let Some(m) = &a.mode {
        let mode = SynthMode::from_str(m)?;
        loaded.config.set("synth.mode", serde_json::to_value(mode)?, Source::Flag)?;
    }
    let mode = loaded.config.config.synth.mode;
    let synth = loaded.synthesizer();
    let mut results: Vec<(String, SynthesisOutput)> = Vec::new();
    let want = |k: usize| a.index.is_none_or(|i| i == k);

    if let Some(data) = &a.context_audio {
        let store = CorpusStore::load(data)?;
        let pid = a.paragraph.as_deref().unwrap_or_default();
        let par = store
            .paragraphs
            .iter()
            .find(|p| p.first().is_some_and(|u| u.paragraph_id == pid))
            .ok_or_else(|| Error::InvalidRequest(format!("no paragraph '{pid}' in {}", data.display())))?;
        check_index(a.index, par.len())?;
        let texts: Vec<String> = par.iter().map(|u| u.text.clone()).collect();
        for (k, u) in par.iter().enumerate().filter(|(k, _)| want(*k)) {
            let req = SynthesisRequest {
                mode,
                texts: texts.clone(),
                index: k,
                previous: (k > 0 && mode != SynthMode::TextOnly).then(|| par[k - 1].clone()),
                following: par.get(k + 1).filter(|_| mode == SynthMode::FullContext).cloned(),
            };
            results.push((u.utterance_id.clone(), synth.synthesize(&req)?));
        }
    } else {
        let path = a
            .text
            .as_ref()
            .ok_or_else(|| Error::InvalidRequest("give --text or --context-audio with --paragraph".into()))?;
        let body = fs::read_to_string(path)
            .map_err(|e| Error::InvalidRequest(format!("cannot read {}: {e}", path.display())))?;
        let texts: Vec<String> = body.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
        if texts.is_empty() {
            return Err(Error::InvalidRequest(format!("{} has no sentences", path.display())));
        }
        check_index(a.index, texts.len())?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "text".into());
        let outs = match mode {
            SynthMode::FullContext => {
                return Err(Error::InvalidRequest(
                    "full-context needs reference speech: use --context-audio".into(),
                ))
            }
            SynthMode::PrevSpeechOnly => synth.synthesize_paragraph(&texts, &stem)?.into_iter().enumerate().collect(),
            SynthMode::TextOnly => (0..texts.len())
                .filter(|&k| want(k))
                .map(|k| {
                    let req = SynthesisRequest { mode, texts: texts.clone(), index: k, previous: None, following: None };
                    Ok((k, synth.synthesize(&req)?))
                })
                .collect::<Result<Vec<_>>>()?,
        };
        results = outs
            .into_iter()
            .filter(|(k, _)| want(*k))
            .map(|(k, o)| (format!("{stem}_{k:03}"), o))
            .collect();
    }

    let mut summary = Vec::new();
    for (id, o) in &results {
        loaded.write_audio(&a.out, id, &o.mel)?;
        summary.push(json!({
            "id": id,
            "text": o.text,
            "phonemes": o.phonemes,
            "durations": o.durations,
            "frames": o.frames(),
        }));
    }
    write_json(&a.out.join("synth.json"), &json!({ "mode": mode, "outputs": summary }))?;
    write_snapshot(&a.out, &loaded.config)?;
    info!(count = results.len(), "synthesized");
    Ok(())
}

fn check_index(index: Option<usize>, n: usize) -> Result<()> {
    match index {
        Some(i) if i >= n => Err(Error::InvalidRequest(format!("--index {i} but the paragraph has {n} sentences"))),
        _ => Ok(()),
    }
}

fn parse_span(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::Edit(format!("span must be A:B, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

#[allow(clippy::too_many_arguments)]
fn edit(
    ckpt: &Path,
    data: &Path,
    utterance: &str,
    span: &str,
    replacement: &str,
    out: &Path,
    seed: Option<u64>,
    args: &ConfigArgs,
) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let span = parse_span(span)?;
    let loaded = Loaded::open(ckpt, args, seed)?;
    let store = CorpusStore::load(data)?;
    let (p, i) = store
        .find(utterance)
        .ok_or_else(|| Error::Edit(format!("no utterance '{utterance}' in {}", data.display())))?;
    let result = loaded.synthesizer().edit(&EditRequest {
        paragraph: &store.paragraphs[p],
        index: i,
        span,
        replacement: replacement.to_string(),
    })?;
    loaded.write_audio(out, utterance, &result.mel)?;
    write_json(
        &out.join("edit.json"),
        &json!({
            "utterance": utterance,
            "span": [span.0, span.1],
            "replacement": replacement,
            "phonemes": result.phonemes,
            "durations": result.durations,
            "edited_frames": [result.edited_frames.0, result.edited_frames.1],
            "frames": result.mel.rows(),
        }),
    )?;
    write_snapshot(out, &loaded.config)?;
    Ok(())
}

fn evaluate(pred: &Path, reference: &Path, out: &Path, args: &ConfigArgs) -> Result<()> {
    let _lock = RunLock::acquire(out)?;
    let r = resolve(&[], args)?;
    let stored = reference.join("audio.json");
    let (audio, ref_dir) = if stored.exists() {
        let text = fs::read_to_string(&stored)?;
        let audio: AudioConfig = serde_json::from_str(&text)?;
        (audio, reference.join("features"))
    } else {
        (r.config.audio.clone(), reference.to_path_buf())
    };
    let report = evaluate_dirs(pred, &ref_dir, &audio)?;
    let value = serde_json::to_value(&report)?;
    write_json(&out.join("eval.json"), &value)?;
    write_snapshot(out, &r)?;
    println!("{}", serde_json::to_string_pretty(&value["aggregate"])?);
    Ok(())
}
