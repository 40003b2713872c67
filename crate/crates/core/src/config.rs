//! Run configuration: one struct merging every component's settings, a flat
//! `section.key = value` file format, and a canonical snapshot writer.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::context::AssembleOptions;
use crate::corpus::{AudioConfig, SplitConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::semantic::EmbedderSpec;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Sentences per side used for pair derivation.
    pub semantic_context: usize,
    pub assemble: AssembleOptions,
    pub split: SplitConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            semantic_context: 2,
            assemble: AssembleOptions::default(),
            split: SplitConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub audio: AudioConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub embedder: EmbedderSpec,
    pub synth: SynthConfig,
}

/// Where a resolved value came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Source {
    Default,
    File(String),
    Flag,
    /// Computed from the data, e.g. vocabulary size from the phoneme inventory.
    Derived,
}

/// A [`RunConfig`] plus the origin of every explicitly set key.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Source>,
}

impl RunConfig {
    /// Cross-component consistency checks.
    pub fn validate(&self) -> Result<()> {
        self.audio.validate()?;
        // vocab_size 0 means "take it from the inventory".
        let mut model = self.model.clone();
        model.vocab_size = model.vocab_size.max(1);
        model.validate()?;
        self.train.validate()?;
        if self.model.mel_bins != self.audio.mel_bins {
            return Err(Error::InvalidConfig(format!(
                "model.mel_bins = {} but audio.mel_bins = {}",
                self.model.mel_bins, self.audio.mel_bins
            )));
        }
        if self.model.d_pbe != self.embedder.dim {
            return Err(Error::InvalidConfig(format!(
                "model.d_pbe = {} but embedder.dim = {}",
                self.model.d_pbe, self.embedder.dim
            )));
        }
        let pairs = 2 * self.data.semantic_context;
        if self.model.num_pairs != pairs {
            return Err(Error::InvalidConfig(format!(
                "model.num_pairs = {} but data.semantic_context = {} yields {pairs} pairs",
                self.model.num_pairs, self.data.semantic_context
            )));
        }
        if self.data.assemble.acoustic_context != 1 {
            return Err(Error::InvalidConfig(
                "data.assemble.acoustic_context must be 1 (previous and next sentence)".into(),
            ));
        }
        Ok(())
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, Value>) {
    match v {
        Value::Object(map) => {
            for (k, v) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => {
            out.insert(prefix.to_string(), other.clone());
        }
    }
}

/// Interprets a raw value against the type of the default it replaces.
fn parse_value(key: &str, raw: &str, like: &Value) -> Result<Value> {
    let bad = || Error::InvalidConfig(format!("{key}: cannot parse '{raw}'"));
    Ok(match like {
        Value::String(_) => Value::String(raw.trim_matches('"').to_string()),
        Value::Bool(_) => Value::Bool(raw.parse().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: Value = serde_json::from_str(raw).map_err(|_| bad())?;
            if !v.is_number() {
                return Err(bad());
            }
            v
        }
        _ => serde_json::from_str(raw).map_err(|_| bad())?,
    })
}

fn set_path(root: &mut Value, key: &str, v: Value) {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for p in &parts[..parts.len() - 1] {
        cur = &mut cur[*p];
    }
    cur[parts[parts.len() - 1]] = v;
}

/// Parses `section.key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("line {}: expected 'key = value'", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl ResolvedConfig {
    pub fn from_config(config: RunConfig) -> Self {
        Self {
            config,
            provenance: BTreeMap::new(),
        }
    }

    /// Layers each file in order, then flag overrides, over the defaults.
    pub fn resolve(files: &[&Path], overrides: &[(String, String)]) -> Result<Self> {
        let mut r = Self::from_config(RunConfig::default());
        for path in files {
            r.apply_file(path)?;
        }
        r.apply_pairs(overrides, Source::Flag)?;
        Ok(r)
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        // File name only, so snapshots do not depend on where a run lives.
        let name = path.file_name().unwrap_or(path.as_os_str()).to_string_lossy();
        self.apply_pairs(&parse_pairs(&text)?, Source::File(name.into_owned()))
    }

    /// Sets raw string values, each parsed against the type of the key it replaces.
    pub fn apply_pairs(&mut self, pairs: &[(String, String)], source: Source) -> Result<()> {
        if pairs.is_empty() {
            return Ok(());
        }
        let mut root = serde_json::to_value(&self.config)?;
        let mut current = BTreeMap::new();
        flatten("", &root, &mut current);
        for (k, raw) in pairs {
            let like = current
                .get(k)
                .ok_or_else(|| Error::InvalidConfig(format!("unknown key '{k}'")))?;
            set_path(&mut root, k, parse_value(k, raw, like)?);
            self.provenance.insert(k.clone(), source.clone());
        }
        self.config = serde_json::from_value(root).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        Ok(())
    }

    /// Sets one typed value.
    pub fn set(&mut self, key: &str, value: Value, source: Source) -> Result<()> {
        let mut root = serde_json::to_value(&self.config)?;
        let mut flat = BTreeMap::new();
        flatten("", &root, &mut flat);
        if !flat.contains_key(key) {
            return Err(Error::InvalidConfig(format!("unknown key '{key}'")));
        }
        set_path(&mut root, key, value);
        self.config = serde_json::from_value(root).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        self.provenance.insert(key.to_string(), source);
        Ok(())
    }

    /// Canonical sorted `key = value` text with a provenance comment per line.
    pub fn snapshot(&self) -> Result<String> {
        let mut flat = BTreeMap::new();
        flatten("", &serde_json::to_value(&self.config)?, &mut flat);
        let mut out = String::new();
        for (k, v) in flat {
            let value = match &v {
                Value::String(s) => s.clone(),
                other => other.to_string(),
            };
            let origin = match self.provenance.get(&k) {
                None | Some(Source::Default) => "default".to_string(),
                Some(Source::File(f)) => format!("file {f}"),
                Some(Source::Flag) => "flag".to_string(),
                Some(Source::Derived) => "derived".to_string(),
            };
            out.push_str(&format!("{k} = {value}  # {origin}\n"));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_snapshot() {
        let r = ResolvedConfig::resolve(&[], &[]).unwrap();
        let snap = r.snapshot().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(&path, &snap).unwrap();
        let back = ResolvedConfig::resolve(&[&path], &[]).unwrap();
        assert_eq!(back.config, r.config);
        assert!(snap.contains("train.peak_lr = 0.001  # default"));
        assert!(back.snapshot().unwrap().contains("train.peak_lr = 0.001  # file run.conf"));
        assert!(snap.lines().collect::<Vec<_>>().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "train.max_steps = 10 # short\nmodel.cu.heads=2\nembedder.kind = toy\n").unwrap();
        let r = ResolvedConfig::resolve(&[&path], &[("train.max_steps".into(), "50".into())]).unwrap();
        assert_eq!(r.config.train.max_steps, 50);
        assert_eq!(r.config.model.cu.heads, 2);
        assert_eq!(r.provenance["train.max_steps"], Source::Flag);
        assert!(matches!(r.provenance["model.cu.heads"], Source::File(_)));
        let snap = r.snapshot().unwrap();
        assert!(snap.contains("train.max_steps = 50  # flag"));
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let e = |k: &str, v: &str| ResolvedConfig::resolve(&[], &[(k.into(), v.into())]).unwrap_err();
        assert!(matches!(e("train.nope", "1"), Error::InvalidConfig(_)));
        assert!(matches!(e("train.max_steps", "ten"), Error::InvalidConfig(_)));
        assert!(matches!(e("train.max_steps", "-1"), Error::InvalidConfig(_)));
        assert!(matches!(e("train.schedule", "cosine"), Error::InvalidConfig(_)));
        assert!(matches!(parse_pairs("no equals sign"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn validation_catches_contradictions() {
        let mut c = RunConfig::default();
        c.validate().unwrap();
        c.model.mel_bins = 40;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.embedder.dim = 64;
        assert!(c.validate().is_err());
        let mut c = RunConfig::default();
        c.data.semantic_context = 3;
        assert!(c.validate().is_err());
    }
}
