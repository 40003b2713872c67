//! Sentence-pair embeddings from a frozen text encoder, and the cross-utterance
//! attention that injects them into phoneme-level features.

mod bert;
mod cu;
mod toy;

pub use bert::{BertConfig, BertPairEmbedder, WordPieceTokenizer};
pub use cu::{CuAttention, CuAttentionConfig, Fuse};
pub use toy::ToyEmbedder;

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::context::SentencePair;
use crate::corpus::record;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// A frozen sentence-pair encoder: identical input, identical output, always.
pub trait PairEmbedder: Send + Sync {
    fn dim(&self) -> usize;
    fn embed(&self, pair: &SentencePair) -> Result<Vec<f32>>;
}

/// Stacks `embed(pair)` rows into a `[pairs x dim]` matrix.
pub fn embed_pairs(pairs: &[SentencePair], embedder: &dyn PairEmbedder) -> Result<Matrix> {
    let dim = embedder.dim();
    let rows = pairs
        .par_iter()
        .map(|p| {
            let v = embedder.embed(p)?;
            if v.len() != dim {
                return Err(Error::Embedder(format!(
                    "embedder returned {} values, expected {dim}",
                    v.len()
                )));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Ok(Matrix::zeros(0, dim));
    }
    Matrix::from_rows(&rows)
}

/// Which embedder to construct; serialized into run configs and checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    /// `toy` or `pretrained`.
    pub kind: String,
    pub dim: usize,
    pub seed: u64,
    /// Directory with `config.json`, `vocab.txt`, `model.safetensors` for `pretrained`.
    pub path: String,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            kind: "toy".into(),
            dim: 768,
            seed: 0,
            path: String::new(),
        }
    }
}

impl EmbedderSpec {
    pub fn build(&self) -> Result<Box<dyn PairEmbedder>> {
        match self.kind.as_str() {
            "toy" => Ok(Box::new(ToyEmbedder::new(self.dim, self.seed)?)),
            "pretrained" => {
                let e = BertPairEmbedder::load(Path::new(&self.path))?;
                if e.dim() != self.dim {
                    return Err(Error::InvalidConfig(format!(
                        "pretrained encoder has width {}, config says {}",
                        e.dim(),
                        self.dim
                    )));
                }
                Ok(Box::new(e))
            }
            other => Err(Error::InvalidConfig(format!("unknown embedder kind '{other}'"))),
        }
    }
}

/// Per-utterance PBE matrices computed once during data preparation.
#[derive(Debug, Clone, Default)]
pub struct PbeCache {
    entries: HashMap<String, Matrix>,
}

impl PbeCache {
    pub fn insert(&mut self, utterance_id: &str, pbes: Matrix) {
        self.entries.insert(utterance_id.to_string(), pbes);
    }

    pub fn get(&self, utterance_id: &str) -> Result<&Matrix> {
        self.entries
            .get(utterance_id)
            .ok_or_else(|| Error::invalid(format!("no cached PBEs for {utterance_id}")))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut ids: Vec<&String> = self.entries.keys().collect();
        ids.sort();
        for id in ids {
            record::write(&dir.join(format!("{id}.pbe")), &self.entries[id])?;
        }
        Ok(())
    }

    pub fn load(dir: &Path, ids: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut cache = Self::default();
        for id in ids {
            let m = record::read(&dir.join(format!("{id}.pbe")))?;
            cache.entries.insert(id, m);
        }
        Ok(cache)
    }
}
