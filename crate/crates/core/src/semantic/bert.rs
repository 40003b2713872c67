//! Adapter for a pretrained BERT-family pair encoder stored on disk in the
//! Hugging Face layout (`config.json`, `vocab.txt`, `model.safetensors`). The
//! embedding of a pair is the final hidden state at the `[CLS]` position.

use std::collections::HashMap;
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use serde::Deserialize;

use super::PairEmbedder;
use crate::context::SentencePair;
use crate::error::{Error, Result};
use crate::nn::{layer_norm, softmax_last};

#[derive(Debug, Clone, Deserialize)]
pub struct BertConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub num_hidden_layers: usize,
    pub num_attention_heads: usize,
    pub intermediate_size: usize,
    pub max_position_embeddings: usize,
    #[serde(default = "default_type_vocab")]
    pub type_vocab_size: usize,
    #[serde(default = "default_eps")]
    pub layer_norm_eps: f64,
}

fn default_type_vocab() -> usize {
    2
}

fn default_eps() -> f64 {
    1e-12
}

/// Basic + WordPiece tokenization (lower-casing, punctuation and CJK split).
#[derive(Debug, Clone)]
pub struct WordPieceTokenizer {
    vocab: HashMap<String, u32>,
    unk: u32,
    pub cls: u32,
    pub sep: u32,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0x20000..=0x2A6DF | 0xF900..=0xFAFF | 0x2F800..=0x2FA1F)
}

impl WordPieceTokenizer {
    pub fn from_vocab_text(text: &str) -> Result<Self> {
        let vocab: HashMap<String, u32> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (l.trim_end().to_string(), i as u32))
            .collect();
        let get = |t: &str| {
            vocab
                .get(t)
                .copied()
                .ok_or_else(|| Error::Embedder(format!("vocab lacks {t}")))
        };
        Ok(Self {
            unk: get("[UNK]")?,
            cls: get("[CLS]")?,
            sep: get("[SEP]")?,
            vocab,
        })
    }

    fn basic(text: &str) -> Vec<String> {
        let mut words = Vec::new();
        let mut cur = String::new();
        for c in text.to_lowercase().chars() {
            if c.is_whitespace() {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            } else if c.is_ascii_punctuation() || is_cjk(c) || (!c.is_alphanumeric()) {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
                words.push(c.to_string());
            } else {
                cur.push(c);
            }
        }
        if !cur.is_empty() {
            words.push(cur);
        }
        words
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in Self::basic(text) {
            let chars: Vec<char> = word.chars().collect();
            if chars.len() > 100 {
                ids.push(self.unk);
                continue;
            }
            let mut pieces = Vec::new();
            let mut start = 0;
            let mut ok = true;
            while start < chars.len() {
                let mut end = chars.len();
                let mut found = None;
                while start < end {
                    let mut piece: String = chars[start..end].iter().collect();
                    if start > 0 {
                        piece = format!("##{piece}");
                    }
                    if let Some(&id) = self.vocab.get(&piece) {
                        found = Some(id);
                        break;
                    }
                    end -= 1;
                }
                match found {
                    Some(id) => {
                        pieces.push(id);
                        start = end;
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                ids.extend(pieces);
            } else {
                ids.push(self.unk);
            }
        }
        ids
    }

    /// `[CLS] a [SEP] b [SEP]` with segment ids, truncated to `max_len`.
    pub fn encode_pair(&self, a: &str, b: &str, max_len: usize) -> (Vec<u32>, Vec<u32>) {
        let mut ta = self.tokenize(a);
        let mut tb = self.tokenize(b);
        let budget = max_len.saturating_sub(3);
        while ta.len() + tb.len() > budget {
            if ta.len() >= tb.len() {
                ta.pop();
            } else {
                tb.pop();
            }
        }
        let mut ids = vec![self.cls];
        ids.extend(&ta);
        ids.push(self.sep);
        let mut types = vec![0; ids.len()];
        ids.extend(&tb);
        ids.push(self.sep);
        types.resize(ids.len(), 1);
        (ids, types)
    }
}

struct Layer {
    q: (Tensor, Tensor),
    k: (Tensor, Tensor),
    v: (Tensor, Tensor),
    attn_out: (Tensor, Tensor),
    attn_norm: (Tensor, Tensor),
    inter: (Tensor, Tensor),
    out: (Tensor, Tensor),
    out_norm: (Tensor, Tensor),
}

pub struct BertPairEmbedder {
    cfg: BertConfig,
    tokenizer: WordPieceTokenizer,
    word: Tensor,
    position: Tensor,
    token_type: Tensor,
    emb_norm: (Tensor, Tensor),
    layers: Vec<Layer>,
}

fn linear(x: &Tensor, (w, b): &(Tensor, Tensor)) -> Result<Tensor> {
    // stored as [out, in]
    Ok(x.matmul(&w.t()?)?.broadcast_add(b)?)
}

impl BertPairEmbedder {
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            std::fs::read_to_string(dir.join(name))
                .map_err(|e| Error::Embedder(format!("{}: {e}", dir.join(name).display())))
        };
        let cfg: BertConfig = serde_json::from_str(&read("config.json")?)?;
        let tokenizer = WordPieceTokenizer::from_vocab_text(&read("vocab.txt")?)?;
        let weights = candle_core::safetensors::load(dir.join("model.safetensors"), &Device::Cpu)
            .map_err(|e| Error::Embedder(format!("loading weights: {e}")))?;
        Self::from_weights(cfg, tokenizer, weights)
    }

    pub fn from_weights(
        cfg: BertConfig,
        tokenizer: WordPieceTokenizer,
        weights: HashMap<String, Tensor>,
    ) -> Result<Self> {
        if !cfg.hidden_size.is_multiple_of(cfg.num_attention_heads) {
            return Err(Error::Embedder("hidden size not divisible by heads".into()));
        }
        let get = |name: &str| -> Result<Tensor> {
            weights
                .get(name)
                .or_else(|| weights.get(&format!("bert.{name}")))
                .ok_or_else(|| Error::Embedder(format!("missing weight {name}")))
                .and_then(|t| Ok(t.to_dtype(DType::F32)?))
        };
        let pair = |p: &str, a: &str, b: &str| -> Result<(Tensor, Tensor)> {
            Ok((get(&format!("{p}.{a}"))?, get(&format!("{p}.{b}"))?))
        };
        let lin = |p: &str| pair(p, "weight", "bias");
        let norm = |p: &str| -> Result<(Tensor, Tensor)> {
            pair(p, "weight", "bias").or_else(|_| pair(p, "gamma", "beta"))
        };
        let layers = (0..cfg.num_hidden_layers)
            .map(|i| {
                let p = format!("encoder.layer.{i}");
                Ok(Layer {
                    q: lin(&format!("{p}.attention.self.query"))?,
                    k: lin(&format!("{p}.attention.self.key"))?,
                    v: lin(&format!("{p}.attention.self.value"))?,
                    attn_out: lin(&format!("{p}.attention.output.dense"))?,
                    attn_norm: norm(&format!("{p}.attention.output.LayerNorm"))?,
                    inter: lin(&format!("{p}.intermediate.dense"))?,
                    out: lin(&format!("{p}.output.dense"))?,
                    out_norm: norm(&format!("{p}.output.LayerNorm"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let word = get("embeddings.word_embeddings.weight")?;
        if word.dims() != [cfg.vocab_size, cfg.hidden_size] {
            return Err(Error::Embedder(format!(
                "word embeddings have shape {:?}",
                word.dims()
            )));
        }
        Ok(Self {
            word,
            position: get("embeddings.position_embeddings.weight")?,
            token_type: get("embeddings.token_type_embeddings.weight")?,
            emb_norm: norm("embeddings.LayerNorm")?,
            layers,
            tokenizer,
            cfg,
        })
    }

    fn cls_state(&self, ids: &[u32], types: &[u32]) -> Result<Vec<f32>> {
        let n = ids.len();
        let dev = Device::Cpu;
        let eps = self.cfg.layer_norm_eps;
        let ids_t = Tensor::from_slice(ids, n, &dev)?;
        let types_t = Tensor::from_slice(types, n, &dev)?;
        let x = self
            .word
            .index_select(&ids_t, 0)?
            .add(&self.position.narrow(0, 0, n)?)?
            .add(&self.token_type.index_select(&types_t, 0)?)?;
        let mut x = layer_norm(&x, &self.emb_norm.0, &self.emb_norm.1, eps)?;
        let heads = self.cfg.num_attention_heads;
        let dh = self.cfg.hidden_size / heads;
        let split = |t: Tensor| -> Result<Tensor> {
            Ok(t.reshape((n, heads, dh))?.transpose(0, 1)?.contiguous()?)
        };
        for l in &self.layers {
            let q = split(linear(&x, &l.q)?)?;
            let k = split(linear(&x, &l.k)?)?;
            let v = split(linear(&x, &l.v)?)?;
            let scores = (q.matmul(&k.transpose(1, 2)?.contiguous()?)? / (dh as f64).sqrt())?;
            let ctx = softmax_last(&scores)?
                .matmul(&v)?
                .transpose(0, 1)?
                .contiguous()?
                .reshape((n, self.cfg.hidden_size))?;
            let a = linear(&ctx, &l.attn_out)?.add(&x)?;
            x = layer_norm(&a, &l.attn_norm.0, &l.attn_norm.1, eps)?;
            let h = linear(&x, &l.inter)?.gelu_erf()?;
            let o = linear(&h, &l.out)?.add(&x)?;
            x = layer_norm(&o, &l.out_norm.0, &l.out_norm.1, eps)?;
        }
        Ok(x.narrow(0, 0, 1)?.squeeze(0)?.to_vec1::<f32>()?)
    }
}

impl PairEmbedder for BertPairEmbedder {
    fn dim(&self) -> usize {
        self.cfg.hidden_size
    }

    fn embed(&self, pair: &SentencePair) -> Result<Vec<f32>> {
        let (ids, types) = self.tokenizer.encode_pair(
            &pair.text_a,
            &pair.text_b,
            self.cfg.max_position_embeddings,
        );
        let types: Vec<u32> = types
            .into_iter()
            .map(|t| t.min(self.cfg.type_vocab_size as u32 - 1))
            .collect();
        self.cls_state(&ids, &types)
            .map_err(|e| Error::Embedder(format!("encoder forward failed: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    const VOCAB: &str = "[PAD]\n[UNK]\n[CLS]\n[SEP]\nbada\nku\n##mi\n你\n好\n.\n";

    fn write_tiny_model(dir: &Path) {
        let h = 8;
        let cfg = serde_json::json!({
            "vocab_size": 10, "hidden_size": h, "num_hidden_layers": 2,
            "num_attention_heads": 2, "intermediate_size": 16,
            "max_position_embeddings": 16, "type_vocab_size": 2, "layer_norm_eps": 1e-12
        });
        std::fs::write(dir.join("config.json"), cfg.to_string()).unwrap();
        std::fs::write(dir.join("vocab.txt"), VOCAB).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let mut w = HashMap::new();
        let mut put = |name: String, shape: &[usize]| {
            let n: usize = shape.iter().product();
            let v: Vec<f32> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
            w.insert(name, Tensor::from_vec(v, shape, &Device::Cpu).unwrap());
        };
        put("bert.embeddings.word_embeddings.weight".into(), &[10, h]);
        put("bert.embeddings.position_embeddings.weight".into(), &[16, h]);
        put("bert.embeddings.token_type_embeddings.weight".into(), &[2, h]);
        put("bert.embeddings.LayerNorm.weight".into(), &[h]);
        put("bert.embeddings.LayerNorm.bias".into(), &[h]);
        for i in 0..2 {
            let p = format!("bert.encoder.layer.{i}");
            for (name, o, inn) in [
                ("attention.self.query", h, h),
                ("attention.self.key", h, h),
                ("attention.self.value", h, h),
                ("attention.output.dense", h, h),
                ("intermediate.dense", 16, h),
                ("output.dense", h, 16),
            ] {
                put(format!("{p}.{name}.weight"), &[o, inn]);
                put(format!("{p}.{name}.bias"), &[o]);
            }
            for name in ["attention.output.LayerNorm", "output.LayerNorm"] {
                put(format!("{p}.{name}.weight"), &[h]);
                put(format!("{p}.{name}.bias"), &[h]);
            }
        }
        candle_core::safetensors::save(&w, dir.join("model.safetensors")).unwrap();
    }

    #[test]
    fn wordpiece() {
        let t = WordPieceTokenizer::from_vocab_text(VOCAB).unwrap();
        assert_eq!(t.tokenize("Kumi bada."), vec![5, 6, 4, 9]);
        assert_eq!(t.tokenize("你好"), vec![7, 8]);
        assert_eq!(t.tokenize("zzz"), vec![1]);
        let (ids, types) = t.encode_pair("bada", "", 16);
        assert_eq!(ids, vec![2, 4, 3, 3]);
        assert_eq!(types, vec![0, 0, 0, 1]);
        let (ids, _) = t.encode_pair("bada bada bada", "kumi kumi", 6);
        assert_eq!(ids.len(), 6);
    }

    #[test]
    fn pretrained_adapter_loads_and_embeds() {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_model(dir.path());
        let e = BertPairEmbedder::load(dir.path()).unwrap();
        assert_eq!(e.dim(), 8);
        let p = |a: &str, b: &str| SentencePair {
            text_a: a.into(),
            text_b: b.into(),
            pair_index: 0,
        };
        let x = e.embed(&p("bada", "kumi")).unwrap();
        assert_eq!(x.len(), 8);
        assert!(x.iter().all(|v| v.is_finite()));
        assert_eq!(x, e.embed(&p("bada", "kumi")).unwrap());
        assert_ne!(x, e.embed(&p("kumi", "bada")).unwrap());
        assert_eq!(e.embed(&p("", "")).unwrap().len(), 8);
    }

    #[test]
    fn missing_files_are_embedder_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            BertPairEmbedder::load(dir.path()),
            Err(Error::Embedder(_))
        ));
    }
}
