use super::PairEmbedder;
use crate::context::SentencePair;
use crate::error::{Error, Result};

/// Deterministic stand-in for a pretrained pair encoder: signed feature
/// hashing of word and character n-grams from both sides, L2-normalized.
#[derive(Debug, Clone)]
pub struct ToyEmbedder {
    dim: usize,
    seed: u64,
}

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for part in parts {
        for &b in *part {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        // separator so ("ab","c") and ("a","bc") differ
        h ^= 0xff;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

impl ToyEmbedder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("embedder dim must be positive".into()));
        }
        Ok(Self { dim, seed })
    }

    fn features(side: &'static str, text: &str) -> Vec<(&'static str, String)> {
        let lower = text.to_lowercase();
        let words: Vec<&str> = lower.split_whitespace().collect();
        let mut out = Vec::new();
        if words.is_empty() {
            out.push((side, "[EMPTY]".to_string()));
        }
        for w in &words {
            out.push((side, format!("w:{w}")));
            let chars: Vec<char> = format!("<{w}>").chars().collect();
            for n in [2, 3] {
                for g in chars.windows(n) {
                    out.push((side, format!("c:{}", g.iter().collect::<String>())));
                }
            }
        }
        for pair in words.windows(2) {
            out.push((side, format!("b:{} {}", pair[0], pair[1])));
        }
        out
    }
}

impl PairEmbedder for ToyEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn embed(&self, pair: &SentencePair) -> Result<Vec<f32>> {
        let mut v = vec![0f64; self.dim];
        let feats = std::iter::once(("cls", "[CLS]".to_string()))
            .chain(Self::features("a", &pair.text_a))
            .chain(Self::features("b", &pair.text_b));
        for (side, f) in feats {
            let h = fnv1a(self.seed, &[side.as_bytes(), f.as_bytes()]);
            let idx = (h % self.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| (x / norm) as f32).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_norm_and_side_sensitive() {
        let e = ToyEmbedder::new(64, 1).unwrap();
        let p = |a: &str, b: &str| SentencePair {
            text_a: a.into(),
            text_b: b.into(),
            pair_index: 0,
        };
        let ab = e.embed(&p("bada", "kumi")).unwrap();
        let ba = e.embed(&p("kumi", "bada")).unwrap();
        let n: f32 = ab.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-5);
        assert_ne!(ab, ba);
        let other_seed = ToyEmbedder::new(64, 2).unwrap().embed(&p("bada", "kumi")).unwrap();
        assert_ne!(ab, other_seed);
    }
}
