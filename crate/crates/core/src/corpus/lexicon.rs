use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Silence phoneme placed at sentence edges by the frontend and the aligner.
pub const SILENCE: &str = "sil";

/// Word → phoneme lookup table. One entry per line: `word ph1 ph2 ...`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    entries: BTreeMap<String, Vec<String>>,
}

/// A phonemized sentence with the phoneme range of every word.
#[derive(Debug, Clone, PartialEq)]
pub struct Phonemized {
    pub phonemes: Vec<String>,
    pub words: Vec<(String, std::ops::Range<usize>)>,
}

impl Lexicon {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap().to_lowercase();
            let phones: Vec<String> = parts.map(str::to_string).collect();
            if phones.is_empty() {
                return Err(Error::Frontend(format!(
                    "lexicon line {} has no phonemes",
                    n + 1
                )));
            }
            entries.insert(word, phones);
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.entries
            .iter()
            .map(|(w, p)| format!("{w} {}\n", p.join(" ")))
            .collect()
    }

    pub fn insert(&mut self, word: &str, phonemes: Vec<String>) {
        self.entries.insert(word.to_lowercase(), phonemes);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn phoneme_set(&self) -> BTreeSet<&str> {
        self.entries
            .values()
            .flat_map(|p| p.iter().map(String::as_str))
            .collect()
    }

    /// Exact word match first, then per-character fallback.
    pub fn word(&self, word: &str) -> Result<Vec<String>> {
        let key = word.to_lowercase();
        if let Some(p) = self.entries.get(&key) {
            return Ok(p.clone());
        }
        let mut out = Vec::new();
        for ch in key.chars() {
            let p = self.entries.get(&ch.to_string()).ok_or_else(|| {
                Error::Frontend(format!("no pronunciation for '{ch}' in word '{word}'"))
            })?;
            out.extend(p.iter().cloned());
        }
        Ok(out)
    }

    /// Splits on whitespace, strips punctuation and looks up each word.
    /// With `pad_silence`, the sequence is wrapped in [`SILENCE`].
    pub fn phonemize(&self, text: &str, pad_silence: bool) -> Result<Phonemized> {
        let mut phonemes = Vec::new();
        let mut words = Vec::new();
        if pad_silence {
            phonemes.push(SILENCE.to_string());
        }
        for raw in text.split_whitespace() {
            let word: String = raw.chars().filter(|c| c.is_alphanumeric()).collect();
            if word.is_empty() {
                continue;
            }
            let start = phonemes.len();
            phonemes.extend(self.word(&word)?);
            words.push((word, start..phonemes.len()));
        }
        if pad_silence {
            phonemes.push(SILENCE.to_string());
        }
        Ok(Phonemized { phonemes, words })
    }
}

/// Dense phoneme ids. Id 0 is always [`SILENCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for PhonemeInventory {
    fn from(symbols: Vec<String>) -> Self {
        Self::from_symbols(symbols)
    }
}

impl From<PhonemeInventory> for Vec<String> {
    fn from(inv: PhonemeInventory) -> Self {
        inv.symbols
    }
}

impl PhonemeInventory {
    pub fn new(symbols: impl IntoIterator<Item = String>) -> Self {
        let mut seen = BTreeSet::new();
        let mut list = vec![SILENCE.to_string()];
        seen.insert(SILENCE.to_string());
        let mut rest: Vec<String> = symbols
            .into_iter()
            .filter(|s| seen.insert(s.clone()))
            .collect();
        rest.sort();
        list.extend(rest);
        Self::from_symbols(list)
    }

    fn from_symbols(symbols: Vec<String>) -> Self {
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i as u32))
            .collect();
        Self { symbols, index }
    }

    pub fn from_lexicon(lex: &Lexicon) -> Self {
        Self::new(lex.phoneme_set().into_iter().map(str::to_string))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn id(&self, symbol: &str) -> Option<u32> {
        self.index.get(symbol).copied()
    }

    pub fn ids(&self, symbols: &[String]) -> Result<Vec<u32>> {
        symbols
            .iter()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| Error::invalid(format!("phoneme '{s}' not in inventory")))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.symbols).expect("string list serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let symbols: Vec<String> = serde_json::from_str(text)?;
        if symbols.first().map(String::as_str) != Some(SILENCE) {
            return Err(Error::Format("inventory must start with the silence phoneme".into()));
        }
        Ok(Self::from_symbols(symbols))
    }
}
