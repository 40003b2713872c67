use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::{energy_from_mel, extract_f0, MelExtractor};
use super::lexicon::PhonemeInventory;
use super::{record, wav, AudioConfig, Utterance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub utterance_id: String,
    pub paragraph_id: String,
    pub index: usize,
    pub text: String,
    pub audio_path: PathBuf,
    pub alignment_path: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParagraphEntry {
    pub paragraph_id: String,
    /// Reading order.
    pub utterances: Vec<ManifestRecord>,
}

/// Paragraphs in first-appearance order, each with its utterances in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusManifest {
    pub paragraphs: Vec<ParagraphEntry>,
}

impl CorpusManifest {
    pub fn from_records(records: Vec<ManifestRecord>) -> Result<Self> {
        let mut ids = HashSet::new();
        let mut order: Vec<String> = Vec::new();
        let mut groups: HashMap<String, Vec<ManifestRecord>> = HashMap::new();
        for r in records {
            if !ids.insert(r.utterance_id.clone()) {
                return Err(Error::invalid(format!(
                    "duplicate utterance id {}",
                    r.utterance_id
                )));
            }
            if !groups.contains_key(&r.paragraph_id) {
                order.push(r.paragraph_id.clone());
            }
            groups.entry(r.paragraph_id.clone()).or_default().push(r);
        }
        let mut paragraphs = Vec::with_capacity(order.len());
        for pid in order {
            let mut utterances = groups.remove(&pid).unwrap();
            utterances.sort_by_key(|u| u.index);
            for (i, u) in utterances.iter().enumerate() {
                if u.index != i {
                    return Err(Error::invalid(format!(
                        "paragraph {pid}: indices must run 0..n, found {} at position {i}",
                        u.index
                    )));
                }
            }
            paragraphs.push(ParagraphEntry {
                paragraph_id: pid,
                utterances,
            });
        }
        Ok(Self { paragraphs })
    }

    pub fn len(&self) -> usize {
        self.paragraphs.iter().map(|p| p.utterances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Reads a JSON Lines manifest; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut r: ManifestRecord = serde_json::from_str(line)
            .map_err(|e| Error::ingest(path, format!("line {}: {e}", n + 1)))?;
        if r.audio_path.is_relative() {
            r.audio_path = base.join(&r.audio_path);
        }
        if r.alignment_path.is_relative() {
            r.alignment_path = base.join(&r.alignment_path);
        }
        records.push(r);
    }
    CorpusManifest::from_records(records)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentSegment {
    pub phoneme: String,
    pub start_sec: f64,
    pub end_sec: f64,
}

/// Parses an alignment tier: one `phoneme start_sec end_sec` per line.
pub fn read_alignment(path: &Path) -> Result<Vec<AlignmentSegment>> {
    let text = fs::read_to_string(path).map_err(|e| Error::ingest(path, e))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let parse = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| Error::ingest(path, format!("line {}: {e}", n + 1)))
        };
        if parts.len() != 3 {
            return Err(Error::ingest(
                path,
                format!("line {}: expected `phoneme start end`", n + 1),
            ));
        }
        out.push(AlignmentSegment {
            phoneme: parts[0].to_string(),
            start_sec: parse(parts[1])?,
            end_sec: parse(parts[2])?,
        });
    }
    Ok(out)
}

/// Converts segment boundaries to per-phoneme frame counts by rounding the
/// cumulative end times, so rounding error never accumulates. Any residual
/// against `frames` is absorbed at the end of the sentence.
pub fn quantize_durations(
    id: &str,
    segments: &[AlignmentSegment],
    frames: usize,
    frames_per_sec: f64,
    max_residual: usize,
) -> Result<Vec<u32>> {
    if segments.is_empty() {
        return Err(Error::alignment(id, "empty alignment"));
    }
    let mut prev_end = 0.0f64;
    let mut prev_boundary = 0i64;
    let mut durations = Vec::with_capacity(segments.len());
    for s in segments {
        if s.end_sec < s.start_sec || s.start_sec + 1e-6 < prev_end {
            return Err(Error::alignment(
                id,
                format!("non-monotonic segment '{}' at {}s", s.phoneme, s.start_sec),
            ));
        }
        prev_end = s.end_sec;
        let boundary = (s.end_sec * frames_per_sec).round() as i64;
        durations.push((boundary - prev_boundary).max(0));
        prev_boundary = prev_boundary.max(boundary);
    }
    let mut residual = frames as i64 - durations.iter().sum::<i64>();
    if residual.unsigned_abs() as usize > max_residual {
        return Err(Error::alignment(
            id,
            format!("alignment covers {} frames but audio has {frames}", frames as i64 - residual),
        ));
    }
    if residual > 0 {
        *durations.last_mut().unwrap() += residual;
    }
    for d in durations.iter_mut().rev() {
        if residual >= 0 {
            break;
        }
        let take = (*d).min(-residual);
        *d -= take;
        residual += take;
    }
    Ok(durations.into_iter().map(|d| d as u32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Held-out sentence targets; whole paragraphs are assigned until reached.
    pub valid_sentences: usize,
    pub test_sentences: usize,
    /// Largest frame mismatch between alignment and audio that gets repaired.
    pub max_alignment_residual: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            valid_sentences: 200,
            test_sentences: 200,
            max_alignment_residual: 4,
        }
    }
}

/// Metadata line of `utterances.jsonl`; features live in `features/<id>.feat`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredUtterance {
    pub utterance_id: String,
    pub paragraph_id: String,
    pub index: usize,
    pub text: String,
    pub phonemes: Vec<String>,
    pub durations: Vec<u32>,
    pub frames: usize,
    pub split: Split,
}

/// Ingested corpus: utterances grouped by paragraph in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStore {
    pub audio: AudioConfig,
    pub inventory: PhonemeInventory,
    pub paragraphs: Vec<Vec<Utterance>>,
    pub splits: HashMap<String, Split>,
}

const FEATURES_DIR: &str = "features";

impl CorpusStore {
    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.paragraphs.iter().flatten()
    }

    pub fn len(&self) -> usize {
        self.paragraphs.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn split_of(&self, utterance_id: &str) -> Option<Split> {
        self.splits.get(utterance_id).copied()
    }

    /// `(paragraph, index)` positions of every utterance in `split`.
    pub fn positions(&self, split: Split) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (p, para) in self.paragraphs.iter().enumerate() {
            for (i, u) in para.iter().enumerate() {
                if self.split_of(&u.utterance_id) == Some(split) {
                    out.push((p, i));
                }
            }
        }
        out
    }

    pub fn find(&self, utterance_id: &str) -> Option<(usize, usize)> {
        self.paragraphs.iter().enumerate().find_map(|(p, para)| {
            para.iter()
                .position(|u| u.utterance_id == utterance_id)
                .map(|i| (p, i))
        })
    }

    pub fn feature_path(dir: &Path, utterance_id: &str) -> PathBuf {
        dir.join(FEATURES_DIR).join(format!("{utterance_id}.feat"))
    }

    /// Feature record layout: `[frames x (mel_bins + 2)]`, columns mel.., f0, energy.
    pub fn feature_matrix(u: &Utterance) -> Result<Matrix> {
        let f0 = Matrix::new(u.frames(), 1, u.f0.clone())?;
        let energy = Matrix::new(u.frames(), 1, u.energy.clone())?;
        u.mel.hstack(&f0)?.hstack(&energy)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir.join(FEATURES_DIR))?;
        let mut lines = String::new();
        for u in self.utterances() {
            let meta = StoredUtterance {
                utterance_id: u.utterance_id.clone(),
                paragraph_id: u.paragraph_id.clone(),
                index: u.index_in_paragraph,
                text: u.text.clone(),
                phonemes: u.phonemes.clone(),
                durations: u.durations.clone(),
                frames: u.frames(),
                split: self.split_of(&u.utterance_id).unwrap_or(Split::Train),
            };
            lines.push_str(&serde_json::to_string(&meta)?);
            lines.push('\n');
            record::write(
                &Self::feature_path(dir, &u.utterance_id),
                &Self::feature_matrix(u)?,
            )?;
        }
        record::write_atomic(&dir.join("utterances.jsonl"), lines.as_bytes())?;
        record::write_atomic(&dir.join("inventory.json"), self.inventory.to_json().as_bytes())?;
        record::write_atomic(
            &dir.join("audio.json"),
            serde_json::to_string_pretty(&self.audio)?.as_bytes(),
        )?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read = |name: &str| {
            let p = dir.join(name);
            fs::read_to_string(&p).map_err(|e| Error::ingest(p, e))
        };
        let audio: AudioConfig = serde_json::from_str(&read("audio.json")?)?;
        let inventory = PhonemeInventory::from_json(&read("inventory.json")?)?;
        let mut paragraphs: Vec<Vec<Utterance>> = Vec::new();
        let mut splits = HashMap::new();
        for line in read("utterances.jsonl")?.lines().filter(|l| !l.trim().is_empty()) {
            let meta: StoredUtterance = serde_json::from_str(line)?;
            let feats = record::read(&Self::feature_path(dir, &meta.utterance_id))?;
            let bins = audio.mel_bins;
            if feats.cols() != bins + 2 || feats.rows() != meta.frames {
                return Err(Error::Format(format!(
                    "feature record for {} has shape {:?}",
                    meta.utterance_id,
                    feats.shape()
                )));
            }
            let u = Utterance {
                utterance_id: meta.utterance_id.clone(),
                paragraph_id: meta.paragraph_id.clone(),
                index_in_paragraph: meta.index,
                text: meta.text,
                phonemes: meta.phonemes,
                durations: meta.durations,
                f0: feats.column(bins),
                energy: feats.column(bins + 1),
                mel: feats.slice_cols(0, bins)?,
            };
            u.validate()?;
            splits.insert(meta.utterance_id, meta.split);
            match paragraphs.last_mut() {
                Some(p) if p[0].paragraph_id == u.paragraph_id => p.push(u),
                _ => paragraphs.push(vec![u]),
            }
        }
        Ok(Self {
            audio,
            inventory,
            paragraphs,
            splits,
        })
    }
}

fn ingest_one(
    r: &ManifestRecord,
    cfg: &AudioConfig,
    extractor: &MelExtractor,
    inventory: &PhonemeInventory,
    max_residual: usize,
) -> Result<Utterance> {
    if !r.audio_path.exists() {
        return Err(Error::ingest(&r.audio_path, "missing audio file"));
    }
    if !r.alignment_path.exists() {
        return Err(Error::ingest(&r.alignment_path, "missing alignment file"));
    }
    let (wave, sr) = wav::read_wav(&r.audio_path)?;
    if sr != cfg.sample_rate_hz {
        return Err(Error::ingest(
            &r.audio_path,
            format!("sample rate {sr} Hz, expected {}", cfg.sample_rate_hz),
        ));
    }
    let mel = extractor.mel(&wave)?;
    let f0 = extract_f0(&wave, cfg)?;
    let energy = energy_from_mel(&mel);
    let segments = read_alignment(&r.alignment_path)?;
    if let Some(bad) = segments.iter().find(|s| inventory.id(&s.phoneme).is_none()) {
        return Err(Error::alignment(
            &r.utterance_id,
            format!("phoneme '{}' is not in the lexicon", bad.phoneme),
        ));
    }
    let frames_per_sec = 1000.0 / cfg.frame_shift_ms;
    let durations = quantize_durations(
        &r.utterance_id,
        &segments,
        mel.rows(),
        frames_per_sec,
        max_residual,
    )?;
    let u = Utterance {
        utterance_id: r.utterance_id.clone(),
        paragraph_id: r.paragraph_id.clone(),
        index_in_paragraph: r.index,
        text: r.text.clone(),
        phonemes: segments.into_iter().map(|s| s.phoneme).collect(),
        durations,
        f0,
        energy,
        mel,
    };
    u.validate()?;
    Ok(u)
}

/// Extracts features for every manifest entry and assigns a deterministic,
/// paragraph-level train/valid/test split.
pub fn ingest(
    manifest: &CorpusManifest,
    cfg: &AudioConfig,
    inventory: &PhonemeInventory,
    split: &SplitConfig,
    seed: u64,
) -> Result<CorpusStore> {
    cfg.validate()?;
    let extractor = MelExtractor::new(cfg)?;
    let paragraphs = manifest
        .paragraphs
        .iter()
        .map(|p| {
            p.utterances
                .par_iter()
                .map(|r| ingest_one(r, cfg, &extractor, inventory, split.max_alignment_residual))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..paragraphs.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut splits = HashMap::new();
    let (mut test, mut valid) = (0usize, 0usize);
    let mut train_paragraphs = 0;
    for p in order {
        let n = paragraphs[p].len();
        let which = if test < split.test_sentences {
            test += n;
            Split::Test
        } else if valid < split.valid_sentences {
            valid += n;
            Split::Valid
        } else {
            train_paragraphs += 1;
            Split::Train
        };
        for u in &paragraphs[p] {
            splits.insert(u.utterance_id.clone(), which);
        }
    }
    if train_paragraphs == 0 && !paragraphs.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "split sizes ({} test, {} valid) leave no training paragraphs",
            split.test_sentences, split.valid_sentences
        )));
    }
    Ok(CorpusStore {
        audio: cfg.clone(),
        inventory: inventory.clone(),
        paragraphs,
        splits,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(p: &str, s: f64, e: f64) -> AlignmentSegment {
        AlignmentSegment {
            phoneme: p.into(),
            start_sec: s,
            end_sec: e,
        }
    }

    #[test]
    fn cumulative_rounding_absorbs_residual() {
        let fps = 1000.0 / 12.0;
        // boundaries at 0.1s (8.33 fr), 0.2s (16.67 fr), 0.3s (25 fr)
        let segs = [seg("a", 0.0, 0.1), seg("b", 0.1, 0.2), seg("c", 0.2, 0.3)];
        let d = quantize_durations("u", &segs, 25, fps, 4).unwrap();
        assert_eq!(d, vec![8, 9, 8]);
        // the audio has one more frame than the alignment covers
        let d = quantize_durations("u", &segs, 26, fps, 4).unwrap();
        assert_eq!(d, vec![8, 9, 9]);
        let d = quantize_durations("u", &segs, 23, fps, 4).unwrap();
        assert_eq!(d.iter().sum::<u32>(), 23);
        assert!(matches!(
            quantize_durations("u", &segs, 40, fps, 4),
            Err(Error::Alignment { .. })
        ));
    }

    #[test]
    fn negative_residual_spills_backwards() {
        let segs = [seg("a", 0.0, 0.12), seg("b", 0.12, 0.132)];
        let d = quantize_durations("u", &segs, 9, 1000.0 / 12.0, 4).unwrap();
        assert_eq!(d, vec![9, 0]);
    }

    #[test]
    fn manifest_ordering_and_ids() {
        let rec = |id: &str, p: &str, i: usize| ManifestRecord {
            utterance_id: id.into(),
            paragraph_id: p.into(),
            index: i,
            text: String::new(),
            audio_path: "a.wav".into(),
            alignment_path: "a.lab".into(),
        };
        let m = CorpusManifest::from_records(vec![
            rec("b1", "B", 1),
            rec("a0", "A", 0),
            rec("b0", "B", 0),
        ])
        .unwrap();
        assert_eq!(m.paragraphs[0].paragraph_id, "B");
        assert_eq!(m.paragraphs[0].utterances[0].utterance_id, "b0");
        assert!(CorpusManifest::from_records(vec![rec("x", "A", 0), rec("x", "A", 1)]).is_err());
        assert!(CorpusManifest::from_records(vec![rec("x", "A", 1)]).is_err());
    }
}
