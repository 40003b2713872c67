//! Context windows over a paragraph, sentence-pair derivation, and assembly of
//! masked training examples over the concatenated `prev ‖ current ‖ next` frames.

use serde::{Deserialize, Serialize};

use crate::corpus::{PhonemeInventory, Utterance};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Value written into masked cells of the model-visible mel. The model swaps
/// these rows for its learned MASK embedding; NaN makes any leak loud.
pub const MASK_SENTINEL: f32 = f32::NAN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Segment {
    Prev = 0,
    Cur = 1,
    Next = 2,
}

/// The current utterance and up to `l` neighbours on each side, all from one paragraph.
#[derive(Debug, Clone)]
pub struct ContextWindow<'a> {
    pub current: &'a Utterance,
    /// Nearest last.
    pub preceding: Vec<&'a Utterance>,
    /// Nearest first.
    pub following: Vec<&'a Utterance>,
    pub l: usize,
}

impl ContextWindow<'_> {
    pub fn prev(&self) -> Option<&Utterance> {
        self.preceding.last().copied()
    }

    pub fn next(&self) -> Option<&Utterance> {
        self.following.first().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentencePair {
    pub text_a: String,
    pub text_b: String,
    pub pair_index: usize,
}

pub fn build_window(paragraph: &[Utterance], index: usize, l: usize) -> Result<ContextWindow<'_>> {
    if index >= paragraph.len() {
        return Err(Error::invalid(format!(
            "index {index} outside paragraph of {} sentences",
            paragraph.len()
        )));
    }
    if l == 0 {
        return Err(Error::invalid("context width L must be at least 1"));
    }
    let lo = index.saturating_sub(l);
    let hi = (index + l + 1).min(paragraph.len());
    Ok(ContextWindow {
        current: &paragraph[index],
        preceding: paragraph[lo..index].iter().collect(),
        following: paragraph[index + 1..hi].iter().collect(),
        l,
    })
}

/// Pairs of adjacent sentences over the `2L+1` slots centred on the current
/// sentence; absent slots contribute empty text. Always `2L` pairs.
pub fn derive_pairs_from_texts(
    preceding: &[&str],
    current: &str,
    following: &[&str],
    l: usize,
) -> Vec<SentencePair> {
    let mut slots: Vec<&str> = vec![""; 2 * l + 1];
    for (k, t) in preceding.iter().rev().take(l).enumerate() {
        slots[l - 1 - k] = t;
    }
    slots[l] = current;
    for (k, t) in following.iter().take(l).enumerate() {
        slots[l + 1 + k] = t;
    }
    slots
        .windows(2)
        .enumerate()
        .map(|(k, w)| SentencePair {
            text_a: w[0].to_string(),
            text_b: w[1].to_string(),
            pair_index: k,
        })
        .collect()
}

pub fn derive_pairs(window: &ContextWindow) -> Vec<SentencePair> {
    let pre: Vec<&str> = window.preceding.iter().map(|u| u.text.as_str()).collect();
    let fol: Vec<&str> = window.following.iter().map(|u| u.text.as_str()).collect();
    derive_pairs_from_texts(&pre, &window.current.text, &fol, window.l)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MaskPolicy {
    CurrentSentence,
    /// Absolute `[start, end)` frame spans in concatenated coordinates; each must
    /// lie inside the current sentence.
    FrameSpans(Vec<(usize, usize)>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssembleOptions {
    /// Neighbouring sentences per side on the acoustic path (0 or 1).
    pub acoustic_context: usize,
    /// Cap on concatenated frames.
    pub max_frames: usize,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        Self {
            acoustic_context: 1,
            max_frames: 3000,
        }
    }
}

/// Model-ready example for one context window.
#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub utterance_id: String,
    pub phoneme_ids: Vec<u32>,
    pub segments: Vec<Segment>,
    pub durations: Vec<u32>,
    /// Per-phoneme mean voiced F0 (Hz, 0 = unvoiced).
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
    /// Model-visible mel; masked rows hold [`MASK_SENTINEL`].
    pub concat_mel: Matrix,
    pub mask_flags: Vec<bool>,
    /// Phonemes whose durations the model must predict at inference.
    pub regenerate: Vec<bool>,
    pub current_phoneme_span: (usize, usize),
    pub current_frame_span: (usize, usize),
    pub pairs: Vec<SentencePair>,
    /// Unmasked ground truth over all frames; used only by the losses.
    pub target_mel: Matrix,
}

impl TrainingExample {
    pub fn frames(&self) -> usize {
        self.concat_mel.rows()
    }

    pub fn phonemes(&self) -> usize {
        self.phoneme_ids.len()
    }
}

struct Part {
    segment: Segment,
    phonemes: Vec<String>,
    durations: Vec<u32>,
    pitch: Vec<f32>,
    energy: Vec<f32>,
    mel: Matrix,
}

impl Part {
    fn from(u: &Utterance, segment: Segment) -> Result<Self> {
        u.validate()?;
        Ok(Self {
            segment,
            phonemes: u.phonemes.clone(),
            durations: u.durations.clone(),
            pitch: u.phoneme_pitch()?,
            energy: u.phoneme_energy()?,
            mel: u.mel.clone(),
        })
    }

    fn frames(&self) -> usize {
        self.mel.rows()
    }

    /// Removes `n` frames from the left edge, dropping phonemes that empty out.
    fn trim_left(&mut self, mut n: usize) -> Result<()> {
        self.mel = self.mel.slice_rows(n.min(self.frames()), self.frames())?;
        while n > 0 && !self.durations.is_empty() {
            let d = self.durations[0] as usize;
            if d <= n {
                n -= d;
                self.durations.remove(0);
                self.phonemes.remove(0);
                self.pitch.remove(0);
                self.energy.remove(0);
            } else {
                self.durations[0] -= n as u32;
                n = 0;
            }
        }
        Ok(())
    }
}

/// Concatenates `prev ‖ current ‖ next` and masks per `policy`.
pub fn assemble_example(
    window: &ContextWindow,
    policy: &MaskPolicy,
    inventory: &PhonemeInventory,
    opts: &AssembleOptions,
) -> Result<TrainingExample> {
    if opts.acoustic_context > 1 {
        return Err(Error::InvalidConfig(
            "acoustic_context supports at most one sentence per side".into(),
        ));
    }
    let mut prev = match window.prev() {
        Some(u) if opts.acoustic_context == 1 => Some(Part::from(u, Segment::Prev)?),
        _ => None,
    };
    let cur = Part::from(window.current, Segment::Cur)?;
    let mut next = match window.next() {
        Some(u) if opts.acoustic_context == 1 => Some(Part::from(u, Segment::Next)?),
        _ => None,
    };
    let total = |p: &Option<Part>, n: &Option<Part>| {
        cur.frames() + p.as_ref().map_or(0, Part::frames) + n.as_ref().map_or(0, Part::frames)
    };
    if total(&prev, &next) > opts.max_frames {
        next = None;
    }
    let excess = total(&prev, &next).saturating_sub(opts.max_frames);
    if excess > 0 {
        if let Some(p) = prev.as_mut() {
            if excess >= p.frames() {
                prev = None;
            } else {
                p.trim_left(excess)?;
            }
        }
    }

    let parts: Vec<&Part> = [prev.as_ref(), Some(&cur), next.as_ref()]
        .into_iter()
        .flatten()
        .collect();
    let mut ex = TrainingExample {
        utterance_id: window.current.utterance_id.clone(),
        phoneme_ids: Vec::new(),
        segments: Vec::new(),
        durations: Vec::new(),
        pitch: Vec::new(),
        energy: Vec::new(),
        concat_mel: Matrix::zeros(0, cur.mel.cols()),
        mask_flags: Vec::new(),
        regenerate: Vec::new(),
        current_phoneme_span: (0, 0),
        current_frame_span: (0, 0),
        pairs: derive_pairs(window),
        target_mel: Matrix::vstack(&parts.iter().map(|p| &p.mel).collect::<Vec<_>>())?,
    };
    let mut frame = 0;
    for p in &parts {
        let ids = inventory.ids(&p.phonemes)?;
        if p.segment == Segment::Cur {
            ex.current_phoneme_span = (ex.phoneme_ids.len(), ex.phoneme_ids.len() + ids.len());
            ex.current_frame_span = (frame, frame + p.frames());
        }
        ex.segments.extend(std::iter::repeat_n(p.segment, ids.len()));
        ex.phoneme_ids.extend(ids);
        ex.durations.extend(&p.durations);
        ex.pitch.extend(&p.pitch);
        ex.energy.extend(&p.energy);
        frame += p.frames();
    }

    let (cs, ce) = ex.current_frame_span;
    let mut mask = vec![false; frame];
    match policy {
        MaskPolicy::CurrentSentence => mask[cs..ce].iter_mut().for_each(|m| *m = true),
        MaskPolicy::FrameSpans(spans) => {
            for &(s, e) in spans {
                if s > e || s < cs || e > ce {
                    return Err(Error::invalid(format!(
                        "mask span [{s},{e}) is outside the current sentence [{cs},{ce})"
                    )));
                }
                mask[s..e].iter_mut().for_each(|m| *m = true);
            }
        }
    }
    let mut starts = Vec::with_capacity(ex.durations.len());
    let mut pos = 0usize;
    for &d in &ex.durations {
        starts.push(pos);
        pos += d as usize;
    }
    let (ps, pe) = ex.current_phoneme_span;
    ex.regenerate = (0..ex.durations.len())
        .map(|k| match policy {
            MaskPolicy::CurrentSentence => (ps..pe).contains(&k),
            MaskPolicy::FrameSpans(_) => {
                let (s, d) = (starts[k], ex.durations[k] as usize);
                d > 0 && mask[s..s + d].iter().all(|&m| m)
            }
        })
        .collect();

    let mut visible = ex.target_mel.clone();
    for (r, &m) in mask.iter().enumerate() {
        if m {
            visible.row_mut(r).iter_mut().for_each(|v| *v = MASK_SENTINEL);
        }
    }
    ex.concat_mel = visible;
    ex.mask_flags = mask;
    Ok(ex)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn utt(id: &str, index: usize, frames: usize, phonemes: usize) -> Utterance {
        let mut durations = vec![(frames / phonemes) as u32; phonemes];
        *durations.last_mut().unwrap() += (frames % phonemes) as u32;
        Utterance {
            utterance_id: id.into(),
            paragraph_id: "p".into(),
            index_in_paragraph: index,
            text: format!("text {id}"),
            phonemes: vec!["a".to_string(); phonemes],
            durations,
            f0: vec![120.0; frames],
            energy: vec![1.0; frames],
            mel: Matrix::filled(frames, 4, index as f32),
        }
    }

    fn paragraph(frames: &[usize]) -> Vec<Utterance> {
        frames
            .iter()
            .enumerate()
            .map(|(i, &f)| utt(&format!("u{i}"), i, f, 3))
            .collect()
    }

    fn inv() -> PhonemeInventory {
        PhonemeInventory::new(["a".to_string()])
    }

    #[test]
    fn window_sizes() {
        let p = paragraph(&[10; 5]);
        let w = build_window(&p, 2, 2).unwrap();
        assert_eq!((w.preceding.len(), w.following.len()), (2, 2));
        assert_eq!(w.prev().unwrap().utterance_id, "u1");
        assert_eq!(w.next().unwrap().utterance_id, "u3");
        let w = build_window(&p, 0, 2).unwrap();
        assert_eq!((w.preceding.len(), w.following.len()), (0, 2));
        let single = paragraph(&[10]);
        let w = build_window(&single, 0, 3).unwrap();
        assert!(w.preceding.is_empty() && w.following.is_empty());
        assert!(matches!(build_window(&p, 5, 2), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn pair_derivation() {
        let p = paragraph(&[10; 5]);
        let w = build_window(&p, 2, 2).unwrap();
        let pairs = derive_pairs(&w);
        assert_eq!(pairs.len(), 4);
        assert_eq!(pairs[1].text_a, "text u1");
        assert_eq!(pairs[1].text_b, "text u2");
        let w = build_window(&p, 2, 1).unwrap();
        let pairs = derive_pairs(&w);
        assert_eq!(pairs.len(), 2);
        assert_eq!((pairs[0].text_a.as_str(), pairs[0].text_b.as_str()), ("text u1", "text u2"));
        assert_eq!((pairs[1].text_a.as_str(), pairs[1].text_b.as_str()), ("text u2", "text u3"));
        // slots at index 0 with L=2: [-, -, u0, u1, u2]
        let w = build_window(&p, 0, 2).unwrap();
        let got: Vec<(String, String)> = derive_pairs(&w)
            .into_iter()
            .map(|q| (q.text_a, q.text_b))
            .collect();
        let t = |s: &str| s.to_string();
        assert_eq!(
            got,
            vec![
                (t(""), t("")),
                (t(""), t("text u0")),
                (t("text u0"), t("text u1")),
                (t("text u1"), t("text u2")),
            ]
        );
    }

    #[test]
    fn pair_count_everywhere() {
        for n in 1..7 {
            let p = paragraph(&vec![10; n]);
            for i in 0..n {
                for l in 1..4 {
                    let w = build_window(&p, i, l).unwrap();
                    let pairs = derive_pairs(&w);
                    assert_eq!(pairs.len(), 2 * l);
                    assert!(pairs.iter().enumerate().all(|(k, q)| q.pair_index == k));
                }
            }
        }
    }

    #[test]
    fn concatenation_arithmetic() {
        let p = paragraph(&[30, 50, 40]);
        let w = build_window(&p, 1, 2).unwrap();
        let ex = assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &Default::default())
            .unwrap();
        assert_eq!(ex.frames(), 120);
        assert_eq!(ex.current_frame_span, (30, 80));
        assert_eq!(ex.current_phoneme_span, (3, 6));
        assert!(ex.mask_flags.iter().enumerate().all(|(i, &m)| m == (30..80).contains(&i)));
        assert!(ex.concat_mel.row(29).iter().all(|v| *v == 0.0));
        assert!(ex.concat_mel.row(30).iter().all(|v| v.is_nan()));
        assert_eq!(ex.target_mel.row(30), &[1.0; 4]);
        assert_eq!(
            ex.segments,
            [[Segment::Prev; 3], [Segment::Cur; 3], [Segment::Next; 3]].concat()
        );
        let ex = assemble_example(
            &w,
            &MaskPolicy::FrameSpans(vec![(35, 45)]),
            &inv(),
            &Default::default(),
        )
        .unwrap();
        assert_eq!(ex.mask_flags.iter().filter(|&&m| m).count(), 10);
        let err = assemble_example(
            &w,
            &MaskPolicy::FrameSpans(vec![(25, 45)]),
            &inv(),
            &Default::default(),
        );
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn masking_hides_current_mel() {
        let mut p = paragraph(&[30, 50, 40]);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let assemble = |p: &[Utterance]| {
            let w = build_window(p, 1, 2).unwrap();
            assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &Default::default())
                .unwrap()
        };
        let a = assemble(&p);
        for v in p[1].mel.as_mut_slice() {
            *v = rng.random_range(-10.0..10.0);
        }
        let b = assemble(&p);
        assert!(a.concat_mel.bit_eq(&b.concat_mel));
        assert_eq!(a.mask_flags, b.mask_flags);
        assert!(!a.target_mel.bit_eq(&b.target_mel));
    }

    #[test]
    fn absent_neighbours_add_no_frames() {
        let p = paragraph(&[30, 50]);
        let w = build_window(&p, 0, 2).unwrap();
        let ex = assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &Default::default())
            .unwrap();
        assert_eq!(ex.current_frame_span, (0, 30));
        assert_eq!(ex.frames(), 80);
        let opts = AssembleOptions {
            acoustic_context: 0,
            ..Default::default()
        };
        let ex = assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &opts).unwrap();
        assert_eq!(ex.frames(), 30);
        assert_eq!(ex.pairs.len(), 4);
    }

    #[test]
    fn frame_cap_drops_next_then_trims_prev() {
        let p = paragraph(&[30, 50, 40]);
        let w = build_window(&p, 1, 1).unwrap();
        let opts = AssembleOptions {
            acoustic_context: 1,
            max_frames: 90,
        };
        let ex = assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &opts).unwrap();
        assert_eq!(ex.frames(), 80);
        assert!(!ex.segments.contains(&Segment::Next));
        let opts = AssembleOptions {
            acoustic_context: 1,
            max_frames: 65,
        };
        let ex = assemble_example(&w, &MaskPolicy::CurrentSentence, &inv(), &opts).unwrap();
        assert_eq!(ex.frames(), 65);
        assert_eq!(ex.current_frame_span, (15, 65));
        let prev_dur: u32 = ex.durations[..ex.current_phoneme_span.0].iter().sum();
        assert_eq!(prev_dur, 15);
    }
}
