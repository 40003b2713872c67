use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::AudioConfig;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-scale filterbank, `[mel_bins x (n_fft/2 + 1)]`, unit peak.
pub fn mel_filterbank(cfg: &AudioConfig) -> Result<Matrix> {
    cfg.validate()?;
    let n_fft = cfg.n_fft()?;
    let n_freqs = n_fft / 2 + 1;
    let sr = cfg.sample_rate_hz as f64;
    let lo = hz_to_mel(cfg.fmin_hz);
    let hi = hz_to_mel(cfg.fmax_hz);
    let edges: Vec<f64> = (0..cfg.mel_bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.mel_bins + 1) as f64))
        .collect();
    let mut fb = Matrix::zeros(cfg.mel_bins, n_freqs);
    for m in 0..cfg.mel_bins {
        let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_freqs {
            let f = k as f64 * sr / n_fft as f64;
            let w = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            fb.set(m, k, w as f32);
        }
    }
    Ok(fb)
}

/// Periodic Hann window.
pub(crate) fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos())
        .collect()
}

/// First sample of the analysis window for frame `t`. Frame `t` is centred on
/// the middle of hop segment `[t*hop, (t+1)*hop)`, so a signal of `n` samples
/// yields `ceil(n / hop)` frames.
pub(crate) fn window_start(t: usize, hop: usize, win: usize) -> isize {
    (t * hop + hop / 2) as isize - (win / 2) as isize
}

/// Reusable STFT + filterbank state for one [`AudioConfig`].
pub struct MelExtractor {
    cfg: AudioConfig,
    hop: usize,
    win: usize,
    n_fft: usize,
    window: Vec<f64>,
    filterbank: Matrix,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(cfg: &AudioConfig) -> Result<Self> {
        cfg.validate()?;
        let win = cfg.win_samples()?;
        let n_fft = cfg.n_fft()?;
        Ok(Self {
            cfg: cfg.clone(),
            hop: cfg.hop_samples()?,
            win,
            n_fft,
            window: hann(win),
            filterbank: mel_filterbank(cfg)?,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        })
    }

    pub fn config(&self) -> &AudioConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &Matrix {
        &self.filterbank
    }

    /// Magnitude spectrogram `[frames x (n_fft/2+1)]` in f64.
    pub fn magnitudes(&self, wave: &[f32]) -> Vec<Vec<f64>> {
        let frames = wave.len().div_ceil(self.hop);
        let n_freqs = self.n_fft / 2 + 1;
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_fft];
        let mut out = Vec::with_capacity(frames);
        for t in 0..frames {
            let start = window_start(t, self.hop, self.win);
            for (i, slot) in buf.iter_mut().enumerate() {
                let v = if i < self.win {
                    let idx = start + i as isize;
                    if idx >= 0 && (idx as usize) < wave.len() {
                        wave[idx as usize] as f64 * self.window[i]
                    } else {
                        0.0
                    }
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            out.push(buf[..n_freqs].iter().map(|c| c.norm()).collect());
        }
        out
    }

    /// Log-mel spectrogram `[ceil(len/hop) x mel_bins]`.
    pub fn mel(&self, wave: &[f32]) -> Result<Matrix> {
        if wave.is_empty() {
            return Err(Error::invalid("empty waveform"));
        }
        let floor = self.cfg.log_floor;
        let mags = self.magnitudes(wave);
        let bins = self.cfg.mel_bins;
        let mut mel = Matrix::zeros(mags.len(), bins);
        for (t, mag) in mags.iter().enumerate() {
            for m in 0..bins {
                let weights = self.filterbank.row(m);
                let e: f64 = weights
                    .iter()
                    .zip(mag)
                    .map(|(&w, &a)| w as f64 * a)
                    .sum();
                let v = if e > 0.0 { e.ln().max(floor) } else { floor };
                mel.set(t, m, v as f32);
            }
        }
        Ok(mel)
    }
}

pub fn extract_mel(wave: &[f32], cfg: &AudioConfig) -> Result<Matrix> {
    MelExtractor::new(cfg)?.mel(wave)
}

/// Normalized-autocorrelation pitch tracker on the mel framing. Unvoiced
/// frames are exactly 0.
pub fn extract_f0(wave: &[f32], cfg: &AudioConfig) -> Result<Vec<f32>> {
    cfg.validate()?;
    let hop = cfg.hop_samples()?;
    let win = cfg.win_samples()?;
    if wave.len() < win {
        return Err(Error::invalid(format!(
            "waveform of {} samples is shorter than one {win}-sample analysis window",
            wave.len()
        )));
    }
    let sr = cfg.sample_rate_hz as f64;
    let min_lag = (sr / cfg.f0_max_hz).floor().max(2.0) as usize;
    let max_lag = ((sr / cfg.f0_min_hz).ceil() as usize).min(win - 2);
    let frames = wave.len().div_ceil(hop);
    let mut frame = vec![0f64; win];
    let mut f0 = Vec::with_capacity(frames);
    let mut corr = vec![0f64; max_lag + 2];
    for t in 0..frames {
        let start = window_start(t, hop, win);
        for (i, slot) in frame.iter_mut().enumerate() {
            let idx = start + i as isize;
            *slot = if idx >= 0 && (idx as usize) < wave.len() {
                wave[idx as usize] as f64
            } else {
                0.0
            };
        }
        f0.push(frame_pitch(&frame, min_lag, max_lag, sr, cfg, &mut corr) as f32);
    }
    Ok(f0)
}

fn frame_pitch(
    x: &[f64],
    min_lag: usize,
    max_lag: usize,
    sr: f64,
    cfg: &AudioConfig,
    corr: &mut [f64],
) -> f64 {
    let n = x.len();
    let energy: f64 = x.iter().map(|v| v * v).sum();
    if energy <= 1e-12 * n as f64 {
        return 0.0;
    }
    // prefix sums of squares for the per-lag normalizers
    let mut csum = vec![0f64; n + 1];
    for i in 0..n {
        csum[i + 1] = csum[i] + x[i] * x[i];
    }
    let lo = min_lag - 1;
    let hi = max_lag + 1;
    for lag in lo..=hi {
        let m = n - lag;
        let dot: f64 = x[..m].iter().zip(&x[lag..]).map(|(a, b)| a * b).sum();
        let e0 = csum[m];
        let e1 = csum[n] - csum[lag];
        let denom = (e0 * e1).sqrt();
        corr[lag] = if denom > 0.0 { dot / denom } else { 0.0 };
    }
    let mut peaks = Vec::new();
    for lag in min_lag..=max_lag {
        if corr[lag] > corr[lag - 1] && corr[lag] >= corr[lag + 1] {
            peaks.push(lag);
        }
    }
    let Some(best) = peaks
        .iter()
        .map(|&l| corr[l])
        .max_by(|a, b| a.total_cmp(b))
    else {
        return 0.0;
    };
    if best < cfg.voicing_threshold {
        return 0.0;
    }
    // the shortest period whose peak is nearly as strong avoids octave-down errors
    let lag = peaks
        .into_iter()
        .find(|&l| corr[l] >= 0.9 * best)
        .expect("best peak qualifies");
    let (a, b, c) = (corr[lag - 1], corr[lag], corr[lag + 1]);
    let curvature = a - 2.0 * b + c;
    let offset = if curvature.abs() > 1e-12 {
        (0.5 * (a - c) / curvature).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    let hz = sr / (lag as f64 + offset);
    if hz < cfg.f0_min_hz * 0.9 || hz > cfg.f0_max_hz * 1.1 {
        0.0
    } else {
        hz
    }
}

/// Per-frame L2 norm of the mel vector.
pub fn energy_from_mel(mel: &Matrix) -> Vec<f32> {
    mel.row_iter()
        .map(|row| row.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt() as f32)
        .collect()
}

fn spans(durations: &[u32], len: usize) -> Result<impl Iterator<Item = (usize, usize)> + '_> {
    let total: usize = durations.iter().map(|&d| d as usize).sum();
    if total != len {
        return Err(Error::invalid(format!(
            "durations sum to {total} but the contour has {len} frames"
        )));
    }
    Ok(durations.iter().scan(0usize, |pos, &d| {
        let start = *pos;
        *pos += d as usize;
        Some((start, *pos))
    }))
}

/// Mean of `contour` over each phoneme's frames; zero-duration phonemes get 0.
pub fn phoneme_average(contour: &[f32], durations: &[u32]) -> Result<Vec<f32>> {
    Ok(spans(durations, contour.len())?
        .map(|(s, e)| {
            if e == s {
                0.0
            } else {
                (contour[s..e].iter().map(|&v| v as f64).sum::<f64>() / (e - s) as f64) as f32
            }
        })
        .collect())
}

/// Like [`phoneme_average`] but averages voiced (non-zero) frames only.
pub fn phoneme_average_f0(f0: &[f32], durations: &[u32]) -> Result<Vec<f32>> {
    Ok(spans(durations, f0.len())?
        .map(|(s, e)| {
            let voiced: Vec<f64> = f0[s..e]
                .iter()
                .filter(|&&v| v > 0.0)
                .map(|&v| v as f64)
                .collect();
            if voiced.is_empty() {
                0.0
            } else {
                (voiced.iter().sum::<f64>() / voiced.len() as f64) as f32
            }
        })
        .collect())
}
