//! Griffin-Lim phase reconstruction from log-mel frames, using the same
//! framing as feature extraction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::corpus::{mel_filterbank, AudioConfig};
use crate::corpus::features::{hann, window_start};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Linear magnitudes `[frames x n_freqs]` from the filterbank pseudo-inverse.
fn linear_magnitudes(mel: &Matrix, cfg: &AudioConfig) -> Result<Vec<Vec<f64>>> {
    let fb = mel_filterbank(cfg)?;
    let (m, f) = fb.shape();
    let fbm = DMatrix::from_fn(m, f, |i, j| fb.get(i, j) as f64);
    let pinv = fbm
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::Numerical(format!("filterbank pseudo-inverse failed: {e}")))?;
    Ok(mel
        .row_iter()
        .map(|row| {
            let lin = nalgebra::DVector::from_iterator(m, row.iter().map(|&v| (v as f64).exp()));
            (&pinv * lin).iter().map(|&v| v.max(0.0)).collect()
        })
        .collect())
}

pub fn mel_to_wave(mel: &Matrix, cfg: &AudioConfig, iters: usize, seed: u64) -> Result<Vec<f32>> {
    if !mel.all_finite() {
        return Err(Error::InvalidInput("mel contains non-finite values".into()));
    }
    if mel.cols() != cfg.mel_bins {
        return Err(Error::InvalidInput(format!(
            "mel has {} bins, audio config expects {}",
            mel.cols(),
            cfg.mel_bins
        )));
    }
    let frames = mel.rows();
    if frames == 0 {
        return Ok(Vec::new());
    }
    let hop = cfg.hop_samples()?;
    let win = cfg.win_samples()?;
    let n_fft = cfg.n_fft()?;
    let n_freqs = n_fft / 2 + 1;
    let window = hann(win);
    let len = frames * hop;
    let mags = linear_magnitudes(mel, cfg)?;

    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n_fft);
    let inv = planner.plan_fft_inverse(n_fft);

    // squared-window normalizer for overlap-add
    let mut norm = vec![0f64; len];
    for t in 0..frames {
        let s = window_start(t, hop, win);
        for (i, w) in window.iter().enumerate() {
            let idx = s + i as isize;
            if idx >= 0 && (idx as usize) < len {
                norm[idx as usize] += w * w;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phase: Vec<Vec<Complex64>> = (0..frames)
        .map(|_| {
            (0..n_freqs)
                .map(|_| Complex64::from_polar(1.0, rng.random_range(-PI..PI)))
                .collect()
        })
        .collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
    let mut signal = vec![0f64; len];

    let synthesize = |phase: &[Vec<Complex64>], buf: &mut Vec<Complex64>, signal: &mut Vec<f64>| {
        signal.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..frames {
            for k in 0..n_freqs {
                buf[k] = phase[t][k] * mags[t][k];
            }
            for k in n_freqs..n_fft {
                buf[k] = buf[n_fft - k].conj();
            }
            inv.process(buf);
            let s = window_start(t, hop, win);
            for (i, w) in window.iter().enumerate() {
                let idx = s + i as isize;
                if idx >= 0 && (idx as usize) < len {
                    signal[idx as usize] += buf[i].re / n_fft as f64 * w;
                }
            }
        }
        for (v, n) in signal.iter_mut().zip(&norm) {
            if *n > 1e-8 {
                *v /= n;
            }
        }
    };

    for _ in 0..iters {
        synthesize(&phase, &mut buf, &mut signal);
        for t in 0..frames {
            let s = window_start(t, hop, win);
            for (i, slot) in buf.iter_mut().enumerate() {
                let idx = s + i as isize;
                let v = if i < win && idx >= 0 && (idx as usize) < len {
                    signal[idx as usize] * window[i]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            fwd.process(&mut buf);
            for k in 0..n_freqs {
                let c = buf[k];
                let n = c.norm();
                phase[t][k] = if n > 1e-12 { c / n } else { Complex64::new(1.0, 0.0) };
            }
        }
    }
    synthesize(&phase, &mut buf, &mut signal);
    Ok(signal.iter().map(|&v| v as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{extract_f0, extract_mel};

    fn tone(freq: f64, secs: f64, sr: u32) -> Vec<f32> {
        (0..(secs * sr as f64) as usize)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    fn median_voiced(f0: &[f32]) -> f32 {
        let mut v: Vec<f32> = f0.iter().copied().filter(|&x| x > 0.0).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    }

    #[test]
    fn tone_round_trip_keeps_pitch() {
        let cfg = AudioConfig::default();
        let mel = extract_mel(&tone(220.0, 0.5, cfg.sample_rate_hz), &cfg).unwrap();
        let wave = mel_to_wave(&mel, &cfg, 32, 0).unwrap();
        assert_eq!(wave.len(), mel.rows() * cfg.hop_samples().unwrap());
        let f0 = extract_f0(&wave, &cfg).unwrap();
        let voiced = f0.iter().filter(|&&v| v > 0.0).count();
        assert!(voiced > f0.len() / 2, "only {voiced}/{} frames voiced", f0.len());
        let med = median_voiced(&f0);
        assert!((med - 220.0).abs() < 5.0, "median F0 {med}");
    }

    #[test]
    fn floor_mel_is_silent() {
        let cfg = AudioConfig::default();
        let mel = Matrix::filled(40, cfg.mel_bins, cfg.log_floor as f32);
        let wave = mel_to_wave(&mel, &cfg, 8, 0).unwrap();
        let rms = (wave.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / wave.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = AudioConfig::default();
        let mel = extract_mel(&tone(150.0, 0.2, cfg.sample_rate_hz), &cfg).unwrap();
        let a = mel_to_wave(&mel, &cfg, 4, 9).unwrap();
        let b = mel_to_wave(&mel, &cfg, 4, 9).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        let mut bad = mel.clone();
        bad.set(0, 0, f32::NAN);
        assert!(matches!(mel_to_wave(&bad, &cfg, 4, 0), Err(Error::InvalidInput(_))));
    }
}
