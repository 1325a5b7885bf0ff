//! Relative EEG band power from Welch spectra.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::audio::hann;

pub const BAND_NAMES: [&str; 5] = ["delta", "theta", "alpha", "beta", "gamma"];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BandPowerError {
    #[error("epoch has {got} samples, need at least {need} (one {seconds} s sub-epoch)")]
    TooShort {
        got: usize,
        need: usize,
        seconds: f64,
    },
    #[error("channels differ in length")]
    ChannelLength,
    #[error("epoch has no channels")]
    NoChannels,
}

/// Band edges in Hz; each band is the half-open range [lo, hi).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEdges {
    pub delta: (f64, f64),
    pub theta: (f64, f64),
    pub alpha: (f64, f64),
    pub beta: (f64, f64),
    pub gamma: (f64, f64),
    pub full: (f64, f64),
}

impl Default for BandEdges {
    fn default() -> Self {
        Self {
            delta: (0.5, 4.0),
            theta: (4.0, 8.0),
            alpha: (8.0, 13.0),
            beta: (13.0, 30.0),
            gamma: (30.0, 40.0),
            full: (0.5, 40.0),
        }
    }
}

impl BandEdges {
    pub fn bands(&self) -> [(f64, f64); 5] {
        [self.delta, self.theta, self.alpha, self.beta, self.gamma]
    }
}

/// Welch and sub-epoch parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BandPowerConfig {
    pub sub_epoch_s: f64,
    pub segment_s: f64,
    pub overlap: f64,
    pub bands: BandEdges,
}

impl Default for BandPowerConfig {
    fn default() -> Self {
        Self {
            sub_epoch_s: 3.0,
            segment_s: 1.0,
            overlap: 0.5,
            bands: BandEdges::default(),
        }
    }
}

/// Fractions of full-band power in delta, theta, alpha, beta, gamma.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct BandPowerVector {
    pub delta: f64,
    pub theta: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl BandPowerVector {
    pub fn to_array(self) -> [f64; 5] {
        [self.delta, self.theta, self.alpha, self.beta, self.gamma]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            delta: a[0],
            theta: a[1],
            alpha: a[2],
            beta: a[3],
            gamma: a[4],
        }
    }
}

/// One-sided Welch PSD (density scaling, Hann window, per-segment mean
/// removal). Returns (frequencies, psd).
pub fn welch_psd(x: &[f64], fs: f64, segment_len: usize, step: usize) -> (Vec<f64>, Vec<f64>) {
    let n = segment_len.min(x.len()).max(1);
    let step = step.max(1);
    let window = hann(n);
    let win_power: f64 = window.iter().map(|w| w * w).sum();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let bins = n / 2 + 1;
    let mut acc = vec![0.0; bins];
    let mut segments = 0usize;
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut start = 0;
    while start + n <= x.len() {
        let seg = &x[start..start + n];
        let m = seg.iter().sum::<f64>() / n as f64;
        for (b, (s, w)) in buf.iter_mut().zip(seg.iter().zip(&window)) {
            *b = Complex::new((s - m) * w, 0.0);
        }
        fft.process(&mut buf);
        for (a, c) in acc.iter_mut().zip(&buf[..bins]) {
            *a += c.norm_sqr();
        }
        segments += 1;
        start += step;
    }
    let scale = 1.0 / (fs * win_power * segments.max(1) as f64);
    let psd: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (n % 2 == 0 && k == n / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let freqs = (0..bins).map(|k| k as f64 * fs / n as f64).collect();
    (freqs, psd)
}

fn band_integral(freqs: &[f64], psd: &[f64], (lo, hi): (f64, f64)) -> f64 {
    let df = if freqs.len() > 1 {
        freqs[1] - freqs[0]
    } else {
        1.0
    };
    freqs
        .iter()
        .zip(psd)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, p)| p * df)
        .sum()
}

/// Relative band power of one channel segment. A segment without full-band
/// power yields all zeros.
fn relative_powers(x: &[f64], fs: f64, cfg: &BandPowerConfig) -> [f64; 5] {
    let seg = (cfg.segment_s * fs).round() as usize;
    let step = ((1.0 - cfg.overlap) * seg as f64).round() as usize;
    let (freqs, psd) = welch_psd(x, fs, seg, step);
    let total = band_integral(&freqs, &psd, cfg.bands.full);
    if total <= 0.0 || !total.is_finite() {
        return [0.0; 5];
    }
    cfg.bands
        .bands()
        .map(|b| band_integral(&freqs, &psd, b) / total)
}

/// Per-channel relative band power, averaged over consecutive sub-epochs.
pub fn relative_band_power_per_channel<C: AsRef<[f64]>>(
    channels: &[C],
    fs: f64,
    cfg: &BandPowerConfig,
) -> Result<Vec<BandPowerVector>, BandPowerError> {
    if channels.is_empty() {
        return Err(BandPowerError::NoChannels);
    }
    let len = channels[0].as_ref().len();
    if channels.iter().any(|c| c.as_ref().len() != len) {
        return Err(BandPowerError::ChannelLength);
    }
    let sub = (cfg.sub_epoch_s * fs).round() as usize;
    if len < sub || sub == 0 {
        return Err(BandPowerError::TooShort {
            got: len,
            need: sub,
            seconds: cfg.sub_epoch_s,
        });
    }
    let n_sub = len / sub;
    Ok(channels
        .iter()
        .map(|c| {
            let c = c.as_ref();
            let mut acc = [0.0; 5];
            for s in 0..n_sub {
                let rel = relative_powers(&c[s * sub..(s + 1) * sub], fs, cfg);
                for (a, r) in acc.iter_mut().zip(rel) {
                    *a += r;
                }
            }
            BandPowerVector::from_array(acc.map(|a| a / n_sub as f64))
        })
        .collect())
}

/// Channel-averaged relative band power of an analysis epoch.
pub fn relative_band_power<C: AsRef<[f64]>>(
    channels: &[C],
    fs: f64,
    cfg: &BandPowerConfig,
) -> Result<BandPowerVector, BandPowerError> {
    let per = relative_band_power_per_channel(channels, fs, cfg)?;
    let mut acc = [0.0; 5];
    for v in &per {
        for (a, x) in acc.iter_mut().zip(v.to_array()) {
            *a += x;
        }
    }
    Ok(BandPowerVector::from_array(
        acc.map(|a| a / per.len() as f64),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    use std::f64::consts::PI;

    const FS: f64 = 250.0;

    fn sine(freq: f64, seconds: f64) -> Vec<f64> {
        (0..(seconds * FS) as usize)
            .map(|i| (2.0 * PI * freq * i as f64 / FS).sin())
            .collect()
    }

    #[test]
    fn welch_recovers_sine_power() {
        // A unit sine has variance 1/2; the PSD integral should match it.
        let x = sine(10.0, 30.0);
        let (f, p) = welch_psd(&x, FS, 250, 125);
        let total = band_integral(&f, &p, (0.0, 125.1));
        assert!((total - 0.5).abs() < 0.01, "{total}");
    }

    #[test]
    fn alpha_sine_is_alpha() {
        let x = sine(10.0, 30.0);
        let v = relative_band_power(&[x.clone(), x], FS, &BandPowerConfig::default()).unwrap();
        assert!(v.alpha > 0.9, "{v:?}");
        assert!(v.delta < 0.05 && v.theta < 0.05 && v.beta < 0.05 && v.gamma < 0.05);
    }

    #[test]
    fn beta_sine_is_beta() {
        let x = sine(20.0, 30.0);
        let v = relative_band_power(&[x.clone(), x], FS, &BandPowerConfig::default()).unwrap();
        let a = v.to_array();
        let best = (0..5).max_by(|&i, &j| a[i].total_cmp(&a[j])).unwrap();
        assert_eq!(BAND_NAMES[best], "beta");
    }

    #[test]
    fn fractions_bounded_and_scale_invariant() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let x: Vec<f64> = (0..7500).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = x.iter().map(|v| v * 0.5 + 0.1).collect();
        let cfg = BandPowerConfig::default();
        let a = relative_band_power(&[x.clone(), y.clone()], FS, &cfg).unwrap();
        let scaled: Vec<Vec<f64>> = [x, y]
            .iter()
            .map(|c| c.iter().map(|v| v * 37.5).collect())
            .collect();
        let b = relative_band_power(&scaled, FS, &cfg).unwrap();
        let sum: f64 = a.to_array().iter().sum();
        assert!(sum <= 1.0 + 1e-6);
        for (p, q) in a.to_array().iter().zip(b.to_array()) {
            assert!((0.0..=1.0).contains(p));
            assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn short_epoch_rejected() {
        let x = vec![0.0; 700];
        assert!(matches!(
            relative_band_power(&[x.clone(), x], FS, &BandPowerConfig::default()),
            Err(BandPowerError::TooShort { .. })
        ));
    }

    #[test]
    fn flat_epoch_is_zero() {
        let x = vec![3.0; 7500];
        let v = relative_band_power(&[x.clone(), x], FS, &BandPowerConfig::default()).unwrap();
        assert_eq!(v.to_array(), [0.0; 5]);
    }
}
