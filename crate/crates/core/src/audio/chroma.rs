//! Pitch-class profile and major/minor template matching.

use serde::{Deserialize, Serialize};

use super::{stft_magnitudes, AudioClip, AudioError, ANALYSIS_RATE};

const N_FFT: usize = 2048;
const HOP: usize = 1024;
const A4_HZ: f64 = 440.0;
const MIN_HZ: f64 = 50.0;
const MAX_HZ: f64 = 5000.0;
/// Spectral peaks below this fraction of the frame maximum are ignored.
const PEAK_FLOOR: f64 = 0.05;
const LOW_CONFIDENCE: f64 = 0.05;

/// Krumhansl-Kessler key profiles, tonic first.
pub const KK_MAJOR: [f64; 12] = [
    6.35, 2.23, 3.48, 2.33, 4.38, 4.09, 2.52, 5.19, 2.39, 3.66, 2.29, 2.88,
];
pub const KK_MINOR: [f64; 12] = [
    6.33, 2.68, 3.52, 5.38, 2.60, 3.53, 2.54, 4.75, 3.98, 2.69, 3.34, 3.17,
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeEstimate {
    pub mode: Mode,
    /// Best major similarity minus best minor similarity.
    pub mode_raw: f64,
    pub major_score: f64,
    pub minor_score: f64,
    /// Pitch class of the best-matching tonic (C = 0) for each mode.
    pub major_tonic: usize,
    pub minor_tonic: usize,
    pub low_confidence: bool,
    /// Time-averaged, L2-normalized chroma (C = 0).
    pub chroma: [f64; 12],
}

fn normalized(v: &[f64; 12]) -> [f64; 12] {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.map(|x| x / n)
}

/// Pitch class of `freq` with C = 0.
fn pitch_class(freq: f64) -> usize {
    // A is pitch class 9.
    let semis = (12.0 * (freq / A4_HZ).log2()).round() as i64 + 9;
    semis.rem_euclid(12) as usize
}

/// Chroma from interpolated spectral peaks, averaged over frames.
pub fn chromagram(clip: &AudioClip) -> Result<[f64; 12], AudioError> {
    let clip = clip.resampled(ANALYSIS_RATE)?;
    let frames = stft_magnitudes(&clip.samples, N_FFT, HOP);
    let bin_hz = ANALYSIS_RATE as f64 / N_FFT as f64;
    let lo = (MIN_HZ / bin_hz).floor().max(1.0) as usize;
    let hi = ((MAX_HZ / bin_hz).ceil() as usize).min(N_FFT / 2 - 1);
    let mut acc = [0.0; 12];
    for mag in &frames {
        let top = mag[lo..=hi].iter().fold(0.0f64, |a, &b| a.max(b));
        if top <= 0.0 {
            continue;
        }
        for k in lo..=hi {
            let m = mag[k];
            if m < PEAK_FLOOR * top || m <= mag[k - 1] || m < mag[k + 1] {
                continue;
            }
            // Parabolic interpolation on log magnitude.
            let (a, b, c) = (
                mag[k - 1].max(1e-300).ln(),
                m.ln(),
                mag[k + 1].max(1e-300).ln(),
            );
            let denom = a - 2.0 * b + c;
            let delta = if denom.abs() > 1e-12 {
                0.5 * (a - c) / denom
            } else {
                0.0
            };
            let freq = (k as f64 + delta.clamp(-0.5, 0.5)) * bin_hz;
            acc[pitch_class(freq)] += m;
        }
    }
    if acc.iter().all(|&v| v == 0.0) {
        return Err(AudioError::Silent);
    }
    Ok(normalized(&acc))
}

/// Best rotation score of `profile` against `chroma`, and its tonic.
fn best_rotation(chroma: &[f64; 12], profile: &[f64; 12]) -> (f64, usize) {
    let p = normalized(profile);
    (0..12)
        .map(|tonic| {
            let s: f64 = (0..12)
                .map(|pc| chroma[pc] * p[(pc + 12 - tonic) % 12])
                .sum();
            (s, tonic)
        })
        .fold((f64::NEG_INFINITY, 0), |best, cur| {
            if cur.0 > best.0 {
                cur
            } else {
                best
            }
        })
}

pub fn mode_from_chroma(chroma: [f64; 12]) -> ModeEstimate {
    let (major_score, major_tonic) = best_rotation(&chroma, &KK_MAJOR);
    let (minor_score, minor_tonic) = best_rotation(&chroma, &KK_MINOR);
    let mode_raw = major_score - minor_score;
    ModeEstimate {
        mode: if mode_raw >= 0.0 {
            Mode::Major
        } else {
            Mode::Minor
        },
        mode_raw,
        major_score,
        minor_score,
        major_tonic,
        minor_tonic,
        low_confidence: mode_raw.abs() < LOW_CONFIDENCE,
        chroma,
    }
}

pub fn detect_mode(clip: &AudioClip) -> Result<ModeEstimate, AudioError> {
    clip.require_duration(1.0)?;
    Ok(mode_from_chroma(chromagram(clip)?))
}
