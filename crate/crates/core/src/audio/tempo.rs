//! Onset-strength envelope and dynamic-programming beat tracking.

use serde::{Deserialize, Serialize};

use super::{stft_magnitudes, AudioClip, AudioError, ANALYSIS_RATE};

const N_FFT: usize = 2048;
/// 10 ms at the analysis rate.
const HOP: usize = 320;
const N_MELS: usize = 40;
const MEL_FMAX: f64 = 8000.0;
const TOP_DB: f64 = 80.0;
const PRIOR_BPM: f64 = 120.0;
const PRIOR_OCTAVES: f64 = 1.0;
const TIGHTNESS: f64 = 100.0;
const MIN_BPM: f64 = 30.0;
const MAX_BPM: f64 = 300.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TempoEstimate {
    pub bpm: f64,
    /// Set when the clip has no usable onsets and `bpm` is the prior.
    pub low_confidence: bool,
    pub beat_times_s: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular mel filters over the STFT bins.
fn mel_filterbank(n_bins: usize, rate: f64) -> Vec<Vec<(usize, f64)>> {
    let lo = hz_to_mel(0.0);
    let hi = hz_to_mel(MEL_FMAX.min(rate / 2.0));
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    let bin_hz = rate / (2.0 * (n_bins - 1) as f64);
    (0..N_MELS)
        .map(|m| {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..n_bins)
                .filter_map(|k| {
                    let f = k as f64 * bin_hz;
                    let w = if f > l && f <= c {
                        (f - l) / (c - l)
                    } else if f > c && f < r {
                        (r - f) / (r - c)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((k, w))
                })
                .collect()
        })
        .collect()
}

/// Half-wave rectified mel log-power flux, one value per 10 ms hop.
/// Log power is referenced to the clip maximum, so gain does not matter.
pub fn onset_envelope(clip: &AudioClip) -> Result<Vec<f64>, AudioError> {
    let clip = clip.resampled(ANALYSIS_RATE)?;
    let frames = stft_magnitudes(&clip.samples, N_FFT, HOP);
    let bank = mel_filterbank(N_FFT / 2 + 1, ANALYSIS_RATE as f64);
    let mel: Vec<Vec<f64>> = frames
        .iter()
        .map(|mag| {
            bank.iter()
                .map(|filt| filt.iter().map(|&(k, w)| w * mag[k] * mag[k]).sum())
                .collect()
        })
        .collect();
    let peak = mel.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    if peak <= 0.0 {
        return Ok(vec![0.0; mel.len()]);
    }
    let floor = peak * 10f64.powf(-TOP_DB / 10.0);
    let db: Vec<Vec<f64>> = mel
        .iter()
        .map(|row| {
            row.iter()
                .map(|&p| 10.0 * (p.max(floor) / peak).log10())
                .collect()
        })
        .collect();
    let mut env = vec![0.0; db.len()];
    for t in 1..db.len() {
        env[t] = db[t]
            .iter()
            .zip(&db[t - 1])
            .map(|(a, b)| (a - b).max(0.0))
            .sum::<f64>()
            / N_MELS as f64;
    }
    Ok(env)
}

fn frames_per_second() -> f64 {
    ANALYSIS_RATE as f64 / HOP as f64
}

/// Global tempo from the prior-weighted envelope autocorrelation.
fn global_tempo(env: &[f64]) -> f64 {
    let fps = frames_per_second();
    let min_lag = (60.0 * fps / MAX_BPM).floor().max(1.0) as usize;
    let max_lag = ((60.0 * fps / MIN_BPM).ceil() as usize).min(env.len().saturating_sub(1));
    let mut best = (f64::NEG_INFINITY, PRIOR_BPM);
    for lag in min_lag..=max_lag {
        let ac: f64 = env[..env.len() - lag]
            .iter()
            .zip(&env[lag..])
            .map(|(a, b)| a * b)
            .sum();
        let bpm = 60.0 * fps / lag as f64;
        let z = (bpm / PRIOR_BPM).log2() / PRIOR_OCTAVES;
        let score = ac * (-0.5 * z * z).exp();
        if score > best.0 {
            best = (score, bpm);
        }
    }
    best.1
}

/// Beat frames by dynamic programming over the onset envelope.
fn track_beats(env: &[f64], bpm: f64) -> Vec<usize> {
    let period = 60.0 * frames_per_second() / bpm;
    let sd = env_std(env);
    let norm: Vec<f64> = env.iter().map(|v| v / sd).collect();
    // Smooth with a Gaussian a little narrower than the beat period.
    let half = period.round() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|t| (-0.5 * (t as f64 * 32.0 / period).powi(2)).exp())
        .collect();
    let n = norm.len();
    let local: Vec<f64> = (0..n as isize)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .filter_map(|(j, k)| {
                    let idx = i + j as isize - half;
                    (0..n as isize)
                        .contains(&idx)
                        .then(|| k * norm[idx as usize])
                })
                .sum()
        })
        .collect();

    let mut cum = vec![0.0; n];
    let mut back: Vec<Option<usize>> = vec![None; n];
    let lo = ((period / 2.0).round() as usize).max(1);
    let hi = (2.0 * period).round() as usize;
    for i in 0..n {
        cum[i] = local[i];
        if i < lo {
            continue;
        }
        let mut best: Option<(f64, usize)> = None;
        for prev in i.saturating_sub(hi)..=i - lo {
            let gap = (i - prev) as f64 / period;
            let score = cum[prev] - TIGHTNESS * gap.ln().powi(2);
            if best.is_none_or(|(s, _)| score > s) {
                best = Some((score, prev));
            }
        }
        if let Some((s, p)) = best {
            cum[i] += s;
            back[i] = Some(p);
        }
    }
    // Last beat: best cumulative score in the final period.
    let tail = n.saturating_sub(period.ceil() as usize);
    let Some(mut i) = (tail..n).max_by(|&a, &b| cum[a].total_cmp(&cum[b])) else {
        return Vec::new();
    };
    let mut beats = vec![i];
    while let Some(p) = back[i] {
        beats.push(p);
        i = p;
    }
    beats.reverse();
    beats
}

fn env_std(env: &[f64]) -> f64 {
    let m = env.iter().sum::<f64>() / env.len() as f64;
    let v = env.iter().map(|x| (x - m).powi(2)).sum::<f64>() / env.len() as f64;
    if v > 0.0 {
        v.sqrt()
    } else {
        1.0
    }
}

fn fold(mut bpm: f64) -> f64 {
    while bpm < MIN_BPM {
        bpm *= 2.0;
    }
    while bpm > MAX_BPM {
        bpm /= 2.0;
    }
    bpm
}

/// Tempo as 60 / median inter-beat interval, folded into [30, 300] BPM.
pub fn estimate_tempo(clip: &AudioClip) -> Result<TempoEstimate, AudioError> {
    clip.require_duration(2.0)?;
    let env = onset_envelope(clip)?;
    let fallback = || TempoEstimate {
        bpm: PRIOR_BPM,
        low_confidence: true,
        beat_times_s: Vec::new(),
    };
    if env.iter().all(|&v| v == 0.0) {
        return Ok(fallback());
    }
    let beats = track_beats(&env, global_tempo(&env));
    if beats.len() < 2 {
        return Ok(fallback());
    }
    let fps = frames_per_second();
    let mut ibi: Vec<f64> = beats
        .windows(2)
        .map(|w| (w[1] - w[0]) as f64 / fps)
        .collect();
    ibi.sort_by(f64::total_cmp);
    let mid = ibi.len() / 2;
    let median = if ibi.len() % 2 == 1 {
        ibi[mid]
    } else {
        0.5 * (ibi[mid - 1] + ibi[mid])
    };
    Ok(TempoEstimate {
        bpm: fold(60.0 / median),
        low_confidence: false,
        beat_times_s: beats.iter().map(|&b| b as f64 / fps).collect(),
    })
}
