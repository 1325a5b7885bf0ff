//! Frame-wise f0 by normalized autocorrelation, pitch range, and melodic
//! direction.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{AudioClip, AudioError};

const FRAME_S: f64 = 0.040;
const HOP_S: f64 = 0.020;
const MIN_F0: f64 = 50.0;
const MAX_F0: f64 = 1000.0;
const VOICING: f64 = 0.3;
/// A later peak within this fraction of the best one wins, which keeps
/// subharmonic lags from being picked.
const FIRST_PEAK: f64 = 0.9;
const INTERVAL_SEMITONES: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PitchTrack {
    pub hop_s: f64,
    /// f0 in Hz for voiced frames.
    pub f0_hz: Vec<Option<f64>>,
    /// Autocorrelation peak per frame.
    pub strength: Vec<f64>,
}

impl PitchTrack {
    pub fn voiced(&self) -> impl Iterator<Item = f64> + '_ {
        self.f0_hz.iter().flatten().copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PitchRange {
    pub semitones: f64,
    /// Fewer than two voiced frames.
    pub degenerate: bool,
}

/// Normalized autocorrelation `r[τ]` for τ in `0..=max_lag`.
fn normalized_acf(frame: &[f64], max_lag: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = frame.len();
    let size = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&x| Complex::new(x, 0.0)).collect();
    buf.resize(size, Complex::new(0.0, 0.0));
    planner.plan_fft_forward(size).process(&mut buf);
    for c in &mut buf {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(size).process(&mut buf);
    // Energy of x[0..n-τ] and x[τ..n] from prefix sums of squares.
    let mut prefix = vec![0.0; n + 1];
    for (i, x) in frame.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x * x;
    }
    (0..=max_lag.min(n - 1))
        .map(|tau| {
            let head = prefix[n - tau];
            let tail = prefix[n] - prefix[tau];
            let denom = (head * tail).sqrt();
            if denom > 0.0 {
                buf[tau].re / size as f64 / denom
            } else {
                0.0
            }
        })
        .collect()
}

/// f0 track at the clip's native rate: 40 ms frames, 20 ms hop.
pub fn pitch_track(clip: &AudioClip) -> PitchTrack {
    let fs = clip.sample_rate as f64;
    let frame = (FRAME_S * fs).round() as usize;
    let hop = ((HOP_S * fs).round() as usize).max(1);
    let min_lag = ((fs / MAX_F0).floor() as usize).max(1);
    let max_lag = ((fs / MIN_F0).ceil() as usize).min(frame.saturating_sub(2));
    let mut planner = FftPlanner::new();
    let mut f0_hz = Vec::new();
    let mut strength = Vec::new();
    let mut start = 0;
    while frame > 2 && start + frame <= clip.samples.len() && min_lag + 1 < max_lag {
        let x = &clip.samples[start..start + frame];
        let r = normalized_acf(x, max_lag, &mut planner);
        let peaks: Vec<usize> = (min_lag.max(1)..r.len() - 1)
            .filter(|&t| r[t] > r[t - 1] && r[t] >= r[t + 1])
            .collect();
        let best = peaks
            .iter()
            .map(|&t| r[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let chosen = peaks.iter().copied().find(|&t| r[t] >= FIRST_PEAK * best);
        match chosen {
            Some(t) if r[t] >= VOICING => {
                let (a, b, c) = (r[t - 1], r[t], r[t + 1]);
                let denom = a - 2.0 * b + c;
                let delta = if denom.abs() > 1e-12 {
                    (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
                } else {
                    0.0
                };
                f0_hz.push(Some(fs / (t as f64 + delta)));
                strength.push(b);
            }
            Some(t) => {
                f0_hz.push(None);
                strength.push(r[t]);
            }
            None => {
                f0_hz.push(None);
                strength.push(0.0);
            }
        }
        start += hop;
    }
    PitchTrack {
        hop_s: hop as f64 / fs,
        f0_hz,
        strength,
    }
}

fn semitones(f: f64) -> f64 {
    12.0 * (f / 440.0).log2()
}

pub fn range_of(track: &PitchTrack) -> PitchRange {
    let voiced: Vec<f64> = track.voiced().collect();
    if voiced.len() < 2 {
        return PitchRange {
            semitones: 0.0,
            degenerate: true,
        };
    }
    let lo = voiced.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = voiced.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    PitchRange {
        semitones: 12.0 * (hi / lo).log2(),
        degenerate: false,
    }
}

/// Semitone span between the highest and lowest voiced frames.
pub fn pitch_range(clip: &AudioClip) -> Result<PitchRange, AudioError> {
    clip.require_duration(1.0)?;
    Ok(range_of(&pitch_track(clip)))
}

/// Voiced pitches (semitones) that agree with a neighbouring voiced frame
/// to within the interval threshold. Frames straddling a note change
/// give isolated in-between values and are dropped.
fn stable_pitches(track: &PitchTrack) -> Vec<f64> {
    let p: Vec<f64> = track.voiced().map(semitones).collect();
    let close = |a: f64, b: f64| (a - b).abs() <= INTERVAL_SEMITONES;
    (0..p.len())
        .filter(|&i| (i > 0 && close(p[i], p[i - 1])) || (i + 1 < p.len() && close(p[i], p[i + 1])))
        .map(|i| p[i])
        .collect()
}

/// Counts ascending and descending steps. A step is registered once the
/// pitch has moved more than half a semitone from the last registered
/// pitch, so slow glides count as well as note changes.
pub fn interval_counts(track: &PitchTrack) -> (usize, usize) {
    let mut anchor: Option<f64> = None;
    let (mut up, mut down) = (0, 0);
    for p in stable_pitches(track) {
        let Some(a) = anchor else {
            anchor = Some(p);
            continue;
        };
        if p - a > INTERVAL_SEMITONES {
            up += 1;
            anchor = Some(p);
        } else if a - p > INTERVAL_SEMITONES {
            down += 1;
            anchor = Some(p);
        }
    }
    (up, down)
}

/// `1 - ascending / (ascending + descending)`, or 0.5 without intervals.
pub fn melodic_direction(track: &PitchTrack) -> f64 {
    match interval_counts(track) {
        (0, 0) => 0.5,
        (up, down) => 1.0 - up as f64 / (up + down) as f64,
    }
}
