use serde::{Deserialize, Serialize};

use super::filter::{bandpass, FilterError};
use super::timeline::{EventKind, EventTimeline, TimelineError};

pub const EEG_RATE: f64 = 250.0;

#[derive(Debug, thiserror::Error)]
pub enum EegError {
    #[error("channel lengths differ (timestamps {timestamps}, fp1 {fp1}, fp2 {fp2})")]
    ChannelLength {
        timestamps: usize,
        fp1: usize,
        fp2: usize,
    },
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// Two-channel frontal EEG (Fp1, Fp2) in microvolts, referenced to A1.
#[derive(Debug, Clone, PartialEq)]
pub struct EegRecording {
    pub timestamps_ms: Vec<f64>,
    pub fp1: Vec<f64>,
    pub fp2: Vec<f64>,
    pub sample_rate: f64,
    /// Samples inside artifact spans.
    pub masked: Vec<bool>,
}

impl EegRecording {
    pub fn new(
        timestamps_ms: Vec<f64>,
        fp1: Vec<f64>,
        fp2: Vec<f64>,
        sample_rate: f64,
    ) -> Result<Self, EegError> {
        if fp1.len() != fp2.len() || timestamps_ms.len() != fp1.len() {
            return Err(EegError::ChannelLength {
                timestamps: timestamps_ms.len(),
                fp1: fp1.len(),
                fp2: fp2.len(),
            });
        }
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(EegError::SampleRate(sample_rate));
        }
        let masked = vec![false; fp1.len()];
        Ok(Self {
            timestamps_ms,
            fp1,
            fp2,
            sample_rate,
            masked,
        })
    }

    /// Uniformly sampled recording starting at `t0_ms`.
    pub fn uniform(
        t0_ms: f64,
        fp1: Vec<f64>,
        fp2: Vec<f64>,
        sample_rate: f64,
    ) -> Result<Self, EegError> {
        let ts = uniform_timestamps(t0_ms, fp1.len(), sample_rate);
        Self::new(ts, fp1, fp2, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.fp1.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fp1.is_empty()
    }
}

pub(crate) fn uniform_timestamps(t0_ms: f64, n: usize, fs: f64) -> Vec<f64> {
    (0..n).map(|i| t0_ms + i as f64 * 1000.0 / fs).collect()
}

/// Index of the first sample at or after `t_ms`.
pub(crate) fn sample_at(timestamps_ms: &[f64], t_ms: f64) -> usize {
    timestamps_ms.partition_point(|&t| t < t_ms)
}

/// Marks samples inside each artifact interval `[start, end)`.
pub(crate) fn artifact_mask(
    timestamps_ms: &[f64],
    timeline: &EventTimeline,
) -> Result<Vec<bool>, TimelineError> {
    let mut mask = vec![false; timestamps_ms.len()];
    for (s, e) in timeline.artifact_intervals()? {
        let a = sample_at(timestamps_ms, s);
        let b = sample_at(timestamps_ms, e);
        mask[a..b].iter_mut().for_each(|m| *m = true);
    }
    Ok(mask)
}

/// Zero-phase band-pass of both channels. The mask is carried over.
pub fn filter_eeg(rec: &EegRecording, lo: f64, hi: f64) -> Result<EegRecording, EegError> {
    Ok(EegRecording {
        fp1: bandpass(&rec.fp1, lo, hi, rec.sample_rate)?,
        fp2: bandpass(&rec.fp2, lo, hi, rec.sample_rate)?,
        ..rec.clone()
    })
}

/// Masks every sample covered by an artifact interval; values are untouched.
pub fn exclude_artifacts(
    rec: &EegRecording,
    timeline: &EventTimeline,
) -> Result<EegRecording, EegError> {
    let mask = artifact_mask(&rec.timestamps_ms, timeline)?;
    let mut out = rec.clone();
    for (m, new) in out.masked.iter_mut().zip(mask) {
        *m |= new;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum EegBaseline {
    /// Subtract each channel's own epoch mean.
    EpochMean,
    /// Subtract the channel mean over `[onset - window_s, onset)`.
    PreStimulus { window_s: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpochConfig {
    pub start_s: f64,
    pub end_s: f64,
    pub baseline: EegBaseline,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            start_s: 25.0,
            end_s: 55.0,
            baseline: EegBaseline::EpochMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegEpoch {
    pub trial_id: u32,
    pub onset_ms: f64,
    pub fp1: Vec<f64>,
    pub fp2: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    Incomplete,
    Artifact,
    NoBaseline,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochSet {
    pub epochs: Vec<EegEpoch>,
    pub skipped: Vec<(u32, SkipReason)>,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Cuts one baseline-corrected epoch per `music_on` event.
pub fn epoch_eeg(rec: &EegRecording, timeline: &EventTimeline, cfg: &EpochConfig) -> EpochSet {
    let fs = rec.sample_rate;
    let offset = (cfg.start_s * fs).round() as usize;
    let len = ((cfg.end_s - cfg.start_s) * fs).round() as usize;
    let mut set = EpochSet::default();
    for (trial, onset_ms) in timeline.trial_times(EventKind::MusicOn) {
        let onset = sample_at(&rec.timestamps_ms, onset_ms);
        let start = onset + offset;
        let end = start + len;
        if onset >= rec.len() || end > rec.len() {
            set.skipped.push((trial, SkipReason::Incomplete));
            continue;
        }
        if rec.masked[start..end].iter().any(|&m| m) {
            set.skipped.push((trial, SkipReason::Artifact));
            continue;
        }
        let baseline = |ch: &[f64]| -> Option<f64> {
            match cfg.baseline {
                EegBaseline::EpochMean => Some(mean(&ch[start..end])),
                EegBaseline::PreStimulus { window_s } => {
                    let w = (window_s * fs).round() as usize;
                    (w > 0 && onset >= w).then(|| mean(&ch[onset - w..onset]))
                }
            }
        };
        let (Some(b1), Some(b2)) = (baseline(&rec.fp1), baseline(&rec.fp2)) else {
            set.skipped.push((trial, SkipReason::NoBaseline));
            continue;
        };
        set.epochs.push(EegEpoch {
            trial_id: trial,
            onset_ms,
            fp1: rec.fp1[start..end].iter().map(|v| v - b1).collect(),
            fp2: rec.fp2[start..end].iter().map(|v| v - b2).collect(),
        });
    }
    set
}
