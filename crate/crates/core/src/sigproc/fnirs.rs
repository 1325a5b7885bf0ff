//! fNIRS chain: raw intensity, optical density, PPG, and hemoglobin
//! concentration changes via the modified Beer-Lambert law.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eeg::{sample_at, uniform_timestamps};
use super::filter::{bandpass, FilterError};
use super::timeline::{EventKind, EventTimeline};

pub const FNIRS_RATE: f64 = 25.0;
pub const FNIRS_CHANNELS: usize = 8;

#[derive(Debug, thiserror::Error)]
pub enum FnirsError {
    #[error(
        "non-positive intensity {value} at channel {channel} ({wavelength_nm} nm), sample {index}"
    )]
    NonPositive {
        channel: usize,
        wavelength_nm: u32,
        index: usize,
        value: f64,
    },
    #[error("stream lengths differ: {0}")]
    Length(String),
    #[error("sample rate must be positive and finite, got {0}")]
    SampleRate(f64),
    #[error("reference window [{0}, {1}) ms contains no samples")]
    EmptyWindow(f64, f64),
    #[error("singular extinction matrix (det = {0:e})")]
    Singular(f64),
    #[error("optical constant {0} must be positive and finite")]
    Constant(&'static str),
    #[error("optical constants: {0}")]
    ConstantsFile(String),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Index 0 holds 735 nm, index 1 holds 850 nm.
pub type WavelengthPair = [Vec<f64>; 2];
pub const WAVELENGTHS_NM: [u32; 2] = [735, 850];

/// Raw light intensity, 8 channels at two wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FnirsRecording {
    pub timestamps_ms: Vec<f64>,
    pub sample_rate: f64,
    pub channels: Vec<WavelengthPair>,
}

fn check_lengths(timestamps: usize, channels: &[WavelengthPair]) -> Result<(), FnirsError> {
    for (c, pair) in channels.iter().enumerate() {
        for (w, s) in pair.iter().enumerate() {
            if s.len() != timestamps {
                return Err(FnirsError::Length(format!(
                    "channel {} at {} nm has {} samples, timestamps have {timestamps}",
                    c + 1,
                    WAVELENGTHS_NM[w],
                    s.len()
                )));
            }
        }
    }
    Ok(())
}

impl FnirsRecording {
    pub fn new(
        timestamps_ms: Vec<f64>,
        sample_rate: f64,
        channels: Vec<WavelengthPair>,
    ) -> Result<Self, FnirsError> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(FnirsError::SampleRate(sample_rate));
        }
        check_lengths(timestamps_ms.len(), &channels)?;
        for (c, pair) in channels.iter().enumerate() {
            for (w, s) in pair.iter().enumerate() {
                if let Some((i, &v)) = s
                    .iter()
                    .enumerate()
                    .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
                {
                    return Err(FnirsError::NonPositive {
                        channel: c + 1,
                        wavelength_nm: WAVELENGTHS_NM[w],
                        index: i,
                        value: v,
                    });
                }
            }
        }
        Ok(Self {
            timestamps_ms,
            sample_rate,
            channels,
        })
    }

    pub fn uniform(
        t0_ms: f64,
        sample_rate: f64,
        channels: Vec<WavelengthPair>,
    ) -> Result<Self, FnirsError> {
        let n = channels.first().map_or(0, |p| p[0].len());
        Self::new(
            uniform_timestamps(t0_ms, n, sample_rate),
            sample_rate,
            channels,
        )
    }

    pub fn len(&self) -> usize {
        self.timestamps_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_ms.is_empty()
    }
}

/// Optical density change per channel and wavelength.
#[derive(Debug, Clone, PartialEq)]
pub struct OpticalDensity {
    pub timestamps_ms: Vec<f64>,
    pub sample_rate: f64,
    pub channels: Vec<WavelengthPair>,
}

/// `ΔOD = -ln(I / I0)` where I0 is the mean intensity over `i0_window_ms`
/// (`None` uses the whole recording).
pub fn intensity_to_od(
    rec: &FnirsRecording,
    i0_window_ms: Option<(f64, f64)>,
) -> Result<OpticalDensity, FnirsError> {
    let (a, b) = match i0_window_ms {
        None => (0, rec.len()),
        Some((s, e)) => (
            sample_at(&rec.timestamps_ms, s),
            sample_at(&rec.timestamps_ms, e),
        ),
    };
    if a >= b {
        let (s, e) = i0_window_ms.unwrap_or((0.0, 0.0));
        return Err(FnirsError::EmptyWindow(s, e));
    }
    let channels = rec
        .channels
        .iter()
        .map(|pair| {
            pair.clone().map(|s| {
                let i0 = s[a..b].iter().sum::<f64>() / (b - a) as f64;
                s.iter().map(|v| -(v / i0).ln()).collect()
            })
        })
        .collect();
    Ok(OpticalDensity {
        timestamps_ms: rec.timestamps_ms.clone(),
        sample_rate: rec.sample_rate,
        channels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PpgSource {
    Nm735,
    #[default]
    Nm850,
    Average,
}

/// Per-channel photoplethysmogram.
#[derive(Debug, Clone, PartialEq)]
pub struct PpgSeries {
    pub timestamps_ms: Vec<f64>,
    pub sample_rate: f64,
    pub channels: Vec<Vec<f64>>,
}

/// Band-passes the chosen wavelength's OD to the cardiac band.
pub fn extract_ppg(
    od: &OpticalDensity,
    source: PpgSource,
    band: (f64, f64),
) -> Result<PpgSeries, FnirsError> {
    let channels = od
        .channels
        .iter()
        .map(|[a, b]| {
            let raw: Vec<f64> = match source {
                PpgSource::Nm735 => a.clone(),
                PpgSource::Nm850 => b.clone(),
                PpgSource::Average => a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect(),
            };
            bandpass(&raw, band.0, band.1, od.sample_rate)
        })
        .collect::<Result<_, _>>()?;
    Ok(PpgSeries {
        timestamps_ms: od.timestamps_ms.clone(),
        sample_rate: od.sample_rate,
        channels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Extinction {
    /// 1/(mM·cm) at each wavelength.
    pub hbo: [f64; 2],
    pub hbr: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalConstants {
    pub wavelengths_nm: [f64; 2],
    pub extinction: Extinction,
    pub dpf: [f64; 2],
    pub separation_cm: f64,
}

const DEFAULT_CONSTANTS: &str = include_str!("../../data/optical_constants.json");

impl Default for OpticalConstants {
    fn default() -> Self {
        serde_json::from_str(DEFAULT_CONSTANTS).expect("bundled optical constants parse")
    }
}

impl OpticalConstants {
    pub fn load(path: &Path) -> Result<Self, FnirsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| FnirsError::ConstantsFile(e.to_string()))?;
        let c: Self =
            serde_json::from_str(&text).map_err(|e| FnirsError::ConstantsFile(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), FnirsError> {
        let pos = |x: f64| x > 0.0 && x.is_finite();
        if !self.dpf.iter().all(|&d| pos(d)) {
            return Err(FnirsError::Constant("dpf"));
        }
        if !pos(self.separation_cm) {
            return Err(FnirsError::Constant("separation_cm"));
        }
        let e = &self.extinction;
        if !e.hbo.iter().chain(&e.hbr).all(|v| v.is_finite()) {
            return Err(FnirsError::Constant("extinction"));
        }
        let det = e.hbo[0] * e.hbr[1] - e.hbr[0] * e.hbo[1];
        if det.abs() <= 1e-6 {
            return Err(FnirsError::Singular(det));
        }
        Ok(())
    }

    /// Path-weighted system matrix `[[εo·L, εr·L]; ...]` per wavelength row.
    fn system(&self) -> [[f64; 2]; 2] {
        let l = |w: usize| self.separation_cm * self.dpf[w];
        let e = &self.extinction;
        [
            [e.hbo[0] * l(0), e.hbr[0] * l(0)],
            [e.hbo[1] * l(1), e.hbr[1] * l(1)],
        ]
    }

    /// ΔOD at both wavelengths for concentration changes in µM.
    pub fn forward(&self, hbo_um: f64, hbr_um: f64) -> [f64; 2] {
        let m = self.system();
        let (o, r) = (hbo_um / 1000.0, hbr_um / 1000.0);
        [m[0][0] * o + m[0][1] * r, m[1][0] * o + m[1][1] * r]
    }

    fn inverse(&self) -> [[f64; 2]; 2] {
        let m = self.system();
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        // Scaled by 1000 so results come out in µM.
        let k = 1000.0 / det;
        [[m[1][1] * k, -m[0][1] * k], [-m[1][0] * k, m[0][0] * k]]
    }
}

/// HbO, HbR, HbT in µM, one vector per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct HemodynamicSeries {
    pub timestamps_ms: Vec<f64>,
    pub sample_rate: f64,
    pub hbo: Vec<Vec<f64>>,
    pub hbr: Vec<Vec<f64>>,
    pub hbt: Vec<Vec<f64>>,
}

impl HemodynamicSeries {
    /// Builds the series with `hbt = hbo + hbr`.
    pub fn from_components(
        timestamps_ms: Vec<f64>,
        sample_rate: f64,
        hbo: Vec<Vec<f64>>,
        hbr: Vec<Vec<f64>>,
    ) -> Self {
        let hbt = hbo
            .iter()
            .zip(&hbr)
            .map(|(o, r)| o.iter().zip(r).map(|(a, b)| a + b).collect())
            .collect();
        Self {
            timestamps_ms,
            sample_rate,
            hbo,
            hbr,
            hbt,
        }
    }

    pub fn len(&self) -> usize {
        self.timestamps_ms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_ms.is_empty()
    }

    /// Largest |hbt - (hbo + hbr)|.
    pub fn hbt_residual(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for ((o, r), t) in self.hbo.iter().zip(&self.hbr).zip(&self.hbt) {
            for ((a, b), c) in o.iter().zip(r).zip(t) {
                worst = worst.max((c - (a + b)).abs());
            }
        }
        worst
    }
}

pub fn mbll(
    od: &OpticalDensity,
    constants: &OpticalConstants,
) -> Result<HemodynamicSeries, FnirsError> {
    constants.validate()?;
    let inv = constants.inverse();
    let (mut hbo, mut hbr) = (Vec::new(), Vec::new());
    for [d0, d1] in &od.channels {
        let (o, r): (Vec<f64>, Vec<f64>) = d0
            .iter()
            .zip(d1)
            .map(|(a, b)| (inv[0][0] * a + inv[0][1] * b, inv[1][0] * a + inv[1][1] * b))
            .unzip();
        hbo.push(o);
        hbr.push(r);
    }
    Ok(HemodynamicSeries::from_components(
        od.timestamps_ms.clone(),
        od.sample_rate,
        hbo,
        hbr,
    ))
}

/// Zero-phase band-pass of HbO and HbR; HbT is recomputed afterwards.
pub fn systemic_filter(
    series: &HemodynamicSeries,
    band: (f64, f64),
) -> Result<HemodynamicSeries, FnirsError> {
    let run = |chs: &Vec<Vec<f64>>| -> Result<Vec<Vec<f64>>, FilterError> {
        chs.iter()
            .map(|c| bandpass(c, band.0, band.1, series.sample_rate))
            .collect()
    };
    Ok(HemodynamicSeries::from_components(
        series.timestamps_ms.clone(),
        series.sample_rate,
        run(&series.hbo)?,
        run(&series.hbr)?,
    ))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineCorrected {
    pub series: HemodynamicSeries,
    /// Trials without enough pre-stimulus data; their spans are left as-is.
    pub flagged: Vec<u32>,
}

/// For each trial's `[music_on, music_off)` span, subtracts the per-channel
/// mean of the `baseline_s` seconds before onset. A trial without a
/// `music_off` event uses `default_task_s`.
pub fn fnirs_baseline_correct(
    series: &HemodynamicSeries,
    timeline: &EventTimeline,
    baseline_s: f64,
    default_task_s: f64,
) -> BaselineCorrected {
    let ts = &series.timestamps_ms;
    let offs = timeline.trial_times(EventKind::MusicOff);
    let mut hbo = series.hbo.clone();
    let mut hbr = series.hbr.clone();
    let mut flagged = Vec::new();
    let period_ms = 1000.0 / series.sample_rate;
    for (trial, onset_ms) in timeline.trial_times(EventKind::MusicOn) {
        let onset = sample_at(ts, onset_ms);
        let base_start = sample_at(ts, onset_ms - baseline_s * 1000.0);
        let need = (baseline_s * series.sample_rate).round() as usize;
        // The window must be fully covered by recorded samples.
        let covered = ts
            .first()
            .is_some_and(|&t0| t0 <= onset_ms - baseline_s * 1000.0 + 0.5 * period_ms);
        if onset - base_start < need.max(1) || !covered {
            flagged.push(trial);
            continue;
        }
        let off_ms = offs
            .get(&trial)
            .copied()
            .unwrap_or(onset_ms + default_task_s * 1000.0);
        let end = sample_at(ts, off_ms);
        for chans in [&mut hbo, &mut hbr] {
            for c in chans.iter_mut() {
                let b = c[base_start..onset].iter().sum::<f64>() / (onset - base_start) as f64;
                c[onset..end].iter_mut().for_each(|v| *v -= b);
            }
        }
    }
    BaselineCorrected {
        series: HemodynamicSeries::from_components(ts.clone(), series.sample_rate, hbo, hbr),
        flagged,
    }
}
