//! Per-trial multimodal feature vectors and their CSV form.

use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    derive_label, fnirs_features, relative_band_power_per_channel, BandPowerConfig, BandPowerError,
    FnirsFeatureError, FnirsFeatureVector, LabelSource, RatingTriple, TrialLabel, TrialRecord,
    BAND_NAMES, FNIRS_FEATURES,
};
use crate::quadrant::EmotionQuadrant;
use crate::sigproc::{EegEpoch, HemodynamicSeries, PpgSeries, FNIRS_CHANNELS};

pub const EEG_FEATURES: usize = 10;
pub const PPG_FEATURES: usize = 2 * FNIRS_CHANNELS + 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Trailing part of the music period used for PPG and hemodynamics.
    pub window_s: f64,
    pub refractory_s: f64,
    pub bandpower: BandPowerConfig,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            window_s: 30.0,
            refractory_s: 0.3,
            bandpower: BandPowerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFeatures {
    pub trial_id: u32,
    pub subject: String,
    /// Quadrant of the music played.
    pub quadrant: EmotionQuadrant,
    /// Fp1 delta..gamma, then Fp2 delta..gamma.
    pub eeg: [f64; EEG_FEATURES],
    /// Per-channel PPG mean and variance, then heart-rate mean and SD.
    pub ppg: [f64; PPG_FEATURES],
    /// False when too few beats were found; the heart-rate slots are then 0.
    pub hr_defined: bool,
    pub hb: FnirsFeatureVector,
    pub rating: RatingTriple,
    pub label: TrialLabel,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExcludeReason {
    #[error("trial has no rating")]
    Unrated,
    #[error("trial has no music_off time")]
    NoMusicOff,
    #[error("no {0} data for trial")]
    Missing(&'static str),
    #[error("band power: {0}")]
    BandPower(#[from] BandPowerError),
    #[error("hemodynamic window: {0}")]
    Hemodynamic(#[from] FnirsFeatureError),
    #[error("PPG window [{start_ms}, {end_ms}) ms has {got} samples, need {need}")]
    PpgWindow {
        start_ms: f64,
        end_ms: f64,
        got: usize,
        need: usize,
    },
}

/// Beat indices: local maxima above the signal mean, taken greedily by
/// height and kept only if no taller beat lies within the refractory span.
pub fn detect_beats(x: &[f64], fs: f64, refractory_s: f64) -> Vec<usize> {
    if x.len() < 3 {
        return Vec::new();
    }
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let mut cand: Vec<usize> = (1..x.len() - 1)
        .filter(|&i| x[i] > x[i - 1] && x[i] >= x[i + 1] && x[i] > m)
        .collect();
    cand.sort_by(|&a, &b| x[b].total_cmp(&x[a]).then(a.cmp(&b)));
    let gap = refractory_s * fs;
    let mut kept: Vec<usize> = Vec::new();
    for i in cand {
        if kept.iter().all(|&k| (k as f64 - i as f64).abs() >= gap) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    kept
}

/// Heart-rate mean and population SD in BPM, or `None` with fewer than two
/// beats.
pub fn heart_rate(beats: &[usize], fs: f64) -> Option<(f64, f64)> {
    if beats.len() < 2 {
        return None;
    }
    let hr: Vec<f64> = beats
        .windows(2)
        .map(|w| 60.0 * fs / (w[1] - w[0]) as f64)
        .collect();
    let n = hr.len() as f64;
    let m = hr.iter().sum::<f64>() / n;
    let sd = (hr.iter().map(|h| (h - m).powi(2)).sum::<f64>() / n).sqrt();
    Some((m, sd))
}

/// PPG block over `[end_ms - window_s, end_ms)`. Heart rate is taken from
/// the channel-averaged waveform.
pub fn ppg_features(
    ppg: &PpgSeries,
    end_ms: f64,
    window_s: f64,
    refractory_s: f64,
) -> Result<([f64; PPG_FEATURES], bool), ExcludeReason> {
    let start_ms = end_ms - window_s * 1000.0;
    let a = ppg.timestamps_ms.partition_point(|&t| t < start_ms);
    let b = ppg.timestamps_ms.partition_point(|&t| t < end_ms);
    let need = (window_s * ppg.sample_rate).round() as usize;
    if b - a < need || b == a || ppg.channels.len() != FNIRS_CHANNELS {
        return Err(ExcludeReason::PpgWindow {
            start_ms,
            end_ms,
            got: b - a,
            need,
        });
    }
    let mut out = [0.0; PPG_FEATURES];
    let mut avg = vec![0.0; b - a];
    for (c, ch) in ppg.channels.iter().enumerate() {
        let w = &ch[a..b];
        let n = w.len() as f64;
        let m = w.iter().sum::<f64>() / n;
        out[2 * c] = m;
        out[2 * c + 1] = w.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        for (s, v) in avg.iter_mut().zip(w) {
            *s += v / FNIRS_CHANNELS as f64;
        }
    }
    let beats = detect_beats(&avg, ppg.sample_rate, refractory_s);
    let defined = match heart_rate(&beats, ppg.sample_rate) {
        Some((m, sd)) => {
            out[PPG_FEATURES - 2] = m;
            out[PPG_FEATURES - 1] = sd;
            true
        }
        None => false,
    };
    Ok((out, defined))
}

pub struct TrialInputs<'a> {
    pub subject: &'a str,
    pub record: &'a TrialRecord,
    pub eeg: Option<&'a EegEpoch>,
    pub ppg: Option<&'a PpgSeries>,
    pub hb: Option<&'a HemodynamicSeries>,
}

pub fn build_features(
    inputs: &TrialInputs,
    cfg: &FeatureConfig,
) -> Result<TrialFeatures, ExcludeReason> {
    let rec = inputs.record;
    let rating = rec.rating.ok_or(ExcludeReason::Unrated)?;
    let label = rec
        .derived_label
        .unwrap_or_else(|| derive_label(rating, rec.music_quadrant));
    let end_ms = rec.t_music_off.ok_or(ExcludeReason::NoMusicOff)?;
    let epoch = inputs.eeg.ok_or(ExcludeReason::Missing("EEG"))?;
    let ppg = inputs.ppg.ok_or(ExcludeReason::Missing("PPG"))?;
    let hb = inputs.hb.ok_or(ExcludeReason::Missing("hemodynamic"))?;

    let bp = relative_band_power_per_channel(
        &[&epoch.fp1, &epoch.fp2],
        crate::sigproc::EEG_RATE,
        &cfg.bandpower,
    )?;
    let mut eeg = [0.0; EEG_FEATURES];
    eeg[..5].copy_from_slice(&bp[0].to_array());
    eeg[5..].copy_from_slice(&bp[1].to_array());
    let (ppg, hr_defined) = ppg_features(ppg, end_ms, cfg.window_s, cfg.refractory_s)?;
    let hb = fnirs_features(hb, end_ms, cfg.window_s)?;
    Ok(TrialFeatures {
        trial_id: rec.trial_id,
        subject: inputs.subject.to_string(),
        quadrant: rec.music_quadrant,
        eeg,
        ppg,
        hr_defined,
        hb,
        rating,
        label,
    })
}

#[derive(Debug, thiserror::Error)]
pub enum FeatureCsvError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("row {row}: {msg}")]
    Row { row: usize, msg: String },
    #[error("unexpected header; first mismatch at column {0}")]
    Header(usize),
}

pub fn feature_csv_header() -> Vec<String> {
    let mut h: Vec<String> = ["trial_id", "subject", "quadrant"].map(String::from).into();
    for ch in ["fp1", "fp2"] {
        h.extend(BAND_NAMES.iter().map(|b| format!("eeg_{ch}_{b}")));
    }
    for c in 1..=FNIRS_CHANNELS {
        h.push(format!("ppg_ch{c}_mean"));
        h.push(format!("ppg_ch{c}_var"));
    }
    h.extend(["hr_mean", "hr_sd", "hr_defined"].map(String::from));
    h.extend((1..=FNIRS_FEATURES).map(|i| format!("fnirs_{i}")));
    h.extend(["valence", "arousal", "liking", "label", "label_source"].map(String::from));
    h
}

/// Writes one row per trial. Floats use the shortest round-tripping form,
/// so a read-back is bit-equal.
pub fn write_feature_csv<W: Write>(
    out: W,
    trials: &[TrialFeatures],
) -> Result<(), FeatureCsvError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(feature_csv_header())?;
    for t in trials {
        let mut row = vec![
            t.trial_id.to_string(),
            t.subject.clone(),
            t.quadrant.to_string(),
        ];
        row.extend(t.eeg.iter().chain(&t.ppg).map(|v| format!("{v:?}")));
        row.push(t.hr_defined.to_string());
        row.extend(t.hb.0.iter().map(|v| format!("{v:?}")));
        row.extend([t.rating.valence, t.rating.arousal, t.rating.liking].map(|v| v.to_string()));
        row.push(t.label.quadrant.to_string());
        row.push(t.label.source.as_str().to_string());
        w.write_record(&row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn parse_source(s: &str) -> Option<LabelSource> {
    [
        LabelSource::SelfReport,
        LabelSource::MusicFallbackValence,
        LabelSource::MusicFallbackArousal,
        LabelSource::MusicFallbackBoth,
    ]
    .into_iter()
    .find(|l| l.as_str() == s)
}

pub fn read_feature_csv<R: Read>(input: R) -> Result<Vec<TrialFeatures>, FeatureCsvError> {
    let mut r = csv::Reader::from_reader(input);
    let expected = feature_csv_header();
    let header = r.headers()?.clone();
    if let Some(i) = (0..expected.len().max(header.len()))
        .find(|&i| header.get(i) != expected.get(i).map(String::as_str))
    {
        return Err(FeatureCsvError::Header(i));
    }
    let mut out = Vec::new();
    for (idx, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        let bad = |msg: String| FeatureCsvError::Row { row, msg };
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn num<T: FromStr>(
            s: &str,
            col: &str,
            bad: &dyn Fn(String) -> FeatureCsvError,
        ) -> Result<T, FeatureCsvError> {
            s.parse()
                .map_err(|_| bad(format!("bad value {s:?} in {col}")))
        }
        let float =
            |i: usize| -> Result<f64, FeatureCsvError> { num(field(i), &expected[i], &bad) };
        let mut col = 3;
        let mut eeg = [0.0; EEG_FEATURES];
        for v in &mut eeg {
            *v = float(col)?;
            col += 1;
        }
        let mut ppg = [0.0; PPG_FEATURES];
        for v in &mut ppg {
            *v = float(col)?;
            col += 1;
        }
        let hr_defined: bool = num(field(col), "hr_defined", &bad)?;
        col += 1;
        let mut hb = [0.0; FNIRS_FEATURES];
        for v in &mut hb {
            *v = float(col)?;
            col += 1;
        }
        let score =
            |i: usize| -> Result<i64, FeatureCsvError> { num(field(i), &expected[i], &bad) };
        let rating = RatingTriple::new(score(col)?, score(col + 1)?, score(col + 2)?)
            .map_err(|e| bad(e.to_string()))?;
        let quadrant: EmotionQuadrant = num(field(2), "quadrant", &bad)?;
        let label_q: EmotionQuadrant = num(field(col + 3), "label", &bad)?;
        let source = parse_source(field(col + 4))
            .ok_or_else(|| bad(format!("bad label_source {:?}", field(col + 4))))?;
        out.push(TrialFeatures {
            trial_id: num(field(0), "trial_id", &bad)?,
            subject: field(1).to_string(),
            quadrant,
            eeg,
            ppg,
            hr_defined,
            hb: FnirsFeatureVector(hb),
            rating,
            label: TrialLabel {
                quadrant: label_q,
                valence_high: label_q.valence_high(),
                arousal_high: label_q.arousal_high(),
                source,
            },
        });
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    pub(crate) fn random_trial(rng: &mut impl Rng, subject: &str, trial_id: u32) -> TrialFeatures {
        let q = EmotionQuadrant::ALL[rng.random_range(0..4)];
        let rating = RatingTriple::new(
            rng.random_range(1..=9),
            rng.random_range(1..=9),
            rng.random_range(1..=9),
        )
        .unwrap();
        TrialFeatures {
            trial_id,
            subject: subject.into(),
            quadrant: q,
            eeg: std::array::from_fn(|_| rng.random()),
            ppg: std::array::from_fn(|_| rng.random::<f64>() * 1e-3 - 5e-4),
            hr_defined: rng.random(),
            hb: FnirsFeatureVector(std::array::from_fn(|_| rng.random::<f64>() * 1e5 - 3.0)),
            rating,
            label: derive_label(rating, q),
        }
    }

    fn ppg_series(f: impl Fn(f64) -> f64, seconds: f64) -> PpgSeries {
        let n = (seconds * 25.0) as usize;
        let ts: Vec<f64> = (0..n).map(|i| i as f64 * 40.0).collect();
        let ch: Vec<f64> = ts.iter().map(|t| f(t / 1000.0)).collect();
        PpgSeries {
            timestamps_ms: ts,
            sample_rate: 25.0,
            channels: vec![ch; 8],
        }
    }

    #[test]
    fn constant_ppg_has_no_heart_rate() {
        let p = ppg_series(|_| 0.25, 60.0);
        let (f, defined) = ppg_features(&p, 60_000.0, 30.0, 0.3).unwrap();
        assert!(!defined);
        for c in 0..8 {
            assert_eq!(f[2 * c], 0.25);
            assert_eq!(f[2 * c + 1], 0.0);
        }
        assert_eq!(&f[16..], &[0.0, 0.0]);
    }

    #[test]
    fn cardiac_sine_gives_its_rate() {
        // 1.25 Hz = 75 BPM; its period is exactly 20 samples at 25 Hz.
        let p = ppg_series(|t| (2.0 * PI * 1.25 * t).sin(), 60.0);
        let (f, defined) = ppg_features(&p, 60_000.0, 30.0, 0.3).unwrap();
        assert!(defined);
        assert!((f[16] - 75.0).abs() < 1e-9, "{}", f[16]);
        assert!(f[17] < 1e-9);
        assert!((f[1] - 0.5).abs() < 1e-3);
    }

    #[test]
    fn refractory_suppresses_double_peaks() {
        // Two bumps 0.2 s apart in every 1 s beat: only the taller one counts.
        let fs = 100.0;
        let x: Vec<f64> = (0..1000)
            .map(|i| {
                let t = (i % 100) as f64 / fs;
                (-((t - 0.3) / 0.03).powi(2)).exp() + 0.6 * (-((t - 0.5) / 0.03).powi(2)).exp()
            })
            .collect();
        let beats = detect_beats(&x, fs, 0.3);
        assert_eq!(beats, (0..10).map(|k| k * 100 + 30).collect::<Vec<_>>());
        assert_eq!(heart_rate(&beats, fs), Some((60.0, 0.0)));
        assert_eq!(detect_beats(&x, fs, 0.1).len(), 20);
    }

    #[test]
    fn short_ppg_window_excluded() {
        let p = ppg_series(|_| 0.0, 20.0);
        assert!(matches!(
            ppg_features(&p, 20_000.0, 30.0, 0.3),
            Err(ExcludeReason::PpgWindow { .. })
        ));
    }

    #[test]
    fn csv_round_trip_is_bit_equal() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut trials: Vec<_> = (0..25)
            .map(|i| random_trial(&mut rng, &format!("p{:02}", i % 3), i))
            .collect();
        trials[0].eeg[0] = 1e-300;
        trials[0].ppg[3] = -0.0;
        trials[1].hb.0[7] = f64::MAX;
        let mut buf = Vec::new();
        write_feature_csv(&mut buf, &trials).unwrap();
        let back = read_feature_csv(buf.as_slice()).unwrap();
        assert_eq!(back.len(), trials.len());
        for (a, b) in trials.iter().zip(&back) {
            assert_eq!(a.label, b.label);
            for (x, y) in a
                .eeg
                .iter()
                .chain(&a.ppg)
                .chain(&a.hb.0)
                .zip(b.eeg.iter().chain(&b.ppg).chain(&b.hb.0))
            {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back, trials);
    }

    #[test]
    fn csv_header_checked() {
        assert_eq!(feature_csv_header().len(), 3 + 10 + 18 + 1 + 48 + 5);
        let err = read_feature_csv("trial_id,subject,quad\n".as_bytes()).unwrap_err();
        assert!(matches!(err, FeatureCsvError::Header(2)));
    }
}
