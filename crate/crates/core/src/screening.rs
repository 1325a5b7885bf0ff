//! Two-stage clip screening: technical-flaw rejection, then evaluator-score
//! aggregation and geometric selection in valence-arousal space.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Read;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::quantile;
use crate::audio::AudioClip;
use crate::quadrant::EmotionQuadrant;

#[derive(Debug, thiserror::Error)]
pub enum ScreenError {
    #[error("clip {0} has no audio samples")]
    EmptyAudio(String),
    #[error("clips without ratings: {0:?}")]
    MissingRatings(Vec<String>),
    #[error("rating out of range for clip {clip_id} by {evaluator_id}: valence {valence}, arousal {arousal}")]
    RatingRange {
        evaluator_id: String,
        clip_id: String,
        valence: i64,
        arousal: i64,
    },
    #[error("duplicate clip id {0}")]
    DuplicateClip(String),
    #[error("ratings csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("library: {0}")]
    Library(String),
}

/// HAHV and HALV radius.
pub const HIGH_AROUSAL_RADIUS: f64 = 2.0 * std::f64::consts::SQRT_2;
pub const LALV_RADIUS: f64 = 3.4;
pub const LAHV_RADIUS: f64 = 5.0;

/// Relative slack for the boundary comparisons. Rating means such as 4.4
/// are not exact in binary, so a point that sits on a boundary in decimal
/// can land one or two ulps outside it. Any off-boundary mean of integer
/// ratings is many orders of magnitude further away than this.
const BOUNDARY_SLACK: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TechnicalThresholds {
    /// Frame peak above this multiple of the 95th-percentile frame peak is a spike.
    pub spike_threshold: f64,
    /// Frames with RMS below this level (dBFS) count as silent.
    pub silence_rms_db: f64,
    /// Longest tolerated contiguous silence.
    pub silence_max_s: f64,
    pub frame_s: f64,
}

impl Default for TechnicalThresholds {
    fn default() -> Self {
        Self {
            spike_threshold: 10.0,
            silence_rms_db: -50.0,
            silence_max_s: 3.0,
            frame_s: 0.010,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    AbruptNoise,
    ExtendedSilence,
    OutsideSelectionRegion,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::AbruptNoise => "abrupt_noise",
            RejectReason::ExtendedSilence => "extended_silence",
            RejectReason::OutsideSelectionRegion => "outside_selection_region",
        }
    }
}

/// Outcome of [`technical_screen`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TechnicalVerdict {
    Pass,
    Fail(RejectReason),
}

pub fn technical_screen(
    audio: &AudioClip,
    thresholds: &TechnicalThresholds,
) -> Result<TechnicalVerdict, crate::audio::AudioError> {
    if audio.samples.is_empty() {
        return Err(crate::audio::AudioError::Empty);
    }
    let frame_len = ((thresholds.frame_s * audio.sample_rate as f64).round() as usize).max(1);
    let frames: Vec<&[f64]> = audio.samples.chunks(frame_len).collect();

    let peaks: Vec<f64> = frames
        .iter()
        .map(|f| f.iter().fold(0.0f64, |m, s| m.max(s.abs())))
        .collect();
    let mut sorted = peaks.clone();
    sorted.sort_by(f64::total_cmp);
    let p95 = quantile(&sorted, 0.95);
    // A clip that is >95% digital silence has no reference level; the silence
    // detector covers it.
    if p95 > 0.0 {
        let limit = thresholds.spike_threshold * p95;
        if peaks.iter().any(|&p| p > limit) {
            return Ok(TechnicalVerdict::Fail(RejectReason::AbruptNoise));
        }
    }

    let silence_rms = 10f64.powf(thresholds.silence_rms_db / 20.0);
    let mut run = 0usize;
    for f in &frames {
        let rms = (f.iter().map(|s| s * s).sum::<f64>() / f.len() as f64).sqrt();
        if rms < silence_rms {
            run += f.len();
            if run as f64 / audio.sample_rate as f64 > thresholds.silence_max_s {
                return Ok(TechnicalVerdict::Fail(RejectReason::ExtendedSilence));
            }
        } else {
            run = 0;
        }
    }
    Ok(TechnicalVerdict::Pass)
}

/// One evaluator's score for one clip, both axes on the 1-9 scale.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorRating {
    pub evaluator_id: String,
    pub clip_id: String,
    pub valence: u8,
    pub arousal: u8,
}

impl EvaluatorRating {
    pub fn new(
        evaluator_id: impl Into<String>,
        clip_id: impl Into<String>,
        valence: i64,
        arousal: i64,
    ) -> Result<Self, ScreenError> {
        let evaluator_id = evaluator_id.into();
        let clip_id = clip_id.into();
        if !(1..=9).contains(&valence) || !(1..=9).contains(&arousal) {
            return Err(ScreenError::RatingRange {
                evaluator_id,
                clip_id,
                valence,
                arousal,
            });
        }
        Ok(Self {
            evaluator_id,
            clip_id,
            valence: valence as u8,
            arousal: arousal as u8,
        })
    }
}

/// Reads `evaluator_id,clip_id,valence,arousal` CSV with a header row.
pub fn read_ratings_csv<R: Read>(reader: R) -> Result<Vec<EvaluatorRating>, ScreenError> {
    #[derive(Deserialize)]
    struct Row {
        evaluator_id: String,
        clip_id: String,
        valence: i64,
        arousal: i64,
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    rdr.deserialize::<Row>()
        .map(|row| {
            let row = row?;
            EvaluatorRating::new(row.evaluator_id, row.clip_id, row.valence, row.arousal)
        })
        .collect()
}

pub fn write_ratings_csv<W: std::io::Write>(
    writer: W,
    ratings: &[EvaluatorRating],
) -> Result<(), ScreenError> {
    let mut w = csv::Writer::from_writer(writer);
    for r in ratings {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Mean evaluator position of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipScore {
    pub clip_id: String,
    pub v: f64,
    pub a: f64,
    pub n_raters: usize,
}

/// Unweighted per-clip means, sorted by clip id.
pub fn aggregate_scores(ratings: &[EvaluatorRating]) -> Vec<ClipScore> {
    let mut sums: BTreeMap<&str, (u64, u64, usize)> = BTreeMap::new();
    for r in ratings {
        let e = sums.entry(r.clip_id.as_str()).or_default();
        e.0 += u64::from(r.valence);
        e.1 += u64::from(r.arousal);
        e.2 += 1;
    }
    sums.into_iter()
        .map(|(clip_id, (v, a, n))| ClipScore {
            clip_id: clip_id.to_string(),
            v: v as f64 / n as f64,
            a: a as f64 / n as f64,
            n_raters: n,
        })
        .collect()
}

/// Aggregates and checks that every clip in `clip_ids` received a rating.
pub fn aggregate_scores_for(
    ratings: &[EvaluatorRating],
    clip_ids: &[String],
) -> Result<Vec<ClipScore>, ScreenError> {
    let scores = aggregate_scores(ratings);
    let rated: BTreeSet<&str> = scores.iter().map(|s| s.clip_id.as_str()).collect();
    let mut missing: Vec<String> = clip_ids
        .iter()
        .filter(|id| !rated.contains(id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        missing.sort();
        return Err(ScreenError::MissingRatings(missing));
    }
    let wanted: BTreeSet<&str> = clip_ids.iter().map(String::as_str).collect();
    Ok(scores
        .into_iter()
        .filter(|s| wanted.contains(s.clip_id.as_str()))
        .collect())
}

fn within(v: f64, a: f64, center: (f64, f64), radius: f64) -> bool {
    let d = (v - center.0).hypot(a - center.1);
    d <= radius * (1.0 + BOUNDARY_SLACK)
}

/// Selection region test for a clip intended as `intended`.
///
/// HAHV and HALV keep clips within 2√2 of the (9,9) and (1,9) corners, LALV
/// within 3.4 of (1,1). LAHV keeps clips within 5 of (9,1) that also have
/// v ≥ 5 and a ≤ 5. Boundaries are inclusive.
pub fn select_clip(score: &ClipScore, intended: EmotionQuadrant) -> bool {
    let (v, a) = (score.v, score.a);
    match intended {
        EmotionQuadrant::HAHV => within(v, a, (9.0, 9.0), HIGH_AROUSAL_RADIUS),
        EmotionQuadrant::HALV => within(v, a, (1.0, 9.0), HIGH_AROUSAL_RADIUS),
        EmotionQuadrant::LALV => within(v, a, (1.0, 1.0), LALV_RADIUS),
        EmotionQuadrant::LAHV => {
            within(v, a, (9.0, 1.0), LAHV_RADIUS)
                && v >= 5.0 * (1.0 - BOUNDARY_SLACK)
                && a <= 5.0 * (1.0 + BOUNDARY_SLACK)
        }
    }
}

/// A generated clip awaiting screening.
#[derive(Debug, Clone)]
pub struct ClipRecord {
    pub clip_id: String,
    pub quadrant: EmotionQuadrant,
    pub prompt: Option<String>,
    pub audio: AudioClip,
}

/// Library manifest entry (`library.json`): audio paths are relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryEntry {
    pub clip_id: String,
    pub quadrant: EmotionQuadrant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    pub audio: PathBuf,
}

pub fn load_library(manifest: &Path) -> Result<Vec<ClipRecord>, ScreenError> {
    let text = std::fs::read_to_string(manifest)
        .map_err(|e| ScreenError::Library(format!("{}: {e}", manifest.display())))?;
    let entries: Vec<LibraryEntry> =
        serde_json::from_str(&text).map_err(|e| ScreenError::Library(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .into_iter()
        .map(|e| {
            let path = base.join(&e.audio);
            let audio = AudioClip::read_wav(&path)
                .map_err(|err| ScreenError::Library(format!("{}: {err}", path.display())))?;
            Ok(ClipRecord {
                clip_id: e.clip_id,
                quadrant: e.quadrant,
                prompt: e.prompt,
                audio,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejection {
    pub clip_id: String,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningReport {
    pub retained_technical: Vec<String>,
    pub selected: BTreeMap<EmotionQuadrant, Vec<String>>,
    pub rejected: Vec<Rejection>,
}

impl ScreeningReport {
    pub fn counts(&self) -> BTreeMap<EmotionQuadrant, usize> {
        self.selected
            .iter()
            .map(|(q, ids)| (*q, ids.len()))
            .collect()
    }

    pub fn total_selected(&self) -> usize {
        self.selected.values().map(Vec::len).sum()
    }
}

/// technical_screen → aggregate_scores → select_clip against each clip's
/// intended quadrant. All lists are sorted by clip id.
pub fn screen_library(
    clips: &[ClipRecord],
    ratings: &[EvaluatorRating],
    thresholds: &TechnicalThresholds,
) -> Result<ScreeningReport, ScreenError> {
    let mut ids = BTreeSet::new();
    for c in clips {
        if !ids.insert(c.clip_id.as_str()) {
            return Err(ScreenError::DuplicateClip(c.clip_id.clone()));
        }
    }
    let verdicts: Vec<(usize, TechnicalVerdict)> = clips
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            technical_screen(&c.audio, thresholds)
                .map(|v| (i, v))
                .map_err(|_| ScreenError::EmptyAudio(c.clip_id.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut retained: Vec<&ClipRecord> = Vec::new();
    let mut rejected = Vec::new();
    for (i, verdict) in verdicts {
        match verdict {
            TechnicalVerdict::Pass => retained.push(&clips[i]),
            TechnicalVerdict::Fail(reason) => rejected.push(Rejection {
                clip_id: clips[i].clip_id.clone(),
                reason,
            }),
        }
    }
    retained.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let retained_ids: Vec<String> = retained.iter().map(|c| c.clip_id.clone()).collect();
    let scores = aggregate_scores_for(ratings, &retained_ids)?;

    let mut selected: BTreeMap<EmotionQuadrant, Vec<String>> = EmotionQuadrant::ALL
        .iter()
        .map(|&q| (q, Vec::new()))
        .collect();
    for (clip, score) in retained.iter().zip(&scores) {
        debug_assert_eq!(clip.clip_id, score.clip_id);
        if select_clip(score, clip.quadrant) {
            selected
                .get_mut(&clip.quadrant)
                .unwrap()
                .push(clip.clip_id.clone());
        } else {
            rejected.push(Rejection {
                clip_id: clip.clip_id.clone(),
                reason: RejectReason::OutsideSelectionRegion,
            });
        }
    }
    rejected.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    Ok(ScreeningReport {
        retained_technical: retained_ids,
        selected,
        rejected,
    })
}
