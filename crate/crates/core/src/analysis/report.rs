//! Trial records and the self-report summary: per-quadrant rating
//! quartiles, the valence/arousal/liking correlation table, and label
//! histograms.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::labels::{RatingTriple, TrialLabel};
use super::stats::{pearson, quantile};
use crate::quadrant::EmotionQuadrant;

/// One paradigm trial. Phase times are milliseconds on the session clock.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub participant_id: String,
    pub session: u8,
    pub block: u8,
    pub trial_id: u32,
    pub clip_id: String,
    pub music_quadrant: EmotionQuadrant,
    pub t_prep: Option<f64>,
    pub t_music_on: Option<f64>,
    pub t_music_off: Option<f64>,
    pub t_rating: Option<f64>,
    pub t_rest: Option<f64>,
    pub rating: Option<RatingTriple>,
    pub derived_label: Option<TrialLabel>,
}

impl TrialRecord {
    /// All five phase times recorded and ordered. The timed phases must
    /// have positive length; a rating may arrive the instant the window
    /// opens and rest starts the moment it is submitted, so those two steps
    /// may tie.
    pub fn is_complete(&self) -> bool {
        let times = [
            self.t_prep,
            self.t_music_on,
            self.t_music_off,
            self.t_rating,
            self.t_rest,
        ];
        times.iter().all(Option::is_some)
            && times[..3].windows(2).all(|w| w[0] < w[1])
            && times[2..].windows(2).all(|w| w[0] <= w[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl Quartiles {
    pub fn of(values: &[f64]) -> Self {
        let mut s = values.to_vec();
        s.sort_by(f64::total_cmp);
        Self {
            min: s[0],
            q1: quantile(&s, 0.25),
            median: quantile(&s, 0.5),
            q3: quantile(&s, 0.75),
            max: s[s.len() - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadrantSummary {
    pub n: usize,
    pub valence: Quartiles,
    pub arousal: Quartiles,
    pub liking: Quartiles,
    /// Derived-label counts for trials of this music quadrant.
    pub label_histogram: BTreeMap<EmotionQuadrant, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub x: String,
    pub y: String,
    pub n: usize,
    /// `None` when a variable has no variance.
    pub r: Option<f64>,
    pub p: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatingReport {
    pub n_rated: usize,
    pub per_quadrant: BTreeMap<EmotionQuadrant, QuadrantSummary>,
    /// Pairs in the order valence-arousal, valence-liking, arousal-liking.
    pub correlations: Vec<CorrelationCell>,
    pub warnings: Vec<String>,
}

pub fn rating_report(trials: &[TrialRecord]) -> RatingReport {
    let mut warnings = Vec::new();
    let rated: Vec<(&TrialRecord, RatingTriple)> = trials
        .iter()
        .filter_map(|t| t.rating.map(|r| (t, r)))
        .collect();
    let unrated = trials.len() - rated.len();
    if unrated > 0 {
        warnings.push(format!("{unrated} trial(s) without a rating were left out"));
    }

    let mut per_quadrant = BTreeMap::new();
    for q in EmotionQuadrant::ALL {
        let group: Vec<_> = rated
            .iter()
            .filter(|(t, _)| t.music_quadrant == q)
            .collect();
        if group.is_empty() {
            warnings.push(format!("no rated trials for {q}; quadrant omitted"));
            continue;
        }
        let col =
            |f: fn(&RatingTriple) -> u8| group.iter().map(|(_, r)| f(r) as f64).collect::<Vec<_>>();
        let mut hist: BTreeMap<EmotionQuadrant, usize> =
            EmotionQuadrant::ALL.iter().map(|&q| (q, 0)).collect();
        for (t, r) in &group {
            let label = t
                .derived_label
                .unwrap_or_else(|| super::labels::derive_label(*r, q));
            *hist.entry(label.quadrant).or_default() += 1;
        }
        per_quadrant.insert(
            q,
            QuadrantSummary {
                n: group.len(),
                valence: Quartiles::of(&col(|r| r.valence)),
                arousal: Quartiles::of(&col(|r| r.arousal)),
                liking: Quartiles::of(&col(|r| r.liking)),
                label_histogram: hist,
            },
        );
    }

    let series =
        |f: fn(&RatingTriple) -> u8| rated.iter().map(|(_, r)| f(r) as f64).collect::<Vec<_>>();
    let v = series(|r| r.valence);
    let a = series(|r| r.arousal);
    let l = series(|r| r.liking);
    let correlations = [
        ("valence", &v, "arousal", &a),
        ("valence", &v, "liking", &l),
        ("arousal", &a, "liking", &l),
    ]
    .into_iter()
    .map(|(xn, x, yn, y)| {
        let (r, p, error) = match pearson(x, y) {
            Ok(c) => (Some(c.r), Some(c.p), None),
            Err(e) => (None, None, Some(e.to_string())),
        };
        CorrelationCell {
            x: xn.into(),
            y: yn.into(),
            n: x.len(),
            r,
            p,
            error,
        }
    })
    .collect();

    RatingReport {
        n_rated: rated.len(),
        per_quadrant,
        correlations,
        warnings,
    }
}
