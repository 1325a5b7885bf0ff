use serde::{Deserialize, Serialize};

use crate::quadrant::EmotionQuadrant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, thiserror::Error)]
#[error(
    "ratings must be integers in 1..=9 (got valence {valence}, arousal {arousal}, liking {liking})"
)]
pub struct RatingRangeError {
    pub valence: i64,
    pub arousal: i64,
    pub liking: i64,
}

/// A participant's self-report after one clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RatingTriple {
    pub valence: u8,
    pub arousal: u8,
    pub liking: u8,
}

impl RatingTriple {
    pub fn new(valence: i64, arousal: i64, liking: i64) -> Result<Self, RatingRangeError> {
        let ok = |x: i64| (1..=9).contains(&x);
        if ok(valence) && ok(arousal) && ok(liking) {
            Ok(Self {
                valence: valence as u8,
                arousal: arousal as u8,
                liking: liking as u8,
            })
        } else {
            Err(RatingRangeError {
                valence,
                arousal,
                liking,
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    SelfReport,
    MusicFallbackValence,
    MusicFallbackArousal,
    MusicFallbackBoth,
}

impl LabelSource {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelSource::SelfReport => "self_report",
            LabelSource::MusicFallbackValence => "music_fallback_valence",
            LabelSource::MusicFallbackArousal => "music_fallback_arousal",
            LabelSource::MusicFallbackBoth => "music_fallback_both",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrialLabel {
    pub quadrant: EmotionQuadrant,
    pub valence_high: bool,
    pub arousal_high: bool,
    pub source: LabelSource,
}

/// Scores above 5 are high and below 5 low. A score of exactly 5 takes the
/// polarity of the clip's own quadrant on that dimension.
pub fn derive_label(rating: RatingTriple, music: EmotionQuadrant) -> TrialLabel {
    let pick = |score: u8, music_high: bool| match score.cmp(&5) {
        std::cmp::Ordering::Greater => (true, false),
        std::cmp::Ordering::Less => (false, false),
        std::cmp::Ordering::Equal => (music_high, true),
    };
    let (valence_high, v_fallback) = pick(rating.valence, music.valence_high());
    let (arousal_high, a_fallback) = pick(rating.arousal, music.arousal_high());
    let source = match (v_fallback, a_fallback) {
        (false, false) => LabelSource::SelfReport,
        (true, false) => LabelSource::MusicFallbackValence,
        (false, true) => LabelSource::MusicFallbackArousal,
        (true, true) => LabelSource::MusicFallbackBoth,
    };
    TrialLabel {
        quadrant: EmotionQuadrant::from_polarity(arousal_high, valence_high),
        valence_high,
        arousal_high,
        source,
    }
}
