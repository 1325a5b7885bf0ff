use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// One of the four valence-arousal quadrants used as the label space for
/// clips, trials and classifier targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EmotionQuadrant {
    /// High arousal, high valence.
    HAHV,
    /// High arousal, low valence.
    HALV,
    /// Low arousal, high valence.
    LAHV,
    /// Low arousal, low valence.
    LALV,
}

impl EmotionQuadrant {
    pub const ALL: [EmotionQuadrant; 4] = [Self::HAHV, Self::HALV, Self::LAHV, Self::LALV];

    pub fn from_polarity(arousal_high: bool, valence_high: bool) -> Self {
        match (arousal_high, valence_high) {
            (true, true) => Self::HAHV,
            (true, false) => Self::HALV,
            (false, true) => Self::LAHV,
            (false, false) => Self::LALV,
        }
    }

    pub fn arousal_high(self) -> bool {
        matches!(self, Self::HAHV | Self::HALV)
    }

    pub fn valence_high(self) -> bool {
        matches!(self, Self::HAHV | Self::LAHV)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::HAHV => "HAHV",
            Self::HALV => "HALV",
            Self::LAHV => "LAHV",
            Self::LALV => "LALV",
        }
    }

    /// Position in [`EmotionQuadrant::ALL`].
    pub fn index(self) -> usize {
        match self {
            Self::HAHV => 0,
            Self::HALV => 1,
            Self::LAHV => 2,
            Self::LALV => 3,
        }
    }
}

impl fmt::Display for EmotionQuadrant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown emotion quadrant {0:?} (expected HAHV, HALV, LAHV or LALV)")]
pub struct ParseQuadrantError(pub String);

impl FromStr for EmotionQuadrant {
    type Err = ParseQuadrantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HAHV" => Ok(Self::HAHV),
            "HALV" => Ok(Self::HALV),
            "LAHV" => Ok(Self::LAHV),
            "LALV" => Ok(Self::LALV),
            _ => Err(ParseQuadrantError(s.to_string())),
        }
    }
}
