//! One JSON document holding every tunable of the pipeline. Missing keys
//! take their defaults, so a partial file only overrides what it names.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::promptgen::DEFAULT_TEMPLATE;
use crate::recognition::{FeatureConfig, RecognitionConfig};
use crate::screening::TechnicalThresholds;
use crate::session::{ParadigmConfig, SignalProfile};
use crate::sigproc::{EpochConfig, OpticalConstants, PpgSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub prompts: PromptConfig,
    pub screening: TechnicalThresholds,
    pub eeg: EegConfig,
    pub fnirs: FnirsConfig,
    pub features: FeatureConfig,
    pub stats: StatsConfig,
    pub recognition: RecognitionConfig,
    pub paradigm: ParadigmConfig,
    pub simulation: SimulationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub count_per_quadrant: usize,
    pub template: String,
    /// Replaces the bundled word lists when set.
    pub lexicon: Option<std::path::PathBuf>,
    pub clip_duration_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegConfig {
    pub band_hz: (f64, f64),
    pub epoch: EpochConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FnirsConfig {
    /// Reference window for optical density; `None` is the whole recording.
    pub i0_window_ms: Option<(f64, f64)>,
    pub constants: OpticalConstants,
    pub ppg_band_hz: (f64, f64),
    pub ppg_source: PpgSource,
    pub baseline_s: f64,
    /// Task length assumed for a trial whose music never stopped.
    pub default_task_s: f64,
    pub systemic_band_hz: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub subjects: usize,
    pub clips_per_quadrant: usize,
    pub profile: SignalProfile,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            prompts: PromptConfig::default(),
            screening: TechnicalThresholds::default(),
            eeg: EegConfig::default(),
            fnirs: FnirsConfig::default(),
            features: FeatureConfig::default(),
            stats: StatsConfig::default(),
            recognition: RecognitionConfig::default(),
            paradigm: ParadigmConfig::default(),
            simulation: SimulationConfig::default(),
        }
    }
}

impl Default for PromptConfig {
    fn default() -> Self {
        Self {
            count_per_quadrant: 59,
            template: DEFAULT_TEMPLATE.to_string(),
            lexicon: None,
            clip_duration_s: 60.0,
        }
    }
}

impl Default for EegConfig {
    fn default() -> Self {
        Self {
            band_hz: (0.1, 40.0),
            epoch: EpochConfig::default(),
        }
    }
}

impl Default for FnirsConfig {
    fn default() -> Self {
        Self {
            i0_window_ms: None,
            constants: OpticalConstants::default(),
            ppg_band_hz: (0.5, 4.0),
            ppg_source: PpgSource::Nm850,
            baseline_s: 5.0,
            default_task_s: 60.0,
            systemic_band_hz: (0.01, 0.1),
        }
    }
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self { alpha: 0.05 }
    }
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            subjects: 5,
            clips_per_quadrant: 5,
            profile: SignalProfile::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: serde_json::Error,
    },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let cfg: Self = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        let band = |name: &str, (lo, hi): (f64, f64)| -> Result<(), ConfigError> {
            if lo > 0.0 && hi > lo && hi.is_finite() {
                Ok(())
            } else {
                bad(format!("{name} must satisfy 0 < lo < hi, got ({lo}, {hi})"))
            }
        };
        band("eeg.band_hz", self.eeg.band_hz)?;
        band("fnirs.ppg_band_hz", self.fnirs.ppg_band_hz)?;
        band("fnirs.systemic_band_hz", self.fnirs.systemic_band_hz)?;
        self.fnirs
            .constants
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("fnirs.constants: {e}")))?;
        if !(self.stats.alpha > 0.0 && self.stats.alpha < 1.0) {
            return bad(format!(
                "stats.alpha must lie in (0, 1), got {}",
                self.stats.alpha
            ));
        }
        if self.eeg.epoch.end_s <= self.eeg.epoch.start_s {
            return bad("eeg.epoch.end_s must exceed start_s".into());
        }
        if self.recognition.k < 2 {
            return bad("recognition.k must be at least 2".into());
        }
        if self.prompts.count_per_quadrant == 0 {
            return bad("prompts.count_per_quadrant must be at least 1".into());
        }
        Ok(())
    }
}
