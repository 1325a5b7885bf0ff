//! Device-stream preprocessing for EEG and fNIRS.

pub mod eeg;
pub mod filter;
pub mod fnirs;
pub mod io;
pub mod timeline;

pub use eeg::{
    epoch_eeg, exclude_artifacts, filter_eeg, EegBaseline, EegEpoch, EegError, EegRecording,
    EpochConfig, EpochSet, SkipReason, EEG_RATE,
};
pub use filter::{bandpass, FilterError, Sos};
pub use fnirs::{
    extract_ppg, fnirs_baseline_correct, intensity_to_od, mbll, systemic_filter, BaselineCorrected,
    Extinction, FnirsError, FnirsRecording, HemodynamicSeries, OpticalConstants, OpticalDensity,
    PpgSeries, PpgSource, FNIRS_CHANNELS, FNIRS_RATE,
};
pub use timeline::{Event, EventKind, EventTimeline, TimelineError};
