//! Labels, EEG band power, hemodynamic features and the statistics used to
//! relate them to ratings.

pub mod bandpower;
pub mod fnirs_features;
pub mod labels;
pub mod report;
pub mod stats;

pub use bandpower::*;
pub use fnirs_features::*;
pub use labels::*;
pub use report::*;
pub use stats::*;
