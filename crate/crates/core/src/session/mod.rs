//! Experiment runtime: participant schedule, paradigm state machine,
//! streaming sample intake and the per-session dataset bundle.

pub mod bundle;
pub mod ingest;
pub mod journal;
pub mod machine;
pub mod plan;
pub mod simulate;

pub use bundle::*;
pub use ingest::*;
pub use journal::*;
pub use machine::*;
pub use plan::*;
pub use simulate::*;
