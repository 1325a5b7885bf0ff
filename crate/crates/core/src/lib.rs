pub mod analysis;
pub mod audio;
pub mod config;
pub mod pipeline;
pub mod promptgen;
pub mod quadrant;
pub mod recognition;
pub mod screening;
pub mod session;
pub mod sigproc;
