//! Helpers shared by the criterion benches.

pub use mlcld_core as core;
