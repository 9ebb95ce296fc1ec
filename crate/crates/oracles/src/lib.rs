//! Deliberately slow reference implementations.
//!
//! Everything here is written as literal loops over `Vec<f64>` rows with
//! no shared code, no matrix library, and no clever algebra, so the test
//! suites can cross-check the optimized kernels against an independent
//! reading of the same definitions. Do not "optimize" this crate; its
//! value is that it stays naive.

pub mod losses;
pub mod metrics;
