//! Configuration, synthetic data generation, and the command
//! implementations behind the `mlcld` binary.

pub mod commands;
pub mod config;
pub mod datagen;
