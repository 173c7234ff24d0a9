//! Std companion of `int-core`: dataset files, checkpoints, the training
//! driver, experiments, benchmarks and the `int` command line.

mod bytes;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod bench;
pub mod experiment;
pub mod format;
pub mod gtdb;
pub mod trainer;
