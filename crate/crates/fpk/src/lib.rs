//! Experiment orchestration, caching and file formats for `fpk-core`.

pub mod cache;
pub mod compare;
pub mod config;
pub mod io;
pub mod scenarios;
pub mod pipeline;
pub mod run;
pub mod verbs;

pub use config::ExperimentConfig;
