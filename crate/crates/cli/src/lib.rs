//! Command-line pipeline: scene and data generation, training, planning,
//! evaluation, ablation and plotting.

pub mod commands;
pub mod config;
pub mod exit;
pub mod plot;
