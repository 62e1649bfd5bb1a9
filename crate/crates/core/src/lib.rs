//! Label transfer and feature-space augmentation for scene-graph relation
//! datasets.

pub mod cli;
pub mod config;
pub mod error;
pub mod featgen;
pub mod fsta;
pub mod harness;
pub mod ietrans;
pub mod ingest;
pub mod metrics;
pub mod mp_sampler;
pub mod rng;
pub mod soft_transfer;
pub mod types;

pub use error::{Error, Result};
