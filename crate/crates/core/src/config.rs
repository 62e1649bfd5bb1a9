//! Run configuration shared by every subcommand.
//!
//! Values resolve as flag > file > default. The file is TOML; every section
//! and key is optional.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featgen::GanConfig;
use crate::fsta::FstaConfig;
use crate::harness::HarnessConfig;
use crate::ietrans;
use crate::soft_transfer::QMode;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "TF_SEED";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub annotations: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IetransSection {
    pub k_i: f64,
    pub k_e: f64,
    pub aff_threshold: f64,
}

impl Default for IetransSection {
    fn default() -> Self {
        IetransSection {
            k_i: ietrans::DEFAULT_KI,
            k_e: ietrans::DEFAULT_KE,
            aff_threshold: ietrans::DEFAULT_AFFINITY_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SoftSection {
    pub k_s: f64,
    pub q_mode: QMode,
}

impl Default for SoftSection {
    fn default() -> Self {
        SoftSection {
            k_s: 10.0,
            q_mode: QMode::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub ks: Vec<usize>,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection { ks: vec![50, 100] }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub ietrans: IetransSection,
    pub soft: SoftSection,
    pub fsta: FstaConfig,
    pub gan: GanConfig,
    pub eval: EvalSection,
    pub harness: HarnessConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.span().map_or(0, |s| 1 + text[..s.start].matches('\n').count()),
            message: e.message().to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    /// Applies `TF_SEED` when it is set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid("cli", format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("ietrans.k_i", self.ietrans.k_i),
            ("ietrans.k_e", self.ietrans.k_e),
            ("soft.k_s", self.soft.k_s),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(Error::invalid("cli", format!("{name} = {v} outside [0, 100]")));
            }
        }
        if !self.ietrans.aff_threshold.is_finite() {
            return Err(Error::invalid("cli", "ietrans.aff_threshold must be finite"));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::invalid("cli", "eval.ks must be a non-empty list of positive integers"));
        }
        self.fsta.validate()?;
        self.gan.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}
