//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizer::{Mode, OptimizerConfig};
use crate::problems::FamilyParams;

/// Environment variable that overrides the configured output directory.
pub const OUT_DIR_ENV: &str = "SEETO_OUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub modes: Vec<Mode>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Latent dimension of the state embedder.
    pub latent_dim: usize,
    /// Seed of the baseline runs that solve the source tasks.
    pub source_seed: u64,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            modes: vec![Mode::Seeto, Mode::Baseline],
            seeds: (0..10).collect(),
            out_dir: PathBuf::from("seeto-out"),
            latent_dim: 16,
            source_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilyParams,
    pub optimizer: OptimizerConfig,
    pub experiment: ExperimentSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let config_err = |message: String| Error::Config {
            path: origin.display().to_string(),
            message,
        };
        let de = toml::Deserializer::parse(text).map_err(|e| config_err(e.to_string()))?;
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            config_err(format!("{field}: {}", e.into_inner().message()))
        })?;
        cfg.validate().map_err(|e| match e {
            Error::Usage(m) => config_err(m),
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::usage(e.to_string()))
    }

    /// Semantic checks; messages start with the offending field path.
    pub fn validate(&self) -> Result<()> {
        let f = &self.family;
        let check = |ok: bool, field: &str, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::usage(format!("{field}: {what}")))
            }
        };
        check(f.outlier_targets <= f.n_target, "family.outlier_targets", "must not exceed family.n_target")?;
        check(f.spread >= 0.0 && f.spread.is_finite(), "family.spread", "must be finite and non-negative")?;
        check(f.target_jitter >= 0.0, "family.target_jitter", "must be non-negative")?;
        check(f.frame_noise >= 0.0, "family.frame_noise", "must be non-negative")?;
        check(f.frames > 0, "family.frames", "must be positive")?;
        check(f.channels * f.height * f.width > 0, "family.channels", "state grid must be non-empty")?;
        check(f.dim > 0 && f.dim <= f.channels * f.height * f.width, "family.dim", "must lie in [1, channels * height * width]")?;
        check(f.delta > 0.0 && f.delta <= 0.5, "family.delta", "must lie in (0, 0.5]")?;
        check(f.map_gain.is_finite(), "family.map_gain", "must be finite")?;

        self.optimizer.validate().map_err(|e| match e {
            Error::Usage(m) => Error::usage(format!("optimizer: {m}")),
            other => other,
        })?;

        let x = &self.experiment;
        check(!x.modes.is_empty(), "experiment.modes", "must name at least one mode")?;
        check(!x.seeds.is_empty(), "experiment.seeds", "must list at least one seed")?;
        check(x.latent_dim > 0, "experiment.latent_dim", "must be positive")?;
        let mut modes = x.modes.clone();
        modes.dedup();
        check(modes.len() == x.modes.len(), "experiment.modes", "must not repeat a mode")?;
        Ok(())
    }

    /// `--out` flag, then the environment, then the config file.
    pub fn resolve_out_dir(&self, flag: Option<&Path>) -> PathBuf {
        if let Some(p) = flag {
            return p.to_path_buf();
        }
        match std::env::var_os(OUT_DIR_ENV) {
            Some(v) if !v.is_empty() => PathBuf::from(v),
            _ => self.experiment.out_dir.clone(),
        }
    }
}
