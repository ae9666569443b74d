//! JSON experiment configuration shared by the command-line subcommands.
//!
//! ```json
//! {
//!   "group": {"kind": "diag_signs", "d": 2},
//!   "theta_star": [1.5, 0.0],
//!   "seed": 7,
//!   "sample": {"n": 1000},
//!   "estimate": {"restarts": 8, "max_iter": 500, "rel_tol": 1e-10, "polish": true},
//!   "fisher": {"n_mc": 200000},
//!   "rates": {"n_grid": [250, 500, 1000, 2000], "trials": 300, "quantile": 0.5}
//! }
//! ```
//!
//! Unknown keys are rejected at every level.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::group::{FiniteIsometryGroup, GroupSpec};
use crate::mle::FitConfig;
use crate::model::MixtureModel;
use crate::rates::RateConfig;

pub const DEFAULT_FISHER_N_MC: usize = 200_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleBlock {
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FisherBlock {
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
}

fn default_n_mc() -> usize {
    DEFAULT_FISHER_N_MC
}

impl Default for FisherBlock {
    fn default() -> Self {
        Self { n_mc: DEFAULT_FISHER_N_MC }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesBlock {
    pub n_grid: Vec<usize>,
    pub trials: usize,
    #[serde(default = "default_quantile")]
    pub quantile: f64,
}

fn default_quantile() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub group: GroupSpec,
    pub theta_star: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<SampleBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimate: Option<FitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rates: Option<RatesBlock>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Checks the parts every subcommand relies on: the group builds and
    /// θ* has matching length. Command blocks are checked where used.
    pub fn validate(&self) -> Result<()> {
        let group = self.build_group()?;
        if group.dim() != self.theta_star.len() {
            return Err(Error::ConfigInvalid(format!(
                "theta_star has length {}, group acts on dimension {}",
                self.theta_star.len(),
                group.dim()
            )));
        }
        if self.theta_star.iter().any(|x| !x.is_finite()) {
            return Err(Error::ConfigInvalid("theta_star has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn build_group(&self) -> Result<FiniteIsometryGroup> {
        self.group.build().map_err(|e| match e {
            Error::ConfigInvalid(_) => e,
            other => Error::ConfigInvalid(other.to_string()),
        })
    }

    pub fn model(&self) -> Result<MixtureModel> {
        MixtureModel::new(Arc::new(self.build_group()?), self.theta_star.clone())
    }

    pub fn fit_config(&self) -> FitConfig {
        self.estimate.clone().unwrap_or_default()
    }

    pub fn fisher_n_mc(&self) -> usize {
        self.fisher.as_ref().map_or(DEFAULT_FISHER_N_MC, |f| f.n_mc)
    }

    pub fn rate_config(&self) -> Result<RateConfig> {
        let block = self
            .rates
            .as_ref()
            .ok_or_else(|| Error::ConfigInvalid("missing `rates` block".into()))?;
        let rc = RateConfig {
            group: self.group.clone(),
            theta_star: self.theta_star.clone(),
            n_grid: block.n_grid.clone(),
            trials: block.trials,
            mle: self.fit_config(),
            master_seed: self.seed,
            quantile: block.quantile,
        };
        rc.validate()?;
        Ok(rc)
    }
}
