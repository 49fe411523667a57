//! Experiment configuration: a JSON document whose keys may be overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use ltrc_core::cate::{LearnerConfig, LossKind};
use ltrc_core::nuisance::NuisanceConfig;
use ltrc_core::sim::bench::AteEstimator;
use ltrc_core::{Error, Result, Transform};
use serde::{Deserialize, Serialize};

/// A nuisance configuration given either as a label such as
/// `Cox1/lgs1-Cox1-Cox1` or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NuisanceChoice {
    Label(String),
    Full(Box<NuisanceConfig>),
}

impl NuisanceChoice {
    pub fn resolve(&self) -> Result<NuisanceConfig> {
        match self {
            NuisanceChoice::Label(l) => NuisanceConfig::from_label(l),
            NuisanceChoice::Full(c) => Ok((**c).clone()),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Observed-data CSV.
    pub data: Option<PathBuf>,
    /// Number of covariate columns in `data`.
    pub covariates: Option<usize>,
    pub scenario: Option<String>,
    pub n: Option<usize>,
    pub ns: Option<Vec<usize>>,
    pub nuisance: Option<NuisanceChoice>,
    pub estimator: Option<AteEstimator>,
    pub loss: Option<LossKind>,
    pub learner: Option<LearnerConfig>,
    /// CATE benchmark arms, e.g. `ltrcR`, `IPW.S-o`, `ltrcDR@0.05`.
    pub arms: Option<Vec<String>>,
    /// ATE table rows, 1-based.
    pub rows: Option<Vec<usize>>,
    /// Transformation of the event time: `surv:T`, `rmst:T`, `log`.
    pub nu: Option<String>,
    pub folds: Option<usize>,
    pub trim_floor: Option<f64>,
    pub bootstrap: Option<usize>,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub truth_atoms: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($f:ident),*) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f; })*
    };
}

impl ExperimentConfig {
    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Keys set in `top` replace those in `self`.
    pub fn overlay(mut self, top: ExperimentConfig) -> Self {
        overlay!(
            self, top, data, covariates, scenario, n, ns, nuisance, estimator, loss, learner, arms, rows, nu, folds, trim_floor, bootstrap,
            reps, seed, output_dir, truth_atoms
        );
        self
    }

    /// Checks every key that is set; called before any computation.
    pub fn validate(&self) -> Result<()> {
        let arg = |m: String| Err(Error::Argument(m));
        if let Some(f) = self.trim_floor {
            if !(f > 0.0 && f < 0.5) {
                return arg(format!("trim_floor must lie in (0, 0.5), got {f}"));
            }
        }
        if let Some(k) = self.folds {
            if k < 2 {
                return arg(format!("folds must be at least 2, got {k}"));
            }
        }
        if self.reps == Some(0) {
            return arg("reps must be positive".into());
        }
        if self.n == Some(0) || self.ns.as_ref().is_some_and(|v| v.is_empty() || v.contains(&0)) {
            return arg("sample sizes must be positive".into());
        }
        if self.covariates == Some(0) {
            return arg("covariates must be positive".into());
        }
        if let Some(rows) = &self.rows {
            if let Some(r) = rows.iter().find(|r| !(1..=15).contains(*r)) {
                return arg(format!("table rows are 1..=15, got {r}"));
            }
        }
        if let Some(s) = &self.scenario {
            ltrc_core::ScenarioKind::parse(s)?;
        }
        if let Some(nu) = &self.nu {
            Transform::parse(nu)?;
        }
        if let Some(c) = &self.nuisance {
            c.resolve()?.validate()?;
        }
        if let Some(arms) = &self.arms {
            for a in arms {
                crate::parse_arm(a)?;
            }
        }
        Ok(())
    }

    pub fn nu_or(&self, default: Transform) -> Result<Transform> {
        self.nu.as_deref().map_or(Ok(default), Transform::parse)
    }

    pub fn trim_floor(&self) -> f64 {
        self.trim_floor.unwrap_or(0.1)
    }

    pub fn folds(&self) -> usize {
        self.folds.unwrap_or(5)
    }

    /// Seed from the config, then `LTRC_SEED`, then 1.
    pub fn seed(&self) -> u64 {
        self.seed.or_else(|| std::env::var("LTRC_SEED").ok().and_then(|s| s.parse().ok())).unwrap_or(1)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
    }

    pub fn nuisance_or(&self, default: &str) -> Result<NuisanceConfig> {
        match &self.nuisance {
            Some(c) => c.resolve(),
            None => NuisanceConfig::from_label(default),
        }
    }
}
