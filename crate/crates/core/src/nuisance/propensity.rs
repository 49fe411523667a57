//! Propensity score models.

use std::fmt::Debug;
use std::sync::Arc;

use super::features::{FeatureMap, Subject};
use super::logistic::expit;
use crate::trees::Booster;

/// A propensity function supplied from outside, such as a known truth.
pub trait PropensitySource: Send + Sync + Debug {
    fn predict(&self, z: &[f64]) -> f64;
}

#[derive(Debug, Clone)]
pub enum PropensityModel {
    Logistic {
        feature_map: FeatureMap,
        /// Intercept first.
        beta: Vec<f64>,
        /// How the fitting weights were formed.
        provenance: String,
    },
    BoostedTrees {
        feature_map: FeatureMap,
        booster: Booster,
        provenance: String,
    },
    Constant(f64),
    Known(Arc<dyn PropensitySource>),
}

impl PropensityModel {
    /// Untrimmed prediction of P(A = 1 | Z = z).
    pub fn predict(&self, z: &[f64]) -> f64 {
        match self {
            PropensityModel::Logistic { feature_map, beta, .. } => {
                let x = feature_map.apply(&Subject::new(0.0, 0, z));
                expit(beta[0] + x.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>())
            }
            PropensityModel::BoostedTrees { feature_map, booster, .. } => {
                let x = feature_map.apply(&Subject::new(0.0, 0, z));
                expit(booster.predict(&x))
            }
            PropensityModel::Constant(p) => *p,
            PropensityModel::Known(src) => src.predict(z),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            PropensityModel::Logistic { .. } => "logistic",
            PropensityModel::BoostedTrees { .. } => "boosted_trees",
            PropensityModel::Constant(_) => "constant",
            PropensityModel::Known(_) => "known",
        }
    }
}
