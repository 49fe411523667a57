//! Conditional step-function distributions for F, G and S_D.

use std::fmt::Debug;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::cox::{CoxModel, TimeOrientation};
use super::features::Subject;
use crate::step::StepFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistKind {
    /// Event time given (a, z).
    CdfF,
    /// Truncation time given (a, z).
    CdfG,
    /// Residual censoring time given (q, a, z).
    SurvivalSd,
}

impl DistKind {
    pub fn is_cdf(&self) -> bool {
        !matches!(self, DistKind::SurvivalSd)
    }
}

/// Anything that can produce a subject-specific step function.
///
/// `q` is ignored by sources of F and G.
pub trait DistributionSource: Send + Sync + Debug {
    fn curve(&self, q: f64, a: u8, z: &[f64]) -> StepFunction;
}

#[derive(Debug, Clone)]
pub struct ConditionalDistribution {
    pub kind: DistKind,
    source: Arc<dyn DistributionSource>,
    cox: Option<Arc<CoxDistribution>>,
}

impl ConditionalDistribution {
    pub fn new(kind: DistKind, source: Arc<dyn DistributionSource>) -> Self {
        Self { kind, source, cox: None }
    }

    pub fn from_cox(dist: CoxDistribution) -> Self {
        let dist = Arc::new(dist);
        Self { kind: dist.kind, source: dist.clone(), cox: Some(dist) }
    }

    /// Same step function for every subject.
    pub fn fixed(kind: DistKind, curve: StepFunction) -> Self {
        Self::new(kind, Arc::new(FixedCurve(curve)))
    }

    pub fn curve(&self, q: f64, a: u8, z: &[f64]) -> StepFunction {
        self.source.curve(q, a, z)
    }

    pub fn eval(&self, t: f64, q: f64, a: u8, z: &[f64]) -> f64 {
        self.curve(q, a, z).eval(t)
    }

    /// The underlying Cox model, when there is one.
    pub fn cox_model(&self) -> Option<&CoxModel> {
        self.cox.as_ref().map(|c| &c.model)
    }
}

#[derive(Debug)]
struct FixedCurve(StepFunction);

impl DistributionSource for FixedCurve {
    fn curve(&self, _q: f64, _a: u8, _z: &[f64]) -> StepFunction {
        self.0.clone()
    }
}

#[derive(Debug, Clone)]
pub struct CoxDistribution {
    pub kind: DistKind,
    pub model: CoxModel,
    /// Forward-scale jump times of a reversed-time fit, ascending. Kept so
    /// that jumps sit exactly on the observed truncation times rather than
    /// on `pivot - (pivot - q)`.
    pub forward_times: Option<Vec<f64>>,
}

impl CoxDistribution {
    pub fn new(kind: DistKind, model: CoxModel) -> Self {
        Self { kind, model, forward_times: None }
    }
}

impl DistributionSource for CoxDistribution {
    fn curve(&self, q: f64, a: u8, z: &[f64]) -> StepFunction {
        let m = &self.model;
        let r = m.linear_predictor(&Subject::new(q, a, z)).exp();
        match m.time_orientation {
            TimeOrientation::Forward => {
                let mut cum = 0.0;
                let values = m
                    .baseline_hazard_increments
                    .iter()
                    .map(|d| {
                        cum += d;
                        let s = (-r * cum).exp();
                        if self.kind.is_cdf() {
                            1.0 - s
                        } else {
                            s
                        }
                    })
                    .collect();
                let initial = if self.kind.is_cdf() { 0.0 } else { 1.0 };
                StepFunction::new(m.baseline_times.clone(), values, initial)
            }
            TimeOrientation::Reversed { pivot } => {
                // Reversed-scale survival S_rev(s) maps to the forward CDF
                // P(Q <= t) = S_rev((pivot - t)-), which jumps at pivot - s_j.
                let k = m.baseline_times.len();
                let mut times = Vec::with_capacity(k);
                let mut values = Vec::with_capacity(k);
                let total: f64 = m.baseline_hazard_increments.iter().sum();
                // Reversed hazard strictly below s_j, i.e. forward times above q_j.
                let mut below = total;
                let forward = self.forward_times.as_ref().filter(|f| f.len() == k);
                for j in (0..k).rev() {
                    times.push(forward.map_or(pivot - m.baseline_times[j], |f| f[k - 1 - j]));
                    below -= m.baseline_hazard_increments[j];
                    values.push((-r * below.max(0.0)).exp());
                }
                if let Some(v) = values.last_mut() {
                    *v = 1.0;
                }
                let initial = (-r * total).exp();
                StepFunction::new(times, values, initial)
            }
        }
    }
}
