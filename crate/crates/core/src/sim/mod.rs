//! Simulation designs with known truths, and replication benchmarks.
//!
//! Each design draws covariates `Z ~ Uniform(-1, 1)²`, treatment from a
//! logistic propensity, two potential event times, a truncation time whose
//! reversal `τ₂ - Q` follows a proportional hazards model with a
//! `Uniform(0, τ₂)` baseline, and an exponential residual censoring time.
//! Draws with `Q >= T` are discarded.

pub mod bench;

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use bench::{
    cate_arms, run_ate_benchmark, run_cate_benchmark, table1_row, table1_rows, AteBenchOptions, AteBenchmark, AteEstimator, AteReplication, AteRowSpec, AteRowSummary,
    BenchmarkResult, CateArm, CateBenchOptions, CateBenchmark, CateCellSummary, CateReplication,
};

use crate::data::{Dataset, FullRecord, Transform};
use crate::error::{Error, Result};
use crate::nuisance::logistic::expit;
use crate::nuisance::{ConditionalDistribution, DistKind, DistributionSource, NuisanceBundle, PropensityModel, PropensitySource};
use crate::rng::stream_rng;
use crate::step::StepFunction;

/// Shape of the Weibull event time in the ATE design.
pub const ATE_T_SHAPE: f64 = 1.5;
/// Linear predictor of the ATE event-time hazard: intercept, a, z1, z2.
pub const ATE_T_LP: [f64; 4] = [-2.0, 0.4, 0.2, 0.3];
/// Linear predictor of the reversed truncation hazard in the ATE design.
pub const ATE_Q_LP: [f64; 4] = [-0.6, 0.6, 0.4, 0.2];
/// Log-rate of the exponential residual censoring time: intercept, a, z1, z2.
pub const D_LOG_RATE: [f64; 4] = [-1.5, 0.3, 0.1, 0.2];
/// Reversed truncation hazard in the CATE designs: intercept, z1, a·z2.
pub const CATE_Q_LP: [f64; 3] = [-0.6, 0.4, 0.5];
/// Weibull noise on the log event time in the CATE designs.
pub const CATE_EPS_SHAPE: f64 = 2.0;
pub const CATE_EPS_SCALE: f64 = 0.04;
/// ATE for `ν(t) = 1(t > 3)` under the ATE design.
pub const THETA0_ATE: f64 = -0.1163;

/// Mean of the CATE noise before centering, `scale · Γ(1 + 1/2)`.
pub fn cate_eps_mean() -> f64 {
    CATE_EPS_SCALE * PI.sqrt() / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Ate,
    CateI,
    CateIi,
    CateIii,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ate" => Ok(ScenarioKind::Ate),
            "i" | "cate_i" | "cate-i" => Ok(ScenarioKind::CateI),
            "ii" | "cate_ii" | "cate-ii" => Ok(ScenarioKind::CateIi),
            "iii" | "cate_iii" | "cate-iii" => Ok(ScenarioKind::CateIii),
            _ => Err(Error::Argument(format!("unknown scenario '{s}'; expected ate, i, ii or iii"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            ScenarioKind::Ate => "ate",
            ScenarioKind::CateI => "cate_i",
            ScenarioKind::CateIi => "cate_ii",
            ScenarioKind::CateIii => "cate_iii",
        }
    }

    pub fn is_cate(&self) -> bool {
        !matches!(self, ScenarioKind::Ate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Location shift of the ATE event time.
    pub tau1: f64,
    /// Upper end of the truncation time support.
    pub tau2: f64,
    /// Remove every treatment effect on the event time.
    #[serde(default)]
    pub null_effect: bool,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self { kind, tau1: 1.0, tau2: 5.0, null_effect: false }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(Self::new(ScenarioKind::parse(s)?))
    }

    fn a_eff(&self, a: u8) -> f64 {
        if self.null_effect {
            0.0
        } else {
            a as f64
        }
    }

    /// Default transformation of the event time.
    pub fn default_nu(&self) -> Transform {
        match self.kind {
            ScenarioKind::Ate => Transform::SurvivalIndicator { t0: 3.0 },
            _ => Transform::Log,
        }
    }

    pub fn propensity(&self, z: &[f64]) -> f64 {
        expit(z[0] - z[1])
    }

    /// Log hazard ratio of the ATE event time.
    pub fn lp_t(&self, a: u8, z: &[f64]) -> f64 {
        let c = ATE_T_LP;
        c[0] + c[1] * self.a_eff(a) + c[2] * z[0] + c[3] * z[1]
    }

    /// Location of `log T` in the CATE designs, before noise.
    pub fn log_t_location(&self, a: u8, z: &[f64]) -> f64 {
        let a = self.a_eff(a);
        let m = match self.kind {
            ScenarioKind::CateI => -0.2 * a * z[0] + 0.2 * z[1].abs().sqrt(),
            ScenarioKind::CateIi => -0.2 * a * ((z[0] + z[1]) / 2.0).powi(2) + 0.2 * z[1],
            ScenarioKind::CateIii => -0.2 * a * (PI * z[0]).sin() + 0.2 * a * z[1].abs().sqrt(),
            ScenarioKind::Ate => 0.0,
        };
        0.8 + 0.2 * a + m
    }

    /// Log hazard ratio of the reversed truncation time.
    pub fn lp_q(&self, a: u8, z: &[f64]) -> f64 {
        let a = a as f64;
        match self.kind {
            ScenarioKind::Ate => {
                let c = ATE_Q_LP;
                c[0] + c[1] * a + c[2] * z[0] + c[3] * z[1]
            }
            _ => {
                let c = CATE_Q_LP;
                c[0] + c[1] * z[0] + c[2] * a * z[1]
            }
        }
    }

    pub fn censoring_rate(&self, a: u8, z: &[f64]) -> f64 {
        let c = D_LOG_RATE;
        (c[0] + c[1] * a as f64 + c[2] * z[0] + c[3] * z[1]).exp()
    }

    /// `P(T(a) <= t | z)`, with `offset` added to the linear predictor.
    pub fn f_cdf(&self, t: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        match self.kind {
            ScenarioKind::Ate => {
                let s = t - self.tau1;
                if s <= 0.0 {
                    0.0
                } else {
                    1.0 - (-s.powf(ATE_T_SHAPE) * (self.lp_t(a, z) + offset).exp()).exp()
                }
            }
            _ => {
                if t <= 0.0 {
                    return 0.0;
                }
                let w = t.ln() - self.log_t_location(a, z) - offset + cate_eps_mean();
                if w <= 0.0 {
                    0.0
                } else {
                    1.0 - (-(w / CATE_EPS_SCALE).powf(CATE_EPS_SHAPE)).exp()
                }
            }
        }
    }

    pub fn f_quantile(&self, p: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        let e = -(1.0 - p).ln();
        match self.kind {
            ScenarioKind::Ate => self.tau1 + (e / (self.lp_t(a, z) + offset).exp()).powf(1.0 / ATE_T_SHAPE),
            _ => {
                let w = CATE_EPS_SCALE * e.powf(1.0 / CATE_EPS_SHAPE);
                (self.log_t_location(a, z) + offset + w - cate_eps_mean()).exp()
            }
        }
    }

    /// `P(Q <= t | a, z) = (t/τ₂)^{exp(lp)}` on `[0, τ₂]`.
    pub fn g_cdf(&self, t: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        if t <= 0.0 {
            0.0
        } else if t >= self.tau2 {
            1.0
        } else {
            (t / self.tau2).powf((self.lp_q(a, z) + offset).exp())
        }
    }

    pub fn g_quantile(&self, p: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        self.tau2 * p.powf(1.0 / (self.lp_q(a, z) + offset).exp())
    }

    pub fn sd_survival(&self, d: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        (-d.max(0.0) * self.censoring_rate(a, z) * offset.exp()).exp()
    }

    pub fn sd_quantile(&self, p: f64, a: u8, z: &[f64], offset: f64) -> f64 {
        -(1.0 - p).ln() / (self.censoring_rate(a, z) * offset.exp())
    }

    /// True CATE of `ν = log` at z.
    pub fn tau(&self, z: &[f64]) -> f64 {
        true_tau(self.kind, z)
    }

    /// The `j`-th full-data draw; a pure function of `(seed, j)`.
    pub fn draw(&self, seed: u64, j: u64) -> FullRecord {
        let mut rng = stream_rng(seed, j);
        let mut u = || -> f64 { rng.random::<f64>() };
        let z = vec![2.0 * u() - 1.0, 2.0 * u() - 1.0];
        let a = (u() < self.propensity(&z)) as u8;
        let (u1, u0, uq, ud) = (u(), u(), u(), u());
        let t1 = self.f_quantile(u1, 1, &z, 0.0);
        let t0 = self.f_quantile(u0, 0, &z, 0.0);
        let q = self.g_quantile(uq, a, &z, 0.0);
        let d = self.sd_quantile(ud, a, &z, 0.0);
        FullRecord { t1, t0, q, d, a, z }
    }

    /// Draw until `n_observed` untruncated records are collected. The full
    /// sample holds every draw, truncated or not.
    pub fn gen_sample(&self, n_observed: usize, seed: u64) -> Result<(Vec<FullRecord>, Dataset)> {
        if n_observed == 0 {
            return Err(Error::Argument("n_observed must be at least 1".into()));
        }
        let mut full = Vec::with_capacity(n_observed * 3 / 2);
        let mut obs = Vec::with_capacity(n_observed);
        let mut j = 0;
        while obs.len() < n_observed {
            let r = self.draw(seed, j);
            if let Some(o) = r.observe() {
                obs.push(o);
            }
            full.push(r);
            j += 1;
        }
        Ok((full, Dataset::new(2, obs)))
    }
}

pub fn gen_ate_sample(n_observed: usize, seed: u64) -> Result<(Vec<FullRecord>, Dataset)> {
    ScenarioSpec::new(ScenarioKind::Ate).gen_sample(n_observed, seed)
}

pub fn gen_cate_sample(n_observed: usize, scenario: &str, seed: u64) -> Result<(Vec<FullRecord>, Dataset)> {
    let kind = ScenarioKind::parse(scenario)?;
    if !kind.is_cate() {
        return Err(Error::Argument(format!("'{scenario}' is not a CATE scenario")));
    }
    ScenarioSpec::new(kind).gen_sample(n_observed, seed)
}

pub fn true_tau(kind: ScenarioKind, z: &[f64]) -> f64 {
    match kind {
        ScenarioKind::CateI => 0.2 - 0.2 * z[0],
        ScenarioKind::CateIi => 0.2 - 0.2 * ((z[0] + z[1]) / 2.0).powi(2),
        ScenarioKind::CateIii => 0.2 - 0.2 * (PI * z[0]).sin() + 0.2 * z[1].abs().sqrt(),
        ScenarioKind::Ate => f64::NAN,
    }
}

/// Monte Carlo full-data contrast `E ν(T(1)) - E ν(T(0))` and its MC SE.
pub fn mc_true_theta_with_se(spec: &ScenarioSpec, nu: &Transform, n_mc: usize, seed: u64) -> (f64, f64) {
    const CHUNK: usize = 1 << 16;
    let chunks = n_mc.div_ceil(CHUNK);
    let (s, ss) = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream_rng(seed, 0x7e7a_0000 + c as u64);
            let m = CHUNK.min(n_mc - c * CHUNK);
            let (mut s, mut ss) = (0.0, 0.0);
            for _ in 0..m {
                let z = [2.0 * rng.random::<f64>() - 1.0, 2.0 * rng.random::<f64>() - 1.0];
                let t1 = spec.f_quantile(rng.random(), 1, &z, 0.0);
                let t0 = spec.f_quantile(rng.random(), 0, &z, 0.0);
                let d = nu.apply(t1) - nu.apply(t0);
                s += d;
                ss += d * d;
            }
            (s, ss)
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = n_mc as f64;
    let mean = s / n;
    let var = (ss / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn mc_true_theta(spec: &ScenarioSpec, nu: &Transform, n_mc: usize, seed: u64) -> Result<f64> {
    if n_mc < 100_000 {
        return Err(Error::Argument(format!("n_mc must be at least 1e5, got {n_mc}")));
    }
    Ok(mc_true_theta_with_se(spec, nu, n_mc, seed).0)
}

/// Offsets added to the linear predictor of each true nuisance; nonzero
/// values give deliberately wrong working models.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct TruthOffsets {
    pub f: f64,
    pub g: f64,
    pub sd: f64,
    pub pi: f64,
}

/// A true conditional distribution discretized at `atoms` quantile atoms
/// `(k - 1/2)/M`, `k = 1..M`.
#[derive(Debug, Clone)]
pub struct TruthDistribution {
    pub spec: ScenarioSpec,
    pub kind: DistKind,
    pub atoms: usize,
    pub offset: f64,
}

impl DistributionSource for TruthDistribution {
    fn curve(&self, _q: f64, a: u8, z: &[f64]) -> StepFunction {
        let m = self.atoms as f64;
        let mut times = Vec::with_capacity(self.atoms);
        let mut values = Vec::with_capacity(self.atoms);
        for k in 1..=self.atoms {
            let p = (k as f64 - 0.5) / m;
            let t = match self.kind {
                DistKind::CdfF => self.spec.f_quantile(p, a, z, self.offset),
                DistKind::CdfG => self.spec.g_quantile(p, a, z, self.offset),
                DistKind::SurvivalSd => self.spec.sd_quantile(p, a, z, self.offset),
            };
            // Atoms closer than rounding merge into one jump.
            if times.last().is_some_and(|&l: &f64| t <= l) {
                *values.last_mut().unwrap() = k as f64 / m;
                continue;
            }
            times.push(t);
            values.push(k as f64 / m);
        }
        if self.kind == DistKind::SurvivalSd {
            for v in values.iter_mut() {
                *v = 1.0 - *v;
            }
            StepFunction::new(times, values, 1.0)
        } else {
            StepFunction::new(times, values, 0.0)
        }
    }
}

#[derive(Debug, Clone)]
pub struct TruthPropensity {
    pub spec: ScenarioSpec,
    pub offset: f64,
}

impl PropensitySource for TruthPropensity {
    fn predict(&self, z: &[f64]) -> f64 {
        expit(z[0] - z[1] + self.offset)
    }
}

/// The true nuisances of a design, optionally perturbed.
pub fn truth_bundle(spec: &ScenarioSpec, atoms: usize, trim_floor: f64, offsets: TruthOffsets) -> NuisanceBundle {
    let dist = |kind, offset| ConditionalDistribution::new(kind, Arc::new(TruthDistribution { spec: *spec, kind, atoms, offset }));
    NuisanceBundle::oracle(
        PropensityModel::Known(Arc::new(TruthPropensity { spec: *spec, offset: offsets.pi })),
        dist(DistKind::CdfF, offsets.f),
        dist(DistKind::CdfG, offsets.g),
        dist(DistKind::SurvivalSd, offsets.sd),
        trim_floor,
    )
}
