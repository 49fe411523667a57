//! Average treatment effect estimation: the doubly robust estimating
//! function, its closed-form root, cross-fitting, IPW and full-data
//! benchmarks, and the nonparametric bootstrap.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::data::{make_folds, trim_probability, Dataset, FullRecord, ObservedRecord, Transform};
use crate::error::{Error, Result};
use crate::nuisance::NuisanceBundle;
use crate::operators::{mu_curve, v_closed_form, RecordCurves, Trim};
use crate::rng::stream_rng;

/// Normalizers closer to zero than this are treated as degenerate.
pub const DEGENERATE_NORMALIZER: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteMethod {
    Dr,
    DrCrossfit,
    Ipw,
    FullData,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteResult {
    pub theta_hat: f64,
    pub se_model: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub se_boot: Option<f64>,
    pub ci_level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub method: AteMethod,
    pub trim_event_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub folds: Option<usize>,
    pub n: usize,
}

/// Two-sided standard normal quantile for a confidence level.
pub fn normal_quantile(level: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(0.5 + level / 2.0)
}

impl AteResult {
    fn new(theta_hat: f64, se_model: f64, method: AteMethod, trim_event_count: usize, folds: Option<usize>, n: usize) -> Self {
        let mut r = Self {
            theta_hat,
            se_model,
            se_boot: None,
            ci_level: 0.95,
            ci_lower: f64::NAN,
            ci_upper: f64::NAN,
            method,
            trim_event_count,
            folds,
            n,
        };
        r.set_ci_level(0.95);
        r
    }

    /// Recompute the interval around `theta_hat` with the model SE.
    pub fn set_ci_level(&mut self, level: f64) {
        let z = normal_quantile(level);
        self.ci_level = level;
        self.ci_lower = self.theta_hat - z * self.se_model;
        self.ci_upper = self.theta_hat + z * self.se_model;
    }

    pub fn covers(&self, theta: f64) -> bool {
        self.ci_lower <= theta && theta <= self.ci_upper
    }

    /// Whether `theta_hat ± z·se_boot` covers `theta`.
    pub fn boot_covers(&self, theta: f64) -> Option<bool> {
        let z = normal_quantile(self.ci_level);
        self.se_boot.map(|s| (self.theta_hat - theta).abs() <= z * s)
    }
}

/// Everything U needs from one record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecordTerms {
    pub a: u8,
    pub v_nu: f64,
    pub v_one: f64,
    pub mu1: f64,
    pub mu0: f64,
    /// Propensity trimmed to `[floor, 1 - floor]`.
    pub pi: f64,
    pub trim_events: usize,
}

impl RecordTerms {
    pub fn mu_a(&self) -> f64 {
        if self.a == 1 {
            self.mu1
        } else {
            self.mu0
        }
    }

    /// `(A - π)/{π(1 - π)}`.
    pub fn residual_weight(&self) -> f64 {
        (self.a as f64 - self.pi) / (self.pi * (1.0 - self.pi))
    }

    /// The θ-free part of U; `U(θ) = numerator - V(1) θ`.
    pub fn numerator(&self) -> f64 {
        self.residual_weight() * (self.v_nu - self.v_one * self.mu_a()) + self.v_one * (self.mu1 - self.mu0)
    }

    pub fn u(&self, theta: f64) -> f64 {
        self.numerator() - self.v_one * theta
    }
}

/// Trim a propensity to `[floor, 1 - floor]`, reporting whether it bound.
pub fn trim_propensity(p: f64, floor: f64) -> (f64, bool) {
    let t = trim_probability(p, floor).min(1.0 - floor);
    (t, t != p)
}

pub fn record_terms(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform) -> Result<RecordTerms> {
    if r.a > 1 {
        return Err(Error::Domain(format!("treatment must be binary, got {}", r.a)));
    }
    let f1 = bundle.f.curve(r.q, 1, &r.z);
    let f0 = bundle.f.curve(r.q, 0, &r.z);
    let nu_f = |t: f64| nu.apply(t);
    let mu1 = mu_curve(&f1, &nu_f)?;
    let mu0 = mu_curve(&f0, &nu_f)?;
    let curves = RecordCurves {
        f: if r.a == 1 { f1 } else { f0 },
        g: bundle.g.curve(r.q, r.a, &r.z),
        sd: bundle.sd.curve(r.q, r.a, &r.z),
    };
    let one = |_t: f64| 1.0;
    let v = v_closed_form(r, &curves, &[&nu_f, &one], Trim::of(bundle))?;
    let (pi, bound) = trim_propensity(bundle.pi.predict(&r.z), bundle.trim_floor);
    Ok(RecordTerms {
        a: r.a,
        v_nu: v.values[0],
        v_one: v.values[1],
        mu1,
        mu0,
        pi,
        trim_events: v.trim_events + bound as usize,
    })
}

/// Record terms for every record, in record order.
pub fn dataset_terms(data: &Dataset, bundle: &NuisanceBundle, nu: &Transform) -> Result<Vec<RecordTerms>> {
    data.records.par_iter().map(|r| record_terms(r, bundle, nu)).collect()
}

/// The doubly robust estimating function at θ.
pub fn u_value(r: &ObservedRecord, theta: f64, bundle: &NuisanceBundle, nu: &Transform) -> Result<f64> {
    Ok(record_terms(r, bundle, nu)?.u(theta))
}

/// Closed-form root of `Σ U_i(θ) = 0` and its model-based standard error
/// `{Σ U_i(θ̂)²}^{1/2} / |Σ V_i(1)|`.
pub fn solve_from_terms(terms: &[RecordTerms], method: AteMethod, folds: Option<usize>) -> Result<AteResult> {
    let den: f64 = terms.iter().map(|t| t.v_one).sum();
    if den.abs() < DEGENERATE_NORMALIZER || !den.is_finite() {
        return Err(Error::Degenerate(format!("sum of V(1) is {den:e}; the estimating equation has no unique root")));
    }
    let num: f64 = terms.iter().map(|t| t.numerator()).sum();
    let theta = num / den;
    let ss: f64 = terms.iter().map(|t| t.u(theta).powi(2)).sum();
    let se = ss.sqrt() / den.abs();
    let trims = terms.iter().map(|t| t.trim_events).sum();
    Ok(AteResult::new(theta, se, method, trims, folds, terms.len()))
}

pub fn solve_ate(data: &Dataset, bundle: &NuisanceBundle, nu: &Transform) -> Result<AteResult> {
    bundle.check()?;
    solve_from_terms(&dataset_terms(data, bundle, nu)?, AteMethod::Dr, None)
}

/// Out-of-fold record terms: fold `j` is evaluated with nuisances fitted on
/// its complement by `fit`.
pub fn crossfit_terms<F>(data: &Dataset, k: usize, seed: u64, nu: &Transform, fit: F) -> Result<Vec<RecordTerms>>
where
    F: Fn(&Dataset, usize) -> Result<NuisanceBundle> + Sync,
{
    let folds = make_folds(data.len(), k, seed)?;
    let per_fold: Vec<(Vec<usize>, Vec<RecordTerms>)> = (1..=k)
        .into_par_iter()
        .map(|j| {
            let train = data.subset(&folds.complement(j));
            let bundle = fit(&train, j).map_err(|e| e.in_fold(j))?;
            let members = folds.members(j);
            let terms = members
                .iter()
                .map(|&i| record_terms(&data.records[i], &bundle, nu))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_fold(j))?;
            Ok((members, terms))
        })
        .collect::<Result<_>>()?;
    let mut out: Vec<Option<RecordTerms>> = vec![None; data.len()];
    for (members, terms) in per_fold {
        for (i, t) in members.into_iter().zip(terms) {
            out[i] = Some(t);
        }
    }
    Ok(out.into_iter().map(|t| t.expect("folds partition the records")).collect())
}

/// Cross-fitted estimator with a caller-supplied nuisance fitter.
pub fn crossfit_ate_with<F>(data: &Dataset, k: usize, seed: u64, nu: &Transform, fit: F) -> Result<AteResult>
where
    F: Fn(&Dataset, usize) -> Result<NuisanceBundle> + Sync,
{
    let terms = crossfit_terms(data, k, seed, nu, fit)?;
    solve_from_terms(&terms, AteMethod::DrCrossfit, Some(k))
}

/// Cross-fitted estimator with scheme (a) nuisance fits.
pub fn crossfit_ate(data: &Dataset, k: usize, cfg: &crate::nuisance::NuisanceConfig, nu: &Transform, trim_floor: f64, seed: u64) -> Result<AteResult> {
    cfg.validate()?;
    crossfit_ate_with(data, k, seed, nu, |train, j| {
        let mut c = cfg.clone();
        c.seed = crate::rng::derived_seed(cfg.seed, j as u64);
        crate::nuisance::fit_scheme_a(train, &c, trim_floor)
    })
}

/// Hájek IPW contrast with weights `δ/{G(X) S_D(X-Q)}` times the inverse
/// arm propensity, and a sandwich SE that treats the weights as known.
pub fn ipw_ate(data: &Dataset, bundle: &NuisanceBundle, nu: &Transform) -> Result<AteResult> {
    bundle.check()?;
    let fl = bundle.trim_floor;
    let rows: Vec<(u8, f64, f64, usize)> = data
        .records
        .par_iter()
        .map(|r| {
            if r.delta == 0 {
                return (r.a, 0.0, 0.0, 0);
            }
            let mut trims = 0;
            let mut tp = |p: f64| {
                let t = trim_probability(p, fl);
                trims += (t != p) as usize;
                t
            };
            let g = tp(bundle.g.eval(r.x, r.q, r.a, &r.z));
            let s = tp(bundle.sd.eval(r.x - r.q, r.q, r.a, &r.z));
            let (pi, bound) = trim_propensity(bundle.pi.predict(&r.z), fl);
            let arm = if r.a == 1 { pi } else { 1.0 - pi };
            (r.a, 1.0 / (g * s * arm), nu.apply(r.x), trims + bound as usize)
        })
        .collect();
    let (mut w1, mut w0, mut s1, mut s0) = (0.0, 0.0, 0.0, 0.0);
    for &(a, w, y, _) in &rows {
        if a == 1 {
            w1 += w;
            s1 += w * y;
        } else {
            w0 += w;
            s0 += w * y;
        }
    }
    if !(w1 > 0.0 && w0 > 0.0) {
        return Err(Error::Degenerate("an arm has zero total IPW weight".into()));
    }
    let (m1, m0) = (s1 / w1, s0 / w0);
    let ss: f64 = rows
        .iter()
        .map(|&(a, w, y, _)| if a == 1 { w * (y - m1) / w1 } else { -w * (y - m0) / w0 })
        .map(|v| v * v)
        .sum();
    let trims = rows.iter().map(|r| r.3).sum();
    Ok(AteResult::new(m1 - m0, ss.sqrt(), AteMethod::Ipw, trims, None, data.len()))
}

/// Contrast of ν over the potential outcomes of a full sample.
pub fn full_data_ate(full: &[FullRecord], nu: &Transform) -> Result<AteResult> {
    if full.is_empty() {
        return Err(Error::Argument("empty full-data sample".into()));
    }
    let n = full.len() as f64;
    let c: Vec<f64> = full.iter().map(|r| nu.apply(r.t1) - nu.apply(r.t0)).collect();
    let mean = c.iter().sum::<f64>() / n;
    let var = if full.len() > 1 { c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    Ok(AteResult::new(mean, (var / n).sqrt(), AteMethod::FullData, 0, None, full.len()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub se: f64,
    pub replicates: usize,
    pub failures: usize,
    /// Set when fewer than 20 replicates were requested.
    pub low_b: bool,
}

/// Nonparametric bootstrap SD of `estimator`, refitting everything inside
/// each resample. Failed resamples are skipped and counted.
pub fn bootstrap_se<E>(data: &Dataset, estimator: E, b: usize, seed: u64) -> Result<BootstrapOutcome>
where
    E: Fn(&Dataset) -> Result<f64> + Sync,
{
    if b < 2 {
        return Err(Error::Argument(format!("bootstrap needs at least 2 replicates, got {b}")));
    }
    let n = data.len();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            estimator(&data.subset(&idx)).ok().filter(|v| v.is_finite())
        })
        .collect();
    let ok: Vec<f64> = draws.into_iter().flatten().collect();
    let failures = b - ok.len();
    if failures * 10 > b || ok.len() < 2 {
        return Err(Error::Degenerate(format!("{failures} of {b} bootstrap resamples failed")));
    }
    let m = ok.len() as f64;
    let mean = ok.iter().sum::<f64>() / m;
    let var = ok.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
    Ok(BootstrapOutcome { se: var.sqrt(), replicates: ok.len(), failures, low_b: b < 20 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(a: u8, v_nu: f64, v_one: f64, mu1: f64, mu0: f64, pi: f64) -> RecordTerms {
        RecordTerms { a, v_nu, v_one, mu1, mu0, pi, trim_events: 0 }
    }

    #[test]
    fn closed_form_root_zeroes_the_equation() {
        let ts = vec![
            terms(1, 0.8, 1.1, 0.7, 0.4, 0.3),
            terms(0, 0.2, 0.9, 0.6, 0.5, 0.6),
            terms(1, -0.3, -0.2, 0.1, 0.2, 0.5),
            terms(0, 1.4, 1.3, 0.9, 0.3, 0.2),
        ];
        let r = solve_from_terms(&ts, AteMethod::Dr, None).unwrap();
        let s: f64 = ts.iter().map(|t| t.u(r.theta_hat)).sum();
        assert!(s.abs() < 1e-12);
        assert!(r.se_model > 0.0);
        assert!(r.ci_lower < r.theta_hat && r.theta_hat < r.ci_upper);
    }

    #[test]
    fn unit_v_reduces_to_aiptw() {
        let ts = vec![terms(1, 2.0, 1.0, 1.5, 1.0, 0.4), terms(0, 0.5, 1.0, 1.2, 0.8, 0.4)];
        let r = solve_from_terms(&ts, AteMethod::Dr, None).unwrap();
        let direct = ((2.0 - 1.5) / 0.4 + 0.5 - (0.5 - 0.8) / 0.6 + 0.4) / 2.0;
        assert!((r.theta_hat - direct).abs() < 1e-14);
    }

    #[test]
    fn zero_normalizer_is_degenerate() {
        let ts = vec![terms(1, 1.0, 1.0, 0.0, 0.0, 0.5), terms(0, 1.0, -1.0, 0.0, 0.0, 0.5)];
        assert!(matches!(solve_from_terms(&ts, AteMethod::Dr, None), Err(Error::Degenerate(_))));
    }

    #[test]
    fn full_data_identical_arms_is_zero() {
        let full: Vec<FullRecord> = (0..5).map(|i| FullRecord { t1: 1.0 + i as f64, t0: 1.0 + i as f64, q: 0.0, d: 1.0, a: 0, z: vec![] }).collect();
        let r = full_data_ate(&full, &Transform::Log).unwrap();
        assert_eq!(r.theta_hat, 0.0);
    }

    #[test]
    fn propensity_trim_is_symmetric() {
        assert_eq!(trim_propensity(0.95, 0.1), (0.9, true));
        assert_eq!(trim_propensity(0.02, 0.1), (0.1, true));
        assert_eq!(trim_propensity(0.5, 0.1), (0.5, false));
    }
}
