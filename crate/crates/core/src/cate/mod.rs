//! Conditional average treatment effects: pseudo-observations for the
//! ltrcR, ltrcDR and IPW.S losses, cross-fitted nuisances, and the pooled
//! second-stage fit.

pub mod learner;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use learner::{fit_ridge_linear, fit_second_stage, tune_boosting, CateModel, FittedLearner, LearnerConfig, SearchGrid, TuningConfig};

use crate::ate::{record_terms, RecordTerms};
use crate::data::{make_folds, trim_probability, Dataset, FoldAssignment, ObservedRecord, Transform};
use crate::error::{Error, Result};
use crate::nuisance::{fit_scheme_a, NuisanceBundle, NuisanceConfig};
use crate::rng::derived_seed;

/// Records with `|V(1)|` below this are dropped from ratio-form losses.
pub const V_ONE_DROP: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LossKind {
    #[serde(rename = "ltrcR")]
    LtrcR,
    #[serde(rename = "ltrcDR")]
    LtrcDr,
    #[serde(rename = "ipwS")]
    IpwS,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['_', '-', '.'], "").as_str() {
            "ltrcr" | "r" => Ok(LossKind::LtrcR),
            "ltrcdr" | "dr" => Ok(LossKind::LtrcDr),
            "ipws" | "s" => Ok(LossKind::IpwS),
            _ => Err(Error::Argument(format!("unknown loss '{s}'; expected ltrcR, ltrcDR or ipwS"))),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LossKind::LtrcR => "ltrcR",
            LossKind::LtrcDr => "ltrcDR",
            LossKind::IpwS => "IPW.S",
        }
    }
}

/// One term `weight · {outcome - multiplier · τ(v)}²` of a second-stage loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoObservation {
    pub weight: f64,
    pub outcome: f64,
    pub multiplier: f64,
    pub v: Vec<f64>,
}

impl PseudoObservation {
    pub fn loss(&self, tau: f64) -> f64 {
        let r = self.outcome - self.multiplier * tau;
        self.weight * r * r
    }
}

fn select(z: &[f64], cols: Option<&[usize]>) -> Vec<f64> {
    match cols {
        None => z.to_vec(),
        Some(c) => c.iter().map(|&j| z[j]).collect(),
    }
}

/// ltrcR components from precomputed record terms; `None` if V(1) vanishes.
pub fn r_from_terms(t: &RecordTerms, z: &[f64]) -> Option<PseudoObservation> {
    if t.v_one.abs() < V_ONE_DROP {
        return None;
    }
    let mu_tilde = t.mu1 * t.pi + t.mu0 * (1.0 - t.pi);
    Some(PseudoObservation {
        weight: t.v_one,
        outcome: t.v_nu / t.v_one - mu_tilde,
        multiplier: t.a as f64 - t.pi,
        v: z.to_vec(),
    })
}

/// ltrcDR components from precomputed record terms; `None` if V(1) vanishes.
pub fn dr_from_terms(t: &RecordTerms, v: Vec<f64>) -> Option<PseudoObservation> {
    if t.v_one.abs() < V_ONE_DROP {
        return None;
    }
    Some(PseudoObservation {
        weight: t.v_one,
        outcome: t.residual_weight() * (t.v_nu / t.v_one - t.mu_a()) + t.mu1 - t.mu0,
        multiplier: 1.0,
        v,
    })
}

fn dropped_error() -> Error {
    Error::Degenerate(format!("|V(1)| < {V_ONE_DROP:e}; the record cannot enter a ratio-form loss"))
}

pub fn r_components(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform) -> Result<PseudoObservation> {
    r_from_terms(&record_terms(r, bundle, nu)?, &r.z).ok_or_else(dropped_error)
}

pub fn dr_components(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform, v_columns: Option<&[usize]>) -> Result<PseudoObservation> {
    dr_from_terms(&record_terms(r, bundle, nu)?, select(&r.z, v_columns)).ok_or_else(dropped_error)
}

pub fn ipw_s_components(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform, v_columns: Option<&[usize]>) -> Result<PseudoObservation> {
    let fl = bundle.trim_floor;
    let nu_f = |t: f64| nu.apply(t);
    let mu1 = crate::operators::mu_curve(&bundle.f.curve(r.q, 1, &r.z), &nu_f)?;
    let mu0 = crate::operators::mu_curve(&bundle.f.curve(r.q, 0, &r.z), &nu_f)?;
    let weight = if r.delta == 1 {
        let s = trim_probability(bundle.sd.eval(r.x - r.q, r.q, r.a, &r.z), fl);
        let g = trim_probability(bundle.g.eval(r.x, r.q, r.a, &r.z), fl);
        1.0 / (s * g)
    } else {
        0.0
    };
    Ok(PseudoObservation { weight, outcome: mu1 - mu0, multiplier: 1.0, v: select(&r.z, v_columns) })
}

/// Nuisances fitted out of fold, one bundle per fold.
#[derive(Debug, Clone)]
pub struct CrossfitNuisances {
    pub folds: FoldAssignment,
    pub bundles: Vec<NuisanceBundle>,
}

impl CrossfitNuisances {
    /// The bundle that may be used to evaluate record `i`.
    pub fn bundle_for(&self, i: usize) -> &NuisanceBundle {
        &self.bundles[self.folds.labels[i] - 1]
    }

    pub fn with_floor(&self, floor: f64) -> Self {
        Self { folds: self.folds.clone(), bundles: self.bundles.iter().map(|b| b.with_floor(floor)).collect() }
    }
}

pub fn crossfit_nuisances<F>(data: &Dataset, k: usize, seed: u64, fit: F) -> Result<CrossfitNuisances>
where
    F: Fn(&Dataset, usize) -> Result<NuisanceBundle> + Sync,
{
    let folds = make_folds(data.len(), k, seed)?;
    let bundles = (1..=k)
        .into_par_iter()
        .map(|j| fit(&data.subset(&folds.complement(j)), j).map_err(|e| e.in_fold(j)))
        .collect::<Result<Vec<_>>>()?;
    Ok(CrossfitNuisances { folds, bundles })
}

/// Where the nuisances for each record come from.
#[derive(Debug, Clone, Copy)]
pub enum NuisanceSource<'a> {
    Crossfit(&'a CrossfitNuisances),
    /// The same bundle for every record, e.g. the true nuisances.
    Fixed(&'a NuisanceBundle),
}

impl NuisanceSource<'_> {
    fn bundle_for(&self, i: usize) -> &NuisanceBundle {
        match self {
            NuisanceSource::Crossfit(c) => c.bundle_for(i),
            NuisanceSource::Fixed(b) => b,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PseudoSet {
    pub observations: Vec<PseudoObservation>,
    /// Records dropped because `|V(1)|` vanished.
    pub dropped: usize,
}

pub fn pseudo_observations(data: &Dataset, loss: LossKind, source: NuisanceSource, nu: &Transform, v_columns: Option<&[usize]>) -> Result<PseudoSet> {
    let v_columns = if loss == LossKind::LtrcR { None } else { v_columns };
    let rows: Vec<Option<PseudoObservation>> = data
        .records
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let b = source.bundle_for(i);
            Ok(match loss {
                LossKind::LtrcR => r_from_terms(&record_terms(r, b, nu)?, &r.z),
                LossKind::LtrcDr => dr_from_terms(&record_terms(r, b, nu)?, select(&r.z, v_columns)),
                LossKind::IpwS => Some(ipw_s_components(r, b, nu, v_columns)?),
            })
        })
        .collect::<Result<_>>()?;
    let dropped = rows.iter().filter(|r| r.is_none()).count();
    Ok(PseudoSet { observations: rows.into_iter().flatten().collect(), dropped })
}

#[derive(Debug, Clone, Serialize)]
pub struct CateFit {
    pub model: CateModel,
    pub loss: LossKind,
    pub dropped: usize,
}

/// Pseudo-observations from `source`, then one pooled second-stage fit.
#[allow(clippy::too_many_arguments)]
pub fn fit_cate_from(data: &Dataset, loss: LossKind, source: NuisanceSource, learner: &LearnerConfig, nu: &Transform, v_columns: Option<&[usize]>, seed: u64) -> Result<CateFit> {
    let set = pseudo_observations(data, loss, source, nu, v_columns)?;
    let mut model = fit_second_stage(&set.observations, learner, derived_seed(seed, 0x2d))?;
    if loss != LossKind::LtrcR {
        model.v_columns = v_columns.map(|c| c.to_vec());
    }
    Ok(CateFit { model, loss, dropped: set.dropped })
}

/// Cross-fitted CATE with scheme (a) nuisances.
#[allow(clippy::too_many_arguments)]
pub fn crossfit_cate(data: &Dataset, loss: LossKind, cfg: &NuisanceConfig, learner: &LearnerConfig, k: usize, nu: &Transform, trim_floor: f64, seed: u64) -> Result<CateFit> {
    cfg.validate()?;
    let nuis = crossfit_nuisances(data, k, seed, |train, j| {
        let mut c = cfg.clone();
        c.seed = derived_seed(cfg.seed, j as u64);
        fit_scheme_a(train, &c, trim_floor)
    })?;
    fit_cate_from(data, loss, NuisanceSource::Crossfit(&nuis), learner, nu, None, seed)
}

/// The same pipeline with known nuisances for every record.
pub fn oracle_cate(data: &Dataset, loss: LossKind, truth: &NuisanceBundle, learner: &LearnerConfig, nu: &Transform, seed: u64) -> Result<CateFit> {
    fit_cate_from(data, loss, NuisanceSource::Fixed(truth), learner, nu, None, seed)
}

/// `n⁻¹ Σ {τ̂(z_i) - τ₀(z_i)}²`.
pub fn evaluate_mse(model: &CateModel, z_points: &[Vec<f64>], truth: &dyn Fn(&[f64]) -> f64) -> f64 {
    if z_points.is_empty() {
        return 0.0;
    }
    z_points.iter().map(|z| (model.predict_z(z) - truth(z)).powi(2)).sum::<f64>() / z_points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn terms(a: u8, v_nu: f64, v_one: f64, mu1: f64, mu0: f64, pi: f64) -> RecordTerms {
        RecordTerms { a, v_nu, v_one, mu1, mu0, pi, trim_events: 0 }
    }

    #[test]
    fn r_loss_matches_direct_expression() {
        let t = terms(1, 1.3, 0.8, 0.9, 0.4, 0.35);
        let p = r_from_terms(&t, &[0.1]).unwrap();
        for tau in [-0.5f64, 0.0, 0.7] {
            let mu_tilde = 0.9 * 0.35 + 0.4 * 0.65;
            let direct = 0.8 * (1.3 / 0.8 - mu_tilde - (1.0 - 0.35) * tau).powi(2);
            assert!((p.loss(tau) - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn r_multiplier_at_half() {
        let p = r_from_terms(&terms(1, 1.0, 1.0, 0.0, 0.0, 0.5), &[]).unwrap();
        assert_eq!(p.multiplier, 0.5);
    }

    #[test]
    fn vanishing_v_one_is_dropped() {
        assert!(r_from_terms(&terms(1, 1.0, 1e-12, 0.0, 0.0, 0.5), &[]).is_none());
        assert!(dr_from_terms(&terms(1, 1.0, -1e-11, 0.0, 0.0, 0.5), vec![]).is_none());
    }

    #[test]
    fn dr_scalar_gradient_is_minus_two_mean_u() {
        let ts = [terms(1, 1.3, 0.8, 0.9, 0.4, 0.35), terms(0, -0.2, -0.3, 0.5, 0.6, 0.6), terms(1, 2.0, 1.5, 1.1, 0.2, 0.8)];
        let obs: Vec<_> = ts.iter().map(|t| dr_from_terms(t, vec![]).unwrap()).collect();
        let n = ts.len() as f64;
        let loss = |th: f64| obs.iter().map(|o| o.loss(th)).sum::<f64>() / n;
        let theta = 0.17;
        let analytic = -2.0 * ts.iter().map(|t| t.u(theta)).sum::<f64>() / n;
        let h = 1e-5;
        let fd = (loss(theta + h) - loss(theta - h)) / (2.0 * h);
        assert!((fd - analytic).abs() <= 1e-6 * analytic.abs());
    }

    #[test]
    fn loss_labels_parse() {
        assert_eq!(LossKind::parse("ltrcR").unwrap(), LossKind::LtrcR);
        assert_eq!(LossKind::parse("IPW.S").unwrap(), LossKind::IpwS);
        assert!(LossKind::parse("x").is_err());
    }
}
