//! Nuisance fitting under the doubly robust ordering: S_D first, then G with
//! censoring weights from S_D, then the propensity with weights from G and
//! S_D. F is fitted on its own.

use serde::{Deserialize, Serialize};

use super::cox::{fit_cox, select_ridge_cv, CoxData, CoxModel, TimeOrientation};
use super::dist::{ConditionalDistribution, CoxDistribution, DistKind};
use super::features::{FeatureMap, FeatureSpec, Subject};
use super::logistic::{fit_logistic, LogisticProblem};
use super::propensity::PropensityModel;
use crate::data::{trim_probability, Dataset};
use crate::error::{Error, Result};
use crate::trees::{boost, Presorted, TreeParams, WeightedLogistic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cox,
    CoxMisspec,
    Pcox,
    Logistic,
    LogisticMisspec,
    Gbm,
}

impl ModelKind {
    fn is_survival(&self) -> bool {
        matches!(self, ModelKind::Cox | ModelKind::CoxMisspec | ModelKind::Pcox)
    }
}

/// Working model for one nuisance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceSpec {
    pub model: ModelKind,
    /// Explicit terms overriding the model's default features.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    /// Ridge penalty per unit of total fitting weight. `None` selects it by
    /// cross-validation for `pcox` and means zero otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ridge: Option<f64>,
}

impl NuisanceSpec {
    pub fn new(model: ModelKind) -> Self {
        Self { model, features: None, ridge: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PcoxSettings {
    pub df: usize,
    pub grid: Vec<f64>,
    pub cv_folds: usize,
}

impl Default for PcoxSettings {
    fn default() -> Self {
        Self {
            df: 7,
            grid: vec![10.0, 3.0, 1.0, 0.3, 0.1, 0.03, 0.01, 0.003, 0.001, 0.0003],
            cv_folds: 5,
        }
    }
}

pub fn default_gbm_params() -> TreeParams {
    TreeParams {
        n_trees: 500,
        max_depth: 2,
        eta: 0.05,
        lambda: 1.0,
        gamma: 0.0,
        min_child_weight: 0.0,
        max_delta_step: 0.0,
        subsample: 1.0,
        colsample_bytree: 1.0,
    }
}

fn default_fit_floor() -> f64 {
    0.1
}

fn default_gbm() -> TreeParams {
    default_gbm_params()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NuisanceConfig {
    pub f: NuisanceSpec,
    pub pi: NuisanceSpec,
    pub g: NuisanceSpec,
    pub sd: NuisanceSpec,
    /// Floor applied to G and S_D inside the fitting weights.
    #[serde(default = "default_fit_floor")]
    pub fit_floor: f64,
    #[serde(default)]
    pub pcox: PcoxSettings,
    #[serde(default = "default_gbm")]
    pub gbm: TreeParams,
    #[serde(default)]
    pub seed: u64,
}

impl NuisanceConfig {
    pub fn new(f: ModelKind, pi: ModelKind, g: ModelKind, sd: ModelKind) -> Self {
        Self {
            f: NuisanceSpec::new(f),
            pi: NuisanceSpec::new(pi),
            g: NuisanceSpec::new(g),
            sd: NuisanceSpec::new(sd),
            fit_floor: default_fit_floor(),
            pcox: PcoxSettings::default(),
            gbm: default_gbm_params(),
            seed: 0,
        }
    }

    /// Parse a label such as `Cox1/lgs1-Cox2-Cox1` or `pCox/gbm-pCox-pCox`.
    /// A leading `-` for F (as in IPW rows) defaults F to `Cox1`.
    pub fn from_label(label: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse nuisance label `{label}`"));
        let (f, rest) = label.split_once('/').ok_or_else(bad)?;
        let parts: Vec<&str> = rest.split('-').collect();
        if parts.len() != 3 {
            return Err(bad());
        }
        let surv = |s: &str| match s.trim() {
            "Cox1" | "-" | "" => Ok(ModelKind::Cox),
            "Cox2" => Ok(ModelKind::CoxMisspec),
            "pCox" => Ok(ModelKind::Pcox),
            _ => Err(bad()),
        };
        let prop = match parts[0].trim() {
            "lgs1" => ModelKind::Logistic,
            "lgs2" => ModelKind::LogisticMisspec,
            "gbm" => ModelKind::Gbm,
            _ => return Err(bad()),
        };
        Ok(Self::new(surv(f)?, prop, surv(parts[1])?, surv(parts[2])?))
    }

    pub fn label(&self) -> String {
        let s = |k: ModelKind| match k {
            ModelKind::Cox => "Cox1",
            ModelKind::CoxMisspec => "Cox2",
            ModelKind::Pcox => "pCox",
            ModelKind::Logistic => "lgs1",
            ModelKind::LogisticMisspec => "lgs2",
            ModelKind::Gbm => "gbm",
        };
        format!("{}/{}-{}-{}", s(self.f.model), s(self.pi.model), s(self.g.model), s(self.sd.model))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, spec) in [("f", &self.f), ("g", &self.g), ("sd", &self.sd)] {
            if !spec.model.is_survival() {
                return Err(Error::Argument(format!("nuisance `{name}` needs a survival model, got {:?}", spec.model)));
            }
        }
        if self.pi.model.is_survival() {
            return Err(Error::Argument("nuisance `pi` needs logistic, logistic_misspec or gbm".into()));
        }
        if !(self.fit_floor > 0.0 && self.fit_floor < 0.5) {
            return Err(Error::Argument(format!("fit_floor must be in (0, 0.5), got {}", self.fit_floor)));
        }
        for spec in [&self.f, &self.g, &self.sd, &self.pi] {
            if let Some(r) = spec.ridge {
                if !(r >= 0.0) {
                    return Err(Error::Argument(format!("ridge must be nonnegative, got {r}")));
                }
            }
        }
        Ok(())
    }

    /// Copy of this config with every cross-validated ridge pinned to the
    /// value chosen in `bundle`.
    pub fn with_selected_ridges(&self, bundle: &NuisanceBundle) -> Self {
        let mut out = self.clone();
        let pin = |spec: &mut NuisanceSpec, dist: &ConditionalDistribution| {
            if spec.ridge.is_none() {
                if let Some(m) = dist.cox_model() {
                    spec.ridge = Some(m.ridge_lambda);
                }
            }
        };
        pin(&mut out.f, &bundle.f);
        pin(&mut out.g, &bundle.g);
        pin(&mut out.sd, &bundle.sd);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Fitted in the doubly robust order.
    A,
    /// Supplied directly, e.g. the true nuisances of a simulation.
    Oracle,
}

/// The four fitted nuisances plus the trimming policy for evaluation.
#[derive(Debug, Clone)]
pub struct NuisanceBundle {
    pub pi: PropensityModel,
    pub f: ConditionalDistribution,
    pub g: ConditionalDistribution,
    pub sd: ConditionalDistribution,
    /// Floor applied to every probability appearing in a denominator.
    pub trim_floor: f64,
    /// Whether `1 - F` is floored where it appears in a denominator.
    pub trim_one_minus_f: bool,
    pub scheme: Scheme,
}

impl NuisanceBundle {
    pub fn oracle(pi: PropensityModel, f: ConditionalDistribution, g: ConditionalDistribution, sd: ConditionalDistribution, trim_floor: f64) -> Self {
        Self { pi, f, g, sd, trim_floor, trim_one_minus_f: true, scheme: Scheme::Oracle }
    }

    pub fn with_floor(&self, floor: f64) -> Self {
        let mut b = self.clone();
        b.trim_floor = floor;
        b
    }

    pub fn check(&self) -> Result<()> {
        if self.f.kind != DistKind::CdfF || self.g.kind != DistKind::CdfG || self.sd.kind != DistKind::SurvivalSd {
            return Err(Error::Argument("bundle components have the wrong distribution kinds".into()));
        }
        if !(self.trim_floor > 0.0 && self.trim_floor < 0.5) {
            return Err(Error::Argument(format!("trim floor must be in (0, 0.5), got {}", self.trim_floor)));
        }
        Ok(())
    }
}

fn default_terms(kind: ModelKind, p: usize, with_q: bool) -> Vec<String> {
    let mut t: Vec<String> = match kind {
        ModelKind::Cox | ModelKind::Pcox => {
            let mut v = vec!["a".to_string()];
            v.extend((1..=p).map(|j| format!("z{j}")));
            v
        }
        ModelKind::CoxMisspec => {
            let last = p.max(1);
            vec!["a*z1".to_string(), format!("z{last}^2")]
        }
        ModelKind::Logistic => (1..=p).map(|j| format!("z{j}")).collect(),
        ModelKind::LogisticMisspec => (1..=p).map(|j| format!("z{j}^2")).collect(),
        ModelKind::Gbm => (1..=p).map(|j| format!("z{j}")).collect(),
    };
    if with_q {
        t.push("q".into());
    }
    t
}

fn feature_spec(spec: &NuisanceSpec, p: usize, with_q: bool, pcox: &PcoxSettings) -> FeatureSpec {
    if let Some(f) = &spec.features {
        return FeatureSpec::Terms { terms: f.clone() };
    }
    if spec.model == ModelKind::Pcox {
        let mut cont: Vec<String> = (1..=p).map(|j| format!("z{j}")).collect();
        if with_q {
            cont.push("q".into());
        }
        return FeatureSpec::Basis {
            df: pcox.df,
            continuous: cont,
            binary: vec!["a".into()],
            squares: true,
            interactions: true,
        };
    }
    FeatureSpec::Terms { terms: default_terms(spec.model, p, with_q) }
}

/// Rows of a Cox design: (entry, exit, event, weight, subject index).
struct CoxRows {
    rows: Vec<(f64, f64, bool, f64, usize)>,
}

fn fit_cox_model(data: &Dataset, rows: CoxRows, spec: &NuisanceSpec, fspec: &FeatureSpec, cfg: &NuisanceConfig, orientation: TimeOrientation, salt: u64) -> Result<CoxModel> {
    let subjects: Vec<Subject> = rows
        .rows
        .iter()
        .map(|r| {
            let rec = &data.records[r.4];
            Subject::new(rec.q, rec.a, &rec.z)
        })
        .collect();
    let map = FeatureMap::fit(fspec, &subjects)?;
    let mut design = CoxData::new(map.dim());
    for (r, s) in rows.rows.iter().zip(&subjects) {
        design.push(r.0, r.1, r.2, r.3, &map.apply(s));
    }
    let total_w: f64 = design.weight.iter().sum();
    let lambda = match (spec.ridge, spec.model) {
        (Some(l), _) => l,
        (None, ModelKind::Pcox) => {
            let k = cfg.pcox.cv_folds.min(design.len());
            select_ridge_cv(&design, &cfg.pcox.grid, k, cfg.seed ^ salt)?.0
        }
        (None, _) => 0.0,
    };
    let fit = fit_cox(&design, lambda * total_w)?;
    Ok(CoxModel::from_fit(fit, map, lambda, orientation))
}

/// Cox model for the residual censoring time `D = C - Q`.
pub fn fit_residual_censoring_s(data: &Dataset, spec: &NuisanceSpec, cfg: &NuisanceConfig) -> Result<ConditionalDistribution> {
    if data.censored_count() == 0 {
        return Err(Error::Degenerate("no censored observations; S_D is not identifiable".into()));
    }
    let rows = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (0.0, r.x - r.q, r.delta == 0, 1.0, i))
        .collect();
    let fspec = feature_spec(spec, data.p, true, &cfg.pcox);
    let model = fit_cox_model(data, CoxRows { rows }, spec, &fspec, cfg, TimeOrientation::Forward, 0x5d)?;
    Ok(ConditionalDistribution::from_cox(CoxDistribution::new(DistKind::SurvivalSd, model)))
}

/// Cox model for the truncation time on the reversed time scale, with
/// inverse probability of censoring weights.
pub fn fit_truncation_cdf_g(data: &Dataset, sd_hat: &ConditionalDistribution, spec: &NuisanceSpec, cfg: &NuisanceConfig) -> Result<ConditionalDistribution> {
    if data.event_count() == 0 {
        return Err(Error::Degenerate("no uncensored observations; G cannot be fitted".into()));
    }
    let pivot = data.records.iter().map(|r| r.x).fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let rows: Vec<_> = data
        .records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.delta == 1)
        .map(|(i, r)| {
            let s = sd_hat.eval(r.x - r.q, r.q, r.a, &r.z);
            (pivot - r.x, pivot - r.q, true, 1.0 / trim_probability(s, cfg.fit_floor), i)
        })
        .collect();
    let mut forward: Vec<f64> = data.records.iter().filter(|r| r.delta == 1).map(|r| r.q).collect();
    forward.sort_by(f64::total_cmp);
    forward.dedup();
    let fspec = feature_spec(spec, data.p, false, &cfg.pcox);
    let model = fit_cox_model(data, CoxRows { rows }, spec, &fspec, cfg, TimeOrientation::Reversed { pivot }, 0x6)?;
    let mut dist = CoxDistribution::new(DistKind::CdfG, model);
    dist.forward_times = Some(forward);
    Ok(ConditionalDistribution::from_cox(dist))
}

/// Cox model for the event time under left truncation and right censoring.
pub fn fit_event_cdf_f(data: &Dataset, spec: &NuisanceSpec, cfg: &NuisanceConfig) -> Result<ConditionalDistribution> {
    let rows = data
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.q, r.x, r.delta == 1, 1.0, i))
        .collect();
    let fspec = feature_spec(spec, data.p, false, &cfg.pcox);
    let model = fit_cox_model(data, CoxRows { rows }, spec, &fspec, cfg, TimeOrientation::Forward, 0xf)?;
    Ok(ConditionalDistribution::from_cox(CoxDistribution::new(DistKind::CdfF, model)))
}

/// Weights `delta / {G(x) S_D(x - q)}` with both factors floored.
pub fn propensity_weights(data: &Dataset, g_hat: &ConditionalDistribution, sd_hat: &ConditionalDistribution, floor: f64) -> Vec<f64> {
    data.records
        .iter()
        .map(|r| {
            if r.delta == 0 {
                return 0.0;
            }
            let g = trim_probability(g_hat.eval(r.x, r.q, r.a, &r.z), floor);
            let s = trim_probability(sd_hat.eval(r.x - r.q, r.q, r.a, &r.z), floor);
            1.0 / (g * s)
        })
        .collect()
}

/// Propensity fitted on the uncensored rows with truncation and censoring weights.
pub fn fit_propensity(data: &Dataset, g_hat: &ConditionalDistribution, sd_hat: &ConditionalDistribution, spec: &NuisanceSpec, cfg: &NuisanceConfig) -> Result<PropensityModel> {
    let w = propensity_weights(data, g_hat, sd_hat, cfg.fit_floor);
    fit_propensity_weighted(data, &w, spec, cfg, "delta/(G*S_D)")
}

/// Propensity fitted with caller-supplied per-row weights.
pub fn fit_propensity_weighted(data: &Dataset, w: &[f64], spec: &NuisanceSpec, cfg: &NuisanceConfig, provenance: &str) -> Result<PropensityModel> {
    let fspec = feature_spec(spec, data.p, false, &cfg.pcox);
    let subjects: Vec<Subject> = data.records.iter().map(|r| Subject::new(0.0, 0, &r.z)).collect();
    let map = FeatureMap::fit(&fspec, &subjects)?;
    let x: Vec<Vec<f64>> = subjects.iter().map(|s| map.apply(s)).collect();
    let y: Vec<f64> = data.records.iter().map(|r| r.a as f64).collect();
    match spec.model {
        ModelKind::Logistic | ModelKind::LogisticMisspec => {
            let sw: f64 = w.iter().sum();
            let fit = fit_logistic(&LogisticProblem { x: &x, y: &y, w, ridge: spec.ridge.unwrap_or(0.0) * sw })?;
            Ok(PropensityModel::Logistic { feature_map: map, beta: fit.beta, provenance: provenance.into() })
        }
        ModelKind::Gbm => {
            let keep: Vec<usize> = (0..w.len()).filter(|&i| w[i] > 0.0).collect();
            if keep.is_empty() {
                return Err(Error::Degenerate("propensity fit has no weighted rows".into()));
            }
            let xs: Vec<Vec<f64>> = keep.iter().map(|&i| x[i].clone()).collect();
            let obj = WeightedLogistic {
                weight: keep.iter().map(|&i| w[i]).collect(),
                label: keep.iter().map(|&i| y[i]).collect(),
            };
            let booster = boost(&Presorted::new(&xs), &obj, &cfg.gbm, cfg.seed ^ 0x9b, None)?;
            Ok(PropensityModel::BoostedTrees { feature_map: map, booster, provenance: provenance.into() })
        }
        other => Err(Error::Argument(format!("{other:?} is not a propensity model"))),
    }
}

/// Fit all four nuisances in the doubly robust order.
pub fn fit_scheme_a(data: &Dataset, cfg: &NuisanceConfig, trim_floor: f64) -> Result<NuisanceBundle> {
    cfg.validate()?;
    data.ensure_valid()?;
    let sd = fit_residual_censoring_s(data, &cfg.sd, cfg)?;
    let g = fit_truncation_cdf_g(data, &sd, &cfg.g, cfg)?;
    let pi = fit_propensity(data, &g, &sd, &cfg.pi, cfg)?;
    let f = fit_event_cdf_f(data, &cfg.f, cfg)?;
    let bundle = NuisanceBundle { pi, f, g, sd, trim_floor, trim_one_minus_f: true, scheme: Scheme::A };
    bundle.check()?;
    Ok(bundle)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ObservedRecord;

    fn tiny() -> Dataset {
        let recs = (0..40)
            .map(|i| {
                let f = i as f64;
                let z = vec![(f * 0.37).sin(), (f * 0.71).cos()];
                let q = 0.1 + 0.05 * (i % 7) as f64;
                ObservedRecord::new(q, q + 0.5 + (f * 0.13) % 2.0, (i % 3 != 0) as u8, (i % 2) as u8, z)
            })
            .collect();
        Dataset::new(2, recs)
    }

    #[test]
    fn labels_round_trip() {
        for l in ["Cox1/lgs1-Cox1-Cox1", "Cox2/lgs2-Cox1-Cox1", "pCox/gbm-pCox-pCox", "Cox1/lgs1-Cox1-Cox2"] {
            assert_eq!(NuisanceConfig::from_label(l).unwrap().label(), l);
        }
        assert!(NuisanceConfig::from_label("Cox3/lgs1-Cox1-Cox1").is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let js = r#"{"f":{"model":"cox"},"pi":{"model":"logistic"},"g":{"model":"cox"},"sd":{"model":"cox"},"bogus":1}"#;
        assert!(serde_json::from_str::<NuisanceConfig>(js).is_err());
        let js = r#"{"f":{"model":"cox"},"pi":{"model":"logistic"},"g":{"model":"cox"},"sd":{"model":"cox"}}"#;
        let cfg: NuisanceConfig = serde_json::from_str(js).unwrap();
        assert_eq!(cfg.label(), "Cox1/lgs1-Cox1-Cox1");
    }

    #[test]
    fn g_is_one_above_the_largest_entry_time() {
        let d = tiny();
        let cfg = NuisanceConfig::from_label("Cox1/lgs1-Cox1-Cox1").unwrap();
        let b = fit_scheme_a(&d, &cfg, 0.1).unwrap();
        let qmax = d.records.iter().filter(|r| r.delta == 1).map(|r| r.q).fold(0.0, f64::max);
        for r in &d.records {
            assert_eq!(b.g.eval(qmax, 0.0, r.a, &r.z), 1.0);
            let c = b.g.curve(0.0, r.a, &r.z);
            assert!(c.is_nondecreasing());
            assert!(b.sd.curve(r.q, r.a, &r.z).is_nonincreasing());
            assert_eq!(b.sd.eval(0.0, r.q, r.a, &r.z), 1.0);
        }
    }

    #[test]
    fn s_d_needs_censoring() {
        let mut d = tiny();
        for r in d.records.iter_mut() {
            r.delta = 1;
        }
        let cfg = NuisanceConfig::from_label("Cox1/lgs1-Cox1-Cox1").unwrap();
        assert!(matches!(fit_scheme_a(&d, &cfg, 0.1), Err(Error::Degenerate(_))));
    }
}
