//! Replication benchmarks for the ATE and CATE designs.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{truth_bundle, ScenarioKind, ScenarioSpec, TruthOffsets, THETA0_ATE};
use crate::ate::{bootstrap_se, crossfit_ate, full_data_ate, ipw_ate, solve_ate, AteResult};
use crate::cate::{crossfit_nuisances, evaluate_mse, fit_cate_from, LearnerConfig, LossKind, NuisanceSource, TuningConfig};
use crate::data::{Dataset, Transform};
use crate::error::{Error, Result};
use crate::nuisance::{fit_scheme_a, ModelKind, NuisanceConfig};
use crate::rng::derived_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AteEstimator {
    Dr,
    DrCrossfit,
    Ipw,
    FullData,
}

/// One row of an ATE benchmark table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AteRowSpec {
    pub label: String,
    pub estimator: AteEstimator,
    #[serde(default)]
    pub nuisance: Option<NuisanceConfig>,
}

impl AteRowSpec {
    pub fn new(estimator: AteEstimator, nuisance_label: &str) -> Result<Self> {
        let nuisance = if estimator == AteEstimator::FullData { None } else { Some(NuisanceConfig::from_label(nuisance_label)?) };
        let prefix = match estimator {
            AteEstimator::Dr => "",
            AteEstimator::DrCrossfit => "cf ",
            AteEstimator::Ipw => "IPW ",
            AteEstimator::FullData => "",
        };
        let label = if estimator == AteEstimator::FullData { "full data".to_string() } else { format!("{prefix}{nuisance_label}") };
        Ok(Self { label, estimator, nuisance })
    }
}

/// The fifteen rows of the ATE table, in order.
pub fn table1_rows() -> Vec<AteRowSpec> {
    let dr = [
        "Cox1/lgs1-Cox1-Cox1",
        "Cox2/lgs1-Cox1-Cox1",
        "Cox1/lgs1-Cox2-Cox1",
        "Cox1/lgs2-Cox1-Cox1",
        "Cox1/lgs1-Cox1-Cox2",
        "Cox2/lgs1-Cox2-Cox1",
        "Cox2/lgs2-Cox1-Cox1",
        "Cox2/lgs1-Cox1-Cox2",
    ];
    let ipw = ["-/lgs1-Cox1-Cox1", "-/lgs1-Cox2-Cox1", "-/lgs2-Cox1-Cox1", "-/lgs1-Cox1-Cox2", "-/gbm-pCox-pCox"];
    let mut rows: Vec<AteRowSpec> = dr.iter().map(|l| AteRowSpec::new(AteEstimator::Dr, l).expect("valid label")).collect();
    rows.push(AteRowSpec::new(AteEstimator::DrCrossfit, "pCox/gbm-pCox-pCox").expect("valid label"));
    rows.extend(ipw.iter().map(|l| AteRowSpec::new(AteEstimator::Ipw, l).expect("valid label")));
    rows.push(AteRowSpec::new(AteEstimator::FullData, "").expect("valid label"));
    rows
}

/// Row `i` (1-based) of the ATE table.
pub fn table1_row(i: usize) -> Result<AteRowSpec> {
    table1_rows()
        .into_iter()
        .nth(i.wrapping_sub(1))
        .ok_or_else(|| Error::Argument(format!("table row must be in 1..=15, got {i}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AteBenchOptions {
    pub trim_floor: f64,
    pub folds: usize,
    /// Bootstrap replicates per estimate; zero disables the bootstrap.
    pub bootstrap: usize,
    /// Truth used for bias and coverage.
    pub theta0: f64,
    pub nu: Transform,
}

impl Default for AteBenchOptions {
    fn default() -> Self {
        Self { trim_floor: 0.1, folds: 5, bootstrap: 0, theta0: THETA0_ATE, nu: Transform::SurvivalIndicator { t0: 3.0 } }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteReplication {
    pub rep: usize,
    pub seed: u64,
    pub row: String,
    pub estimate: f64,
    pub se: f64,
    pub se_boot: Option<f64>,
    pub covered: bool,
    pub boot_covered: Option<bool>,
    pub trim_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AteRowSummary {
    pub row: String,
    pub reps: usize,
    pub bias: f64,
    pub sd: f64,
    pub mean_se: f64,
    pub mean_se_boot: Option<f64>,
    pub cp: f64,
    pub cp_boot: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AteBenchmark {
    pub scenario: ScenarioKind,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub truth: f64,
    pub rows: Vec<AteRowSpec>,
    pub options: AteBenchOptions,
    pub replications: Vec<AteReplication>,
    pub summary: Vec<AteRowSummary>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Per-row bias, SD, mean SE and coverage recomputed from replications.
pub fn summarize_ate(replications: &[AteReplication], truth: f64, order: &[String]) -> Vec<AteRowSummary> {
    order
        .iter()
        .map(|row| {
            let rs: Vec<&AteReplication> = replications.iter().filter(|r| &r.row == row).collect();
            let est: Vec<f64> = rs.iter().map(|r| r.estimate).collect();
            let se: Vec<f64> = rs.iter().map(|r| r.se).collect();
            let boot: Vec<f64> = rs.iter().filter_map(|r| r.se_boot).collect();
            let bc: Vec<f64> = rs.iter().filter_map(|r| r.boot_covered).map(|c| c as u8 as f64).collect();
            AteRowSummary {
                row: row.clone(),
                reps: rs.len(),
                bias: mean(&est) - truth,
                sd: sd(&est),
                mean_se: mean(&se),
                mean_se_boot: (!boot.is_empty()).then(|| mean(&boot)),
                cp: mean(&rs.iter().map(|r| r.covered as u8 as f64).collect::<Vec<_>>()),
                cp_boot: (!bc.is_empty()).then(|| mean(&bc)),
            }
        })
        .collect()
}

fn estimate_row(row: &AteRowSpec, data: &Dataset, full: &[crate::data::FullRecord], opts: &AteBenchOptions, seed: u64) -> Result<AteResult> {
    let nu = &opts.nu;
    let cfg = || -> Result<NuisanceConfig> {
        let mut c = row.nuisance.clone().ok_or_else(|| Error::Argument(format!("row `{}` needs a nuisance config", row.label)))?;
        c.seed = seed;
        Ok(c)
    };
    match row.estimator {
        AteEstimator::FullData => full_data_ate(full, nu),
        AteEstimator::Dr => solve_ate(data, &fit_scheme_a(data, &cfg()?, opts.trim_floor)?, nu),
        AteEstimator::Ipw => ipw_ate(data, &fit_scheme_a(data, &cfg()?, opts.trim_floor)?, nu),
        AteEstimator::DrCrossfit => {
            let c = cfg()?;
            // Penalties are chosen once on the whole sample and reused in
            // every fold.
            let c = if uses_pcox(&c) { c.with_selected_ridges(&fit_scheme_a(data, &c, opts.trim_floor)?) } else { c };
            crossfit_ate(data, opts.folds, &c, nu, opts.trim_floor, seed)
        }
    }
}

fn uses_pcox(c: &NuisanceConfig) -> bool {
    [c.f.model, c.g.model, c.sd.model].contains(&ModelKind::Pcox)
}

/// Run every row on `reps` independent samples of `n` observed records.
pub fn run_ate_benchmark(spec: &ScenarioSpec, rows: &[AteRowSpec], n: usize, reps: usize, seed: u64, opts: &AteBenchOptions) -> Result<AteBenchmark> {
    if reps == 0 || rows.is_empty() {
        return Err(Error::Argument("benchmark needs at least one row and one replication".into()));
    }
    let per_rep: Vec<Vec<AteReplication>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let rs = derived_seed(seed, rep as u64);
            let (full, data) = spec.gen_sample(n, rs)?;
            rows.iter()
                .map(|row| {
                    let mut r = estimate_row(row, &data, &full, opts, rs)?;
                    r.set_ci_level(0.95);
                    if opts.bootstrap > 0 && row.estimator != AteEstimator::FullData {
                        let b = bootstrap_se(&data, |d| estimate_row(row, d, &full, opts, rs).map(|r| r.theta_hat), opts.bootstrap, derived_seed(rs, 0xb007))?;
                        r.se_boot = Some(b.se);
                    }
                    Ok(AteReplication {
                        rep,
                        seed: rs,
                        row: row.label.clone(),
                        estimate: r.theta_hat,
                        se: r.se_model,
                        se_boot: r.se_boot,
                        covered: r.covers(opts.theta0),
                        boot_covered: r.boot_covers(opts.theta0),
                        trim_events: r.trim_event_count,
                    })
                })
                .collect::<Result<Vec<_>>>()
                .map_err(|e| e.in_replication(rep))
        })
        .collect::<Result<_>>()?;
    let replications: Vec<AteReplication> = per_rep.into_iter().flatten().collect();
    let order: Vec<String> = rows.iter().map(|r| r.label.clone()).collect();
    let summary = summarize_ate(&replications, opts.theta0, &order);
    Ok(AteBenchmark { scenario: spec.kind, n, reps, seed, truth: opts.theta0, rows: rows.to_vec(), options: opts.clone(), replications, summary })
}

/// One learner of a CATE benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CateArm {
    pub label: String,
    pub loss: LossKind,
    /// Use the true nuisances instead of cross-fitted estimates.
    pub oracle: bool,
    pub trim_floor: f64,
}

impl CateArm {
    pub fn new(loss: LossKind, oracle: bool, trim_floor: f64) -> Self {
        let mut label = loss.label().to_string();
        if oracle {
            label.push_str("-o");
        }
        if trim_floor != 0.1 {
            label.push_str(&format!("@{trim_floor}"));
        }
        Self { label, loss, oracle, trim_floor }
    }
}

/// ltrcR, ltrcDR and IPW.S with estimated and with true nuisances.
pub fn cate_arms() -> Vec<CateArm> {
    let mut v = Vec::new();
    for oracle in [false, true] {
        for loss in [LossKind::LtrcR, LossKind::LtrcDr, LossKind::IpwS] {
            v.push(CateArm::new(loss, oracle, 0.1));
        }
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CateBenchOptions {
    pub folds: usize,
    pub learner: LearnerConfig,
    pub nuisance: NuisanceConfig,
    pub nu: Transform,
    /// Quantile atoms used to represent the true nuisances.
    pub truth_atoms: usize,
}

impl Default for CateBenchOptions {
    fn default() -> Self {
        Self {
            folds: 5,
            learner: LearnerConfig::BoostedTrees { params: None, tuning: TuningConfig::default() },
            nuisance: NuisanceConfig::from_label("pCox/gbm-pCox-pCox").expect("valid label"),
            nu: Transform::Log,
            truth_atoms: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateReplication {
    pub n: usize,
    pub rep: usize,
    pub seed: u64,
    pub arm: String,
    pub mse: f64,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateCellSummary {
    pub arm: String,
    pub n: usize,
    pub reps: usize,
    pub median_mse: f64,
    pub mean_mse: f64,
    pub q25_mse: f64,
    pub q75_mse: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CateBenchmark {
    pub scenario: ScenarioKind,
    pub ns: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub arms: Vec<CateArm>,
    pub options: CateBenchOptions,
    pub replications: Vec<CateReplication>,
    pub summary: Vec<CateCellSummary>,
}

impl CateBenchmark {
    pub fn cell(&self, arm: &str, n: usize) -> Option<&CateCellSummary> {
        self.summary.iter().find(|c| c.arm == arm && c.n == n)
    }
}

/// Linear-interpolation quantile of unsorted data.
pub fn quantile(v: &[f64], p: f64) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    crate::nuisance::features::quantile_sorted(&s, p)
}

pub fn summarize_cate(replications: &[CateReplication], arms: &[CateArm], ns: &[usize]) -> Vec<CateCellSummary> {
    let mut out = Vec::new();
    for &n in ns {
        for arm in arms {
            let m: Vec<f64> = replications.iter().filter(|r| r.n == n && r.arm == arm.label).map(|r| r.mse).collect();
            if m.is_empty() {
                continue;
            }
            out.push(CateCellSummary {
                arm: arm.label.clone(),
                n,
                reps: m.len(),
                median_mse: quantile(&m, 0.5),
                mean_mse: mean(&m),
                q25_mse: quantile(&m, 0.25),
                q75_mse: quantile(&m, 0.75),
            });
        }
    }
    out
}

/// Run every arm for every sample size. Nuisances are cross-fitted once
/// per sample and shared by all estimated-nuisance arms; pCox penalties are
/// selected on a pilot sample for each `n` and then held fixed.
pub fn run_cate_benchmark(spec: &ScenarioSpec, arms: &[CateArm], ns: &[usize], reps: usize, seed: u64, opts: &CateBenchOptions) -> Result<CateBenchmark> {
    if !spec.kind.is_cate() {
        return Err(Error::Argument("CATE benchmark needs a CATE scenario".into()));
    }
    if reps == 0 || arms.is_empty() || ns.is_empty() {
        return Err(Error::Argument("benchmark needs arms, sample sizes and replications".into()));
    }
    let need_fits = arms.iter().any(|a| !a.oracle);
    let mut replications = Vec::new();
    for &n in ns {
        let n_seed = derived_seed(seed, n as u64);
        let mut cfg = opts.nuisance.clone();
        if need_fits && uses_pcox(&cfg) {
            let (_, pilot) = spec.gen_sample(n, derived_seed(n_seed, u64::MAX))?;
            cfg.seed = n_seed;
            cfg = cfg.with_selected_ridges(&fit_scheme_a(&pilot, &cfg, 0.1)?);
        }
        let cells: Vec<Vec<CateReplication>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let rs = derived_seed(n_seed, rep as u64);
                run_cate_replication(spec, arms, n, rep, rs, &cfg, opts).map_err(|e| e.in_replication(rep))
            })
            .collect::<Result<_>>()?;
        replications.extend(cells.into_iter().flatten());
    }
    let summary = summarize_cate(&replications, arms, ns);
    Ok(CateBenchmark { scenario: spec.kind, ns: ns.to_vec(), reps, seed, arms: arms.to_vec(), options: opts.clone(), replications, summary })
}

fn run_cate_replication(spec: &ScenarioSpec, arms: &[CateArm], n: usize, rep: usize, rs: u64, cfg: &NuisanceConfig, opts: &CateBenchOptions) -> Result<Vec<CateReplication>> {
    let (_, data) = spec.gen_sample(n, rs)?;
    let nuis = if arms.iter().any(|a| !a.oracle) {
        let mut c = cfg.clone();
        c.seed = rs;
        Some(crossfit_nuisances(&data, opts.folds, rs, |train, j| {
            let mut cj = c.clone();
            cj.seed = derived_seed(rs, j as u64);
            fit_scheme_a(train, &cj, 0.1)
        })?)
    } else {
        None
    };
    let mut by_floor = BTreeMap::new();
    let z: Vec<Vec<f64>> = data.records.iter().map(|r| r.z.clone()).collect();
    let truth = |z: &[f64]| spec.tau(z);
    let mut out = Vec::with_capacity(arms.len());
    for arm in arms {
        let fit = if arm.oracle {
            let b = truth_bundle(spec, opts.truth_atoms, arm.trim_floor, TruthOffsets::default());
            fit_cate_from(&data, arm.loss, NuisanceSource::Fixed(&b), &opts.learner, &opts.nu, None, rs)?
        } else {
            let base = nuis.as_ref().expect("fitted nuisances");
            let key = arm.trim_floor.to_bits();
            let cf = by_floor.entry(key).or_insert_with(|| base.with_floor(arm.trim_floor));
            fit_cate_from(&data, arm.loss, NuisanceSource::Crossfit(cf), &opts.learner, &opts.nu, None, rs)?
        };
        out.push(CateReplication { n, rep, seed: rs, arm: arm.label.clone(), mse: evaluate_mse(&fit.model, &z, &truth), dropped: fit.dropped });
    }
    Ok(out)
}

/// Result of any benchmark run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BenchmarkResult {
    Ate(AteBenchmark),
    Cate(CateBenchmark),
}
