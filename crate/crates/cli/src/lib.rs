//! The `ltrc` command-line front end.
//!
//! Exit codes: 0 on success, 1 on usage or configuration errors, 2 when a
//! computation fails.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use ltrc_core::ate::{bootstrap_se, AteResult};
use ltrc_core::cate::{LearnerConfig, LossKind, TuningConfig};
use ltrc_core::data::{load_observed_csv, validate, write_observed_csv};
use ltrc_core::report::{emit_report, ReportFormat};
use ltrc_core::sim::bench::{cate_arms, run_ate_benchmark, run_cate_benchmark, table1_rows, AteBenchOptions, AteEstimator, BenchmarkResult, CateArm, CateBenchOptions};
use ltrc_core::sim::{ScenarioSpec, THETA0_ATE};
use ltrc_core::{crossfit_ate, crossfit_cate, fit_scheme_a, ipw_ate, solve_ate, Dataset, Error, NuisanceConfig, Transform};
use serde_json::{json, Value};

pub use config::{ExperimentConfig, NuisanceChoice};

#[derive(Debug, Parser)]
#[command(name = "ltrc", version, about = "Treatment-effect estimation for left-truncated, right-censored data")]
struct Cli {
    /// Worker threads for replications and bootstraps [default: all cores].
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Default)]
struct Common {
    /// JSON experiment config; flags override its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Random seed [env: LTRC_SEED].
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    trim_floor: Option<f64>,
    /// Event-time transform: surv:T, rmst:T or log.
    #[arg(long)]
    nu: Option<String>,
    /// Nuisance models, e.g. Cox1/lgs1-Cox1-Cox1 or pCox/gbm-pCox-pCox.
    #[arg(long)]
    nuisance: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Observed-data CSV with columns q,x,delta,a,z1..zp.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of covariate columns [default: 2].
    #[arg(long)]
    covariates: Option<usize>,
}

#[derive(Debug, Args)]
struct TuningArgs {
    /// Random-search candidates for the boosted second stage.
    #[arg(long)]
    n_search: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    max_trees: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a sample from a simulation design and write it as CSV.
    Simulate {
        #[arg(long, default_value = "ate")]
        scenario: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Also write every draw, truncated or not, as JSON.
        #[arg(long)]
        full_out: Option<PathBuf>,
    },
    /// Estimate the average treatment effect on a CSV dataset.
    EstimateAte {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        /// dr, dr_crossfit or ipw.
        #[arg(long)]
        estimator: Option<String>,
        /// Bootstrap replicates for a resampling SE.
        #[arg(long)]
        bootstrap: Option<usize>,
        /// Result JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit a conditional average treatment effect model on a CSV dataset.
    EstimateCate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: TuningArgs,
        /// ltrcR, ltrcDR or ipwS.
        #[arg(long)]
        loss: Option<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// Also evaluate the fit on a g x g grid over [-1, 1]^2.
        #[arg(long)]
        grid: Option<usize>,
    },
    /// Replicate rows of the ATE simulation table.
    BenchAte {
        #[command(flatten)]
        common: Common,
        /// Table row (1-15); repeat for several rows [default: all].
        #[arg(long = "table1-row")]
        rows: Vec<usize>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// csv, json or markdown; repeat for several [default: all].
        #[arg(long)]
        format: Vec<String>,
    },
    /// Replicate the CATE simulation for several learners and sample sizes.
    BenchCate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        tuning: TuningArgs,
        #[arg(long)]
        scenario: Option<String>,
        /// Comma-separated sample sizes.
        #[arg(long, value_delimiter = ',')]
        ns: Vec<usize>,
        /// Comma-separated arms such as ltrcR,IPW.S,ltrcR-o,ltrcDR@0.05.
        #[arg(long, value_delimiter = ',')]
        arms: Vec<String>,
        #[arg(long)]
        reps: Option<usize>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        format: Vec<String>,
    },
    /// Check a CSV dataset against the observed-data rules.
    Validate {
        #[command(flatten)]
        data: DataArgs,
    },
}

/// Failure of a command, split by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Compute(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Compute(e)
    }
}

fn usage(e: Error) -> Failure {
    Failure::Usage(e.to_string())
}

/// Parse an arm label: a loss, an optional `-o` for true nuisances and an
/// optional `@floor`.
pub fn parse_arm(s: &str) -> ltrc_core::Result<CateArm> {
    let (head, floor) = match s.split_once('@') {
        Some((h, f)) => (h, f.parse::<f64>().map_err(|_| Error::Argument(format!("bad trim floor in arm `{s}`")))?),
        None => (s, 0.1),
    };
    let (loss, oracle) = match head.strip_suffix("-o") {
        Some(l) => (l, true),
        None => (head, false),
    };
    Ok(CateArm::new(LossKind::parse(loss)?, oracle, floor))
}

fn common_overrides(c: &Common) -> ExperimentConfig {
    ExperimentConfig {
        seed: c.seed,
        folds: c.folds,
        trim_floor: c.trim_floor,
        nu: c.nu.clone(),
        nuisance: c.nuisance.clone().map(NuisanceChoice::Label),
        ..Default::default()
    }
}

/// File config overlaid with flags, validated, with the seed resolved.
fn resolve(common: &Common, flags: ExperimentConfig) -> Result<ExperimentConfig, Failure> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::load(p).map_err(|e| Failure::Usage(format!("--config {}: {e}", p.display())))?,
        None => ExperimentConfig::default(),
    };
    let mut cfg = base.overlay(common_overrides(common)).overlay(flags);
    cfg.validate().map_err(usage)?;
    cfg.seed = Some(cfg.seed());
    Ok(cfg)
}

fn echo(cfg: &ExperimentConfig) -> Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn load_data(cfg: &ExperimentConfig) -> Result<Dataset, Failure> {
    let path = cfg.data.as_ref().ok_or_else(|| Failure::Usage("--data is required".into()))?;
    Ok(load_observed_csv(path, cfg.covariates.unwrap_or(2))?)
}

fn formats(fs: &[String]) -> Result<Vec<ReportFormat>, Failure> {
    if fs.is_empty() {
        return Ok(ReportFormat::ALL.to_vec());
    }
    fs.iter().map(|f| ReportFormat::parse(f).map_err(|e| Failure::Usage(format!("--format: {e}")))).collect()
}

fn apply_tuning(learner: LearnerConfig, t: &TuningArgs) -> LearnerConfig {
    match learner {
        LearnerConfig::BoostedTrees { params, mut tuning } => {
            tuning.n_search = t.n_search.unwrap_or(tuning.n_search);
            tuning.cv_folds = t.cv_folds.unwrap_or(tuning.cv_folds);
            tuning.max_trees = t.max_trees.unwrap_or(tuning.max_trees);
            LearnerConfig::BoostedTrees { params, tuning }
        }
        other => other,
    }
}

fn write_json(path: &PathBuf, v: &Value) -> Result<(), Failure> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(Error::from)?;
    }
    fs::write(path, serde_json::to_string_pretty(v).map_err(Error::from)?).map_err(Error::from)?;
    Ok(())
}

fn estimate_ate(data: &Dataset, cfg: &ExperimentConfig, estimator: AteEstimator) -> ltrc_core::Result<AteResult> {
    let nu = cfg.nu_or(Transform::SurvivalIndicator { t0: 3.0 })?;
    let mut nc: NuisanceConfig = cfg.nuisance_or("Cox1/lgs1-Cox1-Cox1")?;
    nc.seed = cfg.seed();
    let floor = cfg.trim_floor();
    match estimator {
        AteEstimator::Dr => solve_ate(data, &fit_scheme_a(data, &nc, floor)?, &nu),
        AteEstimator::DrCrossfit => crossfit_ate(data, cfg.folds(), &nc, &nu, floor, cfg.seed()),
        AteEstimator::Ipw => ipw_ate(data, &fit_scheme_a(data, &nc, floor)?, &nu),
        AteEstimator::FullData => Err(Error::Argument("full-data estimation needs potential outcomes".into())),
    }
}

fn parse_estimator(s: &str) -> Result<AteEstimator, Failure> {
    match s {
        "dr" => Ok(AteEstimator::Dr),
        "dr_crossfit" | "cf" | "crossfit" => Ok(AteEstimator::DrCrossfit),
        "ipw" => Ok(AteEstimator::Ipw),
        _ => Err(Failure::Usage(format!("--estimator: expected dr, dr_crossfit or ipw, got `{s}`"))),
    }
}

fn run_command(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Simulate { scenario, n, seed, out, full_out } => {
            let spec = ScenarioSpec::parse(&scenario).map_err(usage)?;
            if n == 0 {
                return Err(Failure::Usage("--n must be positive".into()));
            }
            let seed = ExperimentConfig { seed, ..Default::default() }.seed();
            let (full, data) = spec.gen_sample(n, seed)?;
            write_observed_csv(&out, &data)?;
            if let Some(p) = full_out {
                write_json(&p, &serde_json::to_value(&full).map_err(Error::from)?)?;
            }
            let s = validate(&data).summary;
            println!(
                "simulated {} observed of {} draws (truncation {:.3}, censoring {:.3}, treated {:.3}) seed {} -> {}",
                data.len(),
                full.len(),
                1.0 - data.len() as f64 / full.len() as f64,
                s.censoring_rate,
                s.treated_fraction,
                seed,
                out.display()
            );
            Ok(())
        }
        Command::EstimateAte { data, common, estimator, bootstrap, out } => {
            let flags = ExperimentConfig { data: data.data, covariates: data.covariates, bootstrap, ..Default::default() };
            let mut cfg = resolve(&common, flags)?;
            let est = match estimator {
                Some(e) => parse_estimator(&e)?,
                None => cfg.estimator.unwrap_or(AteEstimator::Dr),
            };
            cfg.estimator = Some(est);
            let d = load_data(&cfg)?;
            let mut r = estimate_ate(&d, &cfg, est)?;
            if let Some(b) = cfg.bootstrap.filter(|&b| b > 0) {
                let bo = bootstrap_se(&d, |s| estimate_ate(s, &cfg, est).map(|r| r.theta_hat), b, cfg.seed())?;
                r.se_boot = Some(bo.se);
            }
            println!(
                "theta_hat={:.6} se={:.6} ci=[{:.6}, {:.6}] n={} trim_events={}",
                r.theta_hat, r.se_model, r.ci_lower, r.ci_upper, r.n, r.trim_event_count
            );
            let doc = json!({ "config": echo(&cfg), "result": r });
            match out {
                Some(p) => write_json(&p, &doc)?,
                None => println!("{}", serde_json::to_string_pretty(&doc).map_err(Error::from)?),
            }
            Ok(())
        }
        Command::EstimateCate { data, common, tuning, loss, out_dir, grid } => {
            let flags = ExperimentConfig {
                data: data.data,
                covariates: data.covariates,
                loss: loss.as_deref().map(LossKind::parse).transpose().map_err(usage)?,
                output_dir: out_dir,
                ..Default::default()
            };
            let mut cfg = resolve(&common, flags)?;
            let learner = apply_tuning(cfg.learner.clone().unwrap_or_default(), &tuning);
            cfg.learner = Some(learner.clone());
            let d = load_data(&cfg)?;
            let loss = cfg.loss.unwrap_or(LossKind::LtrcR);
            let nu = cfg.nu_or(Transform::Log)?;
            let mut nc = cfg.nuisance_or("pCox/gbm-pCox-pCox")?;
            nc.seed = cfg.seed();
            let fit = crossfit_cate(&d, loss, &nc, &learner, cfg.folds(), &nu, cfg.trim_floor(), cfg.seed())?;
            let dir = cfg.output_dir();
            fs::create_dir_all(&dir).map_err(Error::from)?;
            write_json(&dir.join("cate_model.json"), &json!({ "config": echo(&cfg), "loss": loss, "dropped": fit.dropped, "model": fit.model }))?;
            let mut pred = String::from("index,");
            pred.push_str(&(1..=d.p).map(|j| format!("z{j}")).collect::<Vec<_>>().join(","));
            pred.push_str(",tau_hat\n");
            for (i, r) in d.records.iter().enumerate() {
                let zs: Vec<String> = r.z.iter().map(|v| v.to_string()).collect();
                pred.push_str(&format!("{i},{},{}\n", zs.join(","), fit.model.predict_z(&r.z)));
            }
            fs::write(dir.join("cate_predictions.csv"), pred).map_err(Error::from)?;
            if let Some(g) = grid {
                if d.p != 2 || g < 2 {
                    return Err(Failure::Usage("--grid needs two covariates and at least 2 points".into()));
                }
                let mut s = String::from("z1,z2,tau_hat\n");
                for i in 0..g {
                    for j in 0..g {
                        let z = [-1.0 + 2.0 * i as f64 / (g - 1) as f64, -1.0 + 2.0 * j as f64 / (g - 1) as f64];
                        s.push_str(&format!("{},{},{}\n", z[0], z[1], fit.model.predict_z(&z)));
                    }
                }
                fs::write(dir.join("cate_grid.csv"), s).map_err(Error::from)?;
            }
            println!("fitted {} on {} records ({} dropped), cv loss {:?} -> {}", loss.label(), d.len(), fit.dropped, fit.model.cv_loss, dir.display());
            Ok(())
        }
        Command::BenchAte { common, rows, n, reps, bootstrap, out_dir, format } => {
            let flags = ExperimentConfig {
                rows: (!rows.is_empty()).then_some(rows),
                n,
                reps,
                bootstrap,
                output_dir: out_dir,
                ..Default::default()
            };
            let cfg = resolve(&common, flags)?;
            let fmts = formats(&format)?;
            let all = table1_rows();
            let mut selected: Vec<_> = match &cfg.rows {
                Some(r) => r.iter().map(|&i| all[i - 1].clone()).collect(),
                None => all,
            };
            if let Some(nc) = &cfg.nuisance {
                // A user nuisance config replaces the models of every non-full-data row.
                let nc = nc.resolve().map_err(usage)?;
                for r in selected.iter_mut().filter(|r| r.nuisance.is_some()) {
                    r.nuisance = Some(nc.clone());
                }
            }
            let opts = AteBenchOptions {
                trim_floor: cfg.trim_floor(),
                folds: cfg.folds(),
                bootstrap: cfg.bootstrap.unwrap_or(0),
                theta0: THETA0_ATE,
                nu: cfg.nu_or(Transform::SurvivalIndicator { t0: 3.0 })?,
            };
            let spec = ScenarioSpec::parse("ate").expect("ate scenario");
            let b = run_ate_benchmark(&spec, &selected, cfg.n.unwrap_or(1000), cfg.reps.unwrap_or(200), cfg.seed(), &opts)?;
            for s in &b.summary {
                println!("{}: bias={:+.4} sd={:.4} se={:.4} cp={:.3}", s.row, s.bias, s.sd, s.mean_se, s.cp);
            }
            let paths = emit_report(&BenchmarkResult::Ate(b), &fmts, &cfg.output_dir(), Some(&echo(&cfg)))?;
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::BenchCate { common, tuning, scenario, ns, arms, reps, out_dir, format } => {
            let flags = ExperimentConfig {
                scenario,
                ns: (!ns.is_empty()).then_some(ns),
                arms: (!arms.is_empty()).then_some(arms),
                reps,
                output_dir: out_dir,
                ..Default::default()
            };
            let mut cfg = resolve(&common, flags)?;
            let fmts = formats(&format)?;
            let spec = ScenarioSpec::parse(cfg.scenario.as_deref().unwrap_or("i")).map_err(usage)?;
            if !spec.kind.is_cate() {
                return Err(Failure::Usage("--scenario must be i, ii or iii".into()));
            }
            let arms: Vec<CateArm> = match &cfg.arms {
                Some(a) => a.iter().map(|s| parse_arm(s)).collect::<ltrc_core::Result<_>>().map_err(usage)?,
                None => cate_arms(),
            };
            let learner = apply_tuning(cfg.learner.clone().unwrap_or(LearnerConfig::BoostedTrees { params: None, tuning: TuningConfig::default() }), &tuning);
            cfg.learner = Some(learner.clone());
            let mut opts = CateBenchOptions { folds: cfg.folds(), learner, nu: cfg.nu_or(Transform::Log)?, ..Default::default() };
            if cfg.nuisance.is_some() {
                opts.nuisance = cfg.nuisance_or("pCox/gbm-pCox-pCox").map_err(usage)?;
            }
            if let Some(a) = cfg.truth_atoms {
                opts.truth_atoms = a;
            }
            let ns = cfg.ns.clone().unwrap_or_else(|| vec![500, 1000, 2000]);
            let b = run_cate_benchmark(&spec, &arms, &ns, cfg.reps.unwrap_or(50), cfg.seed(), &opts)?;
            for c in &b.summary {
                println!("{} n={}: median_mse={:.5} q25={:.5} q75={:.5}", c.arm, c.n, c.median_mse, c.q25_mse, c.q75_mse);
            }
            let paths = emit_report(&BenchmarkResult::Cate(b), &fmts, &cfg.output_dir(), Some(&echo(&cfg)))?;
            for p in paths {
                println!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Validate { data } => {
            let cfg = ExperimentConfig { data: data.data, covariates: data.covariates, ..Default::default() };
            cfg.validate().map_err(usage)?;
            let d = load_data(&cfg)?;
            let report = validate(&d);
            println!("{}", serde_json::to_string_pretty(&report).map_err(Error::from)?);
            if report.is_valid() {
                println!("valid: {} records", d.len());
                Ok(())
            } else {
                Err(Failure::Compute(d.ensure_valid().expect_err("invalid dataset")))
            }
        }
    }
}

/// Parse `args` and run the command; returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        if j == 0 {
            eprintln!("error: --jobs must be positive");
            return 1;
        }
        pool = pool.num_threads(j);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return 2;
        }
    };
    match pool.install(|| run_command(cli.command)) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            eprintln!("usage error: {m}");
            1
        }
        Err(Failure::Compute(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
