//! Doubly robust and orthogonal estimation of average and conditional
//! average treatment effects from left-truncated, right-censored
//! time-to-event data.

// `!(x > 0.0)` comparisons are meant to catch NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop, clippy::large_enum_variant, clippy::type_complexity)]

pub mod ate;
pub mod cate;
pub mod data;
pub mod error;
pub mod nuisance;
pub mod operators;
pub mod report;
pub mod rng;
pub mod sim;
pub mod step;
pub mod trees;

pub use ate::{crossfit_ate, full_data_ate, ipw_ate, solve_ate, AteMethod, AteResult};
pub use cate::{crossfit_cate, oracle_cate, CateFit, CateModel, LearnerConfig, LossKind};
pub use data::{load_observed_csv, validate, write_observed_csv, Dataset, FullRecord, ObservedRecord, Transform};
pub use error::{Error, Result};
pub use nuisance::{fit_scheme_a, NuisanceBundle, NuisanceConfig};
pub use operators::{v_nu, v_one};
pub use report::{emit_report, ReportFormat};
pub use sim::bench::{run_ate_benchmark, run_cate_benchmark, BenchmarkResult};
pub use sim::{gen_ate_sample, gen_cate_sample, mc_true_theta, true_tau, ScenarioKind, ScenarioSpec};
pub use step::StepFunction;
