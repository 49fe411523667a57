//! Second-stage learners minimizing `Σ w (y - m τ(v))²` with weights of
//! either sign.

use nalgebra::{DMatrix, DVector};
use rand::seq::IndexedRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::PseudoObservation;
use crate::data::make_folds;
use crate::error::{Error, Result};
use crate::rng::{derived_seed, stream_rng};
use crate::trees::{boost, Booster, Objective, Presorted, Tree, TreeParams, WeightedSquared};

/// Candidate values for the random search over boosting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchGrid {
    pub subsample: Vec<f64>,
    pub colsample_bytree: Vec<f64>,
    pub eta: Vec<f64>,
    pub max_depth: Vec<usize>,
    pub gamma: Vec<f64>,
    pub min_child_weight: Vec<f64>,
    pub max_delta_step: Vec<f64>,
}

impl Default for SearchGrid {
    fn default() -> Self {
        Self {
            subsample: vec![0.5, 0.7, 0.9],
            colsample_bytree: vec![0.6, 0.8, 1.0],
            eta: vec![0.001, 0.005, 0.01, 0.02, 0.05, 0.08, 0.1],
            max_depth: vec![2, 3, 4, 5, 6],
            gamma: vec![0.0, 0.5, 1.0, 2.0, 3.0, 5.0],
            min_child_weight: (2..=10).map(|k| 5.0 * k as f64).collect(),
            max_delta_step: (0..=5).map(|k| 2.0 * k as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TuningConfig {
    /// Number of random-search candidates.
    #[serde(default = "default_n_search")]
    pub n_search: usize,
    #[serde(default = "default_cv_folds")]
    pub cv_folds: usize,
    /// Upper end of the tree-count search.
    #[serde(default = "default_max_trees")]
    pub max_trees: usize,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub grid: SearchGrid,
}

fn default_n_search() -> usize {
    50
}
fn default_cv_folds() -> usize {
    10
}
fn default_max_trees() -> usize {
    1000
}
fn default_lambda() -> f64 {
    1.0
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            n_search: default_n_search(),
            cv_folds: default_cv_folds(),
            max_trees: default_max_trees(),
            lambda: default_lambda(),
            grid: SearchGrid::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    RidgeLinear {
        #[serde(default)]
        ridge: f64,
    },
    BoostedTrees {
        /// Fixed parameters; when absent they are tuned by random search.
        #[serde(default)]
        params: Option<TreeParams>,
        #[serde(default)]
        tuning: TuningConfig,
    },
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::BoostedTrees { params: None, tuning: TuningConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FittedLearner {
    RidgeLinear {
        intercept: f64,
        coefficients: Vec<f64>,
    },
    BoostedTrees {
        booster: Booster,
    },
}

/// A fitted CATE function τ(v).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateModel {
    pub learner: FittedLearner,
    pub config: LearnerConfig,
    /// Columns of z forming v; `None` means all of z.
    pub v_columns: Option<Vec<usize>>,
    /// Cross-validated loss of the selected configuration, when tuned.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv_loss: Option<f64>,
    pub seed: u64,
}

impl CateModel {
    pub fn predict(&self, v: &[f64]) -> f64 {
        match &self.learner {
            FittedLearner::RidgeLinear { intercept, coefficients } => intercept + coefficients.iter().zip(v).map(|(b, x)| b * x).sum::<f64>(),
            FittedLearner::BoostedTrees { booster } => booster.predict(v),
        }
    }

    /// Prediction at covariates z, selecting the effect modifiers first.
    pub fn predict_z(&self, z: &[f64]) -> f64 {
        match &self.v_columns {
            None => self.predict(z),
            Some(cols) => self.predict(&cols.iter().map(|&j| z[j]).collect::<Vec<_>>()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn objective(pseudo: &[PseudoObservation]) -> WeightedSquared {
    WeightedSquared {
        weight: pseudo.iter().map(|p| p.weight).collect(),
        multiplier: pseudo.iter().map(|p| p.multiplier).collect(),
        outcome: pseudo.iter().map(|p| p.outcome).collect(),
    }
}

/// Weighted ridge regression of `y` on `m·(1, v)`; the intercept is not
/// penalized.
pub fn fit_ridge_linear(pseudo: &[PseudoObservation], ridge: f64) -> Result<(f64, Vec<f64>)> {
    let d = pseudo[0].v.len() + 1;
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut x = vec![0.0; d];
    for p in pseudo {
        x[0] = p.multiplier;
        for (j, v) in p.v.iter().enumerate() {
            x[j + 1] = p.multiplier * v;
        }
        for r in 0..d {
            rhs[r] += p.weight * x[r] * p.outcome;
            for c in 0..d {
                gram[(r, c)] += p.weight * x[r] * x[c];
            }
        }
    }
    for j in 1..d {
        gram[(j, j)] += ridge;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Degenerate(format!("weighted Gram matrix is not positive definite at ridge {ridge}; use a larger ridge"))
    })?;
    let b = chol.solve(&rhs);
    Ok((b[0], b.iter().skip(1).copied().collect()))
}

/// Per-round validation loss of one parameter set, summed over folds.
fn cv_curve(rows: &[Vec<f64>], obj: &WeightedSquared, folds: &crate::data::FoldAssignment, params: &TreeParams, seed: u64) -> Result<Vec<f64>> {
    let mut total = vec![0.0; params.n_trees];
    for j in 1..=folds.k {
        let train_idx = folds.complement(j);
        let val_idx = folds.members(j);
        let train_rows: Vec<Vec<f64>> = train_idx.iter().map(|&i| rows[i].clone()).collect();
        let train_obj = obj.subset(&train_idx);
        let val_obj = obj.subset(&val_idx);
        let val_rows: Vec<Vec<f64>> = val_idx.iter().map(|&i| rows[i].clone()).collect();
        let mut pred = vec![train_obj.base_score(); val_idx.len()];
        let mut loss: f64 = (0..val_idx.len()).map(|i| val_obj.loss(i, pred[i])).sum();
        let data = Presorted::new(&train_rows);
        let mut hook = |round: usize, tree: &Tree, accepted: bool| {
            if accepted {
                loss = 0.0;
                for (i, r) in val_rows.iter().enumerate() {
                    pred[i] += tree.predict(r);
                    loss += val_obj.loss(i, pred[i]);
                }
            }
            total[round] += loss;
        };
        boost(&data, &train_obj, params, derived_seed(seed, j as u64), Some(&mut hook))?;
    }
    Ok(total)
}

fn draw_params(grid: &SearchGrid, tuning: &TuningConfig, seed: u64, s: usize) -> TreeParams {
    let mut rng = stream_rng(seed, 0x5ea7c4 + s as u64);
    let pick = |v: &[f64], rng: &mut crate::rng::Rng| *v.choose(rng).expect("nonempty grid");
    TreeParams {
        n_trees: tuning.max_trees,
        subsample: pick(&grid.subsample, &mut rng),
        colsample_bytree: pick(&grid.colsample_bytree, &mut rng),
        eta: pick(&grid.eta, &mut rng),
        max_depth: *grid.max_depth.choose(&mut rng).expect("nonempty grid"),
        gamma: pick(&grid.gamma, &mut rng),
        min_child_weight: pick(&grid.min_child_weight, &mut rng),
        max_delta_step: pick(&grid.max_delta_step, &mut rng),
        lambda: tuning.lambda,
    }
}

/// Random search: each candidate gets a k-fold validation curve over tree
/// counts; the (candidate, tree count) with the smallest loss wins.
pub fn tune_boosting(pseudo: &[PseudoObservation], tuning: &TuningConfig, seed: u64) -> Result<(TreeParams, f64)> {
    let grid = &tuning.grid;
    let empty = grid.subsample.is_empty()
        || grid.colsample_bytree.is_empty()
        || grid.eta.is_empty()
        || grid.max_depth.is_empty()
        || grid.gamma.is_empty()
        || grid.min_child_weight.is_empty()
        || grid.max_delta_step.is_empty();
    if empty || tuning.n_search == 0 || tuning.max_trees == 0 {
        return Err(Error::Argument("random search needs nonempty grids, n_search >= 1 and max_trees >= 1".into()));
    }
    let rows: Vec<Vec<f64>> = pseudo.iter().map(|p| p.v.clone()).collect();
    let obj = objective(pseudo);
    let folds = make_folds(pseudo.len(), tuning.cv_folds, derived_seed(seed, 0xcf))?;
    let results: Vec<(TreeParams, usize, f64)> = (0..tuning.n_search)
        .into_par_iter()
        .map(|s| {
            let params = draw_params(grid, tuning, seed, s);
            let curve = cv_curve(&rows, &obj, &folds, &params, derived_seed(seed, s as u64))?;
            let (best_round, best) = curve
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |acc, (r, &l)| if l < acc.1 { (r, l) } else { acc });
            Ok((params, best_round + 1, best))
        })
        .collect::<Result<_>>()?;
    let (mut params, trees, loss) = results
        .into_iter()
        .fold(None, |acc: Option<(TreeParams, usize, f64)>, c| match acc {
            Some(a) if a.2 <= c.2 => Some(a),
            _ => Some(c),
        })
        .expect("at least one candidate");
    params.n_trees = trees;
    Ok((params, loss))
}

/// Minimize the pooled weighted squared loss over the learner's class.
pub fn fit_second_stage(pseudo: &[PseudoObservation], config: &LearnerConfig, seed: u64) -> Result<CateModel> {
    if pseudo.is_empty() {
        return Err(Error::Argument("no pseudo-observations to fit".into()));
    }
    if pseudo.iter().all(|p| p.weight == 0.0) {
        return Err(Error::Degenerate("all pseudo-observation weights are zero".into()));
    }
    let (learner, cv_loss) = match config {
        LearnerConfig::RidgeLinear { ridge } => {
            let (intercept, coefficients) = fit_ridge_linear(pseudo, *ridge)?;
            (FittedLearner::RidgeLinear { intercept, coefficients }, None)
        }
        LearnerConfig::BoostedTrees { params, tuning } => {
            let (params, cv) = match params {
                Some(p) => (*p, None),
                None => {
                    let (p, l) = tune_boosting(pseudo, tuning, seed)?;
                    (p, Some(l))
                }
            };
            let rows: Vec<Vec<f64>> = pseudo.iter().map(|p| p.v.clone()).collect();
            let booster = boost(&Presorted::new(&rows), &objective(pseudo), &params, derived_seed(seed, 0xf1), None)?;
            (FittedLearner::BoostedTrees { booster }, cv)
        }
    };
    Ok(CateModel { learner, config: config.clone(), v_columns: None, cv_loss, seed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs(w: f64, m: f64, y: f64, v: f64) -> PseudoObservation {
        PseudoObservation { weight: w, multiplier: m, outcome: y, v: vec![v] }
    }

    #[test]
    fn ridge_interpolates_exact_linear_outcome() {
        let p: Vec<_> = (0..20).map(|i| obs(1.0, 1.0, 3.0 - 2.0 * i as f64 / 10.0, i as f64 / 10.0)).collect();
        let (b0, b) = fit_ridge_linear(&p, 0.0).unwrap();
        assert!((b0 - 3.0).abs() < 1e-8 && (b[0] + 2.0).abs() < 1e-8);
    }

    #[test]
    fn indefinite_ridge_system_is_an_error() {
        let p: Vec<_> = (0..10).map(|i| obs(-1.0, 1.0, 1.0, i as f64)).collect();
        assert!(matches!(fit_ridge_linear(&p, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn tuning_picks_a_tree_count_within_range() {
        let p: Vec<_> = (0..120)
            .map(|i| {
                let v = i as f64 / 120.0;
                obs(1.0, 1.0, if v < 0.5 { 1.0 } else { -1.0 }, v)
            })
            .collect();
        let tuning = TuningConfig { n_search: 3, cv_folds: 3, max_trees: 30, ..Default::default() };
        let cfg = LearnerConfig::BoostedTrees { params: None, tuning };
        let m = fit_second_stage(&p, &cfg, 4).unwrap();
        let FittedLearner::BoostedTrees { booster } = &m.learner else { panic!() };
        assert!(booster.params.n_trees >= 1 && booster.params.n_trees <= 30);
        let again = fit_second_stage(&p, &cfg, 4).unwrap();
        assert_eq!(m, again);
        let back = CateModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back.predict(&[0.2]), m.predict(&[0.2]));
    }

    #[test]
    fn all_zero_weights_rejected() {
        let p = vec![obs(0.0, 1.0, 1.0, 0.0)];
        assert!(fit_second_stage(&p, &LearnerConfig::RidgeLinear { ridge: 1.0 }, 0).is_err());
    }
}
