//! Weighted, ridge-penalized Cox regression for counting-process data.
//!
//! Each row contributes an interval `[entry, exit]` during which it is at
//! risk; the risk set at time `t` is `{j : entry_j <= t <= exit_j}`. Ties are
//! handled with Breslow's approximation.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{FeatureMap, Subject};
use crate::error::{Error, Result};
use crate::rng::stream_rng;

pub const GRAD_TOL: f64 = 1e-8;
/// Fallback tolerance when step-halving stalls at machine precision.
pub const STALL_TOL: f64 = 1e-6;
pub const MAX_ITER: usize = 100;
pub const MAX_BETA_NORM: f64 = 50.0;

/// Design for a Cox fit, with features stored row-major.
#[derive(Debug, Clone, Default)]
pub struct CoxData {
    pub entry: Vec<f64>,
    pub exit: Vec<f64>,
    pub event: Vec<bool>,
    pub weight: Vec<f64>,
    pub x: Vec<f64>,
    pub p: usize,
}

impl CoxData {
    pub fn new(p: usize) -> Self {
        Self { p, ..Default::default() }
    }

    pub fn push(&mut self, entry: f64, exit: f64, event: bool, weight: f64, x: &[f64]) {
        debug_assert_eq!(x.len(), self.p);
        self.entry.push(entry);
        self.exit.push(exit);
        self.event.push(event);
        self.weight.push(weight);
        self.x.extend_from_slice(x);
    }

    pub fn len(&self) -> usize {
        self.entry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entry.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.p..(i + 1) * self.p]
    }

    pub fn subset(&self, idx: &[usize]) -> CoxData {
        let mut out = CoxData::new(self.p);
        for &i in idx {
            out.push(self.entry[i], self.exit[i], self.event[i], self.weight[i], self.row(i));
        }
        out
    }

    fn check(&self) -> Result<()> {
        for i in 0..self.len() {
            if !(self.entry[i] < self.exit[i]) {
                return Err(Error::Domain(format!(
                    "cox row {i}: entry {} is not before exit {}",
                    self.entry[i], self.exit[i]
                )));
            }
            if !(self.weight[i] >= 0.0) || !self.weight[i].is_finite() {
                return Err(Error::Domain(format!("cox row {i}: invalid weight {}", self.weight[i])));
            }
        }
        if !self.event.iter().zip(&self.weight).any(|(&e, &w)| e && w > 0.0) {
            return Err(Error::Degenerate("cox fit needs at least one weighted event".into()));
        }
        Ok(())
    }
}

/// Event-time bookkeeping shared by every evaluation at a new beta.
struct Structure {
    /// Distinct event times, ascending.
    times: Vec<f64>,
    /// Total event weight at each time.
    d: Vec<f64>,
    /// Row indices sorted by exit, descending.
    by_exit: Vec<usize>,
    /// Row indices sorted by entry, descending.
    by_entry: Vec<usize>,
    /// Sum of w_i x_i over events.
    event_x: Vec<f64>,
}

impl Structure {
    fn new(data: &CoxData) -> Self {
        let mut ev: Vec<(f64, f64)> = (0..data.len())
            .filter(|&i| data.event[i] && data.weight[i] > 0.0)
            .map(|i| (data.exit[i], data.weight[i]))
            .collect();
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times: Vec<f64> = Vec::new();
        let mut d: Vec<f64> = Vec::new();
        for (t, w) in ev {
            if times.last() == Some(&t) {
                *d.last_mut().unwrap() += w;
            } else {
                times.push(t);
                d.push(w);
            }
        }
        let live: Vec<usize> = (0..data.len()).filter(|&i| data.weight[i] > 0.0).collect();
        let mut by_exit = live.clone();
        by_exit.sort_by(|&a, &b| data.exit[b].total_cmp(&data.exit[a]));
        let mut by_entry = live;
        by_entry.sort_by(|&a, &b| data.entry[b].total_cmp(&data.entry[a]));
        let mut event_x = vec![0.0; data.p];
        for i in 0..data.len() {
            if data.event[i] && data.weight[i] > 0.0 {
                for (acc, x) in event_x.iter_mut().zip(data.row(i)) {
                    *acc += data.weight[i] * x;
                }
            }
        }
        Self { times, d, by_exit, by_entry, event_x }
    }
}

struct Eval {
    loglik: f64,
    grad: Vec<f64>,
    /// Scaled risk-set sums; true sums are these times `exp(shift)`.
    s0: Vec<f64>,
    shift: f64,
}

fn linear_predictors(data: &CoxData, beta: &[f64]) -> Vec<f64> {
    (0..data.len())
        .map(|i| data.row(i).iter().zip(beta).map(|(x, b)| x * b).sum())
        .collect()
}

/// Risk-set sums S0 (and S1 when `p1`) at each event time.
fn risk_sums(data: &CoxData, st: &Structure, r: &[f64], p1: bool) -> (Vec<f64>, Vec<Vec<f64>>) {
    let p = data.p;
    let m = st.times.len();
    let mut s0 = vec![0.0; m];
    let mut s1 = if p1 { vec![vec![0.0; p]; m] } else { Vec::new() };
    let mut acc0 = 0.0;
    let mut acc1 = vec![0.0; p];
    let (mut ie, mut ien) = (0, 0);
    for k in (0..m).rev() {
        let t = st.times[k];
        while ie < st.by_exit.len() && data.exit[st.by_exit[ie]] >= t {
            let j = st.by_exit[ie];
            let wr = data.weight[j] * r[j];
            acc0 += wr;
            if p1 {
                for (a, x) in acc1.iter_mut().zip(data.row(j)) {
                    *a += wr * x;
                }
            }
            ie += 1;
        }
        while ien < st.by_entry.len() && data.entry[st.by_entry[ien]] > t {
            let j = st.by_entry[ien];
            let wr = data.weight[j] * r[j];
            acc0 -= wr;
            if p1 {
                for (a, x) in acc1.iter_mut().zip(data.row(j)) {
                    *a -= wr * x;
                }
            }
            ien += 1;
        }
        s0[k] = acc0;
        if p1 {
            s1[k].copy_from_slice(&acc1);
        }
    }
    (s0, s1)
}

fn evaluate(data: &CoxData, st: &Structure, beta: &[f64], ridge: f64, want_grad: bool) -> Result<(Eval, Vec<Vec<f64>>, Vec<f64>)> {
    let eta = linear_predictors(data, beta);
    let shift = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let r: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
    let (s0, s1) = risk_sums(data, st, &r, want_grad);
    let mut loglik = -0.5 * ridge * beta.iter().map(|b| b * b).sum::<f64>();
    for i in 0..data.len() {
        if data.event[i] && data.weight[i] > 0.0 {
            loglik += data.weight[i] * eta[i];
        }
    }
    for k in 0..st.times.len() {
        if s0[k] <= 0.0 {
            return Err(Error::Degenerate(format!(
                "empty risk set at event time {}",
                st.times[k]
            )));
        }
        loglik -= st.d[k] * (s0[k].ln() + shift);
    }
    let mut grad = Vec::new();
    if want_grad {
        grad = st.event_x.clone();
        for k in 0..st.times.len() {
            let c = st.d[k] / s0[k];
            for (g, s) in grad.iter_mut().zip(&s1[k]) {
                *g -= c * s;
            }
        }
        for (g, b) in grad.iter_mut().zip(beta) {
            *g -= ridge * b;
        }
    }
    Ok((Eval { loglik, grad, s0, shift }, s1, r))
}

/// Negative Hessian of the penalized log partial likelihood.
fn information(data: &CoxData, st: &Structure, ev: &Eval, s1: &[Vec<f64>], r: &[f64], ridge: f64) -> DMatrix<f64> {
    let p = data.p;
    let m = st.times.len();
    let mut cum = vec![0.0; m + 1];
    for k in 0..m {
        cum[k + 1] = cum[k] + st.d[k] / ev.s0[k];
    }
    let mut h = DMatrix::<f64>::zeros(p, p);
    for j in 0..data.len() {
        if data.weight[j] <= 0.0 {
            continue;
        }
        let hi = st.times.partition_point(|&t| t <= data.exit[j]);
        let lo = st.times.partition_point(|&t| t < data.entry[j]);
        if hi <= lo {
            continue;
        }
        let c = data.weight[j] * r[j] * (cum[hi] - cum[lo]);
        let x = data.row(j);
        for a in 0..p {
            let ca = c * x[a];
            for b in 0..=a {
                h[(a, b)] += ca * x[b];
            }
        }
    }
    for k in 0..m {
        let c = st.d[k] / (ev.s0[k] * ev.s0[k]);
        let s = &s1[k];
        for a in 0..p {
            let ca = c * s[a];
            for b in 0..=a {
                h[(a, b)] -= ca * s[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            h[(b, a)] = h[(a, b)];
        }
        h[(a, a)] += ridge;
    }
    h
}

/// Solve `H x = g` for symmetric positive (semi)definite `H`.
pub(crate) fn spd_solve(h: &DMatrix<f64>, g: &[f64]) -> Option<Vec<f64>> {
    let rhs = DVector::from_column_slice(g);
    let scale = (0..h.nrows()).map(|i| h[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut jitter = 0.0;
    for _ in 0..8 {
        let mut hj = h.clone();
        for i in 0..hj.nrows() {
            hj[(i, i)] += jitter;
        }
        if let Some(ch) = hj.cholesky() {
            let x = ch.solve(&rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x.iter().copied().collect());
            }
        }
        jitter = if jitter == 0.0 { scale * 1e-12 } else { jitter * 100.0 };
    }
    None
}

/// Raw result of a Cox fit on a design.
#[derive(Debug, Clone, PartialEq)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub baseline_times: Vec<f64>,
    pub baseline_hazard_increments: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Newton-Raphson with step halving on the penalized log partial likelihood.
pub fn fit_cox(data: &CoxData, ridge: f64) -> Result<CoxFit> {
    fit_cox_from(data, ridge, None)
}

pub fn fit_cox_from(data: &CoxData, ridge: f64, start: Option<&[f64]>) -> Result<CoxFit> {
    if !(ridge >= 0.0) {
        return Err(Error::Argument(format!("ridge penalty must be nonnegative, got {ridge}")));
    }
    data.check()?;
    let st = Structure::new(data);
    let mut beta = start.map_or_else(|| vec![0.0; data.p], |b| b.to_vec());
    let (mut cur, mut s1, mut r) = evaluate(data, &st, &beta, ridge, true)?;
    let mut iterations = 0;
    loop {
        let gnorm = inf_norm(&cur.grad);
        if gnorm < GRAD_TOL || data.p == 0 {
            // A partial likelihood of 1 means every event outranks its risk set.
            if ridge == 0.0 && iterations > 0 && cur.loglik > -1e-6 {
                return Err(Error::Divergence(
                    "cox partial likelihood is saturated; the data look separable, add a ridge penalty".into(),
                ));
            }
            break;
        }
        if iterations >= MAX_ITER {
            return Err(Error::Convergence { model: "cox", iterations, grad_norm: gnorm });
        }
        iterations += 1;
        let h = information(data, &st, &cur, &s1, &r, ridge);
        let step = spd_solve(&h, &cur.grad).ok_or_else(|| {
            Error::Divergence("cox information matrix is singular; add a ridge penalty".into())
        })?;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            if let Ok(next) = evaluate(data, &st, &cand, ridge, true) {
                if next.0.loglik.is_finite() && next.0.loglik >= cur.loglik - 1e-12 * cur.loglik.abs().max(1.0) {
                    accepted = Some((cand, next));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, next)) => {
                let stalled = t < 1.0 && inf_norm(&next.0.grad) >= gnorm;
                beta = cand;
                (cur, s1, r) = next;
                if stalled && inf_norm(&cur.grad) < STALL_TOL {
                    break;
                }
            }
            None if gnorm < STALL_TOL => break,
            None => return Err(Error::Convergence { model: "cox", iterations, grad_norm: gnorm }),
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > MAX_BETA_NORM {
            return Err(Error::Divergence(format!(
                "cox coefficients diverged (norm {norm:.1}); the data look separable, add a ridge penalty"
            )));
        }
    }
    let incs: Vec<f64> = st
        .d
        .iter()
        .zip(&cur.s0)
        .map(|(d, s0)| d / s0 * (-cur.shift).exp())
        .collect();
    Ok(CoxFit {
        grad_norm: inf_norm(&cur.grad),
        beta,
        baseline_times: st.times,
        baseline_hazard_increments: incs,
        loglik: cur.loglik,
        iterations,
    })
}

/// Unpenalized log partial likelihood at a given beta.
pub fn log_partial_likelihood(data: &CoxData, beta: &[f64]) -> Result<f64> {
    data.check()?;
    let st = Structure::new(data);
    Ok(evaluate(data, &st, beta, 0.0, false)?.0.loglik)
}

/// Penalized score and observed information at beta.
pub fn score_and_information(data: &CoxData, beta: &[f64], ridge: f64) -> Result<(Vec<f64>, DMatrix<f64>)> {
    data.check()?;
    let st = Structure::new(data);
    let (ev, s1, r) = evaluate(data, &st, beta, ridge, true)?;
    let h = information(data, &st, &ev, &s1, &r, ridge);
    Ok((ev.grad, h))
}

/// Breslow increments for a fixed beta.
pub fn breslow(data: &CoxData, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    data.check()?;
    let st = Structure::new(data);
    let (ev, _, _) = evaluate(data, &st, beta, 0.0, false)?;
    let incs = st.d.iter().zip(&ev.s0).map(|(d, s0)| d / s0 * (-ev.shift).exp()).collect();
    Ok((st.times, incs))
}

/// Cross-validated choice of ridge penalty.
///
/// Candidates are per-unit-weight penalties; the absolute penalty applied
/// to a fit is the candidate times the fit's total weight. Each held-out
/// fold is scored by the difference between the full-data and the
/// training-data log partial likelihoods at the training-data fit.
pub fn select_ridge_cv(data: &CoxData, grid: &[f64], k: usize, seed: u64) -> Result<(f64, Vec<f64>)> {
    if grid.is_empty() {
        return Err(Error::Argument("empty ridge grid".into()));
    }
    let n = data.len();
    if k < 2 || k > n {
        return Err(Error::Argument(format!("invalid cv fold count {k} for {n} rows")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut stream_rng(seed, 0xc0c5));
    let mut labels = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        labels[i] = pos % k;
    }
    let mut sorted: Vec<f64> = grid.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut scores = vec![0.0; sorted.len()];
    for fold in 0..k {
        let train_idx: Vec<usize> = (0..n).filter(|&i| labels[i] != fold).collect();
        let train = data.subset(&train_idx);
        let total_w: f64 = train.weight.iter().sum();
        let mut warm: Option<Vec<f64>> = None;
        for (g, lam) in sorted.iter().enumerate() {
            let fit = match fit_cox_from(&train, lam * total_w, warm.as_deref()) {
                Ok(f) => f,
                Err(_) => {
                    scores[g] = f64::NEG_INFINITY;
                    continue;
                }
            };
            let full = log_partial_likelihood(data, &fit.beta)?;
            let part = log_partial_likelihood(&train, &fit.beta)?;
            scores[g] += full - part;
            warm = Some(fit.beta);
        }
    }
    let best = scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| sorted[i])
        .ok_or_else(|| Error::Degenerate("no ridge candidate could be fitted".into()))?;
    let mut by_input = Vec::with_capacity(grid.len());
    for lam in grid {
        let i = sorted.iter().position(|s| s == lam).unwrap();
        by_input.push(scores[i]);
    }
    Ok((best, by_input))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeOrientation {
    Forward,
    /// Fitted on `pivot - t`.
    Reversed { pivot: f64 },
}

/// A fitted Cox model together with the map from covariates to features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxModel {
    pub beta: Vec<f64>,
    pub baseline_times: Vec<f64>,
    pub baseline_hazard_increments: Vec<f64>,
    pub feature_map: FeatureMap,
    pub ridge_lambda: f64,
    pub time_orientation: TimeOrientation,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl CoxModel {
    pub fn from_fit(fit: CoxFit, feature_map: FeatureMap, ridge_lambda: f64, time_orientation: TimeOrientation) -> Self {
        Self {
            beta: fit.beta,
            baseline_times: fit.baseline_times,
            baseline_hazard_increments: fit.baseline_hazard_increments,
            feature_map,
            ridge_lambda,
            time_orientation,
            iterations: fit.iterations,
            grad_norm: fit.grad_norm,
        }
    }

    pub fn linear_predictor(&self, s: &Subject) -> f64 {
        self.feature_map
            .apply(s)
            .iter()
            .zip(&self.beta)
            .map(|(x, b)| x * b)
            .sum()
    }

    /// Cumulative baseline hazard on the model's own time scale.
    pub fn baseline_cumhaz(&self, t: f64) -> f64 {
        let k = self.baseline_times.partition_point(|&s| s <= t);
        self.baseline_hazard_increments[..k].iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn toy(p: usize, rows: &[(f64, f64, bool, f64, Vec<f64>)]) -> CoxData {
        let mut d = CoxData::new(p);
        for (en, ex, e, w, x) in rows {
            d.push(*en, *ex, *e, *w, x);
        }
        d
    }

    #[test]
    fn constant_features_give_nelson_aalen() {
        let rows: Vec<_> = [(1.0, true, 1.0), (2.0, false, 2.0), (3.0, true, 1.5), (3.0, true, 0.5), (4.0, true, 1.0)]
            .iter()
            .map(|&(x, e, w)| (0.0, x, e, w, vec![1.0]))
            .collect();
        let d = toy(1, &rows);
        let fit = fit_cox(&d, 0.0).unwrap();
        assert_eq!(fit.beta[0], 0.0);
        assert_eq!(fit.baseline_times, vec![1.0, 3.0, 4.0]);
        let expect = [1.0 / 6.0, 2.0 / 3.0, 1.0];
        for (a, b) in fit.baseline_hazard_increments.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_subject_score_root_matches_bisection() {
        // Subject 1 fails at t=1 with both at risk; subject 2 fails at t=2 alone.
        // Only the first event is informative: score = x1 - (x1 e^{b x1} + x2 e^{b x2})/(e^{b x1} + e^{b x2}).
        // With a ridge the root moves off infinity and bisection gives the oracle.
        let (x1, x2, lam) = (0.7, -0.4, 0.3);
        let d = toy(1, &[(0.0, 1.0, true, 1.0, vec![x1]), (0.0, 2.0, true, 1.0, vec![x2])]);
        let score = |b: f64| {
            let (e1, e2) = ((b * x1).exp(), (b * x2).exp());
            x1 - (x1 * e1 + x2 * e2) / (e1 + e2) - lam * b
        };
        let (mut lo, mut hi) = (-20.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if score(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let fit = fit_cox(&d, lam).unwrap();
        assert_relative_eq!(fit.beta[0], 0.5 * (lo + hi), epsilon = 1e-8);
    }

    #[test]
    fn left_truncated_risk_sets() {
        // The second subject enters at 1.5, after the first event.
        let d = toy(1, &[(0.0, 1.0, true, 1.0, vec![0.0]), (1.5, 3.0, true, 1.0, vec![0.0]), (0.0, 2.0, false, 1.0, vec![0.0])]);
        let (times, incs) = breslow(&d, &[0.0]).unwrap();
        assert_eq!(times, vec![1.0, 3.0]);
        assert_relative_eq!(incs[0], 0.5);
        assert_relative_eq!(incs[1], 1.0);
    }

    #[test]
    fn no_events_is_an_error() {
        let d = toy(1, &[(0.0, 1.0, false, 1.0, vec![0.0])]);
        assert!(matches!(fit_cox(&d, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn separable_data_diverges() {
        let rows: Vec<_> = (0..10)
            .map(|i| (0.0, (i + 1) as f64, true, 1.0, vec![-(i as f64)]))
            .collect();
        let d = toy(1, &rows);
        assert!(matches!(fit_cox(&d, 0.0), Err(Error::Divergence(_)) | Err(Error::Convergence { .. })));
        assert!(fit_cox(&d, 1.0).is_ok());
    }

    #[test]
    fn information_matches_finite_differences() {
        let rows: Vec<_> = (0..30)
            .map(|i| {
                let f = i as f64;
                let x = vec![(f * 0.37).sin(), (f * 0.11).cos()];
                (0.1 * (i % 4) as f64, 1.0 + (f * 1.3) % 5.0, i % 3 != 0, 1.0 + 0.1 * (i % 5) as f64, x)
            })
            .collect();
        let d = toy(2, &rows);
        let beta = [0.3, -0.2];
        let (g, h) = score_and_information(&d, &beta, 0.5).unwrap();
        let eps = 1e-6;
        for a in 0..2 {
            let mut bp = beta;
            bp[a] += eps;
            let mut bm = beta;
            bm[a] -= eps;
            let (gp, _) = score_and_information(&d, &bp, 0.5).unwrap();
            let (gm, _) = score_and_information(&d, &bm, 0.5).unwrap();
            for b in 0..2 {
                let fd = -(gp[b] - gm[b]) / (2.0 * eps);
                assert!((fd - h[(a, b)]).abs() < 1e-6, "{a},{b}: {fd} vs {}", h[(a, b)]);
            }
        }
        let l = |b: &[f64]| log_partial_likelihood(&d, b).unwrap() - 0.25 * b.iter().map(|x| x * x).sum::<f64>();
        for a in 0..2 {
            let mut bp = beta;
            bp[a] += eps;
            let mut bm = beta;
            bm[a] -= eps;
            assert!(((l(&bp) - l(&bm)) / (2.0 * eps) - g[a]).abs() < 1e-6);
        }
    }
}
