//! Weighted logistic regression by iteratively reweighted least squares.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::cox::{spd_solve, GRAD_TOL, MAX_BETA_NORM, MAX_ITER, STALL_TOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticFit {
    /// Intercept first.
    pub beta: Vec<f64>,
    pub iterations: usize,
    pub grad_norm: f64,
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log1pexp(x: f64) -> f64 {
    if x > 35.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Rows of `x` exclude the intercept, which is always fitted.
pub struct LogisticProblem<'a> {
    pub x: &'a [Vec<f64>],
    pub y: &'a [f64],
    pub w: &'a [f64],
    /// Penalty on the slopes only.
    pub ridge: f64,
}

impl LogisticProblem<'_> {
    fn eta(&self, beta: &[f64], i: usize) -> f64 {
        beta[0] + self.x[i].iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>()
    }

    fn objective(&self, beta: &[f64]) -> f64 {
        let mut ll = 0.0;
        for i in 0..self.y.len() {
            if self.w[i] == 0.0 {
                continue;
            }
            let e = self.eta(beta, i);
            ll += self.w[i] * (self.y[i] * e - log1pexp(e));
        }
        ll - 0.5 * self.ridge * beta[1..].iter().map(|b| b * b).sum::<f64>()
    }

    fn grad_hess(&self, beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let p = beta.len();
        let mut g = vec![0.0; p];
        let mut h = DMatrix::<f64>::zeros(p, p);
        let mut row = vec![1.0; p];
        for i in 0..self.y.len() {
            if self.w[i] == 0.0 {
                continue;
            }
            row[1..].copy_from_slice(&self.x[i]);
            let mu = expit(self.eta(beta, i));
            let r = self.w[i] * (self.y[i] - mu);
            let v = self.w[i] * mu * (1.0 - mu);
            for a in 0..p {
                g[a] += r * row[a];
                for b in 0..=a {
                    h[(a, b)] += v * row[a] * row[b];
                }
            }
        }
        for a in 1..p {
            g[a] -= self.ridge * beta[a];
            h[(a, a)] += self.ridge;
        }
        for a in 0..p {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (g, h)
    }

    /// Every weighted row fitted to within 1e-6: the likelihood is at its supremum.
    fn separated(&self, beta: &[f64]) -> bool {
        (0..self.y.len()).all(|i| self.w[i] == 0.0 || (self.y[i] - expit(self.eta(beta, i))).abs() < 1e-6)
    }

    /// Sandwich covariance treating weights as fixed.
    pub fn sandwich(&self, beta: &[f64]) -> Option<DMatrix<f64>> {
        let p = beta.len();
        let (_, h) = self.grad_hess(beta);
        let hinv = h.try_inverse()?;
        let mut meat = DMatrix::<f64>::zeros(p, p);
        let mut row = vec![1.0; p];
        for i in 0..self.y.len() {
            row[1..].copy_from_slice(&self.x[i]);
            let s = self.w[i] * (self.y[i] - expit(self.eta(beta, i)));
            for a in 0..p {
                for b in 0..p {
                    meat[(a, b)] += s * s * row[a] * row[b];
                }
            }
        }
        Some(&hinv * meat * &hinv)
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn fit_logistic(prob: &LogisticProblem) -> Result<LogisticFit> {
    let n = prob.y.len();
    if n == 0 || prob.w.iter().all(|&w| w == 0.0) {
        return Err(Error::Degenerate("logistic fit has no weighted rows".into()));
    }
    if prob.w.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::Domain("logistic weights must be finite and nonnegative".into()));
    }
    let p = prob.x.first().map_or(0, |r| r.len()) + 1;
    let sw: f64 = prob.w.iter().sum();
    let ybar = prob.w.iter().zip(prob.y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let mut beta = vec![0.0; p];
    if ybar > 0.0 && ybar < 1.0 {
        beta[0] = (ybar / (1.0 - ybar)).ln();
    }
    let mut obj = prob.objective(&beta);
    let mut iterations = 0;
    loop {
        let (g, h) = prob.grad_hess(&beta);
        let gnorm = inf_norm(&g);
        if gnorm < GRAD_TOL {
            if prob.ridge == 0.0 && p > 1 && prob.separated(&beta) {
                return Err(Error::Divergence(
                    "logistic fit separates the classes; add a ridge penalty on the logistic".into(),
                ));
            }
            return Ok(LogisticFit { beta, iterations, grad_norm: gnorm });
        }
        if iterations >= MAX_ITER {
            return Err(Error::Convergence { model: "logistic", iterations, grad_norm: gnorm });
        }
        iterations += 1;
        let step = spd_solve(&h, &g).ok_or_else(|| {
            Error::Divergence("logistic information matrix is singular; add a ridge penalty".into())
        })?;
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + t * s).collect();
            let o = prob.objective(&cand);
            if o.is_finite() && o >= obj - 1e-12 * obj.abs().max(1.0) {
                beta = cand;
                obj = o;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            if gnorm < STALL_TOL {
                return Ok(LogisticFit { beta, iterations, grad_norm: gnorm });
            }
            return Err(Error::Convergence { model: "logistic", iterations, grad_norm: gnorm });
        }
        let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
        if norm > MAX_BETA_NORM {
            return Err(Error::Divergence(format!(
                "logistic coefficients diverged (norm {norm:.1}); add a ridge penalty on the logistic"
            )));
        }
    }
}
