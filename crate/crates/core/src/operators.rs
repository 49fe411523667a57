//! The truncation operator V_Q, the censoring operator V_C and their
//! composition V = V_C ∘ V_Q, evaluated as exact finite sums over the jumps
//! of the fitted step functions.
//!
//! For a function ζ of the event time, the truncation operator is
//!
//! ```text
//! V_Q(ζ)(Q, t) = ζ(t)/G(t) + Φ(Q)/{(1-F(Q)) G(Q)}
//!                - Σ_{Q <= g < t} Φ(g)/(1-F(g)) · ΔG(g)/G(g)²,
//! ```
//!
//! with `Φ(v) = Σ_{t_j <= v} ζ(t_j) ΔF(t_j)`. For ξ a function of `(Q, T)`,
//! the censoring operator is
//!
//! ```text
//! V_C(ξ) = Δ ξ(X)/S_D(X-Q) + (1-Δ) m̄(X)/S_D(X-Q)
//!          - Σ_{d <= X-Q} m̄(Q+d) · h_D(d)/S_D(d),
//! ```
//!
//! where `m̄(s) = Σ_{t_j >= s} ξ(t_j) ΔF(t_j) / {1 - F(s-)}` and `h_D` is the
//! discrete hazard of S_D. F is normalized by its total mass, and every
//! probability in a denominator is floored.

use crate::data::{trim_probability, ObservedRecord, Transform};
use crate::error::{Error, Result};
use crate::nuisance::{ConditionalDistribution, NuisanceBundle, PropensityModel};
use crate::step::StepFunction;

/// Flooring policy for denominators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Trim {
    pub floor: f64,
    /// Whether `1 - F` is floored as well as G, S_D and the propensity.
    pub one_minus_f: bool,
}

impl Trim {
    pub fn new(floor: f64) -> Self {
        Self { floor, one_minus_f: true }
    }

    pub fn of(bundle: &NuisanceBundle) -> Self {
        Self { floor: bundle.trim_floor, one_minus_f: bundle.trim_one_minus_f }
    }
}

/// Counts how often a floor was binding.
#[derive(Debug, Default, Clone, Copy)]
struct Counter(usize);

impl Counter {
    fn prob(&mut self, p: f64, floor: f64) -> f64 {
        let t = trim_probability(p, floor);
        if t != p {
            self.0 += 1;
        }
        t
    }

    fn one_minus_f(&mut self, s: f64, trim: Trim) -> f64 {
        if trim.one_minus_f {
            self.prob(s, trim.floor)
        } else {
            s
        }
    }
}

/// Normalized jump structure of an event-time CDF.
#[derive(Debug, Clone)]
pub struct FJumps {
    pub times: Vec<f64>,
    /// Normalized masses.
    pub mass: Vec<f64>,
    /// `suffix[j] = Σ_{i >= j} mass[i]`, with `suffix[len] = 0`.
    suffix: Vec<f64>,
}

impl FJumps {
    pub fn new(f: &StepFunction) -> Result<Self> {
        let total = f.last_value();
        if !(total > 0.0) {
            return Err(Error::Degenerate("event-time distribution has zero total mass".into()));
        }
        let mass: Vec<f64> = (0..f.len()).map(|j| f.increment(j) / total).collect();
        let mut suffix = vec![0.0; mass.len() + 1];
        for j in (0..mass.len()).rev() {
            suffix[j] = suffix[j + 1] + mass[j];
        }
        Ok(Self { times: f.times.clone(), mass, suffix })
    }

    fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    fn count_lt(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    /// `1 - F(v)`.
    pub fn surv(&self, v: f64) -> f64 {
        self.suffix[self.count_le(v)]
    }

    /// `1 - F(s-)`.
    pub fn surv_left(&self, s: f64) -> f64 {
        self.suffix[self.count_lt(s)]
    }
}

fn check_finite(v: f64, term: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite { term: term.into() })
    }
}

/// `μ = ∫ ν dF / F(∞)` for one subject's curve.
pub fn mu_curve(f: &StepFunction, nu: &dyn Fn(f64) -> f64) -> Result<f64> {
    let fj = FJumps::new(f)?;
    Ok(fj.times.iter().zip(&fj.mass).map(|(&t, m)| nu(t) * m).sum())
}

pub fn mu(f: &ConditionalDistribution, a: u8, z: &[f64], nu: &Transform) -> Result<f64> {
    mu_curve(&f.curve(0.0, a, z), &|t| nu.apply(t))
}

/// `μ(1, z) π(z) + μ(0, z) {1 - π(z)}` with π untrimmed.
pub fn mu_tilde(pi: &PropensityModel, f: &ConditionalDistribution, z: &[f64], nu: &Transform) -> Result<f64> {
    let p = pi.predict(z);
    Ok(mu(f, 1, z, nu)? * p + mu(f, 0, z, nu)? * (1.0 - p))
}

/// Mean of ν(T) given `T <= v`.
pub fn m_lower(f: &ConditionalDistribution, nu: &Transform, v: f64, a: u8, z: &[f64]) -> Result<f64> {
    let fj = FJumps::new(&f.curve(0.0, a, z))?;
    let k = fj.count_le(v);
    let mass: f64 = fj.mass[..k].iter().sum();
    if !(mass > 0.0) {
        return Err(Error::Degenerate(format!("F({v}) is zero; conditional mean below {v} is undefined")));
    }
    Ok((0..k).map(|j| nu.apply(fj.times[j]) * fj.mass[j]).sum::<f64>() / mass)
}

/// Mean of ν(T) given `T >= q + u`, with `1 - F` floored. Returns the value
/// and whether the floor was binding.
pub fn m_upper(f: &ConditionalDistribution, nu: &Transform, u: f64, q: f64, a: u8, z: &[f64], trim: Trim) -> Result<(f64, bool)> {
    let fj = FJumps::new(&f.curve(q, a, z))?;
    let s = q + u;
    let k = fj.count_lt(s);
    let num: f64 = (k..fj.times.len()).map(|j| nu.apply(fj.times[j]) * fj.mass[j]).sum();
    let mut c = Counter::default();
    let den = c.one_minus_f(fj.suffix[k], trim);
    Ok((check_finite(num / den, "m_upper")?, c.0 > 0))
}

/// Subject-specific curves needed to evaluate V for one record.
#[derive(Debug, Clone)]
pub struct RecordCurves {
    /// F at the record's own treatment.
    pub f: StepFunction,
    pub g: StepFunction,
    pub sd: StepFunction,
}

impl RecordCurves {
    pub fn new(r: &ObservedRecord, bundle: &NuisanceBundle) -> Self {
        Self {
            f: bundle.f.curve(r.q, r.a, &r.z),
            g: bundle.g.curve(r.q, r.a, &r.z),
            sd: bundle.sd.curve(r.q, r.a, &r.z),
        }
    }
}

/// V(ζ) for several ζ sharing the same record and curves.
#[derive(Debug, Clone)]
pub struct OperatorValue {
    pub values: Vec<f64>,
    pub trim_events: usize,
}

/// Closed-form evaluation of V(ν_k) for each ν_k in `nus`.
///
/// Writing `V_Q(t) = ν(t)/G(t) + c - K(t)`, with `c` the point-mass term at
/// `Q` and `K(t)` the sum over truncation jumps in `[Q, t)`, the censoring
/// augmentation needs `m̄(s)` only at `s = Q + d` for censoring jumps `d`.
/// Exchanging the order of summation gives
///
/// ```text
/// m̄(s) R̃(s) = N(s) + c R(s) - R(s) Σ_{Q <= g < s} a(g) - Σ_{g >= s} a(g) {1 - F(g)},
/// ```
///
/// with `R(s) = 1 - F(s-)`, `N(s) = Σ_{t_j >= s} ν(t_j)/G(t_j) ΔF(t_j)` and
/// `a(g) = Φ(g)/(1-F(g)) · ΔG(g)/G(g)²`, which is evaluated with prefix and
/// suffix sums.
pub fn v_closed_form(r: &ObservedRecord, curves: &RecordCurves, nus: &[&dyn Fn(f64) -> f64], trim: Trim) -> Result<OperatorValue> {
    let fl = trim.floor;
    let mut cnt = Counter::default();
    let fj = FJumps::new(&curves.f)?;
    let g = &curves.g;
    let sd = &curves.sd;
    let (q, x) = (r.q, r.x);
    let resid = x - q;
    let nf = fj.times.len();

    // G at each F jump, shared by all ν.
    let g_at_f: Vec<f64> = fj.times.iter().map(|&t| cnt.prob(g.eval(t), fl)).collect();
    let gq = cnt.prob(g.eval(q), fl);
    let wq = cnt.one_minus_f(fj.surv(q), trim);
    let sx = cnt.prob(sd.eval(resid), fl);

    // Truncation jumps at or after Q.
    let k0 = g.count_lt(q);
    let ng = g.len();
    let mut g_tilde = vec![0.0; ng];
    let mut w_g = vec![0.0; ng];
    let mut surv_g = vec![0.0; ng];
    let mut f_idx_g = vec![0; ng];
    for k in k0..ng {
        g_tilde[k] = cnt.prob(g.values[k], fl);
        surv_g[k] = fj.surv(g.times[k]);
        w_g[k] = cnt.one_minus_f(surv_g[k], trim);
        f_idx_g[k] = fj.count_le(g.times[k]);
    }

    // Censoring jumps on [0, X - Q] and the evaluation points s = Q + d.
    let nd = sd.count_le(resid);
    let mut h_over_s = Vec::with_capacity(nd);
    for l in 0..nd {
        let prev = sd.before(l);
        let h = if prev > 0.0 { 1.0 - sd.values[l] / prev } else { 0.0 };
        h_over_s.push(h / cnt.prob(sd.values[l], fl));
    }
    let rt_points: Vec<f64> = (0..nd).map(|l| q + sd.times[l]).collect();
    let rt_den: Vec<f64> = rt_points.iter().map(|&s| cnt.one_minus_f(fj.surv_left(s), trim)).collect();
    let rt_x = cnt.one_minus_f(fj.surv_left(x), trim);

    let mut values = Vec::with_capacity(nus.len());
    for nu in nus {
        // Φ at each F jump.
        let mut phi = vec![0.0; nf + 1];
        for j in 0..nf {
            phi[j + 1] = phi[j] + nu(fj.times[j]) * fj.mass[j];
        }
        let c = phi[fj.count_le(q)] / (wq * gq);
        // a_k with prefix sums A[k] = Σ_{k0 <= i < k} a_i and suffix sums
        // B[k] = Σ_{i >= k} a_i (1 - F(g_i)).
        let mut a_pre = vec![0.0; ng + 1];
        let mut b_suf = vec![0.0; ng + 1];
        let mut a_k = vec![0.0; ng];
        // Jumps of G where 1 - F vanishes untrimmed lie beyond the support of
        // F; their terms only ever meet a zero factor, except inside V_Q(t)
        // for t past the support, which is undefined.
        let mut undefined = vec![0usize; ng + 1];
        for k in k0..ng {
            if w_g[k] == 0.0 {
                continue;
            }
            let dg = g.increment(k);
            a_k[k] = phi[f_idx_g[k]] / w_g[k] * dg / (g_tilde[k] * g_tilde[k]);
        }
        for k in 0..ng {
            a_pre[k + 1] = a_pre[k] + if k >= k0 { a_k[k] } else { 0.0 };
            undefined[k + 1] = undefined[k] + (k >= k0 && w_g[k] == 0.0) as usize;
        }
        for k in (0..ng).rev() {
            b_suf[k] = b_suf[k + 1] + if k >= k0 { a_k[k] * surv_g[k] } else { 0.0 };
        }
        // N(s) suffix sums over F jumps.
        let mut n_suf = vec![0.0; nf + 1];
        for j in (0..nf).rev() {
            n_suf[j] = n_suf[j + 1] + nu(fj.times[j]) / g_at_f[j] * fj.mass[j];
        }
        let m_bar = |s: f64, den: f64| {
            let jf = fj.count_lt(s);
            let kg = g.count_lt(s).max(k0);
            let r = fj.suffix[jf];
            (n_suf[jf] + c * r - r * a_pre[kg] - b_suf[kg]) / den
        };

        let mut v = 0.0;
        if r.delta == 1 {
            let gx = g_tilde_at(g, x, fl);
            let kx = g.count_lt(x).max(k0);
            if undefined[kx] > 0 {
                return Err(Error::NonFinite { term: "V closed form".into() });
            }
            let vq_x = nu(x) / gx + c - a_pre[kx];
            v += vq_x / sx;
        } else {
            v += m_bar(x, rt_x) / sx;
        }
        let mut aug = 0.0;
        for l in 0..nd {
            aug += m_bar(rt_points[l], rt_den[l]) * h_over_s[l];
        }
        v -= aug;
        values.push(check_finite(v, "V closed form")?);
    }
    if r.delta == 1 && g.eval(x) < fl {
        cnt.0 += 1;
    }
    Ok(OperatorValue { values, trim_events: cnt.0 })
}

fn g_tilde_at(g: &StepFunction, t: f64, floor: f64) -> f64 {
    trim_probability(g.eval(t), floor)
}

/// V(ν) and V(1) for one record.
pub fn v_pair(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform) -> Result<(f64, f64, usize)> {
    let curves = RecordCurves::new(r, bundle);
    let nu_f = |t: f64| nu.apply(t);
    let one = |_t: f64| 1.0;
    let out = v_closed_form(r, &curves, &[&nu_f, &one], Trim::of(bundle))?;
    Ok((out.values[0], out.values[1], out.trim_events))
}

pub fn v_nu(r: &ObservedRecord, bundle: &NuisanceBundle, nu: &Transform) -> Result<f64> {
    let curves = RecordCurves::new(r, bundle);
    let nu_f = |t: f64| nu.apply(t);
    Ok(v_closed_form(r, &curves, &[&nu_f], Trim::of(bundle))?.values[0])
}

/// V(1), the same code path as `v_nu` with ν ≡ 1.
pub fn v_one(r: &ObservedRecord, bundle: &NuisanceBundle) -> Result<f64> {
    v_nu(r, bundle, &Transform::one())
}

/// Truncation operator on curves, summed term by term.
pub fn v_q_curves(zeta: &dyn Fn(f64) -> f64, q: f64, t: f64, f: &StepFunction, g: &StepFunction, trim: Trim) -> Result<f64> {
    let fj = FJumps::new(f)?;
    let fl = trim.floor;
    let one_minus_f = |v: f64| {
        let s = fj.surv(v);
        if trim.one_minus_f {
            trim_probability(s, fl)
        } else {
            s
        }
    };
    let phi = |v: f64| -> f64 {
        fj.times
            .iter()
            .zip(&fj.mass)
            .filter(|(tj, _)| **tj <= v)
            .map(|(tj, m)| zeta(*tj) * m)
            .sum()
    };
    let gt = |v: f64| trim_probability(g.eval(v), fl);
    let mut v = zeta(t) / gt(t);
    // Point mass of the truncation counting process at v = Q.
    v += phi(q) / (one_minus_f(q) * gt(q));
    // Compensator over Q <= v < t.
    for k in 0..g.len() {
        let gk = g.times[k];
        if gk >= q && gk < t {
            let gtk = trim_probability(g.values[k], fl);
            v -= phi(gk) / one_minus_f(gk) * g.increment(k) / (gtk * gtk);
        }
    }
    check_finite(v, "V_Q")
}

/// Censoring operator on curves; `xi(t)` is ξ(Q, t) for the record's Q.
pub fn v_c_curves(xi: &dyn Fn(f64) -> f64, r: &ObservedRecord, f: &StepFunction, sd: &StepFunction, trim: Trim) -> Result<f64> {
    let fj = FJumps::new(f)?;
    let fl = trim.floor;
    let resid = r.x - r.q;
    let m_bar = |s: f64| -> f64 {
        let num: f64 = fj
            .times
            .iter()
            .zip(&fj.mass)
            .filter(|(tj, _)| **tj >= s)
            .map(|(tj, m)| xi(*tj) * m)
            .sum();
        let den = fj.surv_left(s);
        num / if trim.one_minus_f { trim_probability(den, fl) } else { den }
    };
    let sx = trim_probability(sd.eval(resid), fl);
    let mut v = if r.delta == 1 { xi(r.x) / sx } else { m_bar(r.x) / sx };
    for l in 0..sd.len() {
        let d = sd.times[l];
        if d > resid {
            break;
        }
        let prev = sd.before(l);
        let h = if prev > 0.0 { 1.0 - sd.values[l] / prev } else { 0.0 };
        v -= m_bar(r.q + d) * h / trim_probability(sd.values[l], fl);
    }
    check_finite(v, "V_C")
}

/// The truncation operator for ζ(t, a, z) at a censoring-free `(q, t, a, z)`.
#[allow(clippy::too_many_arguments)]
pub fn v_q_general(zeta: &dyn Fn(f64, u8, &[f64]) -> f64, q: f64, t: f64, a: u8, z: &[f64], f: &ConditionalDistribution, g: &ConditionalDistribution, trim: Trim) -> Result<f64> {
    v_q_curves(&|s| zeta(s, a, z), q, t, &f.curve(q, a, z), &g.curve(q, a, z), trim)
}

/// The censoring operator for ξ(q, t, a, z) at an observed record.
pub fn v_c_general(xi: &dyn Fn(f64, f64, u8, &[f64]) -> f64, r: &ObservedRecord, f: &ConditionalDistribution, sd: &ConditionalDistribution, trim: Trim) -> Result<f64> {
    v_c_curves(&|t| xi(r.q, t, r.a, &r.z), r, &f.curve(r.q, r.a, &r.z), &sd.curve(r.q, r.a, &r.z), trim)
}

/// V(ζ) computed as V_C applied to V_Q(ζ), term by term.
pub fn v_composed(zeta: &dyn Fn(f64) -> f64, r: &ObservedRecord, curves: &RecordCurves, trim: Trim) -> Result<f64> {
    let xi = |t: f64| v_q_curves(zeta, r.q, t, &curves.f, &curves.g, trim).unwrap_or(f64::NAN);
    v_c_curves(&xi, r, &curves.f, &curves.sd, trim)
}
