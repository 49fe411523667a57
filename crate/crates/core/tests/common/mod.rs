//! Random step-function nuisances and records shared by the integration tests.
#![allow(dead_code)]

use ltrc_core::operators::{RecordCurves, Trim};
use ltrc_core::step::StepFunction;
use ltrc_core::ObservedRecord;
use rand::Rng;

fn sorted_times<R: Rng>(rng: &mut R, k: usize, hi: f64) -> Vec<f64> {
    let mut t: Vec<f64> = (0..k).map(|_| (rng.random::<f64>() * hi * 100.0).round() / 100.0 + 0.01).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn increasing<R: Rng>(rng: &mut R, k: usize, start: f64, end: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..k).map(|_| 0.05 + rng.random::<f64>()).collect();
    let s: f64 = w.iter().sum();
    let mut acc = start;
    for x in w.iter_mut() {
        acc += (end - start) * *x / s;
        *x = acc;
    }
    w
}

/// F with 1..8 jumps on (0, 10]; total mass in (0.6, 1].
pub fn random_f<R: Rng>(rng: &mut R) -> StepFunction {
    let k = rng.random_range(1..=8);
    let times = sorted_times(rng, k, 10.0);
    let mass = if rng.random::<bool>() { 1.0 } else { 0.6 + 0.4 * rng.random::<f64>() };
    let values = increasing(rng, times.len(), 0.0, mass);
    StepFunction::new(times, values, 0.0)
}

/// G with 1..6 jumps on (0, 6], ending at one, possibly with mass at zero.
pub fn random_g<R: Rng>(rng: &mut R) -> StepFunction {
    let k = rng.random_range(1..=6);
    let times = sorted_times(rng, k, 6.0);
    let start = if rng.random::<bool>() { 0.0 } else { 0.3 * rng.random::<f64>() };
    let values = increasing(rng, times.len(), start, 1.0);
    StepFunction::new(times, values, start)
}

/// S_D with 0..6 drops on (0, 8].
pub fn random_sd<R: Rng>(rng: &mut R) -> StepFunction {
    let k = rng.random_range(0..=6);
    if k == 0 {
        return StepFunction::constant(1.0);
    }
    let times = sorted_times(rng, k, 8.0);
    let end = if rng.random::<bool>() { 0.0 } else { 0.8 * rng.random::<f64>() };
    let values: Vec<f64> = increasing(rng, times.len(), 0.0, 1.0 - end).into_iter().map(|v| 1.0 - v).collect();
    StepFunction::new(times, values, 1.0)
}

/// A record whose times often coincide with nuisance jump points.
pub fn random_record<R: Rng>(rng: &mut R, curves: &RecordCurves) -> ObservedRecord {
    let pick = |rng: &mut R, ts: &[f64], lo: f64, hi: f64| -> f64 {
        if !ts.is_empty() && rng.random::<f64>() < 0.4 {
            ts[rng.random_range(0..ts.len())]
        } else {
            lo + (hi - lo) * rng.random::<f64>()
        }
    };
    let q = pick(rng, &curves.g.times, 0.0, 6.0);
    let ft: Vec<f64> = curves.f.times.iter().copied().filter(|&t| t > q).collect();
    let mut x = pick(rng, &ft, q + 0.01, q + 6.0);
    if x <= q {
        x = q + 0.5;
    }
    let delta = rng.random::<bool>() as u8;
    let a = rng.random::<bool>() as u8;
    ObservedRecord::new(q, x, delta, a, vec![rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0])
}

pub fn random_trim<R: Rng>(rng: &mut R) -> Trim {
    let floor = [0.02, 0.05, 0.1, 0.25, 0.4][rng.random_range(0..5)];
    Trim { floor, one_minus_f: rng.random::<f64>() < 0.8 }
}

pub fn random_config<R: Rng>(rng: &mut R) -> (ObservedRecord, RecordCurves, Trim) {
    let curves = RecordCurves { f: random_f(rng), g: random_g(rng), sd: random_sd(rng) };
    let r = random_record(rng, &curves);
    (r, curves, random_trim(rng))
}

/// Relative difference with an absolute floor of one.
pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}
