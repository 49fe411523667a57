//! Right-continuous step functions with finitely many jumps.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepFunction {
    /// Strictly increasing jump locations.
    pub times: Vec<f64>,
    /// Value on `[times[j], times[j+1])`.
    pub values: Vec<f64>,
    /// Value before the first jump.
    pub initial: f64,
}

impl StepFunction {
    pub fn new(times: Vec<f64>, values: Vec<f64>, initial: f64) -> Self {
        debug_assert_eq!(times.len(), values.len());
        debug_assert!(times.windows(2).all(|w| w[0] < w[1]));
        Self { times, values, initial }
    }

    pub fn constant(value: f64) -> Self {
        Self::new(Vec::new(), Vec::new(), value)
    }

    /// Build from possibly tied, unsorted `(time, increment)` pairs.
    pub fn from_increments(initial: f64, mut incs: Vec<(f64, f64)>) -> Self {
        incs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut times = Vec::with_capacity(incs.len());
        let mut values: Vec<f64> = Vec::with_capacity(incs.len());
        let mut cur = initial;
        for (t, d) in incs {
            cur += d;
            if times.last() == Some(&t) {
                *values.last_mut().unwrap() = cur;
            } else {
                times.push(t);
                values.push(cur);
            }
        }
        Self { times, values, initial }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of jumps at or before `t`.
    pub fn count_le(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }

    /// Number of jumps strictly before `t`.
    pub fn count_lt(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s < t)
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self.count_le(t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: f64) -> f64 {
        match self.count_lt(t) {
            0 => self.initial,
            k => self.values[k - 1],
        }
    }

    /// Value just before jump `j`.
    pub fn before(&self, j: usize) -> f64 {
        if j == 0 {
            self.initial
        } else {
            self.values[j - 1]
        }
    }

    pub fn increment(&self, j: usize) -> f64 {
        self.values[j] - self.before(j)
    }

    pub fn last_value(&self) -> f64 {
        self.values.last().copied().unwrap_or(self.initial)
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            times: self.times.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            initial: f(self.initial),
        }
    }

    pub fn is_nondecreasing(&self) -> bool {
        let mut prev = self.initial;
        self.values.iter().all(|&v| {
            let ok = v >= prev;
            prev = v;
            ok
        })
    }

    pub fn is_nonincreasing(&self) -> bool {
        let mut prev = self.initial;
        self.values.iter().all(|&v| {
            let ok = v <= prev;
            prev = v;
            ok
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_is_right_continuous() {
        let s = StepFunction::new(vec![1.0, 2.0], vec![0.3, 1.0], 0.0);
        assert_eq!(s.eval(0.5), 0.0);
        assert_eq!(s.eval(1.0), 0.3);
        assert_eq!(s.eval_left(1.0), 0.0);
        assert_eq!(s.eval(5.0), 1.0);
        assert_eq!(s.eval_left(2.0), 0.3);
        assert!((s.increment(1) - 0.7).abs() < 1e-15);
    }

    #[test]
    fn ties_merge() {
        let s = StepFunction::from_increments(0.0, vec![(2.0, 0.1), (1.0, 0.2), (2.0, 0.3)]);
        assert_eq!(s.times, vec![1.0, 2.0]);
        assert!((s.values[1] - 0.6).abs() < 1e-15);
    }
}
