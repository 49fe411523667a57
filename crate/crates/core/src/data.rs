//! Observed-data types, CSV ingestion, validation, fold assignment and
//! probability trimming.
//!
//! An observed record is the tuple `(q, x, delta, a, z)`: entry (left
//! truncation) time, exit time `min(T, C)`, event indicator, binary treatment
//! and a covariate vector of fixed dimension.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// One subject's observed left-truncated, right-censored tuple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedRecord {
    /// Entry (left truncation) time.
    pub q: f64,
    /// Exit time, the minimum of event and censoring time.
    pub x: f64,
    /// 1 if the event was observed.
    pub delta: u8,
    /// Binary treatment.
    pub a: u8,
    pub z: Vec<f64>,
}

impl ObservedRecord {
    pub fn new(q: f64, x: f64, delta: u8, a: u8, z: Vec<f64>) -> Self {
        Self { q, x, delta, a, z }
    }

    pub fn is_event(&self) -> bool {
        self.delta == 1
    }

    pub fn treated(&self) -> bool {
        self.a == 1
    }

    /// Time since entry, `x - q`.
    pub fn residual_time(&self) -> f64 {
        self.x - self.q
    }
}

/// Potential-outcome record, available only inside simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullRecord {
    /// Potential event time under treatment.
    pub t1: f64,
    /// Potential event time under control.
    pub t0: f64,
    /// Truncation time for the received treatment.
    pub q: f64,
    /// Residual censoring time `C - Q` for the received treatment.
    pub d: f64,
    pub a: u8,
    pub z: Vec<f64>,
}

impl FullRecord {
    /// Factual event time.
    pub fn t(&self) -> f64 {
        if self.a == 1 {
            self.t1
        } else {
            self.t0
        }
    }

    /// Whether the subject enters the observed (truncated) sample.
    pub fn is_observed(&self) -> bool {
        self.q < self.t()
    }

    /// Observed tuple, or `None` when the subject is truncated away.
    pub fn observe(&self) -> Option<ObservedRecord> {
        if !self.is_observed() {
            return None;
        }
        let t = self.t();
        let c = self.q + self.d;
        let (x, delta) = if t < c { (t, 1) } else { (c, 0) };
        Some(ObservedRecord::new(self.q, x, delta, self.a, self.z.clone()))
    }
}

/// Known bounded transformation applied to the event time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Transform {
    /// `1(t > t0)`.
    SurvivalIndicator { t0: f64 },
    /// `min(t, t0)`.
    Rmst { t0: f64 },
    /// `log(t)`; requires event times bounded away from zero.
    Log,
    /// The constant function, used for `V(1)`.
    Constant { value: f64 },
}

impl Transform {
    pub fn apply(&self, t: f64) -> f64 {
        match *self {
            Transform::SurvivalIndicator { t0 } => {
                if t > t0 {
                    1.0
                } else {
                    0.0
                }
            }
            Transform::Rmst { t0 } => t.min(t0),
            Transform::Log => t.ln(),
            Transform::Constant { value } => value,
        }
    }

    pub fn one() -> Self {
        Transform::Constant { value: 1.0 }
    }

    /// Parse `surv:T`, `rmst:T`, `log` or `const:C`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse transform `{s}`; expected surv:T, rmst:T, log or const:C"));
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a.trim().parse::<f64>().map_err(|_| bad())?)),
            None => (s, None),
        };
        match (name.trim(), arg) {
            ("surv", Some(t0)) => Ok(Transform::SurvivalIndicator { t0 }),
            ("rmst", Some(t0)) => Ok(Transform::Rmst { t0 }),
            ("log", None) => Ok(Transform::Log),
            ("const", Some(value)) => Ok(Transform::Constant { value }),
            _ => Err(bad()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Transform::SurvivalIndicator { t0 } => format!("surv{t0}"),
            Transform::Rmst { t0 } => format!("rmst{t0}"),
            Transform::Log => "log".into(),
            Transform::Constant { value } => format!("const{value}"),
        }
    }
}

/// A collection of observed records sharing a covariate dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub p: usize,
    pub records: Vec<ObservedRecord>,
}

impl Dataset {
    pub fn new(p: usize, records: Vec<ObservedRecord>) -> Self {
        Self { p, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            p: self.p,
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Refuse to hand an invalid dataset to an estimator.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate(self);
        match report.violations.first() {
            None => Ok(()),
            Some(v) => Err(Error::InvalidDataset {
                violations: report.violations.len(),
                first_index: v.index,
                first_rule: v.rule.clone(),
            }),
        }
    }

    pub fn event_count(&self) -> usize {
        self.records.iter().filter(|r| r.delta == 1).count()
    }

    pub fn censored_count(&self) -> usize {
        self.records.iter().filter(|r| r.delta == 0).count()
    }
}

fn expected_header(p: usize) -> Vec<String> {
    let mut cols: Vec<String> = ["q", "x", "delta", "a"].iter().map(|s| s.to_string()).collect();
    cols.extend((1..=p).map(|j| format!("z{j}")));
    cols
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    raw.trim().parse::<f64>().map_err(|e| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("{raw:?}: {e}"),
    })
}

fn parse_binary(raw: &str, row: usize, column: &str) -> Result<u8> {
    let v = parse_cell(raw, row, column)?;
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::Domain(format!(
            "row {row}: {column} must be 0 or 1, got {raw}"
        )))
    }
}

/// Load an observed dataset from a CSV with header `q,x,delta,a,z1,...,zp`.
///
/// Rows are kept in file order. Numbers are parsed with a dot decimal
/// separator regardless of locale.
pub fn load_observed_csv(path: impl AsRef<Path>, p: usize) -> Result<Dataset> {
    let file = File::open(path.as_ref())?;
    read_observed_csv(BufReader::new(file), p)
}

pub fn read_observed_csv<R: BufRead>(reader: R, p: usize) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let expected = expected_header(p);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    for col in &expected {
        if !header.contains(col) {
            return Err(Error::Schema(format!("missing column `{col}`")));
        }
    }
    if header != expected {
        let extra: Vec<&String> = header.iter().filter(|h| !expected.contains(h)).collect();
        if !extra.is_empty() {
            return Err(Error::Schema(format!("unexpected column(s) {extra:?}")));
        }
        return Err(Error::Schema(format!(
            "columns must appear in the order {}",
            expected.join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        // 1-based data row numbers, header excluded.
        let rn = i + 1;
        if row.len() != expected.len() {
            return Err(Error::Schema(format!(
                "row {rn} has {} fields, expected {}",
                row.len(),
                expected.len()
            )));
        }
        let q = parse_cell(&row[0], rn, "q")?;
        let x = parse_cell(&row[1], rn, "x")?;
        let delta = parse_binary(&row[2], rn, "delta")?;
        let a = parse_binary(&row[3], rn, "a")?;
        let z = (0..p)
            .map(|j| parse_cell(&row[4 + j], rn, &expected[4 + j]))
            .collect::<Result<Vec<_>>>()?;
        records.push(ObservedRecord::new(q, x, delta, a, z));
    }
    Ok(Dataset::new(p, records))
}

/// Write a dataset in the same CSV layout `load_observed_csv` reads.
///
/// Floats use the shortest representation that round-trips exactly.
pub fn write_observed_csv(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path.as_ref())?);
    writeln!(out, "{}", expected_header(data.p).join(","))?;
    for r in &data.records {
        write!(out, "{},{},{},{}", r.q, r.x, r.delta, r.a)?;
        for v in &r.z {
            write!(out, ",{v}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub rule: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub truncation_ordering_failures: usize,
    pub censoring_rate: f64,
    pub treated_fraction: f64,
    /// Violation counts keyed by rule id.
    pub rule_counts: BTreeMap<String, usize>,
}

/// Non-fatal validation of a dataset. Never mutates its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n: usize,
    pub violations: Vec<Violation>,
    pub summary: ValidationSummary,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const RULE_Q_LT_X: &str = "q<x";
pub const RULE_FINITE_TIMES: &str = "times finite";
pub const RULE_NONNEGATIVE: &str = "times nonnegative";
pub const RULE_DELTA: &str = "delta∈{0,1}";
pub const RULE_TREATMENT: &str = "a∈{0,1}";
pub const RULE_Z_DIM: &str = "z dimension";
pub const RULE_Z_FINITE: &str = "z finite";

pub fn validate(data: &Dataset) -> ValidationReport {
    let mut violations = Vec::new();
    let mut ordering_failures = 0;
    for (i, r) in data.records.iter().enumerate() {
        let mut push = |rule: &str| {
            violations.push(Violation {
                index: i,
                rule: rule.to_string(),
            })
        };
        let finite = r.q.is_finite() && r.x.is_finite();
        if !finite {
            push(RULE_FINITE_TIMES);
        } else {
            if r.q < 0.0 || r.x < 0.0 {
                push(RULE_NONNEGATIVE);
            }
            if r.q >= r.x {
                push(RULE_Q_LT_X);
                ordering_failures += 1;
            }
        }
        if r.delta > 1 {
            push(RULE_DELTA);
        }
        if r.a > 1 {
            push(RULE_TREATMENT);
        }
        if r.z.len() != data.p {
            push(RULE_Z_DIM);
        } else if r.z.iter().any(|v| !v.is_finite()) {
            push(RULE_Z_FINITE);
        }
    }
    let n = data.len();
    let denom = n.max(1) as f64;
    let mut rule_counts = BTreeMap::new();
    for v in &violations {
        *rule_counts.entry(v.rule.clone()).or_insert(0) += 1;
    }
    ValidationReport {
        n,
        summary: ValidationSummary {
            truncation_ordering_failures: ordering_failures,
            censoring_rate: data.records.iter().filter(|r| r.delta == 0).count() as f64 / denom,
            treated_fraction: data.records.iter().filter(|r| r.a == 1).count() as f64 / denom,
            rule_counts,
        },
        violations,
    }
}

/// Balanced K-fold partition of `0..n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub n: usize,
    pub k: usize,
    /// Fold label in `1..=k` for each index.
    pub labels: Vec<usize>,
    pub seed: u64,
}

impl FoldAssignment {
    /// Indices belonging to fold `fold` (1-based).
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.labels[i] == fold).collect()
    }

    /// Indices outside fold `fold`.
    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.n).filter(|&i| self.labels[i] != fold).collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.k];
        for &l in &self.labels {
            s[l - 1] += 1;
        }
        s
    }
}

/// Uniform random permutation followed by round-robin labelling.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Argument(format!("fold count must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Argument(format!(
            "fold count {k} exceeds sample size {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, 0x0f01d);
    perm.shuffle(&mut rng);
    let mut labels = vec![0; n];
    for (pos, &idx) in perm.iter().enumerate() {
        labels[idx] = pos % k + 1;
    }
    Ok(FoldAssignment { n, k, labels, seed })
}

/// Floor a probability that appears in a denominator.
///
/// Values outside `[0, 1]` are clamped first.
pub fn trim_probability(p: f64, floor: f64) -> f64 {
    p.clamp(0.0, 1.0).max(floor)
}
