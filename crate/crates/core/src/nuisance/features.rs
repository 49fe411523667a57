//! Covariate-to-feature maps for the working regression models.
//!
//! A feature spec is either a list of terms over the variables `a`, `q` and
//! `z1..zp` (products with `*`, powers with `^k`), or a basis expansion that
//! puts a natural cubic spline on each continuous variable and adds squares
//! and pairwise interactions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Covariates a feature map may read.
#[derive(Debug, Clone, Copy)]
pub struct Subject<'a> {
    pub q: f64,
    pub a: f64,
    pub z: &'a [f64],
}

impl<'a> Subject<'a> {
    pub fn new(q: f64, a: u8, z: &'a [f64]) -> Self {
        Self { q, a: a as f64, z }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Var {
    A,
    Q,
    /// Zero-based covariate index.
    Z(usize),
}

impl Var {
    pub fn parse(s: &str) -> Result<Var> {
        let s = s.trim();
        match s {
            "a" => Ok(Var::A),
            "q" => Ok(Var::Q),
            _ => {
                let idx = s
                    .strip_prefix('z')
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|&j| j >= 1)
                    .ok_or_else(|| Error::Argument(format!("unknown variable `{s}`")))?;
                Ok(Var::Z(idx - 1))
            }
        }
    }

    pub fn value(&self, s: &Subject) -> f64 {
        match *self {
            Var::A => s.a,
            Var::Q => s.q,
            Var::Z(j) => s.z[j],
        }
    }

    pub fn name(&self) -> String {
        match self {
            Var::A => "a".into(),
            Var::Q => "q".into(),
            Var::Z(j) => format!("z{}", j + 1),
        }
    }
}

/// Product of variable powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub factors: Vec<(Var, i32)>,
}

impl Term {
    pub fn parse(s: &str) -> Result<Term> {
        let mut factors = Vec::new();
        for part in s.split('*') {
            let (var, pow) = match part.split_once('^') {
                Some((v, p)) => {
                    let p: i32 = p
                        .trim()
                        .parse()
                        .map_err(|_| Error::Argument(format!("bad power in term `{s}`")))?;
                    if p < 1 {
                        return Err(Error::Argument(format!("power must be positive in `{s}`")));
                    }
                    (Var::parse(v)?, p)
                }
                None => (Var::parse(part)?, 1),
            };
            factors.push((var, pow));
        }
        Ok(Term { factors })
    }

    pub fn eval(&self, s: &Subject) -> f64 {
        self.factors.iter().map(|(v, p)| v.value(s).powi(*p)).product()
    }

    pub fn uses(&self, var: Var) -> bool {
        self.factors.iter().any(|(v, _)| *v == var)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureSpec {
    Terms { terms: Vec<String> },
    Basis {
        df: usize,
        continuous: Vec<String>,
        binary: Vec<String>,
        #[serde(default = "yes")]
        squares: bool,
        #[serde(default = "yes")]
        interactions: bool,
    },
}

fn yes() -> bool {
    true
}

impl FeatureSpec {
    pub fn terms(terms: &[&str]) -> Self {
        FeatureSpec::Terms {
            terms: terms.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn spline(df: usize, continuous: &[&str], binary: &[&str]) -> Self {
        FeatureSpec::Basis {
            df,
            continuous: continuous.iter().map(|s| s.to_string()).collect(),
            binary: binary.iter().map(|s| s.to_string()).collect(),
            squares: true,
            interactions: true,
        }
    }

    /// Variables read by the feature terms.
    pub fn variables(&self) -> Result<Vec<Var>> {
        let mut out = Vec::new();
        match self {
            FeatureSpec::Terms { terms } => {
                for t in terms {
                    for (v, _) in Term::parse(t)?.factors {
                        if !out.contains(&v) {
                            out.push(v);
                        }
                    }
                }
            }
            FeatureSpec::Basis { continuous, binary, .. } => {
                for s in continuous.iter().chain(binary) {
                    out.push(Var::parse(s)?);
                }
            }
        }
        Ok(out)
    }
}

/// ESL-style natural cubic spline basis without intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalSpline {
    pub knots: Vec<f64>,
}

impl NaturalSpline {
    /// `df + 1` knots at the empirical quantiles `0, 1/df, ..., 1`.
    pub fn from_data(values: &[f64], df: usize) -> Result<Self> {
        if df < 3 {
            return Err(Error::Argument(format!("spline df must be at least 3, got {df}")));
        }
        if values.is_empty() {
            return Err(Error::Degenerate("no data for spline knots".into()));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let knots: Vec<f64> = (0..=df).map(|i| quantile_sorted(&sorted, i as f64 / df as f64)).collect();
        if knots.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Degenerate(
                "spline knots are not distinct; variable has too few unique values".into(),
            ));
        }
        Ok(Self { knots })
    }

    pub fn df(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let k = self.knots.len();
        let last = self.knots[k - 1];
        let d = |j: usize| {
            let c = |t: f64| (x - t).max(0.0).powi(3);
            (c(self.knots[j]) - c(last)) / (last - self.knots[j])
        };
        let dk1 = d(k - 2);
        let mut out = Vec::with_capacity(k - 1);
        out.push(x);
        for j in 0..k - 2 {
            out.push(d(j) - dk1);
        }
        out
    }
}

/// Linear-interpolation sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisMap {
    continuous: Vec<(Var, NaturalSpline)>,
    binary: Vec<Var>,
    squares: bool,
    interactions: bool,
    center: Vec<f64>,
    scale: Vec<f64>,
}

impl BasisMap {
    fn raw(&self, s: &Subject) -> Vec<f64> {
        let splines: Vec<f64> = self
            .continuous
            .iter()
            .flat_map(|(v, ns)| ns.eval(v.value(s)))
            .collect();
        let bins: Vec<f64> = self.binary.iter().map(|v| v.value(s)).collect();
        let mut out = splines.clone();
        out.extend(&bins);
        if self.squares {
            out.extend(splines.iter().map(|x| x * x));
        }
        if self.interactions {
            for i in 0..splines.len() {
                for j in i + 1..splines.len() {
                    out.push(splines[i] * splines[j]);
                }
            }
            for b in &bins {
                out.extend(splines.iter().map(|x| x * b));
            }
            for i in 0..bins.len() {
                for j in i + 1..bins.len() {
                    out.push(bins[i] * bins[j]);
                }
            }
        }
        out
    }
}

/// A feature spec with any data-dependent pieces (knots, scaling) fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureMap {
    Terms(Vec<Term>),
    Basis(BasisMap),
}

impl FeatureMap {
    pub fn fit(spec: &FeatureSpec, training: &[Subject]) -> Result<FeatureMap> {
        match spec {
            FeatureSpec::Terms { terms } => Ok(FeatureMap::Terms(
                terms.iter().map(|t| Term::parse(t)).collect::<Result<_>>()?,
            )),
            FeatureSpec::Basis {
                df,
                continuous,
                binary,
                squares,
                interactions,
            } => {
                if *df < 3 {
                    return Err(Error::Argument(format!("spline df must be at least 3, got {df}")));
                }
                let mut cont = Vec::new();
                for name in continuous {
                    let v = Var::parse(name)?;
                    let vals: Vec<f64> = training.iter().map(|s| v.value(s)).collect();
                    cont.push((v, NaturalSpline::from_data(&vals, *df)?));
                }
                let mut map = BasisMap {
                    continuous: cont,
                    binary: binary.iter().map(|b| Var::parse(b)).collect::<Result<_>>()?,
                    squares: *squares,
                    interactions: *interactions,
                    center: Vec::new(),
                    scale: Vec::new(),
                };
                let rows: Vec<Vec<f64>> = training.iter().map(|s| map.raw(s)).collect();
                let dim = rows.first().map_or(0, |r| r.len());
                let n = rows.len().max(1) as f64;
                let mut center = vec![0.0; dim];
                for r in &rows {
                    for (c, x) in center.iter_mut().zip(r) {
                        *c += x / n;
                    }
                }
                let mut scale = vec![0.0; dim];
                for r in &rows {
                    for j in 0..dim {
                        scale[j] += (r[j] - center[j]).powi(2) / n;
                    }
                }
                for s in scale.iter_mut() {
                    *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
                }
                map.center = center;
                map.scale = scale;
                Ok(FeatureMap::Basis(map))
            }
        }
    }

    pub fn apply(&self, s: &Subject) -> Vec<f64> {
        match self {
            FeatureMap::Terms(terms) => terms.iter().map(|t| t.eval(s)).collect(),
            FeatureMap::Basis(b) => {
                let mut x = b.raw(s);
                for j in 0..x.len() {
                    x[j] = (x[j] - b.center[j]) / b.scale[j];
                }
                x
            }
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeatureMap::Terms(t) => t.len(),
            FeatureMap::Basis(b) => b.center.len(),
        }
    }
}

/// Expand one subject's covariates under a fitted map.
pub fn expand_features(subject: &Subject, map: &FeatureMap) -> Vec<f64> {
    map.apply(subject)
}
