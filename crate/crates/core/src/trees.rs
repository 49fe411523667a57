//! Second-order gradient boosting with regression trees.
//!
//! Trees are grown level by level with an exact greedy split search over
//! globally presorted features. Leaf values are ridge-stabilized Newton
//! steps, so losses whose per-row curvature can be negative (weighted
//! squared loss with negative weights) are supported: a split is only
//! considered when both children carry curvature of at least
//! `max(min_child_weight, 1e-8)`, a leaf whose total curvature is not
//! positive gets value zero, and a round that increases the training
//! objective is discarded.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Curvature below which a leaf is treated as flat.
pub const CURVATURE_EPS: f64 = 1e-8;
pub const MIN_LAMBDA: f64 = 1e-6;

/// Differentiable per-row loss driven by the booster.
pub trait Objective: Sync {
    fn len(&self) -> usize;
    /// Per-row contribution to the training objective at raw score `f`.
    fn loss(&self, i: usize, f: f64) -> f64;
    fn grad_hess(&self, i: usize, f: f64) -> (f64, f64);
    fn base_score(&self) -> f64;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `w (y - m f)^2`; weights may be negative.
#[derive(Debug, Clone)]
pub struct WeightedSquared {
    pub weight: Vec<f64>,
    pub multiplier: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl WeightedSquared {
    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            weight: idx.iter().map(|&i| self.weight[i]).collect(),
            multiplier: idx.iter().map(|&i| self.multiplier[i]).collect(),
            outcome: idx.iter().map(|&i| self.outcome[i]).collect(),
        }
    }
}

impl Objective for WeightedSquared {
    fn len(&self) -> usize {
        self.weight.len()
    }

    fn loss(&self, i: usize, f: f64) -> f64 {
        let r = self.outcome[i] - self.multiplier[i] * f;
        self.weight[i] * r * r
    }

    fn grad_hess(&self, i: usize, f: f64) -> (f64, f64) {
        let (w, m) = (self.weight[i], self.multiplier[i]);
        (-2.0 * w * m * (self.outcome[i] - m * f), 2.0 * w * m * m)
    }

    fn base_score(&self) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..self.len() {
            num += self.weight[i] * self.multiplier[i] * self.outcome[i];
            den += self.weight[i] * self.multiplier[i] * self.multiplier[i];
        }
        if den.abs() > CURVATURE_EPS {
            num / den
        } else {
            0.0
        }
    }
}

/// Weighted Bernoulli deviance on the log-odds scale.
#[derive(Debug, Clone)]
pub struct WeightedLogistic {
    pub weight: Vec<f64>,
    pub label: Vec<f64>,
}

impl Objective for WeightedLogistic {
    fn len(&self) -> usize {
        self.weight.len()
    }

    fn loss(&self, i: usize, f: f64) -> f64 {
        let lse = if f > 35.0 { f } else { f.exp().ln_1p() };
        self.weight[i] * (lse - self.label[i] * f)
    }

    fn grad_hess(&self, i: usize, f: f64) -> (f64, f64) {
        let p = crate::nuisance::logistic::expit(f);
        (self.weight[i] * (p - self.label[i]), self.weight[i] * p * (1.0 - p))
    }

    fn base_score(&self) -> f64 {
        let sw: f64 = self.weight.iter().sum();
        let sy: f64 = self.weight.iter().zip(&self.label).map(|(w, y)| w * y).sum();
        let p = (sy / sw).clamp(1e-6, 1.0 - 1e-6);
        (p / (1.0 - p)).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub eta: f64,
    pub lambda: f64,
    pub gamma: f64,
    pub min_child_weight: f64,
    /// Zero disables the cap.
    pub max_delta_step: f64,
    pub subsample: f64,
    pub colsample_bytree: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 3,
            eta: 0.1,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            max_delta_step: 0.0,
            subsample: 1.0,
            colsample_bytree: 1.0,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Argument(format!("learning rate must be in (0,1], got {}", self.eta)));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) || !(self.colsample_bytree > 0.0 && self.colsample_bytree <= 1.0) {
            return Err(Error::Argument("subsample fractions must be in (0,1]".into()));
        }
        if self.gamma < 0.0 || self.min_child_weight < 0.0 || self.max_delta_step < 0.0 {
            return Err(Error::Argument("gamma, min_child_weight and max_delta_step must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatNode {
    /// `None` for leaves.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NestedNode", into = "NestedNode")]
pub struct Tree {
    pub nodes: Vec<FlatNode>,
}

/// Serialized form of a tree: nested split records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NestedNode {
    Split {
        feature: usize,
        threshold: f64,
        left: Box<NestedNode>,
        right: Box<NestedNode>,
    },
    Leaf {
        leaf: f64,
    },
}

impl From<Tree> for NestedNode {
    fn from(t: Tree) -> Self {
        fn build(t: &Tree, i: usize) -> NestedNode {
            let n = &t.nodes[i];
            match n.feature {
                None => NestedNode::Leaf { leaf: n.value },
                Some(f) => NestedNode::Split {
                    feature: f,
                    threshold: n.threshold,
                    left: Box::new(build(t, n.left)),
                    right: Box::new(build(t, n.right)),
                },
            }
        }
        build(&t, 0)
    }
}

impl From<NestedNode> for Tree {
    fn from(n: NestedNode) -> Self {
        fn push(nodes: &mut Vec<FlatNode>, n: NestedNode) -> usize {
            let id = nodes.len();
            nodes.push(FlatNode { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 });
            match n {
                NestedNode::Leaf { leaf } => nodes[id].value = leaf,
                NestedNode::Split { feature, threshold, left, right } => {
                    let l = push(nodes, *left);
                    let r = push(nodes, *right);
                    nodes[id] = FlatNode { feature: Some(feature), threshold, left: l, right: r, value: 0.0 };
                }
            }
            id
        }
        let mut nodes = Vec::new();
        push(&mut nodes, n);
        Tree { nodes }
    }
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let n = &self.nodes[i];
            match n.feature {
                None => return n.value,
                Some(f) => i = if x[f] < n.threshold { n.left } else { n.right },
            }
        }
    }

    /// Prediction for row `i` of a column-major matrix.
    pub fn predict_at(&self, data: &Presorted, i: usize) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            match n.feature {
                None => return n.value,
                Some(f) => k = if data.cols[f][i] < n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Booster {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub params: TreeParams,
    pub rejected_rounds: usize,
}

impl Booster {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base_score + self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Column-major feature matrix with per-feature sort orders.
pub struct Presorted {
    pub cols: Vec<Vec<f64>>,
    pub order: Vec<Vec<usize>>,
    pub n: usize,
}

impl Presorted {
    pub fn new(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        let p = rows.first().map_or(0, |r| r.len());
        let cols: Vec<Vec<f64>> = (0..p).map(|j| rows.iter().map(|r| r[j]).collect()).collect();
        let order = cols
            .iter()
            .map(|c| {
                let mut o: Vec<usize> = (0..n).collect();
                o.sort_by(|&a, &b| c[a].total_cmp(&c[b]));
                o
            })
            .collect();
        Self { cols, order, n }
    }

    pub fn p(&self) -> usize {
        self.cols.len()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.cols.iter().map(|c| c[i]).collect()
    }
}

const NONE: usize = usize::MAX;

struct Best {
    gain: f64,
    feature: usize,
    threshold: f64,
}

fn leaf_value(g: f64, h: f64, p: &TreeParams) -> f64 {
    if h <= CURVATURE_EPS {
        return 0.0;
    }
    let mut v = -g / (h + p.lambda.max(MIN_LAMBDA));
    if p.max_delta_step > 0.0 {
        v = v.clamp(-p.max_delta_step, p.max_delta_step);
    }
    v * p.eta
}

fn score(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Grow one tree on the given rows and features.
fn grow_tree(data: &Presorted, grad: &[f64], hess: &[f64], rows: &[usize], features: &[usize], p: &TreeParams) -> Tree {
    let lambda = p.lambda.max(MIN_LAMBDA);
    let min_h = p.min_child_weight.max(CURVATURE_EPS);
    let mut node_of = vec![NONE; data.n];
    let (mut g0, mut h0) = (0.0, 0.0);
    for &i in rows {
        node_of[i] = 0;
        g0 += grad[i];
        h0 += hess[i];
    }
    let mut nodes = vec![FlatNode { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
    let mut stats = vec![(g0, h0)];
    let mut level: Vec<usize> = vec![0];
    for _depth in 0..p.max_depth {
        if level.is_empty() {
            break;
        }
        // Map node id -> slot in this level.
        let mut slot = vec![NONE; nodes.len()];
        for (s, &id) in level.iter().enumerate() {
            slot[id] = s;
        }
        let mut best: Vec<Option<Best>> = level.iter().map(|_| None).collect();
        for &f in features {
            let col = &data.cols[f];
            let mut gl = vec![0.0; level.len()];
            let mut hl = vec![0.0; level.len()];
            let mut last = vec![f64::NAN; level.len()];
            for &i in &data.order[f] {
                let id = node_of[i];
                if id == NONE || id >= slot.len() || slot[id] == NONE {
                    continue;
                }
                let s = slot[id];
                let x = col[i];
                if !last[s].is_nan() && x > last[s] {
                    let (gt, ht) = stats[id];
                    let (gr, hr) = (gt - gl[s], ht - hl[s]);
                    if hl[s] >= min_h && hr >= min_h {
                        let gain = 0.5 * (score(gl[s], hl[s], lambda) + score(gr, hr, lambda) - score(gt, ht, lambda)) - p.gamma;
                        if gain > 0.0 && best[s].as_ref().is_none_or(|b| gain > b.gain) {
                            best[s] = Some(Best { gain, feature: f, threshold: 0.5 * (last[s] + x) });
                        }
                    }
                }
                gl[s] += grad[i];
                hl[s] += hess[i];
                last[s] = x;
            }
        }
        let mut next = Vec::new();
        for (s, &id) in level.iter().enumerate() {
            if let Some(b) = best[s].take() {
                let l = nodes.len();
                nodes.push(FlatNode { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                nodes.push(FlatNode { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 });
                stats.push((0.0, 0.0));
                stats.push((0.0, 0.0));
                nodes[id].feature = Some(b.feature);
                nodes[id].threshold = b.threshold;
                nodes[id].left = l;
                nodes[id].right = l + 1;
                next.push(l);
                next.push(l + 1);
            }
        }
        if next.is_empty() {
            break;
        }
        for &i in rows {
            let id = node_of[i];
            if let Some(f) = nodes[id].feature {
                let child = if data.cols[f][i] < nodes[id].threshold { nodes[id].left } else { nodes[id].right };
                node_of[i] = child;
                stats[child].0 += grad[i];
                stats[child].1 += hess[i];
            }
        }
        level = next;
    }
    for (id, n) in nodes.iter_mut().enumerate() {
        if n.feature.is_none() {
            n.value = leaf_value(stats[id].0, stats[id].1, p);
        }
    }
    Tree { nodes }
}

pub type RoundHook<'a> = &'a mut dyn FnMut(usize, &Tree, bool);

/// Fit a booster; `hook(round, tree, accepted)` sees every round.
pub fn boost<O: Objective>(data: &Presorted, obj: &O, params: &TreeParams, seed: u64, mut hook: Option<RoundHook>) -> Result<Booster> {
    params.validate()?;
    let n = obj.len();
    if n == 0 || n != data.n {
        return Err(Error::Argument("booster needs one feature row per training row".into()));
    }
    let base = obj.base_score();
    let mut pred = vec![base; n];
    let mut current: f64 = (0..n).map(|i| obj.loss(i, pred[i])).sum();
    let mut trees = Vec::new();
    let mut rejected = 0;
    let mut rng = stream_rng(seed, 0xb005);
    let mut grad = vec![0.0; n];
    let mut hess = vec![0.0; n];
    let all_features: Vec<usize> = (0..data.p()).collect();
    for round in 0..params.n_trees {
        for i in 0..n {
            let (g, h) = obj.grad_hess(i, pred[i]);
            grad[i] = g;
            hess[i] = h;
        }
        let rows: Vec<usize> = if params.subsample < 1.0 {
            (0..n).filter(|_| rng.random::<f64>() < params.subsample).collect()
        } else {
            (0..n).collect()
        };
        let features: Vec<usize> = if params.colsample_bytree < 1.0 {
            let k = ((params.colsample_bytree * data.p() as f64).ceil() as usize).clamp(1, data.p().max(1));
            let mut f = all_features.clone();
            f.shuffle(&mut rng);
            f.truncate(k);
            f.sort();
            f
        } else {
            all_features.clone()
        };
        let tree = grow_tree(data, &grad, &hess, &rows, &features, params);
        let new_pred: Vec<f64> = (0..n)
            .map(|i| pred[i] + tree.predict_at(data, i))
            .collect();
        let new_loss: f64 = (0..n).map(|i| obj.loss(i, new_pred[i])).sum();
        let accepted = new_loss <= current + 1e-12 * current.abs().max(1.0);
        if let Some(h) = hook.as_mut() {
            h(round, &tree, accepted);
        }
        if accepted {
            pred = new_pred;
            current = new_loss;
            trees.push(tree);
        } else {
            rejected += 1;
        }
    }
    Ok(Booster { base_score: base, trees, params: *params, rejected_rounds: rejected })
}
