//! Binary gradient-boosted decision trees with logistic loss.
//!
//! Each round fits a regression tree to the first and second derivatives of
//! the log-loss (Newton boosting). Trees are grown level by level with exact
//! greedy split search over pre-sorted feature columns; split thresholds are
//! midpoints between adjacent distinct training values.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Probabilities are clamped to `[PROB_EPS, 1 - PROB_EPS]`.
const PROB_EPS: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    /// L2 penalty on leaf weights.
    pub l2_leaf_regularization: f64,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Hyperparameters {
            rounds: 100,
            max_depth: 6,
            learning_rate: 0.3,
            min_child_weight: 1.0,
            l2_leaf_regularization: 1.0,
        }
    }
}

impl Hyperparameters {
    fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if !(self.min_child_weight >= 0.0) || !(self.l2_leaf_regularization >= 0.0) {
            return Err(Error::invalid(
                "min_child_weight and l2_leaf_regularization must be >= 0",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Node {
    Leaf {
        weight: f64,
    },
    /// Rows with `x[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    /// Node 0 is the root.
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_value(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf { weight } => return *weight,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] < *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(nodes: &[Node], i: usize) -> usize {
            match &nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub trees: Vec<Tree>,
    /// Prior log-odds.
    pub base_score: f64,
    pub n_features: usize,
    pub hyperparameters: Hyperparameters,
}

pub fn sigmoid(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(PROB_EPS, 1.0 - PROB_EPS)
}

/// Mean log-loss of margins against 0/1 targets.
pub fn log_loss(margins: &[f64], targets: &[bool]) -> f64 {
    let n = margins.len() as f64;
    margins
        .iter()
        .zip(targets)
        .map(|(&m, &y)| {
            // log(1 + e^m) - y m, evaluated stably
            let softplus = if m > 0.0 {
                m + (-m).exp().ln_1p()
            } else {
                m.exp().ln_1p()
            };
            softplus - if y { m } else { 0.0 }
        })
        .sum::<f64>()
        / n
}

struct SplitCandidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl BoostedTrees {
    /// Train on `features` (`T × D`) and boolean `targets` (true = class 1).
    pub fn train(features: &Matrix, targets: &[bool], params: &Hyperparameters) -> Result<Self> {
        Self::fit(features, targets, params, false).map(|(m, _)| m)
    }

    /// Like [`BoostedTrees::train`], also returning the mean training
    /// log-loss before the first round and after every round.
    pub fn train_traced(
        features: &Matrix,
        targets: &[bool],
        params: &Hyperparameters,
    ) -> Result<(Self, Vec<f64>)> {
        Self::fit(features, targets, params, true)
    }

    fn fit(features: &Matrix, targets: &[bool], params: &Hyperparameters, traced: bool) -> Result<(Self, Vec<f64>)> {
        params.validate()?;
        let n = features.rows();
        if n == 0 {
            return Err(Error::invalid("gbdt: no training rows"));
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: targets.len(),
            });
        }
        if !features.is_finite() {
            return Err(Error::data("gbdt: non-finite training features"));
        }
        let positives = targets.iter().filter(|&&y| y).count();
        if positives == 0 || positives == n {
            return Err(Error::invalid("gbdt: targets contain a single class"));
        }
        let d = features.cols();
        let rate = positives as f64 / n as f64;
        let base_score = (rate / (1.0 - rate)).ln();

        let sorted: Vec<SortedColumn> = (0..d)
            .map(|j| {
                let mut rows: Vec<u32> = (0..n as u32).collect();
                rows.sort_by(|&a, &b| {
                    features[(a as usize, j)]
                        .total_cmp(&features[(b as usize, j)])
                        .then(a.cmp(&b))
                });
                let values = rows.iter().map(|&r| features[(r as usize, j)]).collect();
                SortedColumn { rows, values }
            })
            .collect();

        let mut margins = vec![base_score; n];
        let mut trace = Vec::new();
        if traced {
            trace.push(log_loss(&margins, targets));
        }
        let mut trees = Vec::with_capacity(params.rounds);
        let mut grad = vec![0.0; n];
        let mut hess = vec![0.0; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                let p = sigmoid(margins[i]);
                grad[i] = p - if targets[i] { 1.0 } else { 0.0 };
                hess[i] = p * (1.0 - p);
            }
            let (tree, leaf_of) = grow_tree(features, &sorted, &grad, &hess, params);
            for i in 0..n {
                if let Node::Leaf { weight } = tree.nodes[leaf_of[i]] {
                    margins[i] += params.learning_rate * weight;
                }
            }
            if traced {
                trace.push(log_loss(&margins, targets));
            }
            trees.push(tree);
        }
        Ok((
            BoostedTrees {
                trees,
                base_score,
                n_features: d,
                hyperparameters: params.clone(),
            },
            trace,
        ))
    }

    pub fn margin(&self, x: &[f64]) -> f64 {
        let eta = self.hyperparameters.learning_rate;
        self.base_score + self.trees.iter().map(|t| eta * t.leaf_value(x)).sum::<f64>()
    }

    /// Class-1 probability for every row.
    pub fn predict_proba(&self, features: &Matrix) -> Result<Vec<f64>> {
        if features.cols() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: features.cols(),
            });
        }
        if !features.is_finite() {
            return Err(Error::data("gbdt: non-finite prediction features"));
        }
        Ok(features.iter_rows().map(|r| sigmoid(self.margin(r))).collect())
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::data("gbdt: non-finite prediction features"));
        }
        Ok(sigmoid(self.margin(x)))
    }
}

/// 1 (true) iff `p >= threshold`.
pub fn classify(probabilities: &[f64], threshold: f64) -> Vec<bool> {
    probabilities.iter().map(|&p| p >= threshold).collect()
}

fn leaf_weight(g: f64, h: f64, reg: f64) -> f64 {
    if h + reg > 0.0 {
        -g / (h + reg)
    } else {
        0.0
    }
}

#[inline(always)]
fn score(g: f64, h: f64, reg: f64) -> f64 {
    if h + reg > 0.0 {
        g * g / (h + reg)
    } else {
        0.0
    }
}

/// One feature column in ascending order.
struct SortedColumn {
    rows: Vec<u32>,
    values: Vec<f64>,
}

/// Grow one tree level by level. Returns the tree and, for every training
/// row, the index of the leaf it lands in.
///
/// Each feature's sorted rows are kept partitioned into contiguous
/// per-node segments (in frontier order), so a node's candidates are
/// scanned in one pass.
fn grow_tree(
    x: &Matrix,
    sorted: &[SortedColumn],
    grad: &[f64],
    hess: &[f64],
    params: &Hyperparameters,
) -> (Tree, Vec<usize>) {
    let n = x.rows();
    let reg = params.l2_leaf_regularization;
    let mcw = params.min_child_weight;
    let mut nodes = vec![Node::Leaf { weight: 0.0 }];
    let mut node_of = vec![0usize; n];
    // (G, H) per node
    let mut totals = vec![(grad.iter().sum::<f64>(), hess.iter().sum::<f64>())];
    let mut cols: Vec<(Vec<u32>, Vec<f64>)> = sorted.iter().map(|c| (c.rows.clone(), c.values.clone())).collect();
    // (node, start, end) into every column
    let mut segments = vec![(0usize, 0usize, n)];

    for depth in 0..params.max_depth {
        if segments.is_empty() {
            break;
        }
        let mut best: Vec<Option<SplitCandidate>> = segments.iter().map(|_| None).collect();
        for (feature, (rows, values)) in cols.iter().enumerate() {
            for (s, &(node, a, b)) in segments.iter().enumerate() {
                let (g, h) = totals[node];
                let parent = score(g, h, reg);
                let (mut gl, mut hl, mut prev) = (0.0, 0.0, f64::NAN);
                let mut local: Option<(f64, f64, f64)> = best[s].as_ref().map(|c| (c.gain, 0.0, 0.0));
                let mut found = false;
                for (&r, &v) in rows[a..b].iter().zip(&values[a..b]) {
                    // NaN compares false: the first row opens no split
                    if v > prev && hl >= mcw && h - hl >= mcw {
                        let gain = 0.5 * (score(gl, hl, reg) + score(g - gl, h - hl, reg) - parent);
                        if gain > 0.0 && local.map_or(true, |(bg, _, _)| gain > bg) {
                            local = Some((gain, prev, v));
                            found = true;
                        }
                    }
                    let r = r as usize;
                    gl += grad[r];
                    hl += hess[r];
                    prev = v;
                }
                if let (true, Some((gain, lo, hi))) = (found, local) {
                    let mut threshold = 0.5 * (lo + hi);
                    if threshold <= lo {
                        threshold = hi;
                    }
                    best[s] = Some(SplitCandidate {
                        gain,
                        feature,
                        threshold,
                    });
                }
            }
        }

        let mut children: Vec<Option<(usize, usize, usize, f64)>> = vec![None; nodes.len()];
        let mut split_segments = Vec::new();
        for (s, cand) in best.into_iter().enumerate() {
            let (node, a, b) = segments[s];
            if let Some(c) = cand {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(Node::Leaf { weight: 0.0 });
                nodes.push(Node::Leaf { weight: 0.0 });
                totals.push((0.0, 0.0));
                totals.push((0.0, 0.0));
                nodes[node] = Node::Split {
                    feature: c.feature,
                    threshold: c.threshold,
                    left,
                    right,
                };
                children[node] = Some((left, right, c.feature, c.threshold));
                split_segments.push((node, a, b));
            }
        }
        if split_segments.is_empty() {
            break;
        }
        for row in 0..n {
            if let Some(Some((left, right, feature, threshold))) = children.get(node_of[row]).copied() {
                let child = if x[(row, feature)] < threshold { left } else { right };
                node_of[row] = child;
                totals[child].0 += grad[row];
                totals[child].1 += hess[row];
            }
        }

        if depth + 1 == params.max_depth {
            break;
        }
        // stable partition of every split segment into its two children
        let mut next_segments = Vec::with_capacity(2 * split_segments.len());
        let mut offset = 0;
        for &(node, a, b) in &split_segments {
            let (left, right, _, _) = children[node].expect("split node");
            let n_left = cols[0].0[a..b].iter().filter(|&&r| node_of[r as usize] == left).count();
            next_segments.push((left, offset, offset + n_left));
            next_segments.push((right, offset + n_left, offset + (b - a)));
            offset += b - a;
        }
        let mut new_rows = vec![0u32; offset];
        let mut new_values = vec![0.0; offset];
        for (rows, values) in cols.iter_mut() {
            for (&(node, a, b), next) in split_segments.iter().zip(next_segments.chunks(2)) {
                let (left, _, _, _) = children[node].expect("split node");
                let (mut li, mut ri) = (next[0].1, next[1].1);
                for (&r, &v) in rows[a..b].iter().zip(&values[a..b]) {
                    let slot = if node_of[r as usize] == left {
                        li += 1;
                        li - 1
                    } else {
                        ri += 1;
                        ri - 1
                    };
                    new_rows[slot] = r;
                    new_values[slot] = v;
                }
            }
            std::mem::swap(rows, &mut new_rows);
            std::mem::swap(values, &mut new_values);
            new_rows.truncate(offset);
            new_values.truncate(offset);
            new_rows.resize(offset, 0);
            new_values.resize(offset, 0.0);
        }
        segments = next_segments;
    }

    for (i, node) in nodes.iter_mut().enumerate() {
        if let Node::Leaf { weight } = node {
            *weight = leaf_weight(totals[i].0, totals[i].1, reg);
        }
    }
    (Tree { nodes }, node_of)
}
