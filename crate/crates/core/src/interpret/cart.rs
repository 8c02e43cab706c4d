use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CartConfig {
    pub max_depth: usize,
    pub min_samples_split: usize,
}

impl Default for CartConfig {
    fn default() -> Self {
        CartConfig {
            max_depth: 5,
            min_samples_split: 10,
        }
    }
}

/// One node of a fitted tree. Internal nodes send `x[feature] <= threshold`
/// to `left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    /// Mean target of the samples reaching this node.
    pub value: f64,
    pub n_samples: usize,
    /// Sum of squared deviations from `value`.
    pub sse: f64,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.feature.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    /// Root first; children always follow their parent.
    pub nodes: Vec<TreeNode>,
    /// Total SSE reduction per feature, normalized to sum to 1 (all zero for
    /// a stump).
    pub importances: Vec<f64>,
}

impl RegressionTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut n = &self.nodes[0];
        while let (Some(f), Some(t), Some(l), Some(r)) = (n.feature, n.threshold, n.left, n.right) {
            n = &self.nodes[if x[f] <= t { l } else { r }];
        }
        n.value
    }

    pub fn n_splits(&self) -> usize {
        self.nodes.iter().filter(|n| !n.is_leaf()).count()
    }
}

/// Reductions closer than this fraction of the node SSE are ties.
const TIE_TOLERANCE: f64 = 1e-12;

struct Split {
    feature: usize,
    threshold: f64,
    reduction: f64,
}

/// Squared-error CART grown greedily, depth first.
pub fn fit_cart(inputs: &[Vec<f64>], targets: &[f64], config: CartConfig) -> Result<RegressionTree> {
    if inputs.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} input rows but {} targets",
            inputs.len(),
            targets.len()
        )));
    }
    let min_split = config.min_samples_split.max(2);
    if inputs.len() < min_split {
        return Err(Error::InvalidData(format!(
            "CART needs at least {min_split} samples, got {}",
            inputs.len()
        )));
    }
    let dim = inputs[0].len();
    if let Some(row) = inputs.iter().position(|r| r.len() != dim) {
        return Err(Error::Shape(format!(
            "row {row} has {} features, row 0 has {dim}",
            inputs[row].len()
        )));
    }
    if let Some(i) = targets.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("CART target {i}")));
    }
    let mut tree = RegressionTree {
        nodes: Vec::new(),
        importances: vec![0.0; dim],
    };
    let all: Vec<usize> = (0..inputs.len()).collect();
    grow(&mut tree, inputs, targets, all, 0, config.max_depth, min_split);
    let total: f64 = tree.importances.iter().sum();
    if total > 0.0 {
        tree.importances.iter_mut().for_each(|v| *v /= total);
    }
    Ok(tree)
}

fn grow(
    tree: &mut RegressionTree,
    x: &[Vec<f64>],
    y: &[f64],
    idx: Vec<usize>,
    depth: usize,
    max_depth: usize,
    min_split: usize,
) -> usize {
    let n = idx.len();
    let mean = idx.iter().map(|&i| y[i]).sum::<f64>() / n as f64;
    let sse: f64 = idx.iter().map(|&i| (y[i] - mean).powi(2)).sum();
    let id = tree.nodes.len();
    tree.nodes.push(TreeNode {
        feature: None,
        threshold: None,
        left: None,
        right: None,
        value: mean,
        n_samples: n,
        sse,
    });
    let constant = idx.iter().all(|&i| y[i] == y[idx[0]]);
    if depth >= max_depth || n < min_split || constant {
        return id;
    }
    let Some(split) = best_split(x, y, &idx, mean, sse) else {
        return id;
    };
    tree.importances[split.feature] += split.reduction;
    let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
    let left = grow(tree, x, y, l, depth + 1, max_depth, min_split);
    let right = grow(tree, x, y, r, depth + 1, max_depth, min_split);
    let node = &mut tree.nodes[id];
    node.feature = Some(split.feature);
    node.threshold = Some(split.threshold);
    node.left = Some(left);
    node.right = Some(right);
    id
}

fn best_split(x: &[Vec<f64>], y: &[f64], idx: &[usize], mean: f64, sse: f64) -> Option<Split> {
    let n = idx.len();
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for f in 0..x[idx[0]].len() {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]).then(a.cmp(&b)));
        if x[order[0]][f] == x[order[n - 1]][f] {
            continue;
        }
        // Centered sums keep the SSE differences well conditioned.
        let total: f64 = order.iter().map(|&i| y[i] - mean).sum();
        let (mut s, mut s2) = (0.0, 0.0);
        for k in 0..n - 1 {
            let c = y[order[k]] - mean;
            s += c;
            s2 += c * c;
            let (a, b) = (x[order[k]][f], x[order[k + 1]][f]);
            if a == b {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let sr = total - s;
            let s2r = sse - s2;
            let children = (s2 - s * s / nl) + (s2r - sr * sr / nr);
            let reduction = sse - children;
            // Equal partitions reached through different features differ only
            // by rounding; those count as ties and keep the earlier split.
            let floor = best.as_ref().map_or(TIE_TOLERANCE * sse, |b| b.reduction + TIE_TOLERANCE * sse);
            if reduction > floor {
                let mid = a + (b - a) / 2.0;
                best = Some(Split {
                    feature: f,
                    threshold: if mid < b { mid } else { a },
                    reduction,
                });
            }
        }
    }
    best
}
