use serde::{Deserialize, Serialize};

/// Most real-valued bins per feature; bin 0 holds missing values.
const MAX_BINS: usize = 255;
const NEWTON_GUARD: f64 = 1e-9;

/// Row-major raw features; `NaN` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone)]
struct BinnedColumn {
    /// 0 = missing, 1..=thresholds.len() real bins.
    bins: Vec<u16>,
    /// Upper edge of each real bin; a value goes to the first bin whose
    /// edge is >= the value.
    thresholds: Vec<f64>,
}

/// Features quantized once per training run.
#[derive(Debug, Clone)]
pub struct BinnedFeatures {
    columns: Vec<BinnedColumn>,
    rows: usize,
}

impl BinnedFeatures {
    pub fn from_matrix(m: &FeatureMatrix) -> Self {
        let columns = (0..m.cols)
            .map(|c| {
                let col: Vec<f64> = (0..m.rows).map(|r| m.values[r * m.cols + c]).collect();
                bin_column(&col)
            })
            .collect();
        BinnedFeatures {
            columns,
            rows: m.rows,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
}

fn bin_column(col: &[f64]) -> BinnedColumn {
    let mut present: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
    present.sort_by(f64::total_cmp);
    present.dedup();
    let thresholds = if present.len() <= MAX_BINS {
        present
    } else {
        // Quantile edges over the distinct values; the top edge is the max.
        let mut edges: Vec<f64> = (1..=MAX_BINS)
            .map(|k| present[(k * present.len()).div_ceil(MAX_BINS) - 1])
            .collect();
        edges.dedup();
        edges
    };
    let bins = col
        .iter()
        .map(|&v| {
            if v.is_nan() {
                0
            } else {
                (thresholds.partition_point(|&t| t < v) + 1) as u16
            }
        })
        .collect();
    BinnedColumn { bins, thresholds }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        /// Values <= threshold go left.
        threshold: f64,
        missing_left: bool,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<Node>,
}

impl RegressionTree {
    pub fn leaf(value: f64) -> Self {
        RegressionTree {
            nodes: vec![Node::Leaf { value }],
        }
    }

    /// Output for one row; `NaN` features follow the missing direction.
    pub fn predict(&self, features: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf { value } => return value,
                Node::Split {
                    feature,
                    threshold,
                    missing_left,
                    left,
                    right,
                } => {
                    let v = features[feature];
                    let go_left = if v.is_nan() { missing_left } else { v <= threshold };
                    i = if go_left { left } else { right };
                }
            }
        }
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }

    /// Every split's children exist and every node is reachable once.
    pub fn is_well_formed(&self) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            if i >= self.nodes.len() || seen[i] {
                return false;
            }
            seen[i] = true;
            match self.nodes[i] {
                Node::Leaf { value } if !value.is_finite() => return false,
                Node::Leaf { .. } => {}
                Node::Split { left, right, .. } => {
                    stack.push(left);
                    stack.push(right);
                }
            }
        }
        seen.iter().all(|&s| s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_leaves: usize,
    pub min_instances_per_leaf: usize,
}

#[derive(Debug, Clone, Copy)]
struct SplitChoice {
    gain: f64,
    feature: usize,
    /// Last real bin routed left.
    bin: usize,
    missing_left: bool,
}

struct Leaf {
    rows: Vec<u32>,
    node: usize,
    best: Option<SplitChoice>,
}

#[derive(Clone, Copy, Default)]
struct Bucket {
    grad: f64,
    count: usize,
}

fn best_split(
    data: &BinnedFeatures,
    rows: &[u32],
    lambdas: &[f64],
    params: &TreeParams,
    hist: &mut Vec<Bucket>,
) -> Option<SplitChoice> {
    let n = rows.len();
    let min_leaf = params.min_instances_per_leaf.max(1);
    if n < 2 * min_leaf {
        return None;
    }
    let total: f64 = rows.iter().map(|&r| lambdas[r as usize]).sum();
    let sum_sq: f64 = rows.iter().map(|&r| lambdas[r as usize].powi(2)).sum();
    let parent = total * total / n as f64;
    let floor = 1e-9 * sum_sq;
    let mut best: Option<SplitChoice> = None;
    for (f, col) in data.columns.iter().enumerate() {
        let nbins = col.thresholds.len();
        if nbins == 0 {
            continue;
        }
        hist.clear();
        hist.resize(nbins + 1, Bucket::default());
        for &r in rows {
            let b = &mut hist[col.bins[r as usize] as usize];
            b.grad += lambdas[r as usize];
            b.count += 1;
        }
        let missing = hist[0];
        let (mut lg, mut lc) = (0.0, 0usize);
        for bin in 1..=nbins {
            lg += hist[bin].grad;
            lc += hist[bin].count;
            for missing_left in [true, false] {
                let (gl, cl) = if missing_left {
                    (lg + missing.grad, lc + missing.count)
                } else {
                    (lg, lc)
                };
                let (gr, cr) = (total - gl, n - cl);
                if cl < min_leaf || cr < min_leaf {
                    continue;
                }
                let gain = gl * gl / cl as f64 + gr * gr / cr as f64 - parent;
                if gain > floor && best.is_none_or(|b| gain > b.gain) {
                    best = Some(SplitChoice {
                        gain,
                        feature: f,
                        bin,
                        missing_left,
                    });
                }
            }
        }
    }
    best
}

fn newton_value(rows: &[u32], lambdas: &[f64], hessians: &[f64]) -> f64 {
    let g: f64 = rows.iter().map(|&r| lambdas[r as usize]).sum();
    let h: f64 = rows.iter().map(|&r| hessians[r as usize]).sum();
    g / (h + NEWTON_GUARD)
}

/// Best-first growth: repeatedly split the leaf with the largest variance
/// gain on the lambdas until `max_leaves` or no split improves. Leaves hold
/// the Newton step Σλ / (Σh + 1e-9).
pub fn fit_regression_tree(
    data: &BinnedFeatures,
    lambdas: &[f64],
    hessians: &[f64],
    params: &TreeParams,
) -> RegressionTree {
    let mut hist = Vec::new();
    let all: Vec<u32> = (0..data.rows as u32).collect();
    let mut nodes = vec![Node::Leaf { value: 0.0 }];
    let best = best_split(data, &all, lambdas, params, &mut hist);
    let mut leaves = vec![Leaf {
        rows: all,
        node: 0,
        best,
    }];
    while leaves.len() < params.max_leaves.max(1) {
        let pick = leaves
            .iter()
            .enumerate()
            .filter_map(|(i, l)| l.best.map(|b| (i, b.gain)))
            .fold(None, |acc: Option<(usize, f64)>, (i, g)| match acc {
                Some((_, bg)) if bg >= g => acc,
                _ => Some((i, g)),
            });
        let Some((li, _)) = pick else { break };
        let leaf = leaves.swap_remove(li);
        let split = leaf.best.unwrap();
        let col = &data.columns[split.feature];
        let (left_rows, right_rows): (Vec<u32>, Vec<u32>) = leaf.rows.iter().partition(|&&r| {
            match col.bins[r as usize] as usize {
                0 => split.missing_left,
                b => b <= split.bin,
            }
        });
        let left = nodes.len();
        nodes.push(Node::Leaf { value: 0.0 });
        nodes.push(Node::Leaf { value: 0.0 });
        nodes[leaf.node] = Node::Split {
            feature: split.feature,
            threshold: col.thresholds[split.bin - 1],
            missing_left: split.missing_left,
            left,
            right: left + 1,
        };
        for (rows, node) in [(left_rows, left), (right_rows, left + 1)] {
            let best = best_split(data, &rows, lambdas, params, &mut hist);
            leaves.push(Leaf { rows, node, best });
        }
        // keep leaf order stable so gain ties resolve to the oldest node
        leaves.sort_by_key(|l| l.node);
    }
    for leaf in &leaves {
        nodes[leaf.node] = Node::Leaf {
            value: newton_value(&leaf.rows, lambdas, hessians),
        };
    }
    RegressionTree { nodes }
}
