//! Depth-limited regression trees grown on gradient/hessian statistics.

use serde::{Deserialize, Serialize};

use super::binning::FeatureBins;
use super::{second_order_gain, FeatureMatrix, SplitMode, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub split_feature: usize,
    pub split_threshold: f64,
    pub left: usize,
    pub right: usize,
    pub leaf_value: f64,
    pub is_leaf: bool,
}

impl TreeNode {
    fn leaf(value: f64) -> Self {
        TreeNode {
            split_feature: 0,
            split_threshold: 0.0,
            left: 0,
            right: 0,
            leaf_value: value,
            is_leaf: true,
        }
    }
}

/// Nodes stored flat; node 0 is the root. Rows with `x <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if node.is_leaf {
                return node.leaf_value;
            }
            i = if row[node.split_feature] <= node.split_threshold {
                node.left
            } else {
                node.right
            };
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for n in self.nodes.iter_mut().filter(|n| n.is_leaf) {
            n.leaf_value *= factor;
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.is_leaf).count()
    }

    pub fn max_feature(&self) -> Option<usize> {
        self.nodes
            .iter()
            .filter(|n| !n.is_leaf)
            .map(|n| n.split_feature)
            .max()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Gradient statistics of one node, summed in row-index order.
#[derive(Debug, Clone, Copy)]
struct NodeStats {
    g: f64,
    h: f64,
}

pub(crate) struct TreeGrower<'a> {
    pub data: &'a FeatureMatrix,
    pub bins: Option<(&'a FeatureBins, &'a [Vec<u16>])>,
    pub grad: &'a [f64],
    pub hess: &'a [f64],
    pub config: &'a TrainConfig,
}

impl TreeGrower<'_> {
    pub fn grow(&self, rows: Vec<usize>) -> Tree {
        let mut tree = Tree { nodes: Vec::new() };
        self.grow_node(&mut tree, rows, 0);
        tree
    }

    fn stats(&self, rows: &[usize]) -> NodeStats {
        let mut s = NodeStats { g: 0.0, h: 0.0 };
        for &i in rows {
            s.g += self.grad[i];
            s.h += self.hess[i];
        }
        s
    }

    fn grow_node(&self, tree: &mut Tree, rows: Vec<usize>, depth: usize) -> usize {
        let stats = self.stats(&rows);
        let idx = tree.nodes.len();
        let leaf_value =
            -stats.g / (stats.h + self.config.l2_leaf_penalty) * self.config.learning_rate;
        tree.nodes.push(TreeNode::leaf(leaf_value));
        if depth >= self.config.max_depth || rows.len() < 2 {
            return idx;
        }
        let best = match self.config.split_mode {
            SplitMode::Histogram => self.best_split_histogram(&rows, stats),
            SplitMode::Exact => self.best_split_exact(&rows, stats),
        };
        let Some(best) = best else {
            return idx;
        };
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&i| self.data.get(i, best.feature) <= best.threshold);
        let left = self.grow_node(tree, left_rows, depth + 1);
        let right = self.grow_node(tree, right_rows, depth + 1);
        tree.nodes[idx] = TreeNode {
            split_feature: best.feature,
            split_threshold: best.threshold,
            left,
            right,
            leaf_value: 0.0,
            is_leaf: false,
        };
        idx
    }

    /// Scan cumulative (G, H) over ascending distinct values; keep the first
    /// strictly better candidate so ties resolve to the lowest feature, then
    /// the lowest threshold.
    fn scan<I>(
        &self,
        feature: usize,
        stats: NodeStats,
        groups: I,
        best: &mut Option<SplitCandidate>,
    ) where
        I: Iterator<Item = (f64, f64, f64)>,
    {
        let cfg = self.config;
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut groups = groups.peekable();
        while let Some((threshold, g, h)) = groups.next() {
            gl += g;
            hl += h;
            if groups.peek().is_none() {
                break;
            }
            let gr = stats.g - gl;
            let hr = stats.h - hl;
            if hl < cfg.min_child_hessian || hr < cfg.min_child_hessian {
                continue;
            }
            let gain = second_order_gain(gl, hl, gr, hr, cfg.l2_leaf_penalty);
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain) {
                *best = Some(SplitCandidate {
                    feature,
                    threshold,
                    gain,
                });
            }
        }
    }

    fn best_split_histogram(&self, rows: &[usize], stats: NodeStats) -> Option<SplitCandidate> {
        let (bins, codes) = self.bins.expect("histogram mode requires bins");
        let mut best = None;
        for (f, col) in codes.iter().enumerate().take(self.data.n_cols()) {
            let nb = bins.n_bins(f);
            let mut g = vec![0.0; nb];
            let mut h = vec![0.0; nb];
            let mut count = vec![0usize; nb];
            for &i in rows {
                let b = col[i] as usize;
                g[b] += self.grad[i];
                h[b] += self.hess[i];
                count[b] += 1;
            }
            let edges = bins.edges(f);
            let groups = (0..nb)
                .filter(|&b| count[b] > 0)
                .map(|b| (edges[b], g[b], h[b]));
            self.scan(f, stats, groups, &mut best);
        }
        best
    }

    fn best_split_exact(&self, rows: &[usize], stats: NodeStats) -> Option<SplitCandidate> {
        let mut best = None;
        let mut sorted = rows.to_vec();
        for f in 0..self.data.n_cols() {
            // Stable sort keeps row-index order inside equal values.
            sorted.copy_from_slice(rows);
            sorted.sort_by(|&a, &b| self.data.get(a, f).total_cmp(&self.data.get(b, f)));
            let mut groups: Vec<(f64, f64, f64)> = Vec::new();
            for &i in &sorted {
                let v = self.data.get(i, f);
                match groups.last_mut() {
                    Some(last) if last.0 == v => {
                        last.1 += self.grad[i];
                        last.2 += self.hess[i];
                    }
                    _ => groups.push((v, self.grad[i], self.hess[i])),
                }
            }
            self.scan(f, stats, groups.into_iter(), &mut best);
        }
        best
    }
}
