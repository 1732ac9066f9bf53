//! Exact-split regression trees used as the boosting base learner.
//!
//! Split finding is the pre-sorted exact algorithm: every feature column is
//! argsorted once per training run, and each tree level walks the sorted
//! order accumulating gradient/hessian prefixes per node. No histogram
//! binning, so split thresholds are exact midpoints between observed values
//! and training is bit-deterministic for a fixed sample order.

/// Sentinel feature index marking a leaf node.
pub(crate) const LEAF_FEATURE: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct TreeNode {
    pub feature: u32,
    pub threshold: f64,
    pub left: u32,
    pub right: u32,
    pub value: f64,
}

impl TreeNode {
    fn leaf() -> Self {
        TreeNode {
            feature: LEAF_FEATURE,
            threshold: 0.0,
            left: 0,
            right: 0,
            value: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub(crate) struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut id = 0usize;
        loop {
            let n = &self.nodes[id];
            if n.feature == LEAF_FEATURE {
                return n.value;
            }
            id = if x[n.feature as usize] <= n.threshold {
                n.left as usize
            } else {
                n.right as usize
            };
        }
    }

}

pub(crate) struct GrowParams {
    pub max_depth: u32,
    pub learning_rate: f64,
    pub lambda: f64,
    pub min_samples_leaf: usize,
}

/// Minimum structure-score improvement required to split a node.
const MIN_GAIN: f64 = 1e-9;

#[derive(Clone, Copy)]
struct NodeStats {
    grad: f64,
    hess: f64,
    count: usize,
    depth: u32,
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: u32,
    threshold: f64,
}

#[derive(Clone, Copy)]
struct Acc {
    grad: f64,
    hess: f64,
    count: usize,
    last_value: f32,
}

fn leaf_weight(stats: &NodeStats, p: &GrowParams) -> f64 {
    -p.learning_rate * stats.grad / (stats.hess + p.lambda)
}

fn structure_score(grad: f64, hess: f64, lambda: f64) -> f64 {
    grad * grad / (hess + lambda)
}

/// Grow one tree on `(grad, hess)` and return it together with the leaf
/// index every sample ends in, so the caller can apply score updates
/// without re-traversing.
pub(crate) fn build_tree(
    cols: &[Vec<f32>],
    sorted: &[Vec<u32>],
    grad: &[f64],
    hess: &[f64],
    p: &GrowParams,
) -> (Tree, Vec<u32>) {
    let n = grad.len();
    let root_stats = NodeStats {
        grad: grad.iter().sum(),
        hess: hess.iter().sum(),
        count: n,
        depth: 0,
    };
    let mut nodes = vec![TreeNode::leaf()];
    let mut stats = vec![root_stats];
    let mut node_of = vec![0u32; n];

    let mut active: Vec<u32> = Vec::new();
    if p.max_depth > 0 && n >= 2 * p.min_samples_leaf && n >= 2 {
        active.push(0);
    } else {
        nodes[0].value = leaf_weight(&root_stats, p);
    }

    while !active.is_empty() {
        let n_active = active.len();
        let mut slot_of = vec![u32::MAX; nodes.len()];
        for (slot, &nid) in active.iter().enumerate() {
            slot_of[nid as usize] = slot as u32;
        }
        let mut best = vec![
            Candidate {
                gain: 0.0,
                feature: 0,
                threshold: 0.0,
            };
            n_active
        ];
        let parent: Vec<NodeStats> = active.iter().map(|&nid| stats[nid as usize]).collect();

        for (j, (col, order)) in cols.iter().zip(sorted).enumerate() {
            let mut acc = vec![
                Acc {
                    grad: 0.0,
                    hess: 0.0,
                    count: 0,
                    last_value: 0.0,
                };
                n_active
            ];
            for &iu in order {
                let i = iu as usize;
                let slot = slot_of[node_of[i] as usize];
                if slot == u32::MAX {
                    continue;
                }
                let slot = slot as usize;
                let v = col[i];
                let a = &mut acc[slot];
                if a.count > 0 && v > a.last_value {
                    let ps = &parent[slot];
                    let right_count = ps.count - a.count;
                    if a.count >= p.min_samples_leaf && right_count >= p.min_samples_leaf {
                        let gl = a.grad;
                        let hl = a.hess;
                        let gain = 0.5
                            * (structure_score(gl, hl, p.lambda)
                                + structure_score(ps.grad - gl, ps.hess - hl, p.lambda)
                                - structure_score(ps.grad, ps.hess, p.lambda));
                        if gain > best[slot].gain {
                            best[slot] = Candidate {
                                gain,
                                feature: j as u32,
                                threshold: (a.last_value as f64 + v as f64) / 2.0,
                            };
                        }
                    }
                }
                a.grad += grad[i];
                a.hess += hess[i];
                a.count += 1;
                a.last_value = v;
            }
        }

        // Turn winning candidates into internal nodes; finalize the rest.
        let mut split_nodes: Vec<u32> = Vec::new();
        for (slot, &nid) in active.iter().enumerate() {
            let nid_us = nid as usize;
            if best[slot].gain > MIN_GAIN {
                let left = nodes.len() as u32;
                let right = left + 1;
                let depth = stats[nid_us].depth + 1;
                nodes.push(TreeNode::leaf());
                nodes.push(TreeNode::leaf());
                let zero = NodeStats {
                    grad: 0.0,
                    hess: 0.0,
                    count: 0,
                    depth,
                };
                stats.push(zero);
                stats.push(zero);
                let node = &mut nodes[nid_us];
                node.feature = best[slot].feature;
                node.threshold = best[slot].threshold;
                node.left = left;
                node.right = right;
                split_nodes.push(nid);
            } else {
                let s = stats[nid_us];
                nodes[nid_us].value = leaf_weight(&s, p);
            }
        }

        if split_nodes.is_empty() {
            break;
        }

        // Repartition samples into the fresh children and gather their stats.
        let was_split: Vec<bool> = {
            let mut v = vec![false; nodes.len()];
            for &nid in &split_nodes {
                v[nid as usize] = true;
            }
            v
        };
        for i in 0..n {
            let nid = node_of[i] as usize;
            if !was_split[nid] {
                continue;
            }
            let node = &nodes[nid];
            let child = if f64::from(cols[node.feature as usize][i]) <= node.threshold {
                node.left
            } else {
                node.right
            };
            node_of[i] = child;
            let cs = &mut stats[child as usize];
            cs.grad += grad[i];
            cs.hess += hess[i];
            cs.count += 1;
        }

        active.clear();
        for &nid in &split_nodes {
            let node = nodes[nid as usize].clone();
            for child in [node.left, node.right] {
                let cs = stats[child as usize];
                if cs.depth < p.max_depth && cs.count >= 2 * p.min_samples_leaf && cs.count >= 2 {
                    active.push(child);
                } else {
                    nodes[child as usize].value = leaf_weight(&cs, p);
                }
            }
        }
    }

    (Tree { nodes }, node_of)
}
