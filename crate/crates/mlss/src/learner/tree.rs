//! Regression CART with exact greedy splits on pre-sorted feature lists.
//!
//! Split candidates are midpoints between consecutive distinct feature
//! values; the split maximizing the squared-error reduction wins, with ties
//! broken toward the lowest feature index and then the lowest threshold.

use rand::RngExt;
use rand_pcg::Pcg64;

#[derive(Debug, Clone)]
pub enum Node {
    Split { feature: usize, threshold: f64, left: u32, right: u32 },
    Leaf { value: f64 },
}

#[derive(Debug, Clone)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut idx = 0usize;
        loop {
            match &self.nodes[idx] {
                Node::Leaf { value } => return *value,
                Node::Split { feature, threshold, left, right } => {
                    idx = if row[*feature] <= *threshold { *left as usize } else { *right as usize };
                }
            }
        }
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf: usize,
}

/// Row indices sorted ascending by each feature column, ties by row index.
pub fn presort(cols: &[Vec<f64>]) -> Vec<Vec<u32>> {
    cols.iter()
        .map(|col| {
            let mut idx: Vec<u32> = (0..col.len() as u32).collect();
            idx.sort_unstable_by(|&a, &b| {
                col[a as usize]
                    .total_cmp(&col[b as usize])
                    .then(a.cmp(&b))
            });
            idx
        })
        .collect()
}

/// Grow one tree. `sorted` holds, per feature, all row ids in ascending
/// feature order; `subsample` optionally draws `mtry` candidate features per
/// node from the given generator.
pub fn build_tree(
    cols: &[Vec<f64>],
    target: &[f64],
    sorted: &[Vec<u32>],
    params: TreeParams,
    mut subsample: Option<(&mut Pcg64, usize)>,
) -> Tree {
    let mut nodes = Vec::new();
    let mut mask = vec![false; target.len()];
    grow(cols, target, sorted.to_vec(), params, &mut subsample, 0, &mut nodes, &mut mask);
    Tree { nodes }
}

#[allow(clippy::too_many_arguments)]
fn grow(
    cols: &[Vec<f64>],
    target: &[f64],
    lists: Vec<Vec<u32>>,
    params: TreeParams,
    subsample: &mut Option<(&mut Pcg64, usize)>,
    depth: usize,
    nodes: &mut Vec<Node>,
    mask: &mut [bool],
) -> u32 {
    let n = lists[0].len();
    let total: f64 = lists[0].iter().map(|&i| target[i as usize]).sum();
    let mean = total / n as f64;

    if depth >= params.max_depth || n < 2 * params.min_leaf {
        nodes.push(Node::Leaf { value: mean });
        return (nodes.len() - 1) as u32;
    }

    let candidates: Vec<usize> = match subsample {
        Some((rng, mtry)) => {
            let q = cols.len();
            let m = (*mtry).min(q);
            let mut idx: Vec<usize> = (0..q).collect();
            for i in 0..m {
                let j = rng.random_range(i..q);
                idx.swap(i, j);
            }
            let mut chosen = idx[..m].to_vec();
            chosen.sort_unstable();
            chosen
        }
        None => (0..cols.len()).collect(),
    };

    // Score to beat: the unsplit node's sum^2/n. A split is accepted only on
    // a strict improvement, so constant targets never split.
    let base = total * total / n as f64;
    let eps = 1e-12 * (base.abs() + 1e-12);
    let mut best: Option<(f64, usize, f64)> = None; // (score, feature, threshold)

    for &f in &candidates {
        let list = &lists[f];
        let col = &cols[f];
        let mut left_sum = 0.0f64;
        for k in 0..n - 1 {
            let row = list[k] as usize;
            left_sum += target[row];
            let n_left = k + 1;
            let n_right = n - n_left;
            if n_left < params.min_leaf || n_right < params.min_leaf {
                continue;
            }
            let v = col[row];
            let v_next = col[list[k + 1] as usize];
            if v_next <= v {
                continue;
            }
            let right_sum = total - left_sum;
            let score =
                left_sum * left_sum / n_left as f64 + right_sum * right_sum / n_right as f64;
            if score > base + eps && best.is_none_or(|(s, _, _)| score > s) {
                best = Some((score, f, 0.5 * (v + v_next)));
            }
        }
    }

    let Some((_, feature, threshold)) = best else {
        nodes.push(Node::Leaf { value: mean });
        return (nodes.len() - 1) as u32;
    };

    for &i in &lists[feature] {
        mask[i as usize] = cols[feature][i as usize] <= threshold;
    }
    let mut left_lists = Vec::with_capacity(lists.len());
    let mut right_lists = Vec::with_capacity(lists.len());
    for list in &lists {
        let mut left = Vec::new();
        let mut right = Vec::new();
        for &i in list {
            if mask[i as usize] {
                left.push(i);
            } else {
                right.push(i);
            }
        }
        left_lists.push(left);
        right_lists.push(right);
    }
    drop(lists);

    let slot = nodes.len();
    nodes.push(Node::Leaf { value: mean }); // placeholder, patched below
    let left = grow(cols, target, left_lists, params, subsample, depth + 1, nodes, mask);
    let right = grow(cols, target, right_lists, params, subsample, depth + 1, nodes, mask);
    nodes[slot] = Node::Split { feature, threshold, left, right };
    slot as u32
}
