//! Gradient boosted regression trees with squared loss.
//!
//! The model is base score (training mean) plus shrunken stage-wise trees fit
//! to residuals. No early stopping and no subsampling: the tree count fixes
//! the model given the data.

use super::tree::{build_tree, presort, Tree, TreeParams};

#[derive(Debug, Clone)]
pub struct BoostParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { n_trees: 200, max_depth: 3, learning_rate: 0.1, min_leaf: 5 }
    }
}

#[derive(Debug, Clone)]
pub struct BoostModel {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<Tree>,
}

pub fn fit_boost(cols: &[Vec<f64>], target: &[f64], params: &BoostParams) -> BoostModel {
    let n = target.len();
    let base = target.iter().sum::<f64>() / n as f64;
    let sorted = presort(cols);
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };

    let mut residual: Vec<f64> = target.iter().map(|y| y - base).collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut row_buf = vec![0.0f64; cols.len()];
    for _ in 0..params.n_trees {
        let tree = build_tree(cols, &residual, &sorted, tree_params, None);
        for i in 0..n {
            for (f, col) in cols.iter().enumerate() {
                row_buf[f] = col[i];
            }
            residual[i] -= params.learning_rate * tree.predict_row(&row_buf);
        }
        trees.push(tree);
    }
    BoostModel { base, learning_rate: params.learning_rate, trees }
}

impl BoostModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.base
            + self.learning_rate
                * self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    /// Prediction truncated to the first `k` trees (k = 0 gives the base
    /// score).
    pub fn predict_row_staged(&self, row: &[f64], k: usize) -> f64 {
        self.base
            + self.learning_rate
                * self.trees[..k.min(self.trees.len())]
                    .iter()
                    .map(|t| t.predict_row(row))
                    .sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_trees_predicts_training_mean() {
        let cols = vec![vec![0.0, 1.0, 2.0, 3.0]];
        let y = vec![1.0, 3.0, 5.0, 7.0];
        let p = BoostParams { n_trees: 0, ..Default::default() };
        let model = fit_boost(&cols, &y, &p);
        assert_eq!(model.predict_row(&[1.5]), 4.0);
    }

    #[test]
    fn training_loss_is_non_increasing_in_trees() {
        let cols = vec![(0..40).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>()];
        let y: Vec<f64> = cols[0].iter().map(|v| v * v + 0.5 * v).collect();
        let p = BoostParams { n_trees: 30, max_depth: 2, learning_rate: 0.3, min_leaf: 2 };
        let model = fit_boost(&cols, &y, &p);
        let mut prev = f64::INFINITY;
        for k in 0..=30 {
            let mse: f64 = (0..40)
                .map(|i| {
                    let e = y[i] - model.predict_row_staged(&[cols[0][i]], k);
                    e * e
                })
                .sum::<f64>()
                / 40.0;
            assert!(mse <= prev + 1e-12, "loss rose at stage {k}: {mse} > {prev}");
            prev = mse;
        }
    }
}
