//! Random forest regression: bootstrap rows, subsample sqrt(q) features per
//! node, average tree predictions.

use super::tree::{build_tree, presort, Tree, TreeParams};
use crate::rng::{derive_seed, seed_rng};
use rand::RngExt;
use rayon::prelude::*;

#[derive(Debug, Clone)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features drawn per node; `None` means ceil(sqrt(q)).
    pub mtry: Option<usize>,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams { n_trees: 200, max_depth: 8, min_leaf: 5, mtry: None }
    }
}

#[derive(Debug, Clone)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
}

/// Per-tree seeds come from `derive_seed(seed, tree_index)`, so the forest is
/// identical no matter how many workers build it.
pub fn fit_forest(cols: &[Vec<f64>], target: &[f64], params: &ForestParams, seed: u64) -> ForestModel {
    let n = target.len();
    let q = cols.len();
    let mtry = params.mtry.unwrap_or_else(|| (q as f64).sqrt().ceil() as usize).clamp(1, q);
    let tree_params = TreeParams { max_depth: params.max_depth, min_leaf: params.min_leaf };

    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed_rng(derive_seed(seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let boot_cols: Vec<Vec<f64>> =
                cols.iter().map(|c| rows.iter().map(|&i| c[i]).collect()).collect();
            let boot_target: Vec<f64> = rows.iter().map(|&i| target[i]).collect();
            let sorted = presort(&boot_cols);
            build_tree(&boot_cols, &boot_target, &sorted, tree_params, Some((&mut rng, mtry)))
        })
        .collect();

    ForestModel { trees }
}

impl ForestModel {
    /// Prediction is the mean of per-tree predictions.
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(row)).sum();
        sum / self.trees.len() as f64
    }

    pub fn tree_predictions_row(&self, row: &[f64]) -> Vec<f64> {
        self.trees.iter().map(|t| t.predict_row(row)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<f64>) {
        let x: Vec<f64> = (0..60).map(|i| i as f64 / 10.0).collect();
        let y: Vec<f64> = x.iter().map(|v| if *v > 3.0 { 2.0 } else { -2.0 }).collect();
        (vec![x], y)
    }

    #[test]
    fn forest_is_deterministic_given_seed() {
        let (cols, y) = toy();
        let p = ForestParams { n_trees: 12, max_depth: 4, min_leaf: 2, mtry: None };
        let a = fit_forest(&cols, &y, &p, 7);
        let b = fit_forest(&cols, &y, &p, 7);
        for v in [0.5, 2.9, 3.1, 5.5] {
            assert_eq!(a.predict_row(&[v]).to_bits(), b.predict_row(&[v]).to_bits());
        }
    }

    #[test]
    fn prediction_is_mean_of_trees() {
        let (cols, y) = toy();
        let p = ForestParams { n_trees: 9, max_depth: 4, min_leaf: 2, mtry: None };
        let model = fit_forest(&cols, &y, &p, 3);
        let per_tree = model.tree_predictions_row(&[2.5]);
        let mean: f64 = per_tree.iter().sum::<f64>() / per_tree.len() as f64;
        assert!((model.predict_row(&[2.5]) - mean).abs() < 1e-12);
    }
}
