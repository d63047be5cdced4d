//! Discretization learner: threshold every feature into cells, take full
//! cell interactions, and predict the training cell mean. Empty cells fall
//! back to the global training mean.

use nalgebra::DMatrix;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct DiscretizedModel {
    pub thresholds: Vec<f64>,
    cell_stats: BTreeMap<Vec<u16>, Vec<f64>>,
    global_means: Vec<f64>,
}

/// Cell index of a value: the number of thresholds strictly below it.
fn cell(value: f64, thresholds: &[f64]) -> u16 {
    thresholds.iter().filter(|t| value > **t).count() as u16
}

fn cell_key(row: &[f64], thresholds: &[f64]) -> Vec<u16> {
    row.iter().map(|v| cell(*v, thresholds)).collect()
}

pub fn fit_discretized(
    features: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    thresholds: &[f64],
) -> DiscretizedModel {
    let n = features.nrows();
    let r = targets.ncols();
    let mut sums: BTreeMap<Vec<u16>, (usize, Vec<f64>)> = BTreeMap::new();
    let mut global = vec![0.0f64; r];
    for i in 0..n {
        let row: Vec<f64> = features.row(i).iter().copied().collect();
        let key = cell_key(&row, thresholds);
        let entry = sums.entry(key).or_insert_with(|| (0, vec![0.0; r]));
        entry.0 += 1;
        for t in 0..r {
            entry.1[t] += targets[(i, t)];
            global[t] += targets[(i, t)] / n as f64;
        }
    }
    let cell_stats = sums
        .into_iter()
        .map(|(k, (count, sum))| (k, sum.iter().map(|s| s / count as f64).collect()))
        .collect();
    DiscretizedModel { thresholds: thresholds.to_vec(), cell_stats, global_means: global }
}

impl DiscretizedModel {
    pub fn predict_row(&self, row: &[f64]) -> Vec<f64> {
        let key = cell_key(row, &self.thresholds);
        self.cell_stats.get(&key).cloned().unwrap_or_else(|| self.global_means.clone())
    }

    pub fn occupied_cells(&self) -> usize {
        self.cell_stats.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_indexing_at_default_thresholds() {
        let t = [-1.0, 0.0, 1.0];
        assert_eq!(cell(-2.0, &t), 0);
        assert_eq!(cell(-1.0, &t), 0);
        assert_eq!(cell(-0.5, &t), 1);
        assert_eq!(cell(0.5, &t), 2);
        assert_eq!(cell(2.0, &t), 3);
    }

    #[test]
    fn predicts_cell_mean_and_global_fallback() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.5, 0.5, 0.6]);
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 3.0, 10.0, 14.0]);
        let m = fit_discretized(&x, &y, &[-1.0, 0.0, 1.0]);
        // Cell 0 mean of {1, 3}; cell 2 mean of {10, 14}.
        assert_eq!(m.predict_row(&[-3.0]), vec![2.0]);
        assert_eq!(m.predict_row(&[0.9]), vec![12.0]);
        // Empty cell 3 falls back to the global mean 7.
        assert_eq!(m.predict_row(&[5.0]), vec![7.0]);
    }
}
