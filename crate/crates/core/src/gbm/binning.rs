//! Per-feature quantile binning.

use super::FeatureMatrix;

/// Upper bin edges per feature. Every edge is a value observed in training data,
/// so a split "bin <= k" is the same as "x <= edges[k]".
#[derive(Debug, Clone)]
pub struct FeatureBins {
    edges: Vec<Vec<f64>>,
}

impl FeatureBins {
    pub fn fit(data: &FeatureMatrix, max_bins: usize) -> Self {
        let n = data.n_rows();
        let edges = (0..data.n_cols())
            .map(|f| {
                let mut values: Vec<f64> = (0..n).map(|i| data.get(i, f)).collect();
                values.sort_by(f64::total_cmp);
                let mut distinct = values.clone();
                distinct.dedup();
                if distinct.len() <= max_bins {
                    return distinct;
                }
                let mut cuts: Vec<f64> = (1..=max_bins)
                    .map(|q| {
                        let idx = (q * n).div_ceil(max_bins).max(1) - 1;
                        values[idx.min(n - 1)]
                    })
                    .collect();
                cuts.dedup();
                cuts
            })
            .collect();
        FeatureBins { edges }
    }

    pub fn edges(&self, feature: usize) -> &[f64] {
        &self.edges[feature]
    }

    pub fn n_bins(&self, feature: usize) -> usize {
        self.edges[feature].len()
    }

    pub fn bin(&self, feature: usize, value: f64) -> u16 {
        let e = &self.edges[feature];
        let k = e.partition_point(|&u| u < value);
        k.min(e.len() - 1) as u16
    }

    /// Column-major bin codes for every training row.
    pub fn encode(&self, data: &FeatureMatrix) -> Vec<Vec<u16>> {
        (0..data.n_cols())
            .map(|f| {
                (0..data.n_rows())
                    .map(|i| self.bin(f, data.get(i, f)))
                    .collect()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn few_distinct_values_get_one_bin_each() {
        let m = FeatureMatrix::from_rows(&[vec![3.0], vec![1.0], vec![2.0], vec![1.0]]).unwrap();
        let bins = FeatureBins::fit(&m, 8);
        assert_eq!(bins.edges(0), &[1.0, 2.0, 3.0]);
        assert_eq!(bins.encode(&m), vec![vec![2, 0, 1, 0]]);
    }

    #[test]
    fn quantile_edges_are_observed_values() {
        let rows: Vec<Vec<f64>> = (0..1000).map(|i| vec![(i as f64).sqrt()]).collect();
        let m = FeatureMatrix::from_rows(&rows).unwrap();
        let bins = FeatureBins::fit(&m, 16);
        assert_eq!(bins.n_bins(0), 16);
        assert_eq!(*bins.edges(0).last().unwrap(), 999f64.sqrt());
        for e in bins.edges(0) {
            assert!(rows.iter().any(|r| r[0] == *e));
        }
        // Out-of-range values clamp to the last bin.
        assert_eq!(bins.bin(0, 1e9), 15);
        assert_eq!(bins.bin(0, -1.0), 0);
    }
}
