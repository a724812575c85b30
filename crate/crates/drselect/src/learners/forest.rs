//! Bagged CART-style forest. Classification runs as regression on 0/1
//! labels, so tree averages are probabilities.

use rand::Rng;

use super::tree::{grow, BinnedFeatures, Tree, TreeConfig, TreeScratch};
use crate::rng::{self, domain};

#[derive(Debug, Clone, Copy)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub mtry: usize,
    pub min_node: usize,
}

#[derive(Debug, Clone)]
pub struct Forest {
    trees: Vec<Tree>,
}

impl Forest {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut sum = 0.0;
        for t in &self.trees {
            sum += t.predict(x);
        }
        sum / self.trees.len() as f64
    }

    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }
}

/// Fit a forest with multinomial bootstrap multiplicities per tree.
pub fn fit_forest(feats: &BinnedFeatures, y: &[f64], cfg: &ForestConfig, seed: u64) -> Forest {
    let n = feats.n;
    let tree_cfg = TreeConfig {
        max_depth: usize::MAX,
        min_node: cfg.min_node,
        mtry: cfg.mtry,
        track_leaves: false,
    };
    let mut counts = vec![0u32; n];
    let mut wg = vec![0.0f64; n];
    let mut active: Vec<u32> = Vec::with_capacity(n);
    let mut scratch = TreeScratch::new();
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = rng::rng_from(rng::derive_seed(seed, &[domain::TREE, t as u64]));
        counts.fill(0);
        for _ in 0..n {
            counts[rng.gen_range(0..n)] += 1;
        }
        active.clear();
        for i in 0..n {
            if counts[i] > 0 {
                active.push(i as u32);
                wg[i] = counts[i] as f64 * y[i];
            }
        }
        trees.push(grow(
            feats, &wg, &counts, &active, &tree_cfg, &mut rng, &mut scratch,
        ));
    }
    Forest { trees }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forest_probabilities_in_unit_interval() {
        let n = 300;
        let mut rows = Vec::new();
        let mut y = Vec::new();
        let mut state = 11u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..n {
            let a = next();
            let b = next();
            rows.extend_from_slice(&[a, b]);
            y.push(f64::from(a + b > 1.0));
        }
        let feats = BinnedFeatures::from_rows(&rows, n, 2);
        let forest = fit_forest(
            &feats,
            &y,
            &ForestConfig {
                n_trees: 50,
                mtry: 1,
                min_node: 1,
            },
            42,
        );
        for i in 0..n {
            let p = forest.predict(&rows[2 * i..2 * i + 2]);
            assert!((0.0..=1.0).contains(&p));
        }
        // Signal should be picked up.
        let hi = forest.predict(&[0.9, 0.9]);
        let lo = forest.predict(&[0.1, 0.1]);
        assert!(hi > 0.8 && lo < 0.2, "hi={hi} lo={lo}");
    }

    #[test]
    fn refit_is_identical_for_same_seed() {
        let rows: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.11).cos()).collect();
        let feats = BinnedFeatures::from_rows(&rows, 50, 2);
        let cfg = ForestConfig {
            n_trees: 20,
            mtry: 2,
            min_node: 5,
        };
        let f1 = fit_forest(&feats, &y, &cfg, 9);
        let f2 = fit_forest(&feats, &y, &cfg, 9);
        for i in 0..50 {
            let x = &rows[2 * i..2 * i + 2];
            assert_eq!(f1.predict(x), f2.predict(x));
        }
    }
}
