//! Stage-wise gradient boosting with depth-limited least-squares trees.
//! Squared-error loss for regression; logistic log-loss with per-leaf
//! Newton steps for classification.

use super::tree::{grow, BinnedFeatures, TreeConfig, TreeScratch};
use crate::rng::{self, domain};

const MIN_OBS_IN_NODE: usize = 10;
const MAX_LEAF_STEP: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoostLoss {
    Squared,
    Logistic,
}

#[derive(Debug, Clone, Copy)]
pub struct BoostConfig {
    pub n_trees: usize,
    pub depth: usize,
    pub shrinkage: f64,
    pub loss: BoostLoss,
}

#[derive(Debug, Clone)]
pub struct Boost {
    init: f64,
    shrinkage: f64,
    loss: BoostLoss,
    trees: Vec<super::tree::Tree>,
}

impl Boost {
    /// Raw additive score F(x).
    pub fn score(&self, x: &[f64]) -> f64 {
        let mut f = self.init;
        for t in &self.trees {
            f += self.shrinkage * t.predict(x);
        }
        f
    }

    /// Mean prediction: identity for squared loss, sigmoid for logistic.
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self.loss {
            BoostLoss::Squared => self.score(x),
            BoostLoss::Logistic => sigmoid(self.score(x)),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Fit on all rows of `feats`.
pub fn fit_boost(feats: &BinnedFeatures, y: &[f64], cfg: &BoostConfig, seed: u64) -> Boost {
    fit_boost_monitored(feats, y, cfg, seed, &[], &[], &[], &mut |_, _| {})
}

/// Fit with held-out monitoring: rows with zero training weight are excluded
/// from growth; `eval_rows` carry incrementally updated scores, and
/// `checkpoint(m, eval_loss)` fires exactly when `m` reaches a requested
/// tree count (ascending `checkpoints`).
#[allow(clippy::too_many_arguments)]
pub fn fit_boost_monitored(
    feats: &BinnedFeatures,
    y: &[f64],
    cfg: &BoostConfig,
    seed: u64,
    train_weights: &[f64],
    eval_rows: &[u32],
    checkpoints: &[usize],
    checkpoint: &mut dyn FnMut(usize, f64),
) -> Boost {
    let n = feats.n;
    let unit_weights;
    let w: &[f64] = if train_weights.is_empty() {
        unit_weights = vec![1.0; n];
        &unit_weights
    } else {
        train_weights
    };
    let active: Vec<u32> = (0..n as u32).filter(|&i| w[i as usize] > 0.0).collect();
    // Boosting rows are either in or out of the fold; the grower works with
    // integer multiplicities.
    let counts: Vec<u32> = w.iter().map(|&wi| u32::from(wi > 0.0)).collect();

    // Initial score from the training response.
    let (mut sw, mut swy) = (0.0, 0.0);
    for &i in &active {
        sw += 1.0;
        swy += y[i as usize];
    }
    let mean = if sw > 0.0 { swy / sw } else { 0.0 };
    let init = match cfg.loss {
        BoostLoss::Squared => mean,
        BoostLoss::Logistic => {
            let p = mean.clamp(1e-6, 1.0 - 1e-6);
            (p / (1.0 - p)).ln()
        }
    };

    let mut f_train = vec![init; n];
    let mut f_eval = vec![init; eval_rows.len()];
    let mut grad = vec![0.0; n];
    let mut prob = vec![0.0; if cfg.loss == BoostLoss::Logistic { n } else { 0 }];
    let tree_cfg = TreeConfig {
        max_depth: cfg.depth,
        min_node: MIN_OBS_IN_NODE,
        mtry: feats.d,
        track_leaves: true,
    };
    let mut scratch = TreeScratch::new();

    let mut trees = Vec::with_capacity(cfg.n_trees);
    let mut next_checkpoint = 0usize;
    for m in 0..cfg.n_trees {
        match cfg.loss {
            BoostLoss::Squared => {
                for &i in &active {
                    let i = i as usize;
                    grad[i] = y[i] - f_train[i];
                }
            }
            BoostLoss::Logistic => {
                for &i in &active {
                    let i = i as usize;
                    let p = sigmoid(f_train[i]);
                    prob[i] = p;
                    grad[i] = y[i] - p;
                }
            }
        }
        let mut rng = rng::rng_from(rng::derive_seed(seed, &[domain::TREE, m as u64]));
        let mut tree = grow(feats, &grad, &counts, &active, &tree_cfg, &mut rng, &mut scratch);

        // Recompute leaf values uniformly: mean gradient for squared loss,
        // Newton step sum(resid)/sum(p(1-p)) for logistic.
        let n_leaves = tree.n_leaves();
        let mut num = vec![0.0; n_leaves];
        let mut den = vec![0.0; n_leaves];
        for (pos, &r) in scratch.rows().iter().enumerate() {
            let ri = r as usize;
            let leaf = scratch.leaf_of_row[pos] as usize;
            num[leaf] += grad[ri];
            den[leaf] += match cfg.loss {
                BoostLoss::Squared => 1.0,
                BoostLoss::Logistic => {
                    let p = prob[ri];
                    p * (1.0 - p)
                }
            };
        }
        let values: Vec<f64> = num
            .iter()
            .zip(&den)
            .map(|(&a, &b)| {
                let v = a / b.max(1e-12);
                match cfg.loss {
                    BoostLoss::Squared => v,
                    BoostLoss::Logistic => v.clamp(-MAX_LEAF_STEP, MAX_LEAF_STEP),
                }
            })
            .collect();
        tree.set_leaf_values(&values);

        // Training rows land in known leaves; held-out rows traverse.
        for (pos, &r) in scratch.rows().iter().enumerate() {
            f_train[r as usize] += cfg.shrinkage * values[scratch.leaf_of_row[pos] as usize];
        }
        for (j, &r) in eval_rows.iter().enumerate() {
            f_eval[j] += cfg.shrinkage * tree.predict_from_cols(&feats.cols, n, r as usize);
        }
        trees.push(tree);

        if next_checkpoint < checkpoints.len() && checkpoints[next_checkpoint] == m + 1 {
            next_checkpoint += 1;
            let loss = eval_loss(cfg.loss, y, eval_rows, &f_eval);
            checkpoint(m + 1, loss);
        }
    }

    Boost {
        init,
        shrinkage: cfg.shrinkage,
        loss: cfg.loss,
        trees,
    }
}

fn eval_loss(loss: BoostLoss, y: &[f64], rows: &[u32], f: &[f64]) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let mut total = 0.0;
    for (j, &r) in rows.iter().enumerate() {
        let yi = y[r as usize];
        total += match loss {
            BoostLoss::Squared => {
                let e = yi - f[j];
                e * e
            }
            BoostLoss::Logistic => {
                let p = sigmoid(f[j]).clamp(1e-12, 1.0 - 1e-12);
                -(yi * p.ln() + (1.0 - yi) * (1.0 - p).ln())
            }
        };
    }
    total / rows.len() as f64
}
