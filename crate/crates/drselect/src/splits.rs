//! Cross-validation split bookkeeping.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// How the sample is divided into training/validation parts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitKind {
    /// A random permutation cut into S near-equal folds; fold s is the
    /// validation set of split s, so validation sets partition the sample.
    VFold,
    /// S independent half/half assignments with floor(n/2) validation rows.
    RepeatedHalf,
}

impl SplitKind {
    pub fn parse(s: &str) -> Result<SplitKind> {
        match s {
            "vfold" => Ok(SplitKind::VFold),
            "repeated_half" => Ok(SplitKind::RepeatedHalf),
            other => Err(Error::Config(format!(
                "unknown split_kind '{other}' (expected vfold | repeated_half)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitKind::VFold => "vfold",
            SplitKind::RepeatedHalf => "repeated_half",
        }
    }
}

/// S training/validation assignments over n rows. `assignments[s][i] = true`
/// means row i validates in split s.
#[derive(Debug, Clone)]
pub struct SplitScheme {
    assignments: Vec<Vec<bool>>,
    n: usize,
    kind: SplitKind,
}

impl SplitScheme {
    pub fn s(&self) -> usize {
        self.assignments.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> SplitKind {
        self.kind
    }

    pub fn is_validation(&self, split: usize, row: usize) -> bool {
        self.assignments[split][row]
    }

    /// Validation row indices of split s, ascending.
    pub fn validation_rows(&self, split: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| self.assignments[split][i])
            .collect()
    }

    /// Training row indices of split s, ascending.
    pub fn training_rows(&self, split: usize) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| !self.assignments[split][i])
            .collect()
    }
}

/// Build a reproducible split scheme. The same (n, s, kind, seed) always
/// yields the same assignments.
pub fn make_splits(n: usize, s: usize, kind: SplitKind, seed: u64) -> Result<SplitScheme> {
    if s == 0 {
        return Err(Error::Sizing("need at least one split".into()));
    }
    if n < 2 {
        return Err(Error::Sizing(format!("need at least 2 rows, got {n}")));
    }
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[domain::SPLITS, n as u64, s as u64]));
    let mut assignments = Vec::with_capacity(s);
    match kind {
        SplitKind::VFold => {
            if n < 2 * s {
                return Err(Error::Sizing(format!(
                    "vfold needs n >= 2S (n = {n}, S = {s})"
                )));
            }
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            // Cut into S near-equal folds: the first n % S folds get one extra row.
            let base = n / s;
            let extra = n % s;
            let mut start = 0usize;
            for fold in 0..s {
                let len = base + usize::from(fold < extra);
                let mut mask = vec![false; n];
                for &row in &perm[start..start + len] {
                    mask[row] = true;
                }
                assignments.push(mask);
                start += len;
            }
        }
        SplitKind::RepeatedHalf => {
            let ones = n / 2;
            for _ in 0..s {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut rng);
                let mut mask = vec![false; n];
                for &row in &perm[..ones] {
                    mask[row] = true;
                }
                assignments.push(mask);
            }
        }
    }
    Ok(SplitScheme {
        assignments,
        n,
        kind,
    })
}
