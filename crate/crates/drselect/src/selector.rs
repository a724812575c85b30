//! Candidate-pair selection: fit nuisances per split, build the psi-grid over
//! all pairs, compute perturbations and both pseudo-risk surfaces, and pick
//! the minimizing pair. Also hosts the simulation-facing oracle selector.

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::functionals::{map_propensity, FunctionalKind};
use crate::learners::{
    fit_outcome, fit_propensity, CandidateLibrary, FitContext, FittedOutcome, FittedPropensity,
};
use crate::rng::{self, domain};
use crate::splits::SplitScheme;

/// Selection criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Minimax,
    MixedMinimax,
}

impl Criterion {
    pub fn as_str(&self) -> &'static str {
        match self {
            Criterion::Minimax => "minimax",
            Criterion::MixedMinimax => "mixed_minimax",
        }
    }
}

/// Per-split functional estimates for every candidate pair: an S x K x L
/// tensor with learner labels for provenance.
#[derive(Debug, Clone)]
pub struct PsiGrid {
    values: Vec<f64>,
    pub s: usize,
    pub k: usize,
    pub l: usize,
    pub p_labels: Vec<String>,
    pub b_labels: Vec<String>,
}

impl PsiGrid {
    pub fn from_values(
        values: Vec<f64>,
        s: usize,
        k: usize,
        l: usize,
        p_labels: Vec<String>,
        b_labels: Vec<String>,
    ) -> Result<PsiGrid> {
        if values.len() != s * k * l {
            return Err(Error::Contract(format!(
                "grid has {} entries for dims {s}x{k}x{l}",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("psi grid entry {bad}")));
        }
        Ok(PsiGrid {
            values,
            s,
            k,
            l,
            p_labels,
            b_labels,
        })
    }

    #[inline]
    pub fn value(&self, s: usize, k: usize, l: usize) -> f64 {
        self.values[(s * self.k + k) * self.l + l]
    }

    /// Split-averaged estimate for pair (k, l).
    pub fn pair_mean(&self, k: usize, l: usize) -> f64 {
        let mut sum = 0.0;
        for s in 0..self.s {
            sum += self.value(s, k, l);
        }
        sum / self.s as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Fitted nuisances per split: `props[s][k]`, `outs[s][l]`.
#[derive(Debug)]
pub struct FittedGrids {
    pub props: Vec<Vec<FittedPropensity>>,
    pub outs: Vec<Vec<FittedOutcome>>,
}

/// Fit every learner on every split's training set: exactly S x (K + L)
/// fits, each seeded from (seed, split, side, spec content), so duplicate
/// specs produce identical fits.
pub fn fit_nuisances(
    data: &Dataset,
    lib: &CandidateLibrary,
    splits: &SplitScheme,
    def: &FunctionalKind,
    seed: u64,
    m1: f64,
    m2: Option<f64>,
) -> Result<FittedGrids> {
    lib.validate()?;
    def.validate_reads(data)?;
    let s = splits.s();
    let target = def.outcome_target();

    enum Task {
        P { split: usize, idx: usize },
        B { split: usize, idx: usize },
    }
    let mut tasks = Vec::with_capacity(s * (lib.k() + lib.l()));
    for split in 0..s {
        for idx in 0..lib.k() {
            tasks.push(Task::P { split, idx });
        }
        for idx in 0..lib.l() {
            tasks.push(Task::B { split, idx });
        }
    }

    enum Fitted {
        P(usize, usize, FittedPropensity),
        B(usize, usize, FittedOutcome),
    }
    let results: Vec<Result<Fitted>> = tasks
        .par_iter()
        .map(|task| match *task {
            Task::P { split, idx } => {
                let spec = &lib.p_specs[idx];
                let train = data.subset(&splits.training_rows(split));
                let ctx = FitContext {
                    seed: rng::derive_seed(seed, &[domain::FIT, split as u64, 0, spec.content_hash()]),
                    m1,
                    m2,
                };
                fit_propensity(spec, &train, &ctx)
                    .map(|f| Fitted::P(split, idx, f))
                    .map_err(|e| fit_context_error(e, split, &spec.label))
            }
            Task::B { split, idx } => {
                let spec = &lib.b_specs[idx];
                let train = data.subset(&splits.training_rows(split));
                let ctx = FitContext {
                    seed: rng::derive_seed(seed, &[domain::FIT, split as u64, 1, spec.content_hash()]),
                    m1,
                    m2,
                };
                fit_outcome(spec, &train, target, &ctx)
                    .map(|f| Fitted::B(split, idx, f))
                    .map_err(|e| fit_context_error(e, split, &spec.label))
            }
        })
        .collect();

    let mut props: Vec<Vec<Option<FittedPropensity>>> = vec![vec![None; lib.k()]; s];
    let mut outs: Vec<Vec<Option<FittedOutcome>>> =
        (0..s).map(|_| (0..lib.l()).map(|_| None).collect()).collect();
    for r in results {
        match r? {
            Fitted::P(split, idx, f) => props[split][idx] = Some(f),
            Fitted::B(split, idx, f) => outs[split][idx] = Some(f),
        }
    }
    Ok(FittedGrids {
        props: props
            .into_iter()
            .map(|row| row.into_iter().map(Option::unwrap).collect())
            .collect(),
        outs: outs
            .into_iter()
            .map(|row| row.into_iter().map(Option::unwrap).collect())
            .collect(),
    })
}

fn fit_context_error(e: Error, split: usize, label: &str) -> Error {
    match e {
        Error::Fit { context, message } => Error::Fit {
            context: format!("split {}, learner '{}' ({context})", split + 1, label),
            message,
        },
        other => other,
    }
}

/// Evaluate the per-pair estimating equations over given evaluation rows
/// using cached nuisance predictions. The accumulation order per cell is
/// identical to `estimate_psi` (ascending rows, components summed per row).
pub(crate) fn grid_cells_on_rows(
    fits_p: &[FittedPropensity],
    fits_b: &[FittedOutcome],
    def: &FunctionalKind,
    data: &Dataset,
    rows: &[usize],
) -> Result<Vec<f64>> {
    if rows.is_empty() {
        return Err(Error::Contract("empty evaluation set".into()));
    }
    let k = fits_p.len();
    let l = fits_b.len();
    let comps = def.components();
    let n = rows.len();

    // Cached predictions: pi per (k, row); b per (l, arm, row).
    let mut pis = vec![0.0f64; k * n];
    for (ki, fp) in fits_p.iter().enumerate() {
        for (pos, &r) in rows.iter().enumerate() {
            pis[ki * n + pos] = fp.pi(data.row(r));
        }
    }
    let needs_arm0 = comps.iter().any(|c| c.b_arm() == 0);
    let needs_arm1 = comps.iter().any(|c| c.b_arm() == 1);
    let mut b1s = vec![0.0f64; if needs_arm1 { l * n } else { 0 }];
    let mut b0s = vec![0.0f64; if needs_arm0 { l * n } else { 0 }];
    for (li, fb) in fits_b.iter().enumerate() {
        for (pos, &r) in rows.iter().enumerate() {
            if needs_arm1 {
                b1s[li * n + pos] = fb.b(data.row(r), 1);
            }
            if needs_arm0 {
                b0s[li * n + pos] = fb.b(data.row(r), 0);
            }
        }
    }

    // Per-row h tuples per component (independent of the pair).
    let mut hs = vec![(0.0, 0.0, 0.0, 0.0); comps.len() * n];
    for (pos, &r) in rows.iter().enumerate() {
        let obs = crate::functionals::Obs {
            x: data.row(r),
            a: data.a(r),
            y: data.y(r),
        };
        for (ci, comp) in comps.iter().enumerate() {
            hs[ci * n + pos] = comp.h(&obs);
        }
    }

    let mut cells = vec![0.0f64; k * l];
    for ki in 0..k {
        for li in 0..l {
            let mut acc = 0.0;
            for pos in 0..n {
                let pi = pis[ki * n + pos];
                let mut row_sum = 0.0;
                for (ci, comp) in comps.iter().enumerate() {
                    let p = map_propensity(pi, comp.p_semantics());
                    let b = if comp.b_arm() == 1 {
                        b1s[li * n + pos]
                    } else {
                        b0s[li * n + pos]
                    };
                    let (h1, h2, h3, h4) = hs[ci * n + pos];
                    row_sum += b * p * h1 + b * h2 + p * h3 + h4;
                }
                acc += row_sum;
            }
            let cell = acc / n as f64;
            if !cell.is_finite() {
                return Err(Error::NonFinite(format!(
                    "psi estimate for pair (k={}, l={})",
                    ki + 1,
                    li + 1
                )));
            }
            cells[ki * l + li] = cell;
        }
    }
    Ok(cells)
}

/// Build the psi-grid from fitted nuisances: cell (s, k, l) solves the
/// estimating equation on split s's validation rows.
pub fn psi_grid_from_fits(
    fits: &FittedGrids,
    data: &Dataset,
    splits: &SplitScheme,
    def: &FunctionalKind,
    p_labels: Vec<String>,
    b_labels: Vec<String>,
) -> Result<PsiGrid> {
    let s = splits.s();
    let k = fits.props[0].len();
    let l = fits.outs[0].len();
    let mut values = Vec::with_capacity(s * k * l);
    for split in 0..s {
        let rows = splits.validation_rows(split);
        let cells = grid_cells_on_rows(&fits.props[split], &fits.outs[split], def, data, &rows)?;
        values.extend_from_slice(&cells);
    }
    PsiGrid::from_values(values, s, k, l, p_labels, b_labels)
}

/// The headline grid operation: S x (K + L) fits, then the S x K x L tensor
/// of validation estimates. Returns the fits for reuse (oracle evaluation,
/// diagnostics).
pub fn fit_grid(
    data: &Dataset,
    lib: &CandidateLibrary,
    splits: &SplitScheme,
    def: &FunctionalKind,
    seed: u64,
    m1: f64,
    m2: Option<f64>,
) -> Result<(PsiGrid, FittedGrids)> {
    let fits = fit_nuisances(data, lib, splits, def, seed, m1, m2)?;
    let grid = psi_grid_from_fits(
        &fits,
        data,
        splits,
        def,
        lib.p_specs.iter().map(|s| s.label.clone()).collect(),
        lib.b_specs.iter().map(|s| s.label.clone()).collect(),
    )?;
    Ok((grid, fits))
}

/// Empirical perturbation: mean over splits of the squared change of the
/// functional when moving from the anchor pair to (k, l).
pub fn perturbation_hat(grid: &PsiGrid, k: usize, l: usize, k0: usize, l0: usize) -> f64 {
    let mut sum = 0.0;
    for s in 0..grid.s {
        let d = grid.value(s, k, l) - grid.value(s, k0, l0);
        sum += d * d;
    }
    sum / grid.s as f64
}

/// Both pseudo-risk surfaces over all anchor pairs, plus the additive
/// row/column terms of the mixed criterion.
#[derive(Debug, Clone)]
pub struct PseudoRiskSurface {
    pub k: usize,
    pub l: usize,
    /// Minimax pseudo-risk, row-major K x L.
    pub b1: Vec<f64>,
    /// Mixed-minimax pseudo-risk, row-major K x L.
    pub b2: Vec<f64>,
    /// max over (l1, l2) of per(k0, l1; k0, l2), per k0.
    pub row_term: Vec<f64>,
    /// max over (k1, k2) of per(k1, l0; k2, l0), per l0.
    pub col_term: Vec<f64>,
}

impl PseudoRiskSurface {
    pub fn b1_at(&self, k: usize, l: usize) -> f64 {
        self.b1[k * self.l + l]
    }

    pub fn b2_at(&self, k: usize, l: usize) -> f64 {
        self.b2[k * self.l + l]
    }

    pub fn matrix(&self, criterion: Criterion) -> &[f64] {
        match criterion {
            Criterion::Minimax => &self.b1,
            Criterion::MixedMinimax => &self.b2,
        }
    }
}

/// Minimax pseudo-risk: for each anchor, the maximum perturbation over the
/// one-axis union {k = k0} U {l = l0} (the null pair contributes zero).
pub fn minimax_surface(grid: &PsiGrid) -> Vec<f64> {
    let (k, l) = (grid.k, grid.l);
    let mut b1 = vec![0.0; k * l];
    for k0 in 0..k {
        for l0 in 0..l {
            let mut best = 0.0f64;
            for li in 0..l {
                best = best.max(perturbation_hat(grid, k0, li, k0, l0));
            }
            for ki in 0..k {
                best = best.max(perturbation_hat(grid, ki, l0, k0, l0));
            }
            b1[k0 * l + l0] = best;
        }
    }
    b1
}

/// Mixed-minimax pseudo-risk decomposed as row_term[k0] + col_term[l0].
pub fn mixed_minimax_surface(grid: &PsiGrid) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (k, l) = (grid.k, grid.l);
    let mut row_term = vec![0.0; k];
    for k0 in 0..k {
        let mut best = 0.0f64;
        for l1 in 0..l {
            for l2 in 0..l {
                best = best.max(perturbation_hat(grid, k0, l1, k0, l2));
            }
        }
        row_term[k0] = best;
    }
    let mut col_term = vec![0.0; l];
    for l0 in 0..l {
        let mut best = 0.0f64;
        for k1 in 0..k {
            for k2 in 0..k {
                best = best.max(perturbation_hat(grid, k1, l0, k2, l0));
            }
        }
        col_term[l0] = best;
    }
    let mut b2 = vec![0.0; k * l];
    for k0 in 0..k {
        for l0 in 0..l {
            b2[k0 * l + l0] = row_term[k0] + col_term[l0];
        }
    }
    (b2, row_term, col_term)
}

pub fn pseudo_risk_surface(grid: &PsiGrid) -> PseudoRiskSurface {
    let b1 = minimax_surface(grid);
    let (b2, row_term, col_term) = mixed_minimax_surface(grid);
    PseudoRiskSurface {
        k: grid.k,
        l: grid.l,
        b1,
        b2,
        row_term,
        col_term,
    }
}

/// Argmin over anchors with lexicographic tie-breaking (smallest k, then
/// smallest l). Returns the 0-based pair and whether the minimum was tied.
pub fn select(matrix: &[f64], k: usize, l: usize) -> (usize, usize, bool) {
    debug_assert_eq!(matrix.len(), k * l);
    let mut best = 0usize;
    for i in 1..k * l {
        if matrix[i] < matrix[best] {
            best = i;
        }
    }
    let ties = matrix.iter().filter(|&&v| v == matrix[best]).count();
    (best / l, best % l, ties > 1)
}

/// Split-averaged estimate at the selected pair.
pub fn final_estimate(grid: &PsiGrid, k: usize, l: usize) -> f64 {
    grid.pair_mean(k, l)
}

/// Oracle selection output: the grid where every validation mean is replaced
/// by an evaluation-sample mean, its surfaces, and the selected pairs.
pub struct OracleSelection {
    pub grid: PsiGrid,
    pub surface: PseudoRiskSurface,
    pub minimax_pair: (usize, usize),
    pub mixed_pair: (usize, usize),
}

/// Re-run both criteria with a large evaluation sample standing in for the
/// true validation measure. Simulation use only.
pub fn oracle_select(
    fits: &FittedGrids,
    eval_sample: &Dataset,
    def: &FunctionalKind,
    p_labels: Vec<String>,
    b_labels: Vec<String>,
) -> Result<OracleSelection> {
    let s = fits.props.len();
    let k = fits.props[0].len();
    let l = fits.outs[0].len();
    let rows: Vec<usize> = (0..eval_sample.n()).collect();
    let mut values = Vec::with_capacity(s * k * l);
    let per_split: Vec<Result<Vec<f64>>> = (0..s)
        .into_par_iter()
        .map(|split| grid_cells_on_rows(&fits.props[split], &fits.outs[split], def, eval_sample, &rows))
        .collect();
    for cells in per_split {
        values.extend_from_slice(&cells?);
    }
    let grid = PsiGrid::from_values(values, s, k, l, p_labels, b_labels)?;
    let surface = pseudo_risk_surface(&grid);
    let (mk, ml, _) = select(&surface.b1, k, l);
    let (xk, xl, _) = select(&surface.b2, k, l);
    Ok(OracleSelection {
        grid,
        surface,
        minimax_pair: (mk, ml),
        mixed_pair: (xk, xl),
    })
}
