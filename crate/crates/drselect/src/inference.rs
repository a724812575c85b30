//! Smooth-max post-selection estimation and bootstrap confidence intervals.

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::functionals::FunctionalKind;
use crate::learners::CandidateLibrary;
use crate::rng::{self, domain};
use crate::selector::{fit_grid, perturbation_hat, Criterion, FittedGrids, PsiGrid};
use crate::splits::{make_splits, SplitKind, SplitScheme};

pub const TAU_CAP: f64 = 1e8;

/// Everything needed to rerun the selection pipeline on a (re)sample.
#[derive(Debug, Clone)]
pub struct PipelineSettings {
    pub functional: FunctionalKind,
    pub s: usize,
    pub split_kind: SplitKind,
    pub m1: f64,
    pub m2: Option<f64>,
}

/// One full pass: derive splits from the seed, fit all nuisances, build the
/// psi-grid.
pub fn run_grid(
    data: &Dataset,
    lib: &CandidateLibrary,
    settings: &PipelineSettings,
    seed: u64,
) -> Result<(PsiGrid, FittedGrids, SplitScheme)> {
    let splits = make_splits(data.n(), settings.s, settings.split_kind, seed)?;
    let (grid, fits) = fit_grid(
        data,
        lib,
        &splits,
        &settings.functional,
        seed,
        settings.m1,
        settings.m2,
    )?;
    Ok((grid, fits, splits))
}

/// Number of exponential terms in the smooth-max sum(s): the minimax union
/// has K + L - 1 members; the mixed criterion takes two sums of L^2 and K^2
/// members, of which the larger controls the tau rule.
pub fn term_count(k: usize, l: usize, criterion: Criterion) -> usize {
    match criterion {
        Criterion::Minimax => k + l - 1,
        Criterion::MixedMinimax => (k * k).max(l * l),
    }
}

/// Total log-term budget of the smooth-max sandwich: log m for minimax,
/// log(K^2) + log(L^2) for the mixed sum of two log-sum-exp terms.
pub fn sandwich_log_m(k: usize, l: usize, criterion: Criterion) -> f64 {
    match criterion {
        Criterion::Minimax => ((k + l - 1) as f64).ln(),
        Criterion::MixedMinimax => ((k * k) as f64).ln() + ((l * l) as f64).ln(),
    }
}

fn log_sum_exp_scaled(tau: f64, zs: impl Iterator<Item = f64> + Clone) -> f64 {
    // (1/tau) log sum exp(tau z), max-subtracted.
    let max = zs.clone().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = zs.map(|z| (tau * (z - max)).exp()).sum();
    max + sum.ln() / tau
}

/// Smooth-max pseudo-risk at one anchor.
pub fn gamma_smooth(
    grid: &PsiGrid,
    k0: usize,
    l0: usize,
    tau: f64,
    criterion: Criterion,
) -> Result<f64> {
    if tau <= 0.0 {
        return Err(Error::Contract(format!("tau must be positive, got {tau}")));
    }
    let (k, l) = (grid.k, grid.l);
    let value = match criterion {
        Criterion::Minimax => {
            // Union index set {k = k0, l in L} U {l = l0, k in K}; the null
            // pair contributes exp(0) exactly once.
            let mut zs = Vec::with_capacity(k + l - 1);
            for li in 0..l {
                zs.push(perturbation_hat(grid, k0, li, k0, l0));
            }
            for ki in 0..k {
                if ki != k0 {
                    zs.push(perturbation_hat(grid, ki, l0, k0, l0));
                }
            }
            log_sum_exp_scaled(tau, zs.iter().copied())
        }
        Criterion::MixedMinimax => {
            let mut zl = Vec::with_capacity(l * l);
            for l1 in 0..l {
                for l2 in 0..l {
                    zl.push(perturbation_hat(grid, k0, l1, k0, l2));
                }
            }
            let mut zk = Vec::with_capacity(k * k);
            for k1 in 0..k {
                for k2 in 0..k {
                    zk.push(perturbation_hat(grid, k1, l0, k2, l0));
                }
            }
            log_sum_exp_scaled(tau, zl.iter().copied()) + log_sum_exp_scaled(tau, zk.iter().copied())
        }
    };
    Ok(value)
}

/// Softmin weights over the anchor grid: p_{k,l} proportional to
/// exp(-tau Gamma_{k,l}), in the cancelled overflow-safe form.
pub fn smooth_weights(gamma: &[f64], tau: f64) -> Vec<f64> {
    let min = gamma.iter().copied().fold(f64::INFINITY, f64::min);
    let unnorm: Vec<f64> = gamma.iter().map(|&g| (-tau * (g - min)).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    unnorm.into_iter().map(|w| w / total).collect()
}

/// Weighted combination of the split-averaged pair estimates.
pub fn smooth_psi(weights: &[f64], grid: &PsiGrid) -> f64 {
    let mut psi = 0.0;
    for k in 0..grid.k {
        for l in 0..grid.l {
            psi += weights[k * grid.l + l] * grid.pair_mean(k, l);
        }
    }
    psi
}

/// tau from the approximation budget epsilon = log(m)/tau. A single term
/// makes Gamma exact for any tau; the returned note records the default.
pub fn choose_tau(m: usize, epsilon: f64) -> Result<(f64, Option<String>)> {
    if m < 1 {
        return Err(Error::Contract("term count must be at least 1".into()));
    }
    if epsilon <= 0.0 {
        return Err(Error::Contract("epsilon must be positive".into()));
    }
    if m == 1 {
        return Ok((
            1.0,
            Some("single-term smooth-max is exact; tau defaulted to 1".into()),
        ));
    }
    Ok((((m as f64).ln() / epsilon).min(TAU_CAP), None))
}

/// Full smooth-max summary for one criterion at a fixed tau.
#[derive(Debug, Clone)]
pub struct SmoothMaxResult {
    pub criterion: Criterion,
    pub tau: f64,
    /// Gamma_{k0,l0}(tau), row-major K x L.
    pub gamma: Vec<f64>,
    /// p_{k,l}(tau), row-major K x L, nonnegative, sums to one.
    pub weights: Vec<f64>,
    /// The smooth post-selection estimate psi_hat(tau).
    pub psi_tau: f64,
}

pub fn smooth_max_result(grid: &PsiGrid, tau: f64, criterion: Criterion) -> Result<SmoothMaxResult> {
    let (k, l) = (grid.k, grid.l);
    let mut gamma = vec![0.0; k * l];
    for k0 in 0..k {
        for l0 in 0..l {
            gamma[k0 * l + l0] = gamma_smooth(grid, k0, l0, tau, criterion)?;
        }
    }
    let weights = smooth_weights(&gamma, tau);
    let psi_tau = smooth_psi(&weights, grid);
    Ok(SmoothMaxResult {
        criterion,
        tau,
        gamma,
        weights,
        psi_tau,
    })
}

/// Percentile interval with linearly interpolated quantiles.
pub fn percentile_interval(sorted: &[f64], level: f64) -> (f64, f64) {
    let q = |p: f64| -> f64 {
        let h = p * (sorted.len() - 1) as f64;
        let lo = h.floor() as usize;
        let hi = h.ceil() as usize;
        if lo == hi {
            sorted[lo]
        } else {
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    };
    let alpha = (1.0 - level) / 2.0;
    (q(alpha), q(1.0 - alpha))
}

/// Resample estimates psi_hat(tau) for each requested (criterion, tau), all
/// computed from the same resample pipelines. Failed resamples are dropped
/// and counted; more than 10% drops is an inference error.
pub fn bootstrap_distribution(
    data: &Dataset,
    lib: &CandidateLibrary,
    settings: &PipelineSettings,
    taus: &[(Criterion, f64)],
    reps: usize,
    seed: u64,
) -> Result<(Vec<Vec<f64>>, usize)> {
    if reps < 2 {
        return Err(Error::Contract("bootstrap needs at least 2 resamples".into()));
    }
    let n = data.n();
    let outcomes: Vec<Result<Vec<f64>>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut draw_rng =
                rng::rng_from(rng::derive_seed(seed, &[domain::BOOTSTRAP, rep as u64]));
            let rows: Vec<usize> = (0..n).map(|_| draw_rng.gen_range(0..n)).collect();
            let resample = data.subset(&rows);
            let run_seed = rng::derive_seed(seed, &[domain::BOOTSTRAP_SPLITS, rep as u64]);
            let (grid, _, _) = run_grid(&resample, lib, settings, run_seed)?;
            let mut estimates = Vec::with_capacity(taus.len());
            for &(criterion, tau) in taus {
                estimates.push(smooth_max_result(&grid, tau, criterion)?.psi_tau);
            }
            Ok(estimates)
        })
        .collect();

    let mut per_criterion: Vec<Vec<f64>> = vec![Vec::with_capacity(reps); taus.len()];
    let mut dropped = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(es) => {
                for (i, e) in es.into_iter().enumerate() {
                    per_criterion[i].push(e);
                }
            }
            Err(_) => dropped += 1,
        }
    }
    if dropped * 10 > reps {
        return Err(Error::Inference(format!(
            "{dropped} of {reps} bootstrap resamples failed"
        )));
    }
    Ok((per_criterion, dropped))
}

#[derive(Debug, Clone)]
pub struct BootstrapCi {
    pub lo: f64,
    pub hi: f64,
    pub se: f64,
    pub point: f64,
    pub reps_used: usize,
    pub reps_dropped: usize,
}

/// Summarize a resample stream into a percentile interval and standard error.
pub fn summarize_bootstrap(estimates: &[f64], point: f64, level: f64, dropped: usize) -> Result<BootstrapCi> {
    if !(0.0 < level && level < 1.0) {
        return Err(Error::Contract(format!("level must be in (0,1), got {level}")));
    }
    if estimates.len() < 2 {
        return Err(Error::Inference("too few bootstrap estimates".into()));
    }
    let mut sorted = estimates.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let (lo, hi) = percentile_interval(&sorted, level);
    let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
    let var = estimates.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>()
        / (estimates.len() - 1) as f64;
    Ok(BootstrapCi {
        lo,
        hi,
        se: var.sqrt(),
        point,
        reps_used: estimates.len(),
        reps_dropped: dropped,
    })
}

/// Nonparametric bootstrap of the smooth-max estimator: `reps` resamples of
/// n rows with replacement, re-running the full pipeline (fresh splits,
/// refit nuisances, grid, Gamma, weights) at fixed tau.
pub fn bootstrap_ci(
    data: &Dataset,
    lib: &CandidateLibrary,
    settings: &PipelineSettings,
    criterion: Criterion,
    tau: f64,
    reps: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi> {
    let (grid, _, _) = run_grid(data, lib, settings, seed)?;
    let point = smooth_max_result(&grid, tau, criterion)?.psi_tau;
    let (streams, dropped) =
        bootstrap_distribution(data, lib, settings, &[(criterion, tau)], reps, seed)?;
    summarize_bootstrap(&streams[0], point, level, dropped)
}
