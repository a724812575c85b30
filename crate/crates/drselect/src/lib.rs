//! Selective machine learning for doubly robust functionals.
//!
//! Given libraries of candidate propensity and outcome learners, this crate
//! builds cross-validated functional estimates for every learner pair,
//! selects the pair minimizing a minimax or mixed-minimax pseudo-risk, and
//! performs smooth-max post-selection inference with bootstrap confidence
//! intervals. A simulation harness reproduces the benchmark experiment
//! design at configurable scale.

pub mod config;
pub mod data;
pub mod dgp;
pub mod error;
pub mod functionals;
pub mod inference;
pub mod learners;
pub mod report;
pub mod rng;
pub mod selector;
pub mod simulation;
pub mod splits;

pub use data::{load_dataset, CsvSchema, Dataset};
pub use error::{Error, Result};
pub use functionals::{estimate_psi, h_transform, solve_mixed_bias, FunctionalKind};
pub use inference::{
    bootstrap_ci, choose_tau, gamma_smooth, smooth_psi, smooth_weights, PipelineSettings,
};
pub use learners::{cv_tune, fit, CandidateLibrary, LearnerSpec};
pub use selector::{
    final_estimate, fit_grid, minimax_surface, mixed_minimax_surface, oracle_select,
    perturbation_hat, select, Criterion, PsiGrid,
};
pub use splits::{make_splits, SplitKind, SplitScheme};

/// Clamp a propensity-type value into the symmetric band [M1, 1 - M1].
///
/// Total on the reals and idempotent; the caller guarantees M1 in (0, 0.5).
pub fn truncate_propensity(p: f64, m1: f64) -> f64 {
    p.clamp(m1, 1.0 - m1)
}
