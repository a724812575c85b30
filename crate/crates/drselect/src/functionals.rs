//! The doubly robust functional class: H-transform evaluation, estimating
//! equation solving, the built-in catalog, and the generic mixed-bias plugin.
//!
//! Every built-in functional factors as a sum of components, each of the
//! bilinear form b(X)p(X)h1(O) + b(X)h2(O) + p(X)h3(O) + h4(O), where the
//! learner's propensity output pi_hat maps onto the component's p scale.

use std::sync::Arc;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::learners::{FittedNuisance, FittedOutcome, FittedPropensity, OutcomeTarget};

/// One observed unit as read by the h-functions.
#[derive(Debug, Clone, Copy)]
pub struct Obs<'a> {
    pub x: &'a [f64],
    pub a: u8,
    pub y: f64,
}

/// How a truncated propensity estimate enters H as the nuisance p.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PSemantics {
    /// p = pi (conditional-mean learners, e.g. E[A|X]).
    Raw,
    /// p = 1 / pi (inverse weighting on the treated arm).
    Reciprocal,
    /// p = 1 / (1 - pi) (inverse weighting on the control arm).
    ReciprocalComplement,
    /// p = (1 - pi) / pi (odds scale of the missingness model).
    OddsReciprocal,
}

pub fn map_propensity(pi: f64, semantics: PSemantics) -> f64 {
    match semantics {
        PSemantics::Raw => pi,
        PSemantics::Reciprocal => 1.0 / pi,
        PSemantics::ReciprocalComplement => 1.0 / (1.0 - pi),
        PSemantics::OddsReciprocal => (1.0 - pi) / pi,
    }
}

/// One bilinear term of a functional's H.
#[derive(Debug, Clone, Copy)]
pub enum HComponent {
    /// Expected product of conditional expectations.
    Product,
    /// Expected conditional covariance.
    CondCov,
    /// Missing-at-random / counterfactual-mean form on one arm, with an
    /// overall sign (the treatment-effect difference negates the arm-0 term).
    MarArm { arm: u8, sign: f64 },
    /// Missing-not-at-random form with tilt constant alpha.
    Mnar { alpha: f64 },
}

impl HComponent {
    /// The measurable functions (h1, h2, h3, h4) at an observation. The
    /// outcome is only touched where the indicator is set, so unobserved
    /// (NaN) outcomes on the other arm never poison the transform.
    pub fn h(&self, o: &Obs) -> (f64, f64, f64, f64) {
        let a = f64::from(o.a);
        match *self {
            HComponent::Product => (-1.0, a, o.y, 0.0),
            HComponent::CondCov => (1.0, -a, -o.y, a * o.y),
            HComponent::MarArm { arm, sign } => {
                if o.a == arm {
                    (-sign, sign, o.y * sign, 0.0)
                } else {
                    (0.0, sign, 0.0, 0.0)
                }
            }
            HComponent::Mnar { alpha } => {
                if o.a == 1 {
                    let tilt = (-alpha * o.y).exp();
                    (-tilt, 0.0, o.y * tilt, o.y)
                } else {
                    (0.0, 1.0, 0.0, 0.0)
                }
            }
        }
    }

    pub fn p_semantics(&self) -> PSemantics {
        match *self {
            HComponent::Product | HComponent::CondCov => PSemantics::Raw,
            HComponent::MarArm { arm: 1, .. } => PSemantics::Reciprocal,
            HComponent::MarArm { .. } => PSemantics::ReciprocalComplement,
            HComponent::Mnar { .. } => PSemantics::OddsReciprocal,
        }
    }

    /// Which arm's outcome regression this component reads.
    pub fn b_arm(&self) -> u8 {
        match *self {
            HComponent::MarArm { arm, .. } => arm,
            _ => 1,
        }
    }
}

/// The built-in doubly robust functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FunctionalKind {
    ExpectedProduct,
    ExpectedCondCov,
    MarMean,
    MnarMean { alpha: f64 },
    CounterfactualMean { arm: u8 },
    Ate,
}

impl FunctionalKind {
    pub fn components(&self) -> Vec<HComponent> {
        match *self {
            FunctionalKind::ExpectedProduct => vec![HComponent::Product],
            FunctionalKind::ExpectedCondCov => vec![HComponent::CondCov],
            FunctionalKind::MarMean => vec![HComponent::MarArm { arm: 1, sign: 1.0 }],
            FunctionalKind::MnarMean { alpha } => vec![HComponent::Mnar { alpha }],
            FunctionalKind::CounterfactualMean { arm } => {
                vec![HComponent::MarArm { arm, sign: 1.0 }]
            }
            FunctionalKind::Ate => vec![
                HComponent::MarArm { arm: 1, sign: 1.0 },
                HComponent::MarArm { arm: 0, sign: -1.0 },
            ],
        }
    }

    /// Conditioning plan for the outcome-side learners.
    pub fn outcome_target(&self) -> OutcomeTarget {
        match *self {
            FunctionalKind::ExpectedProduct | FunctionalKind::ExpectedCondCov => {
                OutcomeTarget::AllRows
            }
            FunctionalKind::MarMean => OutcomeTarget::Arm(1),
            FunctionalKind::MnarMean { alpha } => OutcomeTarget::MnarRatio(alpha),
            FunctionalKind::CounterfactualMean { arm } => OutcomeTarget::Arm(arm),
            FunctionalKind::Ate => OutcomeTarget::BothArms,
        }
    }

    /// Whether the functional reads y on (arm-1 rows, arm-0 rows).
    pub fn y_reads(&self) -> (bool, bool) {
        match *self {
            FunctionalKind::ExpectedProduct | FunctionalKind::ExpectedCondCov => (true, true),
            FunctionalKind::MarMean | FunctionalKind::MnarMean { .. } => (true, false),
            FunctionalKind::CounterfactualMean { arm } => (arm == 1, arm == 0),
            FunctionalKind::Ate => (true, true),
        }
    }

    /// Validate that y is finite wherever this functional reads it.
    pub fn validate_reads(&self, ds: &Dataset) -> Result<()> {
        let (arm1, arm0) = self.y_reads();
        for i in 0..ds.n() {
            let read = if ds.a(i) == 1 { arm1 } else { arm0 };
            if read && !ds.y(i).is_finite() {
                return Err(Error::Validation(format!(
                    "outcome not finite at row {} but read by {}",
                    i + 1,
                    self.name()
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> String {
        match *self {
            FunctionalKind::ExpectedProduct => "expected_product".into(),
            FunctionalKind::ExpectedCondCov => "expected_cond_cov".into(),
            FunctionalKind::MarMean => "mar_mean".into(),
            FunctionalKind::MnarMean { alpha } => format!("mnar_mean(alpha={alpha})"),
            FunctionalKind::CounterfactualMean { arm } => {
                format!("counterfactual_mean({arm})")
            }
            FunctionalKind::Ate => "ate".into(),
        }
    }

    pub fn parse(name: &str, mnar_alpha: Option<f64>) -> Result<FunctionalKind> {
        Ok(match name {
            "ate" => FunctionalKind::Ate,
            "mar_mean" => FunctionalKind::MarMean,
            "expected_cond_cov" => FunctionalKind::ExpectedCondCov,
            "expected_product" => FunctionalKind::ExpectedProduct,
            "mnar_mean" => {
                let alpha = mnar_alpha.ok_or_else(|| {
                    Error::Config("mnar_mean requires mnar.alpha".into())
                })?;
                if !alpha.is_finite() {
                    return Err(Error::Config("mnar.alpha must be finite".into()));
                }
                FunctionalKind::MnarMean { alpha }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown functional '{other}' (expected ate | mar_mean | expected_cond_cov | expected_product | mnar_mean)"
                )))
            }
        })
    }
}

/// Evaluate H(p_hat, b_hat) at one observation.
pub fn h_transform(
    def: &FunctionalKind,
    p_hat: &FittedPropensity,
    b_hat: &FittedOutcome,
    obs: &Obs,
) -> Result<f64> {
    let pi = p_hat.pi(obs.x);
    let mut total = 0.0;
    for comp in def.components() {
        let p = map_propensity(pi, comp.p_semantics());
        if !p.is_finite() {
            return Err(Error::NonFinite(format!("p ({:?})", comp)));
        }
        let b = b_hat.b(obs.x, comp.b_arm());
        if !b.is_finite() {
            return Err(Error::NonFinite(format!("b ({:?})", comp)));
        }
        let (h1, h2, h3, h4) = comp.h(obs);
        let term = b * p * h1 + b * h2 + p * h3 + h4;
        if !term.is_finite() {
            return Err(Error::NonFinite(format!("H term ({:?})", comp)));
        }
        total += term;
    }
    Ok(total)
}

/// Solve the estimating equation over a validation index set. Every built-in
/// has IF = H - psi, so the root is the validation mean of H, accumulated in
/// ascending row order.
pub fn estimate_psi(
    def: &FunctionalKind,
    p_hat: &FittedPropensity,
    b_hat: &FittedOutcome,
    ds: &Dataset,
    validation: &[usize],
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Contract("empty validation set".into()));
    }
    let mut sum = 0.0;
    for &i in validation {
        let obs = Obs {
            x: ds.row(i),
            a: ds.a(i),
            y: ds.y(i),
        };
        sum += h_transform(def, p_hat, b_hat, &obs)?;
    }
    Ok(sum / validation.len() as f64)
}

/// Influence-function evaluator for the generic mixed-bias class: the
/// functional is the root of the validation-mean estimating equation.
pub type IfEval = Arc<dyn Fn(&FittedNuisance, &FittedNuisance, &Obs, f64) -> f64 + Send + Sync>;

pub struct MixedBiasPlugin {
    pub if_eval: IfEval,
    /// When the influence function is affine in psi with a known slope, the
    /// root is closed-form.
    pub psi_slope: Option<f64>,
    /// Optional initial bisection bracket for non-affine plugins.
    pub bracket: Option<(f64, f64)>,
}

const BISECT_TOL: f64 = 1e-10;
const MAX_BRACKET_EXPANSIONS: usize = 60;

/// Root of the validation-mean estimating equation for a mixed-bias plugin.
pub fn solve_mixed_bias(
    plugin: &MixedBiasPlugin,
    c_hat: &FittedNuisance,
    d_hat: &FittedNuisance,
    ds: &Dataset,
    validation: &[usize],
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Contract("empty validation set".into()));
    }
    let mean_at = |psi: f64| -> Result<f64> {
        let mut sum = 0.0;
        for &i in validation {
            let obs = Obs {
                x: ds.row(i),
                a: ds.a(i),
                y: ds.y(i),
            };
            let v = (plugin.if_eval)(c_hat, d_hat, &obs, psi);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("if_eval at row {}", i + 1)));
            }
            sum += v;
        }
        Ok(sum / validation.len() as f64)
    };

    let g0 = mean_at(0.0)?;
    if let Some(slope) = plugin.psi_slope {
        if slope == 0.0 {
            return Err(Error::RootFind("psi_slope must be nonzero".into()));
        }
        return Ok(-g0 / slope);
    }

    // Initial bracket: plugin-supplied, or centered at the psi = 0 mean with
    // a ten-standard-deviation half width of the per-row values.
    let (mut lo, mut hi) = match plugin.bracket {
        Some((a, b)) if a < b => (a, b),
        _ => {
            let mut sum_sq = 0.0;
            for &i in validation {
                let obs = Obs {
                    x: ds.row(i),
                    a: ds.a(i),
                    y: ds.y(i),
                };
                let v = (plugin.if_eval)(c_hat, d_hat, &obs, 0.0);
                sum_sq += (v - g0) * (v - g0);
            }
            let sd = (sum_sq / validation.len() as f64).sqrt().max(1e-8 * (1.0 + g0.abs()));
            (g0 - 10.0 * sd, g0 + 10.0 * sd)
        }
    };

    let mut g_lo = mean_at(lo)?;
    let mut g_hi = mean_at(hi)?;
    let mut expansions = 0usize;
    while g_lo * g_hi > 0.0 {
        expansions += 1;
        if expansions > MAX_BRACKET_EXPANSIONS {
            return Err(Error::RootFind(format!(
                "no sign change after {MAX_BRACKET_EXPANSIONS} bracket expansions"
            )));
        }
        let mid = 0.5 * (lo + hi);
        let half = (hi - lo).max(1e-8);
        lo = mid - half;
        hi = mid + half;
        g_lo = mean_at(lo)?;
        g_hi = mean_at(hi)?;
    }
    if g_lo == 0.0 {
        return Ok(lo);
    }
    if g_hi == 0.0 {
        return Ok(hi);
    }

    while hi - lo > BISECT_TOL {
        let mid = 0.5 * (lo + hi);
        let g_mid = mean_at(mid)?;
        if g_mid == 0.0 {
            return Ok(mid);
        }
        if g_lo * g_mid < 0.0 {
            hi = mid;
        } else {
            lo = mid;
            g_lo = g_mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{
        FittedOutcome, FittedPropensity, Model, OutcomeInner, Provenance,
    };

    pub(crate) fn const_propensity(pi: f64, m1: f64) -> FittedPropensity {
        FittedPropensity {
            model: Model::Constant(pi),
            m1,
            provenance: Provenance::default(),
        }
    }

    pub(crate) fn const_outcome(b: f64) -> FittedOutcome {
        FittedOutcome {
            inner: OutcomeInner::Single(Model::Constant(b)),
            m2: None,
            provenance: Provenance::default(),
        }
    }

    fn nuisance_pair(pi: f64, b: f64) -> (FittedPropensity, FittedOutcome) {
        (const_propensity(pi, 0.01), const_outcome(b))
    }

    #[test]
    fn mar_mean_supplement_plug_in() {
        // pi = 0.5 so p = 2; b = 0; observation (A=1, Y=1): H = A*p*(Y-b)+b = 2.
        let (p, b) = nuisance_pair(0.5, 0.0);
        let obs = Obs { x: &[0.0], a: 1, y: 1.0 };
        let h = h_transform(&FunctionalKind::MarMean, &p, &b, &obs).unwrap();
        assert!((h - 2.0).abs() < 1e-15);
    }

    #[test]
    fn cond_cov_supplement_plug_in() {
        let (p, b) = nuisance_pair(0.5, 1.0);
        let obs = Obs { x: &[0.0], a: 1, y: 2.0 };
        let h = h_transform(&FunctionalKind::ExpectedCondCov, &p, &b, &obs).unwrap();
        assert!((h - 0.5).abs() < 1e-15);
    }

    #[test]
    fn product_vanishes_with_zero_nuisances() {
        // pi clamps to M1, but b = 0 and y = 0 kill every term except p*h3 = p*y.
        let (p, b) = nuisance_pair(0.0, 0.0);
        let obs = Obs { x: &[0.0], a: 1, y: 0.0 };
        let h = h_transform(&FunctionalKind::ExpectedProduct, &p, &b, &obs).unwrap();
        assert_eq!(h, 0.0);
    }

    #[test]
    fn estimate_psi_is_validation_mean_of_h() {
        let ds = Dataset::new(
            vec![0.0, 0.0],
            vec![1, 0],
            vec![1.0, 5.0],
            2,
            1,
        )
        .unwrap();
        let (p, b) = nuisance_pair(0.5, 0.0);
        let psi = estimate_psi(&FunctionalKind::MarMean, &p, &b, &ds, &[0, 1]).unwrap();
        // H = (2, 0) on the two rows.
        assert!((psi - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empty_validation_is_contract_error() {
        let ds = Dataset::new(vec![0.0, 0.0], vec![1, 0], vec![1.0, 2.0], 2, 1).unwrap();
        let (p, b) = nuisance_pair(0.5, 0.0);
        assert!(matches!(
            estimate_psi(&FunctionalKind::MarMean, &p, &b, &ds, &[]),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn ate_is_pointwise_difference_of_counterfactual_means() {
        let p = const_propensity(0.37, 0.01);
        let b = FittedOutcome {
            inner: OutcomeInner::PerArm {
                arm1: Model::Constant(2.5),
                arm0: Model::Constant(-1.0),
            },
            m2: None,
            provenance: Provenance::default(),
        };
        for (a, y) in [(1u8, 3.0), (0u8, -0.7), (1, 0.0), (0, 5.5)] {
            let obs = Obs { x: &[0.2], a, y };
            let h_ate = h_transform(&FunctionalKind::Ate, &p, &b, &obs).unwrap();
            let h1 = h_transform(
                &FunctionalKind::CounterfactualMean { arm: 1 },
                &p,
                &b,
                &obs,
            )
            .unwrap();
            let h0 = h_transform(
                &FunctionalKind::CounterfactualMean { arm: 0 },
                &p,
                &b,
                &obs,
            )
            .unwrap();
            assert!((h_ate - (h1 - h0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mnar_at_alpha_zero_matches_mar_pointwise() {
        // With matched b-parameterizations, alpha = 0 reduces the MNAR H to
        // the MAR H at every observation.
        let p = const_propensity(0.41, 0.01);
        let b = const_outcome(1.7);
        for (a, y) in [(1u8, 2.0), (0u8, f64::NAN), (1, -3.0)] {
            let y = if y.is_nan() { 0.0 } else { y };
            let obs = Obs { x: &[0.9], a, y };
            let h_mnar =
                h_transform(&FunctionalKind::MnarMean { alpha: 0.0 }, &p, &b, &obs).unwrap();
            let h_mar = h_transform(&FunctionalKind::MarMean, &p, &b, &obs).unwrap();
            assert!((h_mnar - h_mar).abs() < 1e-12, "a={a} y={y}");
        }
    }

    #[test]
    fn affine_mixed_bias_plugin_matches_estimate_psi() {
        let ds = Dataset::new(
            vec![0.0, 0.0, 0.0],
            vec![1, 0, 1],
            vec![1.0, 5.0, 2.0],
            3,
            1,
        )
        .unwrap();
        let (p, b) = nuisance_pair(0.5, 0.3);
        let direct = estimate_psi(&FunctionalKind::MarMean, &p, &b, &ds, &[0, 1, 2]).unwrap();
        let plugin = MixedBiasPlugin {
            if_eval: Arc::new(|c, d, obs, psi| {
                let (FittedNuisance::Propensity(p), FittedNuisance::Outcome(b)) = (c, d) else {
                    panic!("wrong nuisance kinds");
                };
                h_transform(&FunctionalKind::MarMean, p, b, obs).unwrap() - psi
            }),
            psi_slope: Some(-1.0),
            bracket: None,
        };
        let solved = solve_mixed_bias(
            &plugin,
            &FittedNuisance::Propensity(p.clone()),
            &FittedNuisance::Outcome(b.clone()),
            &ds,
            &[0, 1, 2],
        )
        .unwrap();
        assert!((solved - direct).abs() < 1e-12);
    }

    #[test]
    fn affine_root_three_minus_psi() {
        let ds = Dataset::new(vec![0.0, 0.0], vec![1, 0], vec![0.0, 0.0], 2, 1).unwrap();
        let (p, b) = nuisance_pair(0.5, 0.0);
        let plugin = MixedBiasPlugin {
            if_eval: Arc::new(|_, _, _, psi| 3.0 - psi),
            psi_slope: Some(-1.0),
            bracket: None,
        };
        let solved = solve_mixed_bias(
            &plugin,
            &FittedNuisance::Propensity(p),
            &FittedNuisance::Outcome(b),
            &ds,
            &[0, 1],
        )
        .unwrap();
        assert!((solved - 3.0).abs() < 1e-12);
    }

    #[test]
    fn bisection_finds_ln_two() {
        let ds = Dataset::new(vec![0.0, 0.0], vec![1, 0], vec![0.0, 0.0], 2, 1).unwrap();
        let (p, b) = nuisance_pair(0.5, 0.0);
        let plugin = MixedBiasPlugin {
            if_eval: Arc::new(|_, _, _, psi| (-psi).exp() - 0.5),
            psi_slope: None,
            bracket: Some((-1.0, 1.0)),
        };
        let solved = solve_mixed_bias(
            &plugin,
            &FittedNuisance::Propensity(p),
            &FittedNuisance::Outcome(b),
            &ds,
            &[0, 1],
        )
        .unwrap();
        assert!((solved - std::f64::consts::LN_2).abs() <= 1e-10);
    }

    #[test]
    fn no_root_reports_failure() {
        let ds = Dataset::new(vec![0.0, 0.0], vec![1, 0], vec![0.0, 0.0], 2, 1).unwrap();
        let (p, b) = nuisance_pair(0.5, 0.0);
        let plugin = MixedBiasPlugin {
            if_eval: Arc::new(|_, _, _, psi| 1.0 + psi * psi),
            psi_slope: None,
            bracket: Some((-1.0, 1.0)),
        };
        assert!(matches!(
            solve_mixed_bias(
                &plugin,
                &FittedNuisance::Propensity(p),
                &FittedNuisance::Outcome(b),
                &ds,
                &[0, 1],
            ),
            Err(Error::RootFind(_))
        ));
    }
}
