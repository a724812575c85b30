//! Closed forms of the built-in simulation design: five uniform covariates
//! pushed through steep sigmoids, a logistic treatment model with
//! alternating signs, and a linear-in-f outcome mean with unit normal noise.

/// Per-coordinate bump: 1 / (1 + exp(-20(x - 0.5))).
pub fn bump(x: f64) -> f64 {
    1.0 / (1.0 + (-20.0 * (x - 0.5)).exp())
}

/// Sum over coordinates of `bump`.
pub fn bump_sum(x: &[f64]) -> f64 {
    x.iter().map(|&v| bump(v)).sum()
}

/// Alternating-sign contrast (1,-1,1,-1,...) of the bumps.
pub fn bump_contrast(x: &[f64]) -> f64 {
    x.iter()
        .enumerate()
        .map(|(j, &v)| if j % 2 == 0 { bump(v) } else { -bump(v) })
        .sum()
}

/// True propensity pr(A = 1 | X = x).
pub fn true_propensity(x: &[f64]) -> f64 {
    let z = bump_contrast(x);
    1.0 / (1.0 + (-z).exp())
}

/// True conditional outcome mean E(Y | A = a, X = x).
pub fn true_outcome_mean(x: &[f64], arm: u8) -> f64 {
    let s = bump_sum(x);
    let a = f64::from(arm);
    2.0 * (1.0 + s + s * a + a)
}

/// Marginal outcome regression E(Y | X = x) = pi(x) b1(x) + (1 - pi(x)) b0(x).
pub fn true_marginal_outcome(x: &[f64]) -> f64 {
    let pi = true_propensity(x);
    pi * true_outcome_mean(x, 1) + (1.0 - pi) * true_outcome_mean(x, 0)
}

/// Exponentially tilted outcome regression for the missing-not-at-random
/// functional: with Y | A=1, X normal with unit variance,
/// E[Y e^{-aY} | A=1, X] / E[e^{-aY} | A=1, X] = b1(X) - a.
pub fn true_mnar_outcome(x: &[f64], alpha: f64) -> f64 {
    true_outcome_mean(x, 1) - alpha
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_point_values_match_hand_computation() {
        let x = [0.5; 5];
        // bump(0.5) = 0.5, contrast = 0.5, pr = logistic(0.5).
        let pr = true_propensity(&x);
        assert!((pr - 1.0 / (1.0 + (-0.5f64).exp())).abs() < 1e-15);
        assert!((pr - 0.6224593312018546).abs() < 1e-12);
        // E(Y | A=1, x) = 2(1 + 2.5 + 2.5 + 1) = 14.
        assert!((true_outcome_mean(&x, 1) - 14.0).abs() < 1e-12);
        assert!((true_outcome_mean(&x, 0) - 7.0).abs() < 1e-12);
    }

    #[test]
    fn bumps_are_symmetric_about_half() {
        for t in [0.0, 0.12, 0.37, 0.5] {
            assert!((bump(0.5 + t) + bump(0.5 - t) - 1.0).abs() < 1e-12);
        }
    }
}
