//! L1-penalized linear and logistic regression via cyclic coordinate descent
//! with soft-thresholding, fit on standardized features with an unpenalized
//! intercept. The lasso objective is (1/2n)||y - b0 - Zb||^2 + lambda*||b||_1
//! over standardized columns Z; logistic replaces the quadratic term with the
//! IRLS working approximation of the mean log-likelihood.

const CD_TOL: f64 = 1e-8;
const CD_MAX_SWEEPS: usize = 400;
const IRLS_MAX_OUTER: usize = 40;
const IRLS_TOL: f64 = 1e-8;
const MIN_IRLS_WEIGHT: f64 = 1e-5;

/// Column standardization parameters; zero-variance columns are frozen at
/// coefficient zero.
#[derive(Debug, Clone)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub dead: Vec<bool>,
}

impl Scaler {
    pub fn fit(cols: &[f64], n: usize, d: usize) -> Scaler {
        let mut means = vec![0.0; d];
        let mut sds = vec![0.0; d];
        let mut dead = vec![false; d];
        for j in 0..d {
            let col = &cols[j * n..(j + 1) * n];
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            means[j] = mean;
            if var > 1e-12 {
                sds[j] = var.sqrt();
            } else {
                sds[j] = 1.0;
                dead[j] = true;
            }
        }
        Scaler { means, sds, dead }
    }
}

/// Fitted L1 model on the standardized scale; predicts on raw features.
#[derive(Debug, Clone)]
pub struct L1Model {
    pub intercept: f64,
    pub coefs: Vec<f64>,
    pub scaler: Scaler,
    pub logistic: bool,
}

impl L1Model {
    fn linear_score(&self, x: &[f64]) -> f64 {
        let mut s = self.intercept;
        for j in 0..self.coefs.len() {
            if self.coefs[j] != 0.0 {
                s += self.coefs[j] * (x[j] - self.scaler.means[j]) / self.scaler.sds[j];
            }
        }
        s
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let s = self.linear_score(x);
        if self.logistic {
            super::boost::sigmoid(s)
        } else {
            s
        }
    }
}

fn standardize(cols: &[f64], n: usize, d: usize, scaler: &Scaler) -> Vec<f64> {
    let mut z = vec![0.0; n * d];
    for j in 0..d {
        let inv = 1.0 / scaler.sds[j];
        for i in 0..n {
            z[j * n + i] = if scaler.dead[j] {
                0.0
            } else {
                (cols[j * n + i] - scaler.means[j]) * inv
            };
        }
    }
    z
}

fn soft(z: f64, lambda: f64) -> f64 {
    if z > lambda {
        z - lambda
    } else if z < -lambda {
        z + lambda
    } else {
        0.0
    }
}

/// Weighted lasso coordinate descent on standardized columns `z`.
/// Warm-started from `coefs`/`intercept`; returns after convergence.
fn cd_weighted(
    z: &[f64],
    n: usize,
    d: usize,
    target: &[f64],
    weights: Option<&[f64]>,
    lambda: f64,
    intercept: &mut f64,
    coefs: &mut [f64],
    residual: &mut [f64],
) {
    let inv_n = 1.0 / n as f64;
    // Per-column weighted second moments (1 when unweighted/standardized).
    let mut col_sq = vec![1.0; d];
    let mut w_sum = n as f64;
    if let Some(w) = weights {
        w_sum = w.iter().sum();
        for j in 0..d {
            let zcol = &z[j * n..(j + 1) * n];
            col_sq[j] = zcol
                .iter()
                .zip(w)
                .map(|(&v, &wi)| wi * v * v)
                .sum::<f64>()
                * inv_n;
            if col_sq[j] <= 0.0 {
                col_sq[j] = 1.0;
            }
        }
    }

    // residual = target - intercept - Z coefs, maintained incrementally.
    for i in 0..n {
        let mut r = target[i] - *intercept;
        for j in 0..d {
            if coefs[j] != 0.0 {
                r -= coefs[j] * z[j * n + i];
            }
        }
        residual[i] = r;
    }

    for _sweep in 0..CD_MAX_SWEEPS {
        let mut max_delta = 0.0f64;

        // Intercept (unpenalized).
        let num: f64 = match weights {
            Some(w) => residual.iter().zip(w).map(|(&r, &wi)| wi * r).sum(),
            None => residual.iter().sum(),
        };
        let delta0 = num / w_sum;
        if delta0 != 0.0 {
            *intercept += delta0;
            for r in residual.iter_mut() {
                *r -= delta0;
            }
            max_delta = max_delta.max(delta0.abs());
        }

        for j in 0..d {
            if col_sq[j] == 0.0 {
                continue;
            }
            let zcol = &z[j * n..(j + 1) * n];
            let rho: f64 = match weights {
                Some(w) => zcol
                    .iter()
                    .zip(residual.iter())
                    .zip(w)
                    .map(|((&v, &r), &wi)| wi * v * r)
                    .sum::<f64>()
                    * inv_n,
                None => zcol
                    .iter()
                    .zip(residual.iter())
                    .map(|(&v, &r)| v * r)
                    .sum::<f64>()
                    * inv_n,
            };
            let old = coefs[j];
            let new = soft(rho + old * col_sq[j], lambda) / col_sq[j];
            if new != old {
                let delta = new - old;
                for (r, &v) in residual.iter_mut().zip(zcol) {
                    *r -= delta * v;
                }
                coefs[j] = new;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < CD_TOL {
            break;
        }
    }
}

/// Fit the lasso for each lambda of a descending path, warm-starting along
/// the path. Returns models in the same order as `lambdas_desc`.
pub fn lasso_path(
    cols: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    lambdas_desc: &[f64],
) -> Vec<L1Model> {
    let scaler = Scaler::fit(cols, n, d);
    let z = standardize(cols, n, d, &scaler);
    let mut intercept = y.iter().sum::<f64>() / n as f64;
    let mut coefs = vec![0.0; d];
    let mut residual = vec![0.0; n];
    let mut out = Vec::with_capacity(lambdas_desc.len());
    for &lambda in lambdas_desc {
        cd_weighted(
            &z,
            n,
            d,
            y,
            None,
            lambda,
            &mut intercept,
            &mut coefs,
            &mut residual,
        );
        out.push(L1Model {
            intercept,
            coefs: coefs.clone(),
            scaler: scaler.clone(),
            logistic: false,
        });
    }
    out
}

/// Fit the L1-penalized logistic regression for each lambda of a descending
/// path (binary labels in {0,1}).
pub fn logistic_path(
    cols: &[f64],
    n: usize,
    d: usize,
    y: &[f64],
    lambdas_desc: &[f64],
) -> Vec<L1Model> {
    let scaler = Scaler::fit(cols, n, d);
    let z = standardize(cols, n, d, &scaler);
    let ybar = (y.iter().sum::<f64>() / n as f64).clamp(1e-6, 1.0 - 1e-6);
    let mut intercept = (ybar / (1.0 - ybar)).ln();
    let mut coefs = vec![0.0; d];
    let mut eta = vec![0.0; n];
    let mut working = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut residual = vec![0.0; n];
    let mut out = Vec::with_capacity(lambdas_desc.len());

    for &lambda in lambdas_desc {
        for _outer in 0..IRLS_MAX_OUTER {
            // Quadratic approximation at the current estimate.
            for i in 0..n {
                let mut e = intercept;
                for j in 0..d {
                    if coefs[j] != 0.0 {
                        e += coefs[j] * z[j * n + i];
                    }
                }
                eta[i] = e;
                let p = super::boost::sigmoid(e);
                let w = (p * (1.0 - p)).max(MIN_IRLS_WEIGHT);
                weights[i] = w;
                working[i] = e + (y[i] - p) / w;
            }
            let before_i = intercept;
            let before: Vec<f64> = coefs.clone();
            cd_weighted(
                &z,
                n,
                d,
                &working,
                Some(&weights),
                lambda,
                &mut intercept,
                &mut coefs,
                &mut residual,
            );
            let mut delta = (intercept - before_i).abs();
            for j in 0..d {
                delta = delta.max((coefs[j] - before[j]).abs());
            }
            if delta < IRLS_TOL {
                break;
            }
        }
        out.push(L1Model {
            intercept,
            coefs: coefs.clone(),
            scaler: scaler.clone(),
            logistic: true,
        });
    }
    out
}

/// Expand row-major raw features into the per-coordinate power basis
/// (x, x^2, ..., x^degree), returned column-major.
pub fn power_expand_cols(rows: &[f64], n: usize, d: usize, degree: usize) -> (Vec<f64>, usize) {
    let dd = d * degree;
    let mut cols = vec![0.0; n * dd];
    for i in 0..n {
        for j in 0..d {
            let v = rows[i * d + j];
            let mut p = 1.0;
            for k in 0..degree {
                p *= v;
                cols[(j * degree + k) * n + i] = p;
            }
        }
    }
    (cols, dd)
}
