//! Benchmark data-generating process, ground-truth oracles, cross-fit
//! comparators, synthetic rate-controlled learner families, and the
//! experiment runner emitting table-style reports.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::dgp;
use crate::error::{Error, Result};
use crate::functionals::FunctionalKind;
use crate::inference::{
    bootstrap_distribution, run_grid, smooth_max_result, summarize_bootstrap, PipelineSettings,
};
use crate::learners::{
    CandidateLibrary, FittedOutcome, FittedPropensity, LearnerSpec, Model, OutcomeInner,
    Provenance,
};
use crate::report::{cell_f64, Csv, Json};
use crate::rng::{self, domain};
use crate::selector::{
    final_estimate, grid_cells_on_rows, oracle_select, select, FittedGrids,
};
use crate::splits::SplitKind;

/// Simulation design: n draws with X ~ Uniform(0,1)^5, logistic treatment on
/// the sigmoid-bump contrast, and a unit-variance normal outcome error.
#[derive(Debug, Clone, Copy)]
pub struct DgpSpec {
    pub n: usize,
    pub seed: u64,
}

pub const DGP_DIM: usize = 5;

/// Draw one dataset from the design; deterministic given the seed.
pub fn generate(spec: &DgpSpec) -> Dataset {
    let mut rng = rng::rng_from(rng::derive_seed(spec.seed, &[domain::DGP]));
    let n = spec.n;
    let mut x = Vec::with_capacity(n * DGP_DIM);
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: [f64; DGP_DIM] = std::array::from_fn(|_| rng.gen::<f64>());
        let pi = dgp::true_propensity(&row);
        let ai = u8::from(rng.gen::<f64>() < pi);
        // Box-Muller from two uniforms, fixed draw order.
        let u1: f64 = rng.gen::<f64>().max(1e-300);
        let u2: f64 = rng.gen::<f64>();
        let noise = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        let yi = dgp::true_outcome_mean(&row, ai) + noise;
        x.extend_from_slice(&row);
        a.push(ai);
        y.push(yi);
    }
    Dataset::new(x, a, y, n, DGP_DIM).expect("generated dataset is structurally valid")
}

/// Ground-truth functional values under the design. Exact under the uniform
/// covariate law: E bump = 1/2 by symmetry, so E[Y_1] = 14, E[Y_0] = 7.
pub fn true_psi(functional: &FunctionalKind) -> Result<f64> {
    match functional {
        FunctionalKind::Ate => Ok(7.0),
        FunctionalKind::CounterfactualMean { arm: 1 } => Ok(14.0),
        FunctionalKind::CounterfactualMean { arm: 0 } => Ok(7.0),
        other => Err(Error::Contract(format!(
            "no ground truth for {} under the built-in design",
            other.name()
        ))),
    }
}

/// Monte Carlo oracle for the same targets: mean of the true conditional
/// means over fresh covariate draws. Returns (estimate, standard error).
pub fn mc_oracle_psi(functional: &FunctionalKind, draws: usize, seed: u64) -> Result<(f64, f64)> {
    let value = |x: &[f64]| -> Result<f64> {
        Ok(match functional {
            FunctionalKind::Ate => dgp::true_outcome_mean(x, 1) - dgp::true_outcome_mean(x, 0),
            FunctionalKind::CounterfactualMean { arm } => dgp::true_outcome_mean(x, *arm),
            other => {
                return Err(Error::Contract(format!(
                    "no Monte Carlo oracle for {}",
                    other.name()
                )))
            }
        })
    };
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[domain::EVAL]));
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let row: [f64; DGP_DIM] = std::array::from_fn(|_| rng.gen::<f64>());
        let v = value(&row)?;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / draws as f64;
    let var = (sum_sq / draws as f64 - mean * mean).max(0.0);
    Ok((mean, (var / draws as f64).sqrt()))
}

/// Monte Carlo estimate of the marginal treatment probability E[pi(X)].
pub fn mc_marginal_treatment_probability(draws: usize, seed: u64) -> f64 {
    let mut rng = rng::rng_from(rng::derive_seed(seed, &[domain::EVAL, 1]));
    let mut sum = 0.0;
    for _ in 0..draws {
        let row: [f64; DGP_DIM] = std::array::from_fn(|_| rng.gen::<f64>());
        sum += dgp::true_propensity(&row);
    }
    sum / draws as f64
}

/// Two-fold cross-fit estimator for a single pre-chosen learner pair:
/// nuisances fit on each complementary half, estimates averaged.
pub fn ddml_crossfit(
    data: &Dataset,
    p_spec: &LearnerSpec,
    b_spec: &LearnerSpec,
    def: &FunctionalKind,
    seed: u64,
    m1: f64,
    m2: Option<f64>,
) -> Result<f64> {
    if data.n() < 4 {
        return Err(Error::Sizing("cross-fitting needs at least 4 rows".into()));
    }
    let lib = CandidateLibrary {
        p_specs: vec![p_spec.clone()],
        b_specs: vec![b_spec.clone()],
    };
    let settings = PipelineSettings {
        functional: *def,
        s: 2,
        split_kind: SplitKind::VFold,
        m1,
        m2,
    };
    let (grid, _, _) = run_grid(data, &lib, &settings, seed)?;
    Ok(final_estimate(&grid, 0, 0))
}

// ---------------------------------------------------------------------------
// Synthetic rate-controlled families
// ---------------------------------------------------------------------------

pub type Direction = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Deterministic perturbations of a true nuisance: member k predicts
/// truth(x) + amplitude_k * direction(x).
pub struct SyntheticLearnerFamily {
    pub amplitudes: Vec<f64>,
    pub direction: Direction,
}

/// Fitted grids (S = 1) for synthetic families around the true nuisances of
/// the counterfactual-mean target.
pub fn synthetic_fits(
    family_p: &SyntheticLearnerFamily,
    family_b: &SyntheticLearnerFamily,
    m1: f64,
) -> FittedGrids {
    let props = family_p
        .amplitudes
        .iter()
        .map(|&amp| {
            let dir = Arc::clone(&family_p.direction);
            FittedPropensity {
                model: Model::Fixed(Arc::new(move |x: &[f64]| {
                    (dgp::true_propensity(x) + amp * dir(x)).clamp(0.0, 1.0)
                })),
                m1,
                provenance: Provenance {
                    label: format!("synthetic_p(amp={amp})"),
                    ..Default::default()
                },
            }
        })
        .collect();
    let outs = family_b
        .amplitudes
        .iter()
        .map(|&amp| {
            let dir = Arc::clone(&family_b.direction);
            FittedOutcome {
                inner: OutcomeInner::Single(Model::Fixed(Arc::new(move |x: &[f64]| {
                    dgp::true_outcome_mean(x, 1) + amp * dir(x)
                }))),
                m2: None,
                provenance: Provenance {
                    label: format!("synthetic_b(amp={amp})"),
                    ..Default::default()
                },
            }
        })
        .collect();
    FittedGrids {
        props: vec![props],
        outs: vec![outs],
    }
}

/// Rate-experiment outcome at one sample size.
#[derive(Debug, Clone)]
pub struct RatePoint {
    pub n: usize,
    pub minimax_pair: (usize, usize),
    pub mixed_pair: (usize, usize),
    pub minimax_median_abs_bias: f64,
    pub mixed_median_abs_bias: f64,
}

/// Compare the oracle minimax and mixed-minimax selectors on synthetic
/// families whose bias amplitudes are functions of n. Selection uses a large
/// evaluation sample as the validation measure; selected estimates are
/// sample means over fresh datasets.
pub fn rate_experiment(
    p_amplitudes: &dyn Fn(usize) -> Vec<f64>,
    b_amplitudes: &dyn Fn(usize) -> Vec<f64>,
    p_direction: Direction,
    b_direction: Direction,
    n_grid: &[usize],
    reps: usize,
    eval_n: usize,
    seed: u64,
) -> Result<Vec<RatePoint>> {
    let def = FunctionalKind::CounterfactualMean { arm: 1 };
    let psi0 = true_psi(&def)?;
    let m1 = 0.01;
    let mut out = Vec::with_capacity(n_grid.len());
    for (n_idx, &n) in n_grid.iter().enumerate() {
        let family_p = SyntheticLearnerFamily {
            amplitudes: p_amplitudes(n),
            direction: Arc::clone(&p_direction),
        };
        let family_b = SyntheticLearnerFamily {
            amplitudes: b_amplitudes(n),
            direction: Arc::clone(&b_direction),
        };
        let fits = synthetic_fits(&family_p, &family_b, m1);
        let k = family_p.amplitudes.len();
        let l = family_b.amplitudes.len();

        // Learners are deterministic, so the oracle selection is computed
        // once per n from a large evaluation draw.
        let eval = generate(&DgpSpec {
            n: eval_n,
            seed: rng::derive_seed(seed, &[domain::EVAL, n_idx as u64]),
        });
        let labels_p: Vec<String> = (0..k).map(|i| format!("p{}", i + 1)).collect();
        let labels_b: Vec<String> = (0..l).map(|i| format!("b{}", i + 1)).collect();
        let oracle = oracle_select(&fits, &eval, &def, labels_p, labels_b)?;

        let biases: Vec<Result<(f64, f64)>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let data = generate(&DgpSpec {
                    n,
                    seed: rng::derive_seed(seed, &[domain::REP, n_idx as u64, rep as u64]),
                });
                let rows: Vec<usize> = (0..n).collect();
                let cells =
                    grid_cells_on_rows(&fits.props[0], &fits.outs[0], &def, &data, &rows)?;
                let (mk, ml) = oracle.minimax_pair;
                let (xk, xl) = oracle.mixed_pair;
                Ok((
                    (cells[mk * l + ml] - psi0).abs(),
                    (cells[xk * l + xl] - psi0).abs(),
                ))
            })
            .collect();
        let mut minimax_abs = Vec::with_capacity(reps);
        let mut mixed_abs = Vec::with_capacity(reps);
        for b in biases {
            let (m, x) = b?;
            minimax_abs.push(m);
            mixed_abs.push(x);
        }
        out.push(RatePoint {
            n,
            minimax_pair: oracle.minimax_pair,
            mixed_pair: oracle.mixed_pair,
            minimax_median_abs_bias: median(&mut minimax_abs),
            mixed_median_abs_bias: median(&mut mixed_abs),
        });
    }
    Ok(out)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// A method evaluated by the experiment runner.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    Minimax,
    MixedMinimax,
    Ddml {
        label: String,
        p_spec: LearnerSpec,
        b_spec: LearnerSpec,
    },
}

impl MethodSpec {
    pub fn label(&self) -> String {
        match self {
            MethodSpec::Minimax => "minimax".into(),
            MethodSpec::MixedMinimax => "mixed_minimax".into(),
            MethodSpec::Ddml { label, .. } => label.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub n_values: Vec<usize>,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<MethodSpec>,
    pub library: CandidateLibrary,
    pub settings: PipelineSettings,
    /// Smooth-max scale; when absent, log(max(K^2, L^2)) is used.
    pub tau: Option<f64>,
    /// 0 disables the bootstrap columns.
    pub bootstrap_reps: usize,
    pub level: f64,
}

/// Aggregated row of the report tables.
#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: String,
    pub n: usize,
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    /// mean |bias| relative to the mixed-minimax baseline at the same n.
    pub rel_abs_bias: f64,
    pub l_rate: f64,
    pub u_rate: f64,
    pub width: f64,
    pub coverage: f64,
    pub point_in_ci_rate: f64,
    pub failures: usize,
}

pub struct ExperimentReport {
    pub psi0: f64,
    pub rows: Vec<MethodReport>,
    pub reps: usize,
    pub bootstrap_reps: usize,
}

#[derive(Clone, Default)]
struct RepOutcome {
    /// Per method: Ok(estimate, optional (lo, hi, point_tau)).
    results: Vec<std::result::Result<(f64, Option<(f64, f64, f64)>), String>>,
}

/// Run the full experiment grid: per (n, rep, method) the point estimate and
/// optionally a bootstrap interval, aggregated into table rows.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    if plan.methods.is_empty() || plan.n_values.is_empty() || plan.reps == 0 {
        return Err(Error::Contract(
            "experiment plan needs methods, sample sizes, and reps".into(),
        ));
    }
    plan.library.validate()?;
    let def = plan.settings.functional;
    let psi0 = true_psi(&def)?;
    let k = plan.library.k();
    let l = plan.library.l();
    let tau = plan
        .tau
        .unwrap_or_else(|| (((k * k).max(l * l)) as f64).ln());
    let wants_selective = plan
        .methods
        .iter()
        .any(|m| matches!(m, MethodSpec::Minimax | MethodSpec::MixedMinimax));
    let boot = plan.bootstrap_reps;

    let mut rows = Vec::new();
    for (n_idx, &n) in plan.n_values.iter().enumerate() {
        let outcomes: Vec<RepOutcome> = (0..plan.reps)
            .into_par_iter()
            .map(|rep| run_one_rep(plan, n_idx, n, rep, wants_selective, tau, boot))
            .collect();

        for (m_idx, method) in plan.methods.iter().enumerate() {
            let mut estimates = Vec::with_capacity(plan.reps);
            let mut intervals = Vec::new();
            let mut failures = 0usize;
            for rep_out in &outcomes {
                match &rep_out.results[m_idx] {
                    Ok((est, ci)) => {
                        estimates.push(*est);
                        if let Some(ci) = ci {
                            intervals.push(*ci);
                        }
                    }
                    Err(_) => failures += 1,
                }
            }
            if failures * 20 > plan.reps {
                return Err(Error::Experiment(format!(
                    "method {} at n={n}: {failures} of {} reps failed",
                    method.label(),
                    plan.reps
                )));
            }
            let used = estimates.len().max(1) as f64;
            let mean_bias = estimates.iter().map(|e| e - psi0).sum::<f64>() / used;
            let mean_abs =
                estimates.iter().map(|e| (e - psi0).abs()).sum::<f64>() / used;
            let (mut l_rate, mut u_rate, mut width, mut coverage, mut in_ci) =
                (f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
            if !intervals.is_empty() {
                let m = intervals.len() as f64;
                l_rate = intervals.iter().filter(|(lo, _, _)| psi0 < *lo).count() as f64 / m;
                u_rate = intervals.iter().filter(|(_, hi, _)| psi0 > *hi).count() as f64 / m;
                coverage = 1.0 - l_rate - u_rate;
                width = intervals.iter().map(|(lo, hi, _)| hi - lo).sum::<f64>() / m;
                in_ci = intervals
                    .iter()
                    .filter(|(lo, hi, pt)| *pt >= *lo && *pt <= *hi)
                    .count() as f64
                    / m;
            }
            rows.push(MethodReport {
                method: method.label(),
                n,
                mean_bias,
                mean_abs_bias: mean_abs,
                rel_abs_bias: f64::NAN,
                l_rate,
                u_rate,
                width,
                coverage,
                point_in_ci_rate: in_ci,
                failures,
            });
        }
    }

    // Relative |bias| against the mixed-minimax baseline at the same n.
    for &n in &plan.n_values {
        let baseline = rows
            .iter()
            .find(|r| r.n == n && r.method == "mixed_minimax")
            .map(|r| r.mean_abs_bias);
        if let Some(base) = baseline {
            for row in rows.iter_mut().filter(|r| r.n == n) {
                row.rel_abs_bias = row.mean_abs_bias / base;
            }
        }
    }

    Ok(ExperimentReport {
        psi0,
        rows,
        reps: plan.reps,
        bootstrap_reps: plan.bootstrap_reps,
    })
}

fn run_one_rep(
    plan: &ExperimentPlan,
    n_idx: usize,
    n: usize,
    rep: usize,
    wants_selective: bool,
    tau: f64,
    boot: usize,
) -> RepOutcome {
    let rep_seed = rng::derive_seed(plan.seed, &[domain::REP, n_idx as u64, rep as u64]);
    let data = generate(&DgpSpec { n, seed: rep_seed });

    // Shared selective pipeline for the two criteria.
    type Shared = (f64, f64, Option<(f64, f64, f64)>, Option<(f64, f64, f64)>);
    let selective: Option<std::result::Result<Shared, String>> = if wants_selective {
        Some(selective_rep(plan, &data, rep_seed, tau, boot))
    } else {
        None
    };

    let mut results = Vec::with_capacity(plan.methods.len());
    for method in &plan.methods {
        let res = match method {
            MethodSpec::Minimax => selective
                .as_ref()
                .unwrap()
                .as_ref()
                .map(|(est, _, ci, _)| (*est, *ci))
                .map_err(|e| e.clone()),
            MethodSpec::MixedMinimax => selective
                .as_ref()
                .unwrap()
                .as_ref()
                .map(|(_, est, _, ci)| (*est, *ci))
                .map_err(|e| e.clone()),
            MethodSpec::Ddml { p_spec, b_spec, .. } => {
                ddml_rep(plan, &data, p_spec, b_spec, rep_seed, boot).map_err(|e| e.to_string())
            }
        };
        results.push(res);
    }
    RepOutcome { results }
}

type SharedSelective = (f64, f64, Option<(f64, f64, f64)>, Option<(f64, f64, f64)>);

fn selective_rep(
    plan: &ExperimentPlan,
    data: &Dataset,
    rep_seed: u64,
    tau: f64,
    boot: usize,
) -> std::result::Result<SharedSelective, String> {
    let go = || -> Result<SharedSelective> {
        let (grid, _, _) = run_grid(data, &plan.library, &plan.settings, rep_seed)?;
        let surf = crate::selector::pseudo_risk_surface(&grid);
        let (mk, ml, _) = select(&surf.b1, grid.k, grid.l);
        let (xk, xl, _) = select(&surf.b2, grid.k, grid.l);
        let est_minimax = final_estimate(&grid, mk, ml);
        let est_mixed = final_estimate(&grid, xk, xl);
        if boot == 0 {
            return Ok((est_minimax, est_mixed, None, None));
        }
        let taus = [
            (crate::selector::Criterion::Minimax, tau),
            (crate::selector::Criterion::MixedMinimax, tau),
        ];
        let (streams, dropped) =
            bootstrap_distribution(data, &plan.library, &plan.settings, &taus, boot, rep_seed)?;
        let pt_minimax = smooth_max_result(&grid, tau, taus[0].0)?.psi_tau;
        let pt_mixed = smooth_max_result(&grid, tau, taus[1].0)?.psi_tau;
        let ci1 = summarize_bootstrap(&streams[0], pt_minimax, plan.level, dropped)?;
        let ci2 = summarize_bootstrap(&streams[1], pt_mixed, plan.level, dropped)?;
        Ok((
            est_minimax,
            est_mixed,
            Some((ci1.lo, ci1.hi, pt_minimax)),
            Some((ci2.lo, ci2.hi, pt_mixed)),
        ))
    };
    go().map_err(|e| e.to_string())
}

fn ddml_rep(
    plan: &ExperimentPlan,
    data: &Dataset,
    p_spec: &LearnerSpec,
    b_spec: &LearnerSpec,
    rep_seed: u64,
    boot: usize,
) -> Result<(f64, Option<(f64, f64, f64)>)> {
    let def = plan.settings.functional;
    let seed = rng::derive_seed(rep_seed, &[rng::fnv1a(p_spec.label.as_bytes())]);
    let est = ddml_crossfit(
        data,
        p_spec,
        b_spec,
        &def,
        seed,
        plan.settings.m1,
        plan.settings.m2,
    )?;
    if boot == 0 {
        return Ok((est, None));
    }
    let lib = CandidateLibrary {
        p_specs: vec![p_spec.clone()],
        b_specs: vec![b_spec.clone()],
    };
    let settings = PipelineSettings {
        functional: def,
        s: 2,
        split_kind: SplitKind::VFold,
        m1: plan.settings.m1,
        m2: plan.settings.m2,
    };
    // K = L = 1 degenerates the smooth estimator to the cross-fit average.
    let taus = [(crate::selector::Criterion::Minimax, 1.0)];
    let (streams, dropped) = bootstrap_distribution(data, &lib, &settings, &taus, boot, seed)?;
    let ci = summarize_bootstrap(&streams[0], est, plan.level, dropped)?;
    Ok((est, Some((ci.lo, ci.hi, est))))
}

/// Relative-bias table: methods as rows, sample sizes as columns.
pub fn table1_csv(report: &ExperimentReport, n_values: &[usize]) -> String {
    let mut header = vec!["method".to_string()];
    for &n in n_values {
        header.push(format!("n={n}"));
    }
    let header_refs: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let mut csv = Csv::new(&header_refs);
    let mut methods = Vec::new();
    for row in &report.rows {
        if !methods.contains(&row.method) {
            methods.push(row.method.clone());
        }
    }
    for method in methods {
        let mut cells = vec![method.clone()];
        for &n in n_values {
            let v = report
                .rows
                .iter()
                .find(|r| r.method == method && r.n == n)
                .map(|r| r.rel_abs_bias)
                .unwrap_or(f64::NAN);
            cells.push(cell_f64(v));
        }
        csv.push_row(cells);
    }
    csv.render()
}

/// Interval error-rate table: L, U, width, coverage per (method, n).
pub fn table2_csv(report: &ExperimentReport) -> String {
    let mut csv = Csv::new(&["method", "n", "L", "U", "W", "C"]);
    for row in &report.rows {
        if row.coverage.is_nan() {
            continue;
        }
        csv.push_row(vec![
            row.method.clone(),
            row.n.to_string(),
            cell_f64(row.l_rate),
            cell_f64(row.u_rate),
            cell_f64(row.width),
            cell_f64(row.coverage),
        ]);
    }
    csv.render()
}

/// Full experiment report as JSON.
pub fn report_json(report: &ExperimentReport) -> Json {
    let rows = report
        .rows
        .iter()
        .map(|r| {
            Json::Obj(vec![
                ("method".into(), Json::Str(r.method.clone())),
                ("n".into(), Json::Int(r.n as i64)),
                ("mean_bias".into(), Json::Num(r.mean_bias)),
                ("mean_abs_bias".into(), Json::Num(r.mean_abs_bias)),
                ("rel_abs_bias".into(), Json::Num(r.rel_abs_bias)),
                ("L".into(), Json::Num(r.l_rate)),
                ("U".into(), Json::Num(r.u_rate)),
                ("W".into(), Json::Num(r.width)),
                ("C".into(), Json::Num(r.coverage)),
                ("point_in_ci".into(), Json::Num(r.point_in_ci_rate)),
                ("failures".into(), Json::Int(r.failures as i64)),
            ])
        })
        .collect();
    Json::Obj(vec![
        ("psi0".into(), Json::Num(report.psi0)),
        ("reps".into(), Json::Int(report.reps as i64)),
        (
            "bootstrap_reps".into(),
            Json::Int(report.bootstrap_reps as i64),
        ),
        ("rows".into(), Json::Arr(rows)),
    ])
}

/// The benchmark cross-fit comparator pairs. The lasso comparator pairs an
/// l1-logistic propensity on the raw covariates with a power-basis lasso
/// outcome regression.
pub fn ddml_method(name: &str) -> Result<MethodSpec> {
    use crate::learners::{Family, Role};
    let (label, p_family, b_family) = match name {
        "ddml-lasso" => ("ddml-lasso", Family::L1Logistic, Family::PolyL1),
        "ddml-rf" => (
            "ddml-rf",
            Family::RandomForestCls,
            Family::RandomForestReg,
        ),
        "ddml-gbt" => ("ddml-gbt", Family::GbtCls, Family::GbtReg),
        other => {
            return Err(Error::Config(format!(
                "unknown ddml method '{other}' (expected ddml-lasso | ddml-rf | ddml-gbt)"
            )))
        }
    };
    let p_spec = LearnerSpec::new(p_family, Role::Propensity).with_label(&format!("{label}:p"));
    let b_spec = LearnerSpec::new(b_family, Role::Outcome).with_label(&format!("{label}:b"));
    Ok(MethodSpec::Ddml {
        label: label.into(),
        p_spec,
        b_spec,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::{Family, Role};

    #[test]
    fn generation_is_deterministic_and_well_formed() {
        let spec = DgpSpec { n: 500, seed: 42 };
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.n(), 500);
        assert_eq!(a.d(), DGP_DIM);
        for i in 0..a.n() {
            assert_eq!(a.row(i), b.row(i));
            assert_eq!(a.a(i), b.a(i));
            assert_eq!(a.y(i), b.y(i));
            for &v in a.row(i) {
                assert!((0.0..=1.0).contains(&v));
            }
        }
    }

    #[test]
    fn marginal_treatment_rate_matches_mc_oracle() {
        let data = generate(&DgpSpec { n: 200_000, seed: 3 });
        let empirical =
            data.a_slice().iter().map(|&a| f64::from(a)).sum::<f64>() / data.n() as f64;
        let oracle = mc_marginal_treatment_probability(1_000_000, 9);
        assert!(
            (empirical - oracle).abs() < 0.005,
            "empirical {empirical} vs oracle {oracle}"
        );
    }

    #[test]
    fn true_psi_identities() {
        assert_eq!(true_psi(&FunctionalKind::Ate).unwrap(), 7.0);
        let cf1 = true_psi(&FunctionalKind::CounterfactualMean { arm: 1 }).unwrap();
        let cf0 = true_psi(&FunctionalKind::CounterfactualMean { arm: 0 }).unwrap();
        assert_eq!(cf1 - cf0, true_psi(&FunctionalKind::Ate).unwrap());
        assert!(true_psi(&FunctionalKind::MarMean).is_err());
    }

    #[test]
    fn ddml_with_fixed_constants_equals_full_sample_h_mean() {
        let data = generate(&DgpSpec { n: 400, seed: 21 });
        let p_spec = LearnerSpec::new(Family::Constant, Role::Propensity).with_fixed_value(0.6);
        let b_spec = LearnerSpec::new(Family::Constant, Role::Outcome).with_fixed_value(5.0);
        let def = FunctionalKind::CounterfactualMean { arm: 1 };
        let est = ddml_crossfit(&data, &p_spec, &b_spec, &def, 5, 0.01, None).unwrap();

        let p = crate::learners::FittedPropensity {
            model: Model::Constant(0.6),
            m1: 0.01,
            provenance: Provenance::default(),
        };
        let b = FittedOutcome {
            inner: OutcomeInner::Single(Model::Constant(5.0)),
            m2: None,
            provenance: Provenance::default(),
        };
        let rows: Vec<usize> = (0..data.n()).collect();
        let full = crate::functionals::estimate_psi(&def, &p, &b, &data, &rows).unwrap();
        assert!(
            (est - full).abs() < 1e-12,
            "cross-fit {est} vs full mean {full}"
        );
    }

    #[test]
    fn single_member_synthetic_families_coincide() {
        let dir: Direction = Arc::new(|x: &[f64]| (x[0] - 0.5).sin() + 1.0);
        let points = rate_experiment(
            &|_| vec![0.1],
            &|_| vec![0.2],
            Arc::clone(&dir),
            Arc::clone(&dir),
            &[400],
            12,
            20_000,
            17,
        )
        .unwrap();
        assert_eq!(points.len(), 1);
        let p = &points[0];
        assert_eq!(p.minimax_pair, p.mixed_pair);
        assert!(
            (p.minimax_median_abs_bias - p.mixed_median_abs_bias).abs() < 1e-15,
            "identical selection must give identical bias"
        );
    }

    #[test]
    fn zero_amplitude_families_have_near_zero_bias() {
        let dir: Direction = Arc::new(|_: &[f64]| 1.0);
        let points = rate_experiment(
            &|_| vec![0.0, 0.0],
            &|_| vec![0.0],
            Arc::clone(&dir),
            Arc::clone(&dir),
            &[2000],
            24,
            10_000,
            5,
        )
        .unwrap();
        // Median |psi_hat - psi0| is pure sampling noise, a few sd/sqrt(n).
        assert!(points[0].minimax_median_abs_bias < 0.5);
        assert!(points[0].mixed_median_abs_bias < 0.5);
    }
}
