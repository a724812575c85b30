//! Command-line front end: estimation, pseudo-risk grids, simulation tables,
//! and bootstrap calibration checks.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use drselect::config::{parse_config, CriterionChoice, RunConfig, TauRule};
use drselect::data::{load_dataset, CsvSchema, Dataset};
use drselect::error::{Error, Result};
use drselect::inference::{
    bootstrap_distribution, choose_tau, run_grid, smooth_max_result, summarize_bootstrap,
    term_count, PipelineSettings,
};
use drselect::report::{manifest, Json};
use drselect::selector::{
    final_estimate, pseudo_risk_surface, select, Criterion, PseudoRiskSurface, PsiGrid,
};
use drselect::simulation::{
    ddml_method, generate, report_json, run_experiment, table1_csv, table2_csv, DgpSpec,
    ExperimentPlan, MethodSpec,
};

#[derive(Parser)]
#[command(
    name = "drselect",
    version,
    about = "Selective machine learning for doubly robust functionals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select learner pairs, estimate the functional, and run smooth-max
    /// inference on a CSV dataset.
    Estimate(EstimateArgs),
    /// Emit the psi-grid and both pseudo-risk surfaces for a dataset.
    RiskGrid(RiskGridArgs),
    /// Run the benchmark simulation and emit table-style reports.
    Simulate(SimulateArgs),
    /// Monte Carlo calibration check of the bootstrap interval.
    BootstrapCheck(BootstrapCheckArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key=value config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for artifacts.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Master seed (highest precedence; falls back to config, then the
    /// DRSELECT_SEED environment variable, then 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker thread cap; does not change results.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Input CSV (header row; comma separated).
    #[arg(long)]
    data: PathBuf,
    /// Outcome column name.
    #[arg(long, default_value = "y")]
    y_col: String,
    /// Binary indicator column name.
    #[arg(long, default_value = "a")]
    a_col: String,
    /// Covariate column-name prefix.
    #[arg(long, default_value = "x")]
    x_prefix: String,
}

#[derive(Args)]
struct EstimateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Selection criterion: minimax | mixed_minimax | both.
    #[arg(long)]
    criterion: Option<String>,
    /// Smooth-max scale (mutually exclusive with --epsilon).
    #[arg(long)]
    tau: Option<f64>,
    /// Approximation budget epsilon = log(m)/tau.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Bootstrap resamples (0 disables the interval).
    #[arg(long)]
    bootstrap: Option<usize>,
    /// Interval level.
    #[arg(long)]
    level: Option<f64>,
    /// Target functional.
    #[arg(long)]
    functional: Option<String>,
}

#[derive(Args)]
struct RiskGridArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Target functional.
    #[arg(long)]
    functional: Option<String>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sample sizes, comma separated.
    #[arg(long, default_value = "1000")]
    n: String,
    /// Monte Carlo repetitions.
    #[arg(long, default_value_t = 200)]
    reps: usize,
    /// Methods: comma list of minimax, mixed_minimax, ddml-lasso, ddml-rf,
    /// ddml-gbt.
    #[arg(long, default_value = "minimax,mixed_minimax,ddml-lasso,ddml-rf,ddml-gbt")]
    methods: String,
    /// Bootstrap resamples per rep (0 skips the interval table).
    #[arg(long, default_value_t = 0)]
    bootstrap: usize,
    /// Smooth-max scale override.
    #[arg(long)]
    tau: Option<f64>,
}

#[derive(Args)]
struct BootstrapCheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Sample size per simulated run.
    #[arg(long, default_value_t = 400)]
    n: usize,
    /// Simulated runs.
    #[arg(long, default_value_t = 30)]
    runs: usize,
    /// Bootstrap resamples per run.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Interval level.
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    /// Criterion: minimax | mixed_minimax.
    #[arg(long, default_value = "mixed_minimax")]
    criterion: String,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help/version requests print normally and exit 0.
            if e.use_stderr() {
                emit_error(&Error::Config(e.to_string()));
                return ExitCode::from(1);
            }
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    let outcome = match cli.command {
        Command::Estimate(args) => cmd_estimate(args),
        Command::RiskGrid(args) => cmd_risk_grid(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::BootstrapCheck(args) => cmd_bootstrap_check(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(&e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn emit_error(e: &Error) {
    let obj = Json::Obj(vec![(
        "error".into(),
        Json::Obj(vec![
            ("kind".into(), Json::Str(e.kind().into())),
            ("message".into(), Json::Str(e.to_string())),
        ]),
    )]);
    eprint!("{}", obj.render());
}

fn setup_threads(threads: Option<usize>) {
    if let Some(t) = threads {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build_global();
    }
}

fn load_config(common: &CommonArgs) -> Result<RunConfig> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            parse_config(&text)
        }
        None => Ok(RunConfig::default()),
    }
}

fn resolve_seed(flag: Option<u64>, cfg: &RunConfig) -> u64 {
    flag.or(cfg.seed)
        .or_else(|| {
            std::env::var("DRSELECT_SEED")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0)
}

fn load_data(args: &DataArgs) -> Result<Dataset> {
    let schema = CsvSchema {
        y_column: args.y_col.clone(),
        a_column: args.a_col.clone(),
        x_prefix: args.x_prefix.clone(),
    };
    load_dataset(&args.data, &schema)
}

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), content)?;
    println!("wrote {}", dir.join(name).display());
    Ok(())
}

/// Canonical key=value text of every resolved setting; hashed into the
/// manifest so identical runs are provably identical jobs.
fn resolved_config_text(cfg: &RunConfig, seed: u64, extras: &[(String, String)]) -> String {
    let mut lines = vec![
        format!("functional = {}", cfg.functional),
        format!("S = {}", cfg.s),
        format!("split_kind = {}", cfg.split_kind.as_str()),
        format!("seed = {seed}"),
        format!("M1 = {}", cfg.m1),
        format!("M2 = {}", cfg.m2.map_or("none".into(), |v: f64| v.to_string())),
        format!("tau = {}", cfg.tau.map_or("none".into(), |v: f64| v.to_string())),
        format!(
            "epsilon = {}",
            cfg.epsilon.map_or("none".into(), |v: f64| v.to_string())
        ),
        format!("bootstrap_reps = {}", cfg.bootstrap_reps),
        format!("criterion = {}", cfg.criterion.as_str()),
        format!("level = {}", cfg.level),
    ];
    if let Some(alpha) = cfg.mnar_alpha {
        lines.push(format!("mnar.alpha = {alpha}"));
    }
    for (i, s) in cfg.library.p_specs.iter().enumerate() {
        lines.push(format!(
            "learner.p.{} = {} [{:016x}]",
            i + 1,
            s.family.as_str(),
            s.content_hash()
        ));
    }
    for (i, s) in cfg.library.b_specs.iter().enumerate() {
        lines.push(format!(
            "learner.b.{} = {} [{:016x}]",
            i + 1,
            s.family.as_str(),
            s.content_hash()
        ));
    }
    for (k, v) in extras {
        lines.push(format!("{k} = {v}"));
    }
    lines.join("\n")
}

fn settings_from(cfg: &RunConfig) -> Result<PipelineSettings> {
    Ok(PipelineSettings {
        functional: cfg.functional_kind()?,
        s: cfg.s,
        split_kind: cfg.split_kind,
        m1: cfg.m1,
        m2: cfg.m2,
    })
}

fn active_criteria(choice: CriterionChoice) -> Vec<Criterion> {
    match choice {
        CriterionChoice::Minimax => vec![Criterion::Minimax],
        CriterionChoice::MixedMinimax => vec![Criterion::MixedMinimax],
        CriterionChoice::Both => vec![Criterion::Minimax, Criterion::MixedMinimax],
    }
}

/// tau per criterion from the tau/epsilon rule.
fn resolve_taus(
    rule: TauRule,
    k: usize,
    l: usize,
    criteria: &[Criterion],
) -> Result<Vec<(Criterion, f64, Option<String>)>> {
    criteria
        .iter()
        .map(|&c| match rule {
            TauRule::Tau(t) => Ok((c, t, None)),
            TauRule::Epsilon(e) => {
                let (tau, note) = choose_tau(term_count(k, l, c), e)?;
                Ok((c, tau, note))
            }
        })
        .collect()
}

fn selection_json(
    grid: &PsiGrid,
    surface: &PseudoRiskSurface,
    criterion: Criterion,
) -> (usize, usize, Json) {
    let (k, l, tied) = select(surface.matrix(criterion), grid.k, grid.l);
    let json = Json::Obj(vec![
        ("k".into(), Json::Int(k as i64)),
        ("l".into(), Json::Int(l as i64)),
        ("p_label".into(), Json::Str(grid.p_labels[k].clone())),
        ("b_label".into(), Json::Str(grid.b_labels[l].clone())),
        ("tied".into(), Json::Bool(tied)),
    ]);
    (k, l, json)
}

fn psi_grid_json(grid: &PsiGrid) -> Json {
    Json::Arr(
        (0..grid.s)
            .map(|s| {
                Json::Arr(
                    (0..grid.k)
                        .map(|k| {
                            Json::arr_f64(
                                &(0..grid.l)
                                    .map(|l| grid.value(s, k, l))
                                    .collect::<Vec<_>>(),
                            )
                        })
                        .collect(),
                )
            })
            .collect(),
    )
}

fn labels_json(labels: &[String]) -> Json {
    Json::Arr(labels.iter().map(|s| Json::Str(s.clone())).collect())
}

fn cmd_estimate(args: EstimateArgs) -> Result<()> {
    setup_threads(args.common.threads);
    let mut cfg = load_config(&args.common)?;
    if let Some(c) = &args.criterion {
        cfg.criterion = CriterionChoice::parse(c)?;
    }
    if let Some(t) = args.tau {
        cfg.tau = Some(t);
        cfg.epsilon = None;
    }
    if let Some(e) = args.epsilon {
        cfg.epsilon = Some(e);
        if args.tau.is_none() {
            cfg.tau = None;
        }
    }
    if let Some(b) = args.bootstrap {
        cfg.bootstrap_reps = b;
    }
    if let Some(level) = args.level {
        cfg.level = level;
    }
    if let Some(f) = &args.functional {
        cfg.functional = f.clone();
    }
    cfg.validate()?;
    let seed = resolve_seed(args.common.seed, &cfg);
    let data = load_data(&args.data)?;
    let settings = settings_from(&cfg)?;
    settings.functional.validate_reads(&data)?;

    let (grid, _, _) = run_grid(&data, &cfg.library, &settings, seed)?;
    let surface = pseudo_risk_surface(&grid);
    let criteria = active_criteria(cfg.criterion);
    let rule = cfg.tau_or_epsilon()?;
    let taus = resolve_taus(rule, grid.k, grid.l, &criteria)?;

    // Bootstrap streams shared across criteria.
    let boot = cfg.bootstrap_reps;
    let streams = if boot > 0 {
        let pairs: Vec<(Criterion, f64)> = taus.iter().map(|&(c, t, _)| (c, t)).collect();
        Some(bootstrap_distribution(
            &data,
            &cfg.library,
            &settings,
            &pairs,
            boot,
            seed,
        )?)
    } else {
        None
    };

    let mut criteria_json = Vec::new();
    for (idx, (criterion, tau, note)) in taus.iter().enumerate() {
        let (criterion, tau) = (*criterion, *tau);
        let (k, l, sel_json) = selection_json(&grid, &surface, criterion);
        let psi_hat = final_estimate(&grid, k, l);
        let smooth = smooth_max_result(&grid, tau, criterion)?;
        let mut fields = vec![
            ("selected".into(), sel_json),
            ("psi_hat".into(), Json::Num(psi_hat)),
            ("tau".into(), Json::Num(tau)),
            ("psi_tau".into(), Json::Num(smooth.psi_tau)),
            ("gamma".into(), Json::matrix(&smooth.gamma, grid.k, grid.l)),
            (
                "weights".into(),
                Json::matrix(&smooth.weights, grid.k, grid.l),
            ),
        ];
        if let Some(note) = note {
            fields.push(("tau_note".into(), Json::Str(note.clone())));
        }
        if let Some((streams, dropped)) = &streams {
            let ci = summarize_bootstrap(&streams[idx], smooth.psi_tau, cfg.level, *dropped)?;
            fields.push((
                "bootstrap".into(),
                Json::Obj(vec![
                    ("lo".into(), Json::Num(ci.lo)),
                    ("hi".into(), Json::Num(ci.hi)),
                    ("se".into(), Json::Num(ci.se)),
                    ("point".into(), Json::Num(ci.point)),
                    ("level".into(), Json::Num(cfg.level)),
                    ("reps_used".into(), Json::Int(ci.reps_used as i64)),
                    ("reps_dropped".into(), Json::Int(ci.reps_dropped as i64)),
                ]),
            ));
        }
        criteria_json.push((criterion.as_str().to_string(), Json::Obj(fields)));
    }

    let result = Json::Obj(vec![
        ("functional".into(), Json::Str(settings.functional.name())),
        ("n".into(), Json::Int(data.n() as i64)),
        ("d".into(), Json::Int(data.d() as i64)),
        ("S".into(), Json::Int(grid.s as i64)),
        ("seed".into(), Json::Int(seed as i64)),
        ("p_labels".into(), labels_json(&grid.p_labels)),
        ("b_labels".into(), labels_json(&grid.b_labels)),
        ("criteria".into(), Json::Obj(criteria_json)),
        ("psi_grid".into(), psi_grid_json(&grid)),
    ]);

    let extras = vec![
        ("command".to_string(), "estimate".to_string()),
        ("data".to_string(), args.data.data.display().to_string()),
    ];
    let resolved = resolved_config_text(&cfg, seed, &extras);
    write_artifact(&args.common.out, "estimate.json", &result.render())?;
    write_artifact(
        &args.common.out,
        "manifest.json",
        &manifest("estimate", &resolved, seed).render(),
    )?;
    Ok(())
}

fn cmd_risk_grid(args: RiskGridArgs) -> Result<()> {
    setup_threads(args.common.threads);
    let mut cfg = load_config(&args.common)?;
    if let Some(f) = &args.functional {
        cfg.functional = f.clone();
    }
    cfg.validate()?;
    let seed = resolve_seed(args.common.seed, &cfg);
    let data = load_data(&args.data)?;
    let settings = settings_from(&cfg)?;
    settings.functional.validate_reads(&data)?;

    let (grid, _, _) = run_grid(&data, &cfg.library, &settings, seed)?;
    let surface = pseudo_risk_surface(&grid);
    let (.., sel1) = selection_json(&grid, &surface, Criterion::Minimax);
    let (.., sel2) = selection_json(&grid, &surface, Criterion::MixedMinimax);

    let result = Json::Obj(vec![
        ("functional".into(), Json::Str(settings.functional.name())),
        ("n".into(), Json::Int(data.n() as i64)),
        ("S".into(), Json::Int(grid.s as i64)),
        ("seed".into(), Json::Int(seed as i64)),
        ("psi_grid".into(), psi_grid_json(&grid)),
        ("b1".into(), Json::matrix(&surface.b1, grid.k, grid.l)),
        ("b2".into(), Json::matrix(&surface.b2, grid.k, grid.l)),
        ("row_term".into(), Json::arr_f64(&surface.row_term)),
        ("col_term".into(), Json::arr_f64(&surface.col_term)),
        (
            "selected".into(),
            Json::Obj(vec![
                ("minimax".into(), sel1),
                ("mixed_minimax".into(), sel2),
            ]),
        ),
        ("p_labels".into(), labels_json(&grid.p_labels)),
        ("b_labels".into(), labels_json(&grid.b_labels)),
    ]);

    let extras = vec![
        ("command".to_string(), "risk-grid".to_string()),
        ("data".to_string(), args.data.data.display().to_string()),
    ];
    let resolved = resolved_config_text(&cfg, seed, &extras);
    write_artifact(&args.common.out, "risk_grid.json", &result.render())?;
    write_artifact(
        &args.common.out,
        "manifest.json",
        &manifest("risk-grid", &resolved, seed).render(),
    )?;
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    setup_threads(args.common.threads);
    let cfg = load_config(&args.common)?;
    cfg.validate()?;
    let seed = resolve_seed(args.common.seed, &cfg);

    let n_values: Vec<usize> = args
        .n
        .split(',')
        .map(|v| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad sample size '{v}'")))
        })
        .collect::<Result<_>>()?;
    let mut methods = Vec::new();
    for name in args.methods.split(',') {
        let name = name.trim();
        match name {
            "minimax" => methods.push(MethodSpec::Minimax),
            "mixed_minimax" => methods.push(MethodSpec::MixedMinimax),
            other => methods.push(ddml_method(other)?),
        }
    }

    let settings = settings_from(&cfg)?;
    let tau = match (args.tau, cfg.tau) {
        (Some(t), _) => Some(t),
        (None, t) => t,
    };
    let plan = ExperimentPlan {
        n_values: n_values.clone(),
        reps: args.reps,
        seed,
        methods,
        library: cfg.library.clone(),
        settings,
        tau,
        bootstrap_reps: args.bootstrap,
        level: cfg.level,
    };
    let report = run_experiment(&plan)?;

    let extras = vec![
        ("command".to_string(), "simulate".to_string()),
        ("n".to_string(), args.n.clone()),
        ("reps".to_string(), args.reps.to_string()),
        ("methods".to_string(), args.methods.clone()),
        ("bootstrap".to_string(), args.bootstrap.to_string()),
    ];
    let resolved = resolved_config_text(&cfg, seed, &extras);
    write_artifact(&args.common.out, "table1.csv", &table1_csv(&report, &n_values))?;
    write_artifact(&args.common.out, "table2.csv", &table2_csv(&report))?;
    write_artifact(&args.common.out, "report.json", &report_json(&report).render())?;
    write_artifact(
        &args.common.out,
        "manifest.json",
        &manifest("simulate", &resolved, seed).render(),
    )?;
    Ok(())
}

fn cmd_bootstrap_check(args: BootstrapCheckArgs) -> Result<()> {
    setup_threads(args.common.threads);
    let cfg = load_config(&args.common)?;
    cfg.validate()?;
    let seed = resolve_seed(args.common.seed, &cfg);
    let criterion = match args.criterion.as_str() {
        "minimax" => Criterion::Minimax,
        "mixed_minimax" => Criterion::MixedMinimax,
        other => {
            return Err(Error::Config(format!(
                "unknown criterion '{other}' (expected minimax | mixed_minimax)"
            )))
        }
    };
    let settings = settings_from(&cfg)?;
    let psi0 = drselect::simulation::true_psi(&settings.functional)?;
    let k = cfg.library.k();
    let l = cfg.library.l();
    let tau = match cfg.tau {
        Some(t) => t,
        None => (((k * k).max(l * l)) as f64).ln(),
    };

    let mut covered = 0usize;
    let mut point_inside = 0usize;
    let mut widths = Vec::with_capacity(args.runs);
    for run in 0..args.runs {
        let run_seed = drselect::rng::derive_seed(seed, &[drselect::rng::domain::REP, run as u64]);
        let data = generate(&DgpSpec {
            n: args.n,
            seed: run_seed,
        });
        let (grid, _, _) = run_grid(&data, &cfg.library, &settings, run_seed)?;
        let point = smooth_max_result(&grid, tau, criterion)?.psi_tau;
        let (streams, dropped) = bootstrap_distribution(
            &data,
            &cfg.library,
            &settings,
            &[(criterion, tau)],
            args.reps,
            run_seed,
        )?;
        let ci = summarize_bootstrap(&streams[0], point, args.level, dropped)?;
        if psi0 >= ci.lo && psi0 <= ci.hi {
            covered += 1;
        }
        if point >= ci.lo && point <= ci.hi {
            point_inside += 1;
        }
        widths.push(ci.hi - ci.lo);
    }
    let runs = args.runs as f64;
    let result = Json::Obj(vec![
        ("criterion".into(), Json::Str(criterion.as_str().into())),
        ("functional".into(), Json::Str(settings.functional.name())),
        ("psi0".into(), Json::Num(psi0)),
        ("n".into(), Json::Int(args.n as i64)),
        ("runs".into(), Json::Int(args.runs as i64)),
        ("bootstrap_reps".into(), Json::Int(args.reps as i64)),
        ("tau".into(), Json::Num(tau)),
        ("level".into(), Json::Num(args.level)),
        ("coverage".into(), Json::Num(covered as f64 / runs)),
        (
            "point_in_ci_rate".into(),
            Json::Num(point_inside as f64 / runs),
        ),
        (
            "mean_width".into(),
            Json::Num(widths.iter().sum::<f64>() / runs),
        ),
    ]);

    let extras = vec![
        ("command".to_string(), "bootstrap-check".to_string()),
        ("n".to_string(), args.n.to_string()),
        ("runs".to_string(), args.runs.to_string()),
        ("reps".to_string(), args.reps.to_string()),
    ];
    let resolved = resolved_config_text(&cfg, seed, &extras);
    write_artifact(&args.common.out, "bootstrap_check.json", &result.render())?;
    write_artifact(
        &args.common.out,
        "manifest.json",
        &manifest("bootstrap-check", &resolved, seed).render(),
    )?;
    Ok(())
}
