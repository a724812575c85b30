//! Run configuration: flat key=value config files ("#" comments), learner
//! library blocks, and validation.

use crate::error::{Error, Result};
use crate::functionals::FunctionalKind;
use crate::learners::{CandidateLibrary, Family, LearnerSpec, Role};
use crate::splits::SplitKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriterionChoice {
    Minimax,
    MixedMinimax,
    Both,
}

impl CriterionChoice {
    pub fn parse(s: &str) -> Result<CriterionChoice> {
        match s {
            "minimax" => Ok(CriterionChoice::Minimax),
            "mixed_minimax" => Ok(CriterionChoice::MixedMinimax),
            "both" => Ok(CriterionChoice::Both),
            other => Err(Error::Config(format!(
                "unknown criterion '{other}' (expected minimax | mixed_minimax | both)"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CriterionChoice::Minimax => "minimax",
            CriterionChoice::MixedMinimax => "mixed_minimax",
            CriterionChoice::Both => "both",
        }
    }
}

/// Parsed run configuration with defaults filled in.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub functional: String,
    pub mnar_alpha: Option<f64>,
    pub s: usize,
    pub split_kind: SplitKind,
    pub seed: Option<u64>,
    pub m1: f64,
    pub m2: Option<f64>,
    pub tau: Option<f64>,
    pub epsilon: Option<f64>,
    pub bootstrap_reps: usize,
    pub criterion: CriterionChoice,
    pub level: f64,
    pub library: CandidateLibrary,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            functional: "ate".into(),
            mnar_alpha: None,
            s: 3,
            split_kind: SplitKind::VFold,
            seed: None,
            m1: 0.01,
            m2: None,
            tau: None,
            epsilon: None,
            bootstrap_reps: 0,
            criterion: CriterionChoice::Both,
            level: 0.95,
            library: default_library(),
        }
    }
}

/// The benchmark candidate library: three machine learners per side.
pub fn default_library() -> CandidateLibrary {
    CandidateLibrary {
        p_specs: vec![
            LearnerSpec::new(Family::L1Logistic, Role::Propensity),
            LearnerSpec::new(Family::RandomForestCls, Role::Propensity),
            LearnerSpec::new(Family::GbtCls, Role::Propensity),
        ],
        b_specs: vec![
            LearnerSpec::new(Family::L1Linear, Role::Outcome),
            LearnerSpec::new(Family::RandomForestReg, Role::Outcome),
            LearnerSpec::new(Family::GbtReg, Role::Outcome),
        ],
    }
}

impl RunConfig {
    pub fn functional_kind(&self) -> Result<FunctionalKind> {
        FunctionalKind::parse(&self.functional, self.mnar_alpha)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.m1 > 0.0 && self.m1 < 0.5) {
            return Err(Error::Config(format!(
                "M1 must lie in (0, 0.5), got {}",
                self.m1
            )));
        }
        if let Some(m2) = self.m2 {
            if !(m2 > 0.0) {
                return Err(Error::Config(format!("M2 must be positive, got {m2}")));
            }
        }
        if self.s == 0 {
            return Err(Error::Config("S must be at least 1".into()));
        }
        if let (Some(_), Some(_)) = (self.tau, self.epsilon) {
            return Err(Error::Config(
                "tau and epsilon are mutually exclusive; set exactly one".into(),
            ));
        }
        if let Some(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::Config(format!("tau must be positive, got {t}")));
            }
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::Config(format!("epsilon must be positive, got {e}")));
            }
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::Config(format!(
                "level must lie in (0, 1), got {}",
                self.level
            )));
        }
        self.functional_kind()?;
        self.library.validate()?;
        Ok(())
    }

    /// Exactly one of tau/epsilon must be set when smooth-max inference is
    /// requested; returns whichever is present.
    pub fn tau_or_epsilon(&self) -> Result<TauRule> {
        match (self.tau, self.epsilon) {
            (Some(t), None) => Ok(TauRule::Tau(t)),
            (None, Some(e)) => Ok(TauRule::Epsilon(e)),
            (None, None) => Err(Error::Config(
                "inference requested: set exactly one of tau or epsilon".into(),
            )),
            (Some(_), Some(_)) => Err(Error::Config(
                "tau and epsilon are mutually exclusive; set exactly one".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub enum TauRule {
    Tau(f64),
    Epsilon(f64),
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::Config(format!("cannot parse '{value}' for key '{key}'")))
}

fn parse_list_f64(key: &str, value: &str) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_num::<f64>(key, v.trim()))
        .collect()
}

fn parse_list_usize(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|v| parse_num::<usize>(key, v.trim()))
        .collect()
}

/// Parse the flat key=value config format. Unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut p_entries: Vec<(usize, Family)> = Vec::new();
    let mut b_entries: Vec<(usize, Family)> = Vec::new();
    let mut grid_overrides: Vec<(char, usize, String, String)> = Vec::new();
    let mut saw_library_key = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {}: expected 'key = value', got '{line}'",
                lineno + 1
            )));
        };
        let key = key.trim();
        let value = value.trim();

        match key {
            "functional" => cfg.functional = value.to_string(),
            "mnar.alpha" => cfg.mnar_alpha = Some(parse_num(key, value)?),
            "S" => cfg.s = parse_num(key, value)?,
            "split_kind" => cfg.split_kind = SplitKind::parse(value)?,
            "seed" => cfg.seed = Some(parse_num(key, value)?),
            "M1" => cfg.m1 = parse_num(key, value)?,
            "M2" => cfg.m2 = Some(parse_num(key, value)?),
            "tau" => cfg.tau = Some(parse_num(key, value)?),
            "epsilon" => cfg.epsilon = Some(parse_num(key, value)?),
            "bootstrap_reps" => cfg.bootstrap_reps = parse_num(key, value)?,
            "criterion" => cfg.criterion = CriterionChoice::parse(value)?,
            "level" => cfg.level = parse_num(key, value)?,
            _ => {
                if let Some(rest) = key.strip_prefix("learner.") {
                    saw_library_key = true;
                    let (side, idx) = parse_learner_key(key, rest)?;
                    let family = Family::parse(value)?;
                    if side == 'p' {
                        p_entries.push((idx, family));
                    } else {
                        b_entries.push((idx, family));
                    }
                } else if let Some(rest) = key.strip_prefix("grid.") {
                    let mut parts = rest.splitn(3, '.');
                    let side = parts.next().unwrap_or("");
                    let idx = parts.next().unwrap_or("");
                    let param = parts.next().unwrap_or("");
                    if (side != "p" && side != "b") || param.is_empty() {
                        return Err(Error::Config(format!(
                            "bad grid override key '{key}' (expected grid.p.<i>.<param>)"
                        )));
                    }
                    let idx: usize = parse_num(key, idx)?;
                    grid_overrides.push((
                        side.chars().next().unwrap(),
                        idx,
                        param.to_string(),
                        value.to_string(),
                    ));
                } else {
                    return Err(Error::Config(format!("unknown config key '{key}'")));
                }
            }
        }
    }

    if saw_library_key {
        cfg.library = build_library(p_entries, b_entries)?;
    }
    for (side, idx, param, value) in grid_overrides {
        let specs = if side == 'p' {
            &mut cfg.library.p_specs
        } else {
            &mut cfg.library.b_specs
        };
        let spec = specs.get_mut(idx.wrapping_sub(1)).ok_or_else(|| {
            Error::Config(format!("grid override for undefined learner {side}.{idx}"))
        })?;
        apply_grid_override(spec, &param, &value)?;
    }
    Ok(cfg)
}

fn parse_learner_key(full: &str, rest: &str) -> Result<(char, usize)> {
    let mut parts = rest.splitn(2, '.');
    let side = parts.next().unwrap_or("");
    let idx = parts.next().unwrap_or("");
    if side != "p" && side != "b" {
        return Err(Error::Config(format!(
            "bad learner key '{full}' (expected learner.p.<i> or learner.b.<i>)"
        )));
    }
    let idx: usize = parse_num(full, idx)?;
    if idx == 0 {
        return Err(Error::Config(format!("learner indices start at 1: '{full}'")));
    }
    Ok((side.chars().next().unwrap(), idx))
}

fn build_library(
    mut p_entries: Vec<(usize, Family)>,
    mut b_entries: Vec<(usize, Family)>,
) -> Result<CandidateLibrary> {
    let build = |entries: &mut Vec<(usize, Family)>, role: Role| -> Result<Vec<LearnerSpec>> {
        entries.sort_by_key(|&(i, _)| i);
        let mut specs = Vec::with_capacity(entries.len());
        for (pos, &(idx, family)) in entries.iter().enumerate() {
            if idx != pos + 1 {
                return Err(Error::Config(format!(
                    "learner indices must be contiguous from 1; found index {idx} at position {}",
                    pos + 1
                )));
            }
            let label = format!(
                "{}.{}:{}",
                if role == Role::Propensity { "p" } else { "b" },
                idx,
                family.as_str()
            );
            specs.push(LearnerSpec::new(family, role).with_label(&label));
        }
        Ok(specs)
    };
    let p_specs = build(&mut p_entries, Role::Propensity)?;
    let b_specs = build(&mut b_entries, Role::Outcome)?;
    if p_specs.is_empty() || b_specs.is_empty() {
        return Err(Error::Config(
            "learner blocks must define at least one learner per side".into(),
        ));
    }
    Ok(CandidateLibrary { p_specs, b_specs })
}

fn apply_grid_override(spec: &mut LearnerSpec, param: &str, value: &str) -> Result<()> {
    let key = format!("grid.{param}");
    match param {
        "lambda" => spec.tuning.lambda_grid = parse_list_f64(&key, value)?,
        "ntrees" => match spec.family {
            Family::RandomForestCls | Family::RandomForestReg => {
                spec.tuning.rf_ntrees = parse_num(&key, value)?
            }
            _ => spec.tuning.gbt_ntrees = parse_list_usize(&key, value)?,
        },
        "depth" => spec.tuning.gbt_depth = parse_list_usize(&key, value)?,
        "shrinkage" => spec.tuning.gbt_shrinkage = parse_list_f64(&key, value)?,
        "mtry" => spec.tuning.rf_mtry = Some(parse_num(&key, value)?),
        "min_node" => spec.tuning.rf_min_node = Some(parse_num(&key, value)?),
        "degree" => spec.tuning.poly_degree = parse_num(&key, value)?,
        "value" => spec.tuning.fixed_value = Some(parse_num(&key, value)?),
        other => {
            return Err(Error::Config(format!("unknown grid parameter '{other}'")))
        }
    }
    Ok(())
}
