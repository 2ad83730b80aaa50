//! Sensitivity sweeps: one parameter over a value list, repeated with
//! consecutive seeds, each run in its own directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hatdfed_core::{run_simulation, RunSummary, SimConfig, Strategy};
use rayon::prelude::*;
use serde::Deserialize;

use crate::config_file::{self, ConfigFileError};
use crate::output::{self, WriteOptions};
use crate::presets;

pub const SWEEP_PARAMETERS: &[&str] = &["alpha", "beta", "gamma", "lambda_dir", "rho"];

pub const RUNS_HEADER: &[&str] = &[
    "parameter",
    "value",
    "repeat",
    "seed",
    "status",
    "avg_acc",
    "var_acc",
    "best_acc",
    "worst_acc",
    "tot_cost_MJ",
    "mt_cost_MJ",
    "error",
];
pub const SUMMARY_HEADER: &[&str] = &[
    "parameter",
    "value",
    "runs",
    "failed",
    "avg_acc_mean",
    "avg_acc_std",
    "var_acc_mean",
    "tot_cost_MJ_mean",
    "tot_cost_MJ_std",
    "mt_cost_MJ_mean",
    "mt_cost_MJ_std",
];

/// Sweep description file. `base` is a config path relative to the sweep
/// file; without it the `preset` (default `table1-desk`) is used.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub parameter: String,
    pub values: Vec<f64>,
    pub repeats: usize,
    #[serde(default)]
    pub base: Option<PathBuf>,
    #[serde(default)]
    pub preset: Option<String>,
    #[serde(default)]
    pub strategy: Option<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("{0}: cannot read sweep spec: {1}")]
    Read(String, #[source] io::Error),
    #[error("{origin}: {message}")]
    Parse { origin: String, message: String },
    #[error("invalid sweep:\n{}", .0.join("\n"))]
    Invalid(Vec<String>),
    #[error(transparent)]
    Config(#[from] ConfigFileError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl SweepError {
    pub fn is_usage(&self) -> bool {
        !matches!(self, SweepError::Io(_))
    }
}

pub fn set_parameter(cfg: &mut SimConfig, name: &str, value: f64) -> bool {
    match name {
        "alpha" => cfg.alpha = value,
        "beta" => cfg.beta = value,
        "gamma" => cfg.gamma = value,
        "lambda_dir" => cfg.lambda_dir = value,
        "rho" => cfg.rho = value,
        _ => return false,
    }
    true
}

/// Resolved sweep: spec, base config and strategy.
#[derive(Debug, Clone)]
pub struct SweepPlan {
    pub spec: SweepSpec,
    pub base: SimConfig,
    pub strategy: Strategy,
}

pub fn parse_spec(text: &str, origin: &str) -> Result<SweepSpec, SweepError> {
    toml::from_str(text).map_err(|e| SweepError::Parse {
        origin: origin.to_string(),
        message: e.to_string().trim_end().to_string(),
    })
}

/// Checks the spec against the base config; every problem is reported.
pub fn plan(spec: SweepSpec, base: SimConfig) -> Result<SweepPlan, SweepError> {
    let mut problems = Vec::new();
    if !SWEEP_PARAMETERS.contains(&spec.parameter.as_str()) {
        problems.push(format!(
            "parameter '{}' not sweepable; choose one of {}",
            spec.parameter,
            SWEEP_PARAMETERS.join(", ")
        ));
    }
    if spec.values.is_empty() {
        problems.push("value list is empty".to_string());
    }
    if spec.repeats == 0 {
        problems.push("repeats must be at least 1".to_string());
    }
    if spec.base.is_some() && spec.preset.is_some() {
        problems.push("give either base or preset, not both".to_string());
    }
    let strategy = match spec.strategy.as_deref().unwrap_or("hat_dfed").parse::<Strategy>() {
        Ok(s) => s,
        Err(e) => {
            problems.push(e.to_string());
            Strategy::HatDfed
        }
    };
    if problems.is_empty() {
        for &v in &spec.values {
            let mut cfg = base.clone();
            set_parameter(&mut cfg, &spec.parameter, v);
            for violation in cfg.violations() {
                problems.push(format!("{} = {v}: {violation}", spec.parameter));
            }
        }
    }
    if problems.is_empty() {
        Ok(SweepPlan { spec, base, strategy })
    } else {
        Err(SweepError::Invalid(problems))
    }
}

/// Reads a sweep file and its base config.
pub fn load_plan(path: &Path, seed: Option<u64>) -> Result<SweepPlan, SweepError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| SweepError::Read(origin.clone(), e))?;
    let spec = parse_spec(&text, &origin)?;
    let mut base = match (&spec.base, &spec.preset) {
        (Some(b), _) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(b);
            config_file::load_config(&p)?
        }
        (None, name) => {
            let name = name.as_deref().unwrap_or("table1-desk");
            let mut cfg = presets::preset(name).ok_or_else(|| {
                SweepError::Invalid(vec![format!("unknown preset '{name}'; available: {}", presets::PRESET_NAMES.join(", "))])
            })?;
            config_file::apply_seed_env(&mut cfg, std::env::var(config_file::SEED_ENV).ok())?;
            cfg
        }
    };
    if let Some(s) = seed {
        base.seed = s;
    }
    plan(spec, base)
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub result: Result<RunSummary, String>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub runs: Vec<RunRecord>,
}

impl SweepOutcome {
    pub fn failed(&self) -> usize {
        self.runs.iter().filter(|r| r.result.is_err()).count()
    }
}

pub fn run_dir(out: &Path, parameter: &str, value: f64, repeat: usize) -> PathBuf {
    out.join(format!("{parameter}_{value}")).join(format!("rep_{repeat}"))
}

/// Sample mean and standard deviation (zero for a single value).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (m, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (m, (ss / (n - 1.0)).sqrt())
}

/// Runs every (value, repeat) pair concurrently. Failed runs are recorded
/// and do not stop the others.
pub fn execute(plan: &SweepPlan, out: &Path) -> Result<SweepOutcome, SweepError> {
    fs::create_dir_all(out)?;
    let spec = &plan.spec;
    let jobs: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.repeats).map(move |r| (v, r)))
        .collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(value, repeat)| {
            let mut cfg = plan.base.clone();
            set_parameter(&mut cfg, &spec.parameter, value);
            cfg.seed = plan.base.seed.wrapping_add(repeat as u64);
            let seed = cfg.seed;
            let result = run_simulation(&cfg, plan.strategy).map_err(|e| e.to_string()).and_then(|o| {
                let dir = run_dir(out, &spec.parameter, value, repeat);
                output::write_run(&dir, plan.strategy.name(), &cfg, &o, WriteOptions::default())
                    .map_err(|e| format!("{}: {e}", dir.display()))?;
                Ok(o.summary)
            });
            if let Err(e) = &result {
                log::error!("{} = {value}, repeat {repeat}: {e}", spec.parameter);
            }
            RunRecord {
                value,
                repeat,
                seed,
                result,
            }
        })
        .collect();
    let outcome = SweepOutcome { runs };
    write_tables(plan, &outcome, out)?;
    Ok(outcome)
}

fn write_tables(plan: &SweepPlan, outcome: &SweepOutcome, out: &Path) -> io::Result<()> {
    let p = &plan.spec.parameter;
    let mut w = csv::Writer::from_path(out.join("sweep_runs.csv")).map_err(io::Error::other)?;
    w.write_record(RUNS_HEADER).map_err(io::Error::other)?;
    for r in &outcome.runs {
        let mut row = vec![p.clone(), format!("{}", r.value), r.repeat.to_string(), r.seed.to_string()];
        match &r.result {
            Ok(s) => {
                row.push("ok".into());
                for x in [s.avg_acc, s.var_acc, s.best_acc, s.worst_acc, s.tot_cost_mj, s.mt_cost_mj] {
                    row.push(format!("{x}"));
                }
                row.push(String::new());
            }
            Err(e) => {
                row.push("failed".into());
                row.extend(std::iter::repeat_n(String::new(), 6));
                row.push(e.clone());
            }
        }
        w.write_record(&row).map_err(io::Error::other)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(out.join("sweep_summary.csv")).map_err(io::Error::other)?;
    w.write_record(SUMMARY_HEADER).map_err(io::Error::other)?;
    for &v in &plan.spec.values {
        let group: Vec<&RunRecord> = outcome.runs.iter().filter(|r| r.value == v).collect();
        let ok: Vec<&RunSummary> = group.iter().filter_map(|r| r.result.as_ref().ok()).collect();
        let col = |g: fn(&RunSummary) -> f64| mean_std(&ok.iter().map(|s| g(s)).collect::<Vec<_>>());
        let (acc_m, acc_s) = col(|s| s.avg_acc);
        let (var_m, _) = col(|s| s.var_acc);
        let (tot_m, tot_s) = col(|s| s.tot_cost_mj);
        let (mt_m, mt_s) = col(|s| s.mt_cost_mj);
        let mut row = vec![p.clone(), format!("{v}"), ok.len().to_string(), (group.len() - ok.len()).to_string()];
        for x in [acc_m, acc_s, var_m, tot_m, tot_s, mt_m, mt_s] {
            row.push(format!("{x}"));
        }
        w.write_record(&row).map_err(io::Error::other)?;
    }
    w.flush()
}
