//! Standalone selector benchmark against the per-round hindsight optimum.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hatdfed_core::oracles::{empirical_regret, regret_bound, servers_for_links, tuned_eta, GeneratorSpec, OracleError, RegretReport, SyntheticBanditEnv};
use hatdfed_core::rng::{stream, Stream};

use crate::tables::{self, TableError};

pub const REGRET_HEADER: &[&str] = &[
    "round",
    "selected",
    "selector_utility",
    "cumulative_utility",
    "oracle_utility",
    "cumulative_oracle_utility",
    "regret",
];
pub const BOUND_HEADER: &[&str] = &["R_K", "bound", "ratio", "first_half", "second_half", "eta"];

#[derive(Debug, Clone, PartialEq)]
pub enum EnvSource {
    Table(PathBuf),
    Generator(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub source: EnvSource,
    pub n_links: usize,
    pub m: usize,
    pub rounds: usize,
    /// Defaults to `sqrt(K ln N) / (N K)` with `N` derived from the link count.
    pub eta: Option<f64>,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            source: EnvSource::Generator("fixed-gap".into()),
            n_links: 20,
            m: 6,
            rounds: 1000,
            eta: None,
            seed: 1,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("{path}: {source}")]
    Table {
        path: String,
        #[source]
        source: TableError,
    },
    #[error("{0}: cannot read utility table: {1}")]
    Read(String, #[source] io::Error),
    #[error("unknown generator '{0}'; supported: fixed-gap, drifting, adversarial-swap")]
    UnknownGenerator(String),
    #[error("invalid benchmark: {0}")]
    Invalid(String),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl BenchError {
    /// Whether the error stems from bad input rather than a runtime failure.
    pub fn is_usage(&self) -> bool {
        !matches!(self, BenchError::Io(_))
    }
}

#[derive(Debug, Clone)]
pub struct BenchResult {
    pub env: SyntheticBanditEnv,
    pub m: usize,
    pub eta: f64,
    pub report: RegretReport,
}

impl BenchResult {
    pub fn bound_line(&self) -> String {
        let r = &self.report;
        format!(
            "R_K = {:.3}, bound 3N sqrt(K ln N) = {:.3}, ratio = {:.3} (N = {:.3}, K = {}, m = {}, eta = {:.6})",
            r.regret,
            r.bound,
            r.regret / r.bound,
            servers_for_links(self.env.n_links()),
            self.env.rounds(),
            self.m,
            self.eta
        )
    }
}

pub fn load_env(opts: &BenchOptions) -> Result<SyntheticBanditEnv, BenchError> {
    match &opts.source {
        EnvSource::Table(path) => {
            let shown = path.display().to_string();
            let text = fs::read_to_string(path).map_err(|e| BenchError::Read(shown.clone(), e))?;
            tables::parse_utility_table(&text).map_err(|source| BenchError::Table { path: shown, source })
        }
        EnvSource::Generator(name) => {
            let spec = GeneratorSpec::by_name(name).ok_or_else(|| BenchError::UnknownGenerator(name.clone()))?;
            if opts.m > opts.n_links {
                return Err(BenchError::Invalid(format!("m = {} exceeds n_links = {}", opts.m, opts.n_links)));
            }
            Ok(SyntheticBanditEnv::generate(
                spec,
                opts.n_links,
                opts.m,
                opts.rounds,
                &mut stream(opts.seed, Stream::Setup, 0, 0),
            )?)
        }
    }
}

pub fn run_bench(opts: &BenchOptions) -> Result<BenchResult, BenchError> {
    let env = load_env(opts)?;
    if opts.m > env.n_links() {
        return Err(BenchError::Invalid(format!("m = {} exceeds n_links = {}", opts.m, env.n_links())));
    }
    if opts.m == 0 {
        return Err(BenchError::Invalid("m must be at least 1".into()));
    }
    let eta = opts.eta.unwrap_or_else(|| tuned_eta(servers_for_links(env.n_links()), env.rounds()));
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(BenchError::Invalid(format!("eta = {eta} out of (0,1]")));
    }
    let report = empirical_regret(&env, opts.m, eta, &mut stream(opts.seed, Stream::Bandit, 0, 0))?;
    debug_assert_eq!(report.bound, regret_bound(servers_for_links(env.n_links()), env.rounds()));
    Ok(BenchResult { env, m: opts.m, eta, report })
}

/// Writes `regret.csv` and `bound.csv` into `dir`.
pub fn write_bench(dir: &Path, res: &BenchResult) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let r = &res.report;
    let regret = dir.join("regret.csv");
    let mut w = csv::Writer::from_path(&regret).map_err(io::Error::other)?;
    w.write_record(REGRET_HEADER).map_err(io::Error::other)?;
    let (mut cu, mut co) = (0.0, 0.0);
    for k in 0..r.selected.len() {
        cu += r.selector_utility[k];
        co += r.oracle_utility[k];
        let sel: Vec<String> = r.selected[k].iter().map(|a| a.to_string()).collect();
        w.write_record([
            (k + 1).to_string(),
            sel.join(" "),
            format!("{}", r.selector_utility[k]),
            format!("{cu}"),
            format!("{}", r.oracle_utility[k]),
            format!("{co}"),
            format!("{}", r.cumulative_regret[k]),
        ])
        .map_err(io::Error::other)?;
    }
    w.flush()?;
    let bound = dir.join("bound.csv");
    let mut w = csv::Writer::from_path(&bound).map_err(io::Error::other)?;
    w.write_record(BOUND_HEADER).map_err(io::Error::other)?;
    w.write_record([
        format!("{}", r.regret),
        format!("{}", r.bound),
        format!("{}", r.regret / r.bound),
        format!("{}", r.first_half),
        format!("{}", r.second_half),
        format!("{}", res.eta),
    ])
    .map_err(io::Error::other)?;
    w.flush()?;
    Ok(vec![regret, bound])
}
