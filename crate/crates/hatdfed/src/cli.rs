//! Command-line interface. Exit codes: 0 success, 1 usage or config error,
//! 2 runtime error, 3 sweep finished with some runs failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use hatdfed_core::{run_simulation, run_simulation_with, SimConfig, Strategy};

use crate::bench::{self, BenchOptions, EnvSource};
use crate::config_file;
use crate::exec::RayonExecutor;
use crate::output::{self, WriteOptions};
use crate::presets;
use crate::sweep;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "hatdfed", version, about = "Heterogeneity-aware decentralized federated learning simulator")]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ConfigSource {
    /// Config file (TOML, keys are the config field names).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in preset: table1-desk, table1-desk-dds07, table1-desk-spc09,
    /// table1-desk-dds07-spc09, smoke.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one simulation and write rounds.csv, energy.csv, links.csv and summary.toml.
    Run {
        #[command(flatten)]
        source: ConfigSource,
        /// hat_dfed, rnd or ring.
        #[arg(long, default_value = "hat_dfed")]
        strategy: String,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed and the HATDFED_SEED variable.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write chart.svg.
        #[arg(long)]
        chart: bool,
        /// Also write aggregation.csv (importance and weight per model).
        #[arg(long)]
        aggregation_debug: bool,
        /// Run per-server work on a thread pool.
        #[arg(long)]
        parallel: bool,
    },
    /// Run a parameter sweep described by a TOML file.
    Sweep {
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Seed of the first repeat; later repeats use consecutive seeds.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Measure selector regret against the per-round hindsight optimum.
    BanditBench {
        /// Utility table (K rows x n_links columns); overrides the generator.
        #[arg(long)]
        table: Option<PathBuf>,
        /// fixed-gap, drifting or adversarial-swap.
        #[arg(long, default_value = "fixed-gap")]
        generator: String,
        #[arg(long, default_value_t = 20)]
        links: usize,
        #[arg(long, default_value_t = 6)]
        m: usize,
        #[arg(long, default_value_t = 1000)]
        rounds: usize,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-render chart.svg from a run directory's CSVs.
    Report { run_dir: PathBuf },
    /// Check a config and report every violation.
    Validate {
        #[command(flatten)]
        source: ConfigSource,
        /// Print the canonical form of the config.
        #[arg(long)]
        print: bool,
    },
}

fn load(source: &ConfigSource) -> Result<SimConfig, String> {
    match (&source.config, &source.preset) {
        (Some(path), _) => config_file::load_config(path).map_err(|e| e.to_string()),
        (None, Some(name)) => {
            let mut cfg = presets::preset(name)
                .ok_or_else(|| format!("unknown preset '{name}'; available: {}", presets::PRESET_NAMES.join(", ")))?;
            config_file::apply_seed_env(&mut cfg, std::env::var(config_file::SEED_ENV).ok()).map_err(|e| e.to_string())?;
            Ok(cfg)
        }
        (None, None) => Err("either --config or --preset is required".into()),
    }
}

/// Parses `args`; on failure (or `--help`) prints clap's message and
/// returns the exit code.
pub fn parse_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> Result<Cli, i32>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    Cli::try_parse_from(args).map_err(|e| {
        let text = e.render().to_string();
        if e.use_stderr() {
            let _ = write!(err, "{text}");
            EXIT_USAGE
        } else {
            let _ = write!(out, "{text}");
            EXIT_OK
        }
    })
}

/// Parses `args` and runs the command, writing messages to `out`/`err`.
pub fn run_cli<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match parse_args(args, out, err) {
        Ok(cli) => execute(cli.command, out, err),
        Err(code) => code,
    }
}

macro_rules! fail {
    ($err:expr, $code:expr, $($arg:tt)*) => {{
        let _ = writeln!($err, "error: {}", format!($($arg)*));
        return $code;
    }};
}

pub fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match command {
        Command::Run {
            source,
            strategy,
            out: dir,
            seed,
            chart,
            aggregation_debug,
            parallel,
        } => {
            let mut cfg = match load(&source) {
                Ok(c) => c,
                Err(e) => fail!(err, EXIT_USAGE, "{e}"),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let strategy: Strategy = match strategy.parse() {
                Ok(s) => s,
                Err(e) => fail!(err, EXIT_USAGE, "{e}"),
            };
            let result = if parallel {
                run_simulation_with(&cfg, strategy, &RayonExecutor)
            } else {
                run_simulation(&cfg, strategy)
            };
            let run = match result {
                Ok(r) => r,
                Err(e) => fail!(err, EXIT_RUNTIME, "{e}"),
            };
            let opts = WriteOptions { aggregation_debug, chart };
            match output::write_run(&dir, strategy.name(), &cfg, &run, opts) {
                Ok(files) => {
                    let s = &run.summary;
                    let _ = writeln!(
                        out,
                        "{strategy}: avg_acc {:.4} var_acc {:.6} best {:.4} worst {:.4} tot_cost {:.4} MJ mt_cost {:.4} MJ",
                        s.avg_acc, s.var_acc, s.best_acc, s.worst_acc, s.tot_cost_mj, s.mt_cost_mj
                    );
                    for f in files {
                        let _ = writeln!(out, "wrote {}", f.display());
                    }
                    EXIT_OK
                }
                Err(e) => fail!(err, EXIT_RUNTIME, "{}: {e}", dir.display()),
            }
        }
        Command::Sweep { spec, out: dir, seed } => {
            let plan = match sweep::load_plan(&spec, seed) {
                Ok(p) => p,
                Err(e) => fail!(err, EXIT_USAGE, "{e}"),
            };
            match sweep::execute(&plan, &dir) {
                Ok(outcome) => {
                    let failed = outcome.failed();
                    let total = outcome.runs.len();
                    let _ = writeln!(out, "{} runs, {failed} failed; tables in {}", total, dir.display());
                    if failed == 0 {
                        EXIT_OK
                    } else if failed < total {
                        EXIT_PARTIAL
                    } else {
                        EXIT_RUNTIME
                    }
                }
                Err(e) if e.is_usage() => fail!(err, EXIT_USAGE, "{e}"),
                Err(e) => fail!(err, EXIT_RUNTIME, "{e}"),
            }
        }
        Command::BanditBench {
            table,
            generator,
            links,
            m,
            rounds,
            eta,
            seed,
            out: dir,
        } => {
            let opts = BenchOptions {
                source: table.map_or(EnvSource::Generator(generator), EnvSource::Table),
                n_links: links,
                m,
                rounds,
                eta,
                seed,
            };
            let res = match bench::run_bench(&opts) {
                Ok(r) => r,
                Err(e) if e.is_usage() => fail!(err, EXIT_USAGE, "{e}"),
                Err(e) => fail!(err, EXIT_RUNTIME, "{e}"),
            };
            if let Err(e) = bench::write_bench(&dir, &res) {
                fail!(err, EXIT_RUNTIME, "{}: {e}", dir.display());
            }
            let _ = writeln!(out, "{}", res.bound_line());
            EXIT_OK
        }
        Command::Report { run_dir } => match output::read_series(&run_dir) {
            Ok((acc, cost)) => {
                let p = run_dir.join(output::CHART_FILE);
                if let Err(e) = std::fs::write(&p, crate::chart::render(&acc, &cost)) {
                    fail!(err, EXIT_RUNTIME, "{}: {e}", p.display());
                }
                let _ = writeln!(out, "wrote {}", p.display());
                EXIT_OK
            }
            Err(e) => fail!(err, EXIT_USAGE, "{}: {e}", run_dir.display()),
        },
        Command::Validate { source, print } => match load(&source) {
            Ok(cfg) => {
                if print {
                    match config_file::to_canonical(&cfg) {
                        Ok(t) => {
                            let _ = write!(out, "{t}");
                        }
                        Err(e) => fail!(err, EXIT_RUNTIME, "{e}"),
                    }
                } else {
                    let _ = writeln!(out, "ok");
                }
                EXIT_OK
            }
            Err(e) => fail!(err, EXIT_USAGE, "{e}"),
        },
    }
}
