//! CSV and summary files written for one run.
//!
//! Column orders are part of the file contract and locked by tests:
//!
//! * `rounds.csv`: one row per (round, server).
//! * `energy.csv`: `server` rows carry the device upload and computation
//!   energy, `link` rows the model transmission energy of each selected
//!   link, `round` rows the cumulative totals after the round and a final
//!   `summary` row the run totals.
//! * `links.csv`: selected links per round with the utility they were
//!   scored at in the following round (empty when never scored).
//! * `aggregation.csv` (optional): importance `l` and weight `q` of every
//!   model entering an aggregation.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use hatdfed_core::energy::joules_to_mj;
use hatdfed_core::{RunOutput, SimConfig};
use serde::{Deserialize, Serialize};

use crate::chart;

pub const ROUNDS_HEADER: &[&str] = &[
    "round",
    "server",
    "accuracy",
    "dataset_size",
    "connected_devices",
    "in_degree",
    "out_degree",
    "e_dt_J",
    "e_cp_J",
];
pub const ENERGY_HEADER: &[&str] = &[
    "kind",
    "round",
    "server",
    "src",
    "dst",
    "e_dt_J",
    "e_cp_J",
    "e_mt_J",
    "tot_cost_MJ",
    "mt_cost_MJ",
];
pub const LINKS_HEADER: &[&str] = &["round", "src", "dst", "e_mt_J", "utility"];
pub const AGGREGATION_HEADER: &[&str] = &["round", "receiver", "sender", "l", "q"];

pub const ROUNDS_FILE: &str = "rounds.csv";
pub const ENERGY_FILE: &str = "energy.csv";
pub const LINKS_FILE: &str = "links.csv";
pub const AGGREGATION_FILE: &str = "aggregation.csv";
pub const SUMMARY_FILE: &str = "summary.toml";
pub const CHART_FILE: &str = "chart.svg";

/// Final report written as `summary.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub strategy: String,
    pub seed: u64,
    pub n_rounds: usize,
    pub avg_acc: f64,
    pub var_acc: f64,
    pub best_acc: f64,
    pub worst_acc: f64,
    #[serde(rename = "tot_cost_MJ")]
    pub tot_cost_mj: f64,
    #[serde(rename = "mt_cost_MJ")]
    pub mt_cost_mj: f64,
    /// Per-sample computation cost drawn for each server, J.
    pub tau: Vec<f64>,
}

impl SummaryReport {
    pub fn new(strategy: &str, cfg: &SimConfig, out: &RunOutput) -> Self {
        let s = &out.summary;
        Self {
            strategy: strategy.to_string(),
            seed: cfg.seed,
            n_rounds: cfg.n_rounds,
            avg_acc: s.avg_acc,
            var_acc: s.var_acc,
            best_acc: s.best_acc,
            worst_acc: s.worst_acc,
            tot_cost_mj: s.tot_cost_mj,
            mt_cost_mj: s.mt_cost_mj,
            tau: out.tau.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WriteOptions {
    pub aggregation_debug: bool,
    pub chart: bool,
}

fn csv_err(e: csv::Error) -> io::Error {
    io::Error::other(e)
}

fn write_csv(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()
}

fn f(x: f64) -> String {
    format!("{x}")
}

pub fn rounds_rows(out: &RunOutput) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in &out.rounds {
        for i in 0..r.accuracy.len() {
            rows.push(vec![
                r.round.to_string(),
                i.to_string(),
                f(r.accuracy[i]),
                r.dataset_size[i].to_string(),
                r.connected_devices[i].to_string(),
                r.topology.in_neighbors(i).len().to_string(),
                r.topology.out_neighbors(i).len().to_string(),
                f(r.e_dt[i]),
                f(r.e_cp[i]),
            ]);
        }
    }
    rows
}

pub fn energy_rows(out: &RunOutput) -> Vec<Vec<String>> {
    let e = String::new;
    let mut rows = Vec::new();
    let mut tot = 0.0;
    let mut mt = 0.0;
    for r in &out.rounds {
        for i in 0..r.e_dt.len() {
            rows.push(vec!["server".into(), r.round.to_string(), i.to_string(), e(), e(), f(r.e_dt[i]), f(r.e_cp[i]), e(), e(), e()]);
        }
        for (l, cost) in &r.e_mt {
            rows.push(vec!["link".into(), r.round.to_string(), e(), l.src.to_string(), l.dst.to_string(), e(), e(), f(*cost), e(), e()]);
        }
        tot += r.round_total;
        mt += r.e_mt.iter().map(|(_, c)| *c).sum::<f64>();
        rows.push(vec!["round".into(), r.round.to_string(), e(), e(), e(), e(), e(), e(), f(joules_to_mj(tot)), f(joules_to_mj(mt))]);
    }
    rows.push(vec![
        "summary".into(),
        e(),
        e(),
        e(),
        e(),
        e(),
        e(),
        e(),
        f(out.summary.tot_cost_mj),
        f(out.summary.mt_cost_mj),
    ]);
    rows
}

pub fn links_rows(out: &RunOutput) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (k, r) in out.rounds.iter().enumerate() {
        let scored = out.rounds.get(k + 1).map(|n| n.utilities.as_slice()).unwrap_or(&[]);
        for (l, cost) in &r.e_mt {
            let u = scored.iter().find(|(s, _)| s == l).map(|(_, u)| f(*u)).unwrap_or_default();
            rows.push(vec![r.round.to_string(), l.src.to_string(), l.dst.to_string(), f(*cost), u]);
        }
    }
    rows
}

pub fn aggregation_rows(out: &RunOutput) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for r in &out.rounds {
        for a in &r.aggregation {
            rows.push(vec![
                r.round.to_string(),
                a.receiver.to_string(),
                a.sender.to_string(),
                a.importance.map(f).unwrap_or_default(),
                f(a.weight),
            ]);
        }
    }
    rows
}

/// Writes the run's files into `dir` (created if needed) and returns their
/// paths.
pub fn write_run(dir: &Path, strategy: &str, cfg: &SimConfig, out: &RunOutput, opts: WriteOptions) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> io::Result<()> {
        let p = dir.join(name);
        write_csv(&p, header, rows)?;
        written.push(p);
        Ok(())
    };
    emit(ROUNDS_FILE, ROUNDS_HEADER, rounds_rows(out))?;
    emit(ENERGY_FILE, ENERGY_HEADER, energy_rows(out))?;
    emit(LINKS_FILE, LINKS_HEADER, links_rows(out))?;
    if opts.aggregation_debug {
        emit(AGGREGATION_FILE, AGGREGATION_HEADER, aggregation_rows(out))?;
    }
    let report = SummaryReport::new(strategy, cfg, out);
    let p = dir.join(SUMMARY_FILE);
    fs::write(&p, toml::to_string(&report).map_err(io::Error::other)?)?;
    written.push(p);
    if opts.chart {
        let p = dir.join(CHART_FILE);
        fs::write(&p, chart::render(&out.summary.avg_acc_series, &out.summary.tot_cost_series_mj))?;
        written.push(p);
    }
    Ok(written)
}

/// Per-round mean accuracy and cumulative total cost recovered from a run
/// directory's CSVs.
pub fn read_series(dir: &Path) -> io::Result<(Vec<f64>, Vec<f64>)> {
    let mut acc: Vec<(usize, f64, usize)> = Vec::new();
    let mut r = csv::Reader::from_path(dir.join(ROUNDS_FILE)).map_err(csv_err)?;
    check_header(r.headers().map_err(csv_err)?, ROUNDS_HEADER, ROUNDS_FILE)?;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let round: usize = parse_field(&rec, 0, ROUNDS_FILE)?;
        let a: f64 = parse_field(&rec, 2, ROUNDS_FILE)?;
        match acc.last_mut() {
            Some(last) if last.0 == round => {
                last.1 += a;
                last.2 += 1;
            }
            _ => acc.push((round, a, 1)),
        }
    }
    let mut cost = Vec::new();
    let mut r = csv::Reader::from_path(dir.join(ENERGY_FILE)).map_err(csv_err)?;
    check_header(r.headers().map_err(csv_err)?, ENERGY_HEADER, ENERGY_FILE)?;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        if &rec[0] == "round" {
            cost.push(parse_field(&rec, 8, ENERGY_FILE)?);
        }
    }
    Ok((acc.into_iter().map(|(_, s, n)| s / n as f64).collect(), cost))
}

fn check_header(got: &csv::StringRecord, want: &[&str], file: &str) -> io::Result<()> {
    if got.iter().eq(want.iter().copied()) {
        Ok(())
    } else {
        Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{file}: unexpected header {:?}", got.iter().collect::<Vec<_>>()),
        ))
    }
}

fn parse_field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, file: &str) -> io::Result<T> {
    let line = rec.position().map_or(0, |p| p.line());
    rec.get(i).and_then(|s| s.parse().ok()).ok_or_else(|| {
        io::Error::new(
            io::ErrorKind::InvalidData,
            format!("{file}:{line}: column {} is missing or malformed", i + 1),
        )
    })
}
