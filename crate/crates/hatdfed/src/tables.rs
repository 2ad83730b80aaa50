//! Flat text tables: whitespace-separated numbers, one record per line,
//! `#` starts a comment. Used for bandit utility tables, dataset export
//! and model parameter dumps.

use std::fmt::Write;

use hatdfed_core::data::Dataset;
use hatdfed_core::learner::{ModelParams, ModelShape};
use hatdfed_core::oracles::SyntheticBanditEnv;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TableError {
    #[error("line {line}, column {col}: {message}")]
    Cell { line: usize, col: usize, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Other(String),
}

fn cell(line: usize, col: usize, message: impl Into<String>) -> TableError {
    TableError::Cell {
        line,
        col,
        message: message.into(),
    }
}

/// Non-comment lines with their 1-based line numbers.
fn records(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, l)| {
        let l = l.split('#').next().unwrap_or("").trim();
        (!l.is_empty()).then(|| (i + 1, l.split(|c: char| c.is_whitespace() || c == ',').filter(|t| !t.is_empty()).collect()))
    })
}

fn header_values<'a>(text: &'a str, tag: &str) -> Option<Vec<&'a str>> {
    text.lines().find_map(|l| {
        let rest = l.trim().strip_prefix('#')?.trim().strip_prefix(tag)?;
        Some(rest.split_whitespace().collect())
    })
}

/// `K x n_links` utility table; every cell must lie in `[0,1]`.
pub fn parse_utility_table(text: &str) -> Result<SyntheticBanditEnv, TableError> {
    let mut table: Vec<Vec<f64>> = Vec::new();
    for (line, toks) in records(text) {
        let mut row = Vec::with_capacity(toks.len());
        for (c, t) in toks.iter().enumerate() {
            let v: f64 = t.parse().map_err(|_| cell(line, c + 1, format!("'{t}' is not a number")))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(cell(line, c + 1, format!("utility {v} outside [0,1]")));
            }
            row.push(v);
        }
        if let Some(first) = table.first() {
            if row.len() != first.len() {
                return Err(TableError::Line {
                    line,
                    message: format!("{} columns, expected {}", row.len(), first.len()),
                });
            }
        }
        table.push(row);
    }
    SyntheticBanditEnv::from_table(table).map_err(|e| TableError::Other(e.to_string()))
}

pub fn format_utility_table(env: &SyntheticBanditEnv) -> String {
    let mut out = format!("# utility table: {} rounds x {} links\n", env.rounds(), env.n_links());
    for row in env.table() {
        let cells: Vec<String> = row.iter().map(|u| format!("{u}")).collect();
        out.push_str(&cells.join(" "));
        out.push('\n');
    }
    out
}

/// One sample per line: label, then features.
pub fn format_dataset(ds: &Dataset) -> String {
    let mut out = format!("# dataset classes {} dim {}\n", ds.n_classes(), ds.dim());
    for i in 0..ds.len() {
        let _ = write!(out, "{}", ds.label(i));
        for x in ds.features(i) {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_dataset(text: &str) -> Result<Dataset, TableError> {
    let hdr = header_values(text, "dataset").ok_or_else(|| TableError::Other("missing '# dataset classes L dim d' header".into()))?;
    let (classes, dim) = match hdr.as_slice() {
        ["classes", l, "dim", d] => (
            l.parse::<usize>().map_err(|_| TableError::Other("bad class count".into()))?,
            d.parse::<usize>().map_err(|_| TableError::Other("bad dimension".into()))?,
        ),
        _ => return Err(TableError::Other("malformed dataset header".into())),
    };
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (line, toks) in records(text) {
        if toks.len() != dim + 1 {
            return Err(TableError::Line {
                line,
                message: format!("{} fields, expected label + {dim} features", toks.len()),
            });
        }
        let label: usize = toks[0].parse().map_err(|_| cell(line, 1, format!("bad label '{}'", toks[0])))?;
        labels.push(label);
        for (c, t) in toks[1..].iter().enumerate() {
            features.push(t.parse::<f64>().map_err(|_| cell(line, c + 2, format!("'{t}' is not a number")))?);
        }
    }
    Dataset::new(features, labels, classes, dim).map_err(|e| TableError::Other(e.to_string()))
}

/// Shape header, then one parameter per line.
pub fn format_params(params: &ModelParams) -> String {
    let s = params.shape();
    let mut out = format!("# shape {} {} {}\n", s.dim, s.hidden, s.classes);
    for v in params.values() {
        let _ = writeln!(out, "{v}");
    }
    out
}

pub fn parse_params(text: &str) -> Result<ModelParams, TableError> {
    let hdr = header_values(text, "shape").ok_or_else(|| TableError::Other("missing '# shape dim hidden classes' header".into()))?;
    let dims: Vec<usize> = hdr.iter().map(|t| t.parse()).collect::<Result<_, _>>().map_err(|_| TableError::Other("malformed shape header".into()))?;
    let [dim, hidden, classes] = dims[..] else {
        return Err(TableError::Other("shape header needs three numbers".into()));
    };
    let mut values = Vec::new();
    for (line, toks) in records(text) {
        for (c, t) in toks.iter().enumerate() {
            values.push(t.parse::<f64>().map_err(|_| cell(line, c + 1, format!("'{t}' is not a number")))?);
        }
    }
    ModelParams::from_values(ModelShape::new(dim, hidden, classes), values).map_err(|e| TableError::Other(e.to_string()))
}
