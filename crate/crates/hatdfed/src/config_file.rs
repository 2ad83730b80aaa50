//! TOML config files whose keys are exactly the `SimConfig` field names.

use std::fs;
use std::path::Path;

use hatdfed_core::SimConfig;

/// Environment variable that overrides the `seed` key.
pub const SEED_ENV: &str = "HATDFED_SEED";

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("{origin}: cannot read config: {source}")]
    Io {
        origin: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{origin}: invalid configuration:\n{}", .violations.join("\n"))]
    Invalid { origin: String, violations: Vec<String> },
    #[error("{SEED_ENV}={0:?} is not an unsigned integer")]
    BadSeedEnv(String),
    #[error("cannot serialize config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rfind('\n').map_or(before.len(), |nl| before.len() - nl - 1) + 1;
    (line, column)
}

/// Line of the first `key = ...` assignment, if any.
pub fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

/// Parses without validating. `origin` names the source in diagnostics.
pub fn parse_config(text: &str, origin: &str) -> Result<SimConfig, ConfigFileError> {
    toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((1, 1), |s| line_col(text, s.start));
        ConfigFileError::Parse {
            origin: origin.to_string(),
            line,
            column,
            message: e.message().trim_end().to_string(),
        }
    })
}

/// Validation violations, each prefixed with the line of the key it names
/// when that key appears in `text`.
pub fn located_violations(cfg: &SimConfig, text: &str, origin: &str) -> Vec<String> {
    const KEYS: &[&str] = &[
        "n_servers",
        "devices_per_server",
        "n_rounds",
        "alpha",
        "beta",
        "eta",
        "gamma",
        "rho",
        "lambda_dir",
        "n_tr",
        "sample_bits",
        "model_bits",
        "ee_device",
        "ee_link_range",
        "tau_choices",
        "batch_sample_size",
        "n_classes",
        "feature_dim",
        "class_separation",
        "samples_per_server",
        "round_pool_size",
        "n_subsets",
        "test_per_class",
        "learning_rate",
        "local_epochs",
        "local_batch",
        "rnd_link_fraction",
    ];
    cfg.violations()
        .into_iter()
        .map(|v| {
            let line = v
                .split(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
                .find(|w| KEYS.contains(w))
                .and_then(|k| key_line(text, k));
            match line {
                Some(l) => format!("{origin}:{l}: {v}"),
                None => format!("{origin}: {v}"),
            }
        })
        .collect()
}

/// Canonical text form; `parse_config(to_canonical(c)) == c`.
pub fn to_canonical(cfg: &SimConfig) -> Result<String, ConfigFileError> {
    Ok(toml::to_string(cfg)?)
}

/// Replaces the seed with `env_value` when it is set.
pub fn apply_seed_env(cfg: &mut SimConfig, env_value: Option<String>) -> Result<(), ConfigFileError> {
    if let Some(v) = env_value {
        cfg.seed = v.trim().parse().map_err(|_| ConfigFileError::BadSeedEnv(v.clone()))?;
    }
    Ok(())
}

/// Parses and validates `text`, applying the seed override from the
/// environment.
pub fn load_config_str(text: &str, origin: &str) -> Result<SimConfig, ConfigFileError> {
    let mut cfg = parse_config(text, origin)?;
    apply_seed_env(&mut cfg, std::env::var(SEED_ENV).ok())?;
    let violations = located_violations(&cfg, text, origin);
    if violations.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigFileError::Invalid {
            origin: origin.to_string(),
            violations,
        })
    }
}

pub fn load_config(path: &Path) -> Result<SimConfig, ConfigFileError> {
    let origin = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
        origin: origin.clone(),
        source,
    })?;
    load_config_str(&text, &origin)
}
