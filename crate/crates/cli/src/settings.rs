//! Key-value settings merged from an optional config file and command flags.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::CliError;

/// Values from the config file, overridden by flags.
#[derive(Debug, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// `allowed` lists the keys the command understands; anything else in the
    /// config file is rejected.
    pub fn load(config: Option<&Path>, allowed: &[&str], flags: Vec<(&str, Option<String>)>) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        if let Some(path) = config {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| {
                    CliError::Input(format!("config line {}: expected key = value", lineno + 1))
                })?;
                let key = key.trim().replace('_', "-");
                if !allowed.contains(&key.as_str()) {
                    return Err(CliError::Input(format!(
                        "config line {}: unknown key {key:?} (allowed: {})",
                        lineno + 1,
                        allowed.join(", ")
                    )));
                }
                values.insert(key, value.trim().to_string());
            }
        }
        for (key, value) in flags {
            debug_assert!(allowed.contains(&key), "flag {key} not in allowed list");
            if let Some(v) = value {
                values.insert(key.to_string(), v);
            }
        }
        Ok(Self { values })
    }

    pub fn str(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn required(&self, key: &str) -> Result<&str, CliError> {
        self.str(key).ok_or_else(|| CliError::Input(format!("missing --{key}")))
    }

    pub fn parse<T: std::str::FromStr>(&self, key: &str, default: T) -> Result<T, CliError> {
        match self.str(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Input(format!("--{key}: cannot parse {v:?}"))),
        }
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.str(key).map(PathBuf::from)
    }

    /// Comma-separated τ values; defaults to the standard grid.
    pub fn tau_grid(&self) -> Result<Vec<f64>, CliError> {
        match self.str("tau") {
            None => Ok(dpdwald::tables::TAU_GRID.to_vec()),
            Some(list) => {
                let taus = parse_list(list, "tau")?;
                if taus.is_empty() || taus.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                    return Err(CliError::Input(format!("--tau: values must be >= 0, got {list:?}")));
                }
                Ok(taus)
            }
        }
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        let alpha = self.parse("alpha", dpdwald::wald::DEFAULT_ALPHA)?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(CliError::Input(format!("--alpha must lie in (0, 1), got {alpha}")));
        }
        Ok(alpha)
    }
}

pub fn parse_list(list: &str, what: &str) -> Result<Vec<f64>, CliError> {
    list.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Input(format!("{what}: cannot parse {s:?}")))
        })
        .collect()
}
