//! Flat key-value configuration files and flag merging.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Keys use
//! the long flag names with `-` or `_` interchangeably. Command-line flags
//! override file values; the resolved configuration is echoed into the run
//! metadata so a run can be reproduced from its outputs.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::parse(&body)
    }

    pub fn parse(body: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (lineno, raw) in body.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                bail!("config line {}: expected 'key = value', got '{raw}'", lineno + 1);
            };
            values.insert(normalize_key(key), value.trim().to_string());
        }
        Ok(ConfigFile { values })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(&normalize_key(key)).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

fn normalize_key(key: &str) -> String {
    key.trim().to_ascii_lowercase().replace('-', "_")
}

/// Flag value if present, else config-file value parsed into `T`.
pub fn resolve<T: std::str::FromStr>(
    flag: Option<T>,
    file: &ConfigFile,
    key: &str,
) -> Result<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if flag.is_some() {
        return Ok(flag);
    }
    match file.get(key) {
        Some(raw) => match raw.parse::<T>() {
            Ok(v) => Ok(Some(v)),
            Err(e) => bail!("config key '{key}': cannot parse '{raw}': {e}"),
        },
        None => Ok(None),
    }
}

/// Boolean keys accept true/false/1/0/yes/no.
pub fn resolve_bool(flag: bool, file: &ConfigFile, key: &str) -> Result<bool> {
    if flag {
        return Ok(true);
    }
    match file.get(key) {
        None => Ok(false),
        Some(raw) => match raw.to_ascii_lowercase().as_str() {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            other => bail!("config key '{key}': expected a boolean, got '{other}'"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_normalizes_keys() {
        let cfg = ConfigFile::parse(
            "# run setup\nfamily = bernoulli-arcsin\nout-dir = /tmp/x  # trailing\n\nseed=7\n",
        )
        .unwrap();
        assert_eq!(cfg.get("family"), Some("bernoulli-arcsin"));
        assert_eq!(cfg.get("out_dir"), Some("/tmp/x"));
        assert_eq!(cfg.get("OUT-DIR"), Some("/tmp/x"));
        assert_eq!(cfg.get("seed"), Some("7"));
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(ConfigFile::parse("just words\n").is_err());
    }

    #[test]
    fn flags_override_file() {
        let cfg = ConfigFile::parse("seed = 7\n").unwrap();
        assert_eq!(resolve(Some(9u64), &cfg, "seed").unwrap(), Some(9));
        assert_eq!(resolve(None::<u64>, &cfg, "seed").unwrap(), Some(7));
        assert_eq!(resolve(None::<u64>, &cfg, "missing").unwrap(), None);
    }
}
