//! `key = value` configuration files merged with command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    /// Reads `path` if given. Blank lines and `#` comments are skipped;
    /// unknown or repeated keys are usage errors.
    pub fn load(path: Option<&Path>, allowed: &[&str]) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Settings::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Settings::parse(&text, allowed).map_err(|e| CliError::usage(format!("{}: {}", path.display(), e.message)))
    }

    pub fn parse(text: &str, allowed: &[&str]) -> CliResult<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::usage(format!("line {}: expected key = value", n + 1)))?;
            let key = k.trim().replace('-', "_");
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::usage(format!("line {}: unknown key '{key}'", n + 1)));
            }
            if values.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::usage(format!("line {}: key '{key}' given twice", n + 1)));
            }
        }
        Ok(Settings { values })
    }

    /// A flag value wins over the file.
    pub fn flag<V: Display>(&mut self, key: &str, value: Option<V>) {
        if let Some(v) = value {
            self.values.insert(key.to_string(), v.to_string());
        }
    }

    pub fn get<V: FromStr>(&self, key: &str) -> CliResult<Option<V>>
    where
        V::Err: Display,
    {
        self.values
            .get(key)
            .map(|s| s.parse().map_err(|e| CliError::usage(format!("invalid {key} '{s}': {e}"))))
            .transpose()
    }

    pub fn or<V: FromStr>(&self, key: &str, default: V) -> CliResult<V>
    where
        V::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn require<V: FromStr>(&self, key: &str) -> CliResult<V>
    where
        V::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| CliError::usage(format!("missing required setting '{key}' (flag --{})", key.replace('_', "-"))))
    }

    /// An input path that must already exist.
    pub fn input(&self, key: &str) -> CliResult<PathBuf> {
        let p: PathBuf = self.require(key)?;
        if !p.is_file() {
            return Err(CliError::usage(format!("{key} file not found: {}", p.display())));
        }
        Ok(p)
    }

    pub fn bool_or(&self, key: &str, default: bool) -> CliResult<bool> {
        match self.values.get(key).map(String::as_str) {
            None => Ok(default),
            Some("true" | "yes" | "1" | "on") => Ok(true),
            Some("false" | "no" | "0" | "off") => Ok(false),
            Some(other) => Err(CliError::usage(format!("invalid {key} '{other}': expected true or false"))),
        }
    }

    /// Comma-separated list of exactly `N` values.
    pub fn array<V: FromStr + Copy + Default, const N: usize>(&self, key: &str) -> CliResult<Option<[V; N]>>
    where
        V::Err: Display,
    {
        let Some(s) = self.values.get(key) else {
            return Ok(None);
        };
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != N {
            return Err(CliError::usage(format!("{key} needs {N} comma-separated values, got {}", parts.len())));
        }
        let mut out = [V::default(); N];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = p.parse().map_err(|e| CliError::usage(format!("invalid {key} entry '{p}': {e}")))?;
        }
        Ok(Some(out))
    }
}
