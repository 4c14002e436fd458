//! Run settings as string key/value pairs.
//!
//! Sources apply in order and later ones win: built-in defaults, the
//! `--config` file, `--set key=value` pairs, then dedicated flags such as
//! `--seed`. A config file holds one `key = value` per line; blank lines and
//! lines starting with `#` are ignored.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde_json::{Map, Value};

use crate::failure::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    pub fn resolve(
        defaults: &[(&str, &str)],
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> CliResult<Self> {
        let mut s = Self {
            values: defaults
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        };
        if let Some(path) = file {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            for (key, value) in parse_config(&text, path)? {
                s.set(&key, value, &format!("{}", path.display()))?;
            }
        }
        for (key, value) in overrides {
            s.set(key, value.clone(), "command line")?;
        }
        Ok(s)
    }

    fn set(&mut self, key: &str, value: String, origin: &str) -> CliResult<()> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value;
                Ok(())
            }
            None => {
                let known: Vec<&str> = self.values.keys().map(String::as_str).collect();
                Err(CliError::input(format!(
                    "unknown setting `{key}` from {origin}; known settings: {}",
                    known.join(", ")
                )))
            }
        }
    }

    pub fn raw(&self, key: &str) -> &str {
        self.values
            .get(key)
            .unwrap_or_else(|| panic!("setting `{key}` has no default"))
    }

    pub fn parse<T: FromStr>(&self, key: &str) -> CliResult<T>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| CliError::input(format!("invalid value `{raw}` for `{key}`: {e}")))
    }

    /// `None` when the value is `auto`.
    pub fn parse_auto<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if self.raw(key) == "auto" {
            Ok(None)
        } else {
            self.parse(key).map(Some)
        }
    }

    /// Comma-separated list; empty value gives an empty list.
    pub fn list<T: FromStr>(&self, key: &str) -> CliResult<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        let raw = self.raw(key).trim();
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e| CliError::input(format!("invalid item `{item}` in `{key}`: {e}")))
            })
            .collect()
    }

    pub fn to_json(&self) -> Value {
        let map: Map<String, Value> = self
            .values
            .iter()
            .map(|(k, v)| (k.clone(), Value::String(v.clone())))
            .collect();
        Value::Object(map)
    }
}

fn parse_config(text: &str, path: &Path) -> CliResult<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::input(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                n + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Splits `key=value` from `--set`.
pub fn parse_pair(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got `{s}`"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// Parses `W:H` or `WxH` into two positive integers.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .or_else(|| s.split_once('x'))
        .ok_or_else(|| format!("expected W:H or WxH, got `{s}`"))?;
    let a: usize = a.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    let b: usize = b.trim().parse().map_err(|e| format!("`{s}`: {e}"))?;
    if a == 0 || b == 0 {
        return Err(format!("`{s}`: both sides must be positive"));
    }
    Ok((a, b))
}
