//! Resolved key/value settings, the flat config file format, and run manifests.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::CliError;

type R<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, Default)]
pub struct Settings {
    map: BTreeMap<String, String>,
}

impl Settings {
    pub fn map(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    pub fn overlay(&mut self, other: BTreeMap<String, String>) {
        self.map.extend(other);
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    pub fn get<T>(&self, key: &str) -> R<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .trim()
                .parse()
                .map(Some)
                .map_err(|e| CliError::Usage(format!("invalid value '{v}' for '{key}': {e}"))),
        }
    }

    pub fn req<T>(&self, key: &str) -> R<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get(key)?.ok_or_else(|| CliError::Usage(format!("missing required setting '--{key}'")))
    }

    /// Value of `key`, recording `default` in the resolved map when absent.
    pub fn or<T>(&mut self, key: &str, default: T) -> R<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        match self.get(key)? {
            Some(v) => Ok(v),
            None => {
                self.set(key, default.to_string());
                Ok(default)
            }
        }
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str) -> R<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => v
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| {
                    t.trim()
                        .parse()
                        .map_err(|e| CliError::Usage(format!("invalid list entry '{t}' for '{key}': {e}")))
                })
                .collect::<R<Vec<T>>>()
                .map(Some),
        }
    }

    pub fn list_or<T>(&mut self, key: &str, default: &str) -> R<Vec<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if !self.has(key) {
            self.set(key, default);
        }
        Ok(self.list(key)?.unwrap_or_default())
    }
}

/// Parses the flat config format: `[section]` headers and `key = value`
/// lines, with `#` comments. Keys before any header or under `[global]`
/// apply to every subcommand; a subcommand's own section overrides them.
pub fn parse_config(text: &str, section: &str) -> R<BTreeMap<String, String>> {
    let mut global = BTreeMap::new();
    let mut own = BTreeMap::new();
    let mut current: Option<String> = None;
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected 'key = value'", no + 1)))?;
        let (k, v) = (k.trim().to_string(), v.trim().trim_matches('"').to_string());
        if k.is_empty() {
            return Err(CliError::Usage(format!("config line {}: empty key", no + 1)));
        }
        match current.as_deref() {
            None | Some("global") => {
                global.insert(k, v);
            }
            Some(s) if s == section => {
                own.insert(k, v);
            }
            Some(_) => {}
        }
    }
    global.extend(own);
    Ok(global)
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seeds: BTreeMap<String, u64>,
    pub threads: Option<usize>,
    pub settings: BTreeMap<String, String>,
    pub outputs: Vec<PathBuf>,
}

impl Manifest {
    pub fn load(path: &Path) -> R<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", path.display())))
    }
}
