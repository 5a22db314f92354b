//! Plain `key = value` configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may use `-` or
//! `_` interchangeably.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Keys a configuration file may set.
pub const KNOWN_KEYS: &[&str] = &[
    "seed",
    "runs",
    "particles",
    "steps",
    "sigma",
    "obs_var",
    "x0",
    "y0",
    "dx1",
    "dy1",
    "resample",
    "smoothing",
    "workers",
    "tol",
    "max_iter",
    "relaxation",
    "accepted",
    "window",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigFile {
    values: BTreeMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "line {}: expected key=value, found '{line}'",
                    n + 1
                ))
            })?;
            let key = k.trim().replace('-', "_");
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "line {}: unknown key '{key}'",
                    n + 1
                )));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad value '{v}' for '{key}'")))
            })
            .transpose()
    }

    pub fn flag(&self, key: &str) -> Result<Option<bool>> {
        self.raw(key)
            .map(|v| match v {
                "true" | "1" | "yes" | "on" => Ok(true),
                "false" | "0" | "no" | "off" => Ok(false),
                _ => Err(Error::InvalidConfig(format!("bad flag '{v}' for '{key}'"))),
            })
            .transpose()
    }
}
