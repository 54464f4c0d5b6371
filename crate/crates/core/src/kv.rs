//! `key = value` text files used for calibration and rig parameters.
//!
//! Blank lines and lines starting with `#` are ignored. Values are
//! whitespace-separated numbers unless a reader says otherwise.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KvDoc {
    entries: BTreeMap<String, String>,
    order: Vec<String>,
}

impl KvDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = Self::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("line {}: expected `key = value`", no + 1)))?;
            let k = k.trim();
            if doc.entries.contains_key(k) {
                return Err(Error::Format(format!("line {}: duplicate key `{k}`", no + 1)));
            }
            doc.set(k, v.trim());
        }
        Ok(doc)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        if self.entries.insert(key.to_string(), value.into()).is_none() {
            self.order.push(key.to_string());
        }
    }

    pub fn set_nums(&mut self, key: &str, values: &[f64]) {
        let s = values.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ");
        self.set(key, s);
    }

    pub fn get(&self, key: &str) -> Result<&str> {
        self.entries
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing key `{key}`")))
    }

    pub fn nums(&self, key: &str, count: usize) -> Result<Vec<f64>> {
        let vals = self
            .get(key)?
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("`{key}`: `{t}` is not a number"))))
            .collect::<Result<Vec<_>>>()?;
        if vals.len() != count {
            return Err(Error::Format(format!("`{key}` needs {count} values, found {}", vals.len())));
        }
        Ok(vals)
    }

    pub fn num(&self, key: &str) -> Result<f64> {
        Ok(self.nums(key, 1)?[0])
    }

    /// Rejects keys outside `known`.
    pub fn check_keys(&self, known: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !known.contains(&k.as_str()) {
                return Err(Error::Format(format!("unknown key `{k}`")));
            }
        }
        Ok(())
    }

    pub fn render(&self, header: &str) -> String {
        let mut s = String::new();
        for line in header.lines() {
            let _ = writeln!(s, "# {line}");
        }
        for k in &self.order {
            let _ = writeln!(s, "{k} = {}", self.entries[k]);
        }
        s
    }
}
