//! Plain-text `key = value` configuration files.
//!
//! One entry per line, `#` starts a comment, keys are unique. Values are
//! written with Rust's shortest round-trip float formatting so a parsed
//! file reproduces the exact numbers that were written.

use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::fmt::Display;
use std::str::FromStr;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct KvConfig {
    entries: BTreeMap<String, String>,
    order: Vec<String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = KvConfig::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected `key = value`", lineno + 1)))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::InvalidConfig(format!("line {}: empty key", lineno + 1)));
            }
            if cfg.entries.contains_key(key) {
                return Err(Error::InvalidConfig(format!("line {}: duplicate key `{key}`", lineno + 1)));
            }
            cfg.set(key, value.trim());
        }
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        if !self.entries.contains_key(key) {
            self.order.push(key.to_string());
        }
        self.entries.insert(key.to_string(), value.to_string());
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::InvalidConfig(format!("key `{key}`: cannot parse `{v}`"))),
        }
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::InvalidConfig(format!("missing key `{key}`")))
    }

    /// Copies every entry of `other` over this config.
    pub fn merge(&mut self, other: &KvConfig) {
        for k in &other.order {
            self.set(k, &other.entries[k]);
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    /// Serializes in insertion order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in &self.order {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&self.entries[k]);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_whitespace() {
        let cfg = KvConfig::parse("# header\nT = 1000\n  beta_start=0.0001 # trailing\n\n").unwrap();
        assert_eq!(cfg.require::<usize>("T").unwrap(), 1000);
        assert_eq!(cfg.require::<f64>("beta_start").unwrap(), 1e-4);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KvConfig::parse("no equals sign").is_err());
        assert!(KvConfig::parse("a = 1\na = 2").is_err());
        assert!(KvConfig::parse(" = 3").is_err());
    }

    #[test]
    fn floats_roundtrip_exactly() {
        let mut cfg = KvConfig::new();
        let x = 0.1f64 + 0.2;
        cfg.set("x", x);
        let back = KvConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back.require::<f64>("x").unwrap().to_bits(), x.to_bits());
    }
}
