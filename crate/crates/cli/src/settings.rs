//! Layered key/value settings: built-in defaults, then a `--config` file,
//! then flags given on the command line.

use crate::error::{CliError, CliResult};
use dnorm_core::config::KvConfig;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

pub struct Settings {
    cfg: KvConfig,
}

impl Settings {
    /// `base` holds defaults (or values recorded next to a checkpoint);
    /// the file, if any, overrides them.
    pub fn load(base: KvConfig, file: Option<&Path>) -> CliResult<Self> {
        let mut cfg = base;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            cfg.merge(&KvConfig::parse(&text)?);
        }
        Ok(Self { cfg })
    }

    /// A flag only overrides when it was actually given.
    pub fn flag(&mut self, key: &str, value: Option<impl Display>) -> &mut Self {
        if let Some(v) = value {
            self.cfg.set(key, v);
        }
        self
    }

    pub fn switch(&mut self, key: &str, on: bool) -> &mut Self {
        if on {
            self.cfg.set(key, true);
        }
        self
    }

    pub fn get<T: FromStr>(&self, key: &str, default: T) -> CliResult<T> {
        Ok(self.cfg.get(key)?.unwrap_or(default))
    }

    pub fn list(&self, key: &str, default: &[usize]) -> CliResult<Vec<usize>> {
        match self.cfg.get_str(key) {
            None => Ok(default.to_vec()),
            Some(s) => s
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::usage(format!("`{key}` must be a comma-separated list of sizes, got `{s}`"))),
        }
    }

    pub fn config(&self) -> &KvConfig {
        &self.cfg
    }
}
