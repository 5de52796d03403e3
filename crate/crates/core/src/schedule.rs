//! Discrete diffusion time grid, the forward noising process and the exact
//! conversions between noise (`eps`) and clean-sample (`x0`) predictions.
//!
//! Time indices are zero-based: `t` ranges over `0..len()`. A one-based step
//! number `k` (as in "start from step 401") corresponds to index `k - 1`.
//! The forward process uses the cumulative product `alpha_bar[t]`:
//!
//! ```text
//! x_t = sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps
//! ```

use crate::config::KvConfig;
use crate::error::{Error, Result};
use crate::field::LatentField;
use std::fmt;
use std::str::FromStr;

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    /// Betas evenly spaced between the endpoints.
    Linear,
    /// Square roots of the betas evenly spaced, then squared.
    ScaledLinear,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled-linear",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "scaled-linear" | "scaled_linear" => Ok(ScheduleKind::ScaledLinear),
            other => Err(Error::InvalidConfig(format!("unknown schedule kind `{other}`"))),
        }
    }
}

/// Immutable noise schedule. The alpha tables are always derived from the
/// beta endpoints and are never stored on disk.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    beta_start: f64,
    beta_end: f64,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleKind::Linear, steps, beta_start, beta_end)
    }

    pub fn scaled_linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        Self::new(ScheduleKind::ScaledLinear, steps, beta_start, beta_end)
    }

    pub fn new(kind: ScheduleKind, steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("number of steps must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start} and {beta_end}"
            )));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => linspace(beta_start, beta_end, steps),
            ScheduleKind::ScaledLinear => linspace(beta_start.sqrt(), beta_end.sqrt(), steps)
                .into_iter()
                .map(|b| b * b)
                .collect(),
        };
        Self::from_betas_inner(kind, beta_start, beta_end, betas)
    }

    /// Builds a schedule from explicit betas (tagged `Linear`; the endpoints
    /// recorded are the first and last beta).
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        let (first, last) = match (betas.first(), betas.last()) {
            (Some(&f), Some(&l)) => (f, l),
            _ => return Err(Error::InvalidSchedule("number of steps must be at least 1".into())),
        };
        Self::from_betas_inner(ScheduleKind::Linear, first, last, betas)
    }

    fn from_betas_inner(kind: ScheduleKind, beta_start: f64, beta_end: f64, betas: Vec<f64>) -> Result<Self> {
        if let Some((t, b)) = betas.iter().enumerate().find(|(_, &b)| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta[{t}] = {b} is outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let sched = Self { kind, beta_start, beta_end, betas, alphas, alpha_bars };
        sched.validate()?;
        Ok(sched)
    }

    /// Checks the ordering invariants of the alpha tables.
    pub fn validate(&self) -> Result<()> {
        for (t, &ab) in self.alpha_bars.iter().enumerate() {
            if !(ab > 0.0 && ab < 1.0) {
                return Err(Error::InvalidSchedule(format!("alpha_bar[{t}] = {ab} is outside (0, 1)")));
            }
            if t > 0 && ab >= self.alpha_bars[t - 1] {
                return Err(Error::InvalidSchedule(format!("alpha_bar is not strictly decreasing at {t}")));
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta_start(&self) -> f64 {
        self.beta_start
    }

    pub fn beta_end(&self) -> f64 {
        self.beta_end
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::TimeOutOfRange { t, len: self.len() });
        }
        Ok(())
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bars[t])
    }

    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alphas[t])
    }

    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.betas[t])
    }

    /// `x_t` from a clean sample and a noise draw.
    pub fn forward_diffuse(&self, x0: &LatentField, t: usize, eps: &LatentField) -> Result<LatentField> {
        forward_diffuse_with(self.alpha_bar(t)?, x0, eps)
    }

    /// Clean-sample estimate implied by a noise prediction.
    pub fn eps_to_x0(&self, x_t: &LatentField, eps_hat: &LatentField, t: usize) -> Result<LatentField> {
        eps_to_x0_with(self.alpha_bar(t)?, x_t, eps_hat)
    }

    /// Noise estimate implied by a clean-sample prediction.
    pub fn x0_to_eps(&self, x_t: &LatentField, x0_hat: &LatentField, t: usize) -> Result<LatentField> {
        x0_to_eps_with(self.alpha_bar(t)?, x_t, x0_hat)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("T", self.len());
        cfg.set("beta_start", self.beta_start);
        cfg.set("beta_end", self.beta_end);
        cfg.set("schedule_kind", self.kind);
        cfg
    }

    /// Reads the schedule keys, falling back to the defaults for any that
    /// are absent.
    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let steps = cfg.get::<usize>("T")?.unwrap_or(DEFAULT_STEPS);
        let start = cfg.get::<f64>("beta_start")?.unwrap_or(DEFAULT_BETA_START);
        let end = cfg.get::<f64>("beta_end")?.unwrap_or(DEFAULT_BETA_END);
        let kind = match cfg.get_str("schedule_kind") {
            Some(s) => s.parse()?,
            None => ScheduleKind::Linear,
        };
        Self::new(kind, steps, start, end)
    }
}

fn linspace(start: f64, end: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![start];
    }
    let step = (end - start) / (n - 1) as f64;
    (0..n)
        .map(|i| if i == n - 1 { end } else { start + step * i as f64 })
        .collect()
}

fn check_alpha_bar(alpha_bar: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&alpha_bar) {
        return Err(Error::arg(format!("alpha_bar {alpha_bar} outside [0, 1]")));
    }
    Ok(())
}

pub fn forward_diffuse_with(alpha_bar: f64, x0: &LatentField, eps: &LatentField) -> Result<LatentField> {
    check_alpha_bar(alpha_bar)?;
    x0.axpby(alpha_bar.sqrt(), eps, (1.0 - alpha_bar).sqrt())
}

pub fn eps_to_x0_with(alpha_bar: f64, x_t: &LatentField, eps_hat: &LatentField) -> Result<LatentField> {
    check_alpha_bar(alpha_bar)?;
    if alpha_bar == 0.0 {
        return Err(Error::arg("eps_to_x0 is undefined at alpha_bar = 0"));
    }
    let s = alpha_bar.sqrt();
    x_t.axpby(1.0 / s, eps_hat, -(1.0 - alpha_bar).sqrt() / s)
}

pub fn x0_to_eps_with(alpha_bar: f64, x_t: &LatentField, x0_hat: &LatentField) -> Result<LatentField> {
    check_alpha_bar(alpha_bar)?;
    if alpha_bar == 1.0 {
        return Err(Error::arg("x0_to_eps is undefined at alpha_bar = 1"));
    }
    let s = (1.0 - alpha_bar).sqrt();
    x_t.axpby(1.0 / s, x0_hat, -alpha_bar.sqrt() / s)
}
