//! Closed-form denoisers for data distributions where the posterior mean
//! `E[x0 | x_t]` is available analytically.

use super::{ConditionBundle, Denoiser, Parameterization};
use crate::error::{Error, Result};
use crate::exec;
use crate::field::LatentField;
use crate::schedule::NoiseSchedule;

/// One-dimensional Gaussian mixture, applied independently per element.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() || weights.len() != stds.len() {
            return Err(Error::arg("mixture needs equally many (>0) weights, means and stds"));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::arg("mixture weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg(format!("mixture weights sum to {total}, not 1")));
        }
        if stds.iter().any(|s| !(*s > 0.0 && s.is_finite())) || means.iter().any(|m| !m.is_finite()) {
            return Err(Error::arg("mixture stds must be positive and means finite"));
        }
        Ok(Self { weights, means, stds })
    }

    pub fn single(mean: f64, std: f64) -> Result<Self> {
        Self::new(vec![1.0], vec![mean], vec![std])
    }

    /// `0.5 N(-a, s^2) + 0.5 N(a, s^2)`.
    pub fn symmetric_pair(a: f64, std: f64) -> Result<Self> {
        Self::new(vec![0.5, 0.5], vec![-a, a], vec![std, std])
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn stds(&self) -> &[f64] {
        &self.stds
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Exact posterior mean `E[x0 | x_t = x]` under the forward kernel
    /// `N(sqrt(ab) x0, 1 - ab)`.
    pub fn posterior_mean(&self, x: f64, alpha_bar: f64) -> f64 {
        let sa = alpha_bar.sqrt();
        let noise_var = 1.0 - alpha_bar;
        let log_evidence = |k: usize| {
            let var = alpha_bar * self.stds[k] * self.stds[k] + noise_var;
            let d = x - sa * self.means[k];
            self.weights[k].ln() - 0.5 * var.ln() - 0.5 * d * d / var
        };
        let max = (0..self.components()).map(log_evidence).fold(f64::NEG_INFINITY, f64::max);
        let mut norm = 0.0;
        let mut acc = 0.0;
        for k in 0..self.components() {
            let s2 = self.stds[k] * self.stds[k];
            let var = alpha_bar * s2 + noise_var;
            let component_mean = (sa * s2 * x + noise_var * self.means[k]) / var;
            let r = (log_evidence(k) - max).exp();
            norm += r;
            acc += r * component_mean;
        }
        assert!(norm > 0.0, "mixture evidence vanished");
        acc / norm
    }
}

/// `x0`-parameterized oracle for mixture-distributed data.
#[derive(Clone, Debug)]
pub struct GaussianMixtureOracle {
    gm: GaussianMixture,
    sched: NoiseSchedule,
}

const ORACLE_CHUNK: usize = 4096;

impl GaussianMixtureOracle {
    pub fn new(gm: GaussianMixture, sched: NoiseSchedule) -> Self {
        Self { gm, sched }
    }

    pub fn mixture(&self) -> &GaussianMixture {
        &self.gm
    }
}

impl Denoiser for GaussianMixtureOracle {
    fn kind(&self) -> Parameterization {
        Parameterization::X0
    }

    fn predict(&self, x: &LatentField, t: usize, _cond: &ConditionBundle) -> Result<LatentField> {
        let ab = self.sched.alpha_bar(t)?;
        let values = x.values();
        let chunks = values.len().div_ceil(ORACLE_CHUNK);
        let parts = exec::map_range(chunks, |c| {
            let end = ((c + 1) * ORACLE_CHUNK).min(values.len());
            values[c * ORACLE_CHUNK..end].iter().map(|&v| self.gm.posterior_mean(v, ab)).collect::<Vec<_>>()
        });
        LatentField::new(x.height(), x.width(), x.channels(), parts.concat())
    }
}

/// Wraps an `x0` denoiser so it reports noise predictions instead.
#[derive(Clone, Debug)]
pub struct AsEps<D> {
    inner: D,
    sched: NoiseSchedule,
}

impl<D: Denoiser> AsEps<D> {
    pub fn new(inner: D, sched: NoiseSchedule) -> Result<Self> {
        if inner.kind() != Parameterization::X0 {
            return Err(Error::Parameterization(format!("AsEps expects an x0 denoiser, got {}", inner.kind())));
        }
        Ok(Self { inner, sched })
    }
}

impl<D: Denoiser> Denoiser for AsEps<D> {
    fn kind(&self) -> Parameterization {
        Parameterization::Eps
    }

    fn latent_channels(&self) -> Option<usize> {
        self.inner.latent_channels()
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        let x0 = self.inner.predict(x, t, cond)?;
        self.sched.x0_to_eps(x, &x0, t)
    }
}

/// Oracle for data `x0 ~ N(mu, std^2)` per element, where `mu` is read from
/// the condition's image features (same shape as the latent).
#[derive(Clone, Debug)]
pub struct ConditionalGaussianOracle {
    std: f64,
    sched: NoiseSchedule,
}

impl ConditionalGaussianOracle {
    pub fn new(std: f64, sched: NoiseSchedule) -> Result<Self> {
        if !(std > 0.0 && std.is_finite()) {
            return Err(Error::arg("oracle std must be positive"));
        }
        Ok(Self { std, sched })
    }
}

fn condition_means<'a>(x: &LatentField, cond: &'a ConditionBundle) -> Result<&'a LatentField> {
    let mu = cond
        .image_features()
        .ok_or_else(|| Error::arg("conditional oracle needs image features holding the means"))?;
    x.same_shape(mu)?;
    Ok(mu)
}

impl Denoiser for ConditionalGaussianOracle {
    fn kind(&self) -> Parameterization {
        Parameterization::X0
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        let ab = self.sched.alpha_bar(t)?;
        let mu = condition_means(x, cond)?;
        let s2 = self.std * self.std;
        let sa = ab.sqrt();
        let var = ab * s2 + 1.0 - ab;
        x.axpby(sa * s2 / var, mu, (1.0 - ab) / var)
    }
}

/// One-shot initialiser that outputs `E[x_{t_plus}] = sqrt(ab) * mu`,
/// ignoring its noise input entirely (the fully shrunk optimum).
#[derive(Clone, Debug)]
pub struct ShrunkOneShotOracle {
    t_plus: usize,
    sched: NoiseSchedule,
}

impl ShrunkOneShotOracle {
    pub fn new(t_plus: usize, sched: NoiseSchedule) -> Result<Self> {
        sched.check_t(t_plus)?;
        Ok(Self { t_plus, sched })
    }
}

impl Denoiser for ShrunkOneShotOracle {
    fn kind(&self) -> Parameterization {
        Parameterization::XtPlus { t_plus: self.t_plus }
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        if t != self.t_plus {
            return Err(Error::Parameterization(format!("one-shot oracle trained for t_plus={}, asked for {t}", self.t_plus)));
        }
        let mu = condition_means(x, cond)?;
        mu.scale(self.sched.alpha_bar(t)?.sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_component_conjugate_form() {
        let gm = GaussianMixture::single(0.0, 1.0).unwrap();
        let v = gm.posterior_mean(1.0, 0.5);
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12, "{v}");
    }

    #[test]
    fn symmetric_mixture_at_origin() {
        let gm = GaussianMixture::symmetric_pair(2.0, 0.3).unwrap();
        for ab in [0.01, 0.3, 0.9] {
            assert!(gm.posterior_mean(0.0, ab).abs() < 1e-15);
        }
    }

    #[test]
    fn invalid_mixtures_rejected() {
        assert!(GaussianMixture::new(vec![0.5, 0.6], vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(GaussianMixture::new(vec![1.0], vec![0.0], vec![0.0]).is_err());
        assert!(GaussianMixture::new(vec![], vec![], vec![]).is_err());
    }

    #[test]
    fn conditional_oracle_matches_single_mixture() {
        let sched = NoiseSchedule::default();
        let oracle = ConditionalGaussianOracle::new(0.3, sched.clone()).unwrap();
        let mu = LatentField::new(1, 2, 1, vec![0.4, -1.0]).unwrap();
        let x = LatentField::new(1, 2, 1, vec![0.1, 0.7]).unwrap();
        let cond = ConditionBundle::image(mu.clone());
        let out = oracle.predict(&x, 250, &cond).unwrap();
        for i in 0..2 {
            let gm = GaussianMixture::single(mu.values()[i], 0.3).unwrap();
            let want = gm.posterior_mean(x.values()[i], sched.alpha_bars()[250]);
            assert!((out.values()[i] - want).abs() < 1e-12);
        }
    }
}
