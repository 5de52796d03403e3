//! Denoising objectives, the shrinkage-gated one-shot objective and the
//! analytic gradient of the batch loss of the toy network.
//!
//! All losses are mean squared errors averaged over elements.

use crate::config::KvConfig;
use crate::denoisers::{ConditionBundle, Denoiser, Mlp, Parameterization, PixelExample};
use crate::error::{Error, Result};
use crate::field::LatentField;
use crate::schedule::NoiseSchedule;
use rand::Rng;
use std::fmt;

pub const DEFAULT_LAMBDA: f64 = 0.4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetKind {
    Eps,
    X0,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    /// Noise input; the ordinary one-shot objective.
    Generative,
    /// Zero input; pulls the predictions toward a single point.
    Shrunk,
    NotApplicable,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Generative => "generative",
            Branch::Shrunk => "shrunk",
            Branch::NotApplicable => "n/a",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossSample {
    pub value: f64,
    pub branch: Branch,
    /// `prediction - target`, elementwise.
    pub residuals: Option<LatentField>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ShrinkageConfig {
    /// Probability of the shrunk (zero-input) branch.
    pub lambda: f64,
    pub rng_seed: u64,
}

impl Default for ShrinkageConfig {
    fn default() -> Self {
        Self { lambda: DEFAULT_LAMBDA, rng_seed: 0 }
    }
}

impl ShrinkageConfig {
    pub fn new(lambda: f64, rng_seed: u64) -> Result<Self> {
        let cfg = Self { lambda, rng_seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("lambda", self.lambda);
        cfg.set("rng_seed", self.rng_seed);
        cfg
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let d = Self::default();
        Self::new(cfg.get("lambda")?.unwrap_or(d.lambda), cfg.get("rng_seed")?.unwrap_or(d.rng_seed))
    }
}

/// Whether the noise inside the one-shot target shares its draw with the
/// noise input.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum NoiseSharing {
    #[default]
    Independent,
    Shared,
}

fn mse_sample(prediction: &LatentField, target: &LatentField, branch: Branch) -> Result<LossSample> {
    let residuals = prediction.axpby(1.0, target, -1.0)?;
    let value = residuals.values().iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64;
    Ok(LossSample { value, branch, residuals: Some(residuals) })
}

/// Noise-prediction or clean-sample objective at time `t`, with
/// `x_t = forward_diffuse(x0, t, eps)`.
#[allow(clippy::too_many_arguments)]
pub fn denoising_loss(
    denoiser: &dyn Denoiser,
    target_kind: TargetKind,
    x0: &LatentField,
    t: usize,
    eps: &LatentField,
    cond: &ConditionBundle,
    sched: &NoiseSchedule,
) -> Result<LossSample> {
    match (target_kind, denoiser.kind()) {
        (TargetKind::Eps, Parameterization::Eps) | (TargetKind::X0, Parameterization::X0) => {}
        (k, d) => {
            return Err(Error::Parameterization(format!("{k:?} target with a {d} denoiser")));
        }
    }
    let x_t = sched.forward_diffuse(x0, t, eps)?;
    let prediction = denoiser.predict(&x_t, t, cond)?;
    let target = match target_kind {
        TargetKind::Eps => eps,
        TargetKind::X0 => x0,
    };
    mse_sample(&prediction, target, Branch::NotApplicable)
}

/// Draws the gate `p ~ U(0, 1)`: shrunk when `p < lambda`.
pub fn shrinkage_gate(lambda: f64, rng: &mut impl Rng) -> Branch {
    let p: f64 = rng.random();
    if p >= lambda {
        Branch::Generative
    } else {
        Branch::Shrunk
    }
}

/// Shrinkage-gated one-shot objective. The target is
/// `forward_diffuse(x0, t_plus, eps')`; the input is a fresh normal draw on
/// the generative branch and the zero latent on the shrunk branch.
#[allow(clippy::too_many_arguments)]
pub fn yoso_shrinkage_loss(
    yoso: &dyn Denoiser,
    x0: &LatentField,
    t_plus: usize,
    cond: &ConditionBundle,
    cfg: &ShrinkageConfig,
    sched: &NoiseSchedule,
    sharing: NoiseSharing,
    rng: &mut impl Rng,
) -> Result<LossSample> {
    cfg.validate()?;
    sched.check_t(t_plus)?;
    match yoso.kind() {
        Parameterization::XtPlus { t_plus: trained } if trained == t_plus => {}
        other => {
            return Err(Error::Parameterization(format!("expected an x_t_plus denoiser for {t_plus}, got {other}")));
        }
    }
    let (h, w, c) = x0.shape();
    let branch = shrinkage_gate(cfg.lambda, rng);
    let target_noise = LatentField::standard_normal(h, w, c, rng);
    let target = sched.forward_diffuse(x0, t_plus, &target_noise)?;
    let input = match (branch, sharing) {
        (Branch::Shrunk, _) => LatentField::zeros(h, w, c),
        (_, NoiseSharing::Shared) => target_noise,
        (_, NoiseSharing::Independent) => LatentField::standard_normal(h, w, c, rng),
    };
    let prediction = yoso.predict(&input, t_plus, cond)?;
    mse_sample(&prediction, &target, branch)
}

/// Mean batch loss and its gradient, laid out like [`Mlp::params`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientBundle {
    pub loss: f64,
    pub grad: Vec<f64>,
}

pub fn loss_gradient(net: &Mlp, batch: &[PixelExample]) -> Result<GradientBundle> {
    let (loss, grad) = net.loss_and_gradient(batch)?;
    Ok(GradientBundle { loss, grad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoisers::{AsEps, GaussianMixture, GaussianMixtureOracle};
    use crate::rng;

    struct Fixed(Parameterization, LatentField);

    impl Denoiser for Fixed {
        fn kind(&self) -> Parameterization {
            self.0
        }

        fn predict(&self, _x: &LatentField, _t: usize, _c: &ConditionBundle) -> Result<LatentField> {
            Ok(self.1.clone())
        }
    }

    #[test]
    fn exact_and_offset_predictions() {
        let sched = NoiseSchedule::default();
        let mut r = rng::seeded(1);
        let x0 = LatentField::standard_normal(3, 3, 2, &mut r);
        let eps = LatentField::standard_normal(3, 3, 2, &mut r);
        let cond = ConditionBundle::default();
        let exact = Fixed(Parameterization::X0, x0.clone());
        assert_eq!(denoising_loss(&exact, TargetKind::X0, &x0, 100, &eps, &cond, &sched).unwrap().value, 0.0);
        let off = Fixed(Parameterization::Eps, eps.map(|v| v + 1.0).unwrap());
        let l = denoising_loss(&off, TargetKind::Eps, &x0, 100, &eps, &cond, &sched).unwrap().value;
        assert!((l - 1.0).abs() < 1e-12);
        assert!(denoising_loss(&off, TargetKind::X0, &x0, 100, &eps, &cond, &sched).is_err());
    }

    #[test]
    fn eps_and_x0_losses_differ_by_snr() {
        let sched = NoiseSchedule::default();
        let oracle = GaussianMixtureOracle::new(GaussianMixture::symmetric_pair(1.5, 0.4).unwrap(), sched.clone());
        let as_eps = AsEps::new(oracle.clone(), sched.clone()).unwrap();
        let cond = ConditionBundle::default();
        let mut r = rng::seeded(2);
        for t in [5, 100, 400, 900] {
            let x0 = LatentField::standard_normal(4, 4, 1, &mut r);
            let eps = LatentField::standard_normal(4, 4, 1, &mut r);
            let lx = denoising_loss(&oracle, TargetKind::X0, &x0, t, &eps, &cond, &sched).unwrap().value;
            let le = denoising_loss(&as_eps, TargetKind::Eps, &x0, t, &eps, &cond, &sched).unwrap().value;
            let ab = sched.alpha_bars()[t];
            assert!((le - ab / (1.0 - ab) * lx).abs() <= 1e-9 * le.max(1e-12), "t={t}: {le} vs {lx}");
        }
    }

    #[test]
    fn gate_extremes() {
        let mut r = rng::seeded(3);
        for _ in 0..1000 {
            assert_eq!(shrinkage_gate(0.0, &mut r), Branch::Generative);
            assert_eq!(shrinkage_gate(1.0, &mut r), Branch::Shrunk);
        }
    }

    #[test]
    fn shrinkage_config_bounds() {
        assert!(ShrinkageConfig::new(1.2, 0).is_err());
        assert!(ShrinkageConfig::new(-0.1, 0).is_err());
        let cfg = ShrinkageConfig::new(0.4, 9).unwrap();
        let back = ShrinkageConfig::from_config(&KvConfig::parse(&cfg.to_config().to_text()).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    struct EchoOneShot(usize);

    impl Denoiser for EchoOneShot {
        fn kind(&self) -> Parameterization {
            Parameterization::XtPlus { t_plus: self.0 }
        }

        fn predict(&self, x: &LatentField, _t: usize, _c: &ConditionBundle) -> Result<LatentField> {
            Ok(x.clone())
        }
    }

    #[test]
    fn shrunk_branch_feeds_zero_input() {
        let sched = NoiseSchedule::default();
        let x0 = LatentField::filled(2, 2, 1, 0.5);
        let cond = ConditionBundle::default();
        let mut r = rng::seeded(4);
        let cfg = ShrinkageConfig::new(1.0, 0).unwrap();
        let s = yoso_shrinkage_loss(&EchoOneShot(400), &x0, 400, &cond, &cfg, &sched, NoiseSharing::Independent, &mut r).unwrap();
        assert_eq!(s.branch, Branch::Shrunk);
        // prediction is the zero input, so the residual is minus the target
        let res = s.residuals.unwrap();
        assert!(res.values().iter().all(|v| v.is_finite()));
        let err = yoso_shrinkage_loss(&EchoOneShot(300), &x0, 400, &cond, &cfg, &sched, NoiseSharing::Independent, &mut r);
        assert!(err.is_err());
        assert!(yoso_shrinkage_loss(&EchoOneShot(400), &x0, 1000, &cond, &cfg, &sched, NoiseSharing::Independent, &mut r).is_err());
    }

    #[test]
    fn shared_noise_makes_target_learnable() {
        // With shared noise and lambda = 0, echoing the input scaled by
        // sqrt(1 - ab) and shifted by sqrt(ab) x0 reproduces the target.
        let sched = NoiseSchedule::default();
        let ab = sched.alpha_bars()[400];
        struct Affine(f64, f64);
        impl Denoiser for Affine {
            fn kind(&self) -> Parameterization {
                Parameterization::XtPlus { t_plus: 400 }
            }
            fn predict(&self, x: &LatentField, _t: usize, _c: &ConditionBundle) -> Result<LatentField> {
                x.map(|v| self.0 * v + self.1)
            }
        }
        let x0 = LatentField::filled(2, 2, 1, 0.5);
        let den = Affine((1.0 - ab).sqrt(), ab.sqrt() * 0.5);
        let mut r = rng::seeded(5);
        let cfg = ShrinkageConfig::new(0.0, 0).unwrap();
        let s = yoso_shrinkage_loss(&den, &x0, 400, &ConditionBundle::default(), &cfg, &sched, NoiseSharing::Shared, &mut r).unwrap();
        assert!(s.value < 1e-20);
    }
}
