//! Denoiser abstraction and concrete denoisers.
//!
//! A denoiser maps `(x, t, condition)` to a prediction whose meaning is fixed
//! by its [`Parameterization`]: the injected noise, the clean sample, or
//! (for the one-shot initialiser) the noisy latent at a fixed time `t_plus`.

mod mlp;
mod oracle;

pub use mlp::{Activation, Mlp, MlpSpec, PixelExample, TensorShape};
pub use oracle::{AsEps, ConditionalGaussianOracle, GaussianMixture, GaussianMixtureOracle, ShrunkOneShotOracle};

use crate::error::{Error, Result};
use crate::field::LatentField;
use crate::schedule::NoiseSchedule;
use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Parameterization {
    /// Predicts the injected noise.
    Eps,
    /// Predicts the clean sample.
    X0,
    /// Predicts the latent at time index `t_plus` from a (pure noise or
    /// zero) input in a single evaluation.
    XtPlus { t_plus: usize },
}

impl fmt::Display for Parameterization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Parameterization::Eps => f.write_str("eps"),
            Parameterization::X0 => f.write_str("x0"),
            Parameterization::XtPlus { t_plus } => write!(f, "x_t_plus(t_plus={t_plus})"),
        }
    }
}

/// Conditioning inputs: image features (stand-in for the encoded photograph)
/// and optional semantic features injected additively into the latent.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionBundle {
    image_features: Option<LatentField>,
    semantic_features: Option<LatentField>,
    injection_scale: f64,
}

impl Default for ConditionBundle {
    fn default() -> Self {
        Self::unconditional()
    }
}

impl ConditionBundle {
    pub fn unconditional() -> Self {
        Self { image_features: None, semantic_features: None, injection_scale: 1.0 }
    }

    pub fn new(image_features: LatentField, semantic_features: Option<LatentField>, injection_scale: f64) -> Result<Self> {
        if let Some(sem) = &semantic_features {
            if (sem.height(), sem.width()) != (image_features.height(), image_features.width()) {
                return Err(Error::ShapeMismatch {
                    expected: (image_features.height(), image_features.width(), sem.channels()),
                    actual: sem.shape(),
                });
            }
        }
        if !injection_scale.is_finite() {
            return Err(Error::NonFinite("injection scale".into()));
        }
        Ok(Self { image_features: Some(image_features), semantic_features, injection_scale })
    }

    pub fn image(image_features: LatentField) -> Self {
        Self { image_features: Some(image_features), semantic_features: None, injection_scale: 1.0 }
    }

    pub fn image_features(&self) -> Option<&LatentField> {
        self.image_features.as_ref()
    }

    pub fn semantic_features(&self) -> Option<&LatentField> {
        self.semantic_features.as_ref()
    }

    pub fn injection_scale(&self) -> f64 {
        self.injection_scale
    }

    /// Same bundle with the semantic features dropped.
    pub fn without_semantics(&self) -> Self {
        Self { semantic_features: None, ..self.clone() }
    }
}

pub trait Denoiser: Send + Sync {
    fn kind(&self) -> Parameterization;

    /// Channel count of the latent this denoiser operates on, when fixed.
    fn latent_channels(&self) -> Option<usize> {
        None
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn kind(&self) -> Parameterization {
        (**self).kind()
    }

    fn latent_channels(&self) -> Option<usize> {
        (**self).latent_channels()
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        (**self).predict(x, t, cond)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn kind(&self) -> Parameterization {
        (**self).kind()
    }

    fn latent_channels(&self) -> Option<usize> {
        (**self).latent_channels()
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        (**self).predict(x, t, cond)
    }
}

/// Evaluates the denoiser once and returns both `(eps_hat, x0_hat)`.
pub fn predict_eps_and_x0(
    denoiser: &dyn Denoiser,
    x_t: &LatentField,
    t: usize,
    cond: &ConditionBundle,
    sched: &NoiseSchedule,
) -> Result<(LatentField, LatentField)> {
    let out = denoiser.predict(x_t, t, cond)?;
    x_t.same_shape(&out)?;
    match denoiser.kind() {
        Parameterization::Eps => {
            let x0 = sched.eps_to_x0(x_t, &out, t)?;
            Ok((out, x0))
        }
        Parameterization::X0 => {
            let eps = sched.x0_to_eps(x_t, &out, t)?;
            Ok((eps, out))
        }
        k @ Parameterization::XtPlus { .. } => Err(Error::Parameterization(format!(
            "a {k} denoiser cannot be converted to eps/x0 predictions"
        ))),
    }
}

/// Noise prediction, converting from `x0` form when needed.
pub fn predict_eps(
    denoiser: &dyn Denoiser,
    x_t: &LatentField,
    t: usize,
    cond: &ConditionBundle,
    sched: &NoiseSchedule,
) -> Result<LatentField> {
    Ok(predict_eps_and_x0(denoiser, x_t, t, cond, sched)?.0)
}
