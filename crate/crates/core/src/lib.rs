//! Diffusion machinery used as a low-variance deterministic estimator for
//! surface normals, plus the evaluation stack around it.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`] owns the discrete time grid and the exact conversions
//!   between noise and clean-sample parameterizations.
//! * [`denoisers`] provides the [`Denoiser`](denoisers::Denoiser) trait, the
//!   closed-form Gaussian-mixture oracle and a small trainable network.
//! * [`samplers`] implements DDPM/DDIM stepping and the two-stage sampler
//!   (one-shot initialisation followed by a short deterministic refinement).
//! * [`losses`] holds the denoising objectives, the shrinkage-gated one-shot
//!   objective and analytic gradients.
//! * [`toygen`], [`task`], [`metrics`], [`integrate`] and [`io`] provide
//!   synthetic ground truth, the toy image-to-normal task, angular metrics,
//!   depth-from-normals and the on-disk formats.
//!
//! Data-parallel loops go through [`exec`], which uses rayon when the
//! `parallel` feature is on and runs sequentially otherwise. Results never
//! depend on which path was taken.

pub mod config;
pub mod denoisers;
pub mod error;
pub mod exec;
pub mod field;
pub mod integrate;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod normal;
pub mod rng;
pub mod samplers;
pub mod schedule;
pub mod task;
pub mod toygen;
pub mod train;

pub use error::{Error, Result};
pub use field::LatentField;
pub use normal::NormalMap;
pub use schedule::NoiseSchedule;
