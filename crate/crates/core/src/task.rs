//! The toy image-to-normal task and the many-to-one one-shot task.
//!
//! Both networks work per pixel. The conditioning image feature of a pixel
//! is the 3x3 neighbourhood of the shading raster (edge-clamped, row-major)
//! and the semantic feature is the same neighbourhood of the bump-membership
//! score. The one-shot estimator sees only the image; the refiner also gets
//! the semantic features through its injection branch.

use crate::denoisers::{Activation, ConditionBundle, Denoiser, Mlp, MlpSpec, Parameterization, PixelExample};
use crate::error::{Error, Result};
use crate::field::LatentField;
use crate::losses::{shrinkage_gate, Branch, NoiseSharing};
use crate::normal::NormalMap;
use crate::rng::{self, standard_normal, SeededRng};
use crate::samplers::{heuristic_sample, SamplerConfig, Trajectory};
use crate::schedule::NoiseSchedule;
use crate::toygen::{make_scene, HeightFieldParams, SceneSample};
use crate::train::ExampleSource;
use rand::Rng;

pub const PATCH_CHANNELS: usize = 9;
pub const DEFAULT_INJECTION_SCALE: f64 = 1.0;

/// 3x3 edge-clamped neighbourhood of every pixel of a one-channel field.
pub fn patch_features(field: &LatentField) -> Result<LatentField> {
    if field.channels() != 1 {
        return Err(Error::arg(format!("patch features need one channel, got {}", field.channels())));
    }
    let (h, w) = (field.height(), field.width());
    let mut values = Vec::with_capacity(h * w * PATCH_CHANNELS);
    for row in 0..h {
        for col in 0..w {
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let r = (row as i64 + dr).clamp(0, h as i64 - 1) as usize;
                    let c = (col as i64 + dc).clamp(0, w as i64 - 1) as usize;
                    values.push(field.pixel(r, c)[0]);
                }
            }
        }
    }
    LatentField::new(h, w, PATCH_CHANNELS, values)
}

/// Shading and semantic patches for one scene.
pub fn scene_condition(scene: &SceneSample, injection_scale: f64) -> Result<ConditionBundle> {
    raster_condition(&scene.shading, &scene.semantic, injection_scale)
}

pub fn raster_condition(shading: &LatentField, semantic: &LatentField, injection_scale: f64) -> Result<ConditionBundle> {
    ConditionBundle::new(patch_features(shading)?, Some(patch_features(semantic)?), injection_scale)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyTask {
    pub height: usize,
    pub width: usize,
    pub n_bumps: usize,
    pub bumps: HeightFieldParams,
    pub hidden: Vec<usize>,
    pub injection_hidden: usize,
    pub injection_scale: f64,
}

impl Default for ToyTask {
    fn default() -> Self {
        Self {
            height: 16,
            width: 16,
            n_bumps: 6,
            bumps: HeightFieldParams::default(),
            hidden: vec![48, 48],
            injection_hidden: 16,
            injection_scale: DEFAULT_INJECTION_SCALE,
        }
    }
}

impl ToyTask {
    pub fn scene(&self, seed: u64) -> Result<SceneSample> {
        make_scene(seed, self.n_bumps, self.height, self.width, &self.bumps)
    }

    pub fn scenes(&self, seed: u64, count: usize) -> Result<Vec<SceneSample>> {
        (0..count).map(|i| self.scene(rng::derive_seed(seed, i as u64))).collect()
    }

    pub fn yoso_spec(&self, t_plus_index: usize) -> MlpSpec {
        MlpSpec {
            kind: Parameterization::XtPlus { t_plus: t_plus_index },
            latent_channels: 3,
            image_channels: PATCH_CHANNELS,
            semantic_channels: 0,
            injection_hidden: 0,
            hidden: self.hidden.clone(),
            activation: Activation::Tanh,
            time_steps: 0,
        }
    }

    pub fn refiner_spec(&self, time_steps: usize) -> MlpSpec {
        MlpSpec {
            kind: Parameterization::X0,
            latent_channels: 3,
            image_channels: PATCH_CHANNELS,
            semantic_channels: PATCH_CHANNELS,
            injection_hidden: self.injection_hidden,
            hidden: self.hidden.clone(),
            activation: Activation::Tanh,
            time_steps,
        }
    }
}

/// One training pixel: image patch, semantic patch and ground-truth normal.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelledPixel {
    pub image: Vec<f64>,
    pub semantic: Vec<f64>,
    pub normal: [f64; 3],
}

pub fn scene_pixels(scene: &SceneSample) -> Result<Vec<LabelledPixel>> {
    raster_pixels(&scene.shading, &scene.semantic, &scene.normals)
}

/// Labelled pixels from one-channel shading and semantic rasters and the
/// ground-truth normals; pixels invalid in `normals` are skipped.
pub fn raster_pixels(shading: &LatentField, semantic: &LatentField, normals: &NormalMap) -> Result<Vec<LabelledPixel>> {
    let image = patch_features(shading)?;
    let semantic = patch_features(semantic)?;
    image.same_shape(&LatentField::zeros(normals.height(), normals.width(), PATCH_CHANNELS))?;
    semantic.same_shape(&image)?;
    Ok((0..image.pixel_count())
        .filter(|&i| normals.mask()[i])
        .map(|i| LabelledPixel {
            image: image.pixel_at(i).to_vec(),
            semantic: semantic.pixel_at(i).to_vec(),
            normal: normals.normals()[i],
        })
        .collect())
}

pub fn dataset_pixels(scenes: &[SceneSample]) -> Result<Vec<LabelledPixel>> {
    let mut all = Vec::new();
    for s in scenes {
        all.extend(scene_pixels(s)?);
    }
    Ok(all)
}

/// x0-denoising examples with `t ~ U{0..T-1}`.
pub struct RefinerSource<'a> {
    pub pixels: &'a [LabelledPixel],
    pub sched: &'a NoiseSchedule,
    pub injection_scale: f64,
    pub use_semantics: bool,
}

impl ExampleSource for RefinerSource<'_> {
    fn batch(&self, batch_size: usize, rng: &mut SeededRng) -> Vec<PixelExample> {
        (0..batch_size)
            .map(|_| {
                let px = &self.pixels[rng.random_range(0..self.pixels.len())];
                let t = rng.random_range(0..self.sched.len());
                let ab = self.sched.alpha_bar(t).expect("t in range");
                let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
                let x = px.normal.iter().map(|&n| sa * n + sn * standard_normal(rng)).collect();
                PixelExample {
                    x,
                    t,
                    image: px.image.clone(),
                    semantic: self.use_semantics.then(|| px.semantic.clone()),
                    injection_scale: self.injection_scale,
                    target: px.normal.to_vec(),
                }
            })
            .collect()
    }
}

/// One-shot examples: target `forward_diffuse(n, t+, eps')`, input a fresh
/// draw (or `eps'` when shared) unless the gate picks the zero input.
pub struct YosoSource<'a> {
    pub pixels: &'a [LabelledPixel],
    pub sched: &'a NoiseSchedule,
    pub t_plus_index: usize,
    pub lambda: f64,
    pub sharing: NoiseSharing,
}

impl ExampleSource for YosoSource<'_> {
    fn batch(&self, batch_size: usize, rng: &mut SeededRng) -> Vec<PixelExample> {
        let ab = self.sched.alpha_bar(self.t_plus_index).expect("t_plus in range");
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        (0..batch_size)
            .map(|_| {
                let px = &self.pixels[rng.random_range(0..self.pixels.len())];
                let eps: Vec<f64> = (0..3).map(|_| standard_normal(rng)).collect();
                let target = px.normal.iter().zip(&eps).map(|(n, e)| sa * n + sn * e).collect();
                let x = match shrinkage_gate(self.lambda, rng) {
                    Branch::Shrunk => vec![0.0; 3],
                    _ => match self.sharing {
                        NoiseSharing::Independent => (0..3).map(|_| standard_normal(rng)).collect(),
                        NoiseSharing::Shared => eps,
                    },
                };
                PixelExample {
                    x,
                    t: self.t_plus_index,
                    image: px.image.clone(),
                    semantic: None,
                    injection_scale: 0.0,
                    target,
                }
            })
            .collect()
    }
}

/// Normal map read off a latent (normalised per pixel).
pub fn latent_normals(latent: &LatentField, mask: &[bool]) -> Result<NormalMap> {
    NormalMap::from_latent(latent, Some(mask))
}

/// Stage one alone: `normalize(x_{t+})`.
pub fn yoso_only(cond: &ConditionBundle, yoso: &Mlp, cfg: &SamplerConfig, mask: &[bool]) -> Result<NormalMap> {
    let (h, w) = cond
        .image_features()
        .map(|f| (f.height(), f.width()))
        .ok_or_else(|| Error::arg("one-shot estimation needs image features"))?;
    let x_inf = match cfg.yoso_input {
        crate::samplers::OneShotInput::Zero => LatentField::zeros(h, w, 3),
        crate::samplers::OneShotInput::Sampled => {
            let mut r = rng::substream(cfg.seed, 0);
            LatentField::standard_normal(h, w, 3, &mut r)
        }
    };
    let x = yoso.predict(&x_inf, cfg.t_plus_index(), &cond.without_semantics())?;
    latent_normals(&x, mask)
}

pub fn two_stage(
    cond: &ConditionBundle,
    yoso: &Mlp,
    refiner: &Mlp,
    cfg: &SamplerConfig,
    sched: &NoiseSchedule,
    mask: &[bool],
) -> Result<(NormalMap, Trajectory)> {
    let traj = heuristic_sample(cond, yoso, refiner, cfg, sched)?;
    let n = latent_normals(traj.prediction(), mask)?;
    Ok((n, traj))
}

/// Many-to-one one-shot task: each condition owns a handful of fixed input
/// draws, all of which must map to that condition's single target.
#[derive(Clone, Debug, PartialEq)]
pub struct ManyToOne {
    pub conditions: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<Vec<f64>>>,
    pub targets: Vec<Vec<f64>>,
    pub latent_channels: usize,
}

impl ManyToOne {
    /// `targets[c] = forward_diffuse(x0_c, t+, eps'_c)` with
    /// `x0_c = tanh(A c)` for a fixed random `A`.
    pub fn generate(
        seed: u64,
        n_conditions: usize,
        draws_per_condition: usize,
        condition_dim: usize,
        latent_channels: usize,
        t_plus_index: usize,
        sched: &NoiseSchedule,
    ) -> Result<Self> {
        if n_conditions == 0 || draws_per_condition == 0 || condition_dim == 0 || latent_channels == 0 {
            return Err(Error::arg("many-to-one task sizes must be positive"));
        }
        let ab = sched.alpha_bar(t_plus_index)?;
        let mut r = rng::seeded(seed);
        let a: Vec<f64> = (0..latent_channels * condition_dim).map(|_| standard_normal(&mut r)).collect();
        let mut conditions = Vec::with_capacity(n_conditions);
        let mut inputs = Vec::with_capacity(n_conditions);
        let mut targets = Vec::with_capacity(n_conditions);
        for _ in 0..n_conditions {
            let c: Vec<f64> = (0..condition_dim).map(|_| standard_normal(&mut r)).collect();
            let target = (0..latent_channels)
                .map(|k| {
                    let z: f64 = (0..condition_dim).map(|j| a[k * condition_dim + j] * c[j]).sum();
                    ab.sqrt() * z.tanh() + (1.0 - ab).sqrt() * standard_normal(&mut r)
                })
                .collect();
            let draws = (0..draws_per_condition)
                .map(|_| (0..latent_channels).map(|_| standard_normal(&mut r)).collect())
                .collect();
            conditions.push(c);
            inputs.push(draws);
            targets.push(target);
        }
        Ok(Self { conditions, inputs, targets, latent_channels })
    }

    pub fn spec(&self, t_plus_index: usize, hidden: Vec<usize>) -> MlpSpec {
        MlpSpec {
            kind: Parameterization::XtPlus { t_plus: t_plus_index },
            latent_channels: self.latent_channels,
            image_channels: self.conditions[0].len(),
            semantic_channels: 0,
            injection_hidden: 0,
            hidden,
            activation: Activation::Tanh,
            time_steps: 0,
        }
    }

    /// Mean over conditions and channels of the output standard deviation
    /// across `n_draws` fresh inputs.
    pub fn output_std(&self, net: &Mlp, n_draws: usize, seed: u64) -> f64 {
        let mut r = rng::seeded(seed);
        let t = match net.spec().kind {
            Parameterization::XtPlus { t_plus } => t_plus,
            _ => 0,
        };
        let mut total = 0.0;
        for c in &self.conditions {
            let outs: Vec<Vec<f64>> = (0..n_draws)
                .map(|_| {
                    let z: Vec<f64> = (0..self.latent_channels).map(|_| standard_normal(&mut r)).collect();
                    net.predict_pixel(&z, t, c, None, 0.0)
                })
                .collect();
            for k in 0..self.latent_channels {
                let mean = outs.iter().map(|o| o[k]).sum::<f64>() / n_draws as f64;
                let var = outs.iter().map(|o| (o[k] - mean).powi(2)).sum::<f64>() / (n_draws as f64 - 1.0);
                total += var.sqrt();
            }
        }
        total / (self.conditions.len() * self.latent_channels) as f64
    }
}

pub struct ManyToOneSource<'a> {
    pub task: &'a ManyToOne,
    pub t_plus_index: usize,
    pub lambda: f64,
}

impl ExampleSource for ManyToOneSource<'_> {
    fn batch(&self, batch_size: usize, rng: &mut SeededRng) -> Vec<PixelExample> {
        (0..batch_size)
            .map(|_| {
                let c = rng.random_range(0..self.task.conditions.len());
                let k = rng.random_range(0..self.task.inputs[c].len());
                let x = match shrinkage_gate(self.lambda, rng) {
                    Branch::Shrunk => vec![0.0; self.task.latent_channels],
                    _ => self.task.inputs[c][k].clone(),
                };
                PixelExample {
                    x,
                    t: self.t_plus_index,
                    image: self.task.conditions[c].clone(),
                    semantic: None,
                    injection_scale: 0.0,
                    target: self.task.targets[c].clone(),
                }
            })
            .collect()
    }
}

/// Denoiser-agnostic helper used by the harnesses.
pub fn predict_normals(den: &dyn Denoiser, x: &LatentField, t: usize, cond: &ConditionBundle, mask: &[bool]) -> Result<NormalMap> {
    latent_normals(&den.predict(x, t, cond)?, mask)
}
