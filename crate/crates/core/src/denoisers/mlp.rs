//! Per-pixel multilayer perceptron denoiser with analytic backpropagation.
//!
//! Each pixel is processed independently. The body input is
//!
//! ```text
//! [ x + scale * g(semantic), t / T, image_features ]
//! ```
//!
//! where `g` is the semantic-injection branch: a tanh hidden layer with
//! Gaussian initialisation followed by a zero-initialised projection, so a
//! freshly built network ignores the semantic features exactly.
//!
//! Parameters live in one flat vector in declaration order: body layers
//! `W0, b0, W1, b1, ...` followed by the injection tensors.

use super::{ConditionBundle, Denoiser, Parameterization};
use crate::error::{Error, Result};
use crate::exec;
use crate::field::LatentField;
use crate::rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
            Activation::Identity => a,
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `h`.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Identity => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Identity),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpSpec {
    pub kind: Parameterization,
    pub latent_channels: usize,
    pub image_channels: usize,
    pub semantic_channels: usize,
    /// Width of the injection branch's hidden layer; 0 means a single
    /// zero-initialised linear projection.
    pub injection_hidden: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    /// Length of the noise schedule, used to append `t / T` as a feature.
    /// 0 disables the time feature.
    pub time_steps: usize,
}

impl MlpSpec {
    pub fn body_input(&self) -> usize {
        self.latent_channels + usize::from(self.time_steps > 0) + self.image_channels
    }

    fn tensor_shapes(&self) -> Vec<TensorShape> {
        let mut widths = vec![self.body_input()];
        widths.extend(&self.hidden);
        widths.push(self.latent_channels);
        let mut shapes = Vec::new();
        for w in widths.windows(2) {
            shapes.push(TensorShape { rows: w[1], cols: w[0] });
            shapes.push(TensorShape { rows: w[1], cols: 1 });
        }
        if self.semantic_channels > 0 {
            let c = self.latent_channels;
            if self.injection_hidden > 0 {
                let k = self.injection_hidden;
                shapes.push(TensorShape { rows: k, cols: self.semantic_channels });
                shapes.push(TensorShape { rows: k, cols: 1 });
                shapes.push(TensorShape { rows: c, cols: k });
                shapes.push(TensorShape { rows: c, cols: 1 });
            } else {
                shapes.push(TensorShape { rows: c, cols: self.semantic_channels });
                shapes.push(TensorShape { rows: c, cols: 1 });
            }
        }
        shapes
    }

    fn validate(&self) -> Result<()> {
        if self.latent_channels == 0 {
            return Err(Error::arg("network needs at least one latent channel"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::arg("hidden widths must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TensorShape {
    pub rows: usize,
    pub cols: usize,
}

impl TensorShape {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One training pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelExample {
    pub x: Vec<f64>,
    pub t: usize,
    pub image: Vec<f64>,
    pub semantic: Option<Vec<f64>>,
    pub injection_scale: f64,
    pub target: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    shapes: Vec<TensorShape>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

struct Trace {
    injection_hidden: Vec<f64>,
    /// Input to each body layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of each body layer.
    pre: Vec<Vec<f64>>,
    output: Vec<f64>,
}

fn matvec(w: &[f64], b: &[f64], x: &[f64], rows: usize) -> Vec<f64> {
    let cols = x.len();
    (0..rows)
        .map(|r| {
            let row = &w[r * cols..(r + 1) * cols];
            row.iter().zip(x).fold(b[r], |acc, (wi, xi)| acc + wi * xi)
        })
        .collect()
}

/// Examples per gradient chunk. Fixed so the summation order, and hence
/// the result, does not depend on how chunks are scheduled.
const GRAD_CHUNK: usize = 8;

impl Mlp {
    /// Gaussian initialisation with std `1/sqrt(fan_in)`, zero biases and a
    /// zero final injection projection.
    pub fn new(spec: MlpSpec, seed: u64) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let mut r = rng::seeded(seed);
        let body_tensors = net.body_layers() * 2;
        let injection_first = body_tensors;
        for (i, shape) in net.shapes.clone().into_iter().enumerate() {
            let is_weight = i % 2 == 0;
            let is_final_injection = i + 2 == net.shapes.len() && i >= body_tensors;
            let is_gaussian = is_weight && (i < body_tensors || (i == injection_first && !is_final_injection));
            if is_gaussian {
                let normal = Normal::new(0.0, 1.0 / (shape.cols as f64).sqrt()).expect("positive std");
                let off = net.offsets[i];
                for p in &mut net.params[off..off + shape.len()] {
                    *p = normal.sample(&mut r);
                }
            }
        }
        Ok(net)
    }

    pub fn zeroed(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.tensor_shapes();
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.len();
        }
        Ok(Self { spec, shapes, offsets, params: vec![0.0; total] })
    }

    /// Rebuilds a network from a flat parameter vector.
    pub fn from_params(spec: MlpSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::arg(format!("expected {} parameters, got {}", net.params.len(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn shapes(&self) -> &[TensorShape] {
        &self.shapes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn body_layers(&self) -> usize {
        self.spec.hidden.len() + 1
    }

    fn tensor(&self, i: usize) -> &[f64] {
        &self.params[self.offsets[i]..self.offsets[i] + self.shapes[i].len()]
    }

    /// Parameter range of the final injection projection (weight and bias).
    pub fn injection_projection_range(&self) -> Option<std::ops::Range<usize>> {
        if self.spec.semantic_channels == 0 {
            return None;
        }
        let n = self.shapes.len();
        Some(self.offsets[n - 2]..self.params.len())
    }

    pub fn injection_projection_is_zero(&self) -> bool {
        self.injection_projection_range()
            .is_none_or(|r| self.params[r].iter().all(|&p| p == 0.0))
    }

    fn injection(&self, semantic: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let base = self.body_layers() * 2;
        let c = self.spec.latent_channels;
        if self.spec.injection_hidden > 0 {
            let k = self.spec.injection_hidden;
            let hidden: Vec<f64> = matvec(self.tensor(base), self.tensor(base + 1), semantic, k)
                .into_iter()
                .map(f64::tanh)
                .collect();
            let out = matvec(self.tensor(base + 2), self.tensor(base + 3), &hidden, c);
            (out, hidden)
        } else {
            (matvec(self.tensor(base), self.tensor(base + 1), semantic, c), Vec::new())
        }
    }

    fn forward(&self, x: &[f64], t: usize, image: &[f64], semantic: Option<&[f64]>, scale: f64) -> Trace {
        let c = self.spec.latent_channels;
        let mut input = Vec::with_capacity(self.spec.body_input());
        let (injected, injection_hidden) = match semantic {
            Some(s) if self.spec.semantic_channels > 0 => self.injection(s),
            _ => (vec![0.0; c], Vec::new()),
        };
        input.extend(x.iter().zip(&injected).map(|(xi, gi)| xi + scale * gi));
        if self.spec.time_steps > 0 {
            input.push(t as f64 / self.spec.time_steps as f64);
        }
        input.extend_from_slice(image);

        let layers = self.body_layers();
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut h = input;
        for l in 0..layers {
            let rows = self.shapes[2 * l].rows;
            let a = matvec(self.tensor(2 * l), self.tensor(2 * l + 1), &h, rows);
            let next = if l + 1 < layers {
                a.iter().map(|&v| self.spec.activation.apply(v)).collect()
            } else {
                a.clone()
            };
            inputs.push(std::mem::replace(&mut h, next));
            pre.push(a);
        }
        Trace { injection_hidden, inputs, pre, output: h }
    }

    /// Accumulates `d(out)/d(params)^T * d_out` into `grad`.
    fn backward(&self, trace: &Trace, d_out: &[f64], semantic: Option<&[f64]>, scale: f64, grad: &mut [f64]) {
        let layers = self.body_layers();
        let mut delta = d_out.to_vec();
        let mut d_input = Vec::new();
        for l in (0..layers).rev() {
            let shape = self.shapes[2 * l];
            let input = &trace.inputs[l];
            let (w_off, b_off) = (self.offsets[2 * l], self.offsets[2 * l + 1]);
            for r in 0..shape.rows {
                let d = delta[r];
                grad[b_off + r] += d;
                let row = &mut grad[w_off + r * shape.cols..w_off + (r + 1) * shape.cols];
                for (g, x) in row.iter_mut().zip(input) {
                    *g += d * x;
                }
            }
            let w = self.tensor(2 * l);
            let mut d_h = vec![0.0; shape.cols];
            for r in 0..shape.rows {
                let d = delta[r];
                for (dh, wv) in d_h.iter_mut().zip(&w[r * shape.cols..(r + 1) * shape.cols]) {
                    *dh += wv * d;
                }
            }
            if l > 0 {
                let a = &trace.pre[l - 1];
                delta = d_h
                    .iter()
                    .zip(a.iter().zip(input))
                    .map(|(dh, (&av, &hv))| dh * self.spec.activation.derivative(av, hv))
                    .collect();
            } else {
                d_input = d_h;
            }
        }

        let Some(sem) = semantic.filter(|_| self.spec.semantic_channels > 0) else {
            return;
        };
        let c = self.spec.latent_channels;
        let d_g: Vec<f64> = d_input[..c].iter().map(|v| v * scale).collect();
        let base = layers * 2;
        let accumulate = |grad: &mut [f64], w_idx: usize, d: &[f64], x: &[f64]| {
            let shape = self.shapes[w_idx];
            let (w_off, b_off) = (self.offsets[w_idx], self.offsets[w_idx + 1]);
            for r in 0..shape.rows {
                grad[b_off + r] += d[r];
                for (j, xv) in x.iter().enumerate() {
                    grad[w_off + r * shape.cols + j] += d[r] * xv;
                }
            }
        };
        if self.spec.injection_hidden > 0 {
            let hidden = &trace.injection_hidden;
            accumulate(grad, base + 2, &d_g, hidden);
            let w2 = self.tensor(base + 2);
            let k = self.spec.injection_hidden;
            let d_a1: Vec<f64> = (0..k)
                .map(|j| {
                    let back: f64 = (0..c).map(|r| w2[r * k + j] * d_g[r]).sum();
                    back * (1.0 - hidden[j] * hidden[j])
                })
                .collect();
            accumulate(grad, base, &d_a1, sem);
        } else {
            accumulate(grad, base, &d_g, sem);
        }
    }

    fn check_example(&self, ex: &PixelExample) -> Result<()> {
        let s = &self.spec;
        if ex.x.len() != s.latent_channels || ex.target.len() != s.latent_channels || ex.image.len() != s.image_channels {
            return Err(Error::arg("training example does not match the network layout"));
        }
        if let Some(sem) = &ex.semantic {
            if s.semantic_channels > 0 && sem.len() != s.semantic_channels {
                return Err(Error::arg("semantic feature width does not match the network"));
            }
        }
        Ok(())
    }

    /// Output for a single pixel.
    pub fn predict_pixel(&self, x: &[f64], t: usize, image: &[f64], semantic: Option<&[f64]>, scale: f64) -> Vec<f64> {
        self.forward(x, t, image, semantic, scale).output
    }

    /// Mean squared error over the batch (averaged over channels and
    /// examples) and its exact gradient with respect to every parameter.
    pub fn loss_and_gradient(&self, batch: &[PixelExample]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        for ex in batch {
            self.check_example(ex)?;
        }
        let norm = 1.0 / (batch.len() * self.spec.latent_channels) as f64;
        let chunks = batch.len().div_ceil(GRAD_CHUNK);
        let parts = exec::map_range(chunks, |ci| {
            let mut grad = vec![0.0; self.params.len()];
            let mut loss = 0.0;
            for ex in &batch[ci * GRAD_CHUNK..((ci + 1) * GRAD_CHUNK).min(batch.len())] {
                let sem = ex.semantic.as_deref();
                let trace = self.forward(&ex.x, ex.t, &ex.image, sem, ex.injection_scale);
                let d_out: Vec<f64> = trace
                    .output
                    .iter()
                    .zip(&ex.target)
                    .map(|(y, target)| {
                        loss += (y - target) * (y - target);
                        2.0 * (y - target) * norm
                    })
                    .collect();
                self.backward(&trace, &d_out, sem, ex.injection_scale, &mut grad);
            }
            (loss, grad)
        });
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.len()];
        for (l, g) in parts {
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let loss = loss * norm;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("loss or gradient".into()));
        }
        Ok((loss, grad))
    }

    /// Batch loss without gradients.
    pub fn batch_loss(&self, batch: &[PixelExample]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::arg("empty batch"));
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_example(ex)?;
            let out = self.predict_pixel(&ex.x, ex.t, &ex.image, ex.semantic.as_deref(), ex.injection_scale);
            total += out.iter().zip(&ex.target).map(|(y, t)| (y - t) * (y - t)).sum::<f64>();
        }
        Ok(total / (batch.len() * self.spec.latent_channels) as f64)
    }
}

impl Denoiser for Mlp {
    fn kind(&self) -> Parameterization {
        self.spec.kind
    }

    fn latent_channels(&self) -> Option<usize> {
        Some(self.spec.latent_channels)
    }

    fn predict(&self, x: &LatentField, t: usize, cond: &ConditionBundle) -> Result<LatentField> {
        let spec = &self.spec;
        if x.channels() != spec.latent_channels {
            return Err(Error::ShapeMismatch {
                expected: (x.height(), x.width(), spec.latent_channels),
                actual: x.shape(),
            });
        }
        if let Parameterization::XtPlus { t_plus } = spec.kind {
            if t != t_plus {
                return Err(Error::Parameterization(format!("one-shot network trained for t_plus={t_plus}, asked for {t}")));
            }
        }
        if spec.time_steps > 0 && t >= spec.time_steps {
            return Err(Error::TimeOutOfRange { t, len: spec.time_steps });
        }
        let image = if spec.image_channels > 0 {
            let img = cond.image_features().ok_or_else(|| Error::arg("network needs image features"))?;
            let want = (x.height(), x.width(), spec.image_channels);
            if img.shape() != want {
                return Err(Error::ShapeMismatch { expected: want, actual: img.shape() });
            }
            Some(img)
        } else {
            None
        };
        let semantic = match cond.semantic_features() {
            Some(sem) if spec.semantic_channels > 0 => {
                let want = (x.height(), x.width(), spec.semantic_channels);
                if sem.shape() != want {
                    return Err(Error::ShapeMismatch { expected: want, actual: sem.shape() });
                }
                Some(sem)
            }
            _ => None,
        };
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("network parameters".into()));
        }
        let scale = cond.injection_scale();
        let width = x.width();
        let rows = exec::map_range(x.height(), |row| {
            let mut out = Vec::with_capacity(width * spec.latent_channels);
            for col in 0..width {
                let img = image.map_or(&[][..], |f| f.pixel(row, col));
                let sem = semantic.map(|f| f.pixel(row, col));
                out.extend(self.predict_pixel(x.pixel(row, col), t, img, sem, scale));
            }
            out
        });
        let values = rows.concat();
        LatentField::new(x.height(), x.width(), x.channels(), values)
            .map_err(|_| Error::NonFinite("network output".into()))
    }
}
