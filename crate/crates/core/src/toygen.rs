//! Analytic ground truth: mixture samples for the oracle studies and
//! bump-field scenes (height, normals, Lambertian shading and a per-pixel
//! bump-membership descriptor) for the toy image-to-normal task.
//!
//! Scene coordinates span the unit square; pixel `(row, col)` sits at
//! `x = (col + 0.5) / width`, `y = (row + 0.5) / height`.

use crate::denoisers::GaussianMixture;
use crate::error::{Error, Result};
use crate::field::LatentField;
use crate::normal::{dot3, norm3, NormalMap};
use crate::rng::{self, standard_normal};
use rand::Rng;

pub fn sample_gaussian_mixture(gm: &GaussianMixture, n: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::seeded(seed);
    let mut cumulative = Vec::with_capacity(gm.components());
    let mut acc = 0.0;
    for w in gm.weights() {
        acc += w;
        cumulative.push(acc);
    }
    (0..n)
        .map(|_| {
            let u: f64 = r.random::<f64>() * acc;
            let k = cumulative.iter().position(|&c| u < c).unwrap_or(gm.components() - 1);
            gm.means()[k] + gm.stds()[k] * standard_normal(&mut r)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bump {
    pub cx: f64,
    pub cy: f64,
    pub amplitude: f64,
    pub width: f64,
}

impl Bump {
    fn kernel(&self, x: f64, y: f64) -> f64 {
        let dx = x - self.cx;
        let dy = y - self.cy;
        (-(dx * dx + dy * dy) / (2.0 * self.width * self.width)).exp()
    }
}

/// `z(x, y) = a x + b y + c + sum_k A_k exp(-|p - c_k|^2 / (2 w_k^2))`.
#[derive(Clone, Debug, PartialEq)]
pub struct HeightField {
    pub bumps: Vec<Bump>,
    pub plane: [f64; 3],
    pub height: usize,
    pub width: usize,
}

/// Ranges the random scene generator draws from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeightFieldParams {
    pub amplitude: (f64, f64),
    pub bump_width: (f64, f64),
    pub max_slope: f64,
}

impl Default for HeightFieldParams {
    fn default() -> Self {
        Self { amplitude: (0.04, 0.12), bump_width: (0.06, 0.16), max_slope: 0.2 }
    }
}

impl HeightFieldParams {
    /// Narrow bumps: sharp, high-frequency normal detail.
    pub fn high_frequency() -> Self {
        Self { amplitude: (0.03, 0.07), bump_width: (0.04, 0.07), max_slope: 0.2 }
    }
}

impl HeightField {
    pub fn new(bumps: Vec<Bump>, plane: [f64; 3], height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("height field resolution must be positive"));
        }
        if bumps.iter().any(|b| !(b.width > 0.0) || !b.amplitude.is_finite()) {
            return Err(Error::arg("bump widths must be positive"));
        }
        Ok(Self { bumps, plane, height, width })
    }

    pub fn pixel_position(&self, row: usize, col: usize) -> (f64, f64) {
        ((col as f64 + 0.5) / self.width as f64, (row as f64 + 0.5) / self.height as f64)
    }

    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let [a, b, c] = self.plane;
        a * x + b * y + c + self.bumps.iter().map(|k| k.amplitude * k.kernel(x, y)).sum::<f64>()
    }

    /// Analytic `(dz/dx, dz/dy)`.
    pub fn gradient(&self, x: f64, y: f64) -> (f64, f64) {
        let [a, b, _] = self.plane;
        self.bumps.iter().fold((a, b), |(gx, gy), k| {
            let s = -k.amplitude * k.kernel(x, y) / (k.width * k.width);
            (gx + s * (x - k.cx), gy + s * (y - k.cy))
        })
    }

    /// Sum of the unit bump kernels (no amplitudes).
    pub fn membership(&self, x: f64, y: f64) -> f64 {
        self.bumps.iter().map(|k| k.kernel(x, y)).sum()
    }

    pub fn height_map(&self) -> LatentField {
        let mut values = Vec::with_capacity(self.height * self.width);
        for row in 0..self.height {
            for col in 0..self.width {
                let (x, y) = self.pixel_position(row, col);
                values.push(self.eval(x, y));
            }
        }
        LatentField::new(self.height, self.width, 1, values).expect("height field is finite")
    }
}

pub fn make_heightfield(seed: u64, n_bumps: usize, height: usize, width: usize) -> Result<HeightField> {
    make_heightfield_with(seed, n_bumps, height, width, &HeightFieldParams::default())
}

pub fn make_heightfield_with(
    seed: u64,
    n_bumps: usize,
    height: usize,
    width: usize,
    params: &HeightFieldParams,
) -> Result<HeightField> {
    let mut r = rng::seeded(seed);
    let mut uniform = |(lo, hi): (f64, f64)| if hi > lo { r.random_range(lo..hi) } else { lo };
    let bumps = (0..n_bumps)
        .map(|_| Bump {
            cx: uniform((0.0, 1.0)),
            cy: uniform((0.0, 1.0)),
            amplitude: uniform(params.amplitude),
            width: uniform(params.bump_width),
        })
        .collect();
    let s = params.max_slope;
    let plane = [uniform((-s, s)), uniform((-s, s)), 0.0];
    HeightField::new(bumps, plane, height, width)
}

/// Per-pixel `normalize(-dz/dx, -dz/dy, 1)` from the analytic gradient.
pub fn heightfield_normal_map(hf: &HeightField) -> NormalMap {
    let mut normals = Vec::with_capacity(hf.height * hf.width);
    for row in 0..hf.height {
        for col in 0..hf.width {
            let (x, y) = hf.pixel_position(row, col);
            let (gx, gy) = hf.gradient(x, y);
            let v = [-gx, -gy, 1.0];
            let n = norm3(v);
            normals.push([v[0] / n, v[1] / n, v[2] / n]);
        }
    }
    NormalMap::new(hf.height, hf.width, normals, vec![true; hf.height * hf.width]).expect("unit normals")
}

/// `clamp(ambient + (1 - ambient) max(0, <n, light>), 0, 1)`; invalid
/// pixels shade to 0.
pub fn render_shading(normals: &NormalMap, light: [f64; 3], ambient: f64) -> Result<LatentField> {
    if (norm3(light) - 1.0).abs() > 1e-9 {
        return Err(Error::arg(format!("light direction must be unit length, got |l| = {}", norm3(light))));
    }
    if !(0.0..1.0).contains(&ambient) {
        return Err(Error::arg(format!("ambient must lie in [0, 1), got {ambient}")));
    }
    let values = normals
        .normals()
        .iter()
        .zip(normals.mask())
        .map(|(&n, &valid)| {
            if valid {
                (ambient + (1.0 - ambient) * dot3(n, light).max(0.0)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    LatentField::new(normals.height(), normals.width(), 1, values)
}

pub const DEFAULT_LIGHT: [f64; 3] = [0.371_390_676_354_103_7, 0.557_086_014_531_155_6, 0.742_781_352_708_207_4];
pub const DEFAULT_AMBIENT: f64 = 0.1;

/// One synthetic scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneSample {
    pub heightfield: HeightField,
    pub shading: LatentField,
    pub normals: NormalMap,
    /// Bump-membership score normalised to `[0, 1]` by its maximum.
    pub semantic: LatentField,
}

pub fn make_scene(seed: u64, n_bumps: usize, height: usize, width: usize, params: &HeightFieldParams) -> Result<SceneSample> {
    let hf = make_heightfield_with(seed, n_bumps, height, width, params)?;
    scene_from_heightfield(hf, DEFAULT_LIGHT, DEFAULT_AMBIENT)
}

pub fn scene_from_heightfield(hf: HeightField, light: [f64; 3], ambient: f64) -> Result<SceneSample> {
    let normals = heightfield_normal_map(&hf);
    let shading = render_shading(&normals, light, ambient)?;
    let mut membership = Vec::with_capacity(hf.height * hf.width);
    for row in 0..hf.height {
        for col in 0..hf.width {
            let (x, y) = hf.pixel_position(row, col);
            membership.push(hf.membership(x, y));
        }
    }
    let max = membership.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        membership.iter_mut().for_each(|m| *m /= max);
    }
    let semantic = LatentField::new(hf.height, hf.width, 1, membership)?;
    Ok(SceneSample { heightfield: hf, shading, normals, semantic })
}
