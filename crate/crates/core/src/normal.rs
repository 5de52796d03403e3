use crate::error::{Error, Result};
use crate::field::LatentField;

/// Tolerance on `|n| - 1` for valid pixels.
pub const UNIT_TOLERANCE: f64 = 1e-4;

/// Norms below this are treated as zero vectors.
pub const ZERO_NORM: f64 = 1e-12;

/// H×W raster of unit 3-vectors with a validity mask. Invalid pixels carry
/// `[0, 0, 0]` and are excluded from every statistic.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    normals: Vec<[f64; 3]>,
    mask: Vec<bool>,
}

pub fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Unit vector along `v`, or `None` for (near-)zero input.
pub fn normalize3(v: [f64; 3]) -> Option<[f64; 3]> {
    let n = norm3(v);
    (n > ZERO_NORM && n.is_finite()).then(|| [v[0] / n, v[1] / n, v[2] / n])
}

impl NormalMap {
    /// Validates unit length on valid pixels and zeroes invalid ones.
    pub fn new(height: usize, width: usize, normals: Vec<[f64; 3]>, mask: Vec<bool>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::arg("normal map dimensions must be positive"));
        }
        if normals.len() != height * width || mask.len() != height * width {
            return Err(Error::arg(format!(
                "normal map of {height}x{width} needs {} normals and mask entries, got {} and {}",
                height * width,
                normals.len(),
                mask.len()
            )));
        }
        let mut normals = normals;
        for (i, (n, &valid)) in normals.iter_mut().zip(&mask).enumerate() {
            if valid {
                let len = norm3(*n);
                if !len.is_finite() || (len - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::arg(format!("normal at pixel {i} has length {len}")));
                }
            } else {
                *n = [0.0; 3];
            }
        }
        Ok(Self { height, width, normals, mask })
    }

    /// Normalizes arbitrary vectors; zero vectors become invalid pixels.
    pub fn from_vectors(height: usize, width: usize, vectors: &[[f64; 3]], mask: Option<&[bool]>) -> Result<Self> {
        if vectors.len() != height * width {
            return Err(Error::arg("vector count does not match dimensions"));
        }
        let mut normals = Vec::with_capacity(vectors.len());
        let mut valid = Vec::with_capacity(vectors.len());
        for (i, v) in vectors.iter().enumerate() {
            let allowed = mask.map_or(true, |m| m[i]);
            match normalize3(*v).filter(|_| allowed) {
                Some(n) => {
                    normals.push(n);
                    valid.push(true);
                }
                None => {
                    normals.push([0.0; 3]);
                    valid.push(false);
                }
            }
        }
        Self::new(height, width, normals, valid)
    }

    /// Interprets a 3-channel latent as normal directions.
    pub fn from_latent(field: &LatentField, mask: Option<&[bool]>) -> Result<Self> {
        if field.channels() != 3 {
            return Err(Error::arg(format!("normal latent needs 3 channels, got {}", field.channels())));
        }
        let vectors: Vec<[f64; 3]> = field.values().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::from_vectors(field.height(), field.width(), &vectors, mask)
    }

    pub fn to_latent(&self) -> LatentField {
        let values = self.normals.iter().flat_map(|n| n.iter().copied()).collect();
        LatentField::new(self.height, self.width, 3, values).expect("normal map is finite")
    }

    pub fn uniform(height: usize, width: usize, n: [f64; 3]) -> Result<Self> {
        Self::new(height, width, vec![n; height * width], vec![true; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.normals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.normals.is_empty()
    }

    pub fn normals(&self) -> &[[f64; 3]] {
        &self.normals
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn get(&self, row: usize, col: usize) -> Option<[f64; 3]> {
        let i = row * self.width + col;
        self.mask[i].then(|| self.normals[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn same_dims(&self, other: &NormalMap) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::ShapeMismatch {
                expected: (self.height, self.width, 3),
                actual: (other.height, other.width, 3),
            });
        }
        Ok(())
    }

    /// Same map with additional pixels masked out.
    pub fn with_mask(&self, mask: &[bool]) -> Result<Self> {
        if mask.len() != self.mask.len() {
            return Err(Error::arg("mask length does not match normal map"));
        }
        let combined: Vec<bool> = self.mask.iter().zip(mask).map(|(a, b)| *a && *b).collect();
        Self::new(self.height, self.width, self.normals.clone(), combined)
    }
}
