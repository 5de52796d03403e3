use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

/// Dense row-major, channel-interleaved raster of finite reals.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentField {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

pub type Shape = (usize, usize, usize);

impl LatentField {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::arg(format!(
                "field dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if values.len() != height * width * channels {
            return Err(Error::arg(format!(
                "field payload has {} values, expected {}",
                values.len(),
                height * width * channels
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("field value at index {i}")));
        }
        Ok(Self { height, width, channels, values })
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "field dimensions must be positive");
        assert!(value.is_finite());
        Self { height, width, channels, values: vec![value; height * width * channels] }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, 1, value)
    }

    /// Standard normal draws, one per element.
    pub fn standard_normal(height: usize, width: usize, channels: usize, rng: &mut impl Rng) -> Self {
        let mut f = Self::zeros(height, width, channels);
        rng::fill_standard_normal(rng, &mut f.values);
        f
    }

    pub fn shape(&self) -> Shape {
        (self.height, self.width, self.channels)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn pixel(&self, row: usize, col: usize) -> &[f64] {
        let start = (row * self.width + col) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel_at(&self, index: usize) -> &[f64] {
        &self.values[index * self.channels..(index + 1) * self.channels]
    }

    pub fn same_shape(&self, other: &LatentField) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::ShapeMismatch { expected: self.shape(), actual: other.shape() });
        }
        Ok(())
    }

    /// Elementwise `a * self + b * other`.
    pub fn axpby(&self, a: f64, other: &LatentField, b: f64) -> Result<LatentField> {
        self.same_shape(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        LatentField::new(self.height, self.width, self.channels, values)
    }

    pub fn scale(&self, a: f64) -> Result<LatentField> {
        LatentField::new(self.height, self.width, self.channels, self.values.iter().map(|v| a * v).collect())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<LatentField> {
        LatentField::new(self.height, self.width, self.channels, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn mean_squared_difference(&self, other: &LatentField) -> Result<f64> {
        self.same_shape(other)?;
        let sum: f64 = self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.values.len() as f64)
    }

    /// Builds a field from per-pixel vectors of equal length.
    pub fn from_pixels(height: usize, width: usize, channels: usize, pixels: Vec<Vec<f64>>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::arg(format!("expected {} pixels, got {}", height * width, pixels.len())));
        }
        let mut values = Vec::with_capacity(height * width * channels);
        for p in pixels {
            if p.len() != channels {
                return Err(Error::arg(format!("pixel has {} channels, expected {channels}", p.len())));
            }
            values.extend(p);
        }
        LatentField::new(height, width, channels, values)
    }
}
