use depthduet_tensor::Tensor;

use crate::error::{Error, Result};

/// Color image with values in `[0, 1]`, stored planar (channel-major).
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    /// `data` is planar: all red values, then green, then blue.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * height * width {
            return Err(Error::Shape(format!(
                "rgb buffer of {} values for {height}x{width}x3",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::Range(format!("rgb value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let plane = height * width;
        let mut data = vec![0.0; 3 * plane];
        for r in 0..height {
            for c in 0..width {
                let px = f(r, c);
                for (ch, v) in px.iter().enumerate() {
                    data[ch * plane + r * width + c] = v.clamp(0.0, 1.0);
                }
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> [f64; 3] {
        let plane = self.height * self.width;
        let i = row * self.width + col;
        [self.data[i], self.data[plane + i], self.data[2 * plane + i]]
    }

    /// Per-pixel mean over the three channels, row-major.
    pub fn intensity(&self) -> Vec<f64> {
        let plane = self.height * self.width;
        (0..plane)
            .map(|i| (self.data[i] + self.data[plane + i] + self.data[2 * plane + i]) / 3.0)
            .collect()
    }

    /// `[1, 3, H, W]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new([1, 3, self.height, self.width], self.data.clone())
    }
}

/// Metric depth in meters. Zero marks a pixel without a measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl DepthImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "depth buffer of {} values for {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Range(format!("depth value {v} is negative or non-finite")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c).max(0.0));
            }
        }
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn nonzero_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0.0).count()
    }

    /// `[1, 1, H, W]` tensor of `depth / d_max`.
    pub fn to_normalized(&self, d_max: f64) -> Tensor {
        Tensor::new([1, 1, self.height, self.width], self.data.iter().map(|v| v / d_max).collect())
    }

    /// Inverse of [`DepthImage::to_normalized`] for a single-sample tensor
    /// slice; negative inputs are clipped to zero.
    pub fn from_normalized(height: usize, width: usize, values: &[f64], d_max: f64) -> Result<Self> {
        Self::new(height, width, values.iter().map(|v| (v * d_max).max(0.0)).collect())
    }

    pub(crate) fn check_same_shape(&self, other: (usize, usize), what: &str) -> Result<()> {
        if self.shape() != other {
            return Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.0, other.1
            )));
        }
        Ok(())
    }
}

/// Binary per-pixel validity indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ValidityMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ValidityMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "mask buffer of {} values for {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self { height, width, data }
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn density(&self) -> f64 {
        self.count() as f64 / self.data.len().max(1) as f64
    }

    pub fn union(&self, other: &ValidityMask) -> Result<ValidityMask> {
        if self.shape() != other.shape() {
            return Err(Error::Shape("mask union of different shapes".into()));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        })
    }

    pub fn is_subset_of(&self, other: &ValidityMask) -> bool {
        self.shape() == other.shape() && self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// `[1, 1, H, W]` tensor of zeros and ones.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            [1, 1, self.height, self.width],
            self.data.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect(),
        )
    }

    /// Crops or zero-pads (bottom/right) to the requested size.
    pub fn fit_to(&self, height: usize, width: usize) -> ValidityMask {
        ValidityMask::from_fn(height, width, |r, c| r < self.height && c < self.width && self.get(r, c))
    }
}

/// Which corpus a sample imitates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Domain {
    Synthetic,
    Real,
}

impl Domain {
    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Synthetic => "synthetic",
            Domain::Real => "real",
        }
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "synthetic" => Ok(Domain::Synthetic),
            "real" => Ok(Domain::Real),
            other => Err(Error::Dataset(format!("unknown domain '{other}'"))),
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
