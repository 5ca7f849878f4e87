use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the three network families a [`NetworkConfig`] describes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NetworkKind {
    /// RGB → sparse depth (also used for the single-network ablation).
    SparseGenerator,
    /// Sparse depth → dense depth.
    DenseGenerator,
    /// (RGB, depth) → probability that the pair is real.
    Discriminator,
}

impl NetworkKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NetworkKind::SparseGenerator => "sparse_generator",
            NetworkKind::DenseGenerator => "dense_generator",
            NetworkKind::Discriminator => "discriminator",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Channels of the first encoder stage; stage `i` has `base_width << i`.
    pub base_width: usize,
    /// Number of stride-2 downsamplings in the encoder.
    pub depth_levels: usize,
    pub leaky_slope: f64,
    /// Residual block before each downsampling (dense generator style).
    pub use_residual_encoder: bool,
    /// Concatenate encoder features into the decoder.
    pub use_skips: bool,
    pub input_channels: usize,
    pub output_channels: usize,
    /// Input size. Generators accept any size divisible by
    /// `2^depth_levels`; discriminators are fixed to this size because the
    /// head kernel spans the whole remaining feature map.
    pub height: usize,
    pub width: usize,
}

impl NetworkConfig {
    fn base() -> Self {
        Self {
            base_width: 16,
            depth_levels: 4,
            leaky_slope: 0.2,
            use_residual_encoder: false,
            use_skips: true,
            input_channels: 3,
            output_channels: 1,
            height: 64,
            width: 64,
        }
    }

    pub fn sparse_generator() -> Self {
        Self::base()
    }

    pub fn dense_generator() -> Self {
        Self {
            use_residual_encoder: true,
            input_channels: 1,
            ..Self::base()
        }
    }

    pub fn discriminator() -> Self {
        Self {
            input_channels: 4,
            ..Self::base()
        }
    }

    /// Same architecture at another width/depth/size.
    pub fn scaled(self, base_width: usize, depth_levels: usize, height: usize, width: usize) -> Self {
        Self {
            base_width,
            depth_levels,
            height,
            width,
            ..self
        }
    }

    /// Channels of encoder stage `i`.
    pub fn channels(&self, i: usize) -> usize {
        self.base_width << i
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.depth_levels == 0 {
            return bad("depth_levels must be at least 1".into());
        }
        if self.depth_levels > 12 {
            return bad(format!("depth_levels {} is unreasonably deep", self.depth_levels));
        }
        if self.base_width == 0 || self.input_channels == 0 || self.output_channels == 0 {
            return bad("channel counts must be positive".into());
        }
        if !self.leaky_slope.is_finite() || self.leaky_slope < 0.0 {
            return bad(format!("leaky_slope must be finite and non-negative, got {}", self.leaky_slope));
        }
        self.check_input_size(self.height, self.width)
    }

    pub(crate) fn check_input_size(&self, height: usize, width: usize) -> Result<()> {
        let unit = 1usize << self.depth_levels;
        if height == 0 || width == 0 || !height.is_multiple_of(unit) || !width.is_multiple_of(unit) {
            return Err(Error::Shape(format!(
                "input {height}x{width} is not divisible by 2^{} = {unit}",
                self.depth_levels
            )));
        }
        Ok(())
    }
}
