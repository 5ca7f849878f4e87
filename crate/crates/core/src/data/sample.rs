use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{DepthImage, Domain, RgbImage, ValidityMask};
use super::sparsity::{sparsify, validity_mask};
use crate::error::{Error, Result};

/// One training/evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub rgb: RgbImage,
    /// Target of the first stage: depth at the sparse pattern, zero elsewhere.
    pub sparse_gt: DepthImage,
    pub dense_gt: DepthImage,
    /// Pixels of `dense_gt` that carry ground truth.
    pub dense_mask: ValidityMask,
    pub domain: Domain,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.rgb.height()
    }

    pub fn width(&self) -> usize {
        self.rgb.width()
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }
}

/// Assembles a sample from a rendered scene.
///
/// Synthetic samples keep the full dense depth as ground truth. Real samples
/// only keep the pixels in `real_holes`, imitating accumulated-scan ground
/// truth with missing regions; without a hole mask the dense depth's own
/// validity is used.
pub fn make_sample(
    scene: (RgbImage, DepthImage),
    domain: Domain,
    pattern: &ValidityMask,
    real_holes: Option<&ValidityMask>,
) -> Result<Sample> {
    let (rgb, dense) = scene;
    if (rgb.height(), rgb.width()) != dense.shape() {
        return Err(Error::Shape(format!(
            "rgb {}x{} vs depth {}x{}",
            rgb.height(),
            rgb.width(),
            dense.height(),
            dense.width()
        )));
    }
    let sparse_gt = sparsify(&dense, pattern)?;
    let (dense_gt, dense_mask) = match (domain, real_holes) {
        (Domain::Real, Some(holes)) => {
            let gt = sparsify(&dense, holes)?;
            (gt, holes.clone())
        }
        _ => {
            let mask = validity_mask(&dense);
            (dense, mask)
        }
    };
    Ok(Sample {
        id: String::new(),
        rgb,
        sparse_gt,
        dense_gt,
        dense_mask,
        domain,
    })
}

/// Samples drawn for one optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Positions of the samples from `domain`, in batch order.
    pub fn indices_of(&self, domain: Domain) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.domain == domain)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Draws a batch where every slot is independently synthetic with
/// probability `synthetic_ratio`, then a uniformly random sample of that
/// domain. Deterministic in `seed`.
pub fn mixed_batch(dataset: &[Sample], batch_size: usize, synthetic_ratio: f64, seed: u64) -> Result<Batch> {
    if batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&synthetic_ratio) {
        return Err(Error::InvalidConfig(format!("synthetic_ratio must be in [0, 1], got {synthetic_ratio}")));
    }
    let synthetic: Vec<&Sample> = dataset.iter().filter(|s| s.domain == Domain::Synthetic).collect();
    let real: Vec<&Sample> = dataset.iter().filter(|s| s.domain == Domain::Real).collect();
    if synthetic_ratio > 0.0 && synthetic.is_empty() {
        return Err(Error::Dataset(format!(
            "synthetic_ratio {synthetic_ratio} requests synthetic samples but the dataset has none"
        )));
    }
    if synthetic_ratio < 1.0 && real.is_empty() {
        return Err(Error::Dataset(format!(
            "synthetic_ratio {synthetic_ratio} requests real samples but the dataset has none"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..batch_size)
        .map(|_| {
            let pool = if rng.random_bool(synthetic_ratio) { &synthetic } else { &real };
            pool[rng.random_range(0..pool.len())].clone()
        })
        .collect();
    Ok(Batch { samples })
}
