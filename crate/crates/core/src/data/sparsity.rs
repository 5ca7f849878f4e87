use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{DepthImage, ValidityMask};
use super::scene::{sky_rows, DEFAULT_SKY_FRACTION};
use crate::error::{Error, Result};

/// Marks every pixel that carries a measurement.
pub fn validity_mask(depth: &DepthImage) -> ValidityMask {
    ValidityMask::new(
        depth.height(),
        depth.width(),
        depth.data().iter().map(|&d| d != 0.0).collect(),
    )
    .expect("shape taken from depth")
}

/// Keeps `dense` where `mask` is set and zeroes it elsewhere.
pub fn sparsify(dense: &DepthImage, mask: &ValidityMask) -> Result<DepthImage> {
    dense.check_same_shape(mask.shape(), "sparsify mask")?;
    DepthImage::new(
        dense.height(),
        dense.width(),
        dense
            .data()
            .iter()
            .zip(mask.data())
            .map(|(&d, &m)| if m { d } else { 0.0 })
            .collect(),
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PatternStyle {
    /// Points along evenly spaced horizontal beams below the sky band, with
    /// per-point column jitter.
    Scanline,
    /// Independent Bernoulli draw per pixel.
    Uniform,
}

/// Requests at or above this density are clamped to it.
pub const MAX_PATTERN_DENSITY: f64 = 0.999;

/// Probability that a scanline point is displaced by one column either way.
const SCANLINE_JITTER: f64 = 0.1;

/// Synthesizes a LiDAR-like sparsity pattern. Deterministic in `seed`.
pub fn sample_sparsity_pattern(seed: u64, height: usize, width: usize, density: f64, style: PatternStyle) -> Result<ValidityMask> {
    if !density.is_finite() || density <= 0.0 {
        return Err(Error::Range(format!("pattern density must be in (0, 1), got {density}")));
    }
    let density = density.min(MAX_PATTERN_DENSITY);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match style {
        PatternStyle::Uniform => Ok(ValidityMask::from_fn(height, width, |_, _| rng.random_bool(density))),
        PatternStyle::Scanline => Ok(scanline(&mut rng, height, width, density)),
    }
}

fn scanline(rng: &mut ChaCha8Rng, height: usize, width: usize, density: f64) -> ValidityMask {
    let total = height * width;
    let target = ((density * total as f64).round() as usize).clamp(1, total);
    let top = sky_rows(height, DEFAULT_SKY_FRACTION).min(height - 1);
    // Use every other row below the sky band; fall back to denser row sets
    // when beams would be more than half full.
    let mut rows: Vec<usize> = (top..height).step_by(2).collect();
    if target > rows.len() * width / 2 {
        rows = (top..height).collect();
    }
    if target > rows.len() * width / 2 {
        rows = (0..height).collect();
    }
    let beams = rows.len();
    let mut data = vec![false; total];
    for (b, &row) in rows.iter().enumerate() {
        let count = (target / beams + usize::from(b < target % beams)).min(width);
        if count == 0 {
            continue;
        }
        let spacing = width as f64 / count as f64;
        // golden-ratio stagger keeps neighbouring beams from lining up
        let phase = ((b as f64 * 0.618_033_988_75).fract()) * spacing;
        for i in 0..count {
            let nominal = ((phase + i as f64 * spacing).floor() as usize).min(width - 1);
            let col = if spacing >= 3.0 {
                let u: f64 = rng.random();
                if u < SCANLINE_JITTER {
                    nominal.saturating_sub(1)
                } else if u < 2.0 * SCANLINE_JITTER {
                    (nominal + 1).min(width - 1)
                } else {
                    nominal
                }
            } else {
                nominal
            };
            data[row * width + col] = true;
        }
    }
    ValidityMask::new(height, width, data).expect("sized above")
}

/// Semi-dense "accumulated scan" coverage: Bernoulli below the top band,
/// nothing inside it, overall density ≈ `density`.
pub fn semi_dense_mask(seed: u64, height: usize, width: usize, density: f64, top_fraction: f64) -> Result<ValidityMask> {
    if !(density > 0.0 && density < 1.0) {
        return Err(Error::Range(format!("semi-dense density must be in (0, 1), got {density}")));
    }
    let top = sky_rows(height, top_fraction).min(height - 1);
    let rate = (density * height as f64 / (height - top) as f64).min(1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(ValidityMask::from_fn(height, width, |r, _| r >= top && rng.random_bool(rate)))
}
