//! Toy corpora and the on-disk dataset layout:
//!
//! ```text
//! <root>/manifest.txt        one `id,domain` line per sample, no header
//! <root>/rgb/<id>.png        8-bit RGB
//! <root>/sparse/<id>.png     16-bit depth, meters = raw / 256
//! <root>/dense/<id>.png      16-bit depth, meters = raw / 256
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::image::{Domain, ValidityMask};
use super::png_io::{load_depth_png, load_rgb_png, quantize_depth, quantize_rgb, save_depth_png, save_rgb_png};
use super::sample::{make_sample, Sample};
use super::scene::{generate_scene, DomainStyle, SceneConfig};
use super::sparsity::{sample_sparsity_pattern, semi_dense_mask, validity_mask, PatternStyle};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub count: usize,
    /// Fraction of samples rendered in the synthetic domain.
    pub synthetic_ratio: f64,
    pub seed: u64,
    /// Geometry, range and density template; its seed and style are
    /// overridden per sample.
    pub scene: SceneConfig,
    pub pattern_style: PatternStyle,
    /// Coverage of the semi-dense ground truth of real-domain samples.
    pub real_hole_density: f64,
    /// Optional pool of measured sparsity masks to draw patterns from
    /// instead of synthesizing them.
    pub pattern_pool: Vec<ValidityMask>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 16,
            synthetic_ratio: 0.5,
            seed: 0,
            scene: SceneConfig::default(),
            pattern_style: PatternStyle::Scanline,
            real_hole_density: 0.30,
            pattern_pool: Vec::new(),
        }
    }
}

/// SplitMix64 finalizer; decorrelates per-sample streams from one seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED69));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Number of synthetic samples in a corpus of `count`.
pub fn synthetic_count(count: usize, ratio: f64) -> usize {
    ((count as f64 * ratio).round() as usize).min(count)
}

/// Renders a corpus. Samples `0..n_syn` are synthetic, the rest real.
pub fn generate_dataset(config: &DatasetConfig) -> Result<Vec<Sample>> {
    config.scene.validate()?;
    if !(0.0..=1.0).contains(&config.synthetic_ratio) {
        return Err(Error::InvalidConfig(format!(
            "synthetic_ratio must be in [0, 1], got {}",
            config.synthetic_ratio
        )));
    }
    let n_syn = synthetic_count(config.count, config.synthetic_ratio);
    let (h, w) = (config.scene.height, config.scene.width);
    (0..config.count)
        .map(|i| {
            let i64_ = i as u64;
            let domain = if i < n_syn { Domain::Synthetic } else { Domain::Real };
            let scene_cfg = SceneConfig {
                seed: derive_seed(config.seed, 1, i64_),
                domain_style: match domain {
                    Domain::Synthetic => DomainStyle::Synthetic,
                    Domain::Real => DomainStyle::PseudoReal,
                },
                ..config.scene.clone()
            };
            let scene = generate_scene(&scene_cfg)?;
            let pattern = if config.pattern_pool.is_empty() {
                sample_sparsity_pattern(
                    derive_seed(config.seed, 2, i64_),
                    h,
                    w,
                    config.scene.sparsity_density,
                    config.pattern_style,
                )?
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 2, i64_));
                config.pattern_pool[rng.random_range(0..config.pattern_pool.len())].fit_to(h, w)
            };
            let holes = match domain {
                Domain::Real => {
                    let coverage = semi_dense_mask(
                        derive_seed(config.seed, 3, i64_),
                        h,
                        w,
                        config.real_hole_density,
                        config.scene.sky_fraction,
                    )?;
                    // the single scan is part of the accumulated ground truth
                    Some(coverage.union(&pattern)?)
                }
                Domain::Synthetic => None,
            };
            Ok(make_sample(scene, domain, &pattern, holes.as_ref())?.with_id(format!("{i:06}")))
        })
        .collect()
}

/// Applies the quantization a save/load round trip would introduce, so
/// in-memory corpora match what is read back from disk.
pub fn quantize_sample(sample: &Sample) -> Result<Sample> {
    let dense_gt = quantize_depth(&sample.dense_gt)?;
    Ok(Sample {
        id: sample.id.clone(),
        rgb: quantize_rgb(&sample.rgb),
        sparse_gt: quantize_depth(&sample.sparse_gt)?,
        dense_mask: validity_mask(&dense_gt),
        dense_gt,
        domain: sample.domain,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(root: impl AsRef<Path>, samples: &[Sample]) -> Result<()> {
    let root = root.as_ref();
    for sub in ["rgb", "sparse", "dense"] {
        create_dir(&root.join(sub))?;
    }
    let mut manifest = String::new();
    for s in samples {
        if s.id.is_empty() || s.id.contains([',', '/', '\\', '\n']) {
            return Err(Error::Dataset(format!("invalid sample id '{}'", s.id)));
        }
        save_rgb_png(&s.rgb, root.join("rgb").join(format!("{}.png", s.id)))?;
        save_depth_png(&s.sparse_gt, root.join("sparse").join(format!("{}.png", s.id)))?;
        save_depth_png(&s.dense_gt, root.join("dense").join(format!("{}.png", s.id)))?;
        manifest.push_str(&format!("{},{}\n", s.id, s.domain));
    }
    let path = root.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(path, e))
}

/// Parses manifest text into `(id, domain)` pairs. Blank lines are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<(String, Domain)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, line)| {
            let (id, domain) = line
                .split_once(',')
                .ok_or_else(|| Error::Dataset(format!("manifest line {}: expected 'id,domain'", n + 1)))?;
            Ok((id.trim().to_string(), domain.parse()?))
        })
        .collect()
}

pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let root = root.as_ref();
    let manifest_path = root.join(MANIFEST);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let entries = parse_manifest(&text)?;
    if entries.is_empty() {
        return Err(Error::Dataset(format!("{} lists no samples", manifest_path.display())));
    }
    entries
        .into_iter()
        .map(|(id, domain)| {
            let file = |sub: &str| -> PathBuf { root.join(sub).join(format!("{id}.png")) };
            let rgb = load_rgb_png(file("rgb"))?;
            let sparse_gt = load_depth_png(file("sparse"))?;
            let dense_gt = load_depth_png(file("dense"))?;
            if sparse_gt.shape() != dense_gt.shape() || (rgb.height(), rgb.width()) != dense_gt.shape() {
                return Err(Error::Shape(format!("sample '{id}' has inconsistent image sizes")));
            }
            Ok(Sample {
                dense_mask: validity_mask(&dense_gt),
                id,
                rgb,
                sparse_gt,
                dense_gt,
                domain,
            })
        })
        .collect()
}

/// Loads every depth PNG in `dir` as a sparsity mask (sorted by file name).
pub fn load_pattern_pool(dir: impl AsRef<Path>) -> Result<Vec<ValidityMask>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no PNG masks in {}", dir.display())));
    }
    paths.iter().map(|p| Ok(validity_mask(&load_depth_png(p)?))).collect()
}
