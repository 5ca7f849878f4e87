//! Procedural road scenes: a flat ground plane seen from a fixed camera,
//! fronto-parallel box occluders, and an invalid sky band.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::image::{DepthImage, RgbImage};
use crate::error::{Error, Result};

/// Rendering style; the two styles are deliberately distribution-distinct.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DomainStyle {
    Synthetic,
    PseudoReal,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub d_min: f64,
    pub d_max: f64,
    /// Inclusive range of box occluders per scene.
    pub object_count_range: (usize, usize),
    pub sparsity_density: f64,
    pub domain_style: DomainStyle,
    /// Fraction of rows at the top of the image that carry no depth.
    pub sky_fraction: f64,
    pub camera_height: f64,
    /// Focal length as a multiple of the image width.
    pub focal_ratio: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            height: 64,
            width: 64,
            d_min: 1.0,
            d_max: 80.0,
            object_count_range: (1, 4),
            sparsity_density: 0.04,
            domain_style: DomainStyle::Synthetic,
            sky_fraction: DEFAULT_SKY_FRACTION,
            camera_height: 1.65,
            focal_ratio: 0.9,
        }
    }
}

/// Top-band fraction shared by the scene generator and the scanline
/// sparsity pattern.
pub const DEFAULT_SKY_FRACTION: f64 = 0.25;

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.height == 0 || self.width == 0 {
            return bad("scene height and width must be positive".into());
        }
        if !(self.d_min > 0.0 && self.d_min < self.d_max && self.d_max.is_finite()) {
            return bad(format!("need 0 < d_min < d_max, got [{}, {}]", self.d_min, self.d_max));
        }
        if !(self.sparsity_density > 0.0 && self.sparsity_density < 1.0) {
            return bad(format!("sparsity_density must be in (0, 1), got {}", self.sparsity_density));
        }
        if self.object_count_range.0 > self.object_count_range.1 {
            return bad("object_count_range lower bound exceeds upper bound".into());
        }
        if !(0.0..1.0).contains(&self.sky_fraction) {
            return bad(format!("sky_fraction must be in [0, 1), got {}", self.sky_fraction));
        }
        if !(self.camera_height > 0.0 && self.focal_ratio > 0.0) {
            return bad("camera_height and focal_ratio must be positive".into());
        }
        Ok(())
    }

    /// First row below the sky band.
    pub fn sky_rows(&self) -> usize {
        sky_rows(self.height, self.sky_fraction)
    }

    pub fn focal(&self) -> f64 {
        self.focal_ratio * self.width as f64
    }

    /// Horizon row: the ground plane recedes to infinity here.
    pub fn horizon(&self) -> f64 {
        self.sky_rows() as f64 - 1.0
    }

    /// Closed-form ground depth for a row below the horizon, unclamped.
    pub fn ground_depth(&self, row: usize) -> f64 {
        self.camera_height * self.focal() / (row as f64 - self.horizon())
    }
}

pub(crate) fn sky_rows(height: usize, sky_fraction: f64) -> usize {
    ((height as f64 * sky_fraction).round() as usize).clamp(1, height)
}

#[derive(Clone, Copy, Debug)]
struct BoxObject {
    depth: f64,
    lateral: f64,
    width: f64,
    height: f64,
    color: [f64; 3],
}

struct Palette {
    sky_top: [f64; 3],
    sky_bottom: [f64; 3],
    road: [f64; 3],
    verge: [f64; 3],
    marking: [f64; 3],
    fog: [f64; 3],
    fog_distance: f64,
}

impl DomainStyle {
    fn palette(self) -> Palette {
        match self {
            DomainStyle::Synthetic => Palette {
                sky_top: [0.35, 0.55, 0.95],
                sky_bottom: [0.70, 0.82, 0.98],
                road: [0.38, 0.38, 0.42],
                verge: [0.25, 0.60, 0.22],
                marking: [0.95, 0.95, 0.90],
                fog: [0.80, 0.85, 0.95],
                fog_distance: 70.0,
            },
            DomainStyle::PseudoReal => Palette {
                sky_top: [0.78, 0.78, 0.76],
                sky_bottom: [0.88, 0.86, 0.82],
                road: [0.30, 0.28, 0.26],
                verge: [0.42, 0.45, 0.25],
                marking: [0.80, 0.78, 0.60],
                fog: [0.85, 0.83, 0.80],
                fog_distance: 45.0,
            },
        }
    }
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t, a[2] + (b[2] - a[2]) * t]
}

/// Renders one scene. Deterministic in `config`.
pub fn generate_scene(config: &SceneConfig) -> Result<(RgbImage, DepthImage)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (h, w) = (config.height, config.width);
    let f = config.focal();
    let cx = w as f64 / 2.0;
    let horizon = config.horizon();
    let sky = config.sky_rows();
    let palette = config.domain_style.palette();

    let (lo, hi) = config.object_count_range;
    let count = rng.random_range(lo..=hi);
    let objects: Vec<BoxObject> = (0..count)
        .map(|_| BoxObject {
            depth: rng.random_range(6.0..45.0),
            lateral: rng.random_range(-9.0..9.0),
            width: rng.random_range(1.5..4.5),
            height: rng.random_range(1.0..3.5),
            color: [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
        })
        .collect();

    // Depth and the id of the surface that owns each pixel (None = ground).
    let mut depth = vec![0.0; h * w];
    let mut owner: Vec<Option<usize>> = vec![None; h * w];
    for r in sky..h {
        let z = config.ground_depth(r);
        for c in 0..w {
            depth[r * w + c] = z;
        }
    }
    for (id, obj) in objects.iter().enumerate() {
        let z = obj.depth.clamp(config.d_min, config.d_max);
        let left = cx + f * (obj.lateral - obj.width / 2.0) / z;
        let right = cx + f * (obj.lateral + obj.width / 2.0) / z;
        let bottom = horizon + f * config.camera_height / z;
        let top = horizon + f * (config.camera_height - obj.height) / z;
        for r in sky..h {
            let rc = r as f64 + 0.5;
            if rc < top || rc > bottom + 0.5 {
                continue;
            }
            for c in 0..w {
                let cc = c as f64 + 0.5;
                if cc >= left && cc < right && z < depth[r * w + c] {
                    depth[r * w + c] = z;
                    owner[r * w + c] = Some(id);
                }
            }
        }
    }
    for v in depth.iter_mut().skip(sky * w) {
        *v = v.clamp(config.d_min, config.d_max);
    }

    let noise = Normal::new(0.0, 0.025).expect("valid normal");
    let mut rgb = RgbImage::from_fn(h, w, |r, c| {
        if r < sky {
            let t = r as f64 / sky.max(1) as f64;
            mix(palette.sky_top, palette.sky_bottom, t)
        } else {
            let i = r * w + c;
            let z = depth[i];
            let base = match owner[i] {
                Some(id) => {
                    let obj = &objects[id];
                    let top = horizon + f * (config.camera_height - obj.height) / obj.depth;
                    let bottom = horizon + f * config.camera_height / obj.depth;
                    let t = ((r as f64 - top) / (bottom - top).max(1.0)).clamp(0.0, 1.0);
                    obj.color.map(|v| v * (1.1 - 0.4 * t))
                }
                None => {
                    let zg = config.ground_depth(r);
                    let x = (c as f64 + 0.5 - cx) * zg / f;
                    if x.abs() > 5.0 {
                        palette.verge
                    } else if x.abs() < 0.15 && (zg / 3.0).floor() as i64 % 2 == 0 {
                        palette.marking
                    } else {
                        let shade = 0.9 + 0.1 * ((zg / 4.0).floor() as i64 % 2) as f64;
                        palette.road.map(|v| v * shade)
                    }
                }
            };
            mix(base, palette.fog, 1.0 - (-z / palette.fog_distance).exp())
        }
    });

    if config.domain_style == DomainStyle::PseudoReal {
        // Warm tint, gamma and sensor noise.
        rgb = RgbImage::from_fn(h, w, |r, c| {
            let [cr, cg, cb] = rgb.get(r, c);
            let tinted = [0.9 * cr + 0.1 * cg, 0.05 * cr + 0.9 * cg + 0.05 * cb, 0.1 * cg + 0.8 * cb];
            tinted.map(|v| v.max(0.0).powf(1.25) + noise.sample(&mut rng))
        });
    }

    Ok((rgb, DepthImage::new(h, w, depth)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SceneConfig {
            seed: 7,
            domain_style: DomainStyle::PseudoReal,
            ..Default::default()
        };
        assert_eq!(generate_scene(&cfg).unwrap(), generate_scene(&cfg).unwrap());
        let other = SceneConfig { seed: 8, ..cfg.clone() };
        assert_ne!(generate_scene(&cfg).unwrap().1, generate_scene(&other).unwrap().1);
    }

    #[test]
    fn empty_scene_matches_ground_plane_formula() {
        let cfg = SceneConfig {
            object_count_range: (0, 0),
            ..Default::default()
        };
        let (_, depth) = generate_scene(&cfg).unwrap();
        let sky = cfg.sky_rows();
        for c in 0..cfg.width {
            for r in 0..cfg.height {
                // independent oracle: camera height × focal / rows below horizon
                let expected = if r < sky {
                    0.0
                } else {
                    let f = 0.9 * cfg.width as f64;
                    (1.65 * f / (r as f64 - (sky as f64 - 1.0))).clamp(1.0, 80.0)
                };
                assert_eq!(depth.get(r, c), expected, "pixel ({r}, {c})");
            }
            // depth grows monotonically toward the horizon, strictly where
            // the clamp is inactive
            for r in sky..cfg.height - 1 {
                let (near, far) = (depth.get(r + 1, c), depth.get(r, c));
                assert!(far >= near);
                if far < cfg.d_max {
                    assert!(far > near);
                }
            }
        }
    }

    #[test]
    fn depth_respects_range_and_sky() {
        for seed in 0..10 {
            let cfg = SceneConfig {
                seed,
                object_count_range: (3, 6),
                ..Default::default()
            };
            let (rgb, depth) = generate_scene(&cfg).unwrap();
            assert!(rgb.data().iter().all(|v| (0.0..=1.0).contains(v)));
            for r in 0..cfg.height {
                for c in 0..cfg.width {
                    let d = depth.get(r, c);
                    if r < cfg.sky_rows() {
                        assert_eq!(d, 0.0);
                    } else {
                        assert!((cfg.d_min..=cfg.d_max).contains(&d));
                    }
                }
            }
        }
    }

    #[test]
    fn styles_differ_in_color_statistics() {
        let mean_of = |style| {
            let mut acc = [0.0; 3];
            for seed in 0..4 {
                let cfg = SceneConfig {
                    seed,
                    domain_style: style,
                    ..Default::default()
                };
                let (rgb, _) = generate_scene(&cfg).unwrap();
                for r in 0..cfg.height {
                    for c in 0..cfg.width {
                        let p = rgb.get(r, c);
                        for k in 0..3 {
                            acc[k] += p[k];
                        }
                    }
                }
            }
            acc
        };
        let a = mean_of(DomainStyle::Synthetic);
        let b = mean_of(DomainStyle::PseudoReal);
        let n = 4.0 * 64.0 * 64.0;
        // the synthetic style is noticeably bluer
        assert!((a[2] - b[2]) / n > 0.05, "{a:?} vs {b:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let cfg = SceneConfig {
            d_min: 90.0,
            ..Default::default()
        };
        assert!(generate_scene(&cfg).is_err());
    }
}
