//! Reconstruction, adversarial and smoothness objectives and their weighted
//! combination.
//!
//! The free functions here evaluate single images or probability lists; the
//! trainer records the same terms on a graph through [`ops`].

pub mod ops;

use depthduet_tensor::{CustomOp, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::{DepthImage, RgbImage, ValidityMask};
use crate::error::{Error, Result};
pub use ops::{EdgeWeighting, PROB_EPS};
use ops::{BinaryCrossEntropy, Reconstruction, Smoothness};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub rec_sg: f64,
    pub rec_dg: f64,
    pub adv: f64,
    pub smooth: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            rec_sg: 150.0,
            rec_dg: 100.0,
            adv: 10.0,
            smooth: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("rec_sg", self.rec_sg), ("rec_dg", self.rec_dg), ("adv", self.adv), ("smooth", self.smooth)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::InvalidConfig(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Unweighted loss values of one step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossComponents {
    pub rec_sg: f64,
    pub rec_dg: f64,
    pub adv_g: f64,
    pub adv_d_s: f64,
    pub adv_d_r: f64,
    pub smooth: f64,
}

/// Components plus the weighted generator objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub rec_sg: f64,
    pub rec_dg: f64,
    pub adv_g: f64,
    pub adv_d_s: f64,
    pub adv_d_r: f64,
    pub smooth: f64,
    pub total: f64,
}

pub const LOSS_CSV_HEADER: &str = "step,rec_sg,rec_dg,adv_g,adv_d_s,adv_d_r,smooth,total";

impl LossReport {
    pub fn csv_row(&self, step: u64) -> String {
        format!(
            "{step},{},{},{},{},{},{},{}",
            self.rec_sg, self.rec_dg, self.adv_g, self.adv_d_s, self.adv_d_r, self.smooth, self.total
        )
    }

    /// Inverse of [`LossReport::csv_row`].
    pub fn parse_csv_row(line: &str) -> Result<(u64, LossReport)> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 8 {
            return Err(Error::Inconsistent(format!("loss row needs 8 fields, got {}", fields.len())));
        }
        let step = fields[0]
            .parse()
            .map_err(|_| Error::Inconsistent(format!("bad step '{}'", fields[0])))?;
        let mut v = [0.0; 7];
        for (slot, f) in v.iter_mut().zip(&fields[1..]) {
            *slot = f.parse().map_err(|_| Error::Inconsistent(format!("bad loss value '{f}'")))?;
        }
        Ok((
            step,
            LossReport {
                rec_sg: v[0],
                rec_dg: v[1],
                adv_g: v[2],
                adv_d_s: v[3],
                adv_d_r: v[4],
                smooth: v[5],
                total: v[6],
            },
        ))
    }
}

/// Combines components into the generator objective
/// `λ_sg·rec_sg + λ_dg·rec_dg + λ_adv·adv_g + λ_s·smooth`.
/// Discriminator losses are carried along but not summed.
pub fn total_loss(c: &LossComponents, w: &LossWeights) -> Result<LossReport> {
    for (name, v) in [
        ("rec_sg", c.rec_sg),
        ("rec_dg", c.rec_dg),
        ("adv_g", c.adv_g),
        ("adv_d_s", c.adv_d_s),
        ("adv_d_r", c.adv_d_r),
        ("smooth", c.smooth),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite {
                component: name.into(),
                step: None,
            });
        }
    }
    Ok(LossReport {
        rec_sg: c.rec_sg,
        rec_dg: c.rec_dg,
        adv_g: c.adv_g,
        adv_d_s: c.adv_d_s,
        adv_d_r: c.adv_d_r,
        smooth: c.smooth,
        total: w.rec_sg * c.rec_sg + w.rec_dg * c.rec_dg + w.adv * c.adv_g + w.smooth * c.smooth,
    })
}

fn plane(d: &DepthImage) -> Tensor {
    Tensor::new([1, 1, d.height(), d.width()], d.data().to_vec())
}

fn same_shape(a: &DepthImage, b: (usize, usize), what: &str) -> Result<()> {
    if a.shape() != b {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b)));
    }
    Ok(())
}

/// Sparse-stage reconstruction: mean `|pred - target|` over every pixel,
/// including those where the target is zero.
pub fn rec_sg_loss(pred: &DepthImage, target: &DepthImage) -> Result<f64> {
    same_shape(pred, target.shape(), "sparse reconstruction")?;
    Ok(Reconstruction::new(plane(target), vec![None])?.forward(&[&plane(pred)]).item())
}

/// Dense reconstruction against complete ground truth: mean `|pred - target|`.
pub fn rec_dg_loss_synthetic(pred: &DepthImage, target: &DepthImage) -> Result<f64> {
    same_shape(pred, target.shape(), "dense reconstruction")?;
    Ok(Reconstruction::new(plane(target), vec![None])?.forward(&[&plane(pred)]).item())
}

/// Dense reconstruction against ground truth with holes:
/// `Σ |mask·pred - target| / max(1, Σ mask)`.
pub fn rec_dg_loss_real(pred: &DepthImage, target: &DepthImage, mask: &ValidityMask) -> Result<f64> {
    same_shape(pred, target.shape(), "masked reconstruction")?;
    same_shape(pred, mask.shape(), "masked reconstruction mask")?;
    let op = Reconstruction::new(plane(target), vec![Some(mask.data().to_vec())])?;
    Ok(op.forward(&[&plane(pred)]).item())
}

fn probs(p: &[f64]) -> Result<Tensor> {
    if let Some(v) = p.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            component: format!("discriminator output {v}"),
            step: None,
        });
    }
    Ok(Tensor::new([p.len(), 1, 1, 1], p.to_vec()))
}

/// Discriminator objective on its outputs for real and generated pairs:
/// `mean(-ln D(real)) + mean(-ln(1 - D(fake)))`, probabilities clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn adversarial_d_loss(real: &[f64], fake: &[f64]) -> Result<f64> {
    if real.is_empty() || fake.is_empty() {
        return Err(Error::Shape("discriminator loss needs real and fake outputs".into()));
    }
    let r = BinaryCrossEntropy { label_real: true }.forward(&[&probs(real)?]).item();
    let f = BinaryCrossEntropy { label_real: false }.forward(&[&probs(fake)?]).item();
    Ok(r + f)
}

/// Non-saturating generator objective: for each domain with samples,
/// `mean(-ln D_domain(fake))`, summed over the two domains.
pub fn adversarial_g_loss(synthetic_fake: &[f64], real_fake: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for p in [synthetic_fake, real_fake] {
        if !p.is_empty() {
            total += BinaryCrossEntropy { label_real: true }.forward(&[&probs(p)?]).item();
        }
    }
    Ok(total)
}

/// Edge-aware smoothness of `pred` guided by the intensity of `rgb`.
pub fn smoothness_loss(pred: &DepthImage, rgb: &RgbImage, weighting: EdgeWeighting) -> Result<f64> {
    same_shape(pred, (rgb.height(), rgb.width()), "smoothness")?;
    let intensity = Tensor::new([1, 1, rgb.height(), rgb.width()], rgb.intensity());
    Ok(Smoothness::new(intensity, weighting)?.forward(&[&plane(pred)]).item())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn img(h: usize, w: usize, v: &[f64]) -> DepthImage {
        DepthImage::new(h, w, v.to_vec()).unwrap()
    }

    #[test]
    fn rec_sg_examples() {
        let y = img(2, 2, &[0.0, 0.0, 0.7, 0.8]);
        assert_eq!(rec_sg_loss(&y, &y).unwrap(), 0.0);
        let shifted = img(2, 2, &[0.1, 0.1, 0.8, 0.9]);
        assert!((rec_sg_loss(&shifted, &y).unwrap() - 0.1).abs() < 1e-12);
        let pred = img(2, 2, &[0.2, 0.0, 0.5, 1.0]);
        // per-pixel oracle
        let oracle: f64 = pred.data().iter().zip(y.data()).map(|(p, t)| (p - t).abs()).sum::<f64>() / 4.0;
        let v = rec_sg_loss(&pred, &y).unwrap();
        assert!((v - oracle).abs() < 1e-15);
        assert!((v - 0.15).abs() < 1e-12);
        assert!(rec_sg_loss(&pred, &img(1, 4, &[0.0; 4])).is_err());
    }

    #[test]
    fn rec_dg_examples() {
        let pred = img(1, 2, &[0.5, 0.5]);
        let y = img(1, 2, &[0.3, 0.0]);
        let m = ValidityMask::new(1, 2, vec![true, false]).unwrap();
        assert!((rec_dg_loss_real(&pred, &y, &m).unwrap() - 0.2).abs() < 1e-12);
        let none = ValidityMask::filled(1, 2, false);
        assert_eq!(rec_dg_loss_real(&pred, &DepthImage::zeros(1, 2), &none).unwrap(), 0.0);
        let full = ValidityMask::filled(1, 2, true);
        assert_eq!(rec_dg_loss_real(&pred, &y, &full).unwrap(), rec_dg_loss_synthetic(&pred, &y).unwrap());
        assert_eq!(rec_dg_loss_synthetic(&y, &y).unwrap(), 0.0);
        // target present where the mask is unset
        let bad = ValidityMask::new(1, 2, vec![false, true]).unwrap();
        assert!(matches!(rec_dg_loss_real(&pred, &y, &bad), Err(Error::Inconsistent(_))));
    }

    #[test]
    fn adversarial_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((adversarial_d_loss(&[0.5], &[0.5]).unwrap() - 2.0 * ln2).abs() < 1e-12);
        let perfect = adversarial_d_loss(&[1.0 - PROB_EPS], &[PROB_EPS]).unwrap();
        assert!(perfect > 0.0 && (perfect - 2.0 * PROB_EPS).abs() < 1e-12);
        let v = adversarial_d_loss(&[0.9], &[0.1]).unwrap();
        assert!((v + 2.0 * 0.9f64.ln()).abs() < 1e-12);
        assert!((v - 0.2107).abs() < 1e-4);

        assert!((adversarial_g_loss(&[0.5], &[]).unwrap() - ln2).abs() < 1e-12);
        assert!(adversarial_g_loss(&[1.0 - PROB_EPS], &[]).unwrap() < 1e-6);
        let mixed = adversarial_g_loss(&[0.5], &[0.25]).unwrap();
        assert!((mixed - (ln2 + 4f64.ln())).abs() < 1e-12);
        assert!((mixed - 2.0794).abs() < 1e-4);
        // saturated outputs stay finite
        assert!(adversarial_d_loss(&[0.0], &[1.0]).unwrap().is_finite());
        assert!(adversarial_g_loss(&[f64::NAN], &[]).is_err());
    }

    #[test]
    fn smoothness_examples() {
        let rgb = RgbImage::from_fn(4, 5, |r, c| [0.1 * r as f64, 0.2 * c as f64, 0.5]);
        let constant = DepthImage::from_fn(4, 5, |_, _| 0.4);
        for w in [EdgeWeighting::Suppress, EdgeWeighting::Amplify] {
            assert_eq!(smoothness_loss(&constant, &rgb, w).unwrap(), 0.0);
        }
        let flat = RgbImage::from_fn(4, 5, |_, _| [0.3, 0.3, 0.3]);
        let ramp = DepthImage::from_fn(4, 5, |_, c| 0.05 * c as f64);
        let v = smoothness_loss(&ramp, &flat, EdgeWeighting::Suppress).unwrap();
        assert!((v - 0.05).abs() < 1e-12);
    }

    #[test]
    fn smoothness_two_by_three_enumeration() {
        let p = [[0.1, 0.4, 0.2], [0.3, 0.3, 0.9]];
        let x = [[0.0, 0.5, 1.0], [0.2, 0.2, 0.6]];
        let rgb = RgbImage::from_fn(2, 3, |r, c| [x[r][c]; 3]);
        let pred = DepthImage::from_fn(2, 3, |r, c| p[r][c]);
        for (w, s) in [(EdgeWeighting::Suppress, -1.0), (EdgeWeighting::Amplify, 1.0)] {
            let mut h = 0.0;
            for r in 0..2 {
                for c in 0..2 {
                    h += (p[r][c + 1] - p[r][c]).abs() * (s * (x[r][c + 1] - x[r][c]).abs()).exp();
                }
            }
            let mut v = 0.0;
            for c in 0..3 {
                v += (p[1][c] - p[0][c]).abs() * (s * (x[1][c] - x[0][c]).abs()).exp();
            }
            let expected = h / 4.0 + v / 3.0;
            assert!((smoothness_loss(&pred, &rgb, w).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!((w.rec_sg, w.rec_dg, w.adv, w.smooth), (150.0, 100.0, 10.0, 1.0));
        assert_eq!(total_loss(&LossComponents::default(), &w).unwrap().total, 0.0);
        let c = LossComponents {
            rec_sg: 0.1,
            rec_dg: 0.2,
            adv_g: 0.3,
            smooth: 0.4,
            adv_d_s: 5.0,
            adv_d_r: 6.0,
        };
        let r = total_loss(&c, &w).unwrap();
        assert!((r.total - 38.4).abs() < 1e-12);
        assert_eq!(r.adv_d_s, 5.0);
        let nan = LossComponents {
            smooth: f64::NAN,
            ..c
        };
        match total_loss(&nan, &w) {
            Err(Error::NonFinite { component, .. }) => assert_eq!(component, "smooth"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn csv_row_round_trip() {
        let r = LossReport {
            rec_sg: 0.1,
            rec_dg: 0.25,
            adv_g: 1.5,
            adv_d_s: 0.7,
            adv_d_r: 0.0,
            smooth: 1e-3,
            total: 3.0,
        };
        let row = r.csv_row(12);
        assert_eq!(row.split(',').count(), LOSS_CSV_HEADER.split(',').count());
        assert_eq!(LossReport::parse_csv_row(&row).unwrap(), (12, r));
    }

    fn pair() -> impl Strategy<Value = (DepthImage, DepthImage, ValidityMask)> {
        (1usize..8, 1usize..8).prop_flat_map(|(h, w)| {
            (
                proptest::collection::vec(0.0f64..1.0, h * w),
                proptest::collection::vec(0.0f64..1.0, h * w),
                proptest::collection::vec(any::<bool>(), h * w),
            )
                .prop_map(move |(p, t, m)| {
                    let t: Vec<f64> = t.iter().zip(&m).map(|(&v, &k)| if k { v } else { 0.0 }).collect();
                    (img(h, w, &p), img(h, w, &t), ValidityMask::new(h, w, m).unwrap())
                })
        })
    }

    proptest! {
        #[test]
        fn masked_loss_ignores_unmasked_pixels((p, t, m) in pair(), noise in proptest::collection::vec(-5.0f64..5.0, 64)) {
            let before = rec_dg_loss_real(&p, &t, &m).unwrap();
            let perturbed = DepthImage::from_fn(p.height(), p.width(), |r, c| {
                let i = r * p.width() + c;
                if m.get(r, c) { p.get(r, c) } else { (p.get(r, c) + noise[i % 64]).abs() }
            });
            prop_assert_eq!(rec_dg_loss_real(&perturbed, &t, &m).unwrap(), before);
        }

        #[test]
        fn components_are_non_negative((p, t, m) in pair()) {
            prop_assert!(rec_sg_loss(&p, &t).unwrap() >= 0.0);
            prop_assert!(rec_dg_loss_real(&p, &t, &m).unwrap() >= 0.0);
            let rgb = RgbImage::from_fn(p.height(), p.width(), |r, c| [t.get(r, c), 0.5, p.get(r, c)]);
            prop_assert!(smoothness_loss(&p, &rgb, EdgeWeighting::Suppress).unwrap() >= 0.0);
        }

        #[test]
        fn doubling_weights_doubles_total(c in proptest::array::uniform4(0.0f64..10.0), w in proptest::array::uniform4(0.0f64..200.0)) {
            let comps = LossComponents { rec_sg: c[0], rec_dg: c[1], adv_g: c[2], smooth: c[3], ..Default::default() };
            let w1 = LossWeights { rec_sg: w[0], rec_dg: w[1], adv: w[2], smooth: w[3] };
            let w2 = LossWeights { rec_sg: 2.0 * w[0], rec_dg: 2.0 * w[1], adv: 2.0 * w[2], smooth: 2.0 * w[3] };
            let a = total_loss(&comps, &w1).unwrap().total;
            let b = total_loss(&comps, &w2).unwrap().total;
            // multiplying by two is exact in binary floating point
            prop_assert_eq!(b, 2.0 * a);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn smoothness_translation_invariance_on_interior(
            vals in proptest::collection::vec(0.0f64..1.0, 36),
            img_vals in proptest::collection::vec(0.0f64..1.0, 36),
            (dr, dc) in (0usize..5, 0usize..5),
        ) {
            // A 6x6 patch whose depth border matches the constant background,
            // placed at two offsets of a 12x12 canvas: every difference that
            // touches the background is zero, so only interior pairs count.
            let place = |r0: usize, c0: usize| {
                let inside = |r: usize, c: usize| r >= r0 && r < r0 + 6 && c >= c0 && c < c0 + 6;
                let pred = DepthImage::from_fn(12, 12, |r, c| {
                    if inside(r, c) && r > r0 && r < r0 + 5 && c > c0 && c < c0 + 5 {
                        vals[(r - r0) * 6 + (c - c0)]
                    } else {
                        0.5
                    }
                });
                let rgb = RgbImage::from_fn(12, 12, |r, c| {
                    let v = if inside(r, c) { img_vals[(r - r0) * 6 + (c - c0)] } else { 0.0 };
                    [v; 3]
                });
                smoothness_loss(&pred, &rgb, EdgeWeighting::Suppress).unwrap()
            };
            prop_assert!((place(1, 1) - place(1 + dr, 1 + dc)).abs() < 1e-12);
        }
    }
}
