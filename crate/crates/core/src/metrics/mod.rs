//! Estimation and completion error metrics, a nearest-neighbour completion
//! baseline, and dataset-level evaluation.

mod baseline;
mod eval;

pub use baseline::nearest_neighbor_complete;
pub use eval::{evaluate, DepthPredictor, GroundTruth, MetricsReport, NearestNeighbor, SampleMetrics, Task};

use crate::data::DepthImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct EstimationMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse_m: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CompletionMetrics {
    pub rmse_mm: f64,
    pub mae_mm: f64,
}

/// Rectangle kept for evaluation, as fractions of the image height/width.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crop {
    pub top: f64,
    pub bottom: f64,
    pub left: f64,
    pub right: f64,
}

impl Crop {
    /// The crop customarily used for KITTI monocular evaluation.
    pub const EIGEN: Crop = Crop {
        top: 0.408_108_11,
        bottom: 0.991_891_89,
        left: 0.035_947_71,
        right: 0.964_052_29,
    };

    fn contains(&self, h: usize, w: usize, r: usize, c: usize) -> bool {
        let (r0, r1) = ((self.top * h as f64) as usize, (self.bottom * h as f64) as usize);
        let (c0, c1) = ((self.left * w as f64) as usize, (self.right * w as f64) as usize);
        r >= r0 && r < r1 && c >= c0 && c < c1
    }
}

/// Evaluation range and region for the estimation metrics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EstimationOptions {
    /// Predictions are clamped to `[d_min, d_max]` before scoring.
    pub d_min: f64,
    pub d_max: f64,
    pub crop: Option<Crop>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            d_min: 1e-3,
            d_max: 80.0,
            crop: None,
        }
    }
}

fn check_pair(pred: &DepthImage, gt: &DepthImage) -> Result<()> {
    if pred.shape() != gt.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape())));
    }
    Ok(())
}

/// Valid `(pred, gt)` pairs: ground truth > 0, inside the crop if any.
fn valid_pairs<'a>(
    pred: &'a DepthImage,
    gt: &'a DepthImage,
    crop: Option<Crop>,
) -> impl Iterator<Item = (f64, f64)> + 'a {
    let (h, w) = gt.shape();
    pred.data()
        .iter()
        .zip(gt.data())
        .enumerate()
        .filter(move |&(i, (_, &g))| g > 0.0 && crop.is_none_or(|c| c.contains(h, w, i / w, i % w)))
        .map(|(_, (&p, &g))| (p, g))
}

/// Sum by recursive halving; smaller rounding error than a running sum and
/// exact for a power-of-two count of equal terms.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => {
            let (a, b) = v.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}

/// Standard single-image depth estimation metrics over pixels with
/// ground truth:
///
/// - `abs_rel = mean(|p - g| / g)`, `sq_rel = mean((p - g)² / g)`
/// - `rmse_m = sqrt(mean((p - g)²))`, `rmse_log = sqrt(mean(ln(p / g)²))`
/// - `delta_k` = fraction with `max(p/g, g/p) < 1.25^k`
pub fn estimation_metrics(pred: &DepthImage, gt: &DepthImage, opts: &EstimationOptions) -> Result<EstimationMetrics> {
    check_pair(pred, gt)?;
    if !(opts.d_min > 0.0 && opts.d_min < opts.d_max) {
        return Err(Error::InvalidConfig(format!(
            "evaluation range [{}, {}] is empty or not positive",
            opts.d_min, opts.d_max
        )));
    }
    let thresholds = [1.25, 1.25f64.powi(2), 1.25f64.powi(3)];
    let mut terms: [Vec<f64>; 7] = Default::default();
    for (p, g) in valid_pairs(pred, gt, opts.crop) {
        let p = p.clamp(opts.d_min, opts.d_max);
        let d = p - g;
        let ratio = (p / g).max(g / p);
        let log_ratio = (p / g).ln();
        let values = [
            d.abs() / g,
            d * d / g,
            d * d,
            log_ratio * log_ratio,
            f64::from(u8::from(ratio < thresholds[0])),
            f64::from(u8::from(ratio < thresholds[1])),
            f64::from(u8::from(ratio < thresholds[2])),
        ];
        for (column, v) in terms.iter_mut().zip(values) {
            column.push(v);
        }
    }
    let n = terms[0].len();
    if n == 0 {
        return Err(Error::EmptyEvaluation);
    }
    let m = terms.map(|column| pairwise_sum(&column) / n as f64);
    Ok(EstimationMetrics {
        abs_rel: m[0],
        sq_rel: m[1],
        rmse_m: m[2].sqrt(),
        rmse_log: m[3].sqrt(),
        delta1: m[4],
        delta2: m[5],
        delta3: m[6],
    })
}

/// Completion errors in millimetres over pixels with ground truth:
/// `mae_mm = 1000·mean(|p - g|)`, `rmse_mm = 1000·sqrt(mean((p - g)²))`.
pub fn completion_metrics(pred: &DepthImage, gt: &DepthImage) -> Result<CompletionMetrics> {
    check_pair(pred, gt)?;
    let diffs: Vec<f64> = valid_pairs(pred, gt, None).map(|(p, g)| p - g).collect();
    if diffs.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n = diffs.len() as f64;
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let sq: Vec<f64> = diffs.iter().map(|d| d * d).collect();
    Ok(CompletionMetrics {
        rmse_mm: 1000.0 * (pairwise_sum(&sq) / n).sqrt(),
        mae_mm: 1000.0 * pairwise_sum(&abs) / n,
    })
}
