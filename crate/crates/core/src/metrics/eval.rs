use std::fmt::Write as _;
use std::path::Path;

use super::{completion_metrics, estimation_metrics, nearest_neighbor_complete, CompletionMetrics, EstimationMetrics, EstimationOptions};
use crate::data::{DepthImage, Sample};
use crate::error::{Error, Result};
use crate::trainer::TrainState;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    /// RGB in, dense depth out.
    Estimation,
    /// Sparse depth in, dense depth out.
    Completion,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Estimation => "estimation",
            Task::Completion => "completion",
        }
    }
}

/// Anything that can produce a dense depth map for a sample.
pub trait DepthPredictor {
    fn name(&self) -> &str;
    /// Returns [`Error::Unsupported`] for tasks the predictor cannot do.
    fn predict(&self, sample: &Sample, task: Task) -> Result<DepthImage>;
}

impl DepthPredictor for TrainState {
    fn name(&self) -> &str {
        "model"
    }

    fn predict(&self, sample: &Sample, task: Task) -> Result<DepthImage> {
        match task {
            Task::Estimation => self.infer_estimate(&sample.rgb),
            Task::Completion => self.infer_complete(&sample.sparse_gt),
        }
    }
}

/// Classical completion baseline; cannot estimate from RGB.
#[derive(Clone, Copy, Debug, Default)]
pub struct NearestNeighbor;

impl DepthPredictor for NearestNeighbor {
    fn name(&self) -> &str {
        "nearest-neighbor"
    }

    fn predict(&self, sample: &Sample, task: Task) -> Result<DepthImage> {
        match task {
            Task::Completion => nearest_neighbor_complete(&sample.sparse_gt),
            Task::Estimation => Err(Error::Unsupported("nearest-neighbor baseline only does completion".into())),
        }
    }
}

/// Returns the ground truth itself; a sanity fixture for the pipeline.
#[derive(Clone, Copy, Debug, Default)]
pub struct GroundTruth;

impl DepthPredictor for GroundTruth {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn predict(&self, sample: &Sample, _task: Task) -> Result<DepthImage> {
        Ok(sample.dense_gt.clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SampleMetrics {
    Estimation(EstimationMetrics),
    Completion(CompletionMetrics),
}

impl SampleMetrics {
    fn values(&self) -> Vec<f64> {
        match self {
            SampleMetrics::Estimation(m) => vec![m.abs_rel, m.sq_rel, m.rmse_m, m.rmse_log, m.delta1, m.delta2, m.delta3],
            SampleMetrics::Completion(m) => vec![m.rmse_mm, m.mae_mm],
        }
    }

    fn from_values(task: Task, v: &[f64]) -> Self {
        match task {
            Task::Estimation => SampleMetrics::Estimation(EstimationMetrics {
                abs_rel: v[0],
                sq_rel: v[1],
                rmse_m: v[2],
                rmse_log: v[3],
                delta1: v[4],
                delta2: v[5],
                delta3: v[6],
            }),
            Task::Completion => SampleMetrics::Completion(CompletionMetrics {
                rmse_mm: v[0],
                mae_mm: v[1],
            }),
        }
    }
}

fn columns(task: Task) -> &'static [&'static str] {
    match task {
        Task::Estimation => &["abs_rel", "sq_rel", "rmse_m", "rmse_log", "delta1", "delta2", "delta3"],
        Task::Completion => &["rmse_mm", "mae_mm"],
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub task: Task,
    pub predictor: String,
    /// `(sample id, metrics)` for samples with at least one valid pixel.
    pub rows: Vec<(String, SampleMetrics)>,
    /// Samples with no ground truth at all; excluded from the aggregate.
    pub skipped: Vec<String>,
    /// Mean of each metric over `rows`.
    pub aggregate: SampleMetrics,
    pub valid_pixels: usize,
}

impl MetricsReport {
    pub fn sample_count(&self) -> usize {
        self.rows.len()
    }

    pub fn estimation(&self) -> Option<EstimationMetrics> {
        match self.aggregate {
            SampleMetrics::Estimation(m) => Some(m),
            SampleMetrics::Completion(_) => None,
        }
    }

    pub fn completion(&self) -> Option<CompletionMetrics> {
        match self.aggregate {
            SampleMetrics::Completion(m) => Some(m),
            SampleMetrics::Estimation(_) => None,
        }
    }

    /// Header, one row per sample, then an `aggregate` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("id,{}\n", columns(self.task).join(","));
        let rows = self.rows.iter().map(|(id, m)| (id.as_str(), m));
        for (id, m) in rows.chain(std::iter::once(("aggregate", &self.aggregate))) {
            out.push_str(id);
            for v in m.values() {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Order-independent mean: summing sorted values makes the result exactly
/// invariant to dataset order.
fn stable_mean(mut values: Vec<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs `predictor` over every sample and scores it against the masked
/// dense ground truth.
pub fn evaluate(
    predictor: &dyn DepthPredictor,
    dataset: &[Sample],
    task: Task,
    opts: &EstimationOptions,
) -> Result<MetricsReport> {
    if dataset.is_empty() {
        return Err(Error::Dataset("evaluation dataset is empty".into()));
    }
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut valid_pixels = 0;
    for sample in dataset {
        let (h, w) = sample.dense_gt.shape();
        let gt = DepthImage::from_fn(h, w, |r, c| {
            if sample.dense_mask.get(r, c) {
                sample.dense_gt.get(r, c)
            } else {
                0.0
            }
        });
        let valid = gt.nonzero_count();
        if valid == 0 {
            skipped.push(sample.id.clone());
            continue;
        }
        let pred = predictor.predict(sample, task)?;
        let m = match task {
            Task::Estimation => SampleMetrics::Estimation(estimation_metrics(&pred, &gt, opts)?),
            Task::Completion => SampleMetrics::Completion(completion_metrics(&pred, &gt)?),
        };
        valid_pixels += valid;
        rows.push((sample.id.clone(), m));
    }
    if rows.is_empty() {
        return Err(Error::EmptyEvaluation);
    }
    let n_cols = columns(task).len();
    let means: Vec<f64> = (0..n_cols)
        .map(|k| stable_mean(rows.iter().map(|(_, m)| m.values()[k]).collect()))
        .collect();
    Ok(MetricsReport {
        task,
        predictor: predictor.name().to_string(),
        aggregate: SampleMetrics::from_values(task, &means),
        rows,
        skipped,
        valid_pixels,
    })
}
