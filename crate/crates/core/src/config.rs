//! Flat `key = value` configuration files.
//!
//! One setting per line, `#` starts a comment, blank lines are ignored.
//! Later assignments win, so command-line overrides are applied after the
//! file. Unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{DatasetConfig, PatternStyle};
use crate::error::{Error, Result};
use crate::losses::EdgeWeighting;
use crate::metrics::{Crop, EstimationOptions};
use crate::trainer::{Ablation, TrainConfig};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("seed", "master seed for data generation, initialization and batching"),
    ("height", "image height in pixels (divisible by 2^depth_levels)"),
    ("width", "image width in pixels (divisible by 2^depth_levels)"),
    ("d_max", "maximum scene depth in metres; also the depth normalization scale"),
    ("synthetic_ratio", "fraction of synthetic samples in generated data and in batches"),
    ("count", "number of samples produced by gen-data"),
    ("d_min", "minimum scene depth in metres"),
    ("object_count_min", "fewest box occluders per scene"),
    ("object_count_max", "most box occluders per scene"),
    ("sparsity_density", "fraction of pixels in the sparse measurement pattern"),
    ("pattern_style", "scanline | uniform"),
    ("pattern_pool", "directory of mask PNGs used as sparsity patterns instead of synthesizing them"),
    ("sky_fraction", "top band of the image without depth"),
    ("camera_height", "camera height above the ground plane in metres"),
    ("focal_ratio", "focal length as a multiple of the image width"),
    ("real_hole_density", "ground-truth coverage of real-domain samples"),
    ("steps", "training steps"),
    ("batch_size", "samples per training step"),
    ("learning_rate", "Adam step size"),
    ("adam_beta1", "Adam first-moment decay"),
    ("adam_beta2", "Adam second-moment decay"),
    ("lambda_rec_sg", "weight of the sparse reconstruction term"),
    ("lambda_rec_dg", "weight of the dense reconstruction term"),
    ("lambda_adv", "weight of the adversarial term"),
    ("lambda_smooth", "weight of the smoothness term"),
    ("ablation", "sn-l1 | sn-l1-adv | sn-ac | fn-r | full"),
    ("single_network", "true: one network maps RGB straight to dense depth"),
    ("disable_adv", "true: drop the adversarial term and discriminators"),
    ("disable_smooth", "true: drop the smoothness term"),
    ("real_only", "true: train on real-domain samples only"),
    ("base_width", "channels of the first encoder stage"),
    ("depth_levels", "number of encoder/decoder stages"),
    ("edge_weighting", "suppress (exp(-|dI|)) | amplify (exp(+|dI|))"),
    ("measured_input_ratio", "probability that a batch slot trains the completion stage on its measured sparse depth"),
    ("mask_real_fake", "true: hide generated depth outside the ground-truth mask from the real-domain discriminator"),
    ("checkpoint_every", "save a checkpoint every N steps during training (0: only the final model)"),
    ("eval_d_min", "predictions are clamped to at least this depth before estimation metrics"),
    ("eval_d_max", "predictions are clamped to at most this depth before estimation metrics"),
    ("eval_crop", "none | eigen"),
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub train: TrainConfig,
    pub dataset: DatasetConfig,
    pub eval: EstimationOptions,
    /// Loaded into `dataset.pattern_pool` by [`Settings::dataset_config`].
    pub pattern_pool: Option<PathBuf>,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| Error::ConfigValue {
        key: key.into(),
        message: format!("'{value}': {e}"),
    })
}

fn choice<T: Copy>(key: &str, value: &str, options: &[(&str, T)]) -> Result<T> {
    options.iter().find(|(n, _)| *n == value).map(|&(_, v)| v).ok_or_else(|| {
        let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
        Error::ConfigValue {
            key: key.into(),
            message: format!("'{value}' is not one of {}", names.join(", ")),
        }
    })
}

impl Settings {
    /// Assigns one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let (t, d) = (&mut self.train, &mut self.dataset);
        match key {
            "seed" => {
                t.seed = parse(key, value)?;
                d.seed = t.seed;
            }
            "height" => {
                t.height = parse(key, value)?;
                d.scene.height = t.height;
            }
            "width" => {
                t.width = parse(key, value)?;
                d.scene.width = t.width;
            }
            "d_max" => {
                t.d_max = parse(key, value)?;
                d.scene.d_max = t.d_max;
            }
            "synthetic_ratio" => {
                t.synthetic_ratio = parse(key, value)?;
                d.synthetic_ratio = t.synthetic_ratio;
            }
            "count" => d.count = parse(key, value)?,
            "d_min" => d.scene.d_min = parse(key, value)?,
            "object_count_min" => d.scene.object_count_range.0 = parse(key, value)?,
            "object_count_max" => d.scene.object_count_range.1 = parse(key, value)?,
            "sparsity_density" => d.scene.sparsity_density = parse(key, value)?,
            "pattern_style" => {
                d.pattern_style = choice(key, value, &[("scanline", PatternStyle::Scanline), ("uniform", PatternStyle::Uniform)])?
            }
            "pattern_pool" => self.pattern_pool = (!value.is_empty()).then(|| PathBuf::from(value)),
            "sky_fraction" => d.scene.sky_fraction = parse(key, value)?,
            "camera_height" => d.scene.camera_height = parse(key, value)?,
            "focal_ratio" => d.scene.focal_ratio = parse(key, value)?,
            "real_hole_density" => d.real_hole_density = parse(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "adam_beta1" => t.adam_beta1 = parse(key, value)?,
            "adam_beta2" => t.adam_beta2 = parse(key, value)?,
            "lambda_rec_sg" => t.weights.rec_sg = parse(key, value)?,
            "lambda_rec_dg" => t.weights.rec_dg = parse(key, value)?,
            "lambda_adv" => t.weights.adv = parse(key, value)?,
            "lambda_smooth" => t.weights.smooth = parse(key, value)?,
            "ablation" => t.ablation = Ablation::from_name(value)?.flags(),
            "single_network" => t.ablation.single_network = parse(key, value)?,
            "disable_adv" => t.ablation.disable_adv = parse(key, value)?,
            "disable_smooth" => t.ablation.disable_smooth = parse(key, value)?,
            "real_only" => t.ablation.real_only = parse(key, value)?,
            "base_width" => t.base_width = parse(key, value)?,
            "depth_levels" => t.depth_levels = parse(key, value)?,
            "edge_weighting" => {
                t.edge_weighting = choice(key, value, &[("suppress", EdgeWeighting::Suppress), ("amplify", EdgeWeighting::Amplify)])?
            }
            "mask_real_fake" => t.mask_real_fake = parse(key, value)?,
            "measured_input_ratio" => t.measured_input_ratio = parse(key, value)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "eval_d_min" => self.eval.d_min = parse(key, value)?,
            "eval_d_max" => self.eval.d_max = parse(key, value)?,
            "eval_crop" => self.eval.crop = choice(key, value, &[("none", None), ("eigen", Some(Crop::EIGEN))])?,
            _ => return Err(Error::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Applies every assignment in `text` in order.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ConfigValue {
                key: line.into(),
                message: format!("line {}: expected key = value", n + 1),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides, e.g. from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (key, value) = o.split_once('=').ok_or_else(|| Error::ConfigValue {
                key: o.into(),
                message: "expected key=value".into(),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = Self::default();
        s.apply_text(text)?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    /// Dataset settings with the pattern pool loaded, if one is configured.
    pub fn dataset_config(&self) -> Result<DatasetConfig> {
        let mut d = self.dataset.clone();
        if let Some(dir) = &self.pattern_pool {
            d.pattern_pool = crate::data::load_pattern_pool(dir)?;
        }
        Ok(d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_when_empty() {
        assert_eq!(Settings::from_text("# nothing\n\n").unwrap(), Settings::default());
    }

    #[test]
    fn parses_keys_and_comments() {
        let s = Settings::from_text(
            "steps = 12  # short run\nseed=4\nheight = 32\nablation = sn-ac\nedge_weighting=amplify\neval_crop = eigen\n",
        )
        .unwrap();
        assert_eq!(s.train.steps, 12);
        assert_eq!((s.train.seed, s.dataset.seed), (4, 4));
        assert_eq!((s.train.height, s.dataset.scene.height), (32, 32));
        assert_eq!(s.train.ablation, Ablation::SingleAll.flags());
        assert_eq!(s.train.edge_weighting, EdgeWeighting::Amplify);
        assert_eq!(s.eval.crop, Some(Crop::EIGEN));
    }

    #[test]
    fn overrides_win() {
        let mut s = Settings::from_text("steps = 12\n").unwrap();
        s.apply_overrides(&["steps=30", "lambda_adv = 0"]).unwrap();
        assert_eq!(s.train.steps, 30);
        assert_eq!(s.train.weights.adv, 0.0);
    }

    #[test]
    fn unknown_and_malformed() {
        match Settings::from_text("stepz = 3") {
            Err(Error::UnknownKey(k)) => assert_eq!(k, "stepz"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(Settings::from_text("steps = many"), Err(Error::ConfigValue { .. })));
        assert!(matches!(Settings::from_text("steps"), Err(Error::ConfigValue { .. })));
        assert!(matches!(Settings::from_text("pattern_style = grid"), Err(Error::ConfigValue { .. })));
    }

    #[test]
    fn every_documented_key_is_accepted() {
        let samples = [
            ("pattern_style", "uniform"),
            ("ablation", "full"),
            ("edge_weighting", "suppress"),
            ("eval_crop", "none"),
            ("pattern_pool", "masks"),
        ];
        for (key, _) in KEYS {
            let value = samples.iter().find(|(k, _)| k == key).map(|(_, v)| *v);
            let value = value.unwrap_or(if key.starts_with("disable") || key.contains("only") || key.contains("single") || key.starts_with("mask") {
                "true"
            } else {
                "1"
            });
            Settings::default().set(key, value).unwrap_or_else(|e| panic!("{key}: {e}"));
        }
    }
}
