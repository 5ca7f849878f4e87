use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{EdgeWeighting, LossWeights};
use crate::model::NetworkConfig;

/// Components switched off for ablation runs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationFlags {
    /// One sparse-generator-shaped network regresses dense depth directly;
    /// there is no sparse stage and no sparse reconstruction term.
    pub single_network: bool,
    /// No adversarial term and no discriminator updates.
    pub disable_adv: bool,
    pub disable_smooth: bool,
    /// Every batch is drawn from the real domain only.
    pub real_only: bool,
}

/// Named ablation configurations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    /// Single network, reconstruction loss only.
    SingleL1,
    /// Single network, reconstruction and adversarial losses.
    SingleL1Adv,
    /// Single network, all loss components.
    SingleAll,
    /// Both networks, all losses, real-domain data only.
    FullRealOnly,
    /// Both networks, all losses, mixed data.
    Full,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::SingleL1,
        Ablation::SingleL1Adv,
        Ablation::SingleAll,
        Ablation::FullRealOnly,
        Ablation::Full,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::SingleL1 => "sn-l1",
            Ablation::SingleL1Adv => "sn-l1-adv",
            Ablation::SingleAll => "sn-ac",
            Ablation::FullRealOnly => "fn-r",
            Ablation::Full => "full",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL.into_iter().find(|a| a.name() == name).ok_or_else(|| {
            let names: Vec<&str> = Self::ALL.iter().map(|a| a.name()).collect();
            Error::ConfigValue {
                key: "ablation".into(),
                message: format!("unknown ablation '{name}', expected one of {}", names.join(", ")),
            }
        })
    }

    pub fn flags(self) -> AblationFlags {
        let single = |disable_adv, disable_smooth| AblationFlags {
            single_network: true,
            disable_adv,
            disable_smooth,
            real_only: false,
        };
        match self {
            Ablation::SingleL1 => single(true, true),
            Ablation::SingleL1Adv => single(false, true),
            Ablation::SingleAll => single(false, false),
            Ablation::FullRealOnly => AblationFlags {
                real_only: true,
                ..Default::default()
            },
            Ablation::Full => AblationFlags::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub weights: LossWeights,
    /// Probability that a batch slot is drawn from the synthetic domain.
    pub synthetic_ratio: f64,
    pub seed: u64,
    pub ablation: AblationFlags,
    pub base_width: usize,
    pub depth_levels: usize,
    pub height: usize,
    pub width: usize,
    /// Depth (m) that maps to normalized 1.0.
    pub d_max: f64,
    pub edge_weighting: EdgeWeighting,
    /// Zero the generated depth outside the ground-truth mask before the
    /// real-domain discriminator sees it, so both of its inputs have holes.
    pub mask_real_fake: bool,
    /// Save a checkpoint every this many steps (0: never).
    pub checkpoint_every: u64,
    /// Probability that a batch slot feeds its measured sparse depth, rather
    /// than the first stage's output, into the dense generator. Without it
    /// the completion stage never sees exact zeros at unmeasured pixels.
    #[serde(default)]
    pub measured_input_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 4,
            learning_rate: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            weights: LossWeights::default(),
            synthetic_ratio: 0.5,
            seed: 0,
            ablation: AblationFlags::default(),
            base_width: 16,
            depth_levels: 4,
            height: 64,
            width: 64,
            d_max: 80.0,
            edge_weighting: EdgeWeighting::Suppress,
            mask_real_fake: true,
            checkpoint_every: 0,
            measured_input_ratio: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation.flags();
        self
    }

    /// Ratio actually used for batch sampling.
    pub fn effective_synthetic_ratio(&self) -> f64 {
        if self.ablation.real_only {
            0.0
        } else {
            self.synthetic_ratio
        }
    }

    /// Loss weights with ablated terms zeroed.
    pub fn effective_weights(&self) -> LossWeights {
        let a = &self.ablation;
        LossWeights {
            rec_sg: if a.single_network { 0.0 } else { self.weights.rec_sg },
            rec_dg: self.weights.rec_dg,
            adv: if a.disable_adv { 0.0 } else { self.weights.adv },
            smooth: if a.disable_smooth { 0.0 } else { self.weights.smooth },
        }
    }

    fn network(&self, base: NetworkConfig) -> NetworkConfig {
        base.scaled(self.base_width, self.depth_levels, self.height, self.width)
    }

    pub fn sparse_generator_config(&self) -> NetworkConfig {
        self.network(NetworkConfig::sparse_generator())
    }

    pub fn dense_generator_config(&self) -> NetworkConfig {
        self.network(NetworkConfig::dense_generator())
    }

    pub fn discriminator_config(&self) -> NetworkConfig {
        self.network(NetworkConfig::discriminator())
    }

    /// Checks everything except the step count and learning-rate sign, which
    /// only matter for a training run (see [`TrainConfig::validate`]).
    pub fn validate_model(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be finite, got {}", self.learning_rate));
        }
        for (name, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return bad(format!("{name} must be in (0, 1), got {b}"));
            }
        }
        if !(0.0..=1.0).contains(&self.synthetic_ratio) {
            return bad(format!("synthetic_ratio must be in [0, 1], got {}", self.synthetic_ratio));
        }
        if !(0.0..=1.0).contains(&self.measured_input_ratio) {
            return bad(format!("measured_input_ratio must be in [0, 1], got {}", self.measured_input_ratio));
        }
        if !(self.d_max.is_finite() && self.d_max > 0.0) {
            return bad(format!("d_max must be positive, got {}", self.d_max));
        }
        self.weights.validate()?;
        self.sparse_generator_config().validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidConfig("steps must be at least 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        self.validate_model()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimizer_defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.learning_rate, c.adam_beta1, c.adam_beta2), (1e-4, 0.5, 0.999));
        assert_eq!(c.batch_size, 4);
        assert_eq!(c.synthetic_ratio, 0.5);
        c.validate().unwrap();
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::from_name(a.name()).unwrap(), a);
        }
        assert!(Ablation::from_name("nope").is_err());
        // every named configuration is distinct
        for (i, a) in Ablation::ALL.iter().enumerate() {
            for b in &Ablation::ALL[i + 1..] {
                assert_ne!(a.flags(), b.flags());
            }
        }
    }

    #[test]
    fn effective_weights_follow_flags() {
        let c = TrainConfig::default().with_ablation(Ablation::SingleL1);
        let w = c.effective_weights();
        assert_eq!((w.rec_sg, w.rec_dg, w.adv, w.smooth), (0.0, 100.0, 0.0, 0.0));
        let r = TrainConfig::default().with_ablation(Ablation::FullRealOnly);
        assert_eq!(r.effective_synthetic_ratio(), 0.0);
        assert_eq!(r.effective_weights(), LossWeights::default());
    }

    #[test]
    fn invalid_configs_rejected() {
        let ok = TrainConfig::default();
        for bad in [
            TrainConfig { steps: 0, ..ok.clone() },
            TrainConfig {
                learning_rate: 0.0,
                ..ok.clone()
            },
            TrainConfig {
                adam_beta1: 1.0,
                ..ok.clone()
            },
            TrainConfig {
                batch_size: 0,
                ..ok.clone()
            },
            TrainConfig {
                measured_input_ratio: 1.5,
                ..ok.clone()
            },
            TrainConfig {
                height: 60,
                ..ok.clone()
            },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
