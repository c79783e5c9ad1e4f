use serde::{Deserialize, Serialize};

use crate::data::{Augmentation, DatasetId};
use crate::error::{Error, Result};
use crate::layers::{ModelSpec, ParamKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// `lr · (1 + cos(π · epoch / epochs)) / 2`, stepped per epoch.
    Cosine,
}

/// Everything that determines a run, given the dataset bytes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetId,
    /// Class-stratified training subset size.
    #[serde(default)]
    pub subset: Option<usize>,
    /// Keeps only the first `n` training samples.
    #[serde(default)]
    pub train_limit: Option<usize>,
    pub model: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub schedule: LrSchedule,
    pub momentum: f64,
    /// Applied to conv and classifier weights only.
    pub weight_decay: f64,
    pub seed: u64,
    pub augment: Augmentation,
    /// Stops after the first epoch whose test accuracy reaches this value.
    #[serde(default)]
    pub target_accuracy: Option<f64>,
}

impl TrainConfig {
    /// BasicCNN on MNIST, gated blocks, balanced weights.
    pub fn mnist() -> Self {
        TrainConfig {
            dataset: DatasetId::Mnist,
            subset: None,
            train_limit: None,
            model: ModelSpec::basiccnn(),
            epochs: 10,
            batch_size: 64,
            lr: 0.05,
            schedule: LrSchedule::Cosine,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 42,
            augment: Augmentation::NONE,
            target_accuracy: None,
        }
    }

    /// ResNet-20 on CIFAR-10 with the usual crop/flip augmentation.
    pub fn cifar10() -> Self {
        TrainConfig {
            dataset: DatasetId::Cifar10,
            model: ModelSpec::resnet20(),
            epochs: 200,
            batch_size: 128,
            lr: 0.1,
            augment: Augmentation::CIFAR,
            ..Self::mnist()
        }
    }

    /// The reduced-scale ablation setting: 5,000 stratified CIFAR-10
    /// training images.
    pub fn cifar10_subset() -> Self {
        TrainConfig {
            dataset: DatasetId::Cifar10Subset,
            epochs: 30,
            ..Self::cifar10()
        }
    }

    /// Two-class synthetic set, seconds per epoch.
    pub fn toy() -> Self {
        let ([c, h, w], classes) = DatasetId::Toy2Class.geometry();
        TrainConfig {
            dataset: DatasetId::Toy2Class,
            model: ModelSpec::basiccnn().with_input([c, h, w], classes),
            epochs: 5,
            batch_size: 20,
            ..Self::mnist()
        }
    }

    pub fn preset(dataset: DatasetId) -> Self {
        match dataset {
            DatasetId::Mnist => Self::mnist(),
            DatasetId::Cifar10 => Self::cifar10(),
            DatasetId::Cifar10Subset => Self::cifar10_subset(),
            DatasetId::Toy2Class => Self::toy(),
            DatasetId::Shuffled10 => {
                let ([c, h, w], classes) = DatasetId::Shuffled10.geometry();
                TrainConfig {
                    dataset: DatasetId::Shuffled10,
                    model: ModelSpec::basiccnn().with_input([c, h, w], classes),
                    ..Self::toy()
                }
            }
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        match self.schedule {
            LrSchedule::Constant => self.lr,
            LrSchedule::Cosine => {
                let t = epoch as f64 / self.epochs.max(1) as f64;
                self.lr * 0.5 * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }

    pub fn decay_for(&self, kind: ParamKind) -> f64 {
        if kind.decays() {
            self.weight_decay
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let ([c, h, w], classes) = self.dataset.geometry();
        if self.model.input != [c, h, w] || self.model.num_classes != classes {
            return Err(Error::InvalidArgument(format!(
                "model expects {:?} with {} classes, dataset {} provides {:?} with {classes}",
                self.model.input, self.model.num_classes, self.dataset, [c, h, w]
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::InvalidArgument(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        let c = TrainConfig::mnist();
        assert_eq!(c.lr_at(0), 0.05);
        assert!((c.lr_at(5) - 0.025).abs() < 1e-12);
        assert!(c.lr_at(10).abs() < 1e-12);
    }

    #[test]
    fn presets_validate() {
        for d in DatasetId::ALL {
            TrainConfig::preset(d).validate().unwrap();
        }
        let mut bad = TrainConfig::mnist();
        bad.model = bad.model.with_input([3, 32, 32], 10);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn toml_and_json_round_trip() {
        let c = TrainConfig::cifar10_subset();
        let t = toml::to_string(&c).unwrap();
        assert_eq!(toml::from_str::<TrainConfig>(&t).unwrap(), c);
        assert_eq!(serde_json::from_str::<TrainConfig>(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn decay_only_on_weights() {
        let c = TrainConfig::mnist();
        assert_eq!(c.decay_for(ParamKind::ConvWeight), 1e-4);
        assert_eq!(c.decay_for(ParamKind::Gate), 0.0);
        assert_eq!(c.decay_for(ParamKind::BnGamma), 0.0);
    }
}
