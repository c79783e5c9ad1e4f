//! Multi-arm, multi-seed experiment grids described in TOML.
//!
//! ```toml
//! dataset = "cifar10-5k"
//! seeds = [1, 2, 3]
//! epochs = 30
//!
//! [[arm]]
//! name = "balanced-gated"
//! variant = "gated"
//! weight-quant = "balanced"
//! ```

use serde::{Deserialize, Serialize};

use crate::data::{DatasetId, Splits};
use crate::error::{Error, Result};
use crate::layers::{parse_kernel_stage, BlockVariant};
use crate::quant::WeightQuant;

use super::{train, RunReport, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridArm {
    pub name: String,
    pub variant: BlockVariant,
    pub weight_quant: WeightQuant,
    #[serde(default)]
    pub kernel_stage: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct GridSpec {
    pub dataset: DatasetId,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub lr: Option<f64>,
    #[serde(rename = "arm")]
    pub arms: Vec<GridArm>,
}

impl GridSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: GridSpec = toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))?;
        if spec.arms.is_empty() || spec.seeds.is_empty() {
            return Err(Error::InvalidArgument("grid needs at least one arm and one seed".into()));
        }
        Ok(spec)
    }

    /// The dataset preset with this grid's overrides and one arm applied.
    pub fn config(&self, arm: &GridArm, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig::preset(self.dataset);
        c.seed = seed;
        c.epochs = self.epochs.unwrap_or(c.epochs);
        c.train_limit = self.train_limit.or(c.train_limit);
        c.batch_size = self.batch_size.unwrap_or(c.batch_size);
        c.lr = self.lr.unwrap_or(c.lr);
        c.model = c.model.with_variant(arm.variant).with_quant(arm.weight_quant);
        if let Some(ks) = &arm.kernel_stage {
            c.model.kernel_stage = parse_kernel_stage(ks).map_err(Error::InvalidArgument)?;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ArmResult {
    pub arm: GridArm,
    pub runs: Vec<RunReport>,
}

impl ArmResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_accuracy.unwrap_or(0.0)).collect()
    }

    pub fn mean_accuracy(&self) -> f64 {
        let a = self.accuracies();
        a.iter().sum::<f64>() / a.len().max(1) as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GridReport {
    pub spec: GridSpec,
    pub arms: Vec<ArmResult>,
}

impl GridReport {
    pub fn arm(&self, name: &str) -> Option<&ArmResult> {
        self.arms.iter().find(|a| a.arm.name == name)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("arm,seed,accuracy\n");
        for a in &self.arms {
            for r in &a.runs {
                out += &format!("{},{},{}\n", a.arm.name, r.config.seed, r.final_accuracy.unwrap_or(0.0));
            }
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<20} {:<14} {:<10} {:>8}\n", "arm", "variant", "weights", "mean acc");
        for a in &self.arms {
            out += &format!(
                "{:<20} {:<14} {:<10} {:>8.4}\n",
                a.arm.name,
                a.arm.variant.to_string(),
                a.arm.weight_quant.to_string(),
                a.mean_accuracy()
            );
        }
        out
    }
}

/// Trains every arm once per seed on `splits`.
pub fn run_grid(spec: &GridSpec, splits: &Splits, verbose: bool) -> Result<GridReport> {
    let mut arms = Vec::new();
    for arm in &spec.arms {
        let mut runs = Vec::new();
        for &seed in &spec.seeds {
            let (_, report) = train(spec.config(arm, seed)?, splits)?;
            if verbose {
                eprintln!("{} seed {seed}: {:.4}", arm.name, report.final_accuracy.unwrap_or(0.0));
            }
            runs.push(report);
        }
        arms.push(ArmResult { arm: arm.clone(), runs });
    }
    Ok(GridReport { spec: spec.clone(), arms })
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
dataset = "toy-2class"
seeds = [1, 2]
epochs = 1

[[arm]]
name = "bg"
variant = "gated"
weight-quant = "balanced"

[[arm]]
name = "vi"
variant = "vanilla"
weight-quant = "vanilla"
kernel-stage = "8-16-32"
"#;

    #[test]
    fn parses_and_builds_configs() {
        let g = GridSpec::from_toml(GRID).unwrap();
        assert_eq!(g.arms.len(), 2);
        let c = g.config(&g.arms[1], 2).unwrap();
        assert_eq!(c.seed, 2);
        assert_eq!(c.epochs, 1);
        assert_eq!(c.model.kernel_stage, [8, 16, 32]);
        assert_eq!(c.model.weight_quant, WeightQuant::Vanilla);
    }

    #[test]
    fn shipped_experiments_parse() {
        for text in [
            include_str!("../../../../experiments/ablation.toml"),
            include_str!("../../../../experiments/kernel_stage.toml"),
        ] {
            let g = GridSpec::from_toml(text).unwrap();
            for arm in &g.arms {
                g.config(arm, 1).unwrap();
            }
        }
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(GridSpec::from_toml(&GRID.replace("epochs", "epoch")).is_err());
    }

    #[test]
    fn runs_every_arm_and_seed() {
        let g = GridSpec::from_toml(GRID).unwrap();
        let r = run_grid(&g, &crate::data::toy_two_class(3), false).unwrap();
        assert_eq!(r.to_csv().lines().count(), 5);
        assert!(r.arm("bg").unwrap().mean_accuracy() > 0.0);
    }
}
