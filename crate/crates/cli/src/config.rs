//! Run configuration: one TOML file drives every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use posepyr_core::decode::InferenceConfig;
use posepyr_core::eval::{AreaRanges, OksConstants};
use posepyr_core::model::ModelConfig;
use posepyr_core::supervision::{AugmentConfig, LossWeights, DEFAULT_SIGMA};
use posepyr_core::synthdata::SceneConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fractions of `epochs` after which the learning rate is multiplied by
    /// `lr_decay`; the defaults keep the 200/260-of-300 proportions.
    pub lr_drops: Vec<f64>,
    pub lr_decay: f64,
    pub seed: u64,
    pub loss_weights: LossWeights,
    pub sigma: f64,
    pub augment: bool,
    pub augmentation: AugmentConfig,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
    /// Evaluate on the validation split every this many epochs; 0 disables.
    pub eval_every: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 8,
            lr: 1e-3,
            lr_drops: vec![200.0 / 300.0, 260.0 / 300.0],
            lr_decay: 0.1,
            seed: 0,
            loss_weights: LossWeights::default(),
            sigma: DEFAULT_SIGMA,
            augment: true,
            augmentation: AugmentConfig::default(),
            checkpoint_every: 0,
            eval_every: 0,
        }
    }
}

impl TrainingConfig {
    /// Epoch indices (0-based) from which each decay applies.
    pub fn drop_epochs(&self) -> Vec<usize> {
        self.lr_drops
            .iter()
            .map(|f| (f * self.epochs as f64).round() as usize)
            .collect()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.drop_epochs().iter().filter(|&&d| epoch >= d).count();
        self.lr * self.lr_decay.powi(drops as i32)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs > 0, "training.epochs must be positive");
        ensure!(self.batch_size > 0, "training.batch_size must be positive");
        ensure!(
            self.lr > 0.0,
            "training.lr must be positive, got {}",
            self.lr
        );
        ensure!(
            self.lr_decay > 0.0 && self.lr_decay <= 1.0,
            "training.lr_decay must be in (0, 1], got {}",
            self.lr_decay
        );
        ensure!(self.sigma > 0.0, "training.sigma must be positive");
        let drops = self.drop_epochs();
        for (i, &d) in drops.iter().enumerate() {
            if d == 0 || d >= self.epochs || (i > 0 && d <= drops[i - 1]) {
                bail!(
                    "LR drop epochs {drops:?} (from fractions {:?} of {} epochs) must be strictly \
                     increasing, positive and below the epoch count",
                    self.lr_drops,
                    self.epochs
                );
            }
        }
        if self.augment {
            self.augmentation.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub scene: SceneConfig,
    /// Overrides for the validation split; defaults to `scene` with seed + 1.
    pub val_scene: Option<SceneConfig>,
    pub train_images: usize,
    pub val_images: usize,
    /// Per-keypoint OKS constants; uniform 0.08 when absent.
    pub oks_constants: Option<Vec<f64>>,
    pub area_ranges: AreaRanges,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            scene: SceneConfig {
                image_size: 128,
                scale_range: [40.0, 120.0],
                ..SceneConfig::default()
            },
            val_scene: None,
            train_images: 64,
            val_images: 16,
            oks_constants: None,
            area_ranges: AreaRanges::default(),
        }
    }
}

impl DataConfig {
    pub fn val_scene(&self) -> SceneConfig {
        self.val_scene.clone().unwrap_or_else(|| SceneConfig {
            seed: self.scene.seed.wrapping_add(1),
            ..self.scene.clone()
        })
    }

    pub fn oks(&self, num_keypoints: usize) -> Result<OksConstants> {
        Ok(match &self.oks_constants {
            Some(k) => OksConstants::new(k.clone())?,
            None => OksConstants::uniform(num_keypoints, 0.08)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub train_data: PathBuf,
    pub val_data: PathBuf,
    pub output_dir: PathBuf,
    pub checkpoint: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            train_data: "data/train".into(),
            val_data: "data/val".into(),
            output_dir: "runs/default".into(),
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "ModelConfig::toy")]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub inference: InferenceConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::toy(),
            training: TrainingConfig::default(),
            inference: InferenceConfig::default(),
            data: DataConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let cfg: Self =
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        cfg.validate()
            .with_context(|| format!("validating {}", path.display()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.training.validate()?;
        self.inference.validate()?;
        for (name, scene) in [
            ("scene", &self.data.scene),
            ("val_scene", &self.data.val_scene()),
        ] {
            scene.validate().with_context(|| format!("data.{name}"))?;
            ensure!(
                scene.num_keypoints == self.model.num_keypoints,
                "data.{name}.num_keypoints = {} but model.num_keypoints = {}",
                scene.num_keypoints,
                self.model.num_keypoints
            );
        }
        if let Some(k) = &self.data.oks_constants {
            ensure!(
                k.len() == self.model.num_keypoints,
                "data.oks_constants has {} entries for {} keypoints",
                k.len(),
                self.model.num_keypoints
            );
        }
        self.data.oks(self.model.num_keypoints)?;
        Ok(())
    }
}
