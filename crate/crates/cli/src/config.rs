//! Versioned run configuration.
//!
//! The on-disk format is TOML with a mandatory `version` field. Unknown
//! keys anywhere in the file are errors: a misspelled hyperparameter must
//! fail loudly, not train silently with a default. Every run writes its
//! resolved configuration next to its results, and the representation
//! round-trips losslessly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scaleout_core::data::{AugmentPolicy, CropMode, DatasetHandle, SyntheticSpec};
use scaleout_core::dist::{ClusterSpec, Transport};
use scaleout_core::nn::{Arch, BnConfig, ModelSpec};
use scaleout_core::optim::OptimConfig;
use scaleout_core::sched::{
    build_3step, build_collapsed_ensemble, build_constant_wd, build_final_collapse, build_linear,
    ScalingRule, ScheduleBundle,
};
use scaleout_core::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub model: ModelSection,
    pub cluster: ClusterSection,
    pub data: DataSection,
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub optim: OptimSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub architecture: String,
    /// `[channels, height, width]`.
    pub input: [usize; 3],
    pub classes: usize,
    pub seed: u64,
    /// MLP hidden widths.
    pub hidden: Option<Vec<usize>>,
    /// Residual-net width.
    pub channels: Option<usize>,
    /// Residual-net block count.
    pub blocks: Option<usize>,
    #[serde(default)]
    pub bn: BnSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BnSection {
    pub beta: f64,
    pub epsilon: f32,
    pub gamma_init_final_block: f32,
    /// Train with frozen (accumulated) statistics.
    pub frozen: bool,
}

impl Default for BnSection {
    fn default() -> Self {
        let d = BnConfig::default();
        BnSection {
            beta: d.beta,
            epsilon: d.epsilon,
            gamma_init_final_block: d.gamma_init_final_block,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSection {
    pub workers: usize,
    pub local_batch: usize,
    /// `in-process` or `tcp`.
    pub transport: String,
    /// Listen addresses, rank order (tcp only).
    #[serde(default)]
    pub endpoints: Vec<String>,
    #[serde(default = "default_true")]
    pub deterministic: bool,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `idx`.
    pub source: String,
    pub classes: usize,
    // synthetic fields
    pub n_train: Option<usize>,
    pub n_val: Option<usize>,
    pub separation: Option<f64>,
    pub cluster_std: Option<f64>,
    pub seed: Option<u64>,
    // idx fields
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub val_images: Option<PathBuf>,
    pub val_labels: Option<PathBuf>,
    #[serde(default)]
    pub augment: AugmentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub enabled: bool,
    pub scale_area: [f64; 2],
    pub aspect: [f64; 2],
    /// `center` or `random`.
    pub crop: String,
}

impl Default for AugmentSection {
    fn default() -> Self {
        AugmentSection {
            enabled: false,
            scale_area: [0.08, 1.0],
            aspect: [0.75, 4.0 / 3.0],
            crop: "random".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSection {
    /// `linear`, `three-step`, `final-collapse`, or `collapsed-ensemble`.
    pub builder: String,
    pub total_epochs: u32,
    pub base_lr_per_256: f64,
    pub lr_cap: f64,
    pub warmup_epochs: f64,
    /// Constant weight decay for `linear` and `three-step`.
    pub weight_decay: Option<f64>,
    /// Collapse length for `final-collapse`.
    pub collapse_epochs: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub momentum: f64,
    pub decay_bn_params: bool,
}

impl Default for OptimSection {
    fn default() -> Self {
        let d = OptimConfig::default();
        OptimSection {
            momentum: d.momentum,
            decay_bn_params: d.decay_bn_params,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub epochs: u32,
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "default_eval_batch")]
    pub eval_batch: usize,
}

fn default_eval_batch() -> usize {
    256
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("parse error: {e}")))?;
        if config.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config version {} not supported (expected {CONFIG_VERSION})",
                config.version
            )));
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(format!("serialize: {e}")))
    }

    fn validate(&self) -> Result<()> {
        self.model_spec()?.validate()?;
        self.cluster_spec()?.validate()?;
        self.augment_policy()?.validate()?;
        self.optim_config()?;
        if self.model.classes != self.data.classes {
            return Err(Error::Config(format!(
                "model.classes = {} but data.classes = {}",
                self.model.classes, self.data.classes
            )));
        }
        if self.run.epochs > self.schedule.total_epochs {
            return Err(Error::Config(format!(
                "run.epochs = {} exceeds schedule.total_epochs = {}",
                self.run.epochs, self.schedule.total_epochs
            )));
        }
        match self.data.source.as_str() {
            "synthetic" => {
                for (name, missing) in [
                    ("n_train", self.data.n_train.is_none()),
                    ("n_val", self.data.n_val.is_none()),
                ] {
                    if missing {
                        return Err(Error::Config(format!(
                            "synthetic data needs data.{name}"
                        )));
                    }
                }
            }
            "idx" => {
                if self.data.train_images.is_none()
                    || self.data.train_labels.is_none()
                    || self.data.val_images.is_none()
                    || self.data.val_labels.is_none()
                {
                    return Err(Error::Config(
                        "idx data needs train_images/train_labels/val_images/val_labels".into(),
                    ));
                }
            }
            other => return Err(Error::Config(format!("unknown data source '{other}'"))),
        }
        match self.schedule.builder.as_str() {
            "linear" | "three-step" | "final-collapse" | "collapsed-ensemble" => {}
            other => return Err(Error::Config(format!("unknown schedule builder '{other}'"))),
        }
        Ok(())
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        let arch = match self.model.architecture.as_str() {
            "mlp" => Arch::Mlp {
                hidden: self
                    .model
                    .hidden
                    .clone()
                    .ok_or_else(|| Error::Config("mlp needs model.hidden".into()))?,
            },
            "small-resnet" => Arch::SmallResnet {
                channels: self
                    .model
                    .channels
                    .ok_or_else(|| Error::Config("small-resnet needs model.channels".into()))?,
                blocks: self
                    .model
                    .blocks
                    .ok_or_else(|| Error::Config("small-resnet needs model.blocks".into()))?,
            },
            other => return Err(Error::Config(format!("unknown architecture '{other}'"))),
        };
        Ok(ModelSpec {
            arch,
            input: self.model.input,
            classes: self.model.classes,
            bn: BnConfig {
                beta: self.model.bn.beta,
                epsilon: self.model.bn.epsilon,
                gamma_init_final_block: self.model.bn.gamma_init_final_block,
            },
            seed: self.model.seed,
        })
    }

    pub fn cluster_spec(&self) -> Result<ClusterSpec> {
        let transport = match self.cluster.transport.as_str() {
            "in-process" => Transport::InProcess,
            "tcp" => Transport::Tcp {
                endpoints: self.cluster.endpoints.clone(),
            },
            other => return Err(Error::Config(format!("unknown transport '{other}'"))),
        };
        Ok(ClusterSpec {
            n_workers: self.cluster.workers,
            local_batch: self.cluster.local_batch,
            transport,
            deterministic_reduce: self.cluster.deterministic,
        })
    }

    pub fn augment_policy(&self) -> Result<AugmentPolicy> {
        let crop = match self.data.augment.crop.as_str() {
            "center" => CropMode::Center,
            "random" => CropMode::Random,
            other => return Err(Error::Config(format!("unknown crop mode '{other}'"))),
        };
        Ok(AugmentPolicy {
            enabled: self.data.augment.enabled,
            scale_area_range: self.data.augment.scale_area,
            aspect_range: self.data.augment.aspect,
            crop,
        })
    }

    pub fn optim_config(&self) -> Result<OptimConfig> {
        if !(0.0..1.0).contains(&self.optim.momentum) {
            return Err(Error::Config(format!(
                "optim.momentum must be in [0, 1), got {}",
                self.optim.momentum
            )));
        }
        Ok(OptimConfig {
            momentum: self.optim.momentum,
            decay_bn_params: self.optim.decay_bn_params,
        })
    }

    pub fn load_dataset(&self) -> Result<DatasetHandle> {
        match self.data.source.as_str() {
            "synthetic" => DatasetHandle::synthetic(&SyntheticSpec {
                classes: self.data.classes,
                geometry: self.model.input,
                n_train: self.data.n_train.unwrap(),
                n_val: self.data.n_val.unwrap(),
                separation: self.data.separation.unwrap_or(2.0),
                cluster_std: self.data.cluster_std.unwrap_or(1.0),
                seed: self.data.seed.unwrap_or(0),
            }),
            "idx" => DatasetHandle::from_idx(
                self.data.train_images.as_ref().unwrap(),
                self.data.train_labels.as_ref().unwrap(),
                self.data.val_images.as_ref().unwrap(),
                self.data.val_labels.as_ref().unwrap(),
                self.data.classes,
            ),
            other => Err(Error::Config(format!("unknown data source '{other}'"))),
        }
    }

    pub fn scaling_rule(&self) -> ScalingRule {
        ScalingRule {
            base_lr_per_256: self.schedule.base_lr_per_256,
            lr_cap: self.schedule.lr_cap,
            warmup_epochs: self.schedule.warmup_epochs,
        }
    }

    /// Build the schedule bundle for a run over `iters_per_epoch`.
    pub fn schedule_bundle(&self, global_batch: u64, iters_per_epoch: u64) -> Result<ScheduleBundle> {
        let rule = self.scaling_rule();
        let epochs = self.schedule.total_epochs;
        let total_iters = epochs as u64 * iters_per_epoch;
        let wd = self.schedule.weight_decay.unwrap_or(1e-4);
        match self.schedule.builder.as_str() {
            "linear" => Ok(ScheduleBundle {
                lr: build_linear(&rule, global_batch, iters_per_epoch, epochs)?,
                weight_decay: build_constant_wd(wd, total_iters)?,
                snapshot_epochs: Vec::new(),
                augmentation_off_at: None,
            }),
            "three-step" => Ok(ScheduleBundle {
                lr: build_3step(&rule, global_batch, iters_per_epoch, epochs)?,
                weight_decay: build_constant_wd(wd, total_iters)?,
                snapshot_epochs: Vec::new(),
                augmentation_off_at: None,
            }),
            "final-collapse" => {
                let base = build_linear(&rule, global_batch, iters_per_epoch, epochs)?;
                let collapse = self.schedule.collapse_epochs.ok_or_else(|| {
                    Error::Config("final-collapse needs schedule.collapse_epochs".into())
                })?;
                build_final_collapse(&base, iters_per_epoch, collapse)
            }
            "collapsed-ensemble" => {
                build_collapsed_ensemble(&rule, global_batch, iters_per_epoch, epochs)
            }
            other => Err(Error::Config(format!("unknown schedule builder '{other}'"))),
        }
    }
}
