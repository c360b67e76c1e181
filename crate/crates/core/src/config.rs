//! Run configuration: TOML file with strict keys, defaults matching the
//! standard training recipe, and construction of the system configuration
//! (optionally through a named ablation preset).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::AugmentProfile;
use crate::gaze::HvaConfig;
use crate::optim::LrSchedule;
use crate::system::StudentTeacherConfig;

#[derive(Error, Debug)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<V, E = ConfigError> = std::result::Result<V, E>;

/// Everything one training or inference run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub image_size: usize,
    pub patch: usize,
    pub window: usize,
    pub dim: usize,
    pub in_channels: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: LrSchedule,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub n_classes: usize,
    pub teacher_classes: usize,
    /// Named ablation preset; omitted means the full system.
    pub preset: Option<String>,
    pub teacher_frozen: bool,
    pub inter_lambda_in: (f64, f64),
    pub inter_lambda_out: (f64, f64),
    pub val_weights: (f64, f64),
    pub hvat_weights: (f64, f64),
    pub hva: HvaConfig,
    pub teacher_global_augment: AugmentProfile,
    pub teacher_focal_augment: AugmentProfile,
    pub student_global_augment: AugmentProfile,
    pub student_focal_augment: AugmentProfile,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 256,
            patch: 8,
            window: 4,
            dim: 32,
            in_channels: 1,
            batch_size: 64,
            epochs: 50,
            lr: LrSchedule::default(),
            early_stop_patience: 20,
            seed: 0,
            n_classes: 2,
            teacher_classes: 3,
            preset: None,
            teacher_frozen: true,
            inter_lambda_in: (0.5, 0.5),
            inter_lambda_out: (0.5, 0.5),
            val_weights: (1.0, 1.0),
            hvat_weights: (1.0, 1.0),
            hva: HvaConfig::default(),
            teacher_global_augment: AugmentProfile::TEACHER_GLOBAL,
            teacher_focal_augment: AugmentProfile::TEACHER_FOCAL,
            student_global_augment: AugmentProfile::STUDENT_GLOBAL,
            student_focal_augment: AugmentProfile::STUDENT_FOCAL,
        }
    }
}

/// Accepted spellings for each ablation preset.
pub fn canonical_preset(name: &str) -> Option<&'static str> {
    match name {
        "focal" | "focal-only" => Some("focal"),
        "global" | "global-only" => Some("global"),
        "focal-hvat" => Some("focal-hvat"),
        "global-hvat" => Some("global-hvat"),
        "focal-hvat-val" => Some("focal-hvat-val"),
        "global-hvat-val" => Some("global-hvat-val"),
        "gf-hvat-val" | "full" => Some("gf-hvat-val"),
        _ => None,
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch == 0 || self.image_size % self.patch != 0 {
            return Err(ConfigError::Invalid(format!(
                "image_size {} is not divisible by patch {}",
                self.image_size, self.patch
            )));
        }
        let tokens = self.image_size / self.patch;
        if self.window == 0 || tokens % self.window != 0 {
            return Err(ConfigError::Invalid(format!(
                "token grid {tokens} (image_size/patch) is not divisible by window {}",
                self.window
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(ConfigError::Invalid("batch_size and epochs must be positive".into()));
        }
        if self.lr.initial_lr <= 0.0 || self.lr.decay_steps == 0 {
            return Err(ConfigError::Invalid("learning-rate schedule must be positive".into()));
        }
        if let Some(name) = &self.preset {
            if canonical_preset(name).is_none() {
                return Err(ConfigError::Invalid(format!("unknown preset {name:?}")));
            }
        }
        self.hva
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        for p in [
            &self.teacher_global_augment,
            &self.teacher_focal_augment,
            &self.student_global_augment,
            &self.student_focal_augment,
        ] {
            p.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        self.system_config()
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Build the system architecture, applying the preset when named.
    pub fn system_config(&self) -> StudentTeacherConfig {
        let mut cfg = match self.preset.as_deref().and_then(canonical_preset) {
            Some(name) => StudentTeacherConfig::preset(
                name,
                self.dim,
                self.window,
                self.patch,
                self.in_channels,
                self.n_classes,
                self.teacher_classes,
            )
            .expect("canonical preset exists"),
            None => {
                let mut cfg = StudentTeacherConfig::standard(
                    self.dim,
                    self.window,
                    self.patch,
                    self.in_channels,
                    self.n_classes,
                    self.teacher_classes,
                );
                cfg.inter_lambda_in = self.inter_lambda_in;
                cfg.inter_lambda_out = self.inter_lambda_out;
                cfg.val_weights = self.val_weights;
                cfg
            }
        };
        cfg.hvat_weights = self.hvat_weights;
        cfg.teacher_frozen = self.teacher_frozen;
        cfg
    }

    pub fn tokens_per_side(&self) -> usize {
        self.image_size / self.patch
    }
}

/// Parse and validate a config file. An empty file yields all defaults.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let cfg: RunConfig = toml::from_str(text)?;
    cfg.validate()?;
    Ok(cfg)
}
