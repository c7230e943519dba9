//! The `pipeline/1` configuration file.

use std::path::{Path, PathBuf};

use mocap_core::SceneConfig;
use mocap_net::TrainConfig;
use mocap_refine::{FitOptions, RefineOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const CONFIG_FORMAT: &str = "pipeline/1";

/// How the paired training windows are cut. Pairs always come from the
/// scene's own monocular and sparse-view fits; `extra_scenes` adds fitted
/// pairs from further synthetic scenes (seeds `seed + 1 ..`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingSet {
    pub window: usize,
    pub stride: usize,
    pub extra_scenes: usize,
}

impl Default for TrainingSet {
    fn default() -> Self {
        TrainingSet {
            window: 64,
            stride: 28,
            extra_scenes: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub out: Option<PathBuf>,
    /// Skeleton used by every stage after `synth`; defaults to the one
    /// written by `synth`.
    pub skeleton: Option<PathBuf>,
    /// Read by `infer` and by `run --skip-train`; written by `train`.
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub format: String,
    /// Overrides the scene and training seeds.
    pub seed: u64,
    pub scene: SceneConfig,
    pub training_set: TrainingSet,
    pub train: TrainConfig,
    pub fit: FitOptions,
    pub refine: RefineOptions,
    pub paths: Paths,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            format: CONFIG_FORMAT.to_string(),
            seed: 42,
            scene: SceneConfig::default(),
            training_set: TrainingSet::default(),
            train: TrainConfig {
                epochs: 200,
                batch: 4,
                ..Default::default()
            },
            fit: FitOptions::default(),
            refine: RefineOptions::default(),
            paths: Paths::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if cfg.format != CONFIG_FORMAT {
            return Err(CliError::Config(format!(
                "unsupported format {:?} (expected {CONFIG_FORMAT:?})",
                cfg.format
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            CliError::Config(msg) => CliError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Copies the top-level seed into the scene and the trainer.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.scene.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn out_dir(&self) -> PathBuf {
        self.paths.out.clone().unwrap_or_else(|| PathBuf::from("out"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| CliError::Config(e.to_string());
        self.scene.validate().map_err(|e| bad(&e))?;
        self.train.validate().map_err(|e| bad(&e))?;
        self.fit.weights.validate(None).map_err(|e| bad(&e))?;
        self.fit.lm.validate().map_err(|e| bad(&e))?;
        self.refine.weights.validate(None).map_err(|e| bad(&e))?;
        self.refine.lm.validate().map_err(|e| bad(&e))?;
        if self.refine.flipflop_rounds == 0 {
            return Err(CliError::Config("refine.flipflop_rounds must be at least 1".into()));
        }
        let ts = &self.training_set;
        if ts.stride == 0 {
            return Err(CliError::Config("training_set.stride must be positive".into()));
        }
        if ts.window < 7 {
            return Err(CliError::Config(format!("training window {} is shorter than the kernel", ts.window)));
        }
        let empty = |p: &Option<PathBuf>| p.as_ref().is_some_and(|p| p.as_os_str().is_empty());
        if empty(&self.paths.out) || empty(&self.paths.skeleton) || empty(&self.paths.checkpoint) {
            return Err(CliError::Config("paths must not be empty".into()));
        }
        Ok(())
    }
}
