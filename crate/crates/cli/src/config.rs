//! Run configuration: config file first, then command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use crashcast::data::SynthConfig;
use crashcast::detection::DetectorConfig;
use crashcast::forecasting::ForecasterConfig;
use crashcast::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};

use crate::Overrides;

pub const DEFAULT_OUT: &str = "crashcast-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub videos: usize,
    pub train_frame_step: usize,
    pub eval_frame_step: usize,
    pub iou: f64,
    pub recall_target: f64,
    pub thresholds: usize,
    /// Overrides per-segment frame rates at evaluation.
    pub fps: Option<f64>,
    pub synth: SynthConfig,
    pub detector: DetectorConfig,
    pub forecaster: ForecasterConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let p = PipelineConfig::default();
        Self {
            seed: p.seed,
            videos: p.videos,
            train_frame_step: p.train_frame_step,
            eval_frame_step: p.eval_frame_step,
            iou: p.iou,
            recall_target: p.recall_target,
            thresholds: p.thresholds,
            fps: None,
            synth: p.synth,
            detector: p.detector,
            forecaster: p.forecaster,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
            self.detector.seed = v;
            self.forecaster.seed = v;
        }
        let ctx = &mut self.detector.context;
        if let Some(v) = o.context {
            ctx.mode = v;
        }
        if let Some(v) = o.nc {
            ctx.n_c = v;
        }
        if let Some(v) = o.m {
            ctx.m = v;
        }
        if let Some(v) = o.n {
            ctx.n = v;
        }
        if let Some(v) = o.stride {
            ctx.stride = v;
        }
        if let Some(v) = o.alpha {
            ctx.alpha = v;
        }
        if let Some(v) = o.iterations {
            self.detector.iterations = v;
        }
        if let Some(v) = o.epochs {
            self.forecaster.epochs = v;
        }
        if let Some(v) = o.max_objects {
            self.forecaster.max_objects = v;
        }
        if let Some(v) = o.recall_at {
            self.recall_target = v;
        }
        if o.fps.is_some() {
            self.fps = o.fps;
        }
        if let Some(v) = o.iou {
            self.iou = v;
        }
        if let Some(v) = o.thresholds {
            self.thresholds = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.detector.validate()?;
        self.forecaster.validate()?;
        self.synth.validate()?;
        anyhow::ensure!(self.iou > 0.0 && self.iou <= 1.0, "--iou must be in (0, 1]");
        anyhow::ensure!(
            self.recall_target > 0.0 && self.recall_target <= 1.0,
            "--recall-at must be in (0, 1]"
        );
        anyhow::ensure!(self.thresholds >= 2, "--thresholds needs at least 2 points");
        if let Some(f) = self.fps {
            anyhow::ensure!(f > 0.0, "--fps must be positive");
        }
        Ok(())
    }

    /// Writes `resolved/<command>.toml` under `out`.
    pub fn snapshot(&self, out: &Path, command: &str) -> Result<PathBuf> {
        let dir = out.join("resolved");
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(format!("{command}.toml"));
        let body = toml::to_string(self).context("serializing resolved config")?;
        std::fs::write(&path, format!("# crashcast {command}\n{body}"))
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
