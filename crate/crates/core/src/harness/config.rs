//! Experiment configuration: a TOML file of `section.key = value` lines.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::control::ControlConfig;
use crate::dtrd::{TrackerConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::perception::PerceptionConfig;
use crate::sim::{CameraModel, RenderConfig, ScenarioConfig, ScenarioName, SubjectPreset};

/// Environment variable overriding `experiment.seed`.
pub const SEED_ENV: &str = "UCF_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerKind {
    Baseline,
    Dtrd,
    /// The RGB-D tracker fed zeros in place of depth.
    DtrdNoDepth,
}

impl TrackerKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrackerKind::Baseline => "baseline",
            TrackerKind::Dtrd => "dtrd",
            TrackerKind::DtrdNoDepth => "dtrd_no_depth",
        }
    }

    pub fn needs_model(&self) -> bool {
        !matches!(self, TrackerKind::Baseline)
    }
}

impl fmt::Display for TrackerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrackerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [TrackerKind::Baseline, TrackerKind::Dtrd, TrackerKind::DtrdNoDepth]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown tracker {s:?}")))
    }
}

/// How tracker processing time is charged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Timing {
    /// Measured wall-clock time.
    Wall,
    /// A fixed `nominal_frame_time` per frame, for byte-reproducible reports.
    Nominal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub subjects: Vec<String>,
    pub trackers: Vec<TrackerKind>,
    pub scenarios: Vec<ScenarioName>,
    pub trials: usize,
    /// Simulation and control step, seconds.
    pub dt: f64,
    /// Trial time limit, seconds.
    pub timeout: f64,
    /// Frames allowed for target identification before a trial fails.
    pub init_attempts: usize,
    pub timing: Timing,
    pub nominal_frame_time: f64,
    pub checkpoint: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 2023,
            subjects: vec!["A".into(), "B".into()],
            trackers: vec![TrackerKind::Baseline, TrackerKind::Dtrd],
            scenarios: ScenarioName::ALL.to_vec(),
            trials: 3,
            dt: 0.05,
            timeout: 120.0,
            init_attempts: 100,
            timing: Timing::Wall,
            nominal_frame_time: 0.025,
            checkpoint: PathBuf::from("dtrd.ckpt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding one subdirectory per recorded sequence.
    pub dir: PathBuf,
    pub corpus_size: usize,
    /// Simulation steps between recorded frames.
    pub record_stride: usize,
    pub train_fraction: f64,
    /// Largest frame distance between the two frames of a pair.
    pub max_gap: usize,
    pub pairs_per_epoch: usize,
    pub eval_pairs: usize,
    /// Search-window center jitter, as a fraction of the box size.
    pub center_jitter: f64,
    /// Search-window scale jitter, as a fraction of the box size.
    pub scale_jitter: f64,
    /// Share of pairs whose search frame has a distractor near the target.
    pub distractor_fraction: f64,
    /// Share of pairs whose target is partly or fully hidden by a nearer agent.
    pub occluded_fraction: f64,
    /// Share of distractor pairs whose window is centered on the distractor.
    pub drift_fraction: f64,
    pub loss_csv: PathBuf,
    pub metrics_csv: PathBuf,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: PathBuf::from("data"),
            corpus_size: 45,
            record_stride: 4,
            train_fraction: 0.7,
            max_gap: 50,
            pairs_per_epoch: 1000,
            eval_pairs: 300,
            center_jitter: 0.2,
            scale_jitter: 0.1,
            distractor_fraction: 0.25,
            occluded_fraction: 0.25,
            drift_fraction: 0.0,
            loss_csv: PathBuf::from("loss.csv"),
            metrics_csv: PathBuf::from("train_metrics.csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    /// Minimum IoU with the target's box for a frame to count as following.
    pub fs_iou: f64,
    /// Consecutive non-following frames after which the target is lost.
    pub fs_grace_frames: usize,
    /// Real-time bar, frames per second.
    pub fps_floor: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            fs_iou: 0.3,
            fs_grace_frames: 40,
            fps_floor: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub experiment: ExperimentConfig,
    pub tracker: TrackerConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub control: ControlConfig,
    pub scenario: ScenarioConfig,
    pub camera: CameraModel,
    pub render: RenderConfig,
    pub perception: PerceptionConfig,
    pub metrics: MetricsConfig,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, resolves relative paths against its directory and
    /// applies the seed override from the environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Config::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.experiment.checkpoint,
            &mut cfg.data.dir,
            &mut cfg.data.loss_csv,
            &mut cfg.data.metrics_csv,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.apply_env()?;
        Ok(cfg)
    }

    /// Applies `UCF_SEED` when set.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.experiment.seed = v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let e = &self.experiment;
        if e.trials == 0 || e.trackers.is_empty() || e.scenarios.is_empty() || e.subjects.is_empty() {
            return Err(Error::Config(
                "experiment needs at least one trial, tracker, scenario and subject".into(),
            ));
        }
        for s in &e.subjects {
            SubjectPreset::named(s).map_err(|_| Error::Config(format!("unknown subject {s:?}")))?;
        }
        if !(e.dt > 0.0 && e.timeout > 0.0 && e.nominal_frame_time > 0.0) {
            return Err(Error::Config("dt, timeout and nominal_frame_time must be positive".into()));
        }
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return Err(Error::Config("data.train_fraction must lie in (0, 1)".into()));
        }
        if self.data.record_stride == 0 || self.data.max_gap == 0 {
            return Err(Error::Config("data.record_stride and data.max_gap must be positive".into()));
        }
        self.tracker.validate()?;
        self.camera.validate()
    }
}
