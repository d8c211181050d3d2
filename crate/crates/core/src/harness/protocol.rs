//! The nested experiment loop: subjects × trackers × scenarios × trials.

use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Config, Timing, TrackerKind};
use super::metrics::{compute_de, compute_fps, compute_fs, FrameLog, FsRule, TrialLog};
use super::report::{MetricsReport, TrialRow};
use crate::baseline::BaselineTracker;
use crate::control::{depth_at_box, FollowController};
use crate::dtrd::{DtrdModel, DtrdTracker};
use crate::error::{Error, Result};
use crate::perception::{initialize_target, FaceEmbedding, IdentityGallery};
use crate::sim::record::quantize;
use crate::sim::{build_world, render_rgbd, scenario, ScenarioName, SubjectPreset, WorldState};
use crate::tracker::Tracker;

#[derive(Debug, Clone, PartialEq)]
pub struct TrialKey {
    pub subject: String,
    pub tracker: TrackerKind,
    pub scenario: ScenarioName,
    pub trial: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub key: TrialKey,
    pub log: TrialLog,
    pub row: TrialRow,
}

/// Independent random streams of one trial.
pub struct TrialRngs {
    pub world: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub perception: ChaCha8Rng,
}

/// Seeds depend on the experiment seed, subject, scenario and trial number
/// only, so every tracker faces the same worlds and noise.
pub fn trial_rngs(seed: u64, subject: &str, scenario: ScenarioName, trial: usize) -> TrialRngs {
    let code = subject.bytes().fold(0u64, |h, b| h.wrapping_mul(131).wrapping_add(b as u64));
    let sc = ScenarioName::ALL.iter().position(|s| *s == scenario).unwrap_or(0) as u64;
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    master.set_stream((code << 24) ^ (sc << 16) ^ trial as u64);
    TrialRngs {
        world: ChaCha8Rng::seed_from_u64(master.gen()),
        noise: ChaCha8Rng::seed_from_u64(master.gen()),
        perception: ChaCha8Rng::seed_from_u64(master.gen()),
    }
}

pub fn make_tracker(kind: TrackerKind, model: Option<&Arc<DtrdModel>>, search_area_factor: f64) -> Result<Box<dyn Tracker>> {
    let need = || {
        model
            .cloned()
            .ok_or_else(|| Error::Config(format!("tracker {kind} needs a trained checkpoint")))
    };
    Ok(match kind {
        TrackerKind::Baseline => Box::new(BaselineTracker::new(search_area_factor)),
        TrackerKind::Dtrd => Box::new(DtrdTracker::new(need()?)),
        TrackerKind::DtrdNoDepth => Box::new(DtrdTracker::new(need()?).without_depth()),
    })
}

/// Builds the world of a trial.
pub fn trial_world(cfg: &Config, subject: &SubjectPreset, name: ScenarioName, rng: &mut ChaCha8Rng) -> Result<WorldState> {
    let sc = scenario(name, &cfg.scenario, subject.speed)?;
    build_world(&sc, subject, &cfg.scenario, rng)
}

/// Runs one trial: identify the target, then perceive, track, control and
/// step until the target closes its loop or time runs out.
pub fn run_trial(cfg: &Config, key: &TrialKey, tracker: &mut dyn Tracker) -> Result<TrialResult> {
    let exp = &cfg.experiment;
    let subject = SubjectPreset::named(&key.subject)?;
    let mut rngs = trial_rngs(exp.seed, &key.subject, key.scenario, key.trial);
    let mut world = trial_world(cfg, &subject, key.scenario, &mut rngs.world)?;
    let gallery = IdentityGallery::new(
        FaceEmbedding::new(world.target().identity.clone())?,
        cfg.perception.threshold,
    )?;
    let target = world.target_index();
    let mut control = FollowController::new(&cfg.control)?;
    let mut log = TrialLog {
        frames: Vec::new(),
        path_length: world.target().path.length(),
        initialized: false,
    };
    let mut attempts = 0;

    while !world.target().finished() && world.time < exp.timeout {
        let view = render_rgbd(&world, &cfg.camera, &cfg.render, Some(&mut rngs.noise))?;
        let frame = quantize(&view.frame)?;
        let mut entry = FrameLog {
            time: world.time,
            tracker_box: None,
            depth_estimate: None,
            target_box: view.visible_box(target)?,
            true_distance: world.target_distance(),
            target_step: 0.0,
            process_time: None,
        };
        let mut command = (0.0, 0.0);
        if !log.initialized {
            if attempts >= exp.init_attempts {
                break;
            }
            attempts += 1;
            let found = initialize_target(&world, &view, &cfg.render, &gallery, &cfg.perception, &mut rngs.perception)?;
            if let Ok(det) = found {
                tracker.init(&frame, &det.bbox)?;
                log.initialized = true;
            }
        } else {
            let start = Instant::now();
            let out = tracker.step(&frame)?;
            let elapsed = start.elapsed().as_secs_f64();
            entry.process_time = Some(match exp.timing {
                Timing::Wall => elapsed.max(1e-9),
                Timing::Nominal => exp.nominal_frame_time,
            });
            let depth = depth_at_box(&frame, &out.bbox);
            entry.tracker_box = Some(out.bbox);
            entry.depth_estimate = depth;
            command = control.follow(depth.map(|d| (&out.bbox, d)), exp.dt)?;
        }
        let before = world.target().position;
        world.set_command(command.0, command.1);
        world.advance(exp.dt)?;
        let after = world.target().position;
        entry.target_step = (after.0 - before.0).hypot(after.1 - before.1);
        log.frames.push(entry);
    }

    let rule = FsRule {
        min_iou: cfg.metrics.fs_iou,
        grace_frames: cfg.metrics.fs_grace_frames,
    };
    let fs = compute_fs(&log, &rule)?;
    let row = TrialRow {
        subject: key.subject.clone(),
        tracker: key.tracker,
        scenario: key.scenario,
        trial: key.trial,
        de: compute_de(&log).unwrap_or(f64::NAN),
        fs,
        fps: compute_fps(&log).unwrap_or(f64::NAN),
        initialized: log.initialized,
    };
    Ok(TrialResult {
        key: key.clone(),
        log,
        row,
    })
}

/// Every trial key of the configured experiment in loop order.
pub fn trial_keys(cfg: &Config) -> Vec<TrialKey> {
    let e = &cfg.experiment;
    let mut keys = Vec::new();
    for subject in &e.subjects {
        for &tracker in &e.trackers {
            for &scenario in &e.scenarios {
                for trial in 1..=e.trials {
                    keys.push(TrialKey {
                        subject: subject.clone(),
                        tracker,
                        scenario,
                        trial,
                    });
                }
            }
        }
    }
    keys
}

/// Runs the whole experiment; `progress` sees each finished trial.
pub fn run_protocol(
    cfg: &Config,
    model: Option<Arc<DtrdModel>>,
    progress: &mut dyn FnMut(&TrialResult),
) -> Result<MetricsReport> {
    cfg.validate()?;
    if cfg.experiment.trackers.iter().any(|k| k.needs_model()) && model.is_none() {
        return Err(Error::Config("a trained checkpoint is required for the dtrd trackers".into()));
    }
    let mut rows = Vec::new();
    for key in trial_keys(cfg) {
        let mut tracker = make_tracker(key.tracker, model.as_ref(), cfg.tracker.search_area_factor)?;
        let result = run_trial(cfg, &key, tracker.as_mut())?;
        progress(&result);
        rows.push(result.row);
    }
    Ok(MetricsReport { rows })
}
