//! Trial logs and the distance-error, following-success and throughput metrics.

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};

/// Largest reportable following success; the interval is open at 1.
pub const FS_MAX: f64 = 1.0 - 1e-9;

/// What happened on one simulation step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameLog {
    pub time: f64,
    pub tracker_box: Option<BoundingBox>,
    /// Median depth inside the tracker box, meters.
    pub depth_estimate: Option<f64>,
    /// Visible extent of the target, when visible.
    pub target_box: Option<BoundingBox>,
    /// Exact robot-to-target distance, meters.
    pub true_distance: f64,
    /// Distance the target walked during this step, meters.
    pub target_step: f64,
    /// Tracker processing time, seconds; `None` when the tracker did not run.
    pub process_time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrialLog {
    pub frames: Vec<FrameLog>,
    /// Full length of the target's path, meters.
    pub path_length: f64,
    pub initialized: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FsRule {
    pub min_iou: f64,
    pub grace_frames: usize,
}

impl Default for FsRule {
    fn default() -> Self {
        FsRule {
            min_iou: 0.3,
            grace_frames: 40,
        }
    }
}

impl FsRule {
    pub fn is_following(&self, f: &FrameLog) -> bool {
        match (f.tracker_box, f.target_box) {
            (Some(t), Some(g)) => iou(&t, &g) >= self.min_iou,
            _ => false,
        }
    }
}

/// Mean absolute difference between the depth estimate and the true
/// distance over frames with tracker output.
pub fn compute_de(log: &TrialLog) -> Result<f64> {
    let errs: Vec<f64> = log
        .frames
        .iter()
        .filter(|f| f.tracker_box.is_some())
        .filter_map(|f| f.depth_estimate.map(|d| (d - f.true_distance).abs()))
        .collect();
    if errs.is_empty() {
        return Err(Error::contract("distance error needs at least one frame with tracker output"));
    }
    Ok(errs.iter().sum::<f64>() / errs.len() as f64)
}

/// Share of the target's path walked while the robot was following it.
/// Following ends for good after `grace_frames` consecutive failures.
pub fn compute_fs(log: &TrialLog, rule: &FsRule) -> Result<f64> {
    if !(log.path_length > 0.0) {
        return Err(Error::contract("following success needs a positive path length"));
    }
    let mut covered = 0.0;
    let mut misses = 0;
    for f in &log.frames {
        if rule.is_following(f) {
            misses = 0;
            covered += f.target_step;
        } else {
            misses += 1;
            if misses >= rule.grace_frames {
                break;
            }
        }
    }
    Ok((covered / log.path_length).clamp(0.0, FS_MAX))
}

/// Processed frames per second of tracker time.
pub fn compute_fps(log: &TrialLog) -> Result<f64> {
    let times: Vec<f64> = log.frames.iter().filter_map(|f| f.process_time).collect();
    let total: f64 = times.iter().sum();
    if times.is_empty() || !(total > 0.0) {
        return Err(Error::contract("throughput needs at least one timed frame"));
    }
    Ok(times.len() as f64 / total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(on_target: bool, step: f64) -> FrameLog {
        let gt = BoundingBox::new(0.4, 0.2, 0.6, 0.9).unwrap();
        let off = BoundingBox::new(0.0, 0.2, 0.1, 0.9).unwrap();
        FrameLog {
            time: 0.0,
            tracker_box: Some(if on_target { gt } else { off }),
            depth_estimate: Some(if on_target { 2.0 } else { 1.0 }),
            target_box: Some(gt),
            true_distance: 2.0,
            target_step: step,
            process_time: Some(0.025),
        }
    }

    fn log(frames: Vec<FrameLog>) -> TrialLog {
        let path_length = frames.iter().map(|f| f.target_step).sum();
        TrialLog {
            frames,
            path_length,
            initialized: true,
        }
    }

    #[test]
    fn perfect_following_is_clamped() {
        let l = log(vec![frame(true, 0.04); 500]);
        assert_eq!(compute_fs(&l, &FsRule::default()).unwrap(), FS_MAX);
        assert!(compute_de(&l).unwrap() < 1e-12);
    }

    #[test]
    fn lost_at_midpoint() {
        let mut frames = vec![frame(true, 0.04); 250];
        frames.extend(vec![frame(false, 0.04); 250]);
        let fs = compute_fs(&log(frames), &FsRule::default()).unwrap();
        assert!((fs - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recovery_after_grace_does_not_count() {
        let mut frames = vec![frame(true, 0.04); 100];
        frames.extend(vec![frame(false, 0.04); 40]);
        frames.extend(vec![frame(true, 0.04); 360]);
        let fs = compute_fs(&log(frames), &FsRule::default()).unwrap();
        assert!((fs - 0.2).abs() < 1e-12);
    }

    #[test]
    fn locked_on_nearer_distractor() {
        let l = log(vec![frame(false, 0.04); 100]);
        assert!((compute_de(&l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn never_initialized() {
        let mut f = frame(true, 0.04);
        f.tracker_box = None;
        f.process_time = None;
        let l = log(vec![f; 10]);
        assert_eq!(compute_fs(&l, &FsRule::default()).unwrap(), 0.0);
        assert!(compute_de(&l).is_err());
        assert!(compute_fps(&l).is_err());
    }

    #[test]
    fn fps_arithmetic() {
        let l = log(vec![frame(true, 0.04); 100]);
        assert!((compute_fps(&l).unwrap() - 40.0).abs() < 1e-9);
        let mut one = frame(true, 0.04);
        one.process_time = Some(0.2);
        assert!((compute_fps(&log(vec![one])).unwrap() - 5.0).abs() < 1e-12);
    }
}
