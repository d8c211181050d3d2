//! Scripted experiment scenes: the target's rectangle and distractor walks.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::world::{Agent, AgentPath, Pose, WorldState};
use crate::error::{Error, Result};

/// Length of a face identity vector.
pub const IDENTITY_DIM: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioName {
    None,
    OneCross,
    TwoCross,
    TwoParallel,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 4] = [
        ScenarioName::None,
        ScenarioName::OneCross,
        ScenarioName::TwoCross,
        ScenarioName::TwoParallel,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioName::None => "none",
            ScenarioName::OneCross => "one_cross",
            ScenarioName::TwoCross => "two_cross",
            ScenarioName::TwoParallel => "two_parallel",
        }
    }

    pub fn distractors(&self) -> usize {
        match self {
            ScenarioName::None => 0,
            ScenarioName::OneCross => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::contract(format!("unknown scenario {s:?}")))
    }
}

/// Body and gait of one experiment subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectPreset {
    pub name: String,
    pub width: f64,
    pub height: f64,
    pub speed: f64,
}

impl SubjectPreset {
    pub fn named(name: &str) -> Result<Self> {
        let (width, height, speed) = match name {
            "A" => (0.5, 1.7, 0.8),
            "B" => (0.45, 1.6, 0.7),
            _ => return Err(Error::contract(format!("unknown subject {name:?}"))),
        };
        Ok(SubjectPreset {
            name: name.to_string(),
            width,
            height,
            speed,
        })
    }
}

/// A distractor walking straight across the target's path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    /// Target arc length at which the crossing happens, meters.
    pub at: f64,
    /// How far in front of the target (toward the follower) the distractor
    /// passes, meters.
    pub gap: f64,
    /// Starts on the target's left when true.
    pub from_left: bool,
    /// Half the length of the crossing walk, meters.
    pub half_length: f64,
    pub speed: f64,
    /// Seconds between the target reaching `at` and the distractor passing
    /// the crossing point.
    pub lead: f64,
}

/// A distractor walking beside the target along its first leg.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Parallel {
    /// Lateral offset from the target's line, meters, positive to its right.
    pub offset: f64,
    /// Start position ahead of the target along the leg, meters.
    pub ahead: f64,
    /// Length of the parallel walk, meters.
    pub length: f64,
    /// Seconds after the target starts walking.
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    /// Rectangle side along the robot's initial heading, meters.
    pub rect_length: f64,
    /// Rectangle side across the robot's initial heading, meters.
    pub rect_width: f64,
    /// Initial robot-to-target distance, meters.
    pub start_distance: f64,
    /// Seconds the target stands facing the robot before walking.
    pub target_delay: f64,
    pub distractor_width: f64,
    pub distractor_height: f64,
    pub clothing: [f64; 3],
    pub one_cross: Crossing,
    pub two_cross_first: Crossing,
    pub two_cross_second: Crossing,
    pub parallel_left: Parallel,
    pub parallel_right: Parallel,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let first = Crossing {
            at: 2.6,
            gap: 1.0,
            from_left: true,
            half_length: 3.0,
            speed: 0.8,
            lead: 0.0,
        };
        ScenarioConfig {
            rect_length: 6.0,
            rect_width: 4.0,
            start_distance: 2.0,
            target_delay: 1.0,
            distractor_width: 0.5,
            distractor_height: 1.7,
            clothing: [0.16, 0.24, 0.55],
            one_cross: first,
            two_cross_first: first,
            two_cross_second: Crossing {
                at: 12.0,
                gap: 0.4,
                from_left: false,
                ..first
            },
            parallel_left: Parallel {
                offset: -1.0,
                ahead: 0.3,
                length: 5.0,
                delay: 0.0,
            },
            parallel_right: Parallel {
                offset: 1.1,
                ahead: -0.2,
                length: 5.0,
                delay: 0.0,
            },
        }
    }
}

/// Paths of one scene before bodies and identities are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: ScenarioName,
    pub robot: Pose,
    pub target: AgentPath,
    pub distractors: Vec<AgentPath>,
}

impl Scenario {
    pub fn agent_count(&self) -> usize {
        1 + self.distractors.len()
    }
}

fn crossing_path(target: &AgentPath, cfg: &ScenarioConfig, c: &Crossing) -> Result<AgentPath> {
    let (p, heading) = target.point_at(c.at);
    let dir = (heading.cos(), heading.sin());
    let left = (-dir.1, dir.0);
    let q = (p.0 - c.gap * dir.0, p.1 - c.gap * dir.1);
    let sign = if c.from_left { 1.0 } else { -1.0 };
    let start = (q.0 + sign * c.half_length * left.0, q.1 + sign * c.half_length * left.1);
    let end = (q.0 - sign * c.half_length * left.0, q.1 - sign * c.half_length * left.1);
    let pass_time = cfg.target_delay + c.at / target.speed + c.lead;
    let start_delay = pass_time - c.half_length / c.speed;
    if start_delay < 0.0 {
        return Err(Error::Config(format!(
            "crossing at {} m would need to start before time zero",
            c.at
        )));
    }
    Ok(AgentPath {
        waypoints: vec![start, end],
        speed: c.speed,
        start_delay,
        stop_when_followed: true,
        initial_facing: None,
    })
}

fn parallel_path(target: &AgentPath, cfg: &ScenarioConfig, p: &Parallel) -> AgentPath {
    let (s0, heading) = target.point_at(0.0);
    let dir = (heading.cos(), heading.sin());
    let right = (dir.1, -dir.0);
    let start = (
        s0.0 + p.offset * right.0 + p.ahead * dir.0,
        s0.1 + p.offset * right.1 + p.ahead * dir.1,
    );
    let turn = (start.0 + p.length * dir.0, start.1 + p.length * dir.1);
    let away = p.offset.signum() * 4.0;
    let exit = (turn.0 + away * right.0, turn.1 + away * right.1);
    AgentPath {
        waypoints: vec![start, turn, exit],
        speed: target.speed,
        start_delay: cfg.target_delay + p.delay,
        stop_when_followed: true,
        initial_facing: None,
    }
}

/// Builds the named scene for a target walking at `speed`.
///
/// The robot starts at the origin facing +y; the target stands
/// `start_distance` ahead, faces the robot for `target_delay` seconds, then
/// walks the closed rectangle clockwise as seen from above.
pub fn scenario(name: ScenarioName, cfg: &ScenarioConfig, speed: f64) -> Result<Scenario> {
    let (l, w, d) = (cfg.rect_length, cfg.rect_width, cfg.start_distance);
    if !(l > 0.0 && w > 0.0 && d > 0.0 && speed > 0.0) {
        return Err(Error::Config("scenario dimensions and speed must be positive".into()));
    }
    let target = AgentPath {
        waypoints: vec![(0.0, d), (0.0, d + l), (w, d + l), (w, d), (0.0, d)],
        speed,
        start_delay: cfg.target_delay,
        stop_when_followed: false,
        initial_facing: Some(-FRAC_PI_2),
    };
    let distractors = match name {
        ScenarioName::None => vec![],
        ScenarioName::OneCross => vec![crossing_path(&target, cfg, &cfg.one_cross)?],
        ScenarioName::TwoCross => vec![
            crossing_path(&target, cfg, &cfg.two_cross_first)?,
            crossing_path(&target, cfg, &cfg.two_cross_second)?,
        ],
        ScenarioName::TwoParallel => vec![
            parallel_path(&target, cfg, &cfg.parallel_left),
            parallel_path(&target, cfg, &cfg.parallel_right),
        ],
    };
    Ok(Scenario {
        name,
        robot: Pose {
            x: 0.0,
            y: 0.0,
            theta: FRAC_PI_2,
        },
        target,
        distractors,
    })
}

fn random_unit<R: Rng>(rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..IDENTITY_DIM).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Random unit identities; every identity after the first is orthogonal to
/// the first.
pub fn sample_identities<R: Rng>(count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(count);
    if count == 0 {
        return out;
    }
    let target = random_unit(rng);
    out.push(target.clone());
    while out.len() < count {
        let mut v = random_unit(rng);
        let dot: f64 = v.iter().zip(&target).map(|(a, b)| a * b).sum();
        v.iter_mut().zip(&target).for_each(|(a, b)| *a -= dot * b);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            out.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    out
}

/// Places the subject and distractors in a uniform-crowd world. The target
/// is agent 0.
pub fn build_world<R: Rng>(sc: &Scenario, subject: &SubjectPreset, cfg: &ScenarioConfig, rng: &mut R) -> Result<WorldState> {
    let ids = sample_identities(sc.agent_count(), rng);
    let mut agents = vec![Agent::new(
        sc.target.clone(),
        true,
        subject.width,
        subject.height,
        cfg.clothing,
        ids[0].clone(),
    )?];
    for (path, id) in sc.distractors.iter().zip(&ids[1..]) {
        agents.push(Agent::new(
            path.clone(),
            false,
            cfg.distractor_width,
            cfg.distractor_height,
            cfg.clothing,
            id.clone(),
        )?);
    }
    WorldState::new(sc.robot, agents)
}

/// Proper intersection test between segments `a0a1` and `b0b1`.
pub fn segments_intersect(a0: (f64, f64), a1: (f64, f64), b0: (f64, f64), b1: (f64, f64)) -> bool {
    let orient = |p: (f64, f64), q: (f64, f64), r: (f64, f64)| (q.0 - p.0) * (r.1 - p.1) - (q.1 - p.1) * (r.0 - p.0);
    let d1 = orient(b0, b1, a0);
    let d2 = orient(b0, b1, a1);
    let d3 = orient(a0, a1, b0);
    let d4 = orient(a0, a1, b1);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}
