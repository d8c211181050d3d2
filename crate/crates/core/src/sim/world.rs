//! Kinematic world: a differential-drive robot and scripted walkers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of consecutive steps a distractor must be the agent nearest the
/// robot's heading before it stops.
pub const FOLLOWED_STEPS_TO_STOP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading, radians counter-clockwise from +x.
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Robot {
    pub pose: Pose,
    /// Commanded linear velocity, m/s.
    pub v: f64,
    /// Commanded angular velocity, rad/s.
    pub omega: f64,
}

/// Polyline walked at constant speed after a start delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentPath {
    pub waypoints: Vec<(f64, f64)>,
    pub speed: f64,
    pub start_delay: f64,
    pub stop_when_followed: bool,
    /// Facing direction (radians) while waiting for the start; `None` faces
    /// along the first segment.
    pub initial_facing: Option<f64>,
}

impl AgentPath {
    pub fn validate(&self) -> Result<()> {
        if self.waypoints.len() < 2 {
            return Err(Error::contract("an agent path needs at least two waypoints"));
        }
        if !(self.speed > 0.0) || self.start_delay < 0.0 {
            return Err(Error::contract("agent speed must be positive and start delay non-negative"));
        }
        Ok(())
    }

    fn segments(&self) -> impl Iterator<Item = ((f64, f64), (f64, f64))> + '_ {
        self.waypoints.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        self.segments()
            .map(|(a, b)| (b.0 - a.0).hypot(b.1 - a.1))
            .sum()
    }

    /// Position and segment heading at arc length `s`, clamped to the path.
    pub fn point_at(&self, s: f64) -> ((f64, f64), f64) {
        let mut rest = s.max(0.0);
        let mut last = (self.waypoints[0], 0.0);
        for (a, b) in self.segments() {
            let len = (b.0 - a.0).hypot(b.1 - a.1);
            let heading = (b.1 - a.1).atan2(b.0 - a.0);
            if len == 0.0 {
                continue;
            }
            if rest < len {
                let t = rest / len;
                return ((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)), heading);
            }
            rest -= len;
            last = (b, heading);
        }
        last
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub path: AgentPath,
    pub is_target: bool,
    /// Body width and height, meters.
    pub width: f64,
    pub height: f64,
    pub clothing: [f64; 3],
    /// Unit-norm latent face identity.
    pub identity: Vec<f64>,
    pub position: (f64, f64),
    /// Facing direction, radians.
    pub facing: f64,
    /// Arc length walked so far.
    pub travelled: f64,
    pub stopped: bool,
    followed_steps: usize,
}

impl Agent {
    pub fn new(path: AgentPath, is_target: bool, width: f64, height: f64, clothing: [f64; 3], identity: Vec<f64>) -> Result<Self> {
        path.validate()?;
        if !(width > 0.0 && height > 0.0) {
            return Err(Error::contract("agent body dimensions must be positive"));
        }
        let (position, heading) = path.point_at(0.0);
        let facing = path.initial_facing.unwrap_or(heading);
        Ok(Agent {
            path,
            is_target,
            width,
            height,
            clothing,
            identity,
            position,
            facing,
            travelled: 0.0,
            stopped: false,
            followed_steps: 0,
        })
    }

    pub fn finished(&self) -> bool {
        self.travelled >= self.path.length()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub time: f64,
    pub robot: Robot,
    pub agents: Vec<Agent>,
}

impl WorldState {
    pub fn new(robot: Pose, agents: Vec<Agent>) -> Result<Self> {
        let targets = agents.iter().filter(|a| a.is_target).count();
        if targets != 1 {
            return Err(Error::contract(format!("world needs exactly one target, got {targets}")));
        }
        Ok(WorldState {
            time: 0.0,
            robot: Robot {
                pose: robot,
                v: 0.0,
                omega: 0.0,
            },
            agents,
        })
    }

    pub fn target_index(&self) -> usize {
        self.agents.iter().position(|a| a.is_target).unwrap_or(0)
    }

    pub fn target(&self) -> &Agent {
        &self.agents[self.target_index()]
    }

    /// True when every agent shares the same clothing color.
    pub fn is_uniform_crowd(&self) -> bool {
        self.agents.windows(2).all(|w| w[0].clothing == w[1].clothing)
    }

    pub fn set_command(&mut self, v: f64, omega: f64) {
        self.robot.v = v;
        self.robot.omega = omega;
    }

    /// Exact planar positions: the robot first, then every agent.
    pub fn optitrack(&self) -> Vec<(f64, f64)> {
        let mut out = vec![(self.robot.pose.x, self.robot.pose.y)];
        out.extend(self.agents.iter().map(|a| a.position));
        out
    }

    /// Planar distance from the robot to the target.
    pub fn target_distance(&self) -> f64 {
        let (x, y) = self.target().position;
        (x - self.robot.pose.x).hypot(y - self.robot.pose.y)
    }

    /// Index of the agent nearest the robot's heading ray, among agents in
    /// front of the robot.
    pub fn nearest_to_heading(&self) -> Option<usize> {
        let p = self.robot.pose;
        let (c, s) = (p.theta.cos(), p.theta.sin());
        self.agents
            .iter()
            .enumerate()
            .filter_map(|(i, a)| {
                let (dx, dy) = (a.position.0 - p.x, a.position.1 - p.y);
                let along = dx * c + dy * s;
                (along > 0.0).then(|| (i, (dx * s - dy * c).abs()))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _)| i)
    }

    /// Advances the world by `dt` seconds in place.
    pub fn advance(&mut self, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::contract(format!("time step must be positive, got {dt}")));
        }
        let r = &mut self.robot;
        r.pose.x += r.v * r.pose.theta.cos() * dt;
        r.pose.y += r.v * r.pose.theta.sin() * dt;
        r.pose.theta += r.omega * dt;

        let (t0, t1) = (self.time, self.time + dt);
        for a in &mut self.agents {
            if a.stopped {
                continue;
            }
            let active = t1 - t0.max(a.path.start_delay);
            if active > 0.0 {
                a.travelled = (a.travelled + a.path.speed * active).min(a.path.length());
                let (pos, heading) = a.path.point_at(a.travelled);
                a.position = pos;
                a.facing = heading;
            }
        }
        self.time = t1;

        let nearest = self.nearest_to_heading();
        for (i, a) in self.agents.iter_mut().enumerate() {
            if Some(i) == nearest && !a.is_target && a.path.stop_when_followed {
                a.followed_steps += 1;
                if a.followed_steps >= FOLLOWED_STEPS_TO_STOP {
                    a.stopped = true;
                }
            } else {
                a.followed_steps = 0;
            }
        }
        Ok(())
    }
}

/// Returns the world advanced by `dt` seconds.
pub fn step_world(state: &WorldState, dt: f64) -> Result<WorldState> {
    let mut next = state.clone();
    next.advance(dt)?;
    Ok(next)
}
