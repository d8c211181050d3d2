//! Pinhole camera mounted on the robot, looking along its heading.

use serde::{Deserialize, Serialize};

use super::world::{Agent, Pose};
use crate::error::{Error, Result};
use crate::frame::DEFAULT_MAX_DEPTH;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view, radians.
    pub hfov: f64,
    /// Optical center height above the floor, meters.
    pub mount_height: f64,
    pub max_depth: f64,
    /// Points closer than this along the optical axis are culled.
    pub near: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        CameraModel {
            width: 128,
            height: 96,
            hfov: 75f64.to_radians(),
            mount_height: 1.0,
            max_depth: DEFAULT_MAX_DEPTH,
            near: 0.1,
        }
    }
}

/// Image-plane footprint of an agent billboard, in pixels (continuous).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Footprint {
    pub u0: f64,
    pub u1: f64,
    pub v0: f64,
    pub v1: f64,
    /// Distance from the camera to the agent, meters.
    pub range: f64,
}

impl Footprint {
    pub fn area(&self) -> f64 {
        (self.u1 - self.u0) * (self.v1 - self.v0)
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.hfov > 0.0 && self.hfov < std::f64::consts::PI) {
            return Err(Error::Config(format!("camera hfov {} must lie in (0, π)", self.hfov)));
        }
        if self.width == 0 || self.height == 0 || !(self.max_depth > 0.0) || !(self.near > 0.0) {
            return Err(Error::Config("camera size, max depth and near plane must be positive".into()));
        }
        Ok(())
    }

    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        self.width as f64 / 2.0 / (self.hfov / 2.0).tan()
    }

    /// World point to camera coordinates `(right, forward)`.
    pub fn to_camera(&self, pose: &Pose, p: (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (p.0 - pose.x, p.1 - pose.y);
        let (c, s) = (pose.theta.cos(), pose.theta.sin());
        (dx * s - dy * c, dx * c + dy * s)
    }

    /// Projects an upright billboard facing the camera. `None` when the
    /// agent is behind the near plane.
    pub fn project(&self, pose: &Pose, agent: &Agent) -> Option<Footprint> {
        let (dx, dy) = (agent.position.0 - pose.x, agent.position.1 - pose.y);
        let range = dx.hypot(dy);
        if range == 0.0 {
            return None;
        }
        let half = agent.width / 2.0;
        let (px, py) = (-dy / range * half, dx / range * half);
        let a = self.to_camera(pose, (agent.position.0 + px, agent.position.1 + py));
        let b = self.to_camera(pose, (agent.position.0 - px, agent.position.1 - py));
        let (_, z) = self.to_camera(pose, agent.position);
        if a.1 < self.near || b.1 < self.near || z < self.near {
            return None;
        }
        let f = self.focal();
        let (cu, cv) = (self.width as f64 / 2.0, self.height as f64 / 2.0);
        let ua = cu + f * a.0 / a.1;
        let ub = cu + f * b.0 / b.1;
        Some(Footprint {
            u0: ua.min(ub),
            u1: ua.max(ub),
            v0: cv - f * (agent.height - self.mount_height) / z,
            v1: cv + f * self.mount_height / z,
            range,
        })
    }
}
