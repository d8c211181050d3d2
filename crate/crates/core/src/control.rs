//! Two PI loops turning a tracked box into velocity commands.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PiGains {
    pub kp: f64,
    pub ki: f64,
    pub output_min: f64,
    pub output_max: f64,
    pub integral_limit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiController {
    pub gains: PiGains,
    integral: f64,
}

impl PiController {
    pub fn new(gains: PiGains) -> Result<Self> {
        if !(gains.output_min <= gains.output_max) || gains.integral_limit < 0.0 {
            return Err(Error::Config(format!("inconsistent PI limits {gains:?}")));
        }
        Ok(PiController { gains, integral: 0.0 })
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
    }

    /// `u = kp·e + ki·∫e`, with the integral and the output clamped.
    pub fn update(&mut self, e: f64, dt: f64) -> Result<f64> {
        if !(dt > 0.0) {
            return Err(Error::contract(format!("controller step must be positive, got {dt}")));
        }
        let g = &self.gains;
        self.integral = (self.integral + e * dt).clamp(-g.integral_limit, g.integral_limit);
        Ok((g.kp * e + g.ki * self.integral).clamp(g.output_min, g.output_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlConfig {
    pub kp_lin: f64,
    pub ki_lin: f64,
    pub kp_ang: f64,
    pub ki_ang: f64,
    pub v_min: f64,
    pub v_max: f64,
    pub omega_max: f64,
    pub integral_limit: f64,
    /// Desired following distance, meters.
    pub follow_distance: f64,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            kp_lin: 0.8,
            ki_lin: 0.5,
            kp_ang: 2.0,
            ki_ang: 0.2,
            v_min: -0.3,
            v_max: 1.2,
            omega_max: 1.5,
            integral_limit: 2.0,
            follow_distance: 2.0,
        }
    }
}

/// Range and bearing controllers of the follower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowController {
    pub linear: PiController,
    pub angular: PiController,
    pub follow_distance: f64,
}

impl FollowController {
    pub fn new(cfg: &ControlConfig) -> Result<Self> {
        Ok(FollowController {
            linear: PiController::new(PiGains {
                kp: cfg.kp_lin,
                ki: cfg.ki_lin,
                output_min: cfg.v_min,
                output_max: cfg.v_max,
                integral_limit: cfg.integral_limit,
            })?,
            angular: PiController::new(PiGains {
                kp: cfg.kp_ang,
                ki: cfg.ki_ang,
                output_min: -cfg.omega_max,
                output_max: cfg.omega_max,
                integral_limit: cfg.integral_limit,
            })?,
            follow_distance: cfg.follow_distance,
        })
    }

    /// Commands `(v, ω)` for a box measured at `depth` meters. Without a box
    /// the robot stops and the integrals hold.
    pub fn follow(&mut self, tracked: Option<(&BoundingBox, f64)>, dt: f64) -> Result<(f64, f64)> {
        let Some((b, depth)) = tracked else {
            return Ok((0.0, 0.0));
        };
        let v = self.linear.update(depth - self.follow_distance, dt)?;
        let omega = self.angular.update(0.5 - b.center().0, dt)?;
        Ok((v, omega))
    }
}

/// Range to a tracked box: the median depth over its central half.
pub fn depth_at_box(frame: &RgbdFrame, b: &BoundingBox) -> Option<f64> {
    frame.median_depth_in(b)
}
