//! Billboard rasterizer producing RGB-D frames and per-pixel agent labels.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::camera::{CameraModel, Footprint};
use super::world::{Agent, WorldState};
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geometry::BoundingBox;

/// Fraction of the body height drawn as the head band.
pub const HEAD_FRACTION: f64 = 0.2;
/// Minimum fraction of an agent's projection that must be visible for it to
/// count as visible.
pub const MIN_VISIBLE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderConfig {
    pub wall: [f64; 3],
    pub floor: [f64; 3],
    pub hair: [f64; 3],
    pub skin: [f64; 3],
    /// Scale of the identity tint added to the skin color.
    pub identity_tint: f64,
    /// A face is visible when the agent faces within this angle (radians)
    /// of the camera.
    pub face_angle: f64,
    pub rgb_noise: f64,
    pub depth_noise: f64,
}

impl Default for RenderConfig {
    fn default() -> Self {
        RenderConfig {
            wall: [0.62, 0.6, 0.55],
            floor: [0.38, 0.36, 0.33],
            hair: [0.1, 0.08, 0.07],
            skin: [0.78, 0.6, 0.5],
            identity_tint: 2.0,
            face_angle: 60f64.to_radians(),
            rgb_noise: 0.01,
            depth_noise: 0.02,
        }
    }
}

impl RenderConfig {
    pub fn noiseless(self) -> Self {
        RenderConfig {
            rgb_noise: 0.0,
            depth_noise: 0.0,
            ..self
        }
    }
}

/// Whether `agent` shows its face to a camera at `cam`.
pub fn faces_camera(agent: &Agent, cam: (f64, f64), max_angle: f64) -> bool {
    let to_cam = (cam.1 - agent.position.1).atan2(cam.0 - agent.position.0);
    let mut d = (to_cam - agent.facing).rem_euclid(std::f64::consts::TAU);
    if d > std::f64::consts::PI {
        d = std::f64::consts::TAU - d;
    }
    d < max_angle
}

/// A rendered view together with the label buffer used for ground truth.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub frame: RgbdFrame,
    /// Agent drawn at each pixel, row-major.
    pub labels: Vec<Option<usize>>,
    pub footprints: Vec<Option<Footprint>>,
}

fn pixel_span(lo: f64, hi: f64, n: usize) -> (usize, usize) {
    let a = (lo - 0.5).ceil().clamp(0.0, n as f64) as usize;
    let b = (hi - 0.5).ceil().clamp(0.0, n as f64) as usize;
    (a, b.max(a))
}

/// Draws agents far to near so the nearest surface wins each pixel. Noise
/// is drawn from `rng` when given and the config has nonzero sigmas.
pub fn render_rgbd<R: Rng>(
    state: &WorldState,
    camera: &CameraModel,
    cfg: &RenderConfig,
    rng: Option<&mut R>,
) -> Result<Rendered> {
    let (w, h) = (camera.width, camera.height);
    let horizon = h as f64 / 2.0;
    let mut rgb = Vec::with_capacity(w * h * 3);
    for r in 0..h {
        let c = if (r as f64 + 0.5) < horizon { cfg.wall } else { cfg.floor };
        for _ in 0..w {
            rgb.extend_from_slice(&c);
        }
    }
    let mut depth = vec![camera.max_depth; w * h];
    let mut labels = vec![None; w * h];
    let pose = state.robot.pose;
    let footprints: Vec<Option<Footprint>> = state.agents.iter().map(|a| camera.project(&pose, a)).collect();

    let mut order: Vec<usize> = (0..state.agents.len()).filter(|&i| footprints[i].is_some()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (footprints[a].unwrap().range, footprints[b].unwrap().range);
        rb.total_cmp(&ra).then(b.cmp(&a))
    });
    for i in order {
        let fp = footprints[i].unwrap();
        let agent = &state.agents[i];
        let face = faces_camera(agent, (pose.x, pose.y), cfg.face_angle);
        let head_color = if face {
            let mut c = cfg.skin;
            for (k, v) in c.iter_mut().enumerate() {
                *v = (*v + cfg.identity_tint * agent.identity.get(k).copied().unwrap_or(0.0)).clamp(0.0, 1.0);
            }
            c
        } else {
            cfg.hair
        };
        let head_end = fp.v0 + HEAD_FRACTION * (fp.v1 - fp.v0);
        let (c0, c1) = pixel_span(fp.u0, fp.u1, w);
        let (r0, r1) = pixel_span(fp.v0, fp.v1, h);
        for r in r0..r1 {
            let color = if (r as f64 + 0.5) < head_end { head_color } else { agent.clothing };
            for c in c0..c1 {
                let p = r * w + c;
                rgb[3 * p..3 * p + 3].copy_from_slice(&color);
                depth[p] = fp.range;
                labels[p] = Some(i);
            }
        }
    }

    if let Some(rng) = rng {
        if cfg.rgb_noise > 0.0 {
            for v in &mut rgb {
                *v += cfg.rgb_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
        if cfg.depth_noise > 0.0 {
            for d in &mut depth {
                *d += cfg.depth_noise * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    let frame = RgbdFrame::new(w, h, rgb, depth, camera.max_depth, state.time)?;
    Ok(Rendered {
        frame,
        labels,
        footprints,
    })
}

impl Rendered {
    fn check_index(&self, agent: usize) -> Result<()> {
        if agent >= self.footprints.len() {
            return Err(Error::contract(format!(
                "agent index {agent} out of range for {} agents",
                self.footprints.len()
            )));
        }
        Ok(())
    }

    /// Number of pixels showing `agent`.
    pub fn visible_pixels(&self, agent: usize) -> usize {
        self.labels.iter().filter(|l| **l == Some(agent)).count()
    }

    /// Fraction of the agent's head band that is visible.
    pub fn head_visibility(&self, agent: usize) -> Result<f64> {
        self.check_index(agent)?;
        let Some(fp) = self.footprints[agent] else {
            return Ok(0.0);
        };
        let (w, h) = (self.frame.width(), self.frame.height());
        let head_end = fp.v0 + HEAD_FRACTION * (fp.v1 - fp.v0);
        // Pixel count of the band before occlusion and frame clipping.
        let span = |lo: f64, hi: f64| ((hi - 0.5).ceil() - (lo - 0.5).ceil()).max(0.0);
        let full = span(fp.u0, fp.u1) * span(fp.v0, head_end);
        if full == 0.0 {
            return Ok(0.0);
        }
        let (c0, c1) = pixel_span(fp.u0, fp.u1, w);
        let (r0, r1) = pixel_span(fp.v0, head_end, h);
        let seen = (r0..r1)
            .flat_map(|r| (c0..c1).map(move |c| r * w + c))
            .filter(|&p| self.labels[p] == Some(agent))
            .count();
        Ok((seen as f64 / full).min(1.0))
    }

    /// Visible extent of an agent; `None` when under 5% of its projection
    /// survives occlusion and frame clipping.
    pub fn visible_box(&self, agent: usize) -> Result<Option<BoundingBox>> {
        self.check_index(agent)?;
        let Some(fp) = self.footprints[agent] else {
            return Ok(None);
        };
        let w = self.frame.width();
        let (mut c0, mut c1, mut r0, mut r1, mut n) = (usize::MAX, 0, usize::MAX, 0, 0usize);
        for (p, l) in self.labels.iter().enumerate() {
            if *l == Some(agent) {
                let (r, c) = (p / w, p % w);
                c0 = c0.min(c);
                c1 = c1.max(c + 1);
                r0 = r0.min(r);
                r1 = r1.max(r + 1);
                n += 1;
            }
        }
        if n == 0 || (n as f64) < MIN_VISIBLE_FRACTION * fp.area() {
            return Ok(None);
        }
        let (wf, hf) = (w as f64, self.frame.height() as f64);
        Ok(Some(BoundingBox::new(
            c0 as f64 / wf,
            r0 as f64 / hf,
            c1 as f64 / wf,
            r1 as f64 / hf,
        )?))
    }

    /// Unoccluded projection of an agent clipped to the frame, in normalized
    /// coordinates.
    pub fn full_box(&self, agent: usize) -> Result<Option<BoundingBox>> {
        self.check_index(agent)?;
        let Some(fp) = self.footprints[agent] else {
            return Ok(None);
        };
        let (w, h) = (self.frame.width(), self.frame.height());
        let (c0, c1) = pixel_span(fp.u0, fp.u1, w);
        let (r0, r1) = pixel_span(fp.v0, fp.v1, h);
        if c1 <= c0 || r1 <= r0 {
            return Ok(None);
        }
        Ok(Some(BoundingBox::new(
            c0 as f64 / w as f64,
            r0 as f64 / h as f64,
            c1 as f64 / w as f64,
            r1 as f64 / h as f64,
        )?))
    }
}

/// Ground-truth box of one agent in the noiseless view of `state`.
pub fn ground_truth_bbox(state: &WorldState, camera: &CameraModel, agent: usize) -> Result<Option<BoundingBox>> {
    let cfg = RenderConfig::default().noiseless();
    render_rgbd::<rand_chacha::ChaCha8Rng>(state, camera, &cfg, None)?.visible_box(agent)
}
