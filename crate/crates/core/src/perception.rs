//! Target identification: simulated face and person detectors, embedding
//! verification and face-to-body matching.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox};
use crate::sim::render::{faces_camera, Rendered, HEAD_FRACTION};
use crate::sim::scenario::IDENTITY_DIM;
use crate::sim::{CameraModel, RenderConfig, WorldState};

/// Unit-norm face descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceEmbedding(Vec<f64>);

impl FaceEmbedding {
    /// Normalizes `values`, which must hold 128 finite numbers with nonzero norm.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != IDENTITY_DIM {
            return Err(Error::contract(format!(
                "face embedding needs {IDENTITY_DIM} values, got {}",
                values.len()
            )));
        }
        let n = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(n.is_finite() && n > 0.0) {
            return Err(Error::contract("face embedding has zero or non-finite norm"));
        }
        Ok(FaceEmbedding(values.into_iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &FaceEmbedding) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectionKind {
    Face,
    Person,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub kind: DetectionKind,
    /// Simulator bookkeeping for scoring; the pipeline never reads it.
    pub(crate) agent: usize,
}

impl Detection {
    /// Agent that produced this detection, for evaluation code only.
    pub fn source_agent(&self) -> usize {
        self.agent
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGallery {
    pub target: FaceEmbedding,
    pub threshold: f64,
}

impl IdentityGallery {
    pub fn new(target: FaceEmbedding, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0) {
            return Err(Error::Config("gallery threshold must be positive".into()));
        }
        Ok(IdentityGallery { target, threshold })
    }

    /// Reads a single line of 128 whitespace-separated numbers.
    pub fn load(path: &Path, threshold: f64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let values = text
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| Error::Format(format!("{}: bad number {t:?}", path.display()))))
            .collect::<Result<Vec<_>>>()?;
        IdentityGallery::new(FaceEmbedding::new(values)?, threshold)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let line: Vec<String> = self.target.values().iter().map(|v| format!("{v:.17}")).collect();
        fs::write(path, line.join(" ") + "\n").map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PerceptionConfig {
    pub embedding_noise: f64,
    pub threshold: f64,
    /// Faces farther than this are not detected, meters.
    pub face_range: f64,
    /// Minimum visible fraction of the head band for a face detection.
    pub head_visibility: f64,
    /// Person box edges move by up to this fraction of the box size.
    pub person_jitter: f64,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        PerceptionConfig {
            embedding_noise: 0.05,
            threshold: 0.9,
            face_range: 4.0,
            head_visibility: 0.9,
            person_jitter: 0.02,
        }
    }
}

/// Strict acceptance: distance below the gallery threshold.
pub fn verify_face(candidate: &FaceEmbedding, gallery: &IdentityGallery) -> bool {
    candidate.distance(&gallery.target) < gallery.threshold
}

/// Index of the person box with the highest IoU against `face`, lowest
/// index on ties; `None` when no box overlaps the face.
pub fn match_face_to_body(face: &BoundingBox, persons: &[BoundingBox]) -> Result<Option<usize>> {
    if persons.is_empty() {
        return Err(Error::contract("no person boxes to match against"));
    }
    let mut best = (0, iou(face, &persons[0]));
    for (i, p) in persons.iter().enumerate().skip(1) {
        let v = iou(face, p);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok((best.1 > 0.0).then_some(best.0))
}

/// Noisy face detections with their embeddings, one per agent whose head is
/// visible, facing the camera and within range.
pub fn simulate_face_detections<R: Rng>(
    world: &WorldState,
    view: &Rendered,
    render: &RenderConfig,
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Result<Vec<(Detection, FaceEmbedding)>> {
    let pose = world.robot.pose;
    let mut out = Vec::new();
    for (i, agent) in world.agents.iter().enumerate() {
        let dist = (agent.position.0 - pose.x).hypot(agent.position.1 - pose.y);
        if dist > cfg.face_range || !faces_camera(agent, (pose.x, pose.y), render.face_angle) {
            continue;
        }
        if view.head_visibility(i)? < cfg.head_visibility {
            continue;
        }
        let Some(body) = view.full_box(i)? else {
            continue;
        };
        let Some(fp) = view.footprints[i] else {
            continue;
        };
        let h = view.frame.height() as f64;
        let y2 = (fp.v0 + HEAD_FRACTION * (fp.v1 - fp.v0)) / h;
        let face = BoundingBox::new(body.x1, (fp.v0 / h).max(0.0), body.x2, y2)?;
        let noisy: Vec<f64> = agent
            .identity
            .iter()
            .map(|v| v + cfg.embedding_noise * rng.sample::<f64, _>(StandardNormal))
            .collect();
        out.push((
            Detection {
                bbox: face,
                kind: DetectionKind::Face,
                agent: i,
            },
            FaceEmbedding::new(noisy)?,
        ));
    }
    Ok(out)
}

/// Visible body boxes with each edge jittered uniformly by up to
/// `person_jitter` of the box size.
pub fn simulate_person_detections<R: Rng>(view: &Rendered, cfg: &PerceptionConfig, rng: &mut R) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for i in 0..view.footprints.len() {
        let Some(b) = view.visible_box(i)? else {
            continue;
        };
        let j = cfg.person_jitter;
        let (w, h) = (b.width(), b.height());
        let mut d = || if j > 0.0 { rng.gen_range(-j..=j) } else { 0.0 };
        let jittered = BoundingBox::new(b.x1 + d() * w, b.y1 + d() * h, b.x2 + d() * w, b.y2 + d() * h)?;
        out.push(Detection {
            bbox: jittered.clip_unit().unwrap_or(b),
            kind: DetectionKind::Person,
            agent: i,
        });
    }
    Ok(out)
}

/// Why identification produced no box this frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitFailure {
    NoVerifiedFace,
    NoMatchingBody,
}

/// Full identification chain on one view: verified face with the smallest
/// distance, then the body box it overlaps most.
pub fn initialize_target<R: Rng>(
    world: &WorldState,
    view: &Rendered,
    render: &RenderConfig,
    gallery: &IdentityGallery,
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Result<std::result::Result<Detection, InitFailure>> {
    let faces = simulate_face_detections(world, view, render, cfg, rng)?;
    let persons = simulate_person_detections(view, cfg, rng)?;
    let best = faces
        .iter()
        .map(|(d, e)| (d, e.distance(&gallery.target)))
        .filter(|(_, dist)| *dist < gallery.threshold)
        .min_by(|a, b| a.1.total_cmp(&b.1));
    let Some((face, _)) = best else {
        return Ok(Err(InitFailure::NoVerifiedFace));
    };
    if persons.is_empty() {
        return Ok(Err(InitFailure::NoMatchingBody));
    }
    let boxes: Vec<BoundingBox> = persons.iter().map(|p| p.bbox).collect();
    Ok(match match_face_to_body(&face.bbox, &boxes)? {
        Some(i) => Ok(persons[i].clone()),
        None => Err(InitFailure::NoMatchingBody),
    })
}

/// Camera-independent helper for callers that only hold a world: renders a
/// noiseless view and runs [`initialize_target`].
pub fn initialize_from_world<R: Rng>(
    world: &WorldState,
    camera: &CameraModel,
    render: &RenderConfig,
    gallery: &IdentityGallery,
    cfg: &PerceptionConfig,
    rng: &mut R,
) -> Result<std::result::Result<Detection, InitFailure>> {
    let view = crate::sim::render_rgbd::<R>(world, camera, &render.noiseless(), None)?;
    initialize_target(world, &view, render, gallery, cfg, rng)
}
