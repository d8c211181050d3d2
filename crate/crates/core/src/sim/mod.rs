//! Deterministic desk-scale simulator of the following experiment.

pub mod camera;
pub mod record;
pub mod render;
pub mod scenario;
pub mod world;

pub use camera::CameraModel;
pub use render::{ground_truth_bbox, render_rgbd, RenderConfig, Rendered};
pub use scenario::{build_world, scenario, Scenario, ScenarioConfig, ScenarioName, SubjectPreset};
pub use world::{step_world, Agent, AgentPath, Pose, WorldState};
