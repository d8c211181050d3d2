//! Person following in uniform crowds with an RGB-D transformer tracker.

pub mod baseline;
pub mod control;
pub mod dtrd;
pub mod error;
pub mod frame;
pub mod geometry;
pub mod harness;
pub mod perception;
pub mod sim;
pub mod tensor;
pub mod tracker;

pub use error::{Error, Result};
pub use frame::RgbdFrame;
pub use geometry::{iou, BoundingBox};
pub use tracker::{TrackOutput, Tracker};
