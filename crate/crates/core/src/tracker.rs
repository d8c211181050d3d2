//! Interface shared by every single-target tracker.

use crate::error::Result;
use crate::frame::RgbdFrame;
use crate::geometry::BoundingBox;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackOutput {
    pub bbox: BoundingBox,
    /// In `[0, 1]`.
    pub confidence: f64,
}

pub trait Tracker: Send {
    fn name(&self) -> &str;

    /// Starts tracking the object inside `bbox` on `frame`.
    fn init(&mut self, frame: &RgbdFrame, bbox: &BoundingBox) -> Result<()>;

    /// Locates the object on the next frame.
    fn step(&mut self, frame: &RgbdFrame) -> Result<TrackOutput>;
}
