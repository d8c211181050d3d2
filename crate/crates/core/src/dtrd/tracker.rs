use std::sync::Arc;

use super::crop::{sample_window, search_window, template_crop, CropWindow};
use super::model::DtrdModel;
use crate::error::{Error, Result};
use crate::frame::{fuse_rgbd, pixel_rect, Raster4, RgbdFrame};
use crate::geometry::BoundingBox;
use crate::tracker::{TrackOutput, Tracker};

/// Per-target tracking state. The template is fixed at initialization.
#[derive(Debug, Clone)]
pub struct TrackState {
    pub template: Raster4,
    pub previous_box: BoundingBox,
    template_tokens: Vec<f64>,
}

fn check_box_in_frame(frame: &RgbdFrame, b: &BoundingBox) -> Result<()> {
    const TOL: f64 = 1e-9;
    let inside = b.x1 >= -TOL && b.y1 >= -TOL && b.x2 <= 1.0 + TOL && b.y2 <= 1.0 + TOL;
    if !inside || pixel_rect(frame.width(), frame.height(), b).is_none() {
        return Err(Error::contract(format!("box {b:?} is not inside the frame")));
    }
    Ok(())
}

/// Crops the fused template for `b` and caches its backbone tokens.
pub fn init_track(model: &DtrdModel, frame: &RgbdFrame, b: &BoundingBox) -> Result<TrackState> {
    check_box_in_frame(frame, b)?;
    let fused = fuse_rgbd(frame);
    let template = template_crop(&fused, b, model.config().template_size)?;
    let template_tokens = model.template_tokens(&template)?;
    Ok(TrackState {
        template,
        previous_box: *b,
        template_tokens,
    })
}

/// Search window the next step will use for `state`.
pub fn next_window(model: &DtrdModel, state: &TrackState, frame: &RgbdFrame) -> CropWindow {
    search_window(
        &state.previous_box,
        frame.width(),
        frame.height(),
        model.config().search_area_factor,
    )
}

/// One tracking step: crop around the previous box, run the network, map the
/// prediction back to frame coordinates.
pub fn track_step(model: &DtrdModel, state: &mut TrackState, frame: &RgbdFrame) -> Result<(BoundingBox, f64)> {
    let window = next_window(model, state, frame);
    let fused = fuse_rgbd(frame);
    let search = sample_window(&fused, &window, model.config().search_size);
    let in_crop = model.predict_cached(&state.template_tokens, &search)?;
    let pred = window
        .to_frame(&in_crop)?
        .clip_unit()
        .unwrap_or(state.previous_box);
    let shift: f64 = pred
        .corners()
        .iter()
        .zip(state.previous_box.corners())
        .map(|(a, b)| (a - b).abs())
        .sum();
    state.previous_box = pred;
    Ok((pred, (-shift).exp()))
}

/// [`Tracker`] wrapper around the network, optionally blind to depth.
#[derive(Debug, Clone)]
pub struct DtrdTracker {
    model: Arc<DtrdModel>,
    state: Option<TrackState>,
    zero_depth: bool,
}

impl DtrdTracker {
    pub fn new(model: Arc<DtrdModel>) -> Self {
        DtrdTracker {
            model,
            state: None,
            zero_depth: false,
        }
    }

    /// Feeds zeros in place of the depth raster (ablation).
    pub fn without_depth(mut self) -> Self {
        self.zero_depth = true;
        self
    }

    pub fn state(&self) -> Option<&TrackState> {
        self.state.as_ref()
    }

    pub fn model(&self) -> &DtrdModel {
        &self.model
    }
}

impl Tracker for DtrdTracker {
    fn name(&self) -> &str {
        if self.zero_depth {
            "dtrd_no_depth"
        } else {
            "dtrd"
        }
    }

    fn init(&mut self, frame: &RgbdFrame, b: &BoundingBox) -> Result<()> {
        let state = if self.zero_depth {
            init_track(&self.model, &frame.without_depth(), b)?
        } else {
            init_track(&self.model, frame, b)?
        };
        self.state = Some(state);
        Ok(())
    }

    fn step(&mut self, frame: &RgbdFrame) -> Result<TrackOutput> {
        let state = self
            .state
            .as_mut()
            .ok_or_else(|| Error::contract("track step before initialization"))?;
        let (bbox, confidence) = if self.zero_depth {
            track_step(&self.model, state, &frame.without_depth())?
        } else {
            track_step(&self.model, state, frame)?
        };
        Ok(TrackOutput { bbox, confidence })
    }
}
