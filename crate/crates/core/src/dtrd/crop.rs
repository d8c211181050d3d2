//! Template and search crop geometry.

use crate::error::{Error, Result};
use crate::frame::{pixel_rect, Raster4};
use crate::geometry::BoundingBox;

/// Square sampling window in frame pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropWindow {
    pub x0: f64,
    pub y0: f64,
    pub side: f64,
    pub frame_width: usize,
    pub frame_height: usize,
}

impl CropWindow {
    /// Maps a frame-normalized box into crop-normalized coordinates.
    pub fn to_crop(&self, b: &BoundingBox) -> Result<BoundingBox> {
        let (w, h) = (self.frame_width as f64, self.frame_height as f64);
        BoundingBox::new(
            (b.x1 * w - self.x0) / self.side,
            (b.y1 * h - self.y0) / self.side,
            (b.x2 * w - self.x0) / self.side,
            (b.y2 * h - self.y0) / self.side,
        )
    }

    /// Maps a crop-normalized box back into frame-normalized coordinates.
    pub fn to_frame(&self, b: &BoundingBox) -> Result<BoundingBox> {
        let (w, h) = (self.frame_width as f64, self.frame_height as f64);
        BoundingBox::new(
            (self.x0 + b.x1 * self.side) / w,
            (self.y0 + b.y1 * self.side) / h,
            (self.x0 + b.x2 * self.side) / w,
            (self.y0 + b.y2 * self.side) / h,
        )
    }

    pub fn is_inside_frame(&self) -> bool {
        self.x0 >= 0.0
            && self.y0 >= 0.0
            && self.x0 + self.side <= self.frame_width as f64 + 1e-9
            && self.y0 + self.side <= self.frame_height as f64 + 1e-9
    }
}

/// Search window centered on `prev` with side `factor·√area`, shrunk and
/// shifted as needed to stay inside the frame.
pub fn search_window(prev: &BoundingBox, frame_width: usize, frame_height: usize, factor: f64) -> CropWindow {
    let (w, h) = (frame_width as f64, frame_height as f64);
    let area_px = prev.width() * w * prev.height() * h;
    let side = (factor * area_px.sqrt()).clamp(1.0, w.min(h));
    let (cx, cy) = prev.center();
    CropWindow {
        x0: (cx * w - side / 2.0).clamp(0.0, w - side),
        y0: (cy * h - side / 2.0).clamp(0.0, h - side),
        side,
        frame_width,
        frame_height,
    }
}

fn nearest(coord: f64, lo: usize, hi: usize) -> usize {
    (coord.floor().max(lo as f64) as usize).min(hi)
}

/// Nearest-neighbor resampling of `window` to `size × size`.
pub fn sample_window(src: &Raster4, window: &CropWindow, size: usize) -> Raster4 {
    let step = window.side / size as f64;
    let mut data = Vec::with_capacity(size * size * 4);
    for i in 0..size {
        let r = nearest(window.y0 + (i as f64 + 0.5) * step, 0, src.height - 1);
        for j in 0..size {
            let c = nearest(window.x0 + (j as f64 + 0.5) * step, 0, src.width - 1);
            data.extend_from_slice(src.at(r, c));
        }
    }
    Raster4 {
        width: size,
        height: size,
        data,
    }
}

/// Crops the box region to `size × size`, keeping its aspect ratio and
/// filling the short side by replicating the region's edge pixels.
pub fn template_crop(src: &Raster4, b: &BoundingBox, size: usize) -> Result<Raster4> {
    let rect = pixel_rect(src.width, src.height, b)
        .ok_or_else(|| Error::contract(format!("template box {b:?} covers no pixels")))?;
    let (c0, r0, c1, r1) = rect;
    let side = (c1 - c0).max(r1 - r0) as f64;
    let cx = (c0 + c1) as f64 / 2.0;
    let cy = (r0 + r1) as f64 / 2.0;
    let step = side / size as f64;
    let mut data = Vec::with_capacity(size * size * 4);
    for i in 0..size {
        let r = nearest(cy - side / 2.0 + (i as f64 + 0.5) * step, r0, r1 - 1);
        for j in 0..size {
            let c = nearest(cx - side / 2.0 + (j as f64 + 0.5) * step, c0, c1 - 1);
            data.extend_from_slice(src.at(r, c));
        }
    }
    Ok(Raster4 {
        width: size,
        height: size,
        data,
    })
}
