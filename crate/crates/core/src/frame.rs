//! Synchronized color and depth rasters.

use crate::error::{Error, Result};
use crate::geometry::BoundingBox;

/// Default far clip of the depth sensor, meters.
pub const DEFAULT_MAX_DEPTH: f64 = 10.0;

/// One RGB-D capture: `rgb` is H×W×3 in `[0, 1]`, `depth` is H×W meters in
/// `[0, max_depth]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbdFrame {
    width: usize,
    height: usize,
    rgb: Vec<f64>,
    depth: Vec<f64>,
    max_depth: f64,
    pub timestamp: f64,
}

impl RgbdFrame {
    /// Builds a frame, clamping color to `[0, 1]` and depth to `[0, max_depth]`.
    pub fn new(
        width: usize,
        height: usize,
        mut rgb: Vec<f64>,
        mut depth: Vec<f64>,
        max_depth: f64,
        timestamp: f64,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::shape("frame must have positive size"));
        }
        if rgb.len() != width * height * 3 || depth.len() != width * height {
            return Err(Error::shape(format!(
                "frame {width}×{height}: rgb has {} values, depth {}",
                rgb.len(),
                depth.len()
            )));
        }
        if !(max_depth > 0.0) {
            return Err(Error::contract("max depth must be positive"));
        }
        rgb.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        depth.iter_mut().for_each(|v| *v = v.clamp(0.0, max_depth));
        Ok(RgbdFrame {
            width,
            height,
            rgb,
            depth,
            max_depth,
            timestamp,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn max_depth(&self) -> f64 {
        self.max_depth
    }

    pub fn rgb(&self) -> &[f64] {
        &self.rgb
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn rgb_at(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }

    pub fn depth_at(&self, row: usize, col: usize) -> f64 {
        self.depth[row * self.width + col]
    }

    /// Copy of this frame with the depth raster replaced by zeros.
    pub fn without_depth(&self) -> RgbdFrame {
        RgbdFrame {
            depth: vec![0.0; self.depth.len()],
            ..self.clone()
        }
    }

    /// Pixel rectangle of `b` on this frame, see [`pixel_rect`].
    pub fn pixel_rect(&self, b: &BoundingBox) -> Option<(usize, usize, usize, usize)> {
        pixel_rect(self.width, self.height, b)
    }

    /// Median depth over the central 50% (by width and height) of `b`.
    pub fn median_depth_in(&self, b: &BoundingBox) -> Option<f64> {
        let (c0, r0, c1, r1) = self.pixel_rect(&b.scaled(0.5))?;
        let mut vals: Vec<f64> = (r0..r1)
            .flat_map(|r| (c0..c1).map(move |c| (r, c)))
            .map(|(r, c)| self.depth_at(r, c))
            .collect();
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        Some(if n % 2 == 1 {
            vals[n / 2]
        } else {
            (vals[n / 2 - 1] + vals[n / 2]) / 2.0
        })
    }
}

/// Pixel rectangle `[c0, c1) × [r0, r1)` covered by a normalized box on a
/// `width × height` grid, clipped to the grid. `None` when nothing remains.
pub fn pixel_rect(width: usize, height: usize, b: &BoundingBox) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (width as f64, height as f64);
    let c0 = (b.x1 * w).round().clamp(0.0, w) as usize;
    let c1 = (b.x2 * w).round().clamp(0.0, w) as usize;
    let r0 = (b.y1 * h).round().clamp(0.0, h) as usize;
    let r1 = (b.y2 * h).round().clamp(0.0, h) as usize;
    (c1 > c0 && r1 > r0).then_some((c0, r0, c1, r1))
}

/// Four-channel H×W×4 raster: RGB plus normalized depth.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster4 {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Raster4 {
    pub fn at(&self, row: usize, col: usize) -> &[f64] {
        let i = (row * self.width + col) * 4;
        &self.data[i..i + 4]
    }

    /// Channel-major copy `[4 × H × W]`, the layout convolutions consume.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = self.width * self.height;
        let mut out = vec![0.0; 4 * plane];
        for (p, px) in self.data.chunks_exact(4).enumerate() {
            for c in 0..4 {
                out[c * plane + p] = px[c];
            }
        }
        out
    }
}

/// Stacks RGB with depth divided by the sensor's maximum range.
pub fn fuse_rgbd(frame: &RgbdFrame) -> Raster4 {
    let mut data = Vec::with_capacity(frame.width * frame.height * 4);
    for (px, d) in frame.rgb.chunks_exact(3).zip(&frame.depth) {
        data.extend_from_slice(px);
        data.push(d / frame.max_depth);
    }
    Raster4 {
        width: frame.width,
        height: frame.height,
        data,
    }
}
