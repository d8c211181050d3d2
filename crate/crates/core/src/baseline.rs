//! Color-only tracker: normalized cross-correlation of a fixed RGB patch.

use crate::dtrd::crop::search_window;
use crate::error::{Error, Result};
use crate::frame::RgbdFrame;
use crate::geometry::BoundingBox;
use crate::tracker::{TrackOutput, Tracker};

/// Bins per color channel of the appearance histogram.
pub const HIST_BINS: usize = 8;

/// Normalized `8×8×8` RGB histogram of a pixel slice.
pub fn color_histogram(rgb: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; HIST_BINS.pow(3)];
    let n = rgb.len() / 3;
    if n == 0 {
        return h;
    }
    let bin = |v: f64| ((v * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
    for px in rgb.chunks_exact(3) {
        h[(bin(px[0]) * HIST_BINS + bin(px[1])) * HIST_BINS + bin(px[2])] += 1.0;
    }
    h.iter_mut().for_each(|v| *v /= n as f64);
    h
}

/// Appearance captured at initialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceTemplate {
    /// Zero-mean RGB patch, row-major `height × width × 3`.
    pub patch: Vec<f64>,
    pub width: usize,
    pub height: usize,
    pub histogram: Vec<f64>,
    norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineState {
    pub template: AppearanceTemplate,
    pub current_box: BoundingBox,
    init_box: BoundingBox,
    init_origin: (usize, usize),
    origin: (usize, usize),
}

#[derive(Debug, Clone)]
pub struct BaselineTracker {
    pub search_area_factor: f64,
    state: Option<BaselineState>,
}

impl Default for BaselineTracker {
    fn default() -> Self {
        BaselineTracker::new(4.0)
    }
}

const NORM_EPS: f64 = 1e-12;

impl BaselineTracker {
    pub fn new(search_area_factor: f64) -> Self {
        BaselineTracker {
            search_area_factor,
            state: None,
        }
    }

    pub fn state(&self) -> Option<&BaselineState> {
        self.state.as_ref()
    }
}

fn patch_at(frame: &RgbdFrame, r0: usize, c0: usize, h: usize, w: usize) -> Vec<f64> {
    let rgb = frame.rgb();
    let fw = frame.width();
    let mut out = Vec::with_capacity(h * w * 3);
    for r in r0..r0 + h {
        out.extend_from_slice(&rgb[(r * fw + c0) * 3..(r * fw + c0 + w) * 3]);
    }
    out
}

/// Prefix sums over rows and columns of per-pixel channel sums and squares.
struct Integral {
    width: usize,
    sum: Vec<f64>,
    sq: Vec<f64>,
}

impl Integral {
    fn new(frame: &RgbdFrame) -> Self {
        let (w, h) = (frame.width(), frame.height());
        let mut sum = vec![0.0; (w + 1) * (h + 1)];
        let mut sq = vec![0.0; (w + 1) * (h + 1)];
        let rgb = frame.rgb();
        for r in 0..h {
            for c in 0..w {
                let px = &rgb[(r * w + c) * 3..(r * w + c) * 3 + 3];
                let s: f64 = px.iter().sum();
                let q: f64 = px.iter().map(|v| v * v).sum();
                let i = (r + 1) * (w + 1) + c + 1;
                sum[i] = s + sum[i - 1] + sum[i - (w + 1)] - sum[i - (w + 1) - 1];
                sq[i] = q + sq[i - 1] + sq[i - (w + 1)] - sq[i - (w + 1) - 1];
            }
        }
        Integral { width: w, sum, sq }
    }

    fn rect(&self, table: &[f64], r0: usize, c0: usize, h: usize, w: usize) -> f64 {
        let s = self.width + 1;
        table[(r0 + h) * s + c0 + w] - table[r0 * s + c0 + w] - table[(r0 + h) * s + c0] + table[r0 * s + c0]
    }
}

/// Range of top-left offsets along one axis so a patch of `len` stays
/// inside both the window `[lo, hi)` (when it fits) and `[0, n)`.
fn offsets(lo: f64, hi: f64, len: usize, n: usize) -> (usize, usize) {
    let last = n - len;
    let a = (lo.ceil().max(0.0) as usize).min(last);
    let b = ((hi.floor() as isize - len as isize).max(a as isize) as usize).min(last);
    (a, b.max(a))
}

impl Tracker for BaselineTracker {
    fn name(&self) -> &str {
        "baseline"
    }

    fn init(&mut self, frame: &RgbdFrame, b: &BoundingBox) -> Result<()> {
        const TOL: f64 = 1e-9;
        let inside = b.x1 >= -TOL && b.y1 >= -TOL && b.x2 <= 1.0 + TOL && b.y2 <= 1.0 + TOL;
        let rect = frame.pixel_rect(b).filter(|_| inside);
        let Some((c0, r0, c1, r1)) = rect else {
            return Err(Error::contract(format!("box {b:?} is not inside the frame")));
        };
        let (w, h) = (c1 - c0, r1 - r0);
        let raw = patch_at(frame, r0, c0, h, w);
        let histogram = color_histogram(&raw);
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let patch: Vec<f64> = raw.iter().map(|v| v - mean).collect();
        let norm = patch.iter().map(|v| v * v).sum::<f64>();
        self.state = Some(BaselineState {
            template: AppearanceTemplate {
                patch,
                width: w,
                height: h,
                histogram,
                norm,
            },
            current_box: *b,
            init_box: *b,
            init_origin: (r0, c0),
            origin: (r0, c0),
        });
        Ok(())
    }

    fn step(&mut self, frame: &RgbdFrame) -> Result<TrackOutput> {
        let factor = self.search_area_factor;
        let st = self
            .state
            .as_mut()
            .ok_or_else(|| Error::contract("track step before initialization"))?;
        let t = &st.template;
        let (fw, fh) = (frame.width(), frame.height());
        if t.width > fw || t.height > fh {
            return Err(Error::contract("frame is smaller than the template"));
        }
        let win = search_window(&st.current_box, fw, fh, factor);
        let (ra, rb) = offsets(win.y0, win.y0 + win.side, t.height, fh);
        let (ca, cb) = offsets(win.x0, win.x0 + win.side, t.width, fw);
        let integral = Integral::new(frame);
        let n = (t.width * t.height * 3) as f64;
        let rgb = frame.rgb();
        let row_len = t.width * 3;
        let mut best = (f64::NEG_INFINITY, st.origin);
        for r in ra..=rb {
            for c in ca..=cb {
                let mut dot = 0.0;
                for i in 0..t.height {
                    let src = &rgb[((r + i) * fw + c) * 3..((r + i) * fw + c) * 3 + row_len];
                    let tpl = &t.patch[i * row_len..(i + 1) * row_len];
                    dot += src.iter().zip(tpl).map(|(a, b)| a * b).sum::<f64>();
                }
                let s = integral.rect(&integral.sum, r, c, t.height, t.width);
                let q = integral.rect(&integral.sq, r, c, t.height, t.width);
                let var = (q - s * s / n).max(0.0);
                let score = dot / ((t.norm + NORM_EPS) * (var + NORM_EPS)).sqrt();
                if score > best.0 {
                    best = (score, (r, c));
                }
            }
        }
        let (r, c) = best.1;
        let dx = (c as f64 - st.init_origin.1 as f64) / fw as f64;
        let dy = (r as f64 - st.init_origin.0 as f64) / fh as f64;
        let b = &st.init_box;
        st.current_box = BoundingBox::new(b.x1 + dx, b.y1 + dy, b.x2 + dx, b.y2 + dy)?;
        st.origin = (r, c);
        Ok(TrackOutput {
            bbox: st.current_box,
            confidence: ((best.0 + 1.0) / 2.0).clamp(0.0, 1.0),
        })
    }
}
