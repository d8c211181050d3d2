//! On-disk sequence format: one `NNNNNN.rgbd` per frame plus `gt.csv` and
//! `world.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::frame::{RgbdFrame, DEFAULT_MAX_DEPTH};
use crate::geometry::BoundingBox;

pub const FRAME_MAGIC: &[u8; 4] = b"RGBD";

/// A frame quantized to 8-bit color and millimeter depth.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedFrame {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
    pub depth_mm: Vec<u16>,
}

impl EncodedFrame {
    pub fn encode(frame: &RgbdFrame) -> Self {
        EncodedFrame {
            width: frame.width() as u32,
            height: frame.height() as u32,
            rgb: frame.rgb().iter().map(|v| (v * 255.0).round() as u8).collect(),
            depth_mm: frame
                .depth()
                .iter()
                .map(|d| (d * 1000.0).round().min(u16::MAX as f64) as u16)
                .collect(),
        }
    }

    pub fn decode(&self, max_depth: f64, timestamp: f64) -> Result<RgbdFrame> {
        RgbdFrame::new(
            self.width as usize,
            self.height as usize,
            self.rgb.iter().map(|&v| v as f64 / 255.0).collect(),
            self.depth_mm.iter().map(|&d| d as f64 / 1000.0).collect(),
            max_depth,
            timestamp,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + self.rgb.len() + 2 * self.depth_mm.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.rgb);
        for d in &self.depth_mm {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != FRAME_MAGIC {
            return Err(Error::Format("frame file lacks the RGBD header".into()));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = width as usize * height as usize;
        if bytes.len() != 12 + 5 * n {
            return Err(Error::Format(format!(
                "frame {width}×{height} needs {} bytes, file has {}",
                12 + 5 * n,
                bytes.len()
            )));
        }
        let rgb = bytes[12..12 + 3 * n].to_vec();
        let depth_mm = bytes[12 + 3 * n..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]))
            .collect();
        Ok(EncodedFrame {
            width,
            height,
            rgb,
            depth_mm,
        })
    }
}

/// Round-trips a frame through the sensor quantization.
pub fn quantize(frame: &RgbdFrame) -> Result<RgbdFrame> {
    EncodedFrame::encode(frame).decode(frame.max_depth(), frame.timestamp)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtRow {
    pub frame: usize,
    pub agent: usize,
    pub bbox: Option<BoundingBox>,
    /// Unoccluded projection clipped to the frame, `None` when out of view.
    /// Stored in `extent.csv`.
    pub extent: Option<BoundingBox>,
}

/// Body 0 is the robot, body `i + 1` is agent `i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldRow {
    pub frame: usize,
    pub body: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub frames: Vec<EncodedFrame>,
    pub agents: usize,
    pub gt: Vec<GtRow>,
    pub world: Vec<WorldRow>,
}

impl Sequence {
    /// Ground-truth box of `agent` on `frame`.
    pub fn gt_box(&self, frame: usize, agent: usize) -> Option<BoundingBox> {
        self.gt.get(frame * self.agents + agent).and_then(|r| r.bbox)
    }

    /// Unoccluded extent of `agent` on `frame`.
    pub fn extent_box(&self, frame: usize, agent: usize) -> Option<BoundingBox> {
        self.gt.get(frame * self.agents + agent).and_then(|r| r.extent)
    }

    /// Forward distance from the follower to `agent` on `frame`, from the
    /// world log.
    pub fn range(&self, frame: usize, agent: usize) -> Option<f64> {
        let stride = self.agents + 1;
        let robot = self.world.get(frame * stride)?;
        let body = self.world.get(frame * stride + agent + 1)?;
        if robot.frame != frame || robot.body != 0 || body.body != agent + 1 {
            return None;
        }
        Some((body.x - robot.x) * robot.theta.cos() + (body.y - robot.y) * robot.theta.sin())
    }

    pub fn frame(&self, index: usize) -> Result<RgbdFrame> {
        self.frames[index].decode(DEFAULT_MAX_DEPTH, index as f64)
    }
}

fn parse<T: std::str::FromStr>(field: Option<&str>, what: &str, line: usize) -> Result<T> {
    field
        .and_then(|f| f.trim().parse().ok())
        .ok_or_else(|| Error::Format(format!("line {line}: bad or missing {what}")))
}

pub fn write_sequence(dir: &Path, seq: &Sequence) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let path = dir.join(format!("{i:06}.rgbd"));
        fs::write(&path, f.to_bytes()).map_err(|e| Error::io(&path, e))?;
    }
    let mut gt = String::from("frame,agent,x1,y1,x2,y2,visible\n");
    for r in &seq.gt {
        let (c, v) = match r.bbox {
            Some(b) => (b.corners(), 1),
            None => ([0.0; 4], 0),
        };
        writeln!(gt, "{},{},{:.6},{:.6},{:.6},{:.6},{v}", r.frame, r.agent, c[0], c[1], c[2], c[3]).unwrap();
    }
    let path = dir.join("gt.csv");
    fs::write(&path, gt).map_err(|e| Error::io(&path, e))?;
    let mut extent = String::from("frame,agent,x1,y1,x2,y2,in_view\n");
    for r in &seq.gt {
        let (c, v) = match r.extent {
            Some(b) => (b.corners(), 1),
            None => ([0.0; 4], 0),
        };
        writeln!(extent, "{},{},{:.6},{:.6},{:.6},{:.6},{v}", r.frame, r.agent, c[0], c[1], c[2], c[3]).unwrap();
    }
    let path = dir.join("extent.csv");
    fs::write(&path, extent).map_err(|e| Error::io(&path, e))?;
    let mut world = String::from("frame,body,x,y,theta\n");
    for r in &seq.world {
        writeln!(world, "{},{},{:.6},{:.6},{:.6}", r.frame, r.body, r.x, r.y, r.theta).unwrap();
    }
    let path = dir.join("world.csv");
    fs::write(&path, world).map_err(|e| Error::io(&path, e))
}

/// Rows of `frame,agent,x1,y1,x2,y2,flag`; the box is `None` when the flag
/// is 0.
fn read_boxes(path: &Path) -> Result<Vec<(usize, usize, Option<BoundingBox>)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let mut f = line.split(',');
        let frame = parse(f.next(), "frame", ln + 1)?;
        let agent = parse(f.next(), "agent", ln + 1)?;
        let c: Vec<f64> = (0..4).map(|_| parse(f.next(), "coordinate", ln + 1)).collect::<Result<_>>()?;
        let flag: u8 = parse(f.next(), "flag", ln + 1)?;
        let bbox = if flag == 1 {
            Some(BoundingBox::new(c[0], c[1], c[2], c[3])?)
        } else {
            None
        };
        out.push((frame, agent, bbox));
    }
    Ok(out)
}

pub fn read_sequence(dir: &Path) -> Result<Sequence> {
    let mut names: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".rgbd"))
        .collect();
    names.sort();
    let mut frames = Vec::with_capacity(names.len());
    for n in &names {
        let path = dir.join(n);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        frames.push(EncodedFrame::from_bytes(&bytes)?);
    }

    let gt_path = dir.join("gt.csv");
    let boxes = read_boxes(&gt_path)?;
    // Extents are optional so sequences from other recorders still load.
    let extent_path = dir.join("extent.csv");
    let extents = if extent_path.is_file() {
        let e = read_boxes(&extent_path)?;
        if e.len() != boxes.len() {
            return Err(Error::Format(format!("{}: row count differs from gt.csv", extent_path.display())));
        }
        e.into_iter().map(|(_, _, b)| b).collect()
    } else {
        vec![None; boxes.len()]
    };
    let gt: Vec<GtRow> = boxes
        .into_iter()
        .zip(extents)
        .map(|((frame, agent, bbox), extent)| GtRow {
            frame,
            agent,
            bbox,
            extent,
        })
        .collect();
    let agents = gt.iter().map(|r| r.agent + 1).max().unwrap_or(0);
    if agents == 0 || gt.len() != frames.len() * agents {
        return Err(Error::Format(format!(
            "{}: {} annotation rows for {} frames",
            gt_path.display(),
            gt.len(),
            frames.len()
        )));
    }

    let path = dir.join("world.csv");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut world = Vec::new();
    for (ln, line) in text.lines().enumerate().skip(1).filter(|(_, l)| !l.trim().is_empty()) {
        let mut f = line.split(',');
        world.push(WorldRow {
            frame: parse(f.next(), "frame", ln + 1)?,
            body: parse(f.next(), "body", ln + 1)?,
            x: parse(f.next(), "x", ln + 1)?,
            y: parse(f.next(), "y", ln + 1)?,
            theta: parse(f.next(), "theta", ln + 1)?,
        });
    }
    Ok(Sequence {
        frames,
        agents,
        gt,
        world,
    })
}
