use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::TrackerConfig;
use crate::error::{Error, Result};
use crate::frame::Raster4;
use crate::geometry::BoundingBox;
use crate::tensor::{read_checkpoint, write_checkpoint, Bound, ParamId, ParamSet, Tape, Tensor, Var};

/// Optimizer group of everything outside the backbone, plus the backbone's
/// 4-channel input layer, which always starts from scratch.
pub const GROUP_MODEL: usize = 0;
/// Optimizer group of the remaining convolutional backbone.
pub const GROUP_BACKBONE: usize = 1;

const LN_EPS: f64 = 1e-5;

/// Smallest corner separation of a predicted box, in crop units.
const MIN_EXTENT: f64 = 1e-6;

#[derive(Debug, Clone)]
struct Conv {
    kernel: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Attn {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct Ffn {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderBlock {
    norm1: Norm,
    attn: Attn,
    norm2: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct DecoderBlock {
    norm1: Norm,
    self_attn: Attn,
    norm2: Norm,
    cross_attn: Attn,
    norm3: Norm,
    ffn: Ffn,
}

#[derive(Debug, Clone)]
struct Layout {
    backbone: Vec<Conv>,
    input_proj: Linear,
    encoder: Vec<EncoderBlock>,
    encoder_norm: Norm,
    query: ParamId,
    decoder: Vec<DecoderBlock>,
    decoder_norm: Norm,
    head: Vec<Linear>,
}

struct Builder<'a> {
    params: &'a mut ParamSet,
    rng: ChaCha8Rng,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, group: usize) -> Result<ParamId> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.gen_range(-bound..bound)).collect();
        self.params.add(name, Tensor::new(shape, data)?, group)
    }

    fn constant(&mut self, name: &str, shape: &[usize], value: f64, group: usize) -> Result<ParamId> {
        let n = shape.iter().product();
        self.params.add(name, Tensor::new(shape, vec![value; n])?, group)
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize, gain: f64) -> Result<Linear> {
        let bound = gain * (6.0 / (fan_in + fan_out) as f64).sqrt();
        Ok(Linear {
            w: self.uniform(&format!("{name}.w"), &[fan_in, fan_out], bound, GROUP_MODEL)?,
            b: self.constant(&format!("{name}.b"), &[fan_out], 0.0, GROUP_MODEL)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.constant(&format!("{name}.gain"), &[d], 1.0, GROUP_MODEL)?,
            bias: self.constant(&format!("{name}.bias"), &[d], 0.0, GROUP_MODEL)?,
        })
    }

    fn attn(&mut self, name: &str, d: usize) -> Result<Attn> {
        Ok(Attn {
            q: self.linear(&format!("{name}.q"), d, d, 1.0)?,
            k: self.linear(&format!("{name}.k"), d, d, 1.0)?,
            v: self.linear(&format!("{name}.v"), d, d, 1.0)?,
            out: self.linear(&format!("{name}.out"), d, d, 1.0)?,
        })
    }

    fn ffn(&mut self, name: &str, d: usize, hidden: usize) -> Result<Ffn> {
        Ok(Ffn {
            up: self.linear(&format!("{name}.up"), d, hidden, 1.0)?,
            down: self.linear(&format!("{name}.down"), hidden, d, 1.0)?,
        })
    }
}

/// Two-dimensional sinusoidal table for a `grid × grid` token group.
/// `offset` shifts the group's coordinates so the template and search
/// tables differ.
fn sincos_table(grid: usize, d: usize, offset: f64) -> Vec<f64> {
    let quarter = d / 4;
    let mut out = Vec::with_capacity(grid * grid * d);
    for r in 0..grid {
        for c in 0..grid {
            let y = (r as f64 + 0.5) / grid as f64 + offset;
            let x = (c as f64 + 0.5) / grid as f64 + offset;
            let freq = |k: usize| PI * 2f64.powf(6.0 * k as f64 / quarter as f64);
            out.extend((0..quarter).map(|k| (x * freq(k)).sin()));
            out.extend((0..quarter).map(|k| (x * freq(k)).cos()));
            out.extend((0..quarter).map(|k| (y * freq(k)).sin()));
            out.extend((0..quarter).map(|k| (y * freq(k)).cos()));
        }
    }
    out
}

/// The RGB-D tracking network: convolutional backbone over 4-channel crops,
/// token concatenation, encoder-decoder transformer with one learned query,
/// and a three-layer corner regression head.
#[derive(Debug, Clone)]
pub struct DtrdModel {
    config: TrackerConfig,
    params: ParamSet,
    layout: Layout,
    search_pe: Vec<f64>,
    template_pe: Vec<f64>,
}

impl DtrdModel {
    /// Builds a model with weights drawn from `config.init_seed`.
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        let d = config.model_dim;
        let mut b = Builder {
            params: &mut params,
            rng: ChaCha8Rng::seed_from_u64(config.init_seed),
        };

        let mut backbone = Vec::new();
        let mut c_in = 4;
        for (i, c_out) in config.backbone_widths().into_iter().enumerate() {
            let bound = (6.0 / (c_in * 9) as f64).sqrt();
            let group = if i == 0 { GROUP_MODEL } else { GROUP_BACKBONE };
            backbone.push(Conv {
                kernel: b.uniform(&format!("backbone.{i}.kernel"), &[c_out, c_in, 3, 3], bound, group)?,
                bias: b.constant(&format!("backbone.{i}.bias"), &[c_out], 0.0, group)?,
            });
            c_in = c_out;
        }
        let input_proj = b.linear("input_proj", config.channels, d, 1.0)?;
        let encoder = (0..config.encoder_blocks)
            .map(|i| {
                Ok(EncoderBlock {
                    norm1: b.norm(&format!("encoder.{i}.norm1"), d)?,
                    attn: b.attn(&format!("encoder.{i}.attn"), d)?,
                    norm2: b.norm(&format!("encoder.{i}.norm2"), d)?,
                    ffn: b.ffn(&format!("encoder.{i}.ffn"), d, config.ffn_dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let encoder_norm = b.norm("encoder.norm", d)?;
        let query = b.uniform("decoder.query", &[1, d], 1.0, GROUP_MODEL)?;
        let decoder = (0..config.decoder_blocks)
            .map(|i| {
                Ok(DecoderBlock {
                    norm1: b.norm(&format!("decoder.{i}.norm1"), d)?,
                    self_attn: b.attn(&format!("decoder.{i}.self_attn"), d)?,
                    norm2: b.norm(&format!("decoder.{i}.norm2"), d)?,
                    cross_attn: b.attn(&format!("decoder.{i}.cross_attn"), d)?,
                    norm3: b.norm(&format!("decoder.{i}.norm3"), d)?,
                    ffn: b.ffn(&format!("decoder.{i}.ffn"), d, config.ffn_dim)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let decoder_norm = b.norm("decoder.norm", d)?;
        let head = vec![
            b.linear("head.0", d, d, 1.0)?,
            b.linear("head.1", d, d, 1.0)?,
            b.linear("head.2", d, 4, 0.1)?,
        ];

        // start from a centered upright box rather than a point
        let prior = [0.4f64, 0.25, 0.6, 0.75].map(|p| (p / (1.0 - p)).ln());
        params.get_mut(head[2].b).data_mut().copy_from_slice(&prior);

        let search_pe = sincos_table(config.search_grid(), d, 0.0);
        let template_pe = sincos_table(config.template_grid(), d, 1.0);
        Ok(DtrdModel {
            config,
            params,
            layout: Layout {
                backbone,
                input_proj,
                encoder,
                encoder_norm,
                query,
                decoder,
                decoder_norm,
                head,
            },
            search_pe,
            template_pe,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Number of affine layers in the regression head.
    pub fn head_depth(&self) -> usize {
        self.layout.head.len()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        self.params.bind(tape)
    }

    fn linear(&self, tape: &mut Tape<'_>, b: &Bound, l: &Linear, x: Var) -> Result<Var> {
        tape.linear(x, b.get(l.w), b.get(l.b))
    }

    fn norm(&self, tape: &mut Tape<'_>, b: &Bound, n: &Norm, x: Var) -> Result<Var> {
        tape.layernorm(x, b.get(n.gain), b.get(n.bias), LN_EPS)
    }

    fn attention(&self, tape: &mut Tape<'_>, b: &Bound, a: &Attn, xq: Var, xkv: Var) -> Result<Var> {
        let q = self.linear(tape, b, &a.q, xq)?;
        let k = self.linear(tape, b, &a.k, xkv)?;
        let v = self.linear(tape, b, &a.v, xkv)?;
        let o = tape.multi_head_attention(q, k, v, self.config.heads)?;
        self.linear(tape, b, &a.out, o)
    }

    fn ffn(&self, tape: &mut Tape<'_>, b: &Bound, f: &Ffn, x: Var) -> Result<Var> {
        let h = self.linear(tape, b, &f.up, x)?;
        let h = tape.relu(h);
        self.linear(tape, b, &f.down, h)
    }

    /// Backbone over a fused crop; returns a `[C × H/s × W/s]` feature map.
    pub fn backbone(&self, tape: &mut Tape<'_>, b: &Bound, img: &Raster4) -> Result<Var> {
        let s = self.config.stride;
        if img.height % s != 0 || img.width % s != 0 {
            return Err(Error::shape(format!(
                "backbone input {}×{} is not divisible by stride {s}",
                img.height, img.width
            )));
        }
        let mut x = tape.constant(&[4, img.height, img.width], img.to_chw())?;
        for conv in &self.layout.backbone {
            x = tape.conv2d(x, b.get(conv.kernel), 2, 1)?;
            x = tape.add_channel_bias(x, b.get(conv.bias))?;
            x = tape.relu(x);
        }
        debug_assert_eq!(tape.shape(x), &[self.config.channels, img.height / s, img.width / s]);
        Ok(x)
    }

    /// Feature map `[C × h × w]` to row-major tokens `[h·w × C]`.
    pub fn tokens(&self, tape: &mut Tape<'_>, feature: Var) -> Result<Var> {
        let (c, hw) = match tape.shape(feature) {
            [c, h, w] => (*c, h * w),
            s => return Err(Error::shape(format!("expected a C×H×W feature map, got {s:?}"))),
        };
        let flat = tape.reshape(feature, &[c, hw])?;
        tape.transpose(flat)
    }

    /// Flattens both feature maps and concatenates them, search tokens first.
    pub fn flatten_concat(&self, tape: &mut Tape<'_>, f_z: Var, f_x: Var) -> Result<Var> {
        let (cz, cx) = (tape.shape(f_z)[0], tape.shape(f_x)[0]);
        if cz != cx {
            return Err(Error::shape(format!(
                "template has {cz} channels but search has {cx}"
            )));
        }
        let tz = self.tokens(tape, f_z)?;
        let tx = self.tokens(tape, f_x)?;
        tape.concat_rows(&[tx, tz])
    }

    /// Encoder over the token sequence, then a single-query decoder.
    /// Returns the final query embedding `[1 × d]`.
    pub fn transformer(&self, tape: &mut Tape<'_>, b: &Bound, tokens: Var) -> Result<Var> {
        let l = tape.shape(tokens)[0];
        let expect = self.config.token_count();
        if l != expect {
            return Err(Error::shape(format!(
                "token sequence has {l} rows, architecture expects {expect}"
            )));
        }
        let mut x = self.linear(tape, b, &self.layout.input_proj, tokens)?;
        if self.config.positional_embedding {
            let mut pe = self.search_pe.clone();
            pe.extend_from_slice(&self.template_pe);
            let pe = tape.constant(&[l, self.config.model_dim], pe)?;
            x = tape.add(x, pe)?;
        }
        for blk in &self.layout.encoder {
            let h = self.norm(tape, b, &blk.norm1, x)?;
            let h = self.attention(tape, b, &blk.attn, h, h)?;
            x = tape.add(x, h)?;
            let h = self.norm(tape, b, &blk.norm2, x)?;
            let h = self.ffn(tape, b, &blk.ffn, h)?;
            x = tape.add(x, h)?;
        }
        let memory = self.norm(tape, b, &self.layout.encoder_norm, x)?;

        let mut q = b.get(self.layout.query);
        for blk in &self.layout.decoder {
            let h = self.norm(tape, b, &blk.norm1, q)?;
            let h = self.attention(tape, b, &blk.self_attn, h, h)?;
            q = tape.add(q, h)?;
            let h = self.norm(tape, b, &blk.norm2, q)?;
            let h = self.attention(tape, b, &blk.cross_attn, h, memory)?;
            q = tape.add(q, h)?;
            let h = self.norm(tape, b, &blk.norm3, q)?;
            let h = self.ffn(tape, b, &blk.ffn, h)?;
            q = tape.add(q, h)?;
        }
        self.norm(tape, b, &self.layout.decoder_norm, q)
    }

    /// Three affine layers with ReLU between, squashed into `[0, 1]`.
    /// Returns the raw `[4]` outputs before corner reordering.
    pub fn head(&self, tape: &mut Tape<'_>, b: &Bound, embedding: Var) -> Result<Var> {
        let d = self.config.model_dim;
        if tape.value(embedding).len() != d {
            return Err(Error::shape(format!(
                "embedding has {} values, head expects {d}",
                tape.value(embedding).len()
            )));
        }
        let mut h = tape.reshape(embedding, &[1, d])?;
        let last = self.layout.head.len() - 1;
        for (i, layer) in self.layout.head.iter().enumerate() {
            h = self.linear(tape, b, layer, h)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        let h = tape.reshape(h, &[4])?;
        Ok(tape.sigmoid(h))
    }

    /// Orders raw outputs into `[x1, y1, x2, y2]` with `x1 <= x2`, `y1 <= y2`.
    pub fn order_corners(tape: &mut Tape<'_>, raw: Var) -> Result<Var> {
        let a = tape.select(raw, &[0, 1])?;
        let c = tape.select(raw, &[2, 3])?;
        let lo = tape.minimum(a, c)?;
        let hi = tape.maximum(a, c)?;
        let lo = tape.reshape(lo, &[1, 2])?;
        let hi = tape.reshape(hi, &[1, 2])?;
        let both = tape.concat_rows(&[lo, hi])?;
        tape.reshape(both, &[4])
    }

    /// Full forward pass. Returns ordered corners `[4]` in search-crop units.
    pub fn forward(&self, tape: &mut Tape<'_>, b: &Bound, template: &Raster4, search: &Raster4) -> Result<Var> {
        let f_z = self.backbone(tape, b, template)?;
        let f_x = self.backbone(tape, b, search)?;
        let tokens = self.flatten_concat(tape, f_z, f_x)?;
        self.decode(tape, b, tokens)
    }

    /// Forward pass with template tokens computed earlier by
    /// [`DtrdModel::template_tokens`].
    pub fn forward_cached(
        &self,
        tape: &mut Tape<'_>,
        b: &Bound,
        template_tokens: &[f64],
        search: &Raster4,
    ) -> Result<Var> {
        let tz = tape.constant(
            &[self.config.template_grid().pow(2), self.config.channels],
            template_tokens.to_vec(),
        )?;
        let f_x = self.backbone(tape, b, search)?;
        let tx = self.tokens(tape, f_x)?;
        let tokens = tape.concat_rows(&[tx, tz])?;
        self.decode(tape, b, tokens)
    }

    fn decode(&self, tape: &mut Tape<'_>, b: &Bound, tokens: Var) -> Result<Var> {
        let emb = self.transformer(tape, b, tokens)?;
        let raw = self.head(tape, b, emb)?;
        Self::order_corners(tape, raw)
    }

    /// Template tokens `[L_z × C]` for caching across tracking steps.
    pub fn template_tokens(&self, template: &Raster4) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let f = self.backbone(&mut tape, &b, template)?;
        let t = self.tokens(&mut tape, f)?;
        Ok(tape.value(t).to_vec())
    }

    /// Predicted box in search-crop coordinates.
    pub fn predict(&self, template: &Raster4, search: &Raster4) -> Result<BoundingBox> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let out = self.forward(&mut tape, &b, template, search)?;
        corners_to_box(tape.value(out))
    }

    pub fn predict_cached(&self, template_tokens: &[f64], search: &Raster4) -> Result<BoundingBox> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let out = self.forward_cached(&mut tape, &b, template_tokens, search)?;
        corners_to_box(tape.value(out))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        write_checkpoint(
            BufWriter::new(f),
            self.params.iter().map(|p| (p.name.as_str(), &p.tensor)),
        )
    }

    /// Builds a model for `config` and fills it from a checkpoint file.
    pub fn load(config: TrackerConfig, path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        let entries = read_checkpoint(BufReader::new(f))?;
        let mut model = DtrdModel::new(config)?;
        model.params.load_values(entries)?;
        Ok(model)
    }
}

/// Converts ordered corner values into a valid box, separating coincident
/// corners by a minimal extent.
pub fn corners_to_box(c: &[f64]) -> Result<BoundingBox> {
    let (mut x1, mut y1, mut x2, mut y2) = (c[0].min(c[2]), c[1].min(c[3]), c[0].max(c[2]), c[1].max(c[3]));
    if x2 - x1 < MIN_EXTENT {
        let m = ((x1 + x2) / 2.0).clamp(MIN_EXTENT / 2.0, 1.0 - MIN_EXTENT / 2.0);
        x1 = m - MIN_EXTENT / 2.0;
        x2 = m + MIN_EXTENT / 2.0;
    }
    if y2 - y1 < MIN_EXTENT {
        let m = ((y1 + y2) / 2.0).clamp(MIN_EXTENT / 2.0, 1.0 - MIN_EXTENT / 2.0);
        y1 = m - MIN_EXTENT / 2.0;
        y2 = m + MIN_EXTENT / 2.0;
    }
    BoundingBox::new(x1, y1, x2, y2)
}
