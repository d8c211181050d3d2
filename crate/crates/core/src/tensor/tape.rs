use std::borrow::Cow;

use super::kernels::{dot, gemm, gemm_a_bt, gemm_at_b};
use super::{check_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Maximum(Var, Var),
    Minimum(Var, Var),
    AddBias(Var, Var),
    AddChannelBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sum(Var),
    Mean(Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Select(Var, Vec<usize>),
    Conv2d {
        input: Var,
        kernel: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

#[derive(Debug)]
struct Node<'a> {
    shape: Vec<usize>,
    value: Cow<'a, [f64]>,
    op: Op,
    tracked: bool,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// Leaves borrow their data from the source tensors, so a tape built over a
/// parameter set lives no longer than that set. The tape is consumed by
/// [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into the gradient slot of `tensor`.
    pub fn accumulate_into(&self, v: Var, tensor: &mut Tensor) -> Result<()> {
        match self.get(v) {
            Some(g) => tensor.accumulate_grad(g),
            None => Ok(()),
        }
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::shape(format!("{op}: shapes {a:?} and {b:?} differ")));
    }
    Ok(())
}

fn as_matrix(op: &str, shape: &[usize]) -> Result<(usize, usize)> {
    match shape {
        [r, c] => Ok((*r, *c)),
        _ => Err(Error::shape(format!("{op}: expected a matrix, got {shape:?}"))),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn record(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, parents: &[Var]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let tracked = parents.iter().any(|p| self.nodes[p.0].tracked);
        self.nodes.push(Node {
            shape,
            value: Cow::Owned(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a tensor as a leaf. Gradients are tracked iff the tensor
    /// requires them.
    pub fn leaf(&mut self, t: &'a Tensor) -> Var {
        self.nodes.push(Node {
            shape: t.shape().to_vec(),
            value: Cow::Borrowed(t.data()),
            op: Op::Leaf,
            tracked: t.requires_grad(),
        });
        Var(self.nodes.len() - 1)
    }

    /// Records an owned untracked value.
    pub fn constant(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::shape(format!(
                "constant of shape {shape:?} given {} values",
                data.len()
            )));
        }
        self.nodes.push(Node {
            shape: shape.to_vec(),
            value: Cow::Owned(data),
            op: Op::Leaf,
            tracked: false,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an owned leaf whose gradient is tracked.
    pub fn variable(&mut self, shape: &[usize], data: Vec<f64>) -> Result<Var> {
        let v = self.constant(shape, data)?;
        self.nodes[v.0].tracked = true;
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v), self.value(v).to_vec()).expect("recorded shapes are valid")
    }

    fn binary(&mut self, name: &str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Vec<f64>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b).iter())
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Sub(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Mul(a, b), &[a, b]))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("div", a, b, |x, y| x / y)?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Div(a, b), &[a, b]))
    }

    /// Elementwise maximum; ties route the gradient to `a`.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("maximum", a, b, |x, y| if x >= y { x } else { y })?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Maximum(a, b), &[a, b]))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.binary("minimum", a, b, |x, y| if x <= y { x } else { y })?;
        Ok(self.record(self.shape(a).to_vec(), out, Op::Minimum(a, b), &[a, b]))
    }

    /// Adds `bias[d]` to every row of `x[...×d]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let d = *self.shape(x).last().expect("non-empty shape");
        if self.shape(bias) != [d] {
            return Err(Error::shape(format!(
                "add_bias: bias {:?} does not match last dim of {:?}",
                self.shape(bias),
                self.shape(x)
            )));
        }
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(b).map(|(v, bb)| v + bb))
            .collect();
        Ok(self.record(self.shape(x).to_vec(), out, Op::AddBias(x, bias), &[x, bias]))
    }

    /// Adds `bias[c]` to every spatial position of channel `c` in `x[C×H×W]`.
    pub fn add_channel_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let c = match self.shape(x) {
            [c, _, _] => *c,
            s => return Err(Error::shape(format!("add_channel_bias: expected C×H×W, got {s:?}"))),
        };
        if self.shape(bias) != [c] {
            return Err(Error::shape(format!(
                "add_channel_bias: bias {:?} for {c} channels",
                self.shape(bias)
            )));
        }
        let plane = self.value(x).len() / c;
        let b = self.value(bias);
        let out: Vec<f64> = self
            .value(x)
            .chunks_exact(plane)
            .zip(b)
            .flat_map(|(ch, bb)| ch.iter().map(move |v| v + bb))
            .collect();
        Ok(self.record(self.shape(x).to_vec(), out, Op::AddChannelBias(x, bias), &[x, bias]))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * c).collect();
        self.record(self.shape(x).to_vec(), out, Op::Scale(x, c), &[x])
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let out = self.value(x).iter().map(|v| v + c).collect();
        self.record(self.shape(x).to_vec(), out, Op::AddScalar(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| v.max(0.0)).collect();
        self.record(self.shape(x).to_vec(), out, Op::Relu(x), &[x])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.record(self.shape(x).to_vec(), out, Op::Sigmoid(x), &[x])
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.abs()).collect();
        self.record(self.shape(x).to_vec(), out, Op::Abs(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.record(vec![1], vec![s], Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let m = v.iter().sum::<f64>() / v.len() as f64;
        self.record(vec![1], vec![m], Op::Mean(x), &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = as_matrix("matmul", self.shape(a))?;
        let (k2, n) = as_matrix("matmul", self.shape(b))?;
        if k != k2 {
            return Err(Error::shape(format!(
                "matmul: inner dimensions of {:?} and {:?} disagree",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(self.value(a), self.value(b), &mut out, m, k, n);
        Ok(self.record(vec![m, n], out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x·w + b` with `w` stored as `[in × out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (m, n) = as_matrix("transpose", self.shape(x))?;
        let v = self.value(x);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = v[i * n + j];
            }
        }
        Ok(self.record(vec![n, m], out, Op::Transpose(x), &[x]))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        check_shape(shape)?;
        if shape.iter().product::<usize>() != self.value(x).len() {
            return Err(Error::shape(format!(
                "reshape: {:?} cannot become {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.value(x).to_vec();
        Ok(self.record(shape.to_vec(), out, Op::Reshape(x), &[x]))
    }

    /// Stacks matrices with equal column counts vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows: no inputs"))?;
        let (_, n) = as_matrix("concat_rows", self.shape(first))?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = as_matrix("concat_rows", self.shape(p))?;
            if c != n {
                return Err(Error::shape(format!(
                    "concat_rows: column counts {n} and {c} differ"
                )));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.record(vec![rows, n], out, Op::ConcatRows(parts.to_vec()), parts))
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (m, n) = as_matrix("slice_rows", self.shape(x))?;
        if start >= end || end > m {
            return Err(Error::shape(format!(
                "slice_rows: range {start}..{end} invalid for {m} rows"
            )));
        }
        let out = self.value(x)[start * n..end * n].to_vec();
        Ok(self.record(vec![end - start, n], out, Op::SliceRows(x, start), &[x]))
    }

    /// Gathers elements of the flattened `x` into a vector.
    pub fn select(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        let len = self.value(x).len();
        if indices.is_empty() || indices.iter().any(|&i| i >= len) {
            return Err(Error::shape(format!(
                "select: indices {indices:?} invalid for {len} elements"
            )));
        }
        let v = self.value(x);
        let out = indices.iter().map(|&i| v[i]).collect();
        Ok(self.record(vec![indices.len()], out, Op::Select(x, indices.to_vec()), &[x]))
    }

    /// 2-D cross-correlation of `input[C_in×H×W]` with `kernel[C_out×C_in×k×k]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let (c_in, h, w) = match self.shape(input) {
            [c, h, w] => (*c, *h, *w),
            s => return Err(Error::shape(format!("conv2d: input must be C×H×W, got {s:?}"))),
        };
        let (c_out, k) = match self.shape(kernel) {
            [co, ci, k1, k2] if *ci == c_in && k1 == k2 => (*co, *k1),
            s => {
                return Err(Error::shape(format!(
                    "conv2d: kernel {s:?} incompatible with input {:?}",
                    self.shape(input)
                )))
            }
        };
        if stride == 0 {
            return Err(Error::shape("conv2d: stride must be positive"));
        }
        if h + 2 * padding < k || w + 2 * padding < k {
            return Err(Error::shape(format!(
                "conv2d: kernel {k} larger than padded input {h}×{w} (padding {padding})"
            )));
        }
        let h_out = (h + 2 * padding - k) / stride + 1;
        let w_out = (w + 2 * padding - k) / stride + 1;
        let geom = ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad: padding,
            h_out,
            w_out,
        };
        let cols = im2col(self.value(input), &geom);
        let mut out = vec![0.0; c_out * h_out * w_out];
        gemm(self.value(kernel), &cols, &mut out, c_out, c_in * k * k, h_out * w_out);
        Ok(self.record(
            vec![c_out, h_out, w_out],
            out,
            Op::Conv2d {
                input,
                kernel,
                geom,
                cols,
            },
            &[input, kernel],
        ))
    }

    /// Normalizes each row over the last dimension, then applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let d = *self.shape(x).last().expect("non-empty shape");
        if self.shape(gain) != [d] || self.shape(bias) != [d] {
            return Err(Error::shape(format!(
                "layernorm: gain {:?} / bias {:?} do not match last dim of {:?}",
                self.shape(gain),
                self.shape(bias),
                self.shape(x)
            )));
        }
        let xv = self.value(x);
        let g = self.value(gain);
        let b = self.value(bias);
        let rows = xv.len() / d;
        let mut xhat = vec![0.0; xv.len()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * g[j] + b[j];
            }
        }
        Ok(self.record(
            self.shape(x).to_vec(),
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            &[x, gain, bias],
        ))
    }

    /// Scaled dot-product attention, `softmax(QKᵀ/√d)·V`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var) -> Result<Var> {
        self.multi_head_attention(q, k, v, 1)
    }

    /// Attention with the model dimension split into `heads` equal column groups.
    pub fn multi_head_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (lq, d) = as_matrix("attention", self.shape(q))?;
        let (lk, dk) = as_matrix("attention", self.shape(k))?;
        let (lv, dv) = as_matrix("attention", self.shape(v))?;
        if d != dk || d != dv || lk != lv {
            return Err(Error::shape(format!(
                "attention: query {:?}, key {:?}, value {:?} are incompatible",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            )));
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::shape(format!(
                "attention: width {d} not divisible into {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut probs = vec![0.0; heads * lq * lk];
        let mut out = vec![0.0; lq * d];
        for h in 0..heads {
            let qh = columns(qv, lq, d, h * dh, dh);
            let kh = columns(kv, lk, d, h * dh, dh);
            let vh = columns(vv, lk, d, h * dh, dh);
            let p = &mut probs[h * lq * lk..(h + 1) * lq * lk];
            gemm_a_bt(&qh, &kh, p, lq, dh, lk);
            for row in p.chunks_exact_mut(lk) {
                softmax_in_place(row, scale);
            }
            let mut oh = vec![0.0; lq * dh];
            gemm(p, &vh, &mut oh, lq, lk, dh);
            scatter_columns(&oh, &mut out, lq, d, h * dh, dh);
        }
        Ok(self.record(
            vec![lq, d],
            out,
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            },
            &[q, k, v],
        ))
    }

    /// Reverse pass from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if !nodes[loss.0].tracked {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let mut acc = |p: Var, f: &mut dyn FnMut(&mut [f64])| {
                if !nodes[p.0].tracked {
                    return;
                }
                let slot = grads[p.0].get_or_insert_with(|| vec![0.0; nodes[p.0].value.len()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| add_into(s, &g));
                }
                Op::Sub(a, b) => {
                    acc(*a, &mut |s| add_into(s, &g));
                    acc(*b, &mut |s| s.iter_mut().zip(&g).for_each(|(x, gv)| *x -= gv));
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * bv[j];
                        }
                    });
                    acc(*b, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * av[j];
                        }
                    });
                }
                Op::Div(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] / bv[j];
                        }
                    });
                    acc(*b, &mut |s| {
                        for j in 0..s.len() {
                            s[j] -= g[j] * av[j] / (bv[j] * bv[j]);
                        }
                    });
                }
                Op::Maximum(a, b) | Op::Minimum(a, b) => {
                    let is_max = matches!(node.op, Op::Maximum(..));
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    let pick_a: Vec<bool> = av
                        .iter()
                        .zip(bv.iter())
                        .map(|(x, y)| if is_max { x >= y } else { x <= y })
                        .collect();
                    acc(*a, &mut |s| {
                        for j in 0..s.len() {
                            if pick_a[j] {
                                s[j] += g[j];
                            }
                        }
                    });
                    acc(*b, &mut |s| {
                        for j in 0..s.len() {
                            if !pick_a[j] {
                                s[j] += g[j];
                            }
                        }
                    });
                }
                Op::AddBias(x, b) => {
                    acc(*x, &mut |s| add_into(s, &g));
                    let d = nodes[b.0].value.len();
                    acc(*b, &mut |s| {
                        for row in g.chunks_exact(d) {
                            add_into(s, row);
                        }
                    });
                }
                Op::AddChannelBias(x, b) => {
                    acc(*x, &mut |s| add_into(s, &g));
                    let c = nodes[b.0].value.len();
                    let plane = g.len() / c;
                    acc(*b, &mut |s| {
                        for (ch, sv) in g.chunks_exact(plane).zip(s.iter_mut()) {
                            *sv += ch.iter().sum::<f64>();
                        }
                    });
                }
                Op::Scale(x, c) => {
                    acc(*x, &mut |s| s.iter_mut().zip(&g).for_each(|(a, gv)| *a += c * gv));
                }
                Op::AddScalar(x) | Op::Reshape(x) => {
                    acc(*x, &mut |s| add_into(s, &g));
                }
                Op::Relu(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |s| {
                        for j in 0..s.len() {
                            if xv[j] > 0.0 {
                                s[j] += g[j];
                            }
                        }
                    });
                }
                Op::Sigmoid(x) => {
                    let yv = &node.value;
                    acc(*x, &mut |s| {
                        for j in 0..s.len() {
                            s[j] += g[j] * yv[j] * (1.0 - yv[j]);
                        }
                    });
                }
                Op::Abs(x) => {
                    let xv = &nodes[x.0].value;
                    acc(*x, &mut |s| {
                        for j in 0..s.len() {
                            if xv[j] > 0.0 {
                                s[j] += g[j];
                            } else if xv[j] < 0.0 {
                                s[j] -= g[j];
                            }
                        }
                    });
                }
                Op::Sum(x) => {
                    acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0]));
                }
                Op::Mean(x) => {
                    let n = nodes[x.0].value.len() as f64;
                    acc(*x, &mut |s| s.iter_mut().for_each(|a| *a += g[0] / n));
                }
                Op::MatMul(a, b) => {
                    let (m, k) = (nodes[a.0].shape[0], nodes[a.0].shape[1]);
                    let n = nodes[b.0].shape[1];
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    acc(*a, &mut |s| gemm_a_bt(&g, bv, s, m, n, k));
                    acc(*b, &mut |s| gemm_at_b(av, &g, s, m, k, n));
                }
                Op::Transpose(x) => {
                    let (m, n) = (nodes[x.0].shape[0], nodes[x.0].shape[1]);
                    acc(*x, &mut |s| {
                        for i in 0..m {
                            for j in 0..n {
                                s[i * n + j] += g[j * m + i];
                            }
                        }
                    });
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let len = nodes[p.0].value.len();
                        let chunk = &g[offset..offset + len];
                        acc(*p, &mut |s| add_into(s, chunk));
                        offset += len;
                    }
                }
                Op::SliceRows(x, start) => {
                    let n = nodes[x.0].shape[1];
                    let off = start * n;
                    acc(*x, &mut |s| add_into(&mut s[off..off + g.len()], &g));
                }
                Op::Select(x, idx) => {
                    acc(*x, &mut |s| {
                        for (gv, &i) in g.iter().zip(idx) {
                            s[i] += gv;
                        }
                    });
                }
                Op::Conv2d {
                    input,
                    kernel,
                    geom,
                    cols,
                } => {
                    let kk = geom.c_in * geom.k * geom.k;
                    let n = geom.h_out * geom.w_out;
                    let kv = &nodes[kernel.0].value;
                    acc(*kernel, &mut |s| gemm_a_bt(&g, cols, s, geom.c_out, n, kk));
                    if nodes[input.0].tracked {
                        let mut dcols = vec![0.0; kk * n];
                        gemm_at_b(kv, &g, &mut dcols, geom.c_out, kk, n);
                        acc(*input, &mut |s| col2im(&dcols, geom, s));
                    }
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let d = nodes[gain.0].value.len();
                    let gv = &nodes[gain.0].value;
                    acc(*gain, &mut |s| {
                        for (gr, xr) in g.chunks_exact(d).zip(xhat.chunks_exact(d)) {
                            for j in 0..d {
                                s[j] += gr[j] * xr[j];
                            }
                        }
                    });
                    acc(*bias, &mut |s| {
                        for gr in g.chunks_exact(d) {
                            add_into(s, gr);
                        }
                    });
                    acc(*x, &mut |s| {
                        let mut dxhat = vec![0.0; d];
                        for (r, (gr, xr)) in g.chunks_exact(d).zip(xhat.chunks_exact(d)).enumerate() {
                            for j in 0..d {
                                dxhat[j] = gr[j] * gv[j];
                            }
                            let sum_d: f64 = dxhat.iter().sum();
                            let sum_dx: f64 = dot(&dxhat, xr);
                            let c = inv_std[r] / d as f64;
                            let sr = &mut s[r * d..(r + 1) * d];
                            for j in 0..d {
                                sr[j] += c * (d as f64 * dxhat[j] - sum_d - xr[j] * sum_dx);
                            }
                        }
                    });
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    heads,
                    probs,
                } => {
                    let (lq, d) = (nodes[q.0].shape[0], nodes[q.0].shape[1]);
                    let lk = nodes[k.0].shape[0];
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let (qv, kv, vv) = (&nodes[q.0].value, &nodes[k.0].value, &nodes[v.0].value);
                    let mut dq = vec![0.0; lq * d];
                    let mut dk = vec![0.0; lk * d];
                    let mut dv = vec![0.0; lk * d];
                    for h in 0..*heads {
                        let p = &probs[h * lq * lk..(h + 1) * lq * lk];
                        let qh = columns(qv, lq, d, h * dh, dh);
                        let kh = columns(kv, lk, d, h * dh, dh);
                        let vh = columns(vv, lk, d, h * dh, dh);
                        let doh = columns(&g, lq, d, h * dh, dh);

                        let mut dvh = vec![0.0; lk * dh];
                        gemm_at_b(p, &doh, &mut dvh, lq, lk, dh);
                        let mut dp = vec![0.0; lq * lk];
                        gemm_a_bt(&doh, &vh, &mut dp, lq, dh, lk);
                        // softmax Jacobian, with the 1/√d factor folded in
                        for (dp_row, p_row) in dp.chunks_exact_mut(lk).zip(p.chunks_exact(lk)) {
                            let inner = dot(dp_row, p_row);
                            for j in 0..lk {
                                dp_row[j] = p_row[j] * (dp_row[j] - inner) * scale;
                            }
                        }
                        let mut dqh = vec![0.0; lq * dh];
                        gemm(&dp, &kh, &mut dqh, lq, lk, dh);
                        let mut dkh = vec![0.0; lk * dh];
                        gemm_at_b(&dp, &qh, &mut dkh, lq, lk, dh);
                        add_columns(&dqh, &mut dq, lq, d, h * dh, dh);
                        add_columns(&dkh, &mut dk, lk, d, h * dh, dh);
                        add_columns(&dvh, &mut dv, lk, d, h * dh, dh);
                    }
                    acc(*q, &mut |s| add_into(s, &dq));
                    acc(*k, &mut |s| add_into(s, &dk));
                    acc(*v, &mut |s| add_into(s, &dv));
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn softmax_in_place(row: &mut [f64], scale: f64) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v * scale - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn columns(src: &[f64], rows: usize, width: usize, start: usize, len: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        out.extend_from_slice(&src[r * width + start..r * width + start + len]);
    }
    out
}

fn scatter_columns(src: &[f64], dst: &mut [f64], rows: usize, width: usize, start: usize, len: usize) {
    for r in 0..rows {
        dst[r * width + start..r * width + start + len].copy_from_slice(&src[r * len..(r + 1) * len]);
    }
}

fn add_columns(src: &[f64], dst: &mut [f64], rows: usize, width: usize, start: usize, len: usize) {
    for r in 0..rows {
        add_into(
            &mut dst[r * width + start..r * width + start + len],
            &src[r * len..(r + 1) * len],
        );
    }
}

fn im2col(input: &[f64], g: &ConvGeom) -> Vec<f64> {
    let n = g.h_out * g.w_out;
    let mut cols = vec![0.0; g.c_in * g.k * g.k * n];
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let src_row = &input[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[oy * g.w_out + ox] = src_row[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &[f64], g: &ConvGeom, out: &mut [f64]) {
    let n = g.h_out * g.w_out;
    for c in 0..g.c_in {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    for ox in 0..g.w_out {
                        let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.w as isize {
                            out[(c * g.h + iy as usize) * g.w + ix as usize] += src[oy * g.w_out + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_product() {
        let mut tape = Tape::new();
        let i2 = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let m = t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let (a, b) = (tape.leaf(&i2), tape.leaf(&m));
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[1.0, 2.0, 3.0, 4.0]);

        let row = t(&[1, 2], &[1.0, 2.0]);
        let col = t(&[2, 1], &[3.0, 4.0]);
        let (r, cl) = (tape.leaf(&row), tape.leaf(&col));
        let p = tape.matmul(r, cl).unwrap();
        assert_eq!(tape.shape(p), &[1, 1]);
        assert_eq!(tape.value(p), &[11.0]);
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let b = tape.constant(&[2, 3], vec![0.0; 6]).unwrap();
        let err = tape.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn conv_scaling_and_block_means() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 3, 3], vec![1.0; 9]).unwrap();
        let k = tape.constant(&[1, 1, 1, 1], vec![2.0]).unwrap();
        let y = tape.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(tape.shape(y), &[1, 3, 3]);
        assert!(tape.value(y).iter().all(|&v| v == 2.0));

        let ramp: Vec<f64> = (0..16).map(|i| i as f64).collect();
        let x = tape.constant(&[1, 4, 4], ramp.clone()).unwrap();
        let k = tape.constant(&[1, 1, 2, 2], vec![0.25; 4]).unwrap();
        let y = tape.conv2d(x, k, 2, 0).unwrap();
        // sliding-window oracle
        let mut expect = Vec::new();
        for by in 0..2 {
            for bx in 0..2 {
                let mut s = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        s += ramp[(2 * by + dy) * 4 + 2 * bx + dx];
                    }
                }
                expect.push(s / 4.0);
            }
        }
        assert_eq!(tape.value(y), expect.as_slice());
        assert_eq!(expect, vec![2.5, 4.5, 10.5, 12.5]);
    }

    #[test]
    fn conv_rejects_empty_output() {
        let mut tape = Tape::new();
        let x = tape.constant(&[1, 2, 2], vec![0.0; 4]).unwrap();
        let k = tape.constant(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        assert!(matches!(tape.conv2d(x, k, 1, 0), Err(Error::Shape(_))));
        assert!(tape.conv2d(x, k, 1, 1).is_ok());
    }

    #[test]
    fn attention_single_token_and_identical_keys() {
        let mut tape = Tape::new();
        let q = tape.constant(&[1, 3], vec![0.3, -1.0, 2.0]).unwrap();
        let k = tape.constant(&[1, 3], vec![1.0, 5.0, -2.0]).unwrap();
        let v = tape.constant(&[1, 3], vec![7.0, 8.0, 9.0]).unwrap();
        let o = tape.attention(q, k, v).unwrap();
        assert_eq!(tape.value(o), &[7.0, 8.0, 9.0]);

        let q = tape.constant(&[2, 2], vec![0.5, 1.0, -3.0, 0.2]).unwrap();
        let k = tape.constant(&[3, 2], vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0]).unwrap();
        let v = tape.constant(&[3, 2], vec![1.0, 2.0, 4.0, 8.0, 7.0, -1.0]).unwrap();
        let o = tape.attention(q, k, v).unwrap();
        for row in tape.value(o).chunks(2) {
            assert!((row[0] - 4.0).abs() < 1e-12);
            assert!((row[1] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_matches_direct_formula() {
        let qd = [0.1, 0.4, -0.3, 0.8, 0.5, -0.6];
        let kd = [0.2, -0.1, 0.7, 0.3, -0.5, 0.9, 0.0, 0.4, 1.1];
        let vd = [1.0, 2.0, 3.0, -1.0, 0.5, 0.25, 4.0, -2.0, 0.0];
        let mut tape = Tape::new();
        let q = tape.constant(&[2, 3], qd.to_vec()).unwrap();
        let k = tape.constant(&[3, 3], kd.to_vec()).unwrap();
        let v = tape.constant(&[3, 3], vd.to_vec()).unwrap();
        let o = tape.attention(q, k, v).unwrap();
        for i in 0..2 {
            let scores: Vec<f64> = (0..3)
                .map(|j| (0..3).map(|c| qd[i * 3 + c] * kd[j * 3 + c]).sum::<f64>() / 3f64.sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..3 {
                let expect: f64 = (0..3).map(|j| scores[j].exp() / z * vd[j * 3 + c]).sum();
                assert!((tape.value(o)[i * 3 + c] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn attention_shape_errors() {
        let mut tape = Tape::new();
        let q = tape.constant(&[2, 4], vec![0.0; 8]).unwrap();
        let k = tape.constant(&[3, 3], vec![0.0; 9]).unwrap();
        let v = tape.constant(&[3, 4], vec![0.0; 12]).unwrap();
        assert!(tape.attention(q, k, v).is_err());
        let k = tape.constant(&[3, 4], vec![0.0; 12]).unwrap();
        let v = tape.constant(&[2, 4], vec![0.0; 8]).unwrap();
        assert!(tape.attention(q, k, v).is_err());
        let v = tape.constant(&[3, 4], vec![0.0; 12]).unwrap();
        assert!(tape.multi_head_attention(q, k, v, 3).is_err());
    }

    #[test]
    fn layernorm_cases() {
        let mut tape = Tape::new();
        let g = tape.constant(&[2], vec![1.0, 1.0]).unwrap();
        let b = tape.constant(&[2], vec![0.0, 0.0]).unwrap();
        let x = tape.constant(&[2, 2], vec![4.0, 4.0, 1.0, 3.0]).unwrap();
        let y = tape.layernorm(x, g, b, 1e-12).unwrap();
        let v = tape.value(y);
        assert_eq!(&v[..2], &[0.0, 0.0]);
        assert!((v[2] + 1.0).abs() < 1e-9 && (v[3] - 1.0).abs() < 1e-9);

        let g3 = tape.constant(&[3], vec![1.0; 3]).unwrap();
        assert!(tape.layernorm(x, g3, b, 1e-5).is_err());
    }

    #[test]
    fn backward_simple_cases() {
        let x = t(&[2, 3], &[1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).with_requires_grad(true);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let s = tape.sum(xv);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[1.0; 6]);

        let x = t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let sq = tape.mul(xv, xv).unwrap();
        let s = tape.sum(sq);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.get(xv).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut x = t(&[3], &[1.0, 2.0, 3.0]).with_requires_grad(true);
        for _ in 0..2 {
            let grads = {
                let mut tape = Tape::new();
                let xv = tape.leaf(&x);
                let sq = tape.mul(xv, xv).unwrap();
                let s = tape.sum(sq);
                let g = tape.backward(s).unwrap();
                g.get(xv).unwrap().to_vec()
            };
            x.accumulate_grad(&grads).unwrap();
        }
        assert_eq!(x.grad().unwrap(), &[4.0, 8.0, 12.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let x = t(&[2], &[1.0, 2.0]).with_requires_grad(true);
        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let y = tape.scale(xv, 2.0);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn untracked_inputs_get_no_gradient() {
        let x = t(&[2], &[1.0, 2.0]);
        let w = t(&[2], &[3.0, 4.0]).with_requires_grad(true);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.leaf(&x), tape.leaf(&w));
        let p = tape.mul(xv, wv).unwrap();
        let s = tape.sum(p);
        let grads = tape.backward(s).unwrap();
        assert!(grads.get(xv).is_none());
        assert_eq!(grads.get(wv).unwrap(), &[1.0, 2.0]);
    }
}
