//! Tape-based reverse-mode differentiation.
//!
//! Every op appends a node holding its forward value. Nodes are pushed in
//! evaluation order, so the node list is already topologically sorted and
//! [`Tape::backward`] is a single reverse sweep.

use std::rc::Rc;

mod wide;

use super::kernels::{self, ConvDims};
use super::tensor::{numel, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Row sentinel for [`Tape::gather_rows`]: produces a zero row.
pub const ZERO_ROW: u32 = u32::MAX;

/// Constant sparse matrix in CSR form, used by [`Tape::sparse_rows`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseRows {
    pub n_cols: usize,
    pub offsets: Vec<usize>,
    pub cols: Vec<u32>,
    pub weights: Vec<f32>,
}

impl SparseRows {
    pub fn new(n_cols: usize) -> Self {
        Self {
            n_cols,
            offsets: vec![0],
            cols: Vec::new(),
            weights: Vec::new(),
        }
    }

    pub fn push_row<I: IntoIterator<Item = (u32, f32)>>(&mut self, entries: I) {
        for (c, w) in entries {
            self.cols.push(c);
            self.weights.push(w);
        }
        self.offsets.push(self.cols.len());
    }

    pub fn n_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f32)> + '_ {
        let (a, b) = (self.offsets[r], self.offsets[r + 1]);
        self.cols[a..b]
            .iter()
            .zip(&self.weights[a..b])
            .map(|(&c, &w)| (c as usize, w))
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f32),
    AddScalar(Var, f32),
    ScaleBy(Var, Var),
    MatMul(Var, Var),
    Transpose(Var),
    Reshape(Var),
    Conv2d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
        batch: usize,
    },
    LeakyRelu(Var, f32),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Powf(Var, f32),
    Sum(Var),
    Mean(Var),
    Slice {
        x: Var,
        axis: usize,
        start: usize,
    },
    GatherRows {
        x: Var,
        idx: Rc<Vec<u32>>,
    },
    Sparse {
        x: Var,
        m: Rc<SparseRows>,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Upsample2x(Var),
    AvgPool2x(Var),
    Gram {
        x: Var,
        norm: f32,
    },
    BiasAdd {
        x: Var,
        b: Var,
        axis: usize,
    },
    ScaleAxis {
        x: Var,
        s: Var,
        axis: usize,
    },
}

struct Node {
    shape: Vec<usize>,
    value: Vec<f32>,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation. One tape per forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&[f32]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient as a tensor; zeros when no gradient reached `v`.
    pub fn tensor(&self, v: Var) -> Tensor {
        let shape = self.shapes[v.0].clone();
        match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f32>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Split a shape around `axis` into (outer, dim, inner) extents.
fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

fn accumulate(slot: &mut Option<Vec<f32>>, len: usize, f: impl FnOnce(&mut [f32])) {
    let buf = slot.get_or_insert_with(|| vec![0.0; len]);
    f(buf);
}

fn add_into(slot: &mut Option<Vec<f32>>, g: &[f32]) {
    match slot {
        Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f32) -> f32 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f32>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Record a tensor as a leaf, honoring its `requires_grad` flag.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(shape_err("constant", format!("{:?} vs {}", shape, data.len())));
        }
        Ok(self.push(shape, data, Op::Leaf, false))
    }

    pub fn param(&mut self, shape: Vec<usize>, data: Vec<f32>) -> Result<Var> {
        if numel(&shape) != data.len() {
            return Err(shape_err("param", format!("{:?} vs {}", shape, data.len())));
        }
        Ok(self.push(shape, data, Op::Leaf, true))
    }

    pub fn value(&self, v: Var) -> &[f32] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn scalar(&self, v: Var) -> f32 {
        self.nodes[v.0].value[0]
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.nodes[v.0].shape.clone(), self.nodes[v.0].value.clone())
            .expect("node shape")
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var> {
        self.same_shape(name, a, b)?;
        let value = self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(self.shape(a).to_vec(), value, op, rg))
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f32) -> f32) -> Var {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(self.shape(a).to_vec(), value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn scale(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f32) -> Var {
        self.unary(a, Op::AddScalar(a, c), |x| x + c)
    }

    /// Multiply every element of `a` by the single element of `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if numel(self.shape(s)) != 1 {
            return Err(shape_err("scale_by", format!("scalar expected, got {:?}", self.shape(s))));
        }
        let c = self.value(s)[0];
        let value = self.value(a).iter().map(|&x| x * c).collect();
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(self.shape(a).to_vec(), value, Op::ScaleBy(a, s), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    /// [`Tape::matmul`] with an f64 forward pass; gradients are unchanged.
    pub fn matmul_precise(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(shape_err("matmul_precise", format!("{:?} x {:?}", sa, sb)));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let value = kernels::matmul_f64(self.value(a), self.value(b), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(vec![m, n], value, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(shape_err("transpose", format!("rank-2 expected, got {:?}", s)));
        }
        let (r, c) = (s[0], s[1]);
        let src = self.value(a);
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![c, r], value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if numel(&shape) != numel(self.shape(a)) {
            return Err(shape_err("reshape", format!("{:?} -> {:?}", self.shape(a), shape)));
        }
        let value = self.value(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::Reshape(a), rg))
    }

    /// Stride-1 convolution, `x: [n, cin, h, w]`, `w: [cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, pad: usize) -> Result<Var> {
        let (sx, sw) = (self.shape(x).to_vec(), self.shape(w).to_vec());
        if sx.len() != 4 || sw.len() != 4 || sx[1] != sw[1] || sw[2] != sw[3] {
            return Err(shape_err("conv2d", format!("x {:?}, w {:?}", sx, sw)));
        }
        if sx[2] + 2 * pad < sw[2] || sx[3] + 2 * pad < sw[2] {
            return Err(shape_err("conv2d", format!("kernel {} larger than input {:?}", sw[2], sx)));
        }
        if let Some(b) = b {
            if self.shape(b) != [sw[0]] {
                return Err(shape_err("conv2d", format!("bias {:?} for {} outputs", self.shape(b), sw[0])));
            }
        }
        let dims = ConvDims {
            cin: sx[1],
            h: sx[2],
            w: sx[3],
            cout: sw[0],
            k: sw[2],
            pad,
        };
        let value = kernels::conv2d_forward(
            self.value(x),
            self.value(w),
            b.map(|b| self.value(b)),
            sx[0],
            dims,
        );
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        let shape = vec![sx[0], dims.cout, dims.out_h(), dims.out_w()];
        Ok(self.push(
            shape,
            value,
            Op::Conv2d {
                x,
                w,
                b,
                dims,
                batch: sx[0],
            },
            rg,
        ))
    }

    /// Which side of zero every leaky-ReLU input lies on. The tape is smooth
    /// wherever this pattern stays fixed.
    pub fn kink_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::LeakyRelu(a, _) => Some(a),
                _ => None,
            })
            .flat_map(|a| self.value(a).iter().map(|&x| x > 0.0))
            .collect()
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f32) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.leaky_relu(a, 0.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a), f32::tanh)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f32::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f32::ln)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a), softplus)
    }

    pub fn powf(&mut self, a: Var, p: f32) -> Var {
        self.unary(a, Op::Powf(a, p), |x| x.powf(p))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.powf(a, 2.0)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f32 = self.value(a).iter().sum();
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len().max(1) as f32;
        let s: f32 = self.value(a).iter().sum::<f32>() / n;
        let rg = self.rg(a);
        self.push(vec![1], vec![s], Op::Mean(a), rg)
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if axis >= s.len() || start + len > s[axis] {
            return Err(shape_err("slice", format!("{:?} axis {} [{}, +{})", s, axis, start, len)));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let src = self.value(a);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * dim + start) * inner;
            value.extend_from_slice(&src[base..base + len * inner]);
        }
        let mut shape = s;
        shape[axis] = len;
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::Slice { x: a, axis, start }, rg))
    }

    /// Select rows of a rank-2 tensor; [`ZERO_ROW`] yields zeros.
    pub fn gather_rows(&mut self, a: Var, idx: Rc<Vec<u32>>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 {
            return Err(shape_err("gather_rows", format!("rank-2 expected, got {:?}", s)));
        }
        let (rows, cols) = (s[0], s[1]);
        if let Some(&bad) = idx.iter().find(|&&i| i != ZERO_ROW && i as usize >= rows) {
            return Err(shape_err("gather_rows", format!("row {} out of {}", bad, rows)));
        }
        let src = self.value(a);
        let mut value = vec![0.0; idx.len() * cols];
        for (r, &i) in idx.iter().enumerate() {
            if i != ZERO_ROW {
                let i = i as usize;
                value[r * cols..(r + 1) * cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![idx.len(), cols], value, Op::GatherRows { x: a, idx }, rg))
    }

    /// `out[i] = sum_j m[i, j] * a[j]` over rows of a rank-2 tensor.
    pub fn sparse_rows(&mut self, a: Var, m: Rc<SparseRows>) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() != 2 || s[0] != m.n_cols {
            return Err(shape_err("sparse_rows", format!("{:?} for {} columns", s, m.n_cols)));
        }
        let cols = s[1];
        let src = self.value(a);
        // f64 accumulation: interpolation weights such as 1/3 do not sum to
        // one in f32, and the bias would otherwise reach the field output.
        let mut value = vec![0.0; m.n_rows() * cols];
        let mut acc = vec![0.0f64; cols];
        for r in 0..m.n_rows() {
            acc.fill(0.0);
            for (j, w) in m.row(r) {
                acc.iter_mut()
                    .zip(&src[j * cols..(j + 1) * cols])
                    .for_each(|(d, v)| *d += w as f64 * *v as f64);
            }
            for (d, a) in value[r * cols..(r + 1) * cols].iter_mut().zip(&acc) {
                *d = *a as f32;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(vec![m.n_rows(), cols], value, Op::Sparse { x: a, m }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = inputs
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs"))?;
        let base = self.shape(*first).to_vec();
        if axis >= base.len() {
            return Err(shape_err("concat", format!("axis {} for {:?}", axis, base)));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            let ok = s.len() == base.len()
                && s.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {}", s, base, axis)));
            }
            total += s[axis];
        }
        let (outer, _, inner) = axis_split(&base, axis);
        let mut value = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let d = self.shape(v)[axis];
                value.extend_from_slice(&self.value(v)[o * d * inner..(o + 1) * d * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Nearest-neighbour 2x upsampling of the last two axes.
    pub fn upsample2x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 {
            return Err(shape_err("upsample2x", format!("{:?}", s)));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let planes = numel(&s) / (h * w).max(1);
        let src = self.value(a);
        let mut value = vec![0.0; planes * 4 * h * w];
        for p in 0..planes {
            for y in 0..2 * h {
                for x in 0..2 * w {
                    value[(p * 2 * h + y) * 2 * w + x] = src[(p * h + y / 2) * w + x / 2];
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = 2 * h;
        shape[r - 1] = 2 * w;
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::Upsample2x(a), rg))
    }

    /// 2x2 mean pooling of the last two axes; a trailing odd row/column is dropped.
    pub fn avgpool2x(&mut self, a: Var) -> Result<Var> {
        let s = self.shape(a).to_vec();
        if s.len() < 2 || s[s.len() - 2] < 2 || s[s.len() - 1] < 2 {
            return Err(shape_err("avgpool2x", format!("{:?}", s)));
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (oh, ow) = (h / 2, w / 2);
        let planes = numel(&s) / (h * w);
        let src = self.value(a);
        let mut value = vec![0.0; planes * oh * ow];
        for p in 0..planes {
            let plane = &src[p * h * w..(p + 1) * h * w];
            for y in 0..oh {
                for x in 0..ow {
                    let i = 2 * y * w + 2 * x;
                    value[(p * oh + y) * ow + x] =
                        0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]);
                }
            }
        }
        let mut shape = s;
        let r = shape.len();
        shape[r - 2] = oh;
        shape[r - 1] = ow;
        let rg = self.rg(a);
        Ok(self.push(shape, value, Op::AvgPool2x(a), rg))
    }

    /// Channel Gram matrix of `x: [c, n]`, divided by `norm`.
    pub fn gram(&mut self, x: Var, norm: f32) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(shape_err("gram", format!("[c, n] expected, got {:?}", s)));
        }
        let (c, n) = (s[0], s[1]);
        let xv = self.value(x);
        let mut value = vec![0.0; c * c];
        kernels::gemm(c, n, c, xv, n, 1, xv, 1, n, &mut value, c, 1, false);
        let inv = 1.0 / norm;
        value.iter_mut().for_each(|v| *v *= inv);
        let rg = self.rg(x);
        Ok(self.push(vec![c, c], value, Op::Gram { x, norm }, rg))
    }

    /// Add `b` (length `shape[axis]`) broadcast along every other axis.
    pub fn bias_add(&mut self, x: Var, b: Var, axis: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        if axis >= s.len() || self.shape(b) != [s[axis]] {
            return Err(shape_err("bias_add", format!("{:?} + {:?} on axis {}", s, self.shape(b), axis)));
        }
        let (outer, dim, inner) = axis_split(&s, axis);
        let (xv, bv) = (self.value(x), self.value(b));
        let mut value = xv.to_vec();
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                value[base..base + inner].iter_mut().for_each(|v| *v += bv[d]);
            }
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(s, value, Op::BiasAdd { x, b, axis }, rg))
    }

    /// Multiply by `s` (length `shape[axis]`) broadcast along every other axis.
    pub fn scale_axis(&mut self, x: Var, s: Var, axis: usize) -> Result<Var> {
        let sh = self.shape(x).to_vec();
        if axis >= sh.len() || self.shape(s) != [sh[axis]] {
            return Err(shape_err("scale_axis", format!("{:?} * {:?} on axis {}", sh, self.shape(s), axis)));
        }
        let (outer, dim, inner) = axis_split(&sh, axis);
        let (xv, sv) = (self.value(x), self.value(s));
        let mut value = xv.to_vec();
        for o in 0..outer {
            for d in 0..dim {
                let base = (o * dim + d) * inner;
                value[base..base + inner].iter_mut().for_each(|v| *v *= sv[d]);
            }
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(sh, value, Op::ScaleAxis { x, s, axis }, rg))
    }

    /// Rank-2 linear layer `x @ w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.bias_add(y, b, 1),
            None => Ok(y),
        }
    }

    /// Reverse sweep from a scalar `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss).to_vec();
        if numel(&shape) != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else {
                continue;
            };
            self.backprop(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self.nodes.into_iter().map(|n| n.shape).collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop(&self, i: usize, g: &[f32], grads: &mut [Option<Vec<f32>>]) {
        let node = &self.nodes[i];
        let val = |v: Var| self.nodes[v.0].value.as_slice();
        let len = |v: Var| self.nodes[v.0].value.len();
        let want = |v: Var| self.nodes[v.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if want(*b) {
                    add_into(&mut grads[b.0], g);
                }
            }
            Op::Sub(a, b) => {
                if want(*a) {
                    add_into(&mut grads[a.0], g);
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d -= g)
                    });
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                if want(*a) {
                    accumulate(&mut grads[a.0], g.len(), |d| {
                        for k in 0..d.len() {
                            d[k] += g[k] * bv[k];
                        }
                    });
                }
                if want(*b) {
                    accumulate(&mut grads[b.0], g.len(), |d| {
                        for k in 0..d.len() {
                            d[k] += g[k] * av[k];
                        }
                    });
                }
            }
            Op::Scale(a, c) => accumulate(&mut grads[a.0], g.len(), |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
            }),
            Op::AddScalar(a, _) => add_into(&mut grads[a.0], g),
            Op::ScaleBy(a, s) => {
                let c = val(*s)[0];
                if want(*a) {
                    accumulate(&mut grads[a.0], g.len(), |d| {
                        d.iter_mut().zip(g).for_each(|(d, g)| *d += c * g)
                    });
                }
                if want(*s) {
                    let dot: f32 = g.iter().zip(val(*a)).map(|(g, x)| g * x).sum();
                    accumulate(&mut grads[s.0], 1, |d| d[0] += dot);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if want(*a) {
                    // dA = G B^T
                    let bv = val(*b);
                    accumulate(&mut grads[a.0], m * k, |d| {
                        kernels::gemm(m, n, k, g, n, 1, bv, 1, n, d, k, 1, true)
                    });
                }
                if want(*b) {
                    // dB = A^T G
                    let av = val(*a);
                    accumulate(&mut grads[b.0], k * n, |d| {
                        kernels::gemm(k, m, n, av, 1, k, g, n, 1, d, n, 1, true)
                    });
                }
            }
            Op::Transpose(a) => {
                let s = &self.nodes[a.0].shape;
                let (r, c) = (s[0], s[1]);
                accumulate(&mut grads[a.0], r * c, |d| {
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => add_into(&mut grads[a.0], g),
            Op::Conv2d {
                x,
                w,
                b,
                dims,
                batch,
            } => {
                let (dx, dw, db) = kernels::conv2d_backward(
                    val(*x),
                    val(*w),
                    g,
                    *batch,
                    *dims,
                    want(*x),
                    want(*w),
                );
                if let Some(dx) = dx {
                    add_into(&mut grads[x.0], &dx);
                }
                if let Some(dw) = dw {
                    add_into(&mut grads[w.0], &dw);
                }
                if let Some(b) = b {
                    if want(*b) {
                        add_into(&mut grads[b.0], &db);
                    }
                }
            }
            Op::LeakyRelu(a, slope) => {
                let av = val(*a);
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += if av[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                });
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * (1.0 - y[k] * y[k]);
                    }
                });
            }
            Op::Exp(a) => {
                let y = &node.value;
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * y[k];
                    }
                });
            }
            Op::Log(a) => {
                let av = val(*a);
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] / av[k];
                    }
                });
            }
            Op::Softplus(a) => {
                let av = val(*a);
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * sigmoid(av[k]);
                    }
                });
            }
            Op::Powf(a, p) => {
                let av = val(*a);
                accumulate(&mut grads[a.0], g.len(), |d| {
                    for k in 0..d.len() {
                        d[k] += g[k] * p * av[k].powf(p - 1.0);
                    }
                });
            }
            Op::Sum(a) => {
                let g0 = g[0];
                accumulate(&mut grads[a.0], len(*a), |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::Mean(a) => {
                let g0 = g[0] / len(*a).max(1) as f32;
                accumulate(&mut grads[a.0], len(*a), |d| d.iter_mut().for_each(|d| *d += g0));
            }
            Op::Slice { x, axis, start } => {
                let s = &self.nodes[x.0].shape;
                let (outer, dim, inner) = axis_split(s, *axis);
                let l = node.shape[*axis];
                accumulate(&mut grads[x.0], len(*x), |d| {
                    for o in 0..outer {
                        let dst = (o * dim + start) * inner;
                        let src = o * l * inner;
                        d[dst..dst + l * inner]
                            .iter_mut()
                            .zip(&g[src..src + l * inner])
                            .for_each(|(d, g)| *d += g);
                    }
                });
            }
            Op::GatherRows { x, idx } => {
                let cols = self.nodes[x.0].shape[1];
                accumulate(&mut grads[x.0], len(*x), |d| {
                    for (r, &i) in idx.iter().enumerate() {
                        if i != ZERO_ROW {
                            let i = i as usize;
                            d[i * cols..(i + 1) * cols]
                                .iter_mut()
                                .zip(&g[r * cols..(r + 1) * cols])
                                .for_each(|(d, g)| *d += g);
                        }
                    }
                });
            }
            Op::Sparse { x, m } => {
                let cols = self.nodes[x.0].shape[1];
                accumulate(&mut grads[x.0], len(*x), |d| {
                    for r in 0..m.n_rows() {
                        let gr = &g[r * cols..(r + 1) * cols];
                        for (j, w) in m.row(r) {
                            d[j * cols..(j + 1) * cols]
                                .iter_mut()
                                .zip(gr)
                                .for_each(|(d, g)| *d += w * g);
                        }
                    }
                });
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = axis_split(&node.shape, *axis);
                let mut offset = 0;
                for &v in inputs {
                    let dv = self.nodes[v.0].shape[*axis];
                    if want(v) {
                        accumulate(&mut grads[v.0], len(v), |d| {
                            for o in 0..outer {
                                let src = (o * total + offset) * inner;
                                d[o * dv * inner..(o + 1) * dv * inner]
                                    .iter_mut()
                                    .zip(&g[src..src + dv * inner])
                                    .for_each(|(d, g)| *d += g);
                            }
                        });
                    }
                    offset += dv;
                }
            }
            Op::Upsample2x(a) => {
                let s = &self.nodes[a.0].shape;
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = numel(s) / (h * w).max(1);
                accumulate(&mut grads[a.0], len(*a), |d| {
                    for p in 0..planes {
                        for y in 0..2 * h {
                            for x in 0..2 * w {
                                d[(p * h + y / 2) * w + x / 2] += g[(p * 2 * h + y) * 2 * w + x];
                            }
                        }
                    }
                });
            }
            Op::AvgPool2x(a) => {
                let s = &self.nodes[a.0].shape;
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (oh, ow) = (h / 2, w / 2);
                let planes = numel(s) / (h * w);
                accumulate(&mut grads[a.0], len(*a), |d| {
                    for p in 0..planes {
                        for y in 0..oh {
                            for x in 0..ow {
                                let gv = 0.25 * g[(p * oh + y) * ow + x];
                                let i = p * h * w + 2 * y * w + 2 * x;
                                d[i] += gv;
                                d[i + 1] += gv;
                                d[i + w] += gv;
                                d[i + w + 1] += gv;
                            }
                        }
                    }
                });
            }
            Op::Gram { x, norm } => {
                let s = &self.nodes[x.0].shape;
                let (c, n) = (s[0], s[1]);
                let inv = 1.0 / norm;
                let mut sym = vec![0.0; c * c];
                for i in 0..c {
                    for j in 0..c {
                        sym[i * c + j] = (g[i * c + j] + g[j * c + i]) * inv;
                    }
                }
                let xv = val(*x);
                accumulate(&mut grads[x.0], c * n, |d| {
                    kernels::gemm(c, c, n, &sym, c, 1, xv, n, 1, d, n, 1, true)
                });
            }
            Op::BiasAdd { x, b, axis } => {
                if want(*x) {
                    add_into(&mut grads[x.0], g);
                }
                if want(*b) {
                    let (outer, dim, inner) = axis_split(&node.shape, *axis);
                    accumulate(&mut grads[b.0], dim, |d| {
                        for o in 0..outer {
                            for k in 0..dim {
                                let base = (o * dim + k) * inner;
                                d[k] += g[base..base + inner].iter().sum::<f32>();
                            }
                        }
                    });
                }
            }
            Op::ScaleAxis { x, s, axis } => {
                let (outer, dim, inner) = axis_split(&node.shape, *axis);
                let (xv, sv) = (val(*x), val(*s));
                if want(*x) {
                    accumulate(&mut grads[x.0], g.len(), |d| {
                        for o in 0..outer {
                            for k in 0..dim {
                                let base = (o * dim + k) * inner;
                                for t in base..base + inner {
                                    d[t] += g[t] * sv[k];
                                }
                            }
                        }
                    });
                }
                if want(*s) {
                    accumulate(&mut grads[s.0], dim, |d| {
                        for o in 0..outer {
                            for k in 0..dim {
                                let base = (o * dim + k) * inner;
                                let mut acc = 0.0;
                                for t in base..base + inner {
                                    acc += g[t] * xv[t];
                                }
                                d[k] += acc;
                            }
                        }
                    });
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.param(vec![1], vec![0.0]).unwrap();
        let y = t.tanh(x);
        assert_eq!(t.scalar(y), 0.0);
        let g = t.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0]);
    }

    #[test]
    fn sum_grad_is_ones() {
        let mut t = Tape::new();
        let x = t.param(vec![2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap();
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn mean_of_squares() {
        let xs = vec![1.0, -2.0, 3.0, 4.0];
        let mut t = Tape::new();
        let x = t.param(vec![4], xs.clone()).unwrap();
        let sq = t.square(x);
        let m = t.mean(sq);
        let g = t.backward(m).unwrap();
        let expected: Vec<f32> = xs.iter().map(|v| 2.0 * v / 4.0).collect();
        assert_eq!(g.get(x).unwrap(), expected.as_slice());
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(vec![2], vec![1.0, 2.0]).unwrap();
        let y = t.tanh(x);
        assert!(matches!(t.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut t = Tape::new();
        let a = t.param(vec![2], vec![1.0, 2.0]).unwrap();
        let b = t.param(vec![3], vec![1.0, 2.0, 3.0]).unwrap();
        assert!(t.add(a, b).is_err());
        let m = t.param(vec![2, 3], vec![0.0; 6]).unwrap();
        assert!(t.matmul(m, m).is_err());
    }

    #[test]
    fn gram_of_constant_map() {
        // c channels of constant v over n sites: every entry is v^2 * n.
        let (c, n, v) = (3, 5, 1.5f32);
        let mut t = Tape::new();
        let x = t.constant(vec![c, n], vec![v; c * n]).unwrap();
        let g = t.gram(x, 1.0).unwrap();
        for &e in t.value(g) {
            assert!((e - v * v * n as f32).abs() < 1e-5);
        }
        let gn = t.gram(x, n as f32).unwrap();
        for &e in t.value(gn) {
            assert!((e - v * v).abs() < 1e-6);
        }
    }

    #[test]
    fn constants_do_not_record_ops() {
        let mut t = Tape::new();
        let a = t.constant(vec![2], vec![1.0, 2.0]).unwrap();
        let b = t.exp(a);
        assert!(!t.requires_grad(b));
    }
}
