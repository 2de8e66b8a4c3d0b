//! Replay of a recorded forward pass in `f64`, used as the finite-difference
//! oracle. Written with plain loops, independent of the `f32` kernels.

use super::{axis_split, Op, Tape, Var, ZERO_ROW};

impl Tape {
    /// Value of `out` recomputed in `f64` from the recorded leaves, with the
    /// sign pattern of every leaky-ReLU input met on the way (see
    /// [`Tape::kink_pattern`]). Nodes cut from the graph keep their stored values.
    pub fn replay_f64(&self, out: Var) -> (Vec<f64>, Vec<bool>) {
        let mut vals: Vec<Vec<f64>> = Vec::with_capacity(out.0 + 1);
        let mut kinks = Vec::new();
        for i in 0..=out.0 {
            if let Op::LeakyRelu(a, _) = self.nodes[i].op {
                kinks.extend(vals[a.0].iter().map(|&x| x > 0.0));
            }
            let v = self.replay_node(i, &vals);
            vals.push(v);
        }
        (vals.pop().unwrap_or_default(), kinks)
    }

    fn replay_node(&self, i: usize, vals: &[Vec<f64>]) -> Vec<f64> {
        let node = &self.nodes[i];
        let val = |v: &Var| vals[v.0].as_slice();
        let map = |v: &Var, f: &dyn Fn(f64) -> f64| val(v).iter().map(|&x| f(x)).collect::<Vec<_>>();
        let zip = |a: &Var, b: &Var, f: &dyn Fn(f64, f64) -> f64| {
            val(a).iter().zip(val(b)).map(|(&x, &y)| f(x, y)).collect::<Vec<_>>()
        };
        match &node.op {
            Op::Leaf => node.value.iter().map(|&x| x as f64).collect(),
            Op::Add(a, b) => zip(a, b, &|x, y| x + y),
            Op::Sub(a, b) => zip(a, b, &|x, y| x - y),
            Op::Mul(a, b) => zip(a, b, &|x, y| x * y),
            Op::Scale(a, c) => map(a, &|x| x * *c as f64),
            Op::AddScalar(a, c) => map(a, &|x| x + *c as f64),
            Op::ScaleBy(a, s) => {
                let c = val(s)[0];
                map(a, &|x| x * c)
            }
            Op::MatMul(a, b) => {
                let (m, k) = (self.shape(*a)[0], self.shape(*a)[1]);
                let n = self.shape(*b)[1];
                let (av, bv) = (val(a), val(b));
                let mut o = vec![0.0; m * n];
                for r in 0..m {
                    for j in 0..k {
                        let x = av[r * k + j];
                        for c in 0..n {
                            o[r * n + c] += x * bv[j * n + c];
                        }
                    }
                }
                o
            }
            Op::Transpose(a) => {
                let (r, c) = (self.shape(*a)[0], self.shape(*a)[1]);
                let src = val(a);
                let mut o = vec![0.0; r * c];
                for y in 0..r {
                    for x in 0..c {
                        o[x * r + y] = src[y * c + x];
                    }
                }
                o
            }
            Op::Reshape(a) => val(a).to_vec(),
            Op::Conv2d { x, w, b, dims: d, batch } => {
                let (xv, wv) = (val(x), val(w));
                let (oh, ow) = (d.out_h(), d.out_w());
                let mut o = vec![0.0; batch * d.cout * oh * ow];
                for n in 0..*batch {
                    for co in 0..d.cout {
                        let dst = &mut o[(n * d.cout + co) * oh * ow..][..oh * ow];
                        if let Some(b) = b {
                            dst.fill(val(b)[co]);
                        }
                        for ci in 0..d.cin {
                            let src = &xv[(n * d.cin + ci) * d.h * d.w..][..d.h * d.w];
                            for ky in 0..d.k {
                                for kx in 0..d.k {
                                    let wt = wv[((co * d.cin + ci) * d.k + ky) * d.k + kx];
                                    for oy in 0..oh {
                                        let iy = (oy + ky) as isize - d.pad as isize;
                                        if iy < 0 || iy >= d.h as isize {
                                            continue;
                                        }
                                        for ox in 0..ow {
                                            let ix = (ox + kx) as isize - d.pad as isize;
                                            if ix >= 0 && ix < d.w as isize {
                                                dst[oy * ow + ox] += wt * src[iy as usize * d.w + ix as usize];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                o
            }
            Op::LeakyRelu(a, s) => map(a, &|x| if x > 0.0 { x } else { *s as f64 * x }),
            Op::Tanh(a) => map(a, &f64::tanh),
            Op::Exp(a) => map(a, &f64::exp),
            Op::Log(a) => map(a, &f64::ln),
            Op::Softplus(a) => map(a, &|x| x.max(0.0) + (-x.abs()).exp().ln_1p()),
            Op::Powf(a, p) => map(a, &|x| x.powf(*p as f64)),
            Op::Sum(a) => vec![val(a).iter().sum()],
            Op::Mean(a) => vec![val(a).iter().sum::<f64>() / val(a).len().max(1) as f64],
            Op::Slice { x, axis, start } => {
                let (outer, dim, inner) = axis_split(self.shape(*x), *axis);
                let len = node.shape[*axis];
                let src = val(x);
                let mut o = Vec::with_capacity(outer * len * inner);
                for k in 0..outer {
                    let base = (k * dim + start) * inner;
                    o.extend_from_slice(&src[base..base + len * inner]);
                }
                o
            }
            Op::GatherRows { x, idx } => {
                let cols = self.shape(*x)[1];
                let src = val(x);
                let mut o = vec![0.0; idx.len() * cols];
                for (r, &i) in idx.iter().enumerate() {
                    if i != ZERO_ROW {
                        let i = i as usize;
                        o[r * cols..(r + 1) * cols].copy_from_slice(&src[i * cols..(i + 1) * cols]);
                    }
                }
                o
            }
            Op::Sparse { x, m } => {
                let cols = self.shape(*x)[1];
                let src = val(x);
                let mut o = vec![0.0; m.n_rows() * cols];
                for r in 0..m.n_rows() {
                    for (j, w) in m.row(r) {
                        for c in 0..cols {
                            o[r * cols + c] += w as f64 * src[j * cols + c];
                        }
                    }
                }
                o
            }
            Op::Concat { inputs, axis } => {
                let (outer, _, inner) = axis_split(&node.shape, *axis);
                let mut o = Vec::with_capacity(node.value.len());
                for k in 0..outer {
                    for v in inputs {
                        let d = self.shape(*v)[*axis];
                        o.extend_from_slice(&val(v)[k * d * inner..(k + 1) * d * inner]);
                    }
                }
                o
            }
            Op::Upsample2x(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let src = val(a);
                let planes = src.len() / (h * w).max(1);
                let mut o = vec![0.0; planes * 4 * h * w];
                for p in 0..planes {
                    for y in 0..2 * h {
                        for x in 0..2 * w {
                            o[(p * 2 * h + y) * 2 * w + x] = src[(p * h + y / 2) * w + x / 2];
                        }
                    }
                }
                o
            }
            Op::AvgPool2x(a) => {
                let s = self.shape(*a);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let (oh, ow) = (h / 2, w / 2);
                let src = val(a);
                let planes = src.len() / (h * w);
                let mut o = vec![0.0; planes * oh * ow];
                for p in 0..planes {
                    let pl = &src[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for x in 0..ow {
                            let i = 2 * y * w + 2 * x;
                            o[(p * oh + y) * ow + x] = 0.25 * (pl[i] + pl[i + 1] + pl[i + w] + pl[i + w + 1]);
                        }
                    }
                }
                o
            }
            Op::Gram { x, norm } => {
                let (c, n) = (self.shape(*x)[0], self.shape(*x)[1]);
                let xv = val(x);
                let mut o = vec![0.0; c * c];
                for a in 0..c {
                    for b in 0..c {
                        let d: f64 = (0..n).map(|k| xv[a * n + k] * xv[b * n + k]).sum();
                        o[a * c + b] = d / *norm as f64;
                    }
                }
                o
            }
            Op::BiasAdd { x, b, axis } => self.broadcast(val(x), val(b), *axis, &node.shape, |v, s| v + s),
            Op::ScaleAxis { x, s, axis } => self.broadcast(val(x), val(s), *axis, &node.shape, |v, s| v * s),
        }
    }

    fn broadcast(&self, x: &[f64], s: &[f64], axis: usize, shape: &[usize], f: fn(f64, f64) -> f64) -> Vec<f64> {
        let (outer, dim, inner) = axis_split(shape, axis);
        let mut o = x.to_vec();
        for k in 0..outer {
            for d in 0..dim {
                let base = (k * dim + d) * inner;
                o[base..base + inner].iter_mut().for_each(|v| *v = f(*v, s[d]));
            }
        }
        o
    }
}
