//! Central-difference checks of tape gradients.

use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{SparseRows, Tape, Tensor, Var, ZERO_ROW};
use crate::error::{Error, Result};

/// Scalar-valued function of the input leaves.
pub type ScalarFn = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

/// One randomized instance: inputs plus the function evaluated on them.
pub struct Case {
    pub inputs: Vec<Tensor>,
    pub f: ScalarFn,
}

/// Analytic and central-difference partials at the sampled coordinates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// Coordinates whose stencil crossed a kink.
    pub skipped: usize,
}

impl GradCheck {
    /// Normwise `||a - n|| / max(||a||, ||n||, floor)`. Infinite when every
    /// coordinate was skipped, so an empty check never passes.
    pub fn rel_err(&self, floor: f64) -> f64 {
        if self.analytic.is_empty() {
            return f64::INFINITY;
        }
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        let diff: Vec<f64> = self.analytic.iter().zip(&self.numeric).map(|(a, n)| a - n).collect();
        norm(&diff) / norm(&self.analytic).max(norm(&self.numeric)).max(floor)
    }
}

/// Evaluate `f` on fresh leaves holding `inputs`.
pub fn eval(inputs: &[Tensor], f: &ScalarFn) -> Result<f64> {
    eval_with_pattern(inputs, f).map(|(v, _)| v)
}

/// Value of `f` replayed in `f64`, and the kink pattern of that replay.
pub fn eval_with_pattern(inputs: &[Tensor], f: &ScalarFn) -> Result<(f64, Vec<bool>)> {
    // inputs are marked trainable so the tape keeps the ops that depend on them
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    if tape.shape(out).iter().product::<usize>() != 1 {
        return Err(Error::NonScalarLoss(tape.shape(out).to_vec()));
    }
    let (value, kinks) = tape.replay_f64(out);
    Ok((value[0], kinks))
}

/// Analytic gradients of `f` with respect to every input.
pub fn gradients(inputs: &[Tensor], f: &ScalarFn) -> Result<Vec<Vec<f32>>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| tape.leaf(&t.clone().with_requires_grad(true)))
        .collect();
    let out = f(&mut tape, &vars)?;
    let mut g = tape.backward(out)?;
    Ok(vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.take(v).unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect())
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` at up to
/// `max_coords` input coordinates, against the tape gradient. A stencil
/// that moves any leaky-ReLU input across zero is not a valid difference
/// quotient, so the step is halved up to `HALVINGS` times looking for one
/// that stays on the current linear piece; failing that the coordinate is
/// skipped and counted.
const HALVINGS: usize = 10;

pub fn coordinate_check(
    inputs: &[Tensor],
    f: &ScalarFn,
    h: f32,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
) -> Result<GradCheck> {
    let grads = gradients(inputs, f)?;
    let (_, base) = eval_with_pattern(inputs, f)?;
    let mut coords: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
        .collect();
    coords.shuffle(rng);
    let mut work = inputs.to_vec();
    let mut out = GradCheck::default();
    for (i, j) in coords {
        if out.analytic.len() == max_coords {
            break;
        }
        let x = inputs[i].data()[j];
        let mut found = None;
        let mut step_h = h;
        for _ in 0..=HALVINGS {
            work[i].data_mut()[j] = x + step_h;
            let (plus, pp) = eval_with_pattern(&work, f)?;
            work[i].data_mut()[j] = x - step_h;
            let (minus, pm) = eval_with_pattern(&work, f)?;
            if pp == base && pm == base {
                // the step actually taken after f32 rounding
                let step = (x + step_h) as f64 - (x - step_h) as f64;
                found = Some((plus - minus) / step);
                break;
            }
            step_h *= 0.5;
        }
        work[i].data_mut()[j] = x;
        match found {
            Some(n) => {
                out.numeric.push(n);
                out.analytic.push(grads[i][j] as f64);
            }
            None => out.skipped += 1,
        }
    }
    Ok(out)
}

/// `sum(out * weights)` with fixed random weights, turning any output into a scalar.
pub fn project(tape: &mut Tape, out: Var, weights: &Tensor) -> Result<Var> {
    let w = tape.leaf(weights);
    let p = tape.mul(out, w)?;
    Ok(tape.sum(p))
}

fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

/// Values bounded away from zero, for ops with a kink at the origin.
fn away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = randn(shape, rng);
    t.data_mut().iter_mut().for_each(|v| *v += 0.2f32.copysign(*v));
    t
}

fn positive(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0.5f32..2.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// One output-projected unary or structural op.
fn projected(
    inputs: Vec<Tensor>,
    out_shape: Vec<usize>,
    rng: &mut ChaCha8Rng,
    op: impl Fn(&mut Tape, &[Var]) -> Result<Var> + 'static,
) -> Case {
    let w = randn(&out_shape, rng);
    Case {
        inputs,
        f: Box::new(move |tape, v| {
            let out = op(tape, v)?;
            project(tape, out, &w)
        }),
    }
}

fn dim(rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(1..5)
}

/// Every differentiable tape primitive with a generator of random instances.
pub fn primitive_cases() -> Vec<(&'static str, fn(&mut ChaCha8Rng) -> Case)> {
    vec![
        ("add", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r), randn(&s, r)], s.to_vec(), r, |t, v| t.add(v[0], v[1]))
        }),
        ("sub", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r), randn(&s, r)], s.to_vec(), r, |t, v| t.sub(v[0], v[1]))
        }),
        ("mul", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r), randn(&s, r)], s.to_vec(), r, |t, v| t.mul(v[0], v[1]))
        }),
        ("scale", |r| {
            let s = [dim(r), dim(r)];
            let c = r.random_range(-2.0f32..2.0);
            projected(vec![randn(&s, r)], s.to_vec(), r, move |t, v| Ok(t.scale(v[0], c)))
        }),
        ("add_scalar", |r| {
            let s = [dim(r), dim(r)];
            let c = r.random_range(-2.0f32..2.0);
            projected(vec![randn(&s, r)], s.to_vec(), r, move |t, v| Ok(t.add_scalar(v[0], c)))
        }),
        ("scale_by", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r), randn(&[1], r)], s.to_vec(), r, |t, v| t.scale_by(v[0], v[1]))
        }),
        ("matmul", |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            projected(vec![randn(&[m, k], r), randn(&[k, n], r)], vec![m, n], r, |t, v| t.matmul(v[0], v[1]))
        }),
        ("transpose", |r| {
            let (m, n) = (dim(r), dim(r));
            projected(vec![randn(&[m, n], r)], vec![n, m], r, |t, v| t.transpose(v[0]))
        }),
        ("reshape", |r| {
            let (m, n) = (dim(r), dim(r));
            projected(vec![randn(&[m, n], r)], vec![n * m], r, move |t, v| t.reshape(v[0], vec![m * n]))
        }),
        ("conv2d", |r| {
            let (n, ci, co) = (r.random_range(1..3), dim(r), dim(r));
            let (h, w) = (r.random_range(3..6), r.random_range(3..6));
            let pad = r.random_range(0..2);
            let k = 3;
            let (oh, ow) = (h + 2 * pad - k + 1, w + 2 * pad - k + 1);
            projected(
                vec![randn(&[n, ci, h, w], r), randn(&[co, ci, k, k], r), randn(&[co], r)],
                vec![n, co, oh, ow],
                r,
                move |t, v| t.conv2d(v[0], v[1], Some(v[2]), pad),
            )
        }),
        ("leaky_relu", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![away_from_zero(&s, r)], s.to_vec(), r, |t, v| Ok(t.leaky_relu(v[0], 0.2)))
        }),
        ("relu", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![away_from_zero(&s, r)], s.to_vec(), r, |t, v| Ok(t.relu(v[0])))
        }),
        ("tanh", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], s.to_vec(), r, |t, v| Ok(t.tanh(v[0])))
        }),
        ("exp", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], s.to_vec(), r, |t, v| Ok(t.exp(v[0])))
        }),
        ("log", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![positive(&s, r)], s.to_vec(), r, |t, v| Ok(t.log(v[0])))
        }),
        ("softplus", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], s.to_vec(), r, |t, v| Ok(t.softplus(v[0])))
        }),
        ("powf", |r| {
            let s = [dim(r), dim(r)];
            let p = r.random_range(-1.5f32..2.5);
            projected(vec![positive(&s, r)], s.to_vec(), r, move |t, v| Ok(t.powf(v[0], p)))
        }),
        ("square", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], s.to_vec(), r, |t, v| Ok(t.square(v[0])))
        }),
        ("sum", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], vec![1], r, |t, v| Ok(t.sum(v[0])))
        }),
        ("mean", |r| {
            let s = [dim(r), dim(r)];
            projected(vec![randn(&s, r)], vec![1], r, |t, v| Ok(t.mean(v[0])))
        }),
        ("slice", |r| {
            let s = [dim(r) + 1, dim(r), dim(r)];
            let axis = r.random_range(0..3);
            let start = r.random_range(0..s[axis]);
            let len = r.random_range(1..=s[axis] - start);
            let mut out = s.to_vec();
            out[axis] = len;
            projected(vec![randn(&s, r)], out, r, move |t, v| t.slice(v[0], axis, start, len))
        }),
        ("gather_rows", |r| {
            let (rows, cols, n) = (dim(r), dim(r), dim(r) + 2);
            let idx: Vec<u32> = (0..n)
                .map(|_| {
                    if r.random_bool(0.2) {
                        ZERO_ROW
                    } else {
                        r.random_range(0..rows as u32)
                    }
                })
                .collect();
            let idx = Rc::new(idx);
            projected(vec![randn(&[rows, cols], r)], vec![n, cols], r, move |t, v| {
                t.gather_rows(v[0], idx.clone())
            })
        }),
        ("sparse_rows", |r| {
            let (rows, cols, n) = (dim(r), dim(r), dim(r));
            let mut m = SparseRows::new(rows);
            for _ in 0..n {
                let k = r.random_range(0..4);
                let entries: Vec<(u32, f32)> = (0..k)
                    .map(|_| (r.random_range(0..rows as u32), r.random_range(-1.0f32..1.0)))
                    .collect();
                m.push_row(entries);
            }
            let m = Rc::new(m);
            projected(vec![randn(&[rows, cols], r)], vec![n, cols], r, move |t, v| {
                t.sparse_rows(v[0], m.clone())
            })
        }),
        ("concat", |r| {
            let (a, b, c) = (dim(r), dim(r), dim(r));
            let axis = r.random_range(0..2);
            let (sa, sb, out) = if axis == 0 {
                ([a, c], [b, c], vec![a + b, c])
            } else {
                ([c, a], [c, b], vec![c, a + b])
            };
            projected(vec![randn(&sa, r), randn(&sb, r)], out, r, move |t, v| {
                t.concat(&[v[0], v[1]], axis)
            })
        }),
        ("upsample2x", |r| {
            let s = [dim(r), dim(r), dim(r)];
            projected(vec![randn(&s, r)], vec![s[0], 2 * s[1], 2 * s[2]], r, |t, v| t.upsample2x(v[0]))
        }),
        ("avgpool2x", |r| {
            let s = [dim(r), 2 * dim(r), 2 * dim(r)];
            projected(vec![randn(&s, r)], vec![s[0], s[1] / 2, s[2] / 2], r, |t, v| t.avgpool2x(v[0]))
        }),
        ("gram", |r| {
            let (c, n) = (dim(r), dim(r) + 1);
            let norm = r.random_range(1.0f32..8.0);
            projected(vec![randn(&[c, n], r)], vec![c, c], r, move |t, v| t.gram(v[0], norm))
        }),
        ("bias_add", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.random_range(0..3);
            projected(vec![randn(&s, r), randn(&[s[axis]], r)], s.to_vec(), r, move |t, v| {
                t.bias_add(v[0], v[1], axis)
            })
        }),
        ("scale_axis", |r| {
            let s = [dim(r), dim(r), dim(r)];
            let axis = r.random_range(0..3);
            projected(vec![randn(&s, r), randn(&[s[axis]], r)], s.to_vec(), r, move |t, v| {
                t.scale_axis(v[0], v[1], axis)
            })
        }),
        ("linear", |r| {
            let (m, k, n) = (dim(r), dim(r), dim(r));
            projected(
                vec![randn(&[m, k], r), randn(&[k, n], r), randn(&[n], r)],
                vec![m, n],
                r,
                |t, v| t.linear(v[0], v[1], Some(v[2])),
            )
        }),
    ]
}
