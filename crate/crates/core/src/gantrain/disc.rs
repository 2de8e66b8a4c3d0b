use std::rc::Rc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Binding, ParamStore, Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::generator::{lrelu_gain, LRELU_SLOPE};

/// Conv stack: per entry a 3x3 conv + leaky ReLU + 2x2 mean pool, then a
/// linear head to one logit. No entries gives a linear discriminator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    pub channels: Vec<usize>,
    pub image_size: usize,
}

impl Default for DiscConfig {
    fn default() -> Self {
        Self {
            channels: vec![16, 32, 64],
            image_size: 256,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        let k = self.channels.len();
        if self.image_size == 0 || self.image_size % (1 << k) != 0 {
            return Err(Error::InvalidArgument(format!(
                "discriminator input {} must be divisible by {}",
                self.image_size,
                1 << k
            )));
        }
        Ok(())
    }

    pub fn flat_features(&self) -> usize {
        let side = self.image_size >> self.channels.len();
        self.channels.last().copied().unwrap_or(3) * side * side
    }
}

pub fn init_discriminator(cfg: &DiscConfig, prefix: &str, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let mut cin = 3;
    for (i, &c) in cfg.channels.iter().enumerate() {
        p.insert(format!("{prefix}.conv{i}.weight"), Tensor::randn(vec![c, cin, 3, 3], 1.0, rng));
        p.insert(format!("{prefix}.conv{i}.bias"), Tensor::zeros(vec![c]));
        cin = c;
    }
    p.insert(format!("{prefix}.out.weight"), Tensor::randn(vec![cfg.flat_features(), 1], 1.0, rng));
    p.insert(format!("{prefix}.out.bias"), Tensor::zeros(vec![1]));
    Ok(p)
}

/// Values the input-gradient graph needs from a forward pass.
pub struct DiscTrace {
    conv_weights: Vec<Var>,
    pre_activations: Vec<Vec<f32>>,
    out_weight: Var,
    input_shape: Vec<usize>,
}

/// Logits `[n]` for images `x: [n, 3, S, S]`.
pub fn discriminator(
    tape: &mut Tape,
    p: &mut Binding,
    cfg: &DiscConfig,
    prefix: &str,
    x: Var,
) -> Result<(Var, DiscTrace)> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[1] != 3 || s[2] != cfg.image_size || s[3] != cfg.image_size {
        return Err(shape_err("discriminator", format!("input {:?} for size {}", s, cfg.image_size)));
    }
    let n = s[0];
    let mut h = x;
    let mut conv_weights = Vec::new();
    let mut pre_activations = Vec::new();
    for i in 0..cfg.channels.len() {
        let w = p.var(tape, &format!("{prefix}.conv{i}.weight"))?;
        let fan_in = tape.shape(w)[1] * 9;
        let w = tape.scale(w, lrelu_gain() / (fan_in as f32).sqrt());
        let b = p.var(tape, &format!("{prefix}.conv{i}.bias"))?;
        let a = tape.conv2d(h, w, Some(b), 1)?;
        pre_activations.push(tape.value(a).to_vec());
        conv_weights.push(w);
        let act = tape.leaky_relu(a, LRELU_SLOPE);
        h = tape.avgpool2x(act)?;
    }
    let flat = tape.reshape(h, vec![n, cfg.flat_features()])?;
    let ow = p.var(tape, &format!("{prefix}.out.weight"))?;
    let ow = tape.scale(ow, 1.0 / (cfg.flat_features() as f32).sqrt());
    let ob = p.var(tape, &format!("{prefix}.out.bias"))?;
    let logits = tape.linear(flat, ow, Some(ob))?;
    let logits = tape.reshape(logits, vec![n])?;
    Ok((
        logits,
        DiscTrace {
            conv_weights,
            pre_activations,
            out_weight: ow,
            input_shape: s,
        },
    ))
}

/// Permutation taking `[o, i, k, k]` to the flipped transpose `[i, o, k, k]`.
fn flip_transpose_index(o: usize, i: usize, k: usize) -> Vec<u32> {
    let mut idx = Vec::with_capacity(o * i * k * k);
    for ii in 0..i {
        for oo in 0..o {
            for ky in 0..k {
                for kx in 0..k {
                    idx.push((((oo * i + ii) * k + (k - 1 - ky)) * k + (k - 1 - kx)) as u32);
                }
            }
        }
    }
    idx
}

/// `d (sum_n logit_n) / d x` as a tape expression, differentiable with
/// respect to the discriminator weights. Leaky-ReLU slopes are piecewise
/// constant, so they enter as constant masks.
pub fn input_gradient(tape: &mut Tape, cfg: &DiscConfig, trace: &DiscTrace) -> Result<Var> {
    let n = trace.input_shape[0];
    let ones = tape.constant(vec![n, 1], vec![1.0; n])?;
    let wt = tape.transpose(trace.out_weight)?;
    let gf = tape.matmul(ones, wt)?;
    let k = cfg.channels.len();
    let side = cfg.image_size >> k;
    let last_c = cfg.channels.last().copied().unwrap_or(3);
    let mut g = tape.reshape(gf, vec![n, last_c, side, side])?;
    for i in (0..k).rev() {
        let up = tape.upsample2x(g)?;
        let up = tape.scale(up, 0.25);
        let slope: Vec<f32> = trace.pre_activations[i]
            .iter()
            .map(|&a| if a > 0.0 { 1.0 } else { LRELU_SLOPE })
            .collect();
        let sh = tape.shape(up).to_vec();
        let mask = tape.constant(sh, slope)?;
        let ga = tape.mul(up, mask)?;
        let w = trace.conv_weights[i];
        let ws = tape.shape(w).to_vec();
        let flat = tape.reshape(w, vec![ws.iter().product(), 1])?;
        let perm = tape.gather_rows(flat, Rc::new(flip_transpose_index(ws[0], ws[1], 3)))?;
        let wft = tape.reshape(perm, vec![ws[1], ws[0], 3, 3])?;
        g = tape.conv2d(ga, wft, None, 1)?;
    }
    if k == 0 {
        g = tape.reshape(g, trace.input_shape.clone())?;
    }
    Ok(g)
}

/// Mean over the batch of `||grad_x D(x)||^2`.
pub fn r1_penalty(tape: &mut Tape, p: &mut Binding, cfg: &DiscConfig, prefix: &str, real: Var) -> Result<Var> {
    let n = tape.shape(real)[0];
    let (_, trace) = discriminator(tape, p, cfg, prefix, real)?;
    let g = input_gradient(tape, cfg, &trace)?;
    let sq = tape.square(g);
    let s = tape.sum(sq);
    Ok(tape.scale(s, 1.0 / n as f32))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Trainable;
    use rand::SeedableRng;

    #[test]
    fn linear_discriminator_penalty_is_weight_norm() {
        let cfg = DiscConfig {
            channels: vec![],
            image_size: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = init_discriminator(&cfg, "disc.field", &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut b = Binding::new(&p, Trainable::Nothing);
        let x = tape
            .constant(vec![2, 3, 4, 4], Tensor::randn(vec![96], 1.0, &mut rng).into_data())
            .unwrap();
        let r1 = r1_penalty(&mut tape, &mut b, &cfg, "disc.field", x).unwrap();
        let w = p.get("disc.field.out.weight").unwrap().data();
        let norm2: f32 = w.iter().map(|v| v * v / 48.0).sum();
        assert!((tape.scalar(r1) - norm2).abs() < 1e-5);
    }

    #[test]
    fn input_gradient_matches_backward() {
        let cfg = DiscConfig {
            channels: vec![2, 3],
            image_size: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = init_discriminator(&cfg, "d", &mut rng).unwrap();
        let xs = Tensor::randn(vec![2, 3, 4, 4], 1.0, &mut rng);
        let mut tape = Tape::new();
        let mut b = Binding::new(&p, Trainable::Nothing);
        let x = tape.param(vec![2, 3, 4, 4], xs.data().to_vec()).unwrap();
        let (logits, trace) = discriminator(&mut tape, &mut b, &cfg, "d", x).unwrap();
        let g = input_gradient(&mut tape, &cfg, &trace).unwrap();
        let explicit = tape.value(g).to_vec();
        let total = tape.sum(logits);
        let grads = tape.backward(total).unwrap();
        for (a, b) in explicit.iter().zip(grads.get(x).unwrap()) {
            assert!((a - b).abs() < 1e-5, "{a} vs {b}");
        }
    }
}
