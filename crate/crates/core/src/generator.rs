//! Latent-conditioned face-convolutional encoder/decoder.
//!
//! The encoder runs residual face-conv blocks from the finest level up to
//! level 0, mean-pooling between levels. The decoder walks back down with
//! style-modulated synthesis blocks (weights scaled by an affine map of `w`
//! and demodulated per output channel), adds per-face noise scaled by a
//! learned strength, and concatenates encoder skips. The finest decoder
//! output is the per-face feature map `F_c` consumed by the field; a 1x1
//! projection followed by `tanh` gives the coarse per-face colours.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::{LevelTopology, MeshContext};
use crate::diff::{Binding, ParamStore, Tape, Tensor, Trainable, Var};
use crate::error::{Error, Result};
use crate::geometry::FaceGeometryFeature;

pub const LRELU_SLOPE: f32 = 0.2;

/// Architecture of the generator and field networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Hierarchy levels the encoder/decoder spans.
    pub levels: usize,
    /// Encoder widths, finest level first.
    pub enc_channels: Vec<usize>,
    /// Decoder widths, coarsest level first; the last entry is the `F_c` width.
    pub dec_channels: Vec<usize>,
    pub z_dim: usize,
    pub w_dim: usize,
    pub mapping_layers: usize,
    pub aux_dim: usize,
    pub field_hidden: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            enc_channels: vec![16, 32, 64],
            dec_channels: vec![64, 32, 64],
            z_dim: 512,
            w_dim: 512,
            mapping_layers: 8,
            aux_dim: 512,
            field_hidden: 128,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.levels == 0 {
            return bad("levels must be >= 1".into());
        }
        if self.enc_channels.len() != self.levels || self.dec_channels.len() != self.levels {
            return bad(format!(
                "{} levels need {0} encoder and decoder widths, got {} and {}",
                self.levels,
                self.enc_channels.len(),
                self.dec_channels.len()
            ));
        }
        if self.mapping_layers == 0 || self.z_dim == 0 || self.w_dim == 0 {
            return bad("mapping network needs positive sizes".into());
        }
        Ok(())
    }

    pub fn fc_channels(&self) -> usize {
        *self.dec_channels.last().expect("validated")
    }

    /// Width of the decoder block input at decoder step `d` (0 = coarsest).
    fn dec_in(&self, d: usize) -> usize {
        let skip = self.enc_channels[self.levels - 1 - d];
        if d == 0 {
            skip
        } else {
            self.dec_channels[d - 1] + skip
        }
    }

    /// Names of the conv tensors of the two finest synthesis blocks.
    pub fn refinement_tensors(&self) -> Vec<String> {
        let first = self.levels.saturating_sub(2);
        (first..self.levels)
            .flat_map(|d| [format!("gen.dec{d}.conv.weight"), format!("gen.dec{d}.conv.bias")])
            .collect()
    }
}

/// Per-face channel vectors at one hierarchy level.
#[derive(Clone, Debug, PartialEq)]
pub struct FaceFeatureMap {
    pub level: usize,
    pub channels: usize,
    pub values: Vec<f32>,
}

impl FaceFeatureMap {
    pub fn n_faces(&self) -> usize {
        self.values.len() / self.channels.max(1)
    }

    pub fn row(&self, f: usize) -> &[f32] {
        &self.values[f * self.channels..(f + 1) * self.channels]
    }
}

/// Latent code: `z` (when the latent came from the prior) and the mapped `w`.
#[derive(Clone, Debug, PartialEq)]
pub struct TextureLatent {
    pub z: Option<Vec<f32>>,
    pub w: Vec<f32>,
}

impl TextureLatent {
    pub fn from_z(params: &ParamStore, cfg: &ModelConfig, z: Vec<f32>) -> Result<Self> {
        let w = map_latent(params, cfg, &z)?;
        Ok(Self { z: Some(z), w })
    }

    pub fn from_seed(params: &ParamStore, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        Self::from_z(params, cfg, sample_z(cfg.z_dim, seed))
    }
}

/// Standard-normal `z` from a seed.
pub fn sample_z(dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::randn(vec![dim], 1.0, &mut rng).into_data()
}

/// Per-face noise injected by the synthesis blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Noise {
    Off,
    Seeded(u64),
}

/// He gain for leaky-ReLU layers.
pub fn lrelu_gain() -> f32 {
    (2.0f32 / (1.0 + LRELU_SLOPE * LRELU_SLOPE)).sqrt()
}

/// Weights are stored unit-variance and scaled by `gain / sqrt(fan_in)` at
/// use (equalized learning rate), so one Adam step moves every layer by the
/// same relative amount. `fan_in` is the leading dimension.
pub fn scaled_weight(tape: &mut Tape, p: &mut Binding, name: &str, gain: f32) -> Result<Var> {
    let v = p.var(tape, name)?;
    let fan_in = tape.shape(v)[0].max(1);
    Ok(tape.scale(v, gain / (fan_in as f32).sqrt()))
}

/// Fresh encoder, mapping and decoder weights.
pub fn init_generator(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<ParamStore> {
    cfg.validate()?;
    let mut p = ParamStore::new();
    let mut cin = FaceGeometryFeature::INPUT_DIM;
    for (i, &c) in cfg.enc_channels.iter().enumerate() {
        p.insert(format!("enc.{i}.conv1.weight"), Tensor::randn(vec![5 * cin, c], 1.0, rng));
        p.insert(format!("enc.{i}.conv1.bias"), Tensor::zeros(vec![c]));
        p.insert(format!("enc.{i}.conv2.weight"), Tensor::randn(vec![5 * c, c], 1.0, rng));
        p.insert(format!("enc.{i}.conv2.bias"), Tensor::zeros(vec![c]));
        p.insert(format!("enc.{i}.skip.weight"), Tensor::randn(vec![cin, c], 1.0, rng));
        cin = c;
    }
    let mut din = cfg.z_dim;
    for j in 0..cfg.mapping_layers {
        p.insert(format!("gen.map.{j}.weight"), Tensor::randn(vec![din, cfg.w_dim], 1.0, rng));
        p.insert(format!("gen.map.{j}.bias"), Tensor::zeros(vec![cfg.w_dim]));
        din = cfg.w_dim;
    }
    for d in 0..cfg.levels {
        let (ci, co) = (cfg.dec_in(d), cfg.dec_channels[d]);
        p.insert(format!("gen.dec{d}.affine.weight"), Tensor::randn(vec![cfg.w_dim, ci], 1.0, rng));
        p.insert(format!("gen.dec{d}.affine.bias"), Tensor::full(vec![ci], 1.0));
        p.insert(format!("gen.dec{d}.conv.weight"), Tensor::randn(vec![5 * ci, co], 1.0, rng));
        p.insert(format!("gen.dec{d}.conv.bias"), Tensor::zeros(vec![co]));
        p.insert(format!("gen.dec{d}.noise_strength"), Tensor::full(vec![1], 0.05));
    }
    let fc = cfg.fc_channels();
    p.insert("gen.rgb.weight", Tensor::randn(vec![fc, 3], 1.0, rng));
    p.insert("gen.rgb.bias", Tensor::zeros(vec![3]));
    Ok(p)
}

/// `out[f] = x[f] W_self + sum_k x[n_k(f)] W_k + b`, boundary neighbours
/// contributing zeros. `weight` is `[5 * cin, cout]`, blocks ordered self,
/// then neighbour slots 0..4 in stored adjacency order.
pub fn face_conv(tape: &mut Tape, x: Var, weight: Var, bias: Option<Var>, topo: &LevelTopology) -> Result<Var> {
    let rows = tape.shape(x)[0];
    if rows != topo.n_faces {
        return Err(Error::LevelMismatch {
            level: usize::MAX,
            got: rows,
            expected: topo.n_faces,
        });
    }
    let mut parts = vec![x];
    for k in 0..4 {
        parts.push(tape.gather_rows(x, topo.neighbors[k].clone())?);
    }
    let stacked = tape.concat(&parts, 1)?;
    tape.linear(stacked, weight, bias)
}

/// Mean over the 4 children: level `l + 1` features to level `l`.
pub fn face_pool(tape: &mut Tape, x: Var, coarse: &LevelTopology) -> Result<Var> {
    let m = coarse
        .pool_from_finer
        .clone()
        .ok_or(Error::MissingLinks(0, 1))?;
    tape.sparse_rows(x, m)
}

/// Copy each parent row to its 4 children: level `l` features to `l + 1`.
pub fn face_unpool(tape: &mut Tape, x: Var, fine: &LevelTopology) -> Result<Var> {
    let p = fine.parent.clone().ok_or(Error::MissingLinks(0, 1))?;
    tape.gather_rows(x, p)
}

/// 8-layer (by default) leaky-ReLU MLP on the unit-RMS normalized `z`.
/// `z` is `[1, z_dim]`; returns `[1, w_dim]`.
pub fn mapping_network(tape: &mut Tape, p: &mut Binding, cfg: &ModelConfig, z: Var) -> Result<Var> {
    let sq = tape.square(z);
    let ms = tape.mean(sq);
    let ms = tape.add_scalar(ms, 1e-8);
    let inv = tape.powf(ms, -0.5);
    let mut h = tape.scale_by(z, inv)?;
    for j in 0..cfg.mapping_layers {
        let w = scaled_weight(tape, p, &format!("gen.map.{j}.weight"), lrelu_gain())?;
        let b = p.var(tape, &format!("gen.map.{j}.bias"))?;
        h = tape.linear(h, w, Some(b))?;
        h = tape.leaky_relu(h, LRELU_SLOPE);
    }
    Ok(h)
}

/// Mapping network without a gradient tape.
pub fn map_latent(params: &ParamStore, cfg: &ModelConfig, z: &[f32]) -> Result<Vec<f32>> {
    if z.len() != cfg.z_dim {
        return Err(Error::InvalidArgument(format!("z has {} entries, expected {}", z.len(), cfg.z_dim)));
    }
    let mut tape = Tape::new();
    let mut b = Binding::new(params, Trainable::Nothing);
    let zv = tape.constant(vec![1, cfg.z_dim], z.to_vec())?;
    let w = mapping_network(&mut tape, &mut b, cfg, zv)?;
    Ok(tape.value(w).to_vec())
}

fn face_noise(n_faces: usize, channels: usize, seed: u64, block: usize) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (0x9E37_79B9_7F4A_7C15u64.wrapping_mul(block as u64 + 1)));
    let per_face = Tensor::randn(vec![n_faces], 1.0, &mut rng).into_data();
    per_face
        .iter()
        .flat_map(|&v| std::iter::repeat_n(v, channels))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn synthesis_block(
    tape: &mut Tape,
    p: &mut Binding,
    d: usize,
    x: Var,
    w: Var,
    topo: &LevelTopology,
    noise: Noise,
) -> Result<Var> {
    let aw = scaled_weight(tape, p, &format!("gen.dec{d}.affine.weight"), 0.5)?;
    let ab = p.var(tape, &format!("gen.dec{d}.affine.bias"))?;
    let cw = scaled_weight(tape, p, &format!("gen.dec{d}.conv.weight"), lrelu_gain())?;
    let cb = p.var(tape, &format!("gen.dec{d}.conv.bias"))?;
    let cin = tape.shape(x)[1];
    let cout = tape.shape(cw)[1];

    let style = tape.linear(w, aw, Some(ab))?;
    let style = tape.reshape(style, vec![cin])?;
    let xm = tape.scale_axis(x, style, 1)?;
    let y = face_conv(tape, xm, cw, None, topo)?;

    // demodulation: 1 / sqrt(sum_{k,i} (W[k,i,o] s_i)^2)
    let s2 = tape.square(style);
    let tiled = tape.concat(&[s2; 5], 0)?;
    let tiled = tape.reshape(tiled, vec![1, 5 * cin])?;
    let w2 = tape.square(cw);
    let energy = tape.matmul(tiled, w2)?;
    let energy = tape.add_scalar(energy, 1e-8);
    let demod = tape.powf(energy, -0.5);
    let demod = tape.reshape(demod, vec![cout])?;
    let mut y = tape.scale_axis(y, demod, 1)?;

    if let Noise::Seeded(seed) = noise {
        let strength = p.var(tape, &format!("gen.dec{d}.noise_strength"))?;
        let n = tape.constant(vec![topo.n_faces, cout], face_noise(topo.n_faces, cout, seed, d))?;
        let n = tape.scale_by(n, strength)?;
        y = tape.add(y, n)?;
    }
    let y = tape.bias_add(y, cb, 1)?;
    Ok(tape.leaky_relu(y, LRELU_SLOPE))
}

fn encoder_block(tape: &mut Tape, p: &mut Binding, i: usize, x: Var, topo: &LevelTopology) -> Result<Var> {
    let w1 = scaled_weight(tape, p, &format!("enc.{i}.conv1.weight"), lrelu_gain())?;
    let b1 = p.var(tape, &format!("enc.{i}.conv1.bias"))?;
    let w2 = scaled_weight(tape, p, &format!("enc.{i}.conv2.weight"), lrelu_gain())?;
    let b2 = p.var(tape, &format!("enc.{i}.conv2.bias"))?;
    let ws = scaled_weight(tape, p, &format!("enc.{i}.skip.weight"), 1.0)?;
    let h = face_conv(tape, x, w1, Some(b1), topo)?;
    let h = tape.leaky_relu(h, LRELU_SLOPE);
    let h = face_conv(tape, h, w2, Some(b2), topo)?;
    let s = tape.matmul(x, ws)?;
    let out = tape.add(h, s)?;
    Ok(tape.leaky_relu(out, LRELU_SLOPE))
}

/// Tape outputs of the generator.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorOutput {
    /// `[faces, fc_channels]` at the finest level.
    pub features: Var,
    /// `[faces, 3]`, in `(-1, 1)`.
    pub coarse_rgb: Var,
}

/// Encoder + synthesis network for mapped latent `w: [1, w_dim]`.
pub fn synthesize(
    tape: &mut Tape,
    p: &mut Binding,
    cfg: &ModelConfig,
    ctx: &MeshContext,
    w: Var,
    noise: Noise,
) -> Result<GeneratorOutput> {
    cfg.validate()?;
    if ctx.n_levels() < cfg.levels {
        return Err(Error::InvalidArgument(format!(
            "model needs {} hierarchy levels, mesh has {}",
            cfg.levels,
            ctx.n_levels()
        )));
    }
    // The network spans the finest `cfg.levels` levels of the hierarchy.
    let top = ctx.n_levels() - cfg.levels;
    let finest = ctx.finest_level();
    let input = tape.constant(
        vec![ctx.levels[finest].n_faces, FaceGeometryFeature::INPUT_DIM],
        ctx.encoder_input.clone(),
    )?;

    let mut skips = Vec::with_capacity(cfg.levels);
    let mut h = input;
    for i in 0..cfg.levels {
        let level = finest - i;
        if i > 0 {
            h = face_pool(tape, h, &ctx.levels[level])?;
        }
        h = encoder_block(tape, p, i, h, &ctx.levels[level])?;
        skips.push(h);
    }

    let mut y = skips[cfg.levels - 1];
    for d in 0..cfg.levels {
        let level = top + d;
        if d > 0 {
            let up = face_unpool(tape, y, &ctx.levels[level])?;
            y = tape.concat(&[up, skips[cfg.levels - 1 - d]], 1)?;
        }
        y = synthesis_block(tape, p, d, y, w, &ctx.levels[level], noise)?;
    }
    let rw = scaled_weight(tape, p, "gen.rgb.weight", 1.0)?;
    let rb = p.var(tape, "gen.rgb.bias")?;
    let rgb = tape.linear(y, rw, Some(rb))?;
    let coarse_rgb = tape.tanh(rgb);
    Ok(GeneratorOutput {
        features: y,
        coarse_rgb,
    })
}

/// No-grad generator forward: `(F_c, coarse per-face rgb)`.
pub fn generate_features(
    params: &ParamStore,
    cfg: &ModelConfig,
    ctx: &MeshContext,
    latent: &TextureLatent,
    noise: Noise,
) -> Result<(FaceFeatureMap, Vec<[f32; 3]>)> {
    if latent.w.len() != cfg.w_dim {
        return Err(Error::InvalidArgument(format!("w has {} entries, expected {}", latent.w.len(), cfg.w_dim)));
    }
    let mut tape = Tape::new();
    let mut b = Binding::new(params, Trainable::Nothing);
    let w = tape.constant(vec![1, cfg.w_dim], latent.w.clone())?;
    let out = synthesize(&mut tape, &mut b, cfg, ctx, w, noise)?;
    let fc = FaceFeatureMap {
        level: ctx.finest_level(),
        channels: cfg.fc_channels(),
        values: tape.value(out.features).to_vec(),
    };
    let rgb = tape
        .value(out.coarse_rgb)
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    Ok((fc, rgb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{shapes, subdivide};

    fn small_cfg() -> ModelConfig {
        ModelConfig {
            levels: 2,
            enc_channels: vec![4, 6],
            dec_channels: vec![6, 5],
            z_dim: 8,
            w_dim: 8,
            mapping_layers: 2,
            aux_dim: 4,
            field_hidden: 8,
            seed: 1,
        }
    }

    fn ctx(levels: usize) -> MeshContext {
        MeshContext::new(subdivide(&shapes::unit_cube(), levels).unwrap()).unwrap()
    }

    #[test]
    fn pool_of_children_is_mean() {
        let c = ctx(2);
        let mut tape = Tape::new();
        let mut vals = vec![0.0; 24];
        for k in 0..4 {
            vals[k] = (k + 1) as f32;
        }
        let x = tape.constant(vec![24, 1], vals).unwrap();
        let p = face_pool(&mut tape, x, &c.levels[0]).unwrap();
        assert_eq!(tape.value(p)[0], 2.5);
    }

    #[test]
    fn unpool_after_pool_on_constants() {
        let c = ctx(2);
        let mut tape = Tape::new();
        let x = tape.constant(vec![24, 2], vec![0.75; 48]).unwrap();
        let p = face_pool(&mut tape, x, &c.levels[0]).unwrap();
        let u = face_unpool(&mut tape, p, &c.levels[1]).unwrap();
        assert_eq!(tape.value(u), tape.value(x));
    }

    #[test]
    fn level_mismatch_is_error() {
        let c = ctx(2);
        let mut tape = Tape::new();
        let x = tape.constant(vec![6, 1], vec![0.0; 6]).unwrap();
        let w = tape.constant(vec![5, 1], vec![0.0; 5]).unwrap();
        assert!(matches!(face_conv(&mut tape, x, w, None, &c.levels[1]), Err(Error::LevelMismatch { .. })));
    }

    #[test]
    fn generation_is_deterministic_and_latent_dependent() {
        let cfg = small_cfg();
        let c = ctx(2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = init_generator(&cfg, &mut rng).unwrap();
        let l1 = TextureLatent::from_seed(&p, &cfg, 10).unwrap();
        let l2 = TextureLatent::from_seed(&p, &cfg, 11).unwrap();
        let a = generate_features(&p, &cfg, &c, &l1, Noise::Seeded(5)).unwrap();
        let b = generate_features(&p, &cfg, &c, &l1, Noise::Seeded(5)).unwrap();
        assert_eq!(a, b);
        let x = generate_features(&p, &cfg, &c, &l1, Noise::Off).unwrap().0;
        let y = generate_features(&p, &cfg, &c, &l2, Noise::Off).unwrap().0;
        let dist: f32 = x.values.iter().zip(&y.values).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(dist > 0.0);
        assert!(a.1.iter().flatten().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_decoder_gives_tanh_bias() {
        let cfg = small_cfg();
        let c = ctx(2);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut p = init_generator(&cfg, &mut rng).unwrap();
        let names: Vec<String> = p.names().filter(|n| n.starts_with("gen.dec") || n.starts_with("gen.rgb")).map(String::from).collect();
        for n in names {
            p.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let bias = [0.3f32, -0.7, 1.2];
        p.get_mut("gen.rgb.bias").unwrap().data_mut().copy_from_slice(&bias);
        let l = TextureLatent::from_seed(&p, &cfg, 1).unwrap();
        let (_, rgb) = generate_features(&p, &cfg, &c, &l, Noise::Seeded(9)).unwrap();
        for px in rgb {
            for k in 0..3 {
                assert!((px[k] - bias[k].tanh()).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn mapping_is_scale_invariant() {
        let cfg = small_cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_generator(&cfg, &mut rng).unwrap();
        let z = sample_z(cfg.z_dim, 2);
        let z2: Vec<f32> = z.iter().map(|v| 2.0 * v).collect();
        let a = map_latent(&p, &cfg, &z).unwrap();
        let b = map_latent(&p, &cfg, &z2).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-5);
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ModelConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.dec_channels.pop();
        assert!(cfg.validate().is_err());
        assert_eq!(ModelConfig::default().refinement_tensors().len(), 4);
    }
}
