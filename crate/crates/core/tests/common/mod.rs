//! Independent oracles shared by the integration tests. Nothing here calls
//! into the kernels it is used to check.
#![allow(dead_code)]

use meshfield::context::MeshContext;
use meshfield::diff::ParamStore;
use meshfield::generator::{FaceFeatureMap, LRELU_SLOPE};
use meshfield::geometry::Vec3;
use meshfield::render::{Image, Mask};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Barycentric weights of `p` in triangle `(a, b, c)` from signed areas
/// taken along the triangle normal.
pub fn bary_from_areas(p: Vec3, a: Vec3, b: Vec3, c: Vec3) -> [f64; 3] {
    let n = cross(sub(b, a), sub(c, a));
    let total = dot(n, n);
    let wa = dot(n, cross(sub(b, p), sub(c, p))) / total;
    let wb = dot(n, cross(sub(c, p), sub(a, p))) / total;
    [wa, wb, 1.0 - wa - wb]
}

/// Uniform random barycentric triple (sorted-uniforms method), stored so the
/// sum is exactly one in f32.
pub fn random_bary<R: Rng>(rng: &mut R) -> [f32; 3] {
    let (mut u, mut v): (f32, f32) = (rng.random(), rng.random());
    if u > v {
        std::mem::swap(&mut u, &mut v);
    }
    let b1 = u;
    let b2 = v - u;
    [b1, b2, 1.0 - b1 - b2]
}

/// Exhaustive scan for the foreground pixel whose NOC is nearest to
/// `target`; strict `<` keeps the first in scanline order on ties.
pub fn nearest_noc_scan(noc: &Image, mask: &Mask, target: [f32; 3]) -> Option<(usize, usize)> {
    let plane = noc.width * noc.height;
    let mut best: Option<(f32, usize, usize)> = None;
    for y in 0..noc.height {
        for x in 0..noc.width {
            if !mask.data[y * mask.width + x] {
                continue;
            }
            let i = y * noc.width + x;
            let d: f32 = (0..3).map(|c| (noc.data[c * plane + i] - target[c]).powi(2)).sum();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, x, y));
            }
        }
    }
    best.map(|(_, x, y)| (x, y))
}

/// Random NOC image with values on a coarse lattice (so ties occur) and a
/// random mask with at least one foreground pixel.
pub fn random_noc_pair<R: Rng>(rng: &mut R, size: usize) -> (Image, Mask) {
    let mut noc = Image::zeros(size, size, 3);
    for v in noc.data.iter_mut() {
        *v = rng.random_range(0..8) as f32 / 7.0;
    }
    let mut data: Vec<bool> = (0..size * size).map(|_| rng.random_bool(0.6)).collect();
    let k = rng.random_range(0..data.len());
    data[k] = true;
    (
        noc,
        Mask {
            width: size,
            height: size,
            data,
        },
    )
}

/// Masked channel Gram matrix `G[a][b] = sum_p f_a(p) f_b(p) / (C * n)`
/// over a `[C, H, W]` map, in f64.
pub fn naive_gram(features: &[f32], c: usize, hw: usize, mask: Option<&[bool]>) -> Vec<f64> {
    let valid: Vec<usize> = (0..hw).filter(|&p| mask.is_none_or(|m| m[p])).collect();
    let norm = (c * valid.len().max(1)) as f64;
    let mut g = vec![0.0; c * c];
    for a in 0..c {
        for b in 0..c {
            let s: f64 = valid
                .iter()
                .map(|&p| features[a * hw + p] as f64 * features[b * hw + p] as f64)
                .sum();
            g[a * c + b] = s / norm;
        }
    }
    g
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

/// Dense f64 evaluation of the field network on one input feature.
pub fn mlp_oracle(p: &ParamStore, feat: &[f64], code: [f32; 3]) -> [f64; 3] {
    let gain = (2.0 / (1.0 + (LRELU_SLOPE as f64).powi(2))).sqrt();
    let layer = |name: &str, x: &[f64], act: bool| -> Vec<f64> {
        let w = p.get(&format!("psi.{name}.weight")).unwrap();
        let b = p.get(&format!("psi.{name}.bias")).unwrap();
        let (i, o) = (w.shape()[0], w.shape()[1]);
        assert_eq!(x.len(), i);
        let g = if act { gain } else { 1.0 } / (i as f64).sqrt();
        (0..o)
            .map(|j| {
                let s: f64 = (0..i).map(|k| x[k] * w.data()[k * o + j] as f64).sum::<f64>() * g + b.data()[j] as f64;
                if act && s < 0.0 {
                    s * LRELU_SLOPE as f64
                } else {
                    s
                }
            })
            .collect()
    };
    let mut a_in = feat.to_vec();
    a_in.extend(code.iter().map(|&v| v as f64));
    let a = layer("a1", &layer("a0", &a_in, true), true);
    let aux: Vec<f64> = p.get("psi.aux").unwrap().data().iter().map(|&v| v as f64).collect();
    let b = layer("b1", &layer("b0", &aux, true), true);
    let mut h = [a, b].concat();
    for t in ["t0", "t1", "t2"] {
        h = layer(t, &h, true);
    }
    let out = layer("t3", &h, false);
    [out[0].tanh(), out[1].tanh(), out[2].tanh()]
}

/// Vertex features by scanning every face for the vertex, in f64.
pub fn vertex_feature_scan(ctx: &MeshContext, fc: &FaceFeatureMap, v: u32) -> Vec<f64> {
    let mut acc = vec![0.0; fc.channels];
    let mut n = 0;
    for (f, face) in ctx.finest().faces().iter().enumerate() {
        if face.contains(&v) {
            for (a, x) in acc.iter_mut().zip(fc.row(f)) {
                *a += *x as f64;
            }
            n += 1;
        }
    }
    acc.iter().map(|a| a / n as f64).collect()
}
