//! Shared colour field over the mesh surface.
//!
//! A surface point's feature is the barycentric blend of per-vertex features
//! (vertex = mean of incident face features). Branch A embeds that feature
//! together with a within-face position code, branch B embeds the learnable
//! auxiliary latent, and a 4-layer trunk with a `tanh` head decodes colour.
//!
//! The position code is a function of the quad corner weights
//! `(w0, w1, w2, w3)`: `(sum w^2, sum w^3, w0 w2 + w1 w3)`. It is invariant
//! under the symmetries of the quad, so it agrees on both sides of the
//! internal diagonal and on both faces sharing an edge.

use std::rc::Rc;

use rand_chacha::ChaCha8Rng;

use crate::context::MeshContext;
use crate::diff::{Binding, ParamStore, SparseRows, Tape, Tensor, Trainable, Var};
use crate::error::{Error, Result};
use crate::generator::{lrelu_gain, scaled_weight, FaceFeatureMap, ModelConfig, LRELU_SLOPE};
use crate::geometry::SurfacePoint;

pub const POSENC_DIM: usize = 3;

pub fn position_code(sp: &SurfacePoint) -> [f32; 3] {
    let w = sp.corner_weights();
    let s2 = w.iter().map(|x| x * x).sum();
    let s3 = w.iter().map(|x| x * x * x).sum();
    [s2, s3, w[0] * w[2] + w[1] * w[3]]
}

/// Point at lattice coordinates `(u, v)` in `[0, 1]^2` with `v1` at the
/// origin, `v2` at `(1, 0)`, `v3` at `(0, 1)`, `v4` at `(1, 1)`.
pub fn point_at_uv(face: u32, u: f32, v: f32) -> SurfacePoint {
    if u + v <= 1.0 {
        SurfacePoint::new(face, 0, [1.0 - u - v, u, v])
    } else {
        SurfacePoint::new(face, 1, [1.0 - v, u + v - 1.0, 1.0 - u])
    }
}

/// `n x n` cell-centred lattice on one face, row-major in `v` then `u`.
pub fn face_grid_points(face: u32, n: usize) -> Vec<SurfacePoint> {
    let mut pts = Vec::with_capacity(n * n);
    for j in 0..n {
        for i in 0..n {
            let u = (i as f32 + 0.5) / n as f32;
            let v = (j as f32 + 0.5) / n as f32;
            pts.push(point_at_uv(face, u, v));
        }
    }
    pts
}

/// Fresh field weights and auxiliary latent.
pub fn init_field(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> ParamStore {
    let h = cfg.field_hidden;
    let mut p = ParamStore::new();
    let mut lin = |p: &mut ParamStore, name: &str, i: usize, o: usize| {
        p.insert(format!("psi.{name}.weight"), Tensor::randn(vec![i, o], 1.0, rng));
        p.insert(format!("psi.{name}.bias"), Tensor::zeros(vec![o]));
    };
    lin(&mut p, "a0", cfg.fc_channels() + POSENC_DIM, h);
    lin(&mut p, "a1", h, h);
    lin(&mut p, "b0", cfg.aux_dim, h);
    lin(&mut p, "b1", h, h);
    lin(&mut p, "t0", 2 * h, h);
    lin(&mut p, "t1", h, h);
    lin(&mut p, "t2", h, h);
    lin(&mut p, "t3", h, 3);
    p.insert("psi.aux", Tensor::randn(vec![1, cfg.aux_dim], 1.0, rng));
    p
}

/// Constant tables for evaluating the field at a fixed list of points.
#[derive(Clone, Debug)]
pub struct FieldQuery {
    n_points: usize,
    /// Rows are evaluation sites, columns finest-level vertices.
    interp: Rc<SparseRows>,
    posenc: Vec<f32>,
    /// Maps evaluation sites back to requested points when some points lie
    /// on degenerate faces (those take the mean of neighbour-centroid colours).
    combine: Option<Rc<SparseRows>>,
}

impl FieldQuery {
    pub fn new(ctx: &MeshContext, points: &[SurfacePoint]) -> Result<Self> {
        let mesh = ctx.finest();
        let n_faces = mesh.n_faces();
        let mut sites: Vec<SurfacePoint> = Vec::with_capacity(points.len());
        let mut combine_rows: Vec<Vec<(u32, f32)>> = Vec::with_capacity(points.len());
        let mut any_degenerate = false;
        let mut fallback_cache: std::collections::HashMap<u32, Vec<(u32, f32)>> = Default::default();
        for sp in points {
            let f = sp.face as usize;
            if f >= n_faces || sp.half > 1 {
                return Err(Error::InvalidArgument(format!("surface point on face {} half {}", sp.face, sp.half)));
            }
            if !ctx.geometry[f].degenerate {
                combine_rows.push(vec![(sites.len() as u32, 1.0)]);
                sites.push(*sp);
                continue;
            }
            any_degenerate = true;
            let row = fallback_cache.entry(sp.face).or_insert_with(|| {
                let mut nbrs: Vec<u32> = mesh
                    .neighbors(f)
                    .iter()
                    .flatten()
                    .filter(|&&g| !ctx.geometry[g].degenerate)
                    .map(|&g| g as u32)
                    .collect();
                if nbrs.is_empty() {
                    nbrs.push(sp.face);
                }
                let w = 1.0 / nbrs.len() as f32;
                nbrs.iter()
                    .map(|&g| {
                        let i = sites.len() as u32;
                        sites.push(point_at_uv(g, 0.5, 0.5));
                        (i, w)
                    })
                    .collect()
            });
            combine_rows.push(row.clone());
        }

        let mut interp = SparseRows::new(mesh.n_vertices());
        let mut posenc = Vec::with_capacity(sites.len() * POSENC_DIM);
        for sp in &sites {
            let c = mesh.faces()[sp.face as usize];
            let w = sp.corner_weights();
            interp.push_row((0..4).filter(|&k| w[k] != 0.0).map(|k| (c[k], w[k])));
            posenc.extend_from_slice(&position_code(sp));
        }
        let combine = any_degenerate.then(|| {
            let mut m = SparseRows::new(sites.len());
            for row in combine_rows {
                m.push_row(row);
            }
            Rc::new(m)
        });
        Ok(Self {
            n_points: points.len(),
            interp: Rc::new(interp),
            posenc,
            combine,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }
}

/// Per-vertex mean of incident face features: `[faces, C] -> [vertices, C]`.
pub fn vertex_features(tape: &mut Tape, ctx: &MeshContext, face_features: Var) -> Result<Var> {
    let rows = tape.shape(face_features)[0];
    if rows != ctx.finest().n_faces() {
        return Err(Error::LevelMismatch {
            level: ctx.finest_level(),
            got: rows,
            expected: ctx.finest().n_faces(),
        });
    }
    tape.sparse_rows(face_features, ctx.vertex_average.clone())
}

fn layer(tape: &mut Tape, p: &mut Binding, name: &str, x: Var, act: bool) -> Result<Var> {
    let gain = if act { lrelu_gain() } else { 1.0 };
    let w = scaled_weight(tape, p, &format!("psi.{name}.weight"), gain)?;
    let b = p.var(tape, &format!("psi.{name}.bias"))?;
    // Wide f32 sums would cost about an order of magnitude of output accuracy.
    let y = tape.matmul_precise(x, w)?;
    let y = tape.bias_add(y, b, 1)?;
    Ok(if act { tape.leaky_relu(y, LRELU_SLOPE) } else { y })
}

/// Colours `[points, 3]` in `[-1, 1]` at the query points.
pub fn field_forward(tape: &mut Tape, p: &mut Binding, vertex_feats: Var, q: &FieldQuery) -> Result<Var> {
    let n_sites = q.interp.n_rows();
    let feat = tape.sparse_rows(vertex_feats, q.interp.clone())?;
    let pe = tape.constant(vec![n_sites, POSENC_DIM], q.posenc.clone())?;
    let rgb = decode(tape, p, feat, pe)?;
    match &q.combine {
        Some(m) => tape.sparse_rows(rgb, m.clone()),
        None => Ok(rgb),
    }
}

/// The shared network on already-interpolated features `[n, C]` and codes `[n, 3]`.
fn decode(tape: &mut Tape, p: &mut Binding, feat: Var, pe: Var) -> Result<Var> {
    let n_sites = tape.shape(feat)[0];
    let a = tape.concat(&[feat, pe], 1)?;
    let a = layer(tape, p, "a0", a, true)?;
    let a = layer(tape, p, "a1", a, true)?;

    let aux = p.var(tape, "psi.aux")?;
    let b = layer(tape, p, "b0", aux, true)?;
    let b = layer(tape, p, "b1", b, true)?;
    let b = tape.gather_rows(b, Rc::new(vec![0; n_sites]))?;

    let mut h = tape.concat(&[a, b], 1)?;
    for t in ["t0", "t1", "t2"] {
        h = layer(tape, p, t, h, true)?;
    }
    let h = layer(tape, p, "t3", h, false)?;
    Ok(tape.tanh(h))
}

/// No-grad field evaluation at `points` for face features `fc`.
pub fn eval_field(
    params: &ParamStore,
    ctx: &MeshContext,
    fc: &FaceFeatureMap,
    points: &[SurfacePoint],
) -> Result<Vec<[f32; 3]>> {
    let q = FieldQuery::new(ctx, points)?;
    let mut tape = Tape::new();
    let mut b = Binding::new(params, Trainable::Nothing);
    let x = tape.constant(vec![fc.n_faces(), fc.channels], fc.values.clone())?;
    let v = vertex_features(&mut tape, ctx, x)?;
    let rgb = field_forward(&mut tape, &mut b, v, &q)?;
    Ok(tape.value(rgb).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// No-grad network evaluation on explicit per-point features
/// (`features` is `[codes.len(), channels]`), bypassing interpolation.
pub fn eval_features(params: &ParamStore, features: &[f32], channels: usize, codes: &[[f32; 3]]) -> Result<Vec<[f32; 3]>> {
    let n = codes.len();
    let mut tape = Tape::new();
    let mut b = Binding::new(params, Trainable::Nothing);
    let feat = tape.constant(vec![n, channels], features.to_vec())?;
    let pe = tape.constant(vec![n, POSENC_DIM], codes.iter().flatten().copied().collect())?;
    let rgb = decode(&mut tape, &mut b, feat, pe)?;
    Ok(tape.value(rgb).chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// `n x n` colour samples on one face (row-major, `v` outer).
pub fn sample_face_grid(
    params: &ParamStore,
    ctx: &MeshContext,
    fc: &FaceFeatureMap,
    face: u32,
    n: usize,
) -> Result<Vec<[f32; 3]>> {
    if n == 0 {
        return Err(Error::InvalidArgument("grid resolution must be >= 1".into()));
    }
    eval_field(params, ctx, fc, &face_grid_points(face, n))
}
