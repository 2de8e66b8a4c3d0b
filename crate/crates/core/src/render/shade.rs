use std::rc::Rc;

use crate::context::MeshContext;
use crate::diff::{Binding, ParamStore, Tape, Trainable, Var};
use crate::error::{Error, Result};
use crate::field::{field_forward, vertex_features, FieldQuery};
use crate::generator::{synthesize, ModelConfig, Noise, TextureLatent};
use crate::geometry::{barycentric_point, noc_of_point, Aabb, QuadMesh};

use super::camera::Camera;
use super::image::{Image, Mask};
use super::raster::{rasterize, FragBuffer};

pub const DEFAULT_BACKGROUND: [f32; 3] = [-1.0, -1.0, -1.0];

fn check_sizes(frags: &[&FragBuffer]) -> Result<(usize, usize)> {
    let first = frags
        .first()
        .ok_or_else(|| Error::InvalidArgument("no views to shade".into()))?;
    if frags.iter().any(|f| f.width != first.width || f.height != first.height) {
        return Err(Error::InvalidArgument("views differ in size".into()));
    }
    Ok((first.height, first.width))
}

/// Scatter per-point colours `[n, 3]` into `[views, 3, H, W]` images.
/// `index[v][pixel]` selects a colour row; `None` picks the background.
fn scatter(
    tape: &mut Tape,
    colors: Var,
    index: Vec<Vec<Option<u32>>>,
    hw: (usize, usize),
    background: [f32; 3],
) -> Result<Var> {
    let n = tape.shape(colors)[0] as u32;
    let bg = tape.constant(vec![1, 3], background.to_vec())?;
    let table = tape.concat(&[colors, bg], 0)?;
    let mut planes = Vec::with_capacity(index.len());
    for idx in index {
        let idx: Vec<u32> = idx.into_iter().map(|i| i.unwrap_or(n)).collect();
        let px = tape.gather_rows(table, Rc::new(idx))?;
        planes.push(tape.transpose(px)?);
    }
    let all = tape.concat(&planes, 0)?;
    let v = planes.len();
    tape.reshape(all, vec![v, 3, hw.0, hw.1])
}

/// Field colours at every covered pixel of every view: `[views, 3, H, W]`.
pub fn shade(
    tape: &mut Tape,
    params: &mut Binding,
    ctx: &MeshContext,
    face_features: Var,
    frags: &[&FragBuffer],
    background: [f32; 3],
) -> Result<Var> {
    let hw = check_sizes(frags)?;
    let mut points = Vec::new();
    let mut index = Vec::with_capacity(frags.len());
    for fb in frags {
        let mut idx = vec![None; fb.n_pixels()];
        for (pix, sp) in fb.surface_points() {
            idx[pix] = Some(points.len() as u32);
            points.push(sp);
        }
        index.push(idx);
    }
    let q = FieldQuery::new(ctx, &points)?;
    let vf = vertex_features(tape, ctx, face_features)?;
    let colors = if points.is_empty() {
        tape.constant(vec![0, 3], Vec::new())?
    } else {
        field_forward(tape, params, vf, &q)?
    };
    scatter(tape, colors, index, hw, background)
}

/// Flat per-face colours `coarse_rgb: [faces, 3]`: `[views, 3, H, W]`.
pub fn shade_coarse(tape: &mut Tape, coarse_rgb: Var, frags: &[&FragBuffer], background: [f32; 3]) -> Result<Var> {
    let hw = check_sizes(frags)?;
    let n_faces = tape.shape(coarse_rgb)[0];
    let index = frags
        .iter()
        .map(|fb| {
            fb.fragments
                .iter()
                .map(|f| f.is_foreground().then_some(f.face))
                .collect::<Vec<_>>()
        })
        .collect::<Vec<_>>();
    if index.iter().flatten().flatten().any(|&f| f as usize >= n_faces) {
        return Err(Error::LevelMismatch {
            level: usize::MAX,
            got: n_faces,
            expected: n_faces + 1,
        });
    }
    scatter(tape, coarse_rgb, index, hw, background)
}

/// NOC of the surface point under each covered pixel; zero elsewhere.
pub fn render_noc(frag: &FragBuffer, mesh: &QuadMesh, frame: &Aabb) -> Image {
    let mut img = Image::zeros(frag.width, frag.height, 3);
    let plane = frag.n_pixels();
    for (pix, sp) in frag.surface_points() {
        let p = barycentric_point(&sp, mesh);
        let noc = noc_of_point(p, frame).0;
        for (c, v) in noc.iter().enumerate() {
            img.data[c * plane + pix] = *v as f32;
        }
    }
    img
}

/// A fully rendered view: colours, coverage, NOCs and fragments.
#[derive(Clone, Debug)]
pub struct RenderedView {
    pub rgb: Image,
    pub mask: Mask,
    pub noc: Image,
    pub frag: FragBuffer,
}

/// Which colour path to render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShadeMode {
    Field,
    Coarse,
}

/// No-grad render of a generated texture.
#[allow(clippy::too_many_arguments)]
pub fn render_view(
    params: &ParamStore,
    cfg: &ModelConfig,
    ctx: &MeshContext,
    latent: &TextureLatent,
    camera: &Camera,
    noise: Noise,
    mode: ShadeMode,
    background: [f32; 3],
) -> Result<RenderedView> {
    let frag = rasterize(ctx.finest(), camera)?;
    let mut tape = Tape::new();
    let mut b = Binding::new(params, Trainable::Nothing);
    let w = tape.constant(vec![1, cfg.w_dim], latent.w.clone())?;
    let out = synthesize(&mut tape, &mut b, cfg, ctx, w, noise)?;
    let img = match mode {
        ShadeMode::Field => shade(&mut tape, &mut b, ctx, out.features, &[&frag], background)?,
        ShadeMode::Coarse => shade_coarse(&mut tape, out.coarse_rgb, &[&frag], background)?,
    };
    let rgb = Image {
        width: frag.width,
        height: frag.height,
        channels: 3,
        data: tape.value(img).to_vec(),
    };
    Ok(RenderedView {
        rgb,
        mask: Mask::from_frag(&frag),
        noc: render_noc(&frag, ctx.finest(), &ctx.noc_frame),
        frag,
    })
}
