use rand::Rng;

use crate::diff::{Tape, Var};
use crate::error::{Error, Result};
use crate::render::{Image, Mask};

use super::extractor::FeatureExtractor;
use super::style::{crop, crop_image, global_style_loss, style_target, StyleLossSpec};

/// A query patch centre and the side length that fit the object.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct QueryPatch {
    pub x: usize,
    pub y: usize,
    pub size: usize,
}

impl QueryPatch {
    pub fn origin(&self) -> (usize, usize) {
        (self.x - self.size / 2, self.y - self.size / 2)
    }
}

/// Corresponding windows in the query and the render.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchPair {
    pub query_origin: (usize, usize),
    pub render_origin: (usize, usize),
    pub size: usize,
}

fn valid_centers(mask: &Mask, size: usize) -> Vec<(usize, usize)> {
    let half = size / 2;
    if size > mask.width || size > mask.height {
        return Vec::new();
    }
    let mut out = Vec::new();
    for y in half..=mask.height - (size - half) {
        for x in half..=mask.width - (size - half) {
            if mask.get(x, y) {
                out.push((x, y));
            }
        }
    }
    out
}

/// Uniform foreground centre whose `size x size` window lies inside the
/// image. Shrinks the size in steps of 4 down to `min_size`; `None` when even
/// that does not fit.
pub fn sample_query_patch<R: Rng + ?Sized>(
    mask: &Mask,
    size: usize,
    min_size: usize,
    rng: &mut R,
) -> Option<QueryPatch> {
    let mut s = size;
    loop {
        let c = valid_centers(mask, s);
        if !c.is_empty() {
            let (x, y) = c[rng.random_range(0..c.len())];
            return Some(QueryPatch { x, y, size: s });
        }
        if s < min_size + 4 {
            return None;
        }
        s -= 4;
    }
}

/// Foreground pixel of `x_noc` nearest (squared L2) to `i_noc` at `(x, y)`;
/// ties go to the first pixel in scanline order.
pub fn match_patch(i_noc: &Image, x_noc: &Image, x_mask: &Mask, (x, y): (usize, usize)) -> Result<(usize, usize)> {
    if x < i_noc.width && y < i_noc.height && x_noc.n_pixels() == x_mask.data.len() {
        let q = i_noc.pixel(x, y);
        let plane = x_noc.n_pixels();
        let mut best: Option<(f32, usize)> = None;
        for (i, _) in x_mask.data.iter().enumerate().filter(|(_, &m)| m) {
            let mut d = 0.0f32;
            for (c, qc) in q.iter().enumerate() {
                let diff = x_noc.data[c * plane + i] - qc;
                d += diff * diff;
            }
            if best.is_none_or(|(bd, _)| d < bd) {
                best = Some((d, i));
            }
        }
        let (_, i) = best.ok_or(Error::EmptyForeground("render"))?;
        Ok((i % x_mask.width, i / x_mask.width))
    } else {
        Err(Error::InvalidArgument(format!(
            "query pixel ({}, {}) outside {}x{} or render noc/mask size mismatch",
            x, y, i_noc.width, i_noc.height
        )))
    }
}

/// Top-left corner of a `size` window centred at `c`, clamped inside `len`.
pub fn clamp_window(c: usize, size: usize, len: usize) -> usize {
    c.saturating_sub(size / 2).min(len.saturating_sub(size))
}

/// Sample `n_patches` query patches and match each into the render.
pub fn patch_pairs<R: Rng + ?Sized>(
    i_mask: &Mask,
    i_noc: &Image,
    x_noc: &Image,
    x_mask: &Mask,
    spec: &StyleLossSpec,
    rng: &mut R,
) -> Result<Vec<PatchPair>> {
    let mut out = Vec::with_capacity(spec.n_patches);
    for _ in 0..spec.n_patches {
        let Some(q) = sample_query_patch(i_mask, spec.patch_size, spec.min_patch_size, rng) else {
            break;
        };
        if q.size > x_mask.width || q.size > x_mask.height {
            continue;
        }
        let (mx, my) = match_patch(i_noc, x_noc, x_mask, (q.x, q.y))?;
        out.push(PatchPair {
            query_origin: q.origin(),
            render_origin: (clamp_window(mx, q.size, x_mask.width), clamp_window(my, q.size, x_mask.height)),
            size: q.size,
        });
    }
    Ok(out)
}

/// Sum over patch pairs of the multi-level style loss between the query
/// crop and the render crop. `None` when there are no pairs.
pub fn patch_style_loss(
    tape: &mut Tape,
    fx: &FeatureExtractor,
    query: &Image,
    query_mask: &Mask,
    x: Var,
    x_mask: &Mask,
    pairs: &[PatchPair],
    levels: usize,
) -> Result<Option<Var>> {
    let mut total = None;
    for p in pairs {
        let (qx, qy) = p.query_origin;
        let target = style_target(
            fx,
            &crop_image(query, qx, qy, p.size),
            &query_mask.crop(qx, qy, p.size),
            levels,
        )?;
        let (rx, ry) = p.render_origin;
        let xc = crop(tape, x, rx, ry, p.size)?;
        let l = global_style_loss(tape, fx, xc, &x_mask.crop(rx, ry, p.size), &target)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    Ok(total)
}
