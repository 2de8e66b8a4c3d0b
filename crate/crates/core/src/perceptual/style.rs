use serde::{Deserialize, Serialize};

use crate::diff::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};
use crate::render::{Image, Mask};

use super::extractor::FeatureExtractor;

/// Weights and sizes of the combined global + patch style objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StyleLossSpec {
    pub w_glob: f32,
    pub w_patch: f32,
    /// Resolution levels: full, half, quarter.
    pub n_levels: usize,
    pub n_patches: usize,
    pub patch_size: usize,
    /// Smallest patch tried when the object is too small for `patch_size`.
    pub min_patch_size: usize,
}

impl Default for StyleLossSpec {
    fn default() -> Self {
        Self {
            w_glob: 1.0,
            w_patch: 1.0,
            n_levels: 3,
            n_patches: 2,
            patch_size: 64,
            min_patch_size: 16,
        }
    }
}

impl Mask {
    /// Nearest sampling at `factor`-times coarser resolution (floor sizes,
    /// matching repeated 2x pooling).
    pub fn downsample(&self, factor: usize) -> Mask {
        let (w, h) = (self.width / factor, self.height / factor);
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                data.push(self.get(x * factor + factor / 2, y * factor + factor / 2));
            }
        }
        Mask {
            width: w,
            height: h,
            data,
        }
    }

    pub fn crop(&self, x0: usize, y0: usize, size: usize) -> Mask {
        let mut data = Vec::with_capacity(size * size);
        for y in y0..y0 + size {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + size]);
        }
        Mask {
            width: size,
            height: size,
            data,
        }
    }
}

/// Channel Gram matrices of the masked tap activations of `x: [1, 3, H, W]`.
/// Each is normalized by `channels x valid sites`.
pub fn style_grams(tape: &mut Tape, fx: &FeatureExtractor, x: Var, mask: &Mask) -> Result<Vec<Var>> {
    let s = tape.shape(x).to_vec();
    if s.len() != 4 || s[0] != 1 || s[2] != mask.height || s[3] != mask.width {
        return Err(shape_err("style_grams", format!("image {:?} vs mask {}x{}", s, mask.height, mask.width)));
    }
    let taps = fx.forward(tape, x)?;
    let mut grams = Vec::with_capacity(taps.len());
    for t in taps {
        let ts = tape.shape(t).to_vec();
        let (c, h, w) = (ts[1], ts[2], ts[3]);
        let factor = s[2] / h.max(1);
        let m = mask.downsample(factor);
        if m.width != w || m.height != h {
            return Err(shape_err("style_grams", format!("tap {}x{} vs mask {}x{}", h, w, m.height, m.width)));
        }
        let valid = m.count().max(1);
        let flat = tape.reshape(t, vec![c, h * w])?;
        let mv = tape.constant(vec![h * w], m.as_f32())?;
        let masked = tape.scale_axis(flat, mv, 1)?;
        grams.push(tape.gram(masked, (c * valid) as f32)?);
    }
    Ok(grams)
}

/// `sum_taps ||G(a) - G(b)||_F^2`.
pub fn style_loss(tape: &mut Tape, a: &[Var], b: &[Var]) -> Result<Var> {
    if a.len() != b.len() || a.is_empty() {
        return Err(shape_err("style_loss", format!("{} vs {} taps", a.len(), b.len())));
    }
    let mut total = None;
    for (&ga, &gb) in a.iter().zip(b) {
        let d = tape.sub(ga, gb)?;
        let sq = tape.square(d);
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(t) => tape.add(t, s)?,
        });
    }
    Ok(total.expect("non-empty"))
}

/// `levels` images and masks, each 2x area-downsampled from the previous.
pub fn pyramid(tape: &mut Tape, x: Var, mask: &Mask, levels: usize) -> Result<Vec<(Var, Mask)>> {
    let mut out = vec![(x, mask.clone())];
    for l in 1..levels {
        let prev = out[l - 1].0;
        out.push((tape.avgpool2x(prev)?, mask.downsample(1 << l)));
    }
    Ok(out)
}

/// Gram matrices of a constant image at each pyramid level.
pub type StyleTarget = Vec<Vec<Tensor>>;

pub fn image_to_var(tape: &mut Tape, img: &Image) -> Result<Var> {
    if img.channels != 3 {
        return Err(Error::InvalidArgument(format!("expected rgb image, got {} channels", img.channels)));
    }
    tape.constant(vec![1, 3, img.height, img.width], img.data.clone())
}

/// Per-level Gram targets of `img`.
pub fn style_target(fx: &FeatureExtractor, img: &Image, mask: &Mask, levels: usize) -> Result<StyleTarget> {
    let mut tape = Tape::new();
    let x = image_to_var(&mut tape, img)?;
    let mut out = Vec::with_capacity(levels);
    for (v, m) in pyramid(&mut tape, x, mask, levels)? {
        let g = style_grams(&mut tape, fx, v, &m)?;
        out.push(g.iter().map(|&gv| tape.to_tensor(gv)).collect());
    }
    Ok(out)
}

/// Sum over pyramid levels of the style loss between `x` and a fixed target.
pub fn global_style_loss(
    tape: &mut Tape,
    fx: &FeatureExtractor,
    x: Var,
    mask: &Mask,
    target: &StyleTarget,
) -> Result<Var> {
    let levels = pyramid(tape, x, mask, target.len())?;
    let mut total = None;
    for ((v, m), tg) in levels.into_iter().zip(target) {
        let gx = style_grams(tape, fx, v, &m)?;
        let gt: Vec<Var> = tg.iter().map(|t| tape.leaf(t)).collect();
        let l = style_loss(tape, &gx, &gt)?;
        total = Some(match total {
            None => l,
            Some(t) => tape.add(t, l)?,
        });
    }
    total.ok_or_else(|| Error::InvalidArgument("style loss needs >= 1 level".into()))
}

/// Tape-free global style loss between two images.
pub fn global_style_loss_images(
    fx: &FeatureExtractor,
    query: &Image,
    query_mask: &Mask,
    render: &Image,
    render_mask: &Mask,
    levels: usize,
) -> Result<f32> {
    let target = style_target(fx, query, query_mask, levels)?;
    let mut tape = Tape::new();
    let x = image_to_var(&mut tape, render)?;
    let l = global_style_loss(&mut tape, fx, x, render_mask, &target)?;
    Ok(tape.scalar(l))
}

/// `[1, 3, size, size]` window of `x: [1, 3, H, W]` at `(x0, y0)`.
pub fn crop(tape: &mut Tape, x: Var, x0: usize, y0: usize, size: usize) -> Result<Var> {
    let c = tape.slice(x, 3, x0, size)?;
    tape.slice(c, 2, y0, size)
}

pub fn crop_image(img: &Image, x0: usize, y0: usize, size: usize) -> Image {
    let mut out = Image::zeros(size, size, img.channels);
    for c in 0..img.channels {
        for y in 0..size {
            let src = c * img.n_pixels() + (y0 + y) * img.width + x0;
            let dst = c * size * size + y * size;
            out.data[dst..dst + size].copy_from_slice(&img.data[src..src + size]);
        }
    }
    out
}
