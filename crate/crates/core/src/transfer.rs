//! Single-image texture transfer.
//!
//! Phase 1 optimizes the mapped latent `w` against the combined global and
//! patch style objective. Phase 2 freezes `w` and refines the conv weights of
//! the two finest synthesis blocks against the patch term alone. The render
//! pose, fragments and NOCs are fixed for the whole run.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::context::MeshContext;
use crate::diff::{AdamConfig, AdamState, Binding, ParamStore, Tape, Trainable, Var};
use crate::error::{Error, Result};
use crate::generator::{sample_z, map_latent, synthesize, Noise, TextureLatent};
use crate::model::Model;
use crate::perceptual::{global_style_loss, patch_pairs, patch_style_loss, style_target, FeatureExtractor, StyleLossSpec};
use crate::render::{rasterize, render_noc, render_view, shade, Camera, Image, Mask, PoseBins, RenderedView, ShadeMode};

/// Name under which the latent appears in gradient-support reports.
pub const LATENT_NAME: &str = "latent.w";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoseMode {
    /// Use the query's ground-truth camera.
    Exact,
    /// Snap the ground-truth camera to the nearest bin centre.
    Bins,
    /// Use the given bin centre.
    Provided { azimuth_bin: usize, elevation_bin: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub phase1_iters: usize,
    pub phase2_iters: usize,
    pub lr: f32,
    pub pose_mode: PoseMode,
    pub pose_bins: PoseBins,
    pub spec: StyleLossSpec,
    pub seed: u64,
    /// Mapped latents averaged for the starting `w`.
    pub init_samples: usize,
    /// Seed of the per-face noise used for every render.
    pub noise_seed: u64,
    pub background: [f32; 3],
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            phase1_iters: 100,
            phase2_iters: 300,
            lr: 1e-2,
            pose_mode: PoseMode::Exact,
            pose_bins: PoseBins::default(),
            spec: StyleLossSpec::default(),
            seed: 0,
            init_samples: 16,
            noise_seed: 0,
            background: crate::render::DEFAULT_BACKGROUND,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument(format!("lr {} must be > 0", self.lr)));
        }
        if self.init_samples == 0 {
            return Err(Error::InvalidArgument("init_samples must be >= 1".into()));
        }
        Ok(())
    }
}

/// The image to match, with its mask, NOCs and (for synthetic queries) the
/// camera it was rendered from.
#[derive(Clone, Debug)]
pub struct TransferQuery {
    pub rgb: Image,
    pub mask: Mask,
    pub noc: Option<Image>,
    pub camera: Option<Camera>,
}

/// Render camera for the chosen pose mode. `base` supplies distance, fov and
/// image size when the ground truth is absent.
pub fn estimate_pose(mode: PoseMode, truth: Option<&Camera>, bins: &PoseBins, base: &Camera) -> Result<Camera> {
    match mode {
        PoseMode::Exact => truth
            .copied()
            .ok_or_else(|| Error::InvalidArgument("exact pose mode needs the query camera".into())),
        PoseMode::Bins => {
            let t = truth.ok_or_else(|| Error::InvalidArgument("bins pose mode needs the query camera".into()))?;
            let width = std::f64::consts::TAU / bins.azimuth_bins as f64;
            let az = t.azimuth.rem_euclid(std::f64::consts::TAU);
            let ab = ((az / width).floor() as usize).min(bins.azimuth_bins - 1);
            let (lo, hi) = bins.elevation_range;
            let ew = (hi - lo) / bins.elevation_bins as f64;
            let eb = ((t.elevation.to_degrees() - lo) / ew).floor().clamp(0.0, bins.elevation_bins as f64 - 1.0) as usize;
            bins.camera(ab, eb, t)
        }
        PoseMode::Provided {
            azimuth_bin,
            elevation_bin,
        } => bins.camera(azimuth_bin, elevation_bin, truth.unwrap_or(base)),
    }
}

/// Mean of `n` mapped prior samples.
pub fn mean_latent(model: &Model, n: usize, seed: u64) -> Result<TextureLatent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = vec![0.0f32; model.cfg.w_dim];
    for _ in 0..n {
        let z = sample_z(model.cfg.z_dim, rand::Rng::random(&mut rng));
        for (a, v) in acc.iter_mut().zip(map_latent(&model.params, &model.cfg, &z)?) {
            *a += v / n as f32;
        }
    }
    Ok(TextureLatent { z: None, w: acc })
}

#[derive(Clone, Debug)]
pub struct TransferResult {
    pub latent: TextureLatent,
    /// Only the tensors phase 2 was allowed to change.
    pub refined: ParamStore,
    pub loss_trace: Vec<f32>,
    pub final_render: RenderedView,
    pub camera: Camera,
    /// Names that received a gradient during each phase.
    pub phase1_support: BTreeSet<String>,
    pub phase2_support: BTreeSet<String>,
}

impl TransferResult {
    /// `model` with the refined tensors swapped in.
    pub fn apply(&self, model: &Model) -> Model {
        let mut m = model.clone();
        m.params.merge(self.refined.clone());
        m
    }
}

/// Root-mean-square difference over masked pixels and all channels.
pub fn masked_rmse(a: &Image, b: &Image, mask: &Mask) -> Result<f32> {
    if a.shape() != b.shape() || a.n_pixels() != mask.data.len() {
        return Err(Error::InvalidArgument("rmse inputs differ in size".into()));
    }
    let plane = a.n_pixels();
    let (mut s, mut n) = (0.0f64, 0usize);
    for (i, _) in mask.data.iter().enumerate().filter(|(_, &m)| m) {
        for c in 0..a.channels {
            let d = (a.data[c * plane + i] - b.data[c * plane + i]) as f64;
            s += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyForeground("rmse mask"));
    }
    Ok((s / n as f64).sqrt() as f32)
}

struct Scene<'a> {
    ctx: &'a MeshContext,
    fx: &'a FeatureExtractor,
    query: &'a TransferQuery,
    frag: crate::render::FragBuffer,
    x_mask: Mask,
    x_noc: Image,
    target: crate::perceptual::StyleTarget,
    noise: Noise,
    background: [f32; 3],
}

impl Scene<'_> {
    fn render(&self, tape: &mut Tape, b: &mut Binding, model: &Model, w: Var) -> Result<Var> {
        let out = synthesize(tape, b, &model.cfg, self.ctx, w, self.noise)?;
        shade(tape, b, self.ctx, out.features, &[&self.frag], self.background)
    }

    /// `w_glob L_glob + w_patch L_patch` (either term optional).
    fn objective(
        &self,
        tape: &mut Tape,
        x: Var,
        spec: &StyleLossSpec,
        global: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Var>> {
        let mut total = None;
        if global && spec.w_glob != 0.0 {
            let g = global_style_loss(tape, self.fx, x, &self.x_mask, &self.target)?;
            total = Some(tape.scale(g, spec.w_glob));
        }
        if spec.w_patch != 0.0 {
            let i_noc = self
                .query
                .noc
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("patch loss needs the query NOC image".into()))?;
            let pairs = patch_pairs(&self.query.mask, i_noc, &self.x_noc, &self.x_mask, spec, rng)?;
            if let Some(p) = patch_style_loss(
                tape,
                self.fx,
                &self.query.rgb,
                &self.query.mask,
                x,
                &self.x_mask,
                &pairs,
                spec.n_levels,
            )? {
                let p = tape.scale(p, spec.w_patch);
                total = Some(match total {
                    None => p,
                    Some(t) => tape.add(t, p)?,
                });
            }
        }
        Ok(total)
    }
}

/// Run both phases from the mean-latent initialization.
pub fn transfer(
    query: &TransferQuery,
    ctx: &MeshContext,
    model: &Model,
    fx: &FeatureExtractor,
    cfg: &TransferConfig,
) -> Result<TransferResult> {
    let init = mean_latent(model, cfg.init_samples, cfg.seed)?;
    transfer_from(query, ctx, model, fx, cfg, init)
}

/// Run both phases starting at `init`.
pub fn transfer_from(
    query: &TransferQuery,
    ctx: &MeshContext,
    model: &Model,
    fx: &FeatureExtractor,
    cfg: &TransferConfig,
    init: TextureLatent,
) -> Result<TransferResult> {
    cfg.validate()?;
    if query.mask.count() == 0 {
        return Err(Error::EmptyForeground("query mask"));
    }
    if query.rgb.width != query.rgb.height || query.mask.width != query.rgb.width || query.mask.height != query.rgb.height {
        return Err(Error::InvalidArgument("query image and mask must be square and equally sized".into()));
    }
    if init.w.len() != model.cfg.w_dim {
        return Err(Error::InvalidArgument("initial latent has the wrong size".into()));
    }
    let base = Camera {
        image_size: query.rgb.width,
        ..Camera::default()
    };
    let mut camera = estimate_pose(cfg.pose_mode, query.camera.as_ref(), &cfg.pose_bins, &base)?;
    camera.image_size = query.rgb.width;

    let frag = rasterize(ctx.finest(), &camera)?;
    let x_mask = Mask::from_frag(&frag);
    if x_mask.count() == 0 {
        return Err(Error::EmptyForeground("render at the estimated pose"));
    }
    let scene = Scene {
        ctx,
        fx,
        query,
        x_noc: render_noc(&frag, ctx.finest(), &ctx.noc_frame),
        x_mask,
        frag,
        target: style_target(fx, &query.rgb, &query.mask, cfg.spec.n_levels)?,
        noise: Noise::Seeded(cfg.noise_seed),
        background: cfg.background,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut trace = Vec::with_capacity(cfg.phase1_iters + cfg.phase2_iters);
    let mut w = init.w;
    let mut phase1_support = BTreeSet::new();
    let mut phase2_support = BTreeSet::new();

    let mut opt = AdamState::new();
    for step in 0..cfg.phase1_iters {
        let mut tape = Tape::new();
        let mut b = Binding::new(&model.params, Trainable::Nothing);
        let wv = tape.param(vec![1, w.len()], w.clone())?;
        let x = scene.render(&mut tape, &mut b, model, wv)?;
        let Some(loss) = scene.objective(&mut tape, x, &cfg.spec, true, &mut rng)? else {
            trace.push(0.0);
            continue;
        };
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "transfer phase 1 loss".into(),
            });
        }
        trace.push(value);
        let grads = tape.backward(loss)?;
        for (name, _) in b.grads(&grads) {
            phase1_support.insert(name);
        }
        if let Some(g) = grads.get(wv) {
            phase1_support.insert(LATENT_NAME.to_string());
            opt.step(LATENT_NAME, &mut w, g, &adam)?;
        }
    }

    let refine = model.cfg.refinement_tensors();
    let mut params = model.params.clone();
    let mut opt = AdamState::new();
    let spec2 = StyleLossSpec {
        w_glob: 0.0,
        ..cfg.spec.clone()
    };
    for step in 0..cfg.phase2_iters {
        let mut tape = Tape::new();
        let current = params.clone();
        let mut b = Binding::new(&current, Trainable::names(refine.iter().cloned()));
        let wv = tape.constant(vec![1, w.len()], w.clone())?;
        let x = scene.render(&mut tape, &mut b, model, wv)?;
        let Some(loss) = scene.objective(&mut tape, x, &spec2, false, &mut rng)? else {
            trace.push(0.0);
            continue;
        };
        let value = tape.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite {
                step: cfg.phase1_iters + step,
                detail: "transfer phase 2 loss".into(),
            });
        }
        trace.push(value);
        let grads = tape.backward(loss)?;
        let g = b.grads(&grads);
        phase2_support.extend(g.keys().cloned());
        opt.step_store(&mut params, &g, |_| adam)?;
    }

    let latent = TextureLatent { z: None, w };
    let mut refined = ParamStore::new();
    for name in &refine {
        refined.insert(name.clone(), params.get(name)?.clone());
    }
    let final_model = Model {
        cfg: model.cfg.clone(),
        params,
    };
    let final_render = render_view(
        &final_model.params,
        &final_model.cfg,
        ctx,
        &latent,
        &camera,
        scene.noise,
        ShadeMode::Field,
        cfg.background,
    )?;
    Ok(TransferResult {
        latent,
        refined,
        loss_trace: trace,
        final_render,
        camera,
        phase1_support,
        phase2_support,
    })
}
