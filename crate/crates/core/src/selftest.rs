//! Finite-difference and oracle checks runnable from the command line.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::context::MeshContext;
use crate::diff::gradcheck::{coordinate_check, primitive_cases, project, Case, ScalarFn};
use crate::diff::{Binding, ParamStore, Tape, Tensor, Trainable};
use crate::error::Result;
use crate::gantrain::{discriminator, g_loss, gan_losses, init_discriminator, r1_penalty, DiscConfig};
use crate::generator::{synthesize, ModelConfig, Noise};
use crate::geometry::{shapes, subdivide};
use crate::model::Model;
use crate::perceptual::{global_style_loss, patch_style_loss, style_target, FeatureExtractor, PatchPair};
use crate::perceptual::match_patch;
use crate::render::{rasterize, shade, shade_coarse, Camera, FragBuffer, Image, Mask, DEFAULT_BACKGROUND};

pub const PRIMITIVE_TOL: f64 = 1e-3;
pub const END_TO_END_TOL: f64 = 1e-2;
/// Central-difference step. The numeric side is replayed in `f64`.
pub const FD_STEP: f32 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub suite: &'static str,
    pub name: String,
    pub instances: usize,
    /// Largest error seen (relative for gradient checks).
    pub worst: f64,
    pub tolerance: f64,
    /// Gradient coordinates dropped because every stencil crossed a kink.
    pub skipped: usize,
    pub passed: bool,
}

impl CheckReport {
    fn new(suite: &'static str, name: impl Into<String>, instances: usize, worst: f64, tolerance: f64) -> Self {
        Self {
            suite,
            name: name.into(),
            instances,
            worst,
            tolerance,
            skipped: 0,
            passed: worst <= tolerance,
        }
    }

    fn with_skipped(mut self, skipped: usize) -> Self {
        self.skipped = skipped;
        self
    }
}

/// Worst normwise error over `cases`, plus the number of skipped coordinates.
fn worst_rel(cases: impl Iterator<Item = Case>, max_coords: usize, rng: &mut ChaCha8Rng) -> Result<(usize, f64, usize)> {
    let (mut n, mut worst, mut skipped) = (0, 0.0f64, 0);
    for case in cases {
        let c = coordinate_check(&case.inputs, &case.f, FD_STEP, max_coords, rng)?;
        worst = worst.max(c.rel_err(1e-6));
        skipped += c.skipped;
        n += 1;
    }
    Ok((n, worst, skipped))
}

/// Central differences on every tape primitive.
pub fn primitive_suite(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (name, make) in primitive_cases() {
        let cases: Vec<Case> = (0..instances).map(|_| make(&mut rng)).collect();
        let (n, worst, skipped) = worst_rel(cases.into_iter(), 64, &mut rng)?;
        out.push(CheckReport::new("primitive", name, n, worst, PRIMITIVE_TOL).with_skipped(skipped));
    }
    Ok(out)
}

/// Small mesh, model and views shared by the end-to-end probes.
pub struct ProbeScene {
    pub ctx: Rc<MeshContext>,
    pub model: Rc<Model>,
    pub frags: Rc<Vec<FragBuffer>>,
    pub fx: Rc<FeatureExtractor>,
}

impl ProbeScene {
    pub fn new(seed: u64) -> Result<Self> {
        let ctx = MeshContext::new(subdivide(&shapes::unit_cube(), 3)?)?;
        let model = Model::init(ModelConfig {
            levels: 3,
            enc_channels: vec![8, 8, 8],
            dec_channels: vec![8, 8, 8],
            z_dim: 8,
            w_dim: 8,
            mapping_layers: 2,
            aux_dim: 4,
            field_hidden: 16,
            seed,
        })?;
        let frags = [(0.6, 0.4), (2.5, 0.2)]
            .iter()
            .map(|&(azimuth, elevation)| {
                rasterize(
                    ctx.finest(),
                    &Camera {
                        azimuth,
                        elevation,
                        image_size: 16,
                        ..Camera::default()
                    },
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            ctx: Rc::new(ctx),
            model: Rc::new(model),
            frags: Rc::new(frags),
            fx: Rc::new(FeatureExtractor::tinyvgg()),
        })
    }
}

fn random_image(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::zeros(size, size, 3);
    img.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
    img
}

/// Random end-to-end probe instances, each `(name, case)`.
pub fn end_to_end_cases(scene: &ProbeScene, rng: &mut ChaCha8Rng) -> Result<Vec<(&'static str, Case)>> {
    let w_dim = scene.model.cfg.w_dim;
    let w = Tensor::randn(vec![1, w_dim], 1.0, rng);
    let mut out: Vec<(&'static str, Case)> = Vec::new();

    // field render of both views, projected
    {
        let (ctx, model, frags) = (scene.ctx.clone(), scene.model.clone(), scene.frags.clone());
        let weights = Tensor::randn(vec![frags.len(), 3, 16, 16], 1.0, rng);
        let f: ScalarFn = Box::new(move |t, v| {
            let mut b = Binding::new(&model.params, Trainable::Nothing);
            let g = synthesize(t, &mut b, &model.cfg, &ctx, v[0], Noise::Seeded(3))?;
            let fr: Vec<&FragBuffer> = frags.iter().collect();
            let img = shade(t, &mut b, &ctx, g.features, &fr, DEFAULT_BACKGROUND)?;
            project(t, img, &weights)
        });
        out.push(("render_pixels", Case { inputs: vec![w.clone()], f }));
    }

    // global style loss against a random target
    {
        let (ctx, model, frags, fx) = (scene.ctx.clone(), scene.model.clone(), scene.frags.clone(), scene.fx.clone());
        let mask = Mask::from_frag(&frags[0]);
        let target = style_target(&fx, &random_image(16, rng), &mask, 2)?;
        let f: ScalarFn = Box::new(move |t, v| {
            let mut b = Binding::new(&model.params, Trainable::Nothing);
            let g = synthesize(t, &mut b, &model.cfg, &ctx, v[0], Noise::Off)?;
            let img = shade(t, &mut b, &ctx, g.features, &[&frags[0]], DEFAULT_BACKGROUND)?;
            global_style_loss(t, &fx, img, &mask, &target)
        });
        out.push(("global_style", Case { inputs: vec![w.clone()], f }));
    }

    // patch style loss with respect to the refinement tensors
    {
        let (ctx, model, frags, fx) = (scene.ctx.clone(), scene.model.clone(), scene.frags.clone(), scene.fx.clone());
        let names = model.cfg.refinement_tensors();
        let inputs: Vec<Tensor> = names.iter().map(|n| model.params.get(n).cloned()).collect::<Result<_>>()?;
        let query = random_image(16, rng);
        let mask = Mask::from_frag(&frags[0]);
        let pair = PatchPair {
            query_origin: (rng.random_range(0..=8), rng.random_range(0..=8)),
            render_origin: (rng.random_range(0..=8), rng.random_range(0..=8)),
            size: 8,
        };
        let wc = w.clone();
        let f: ScalarFn = Box::new(move |t, v| {
            let mut b = Binding::new(&model.params, Trainable::Nothing);
            for (n, &var) in names.iter().zip(v) {
                b.bind(n.clone(), var);
            }
            let wv = t.leaf(&wc);
            let g = synthesize(t, &mut b, &model.cfg, &ctx, wv, Noise::Off)?;
            let img = shade(t, &mut b, &ctx, g.features, &[&frags[0]], DEFAULT_BACKGROUND)?;
            let l = patch_style_loss(t, &fx, &query, &mask, img, &mask, &[pair], 1)?;
            Ok(l.expect("one pair"))
        });
        out.push(("patch_style_refinement", Case { inputs, f }));
    }

    // proxy render through a discriminator into the generator loss
    {
        let (ctx, model, frags) = (scene.ctx.clone(), scene.model.clone(), scene.frags.clone());
        let dc = DiscConfig {
            channels: vec![4, 4],
            image_size: 16,
        };
        let disc = init_discriminator(&dc, "disc.proxy", rng)?;
        let f: ScalarFn = Box::new(move |t, v| {
            let mut b = Binding::new(&model.params, Trainable::Nothing);
            let g = synthesize(t, &mut b, &model.cfg, &ctx, v[0], Noise::Off)?;
            let fr: Vec<&FragBuffer> = frags.iter().collect();
            let img = shade_coarse(t, g.coarse_rgb, &fr, DEFAULT_BACKGROUND)?;
            let mut db = Binding::new(&disc, Trainable::Nothing);
            let (logits, _) = discriminator(t, &mut db, &dc, "disc.proxy", img)?;
            Ok(g_loss(t, logits))
        });
        out.push(("proxy_adversarial", Case { inputs: vec![w.clone()], f }));
    }

    // R1 penalty with respect to the discriminator weights
    {
        let dc = DiscConfig {
            channels: vec![2, 3],
            image_size: 4,
        };
        let disc = init_discriminator(&dc, "d", rng)?;
        let names: Vec<String> = disc.names().map(String::from).collect();
        let inputs: Vec<Tensor> = names.iter().map(|n| disc.get(n).cloned()).collect::<Result<_>>()?;
        let real = Tensor::randn(vec![2, 3, 4, 4], 1.0, rng);
        let store = ParamStore::new();
        let f: ScalarFn = Box::new(move |t, v| {
            let mut b = Binding::new(&store, Trainable::Nothing);
            for (n, &var) in names.iter().zip(v) {
                b.bind(n.clone(), var);
            }
            let x = t.leaf(&real);
            r1_penalty(t, &mut b, &dc, "d", x)
        });
        out.push(("r1_penalty", Case { inputs, f }));
    }
    Ok(out)
}

/// Render-to-loss chains checked end to end.
pub fn end_to_end_suite(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let scene = ProbeScene::new(seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_probe: Vec<(&'static str, Vec<Case>)> = Vec::new();
    for _ in 0..instances {
        for (i, (name, case)) in end_to_end_cases(&scene, &mut rng)?.into_iter().enumerate() {
            if per_probe.len() <= i {
                per_probe.push((name, Vec::new()));
            }
            per_probe[i].1.push(case);
        }
    }
    per_probe
        .into_iter()
        .map(|(name, cases)| {
            let (n, worst, skipped) = worst_rel(cases.into_iter(), 16, &mut rng)?;
            Ok(CheckReport::new("end_to_end", name, n, worst, END_TO_END_TOL).with_skipped(skipped))
        })
        .collect()
}

/// Scanline-order exhaustive nearest foreground pixel, in `f64`.
fn exhaustive_match(i_noc: &Image, x_noc: &Image, x_mask: &Mask, (x, y): (usize, usize)) -> Option<(usize, usize)> {
    let q: Vec<f64> = i_noc.pixel(x, y).iter().map(|&v| v as f64).collect();
    let mut best: Option<(f64, usize, usize)> = None;
    for py in 0..x_mask.height {
        for px in 0..x_mask.width {
            if !x_mask.get(px, py) {
                continue;
            }
            let p = x_noc.pixel(px, py);
            let d: f64 = q.iter().zip(&p).map(|(a, &b)| (a - b as f64).powi(2)).sum();
            if best.is_none_or(|(bd, _, _)| d < bd) {
                best = Some((d, px, py));
            }
        }
    }
    best.map(|(_, px, py)| (px, py))
}

/// Closed-form and brute-force oracles for the loss and matching code.
pub fn oracle_suite(seed: u64) -> Result<Vec<CheckReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let ln2 = std::f64::consts::LN_2;
    let (d, g) = gan_losses(&[0.0; 8], &[0.0; 8]);
    let err = (d as f64 - 2.0 * ln2).abs().max((g as f64 - ln2).abs());
    out.push(CheckReport::new("oracle", "softplus_zero_logits", 1, err, 1e-6));

    let dc = DiscConfig {
        channels: vec![],
        image_size: 4,
    };
    let disc = init_discriminator(&dc, "d", &mut rng)?;
    let mut tape = Tape::new();
    let mut b = Binding::new(&disc, Trainable::Nothing);
    let x = tape.leaf(&Tensor::randn(vec![3, 3, 4, 4], 1.0, &mut rng));
    let r1 = r1_penalty(&mut tape, &mut b, &dc, "d", x)?;
    // effective weight of the linear head is stored / sqrt(fan_in)
    let w = disc.get("d.out.weight")?.data();
    let norm2: f64 = w.iter().map(|&v| (v as f64).powi(2) / w.len() as f64).sum();
    out.push(CheckReport::new("oracle", "r1_linear_discriminator", 1, (tape.scalar(r1) as f64 - norm2).abs(), 1e-5));

    let trials = 50;
    let mut mismatches = 0;
    for _ in 0..trials {
        let i_noc = {
            let mut im = Image::zeros(32, 32, 3);
            im.data.iter_mut().for_each(|v| *v = rng.random());
            im
        };
        let x_noc = {
            let mut im = Image::zeros(32, 32, 3);
            im.data.iter_mut().for_each(|v| *v = rng.random());
            im
        };
        let x_mask = Mask {
            width: 32,
            height: 32,
            data: (0..32 * 32).map(|_| rng.random_bool(0.6)).collect(),
        };
        let c = (rng.random_range(0..32), rng.random_range(0..32));
        if Some(match_patch(&i_noc, &x_noc, &x_mask, c)?) != exhaustive_match(&i_noc, &x_noc, &x_mask, c) {
            mismatches += 1;
        }
    }
    out.push(CheckReport::new("oracle", "match_patch_exhaustive", trials, mismatches as f64, 0.0));
    Ok(out)
}

/// All suites; `instances` per gradient check.
pub fn run_all(instances: usize, seed: u64) -> Result<Vec<CheckReport>> {
    let mut out = primitive_suite(instances, seed)?;
    out.extend(end_to_end_suite(instances, seed)?);
    out.extend(oracle_suite(seed)?);
    Ok(out)
}

/// One line per check.
pub fn format_table(reports: &[CheckReport]) -> String {
    let mut s = format!(
        "{:<11} {:<26} {:>6} {:>11} {:>9} {:>8}  result\n",
        "suite", "check", "n", "worst", "tol", "skipped"
    );
    for r in reports {
        s += &format!(
            "{:<11} {:<26} {:>6} {:>11.3e} {:>9.1e} {:>8}  {}\n",
            r.suite,
            r.name,
            r.instances,
            r.worst,
            r.tolerance,
            r.skipped,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    s
}
