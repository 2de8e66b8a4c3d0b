use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{random_camera, random_shape};
use super::disc::{discriminator, init_discriminator, r1_penalty, DiscConfig};
use super::losses::{d_accuracy, d_loss, g_loss, path_gradient, PathLengthState};
use crate::context::MeshContext;
use crate::diff::{AdamConfig, AdamState, Binding, ParamStore, Tape, Tensor, Trainable, Var};
use crate::error::{Error, Result};
use crate::generator::{mapping_network, synthesize, Noise};
use crate::model::Model;
use crate::render::{rasterize, shade, shade_coarse, Camera, FragBuffer, Image, DEFAULT_BACKGROUND};

pub const FIELD_DISC: &str = "disc.field";
pub const PROXY_DISC: &str = "disc.proxy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub encoder_lr: f32,
    pub generator_lr: f32,
    pub field_lr: f32,
    pub disc_lr: f32,
    pub batch: usize,
    pub views_per_shape: usize,
    pub r1_weight: f32,
    pub pl_weight: f32,
    pub r1_interval: usize,
    pub pl_interval: usize,
    pub iters: usize,
    pub seed: u64,
    pub image_size: usize,
    pub disc_channels: Vec<usize>,
    /// Camera elevation range in degrees.
    pub elevation_range: (f64, f64),
    /// Number of random training shapes.
    pub n_shapes: usize,
    /// Step of the finite-difference path-length gradient.
    pub pl_step: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            encoder_lr: 1e-4,
            generator_lr: 12e-4,
            field_lr: 1e-4,
            disc_lr: 14e-4,
            batch: 2,
            views_per_shape: 8,
            r1_weight: 1.0,
            pl_weight: 2.0,
            r1_interval: 16,
            pl_interval: 8,
            iters: 2000,
            seed: 0,
            image_size: 256,
            disc_channels: vec![16, 32, 64],
            elevation_range: (0.0, 60.0),
            n_shapes: 16,
            pl_step: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let lrs = [self.encoder_lr, self.generator_lr, self.field_lr, self.disc_lr];
        if lrs.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::InvalidArgument(format!("learning rates must be finite and >= 0, got {lrs:?}")));
        }
        if self.batch == 0 || self.views_per_shape == 0 || self.n_shapes == 0 {
            return Err(Error::InvalidArgument("batch, views_per_shape and n_shapes must be positive".into()));
        }
        if self.r1_interval == 0 || self.pl_interval == 0 {
            return Err(Error::InvalidArgument("regularization intervals must be positive".into()));
        }
        if self.r1_weight < 0.0 || self.pl_weight < 0.0 || self.pl_step <= 0.0 {
            return Err(Error::InvalidArgument("r1_weight, pl_weight must be >= 0 and pl_step > 0".into()));
        }
        self.disc_config().validate()
    }

    pub fn disc_config(&self) -> DiscConfig {
        DiscConfig {
            channels: self.disc_channels.clone(),
            image_size: self.image_size,
        }
    }

    /// Adam settings for one parameter, chosen by name prefix.
    pub fn adam_for(&self, name: &str) -> AdamConfig {
        let lr = if name.starts_with("enc.") {
            self.encoder_lr
        } else if name.starts_with("psi.") {
            self.field_lr
        } else if name.starts_with("disc.") {
            self.disc_lr
        } else {
            self.generator_lr
        };
        AdamConfig {
            lr,
            beta1: 0.0,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// Scalars logged for one step; regularizers are `None` on steps that skip them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: usize,
    pub d_loss: f32,
    pub g_loss: f32,
    pub r1: Option<f32>,
    pub pl: Option<f32>,
    pub d_acc: f32,
}

impl StepMetrics {
    fn check_finite(&self) -> Result<()> {
        let vals = [Some(self.d_loss), Some(self.g_loss), self.r1, self.pl, Some(self.d_acc)];
        if vals.iter().flatten().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                step: self.step,
                detail: format!("{self:?}"),
            })
        }
    }
}

/// Images stacked as `[n, 3, S, S]`.
pub fn stack_images(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("no images to stack".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.width != w || img.height != h || img.channels != 3 {
            return Err(Error::InvalidArgument(format!(
                "image {}x{}x{} does not match {}x{}x3",
                img.width, img.height, img.channels, w, h
            )));
        }
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Random closed shapes with enough levels for `levels`.
pub fn training_shapes(n: usize, levels: usize, seed: u64) -> Result<Vec<MeshContext>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            MeshContext::new(random_shape(&mut rng, levels)?)
        })
        .collect()
}

struct Example {
    shape: usize,
    z: Vec<f32>,
    noise: Noise,
    frags: Vec<FragBuffer>,
}

/// Adversarial trainer over a fixed set of shapes and a real image corpus.
pub struct Trainer {
    pub cfg: TrainConfig,
    pub model: Model,
    pub disc: ParamStore,
    pub shapes: Vec<MeshContext>,
    pub reals: Vec<Image>,
    pub pl_state: PathLengthState,
    pub step: usize,
    rng: ChaCha8Rng,
    adam: AdamState,
}

impl Trainer {
    pub fn new(cfg: TrainConfig, model: Model, shapes: Vec<MeshContext>, reals: Vec<Image>) -> Result<Self> {
        cfg.validate()?;
        model.cfg.validate()?;
        if shapes.is_empty() || reals.is_empty() {
            return Err(Error::InvalidArgument("trainer needs shapes and real images".into()));
        }
        if let Some(img) = reals
            .iter()
            .find(|i| i.width != cfg.image_size || i.height != cfg.image_size || i.channels != 3)
        {
            return Err(Error::InvalidArgument(format!(
                "real image is {}x{}x{}, training size is {}",
                img.width, img.height, img.channels, cfg.image_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let dc = cfg.disc_config();
        let mut disc = init_discriminator(&dc, FIELD_DISC, &mut rng)?;
        disc.merge(init_discriminator(&dc, PROXY_DISC, &mut rng)?);
        Ok(Self {
            cfg,
            model,
            disc,
            shapes,
            reals,
            pl_state: PathLengthState::default(),
            step: 0,
            rng,
            adam: AdamState::new(),
        })
    }

    fn base_camera(&self) -> Camera {
        Camera {
            image_size: self.cfg.image_size,
            ..Camera::default()
        }
    }

    fn sample_examples(&mut self) -> Result<Vec<Example>> {
        let base = self.base_camera();
        let mut out = Vec::with_capacity(self.cfg.batch);
        for _ in 0..self.cfg.batch {
            let shape = self.rng.random_range(0..self.shapes.len());
            let z = Tensor::randn(vec![self.model.cfg.z_dim], 1.0, &mut self.rng).into_data();
            let noise = Noise::Seeded(self.rng.random());
            let mut frags = Vec::with_capacity(self.cfg.views_per_shape);
            for _ in 0..self.cfg.views_per_shape {
                let cam = random_camera(&mut self.rng, &base, self.cfg.elevation_range);
                frags.push(rasterize(self.shapes[shape].finest(), &cam)?);
            }
            out.push(Example { shape, z, noise, frags });
        }
        Ok(out)
    }

    fn sample_reals(&mut self, n: usize) -> Result<Tensor> {
        let picks: Vec<&Image> = (0..n)
            .map(|_| &self.reals[self.rng.random_range(0..self.reals.len())])
            .collect();
        stack_images(&picks)
    }

    /// Field and proxy renders of `w`, each `[views, 3, S, S]`.
    fn render_pair(
        &self,
        tape: &mut Tape,
        p: &mut Binding,
        ex: &Example,
        w: Var,
    ) -> Result<(Var, Var)> {
        let ctx = &self.shapes[ex.shape];
        let out = synthesize(tape, p, &self.model.cfg, ctx, w, ex.noise)?;
        let frags: Vec<&FragBuffer> = ex.frags.iter().collect();
        let field = shade(tape, p, ctx, out.features, &frags, DEFAULT_BACKGROUND)?;
        let proxy = shade_coarse(tape, out.coarse_rgb, &frags, DEFAULT_BACKGROUND)?;
        Ok((field, proxy))
    }

    /// One discriminator update on given real and fake batches (both
    /// discriminators see the same reals). Returns `(d_loss, r1, accuracy)`.
    pub fn discriminator_step(
        &mut self,
        reals: &Tensor,
        fake_field: &Tensor,
        fake_proxy: &Tensor,
        with_r1: bool,
    ) -> Result<(f32, Option<f32>, f32)> {
        let dc = self.cfg.disc_config();
        let mut tape = Tape::new();
        let mut p = Binding::new(&self.disc, Trainable::All);
        let real = tape.leaf(reals);
        let mut total = None;
        let mut acc = 0.0;
        for (prefix, fake) in [(FIELD_DISC, fake_field), (PROXY_DISC, fake_proxy)] {
            let fake = tape.leaf(fake);
            let (lr, _) = discriminator(&mut tape, &mut p, &dc, prefix, real)?;
            let (lf, _) = discriminator(&mut tape, &mut p, &dc, prefix, fake)?;
            acc += 0.5 * d_accuracy(tape.value(lr), tape.value(lf));
            let l = d_loss(&mut tape, lr, lf)?;
            total = Some(match total {
                None => l,
                Some(t) => tape.add(t, l)?,
            });
        }
        let mut loss = total.expect("two discriminators");
        let d_value = tape.scalar(loss);
        let mut r1_value = None;
        if with_r1 {
            let a = r1_penalty(&mut tape, &mut p, &dc, FIELD_DISC, real)?;
            let b = r1_penalty(&mut tape, &mut p, &dc, PROXY_DISC, real)?;
            let r1 = tape.add(a, b)?;
            r1_value = Some(tape.scalar(r1));
            let scaled = tape.scale(r1, self.cfg.r1_weight * self.cfg.r1_interval as f32);
            loss = tape.add(loss, scaled)?;
        }
        let grads = p.grads(&tape.backward(loss)?);
        let cfg = self.cfg.clone();
        self.adam.step_store(&mut self.disc, &grads, |n| cfg.adam_for(n))?;
        Ok((d_value, r1_value, acc))
    }

    fn generator_prefixes() -> Trainable {
        Trainable::prefixes(["enc.", "gen.", "psi."])
    }

    /// Lazy path-length step; returns the penalty before the update.
    fn path_length_step(&mut self, examples: &[Example]) -> Result<f32> {
        let cfg = self.model.cfg.clone();
        let mut lengths = Vec::with_capacity(examples.len());
        let mut probes = Vec::with_capacity(examples.len());
        for ex in examples {
            let w = crate::generator::map_latent(&self.model.params, &cfg, &ex.z)?;
            let mut tape = Tape::new();
            let mut p = Binding::new(&self.model.params, Trainable::Nothing);
            let wv = tape.param(vec![1, cfg.w_dim], w.clone())?;
            let (img, _) = self.render_pair(&mut tape, &mut p, ex, wv)?;
            let n_pix = (self.cfg.image_size * self.cfg.image_size) as f32;
            let y = Tensor::randn(tape.shape(img).to_vec(), 1.0 / n_pix.sqrt(), &mut self.rng).into_data();
            let g = path_gradient(tape, wv, img, &y)?;
            let len = g.iter().map(|v| v * v).sum::<f32>().sqrt();
            lengths.push(len);
            probes.push((w, g, y));
        }
        let penalty = self.pl_state.update(&lengths);
        if self.cfg.pl_weight == 0.0 {
            return Ok(penalty);
        }
        // d(len)/dθ = d/dθ <y, J u> with u = J^T y / len held fixed, taken
        // as a central difference of <y, G(w ± h u)>.
        let h = self.cfg.pl_step;
        let mut tape = Tape::new();
        let mut p = Binding::new(&self.model.params, Self::generator_prefixes());
        let mut total: Option<Var> = None;
        for (ex, (len, (w, g, y))) in examples.iter().zip(lengths.iter().zip(&probes)) {
            if *len <= 0.0 {
                continue;
            }
            let coef = self.cfg.pl_weight * self.cfg.pl_interval as f32 * 2.0 * (len - self.pl_state.ema)
                / (examples.len() as f32 * 2.0 * h);
            for sign in [1.0f32, -1.0] {
                let shifted: Vec<f32> = w.iter().zip(g).map(|(wi, gi)| wi + sign * h * gi / len).collect();
                let wv = tape.constant(vec![1, cfg.w_dim], shifted)?;
                let (img, _) = self.render_pair(&mut tape, &mut p, ex, wv)?;
                let yv = tape.constant(tape.shape(img).to_vec(), y.clone())?;
                let prod = tape.mul(img, yv)?;
                let s = tape.sum(prod);
                let s = tape.scale(s, sign * coef);
                total = Some(match total {
                    None => s,
                    Some(t) => tape.add(t, s)?,
                });
            }
        }
        if let Some(loss) = total {
            let grads = p.grads(&tape.backward(loss)?);
            let tc = self.cfg.clone();
            self.adam.step_store(&mut self.model.params, &grads, |n| tc.adam_for(n))?;
        }
        Ok(penalty)
    }

    /// D step (with lazy R1), G step through both render paths, then lazy
    /// path-length regularization.
    pub fn train_step(&mut self) -> Result<StepMetrics> {
        let step = self.step;
        let examples = self.sample_examples()?;
        let n_fake = self.cfg.batch * self.cfg.views_per_shape;
        let reals = self.sample_reals(n_fake)?;
        let mcfg = self.model.cfg.clone();

        // Generator forward once; its values feed the D step and its graph the G step.
        let params = self.model.params.clone();
        let mut gt = Tape::new();
        let mut gp = Binding::new(&params, Self::generator_prefixes());
        let mut field_parts = Vec::new();
        let mut proxy_parts = Vec::new();
        for ex in &examples {
            let z = gt.constant(vec![1, mcfg.z_dim], ex.z.clone())?;
            let w = mapping_network(&mut gt, &mut gp, &mcfg, z)?;
            let (f, c) = self.render_pair(&mut gt, &mut gp, ex, w)?;
            field_parts.push(f);
            proxy_parts.push(c);
        }
        let fake_field = gt.concat(&field_parts, 0)?;
        let fake_proxy = gt.concat(&proxy_parts, 0)?;

        let with_r1 = step % self.cfg.r1_interval == 0;
        let (d_value, r1, d_acc) = self.discriminator_step(
            &reals,
            &gt.to_tensor(fake_field),
            &gt.to_tensor(fake_proxy),
            with_r1,
        )?;

        let dc = self.cfg.disc_config();
        let disc = self.disc.clone();
        let mut dp = Binding::new(&disc, Trainable::Nothing);
        let (lf, _) = discriminator(&mut gt, &mut dp, &dc, FIELD_DISC, fake_field)?;
        let (lp, _) = discriminator(&mut gt, &mut dp, &dc, PROXY_DISC, fake_proxy)?;
        let a = g_loss(&mut gt, lf);
        let b = g_loss(&mut gt, lp);
        let gl = gt.add(a, b)?;
        let g_value = gt.scalar(gl);
        let grads = gp.grads(&gt.backward(gl)?);
        let tc = self.cfg.clone();
        self.adam.step_store(&mut self.model.params, &grads, |n| tc.adam_for(n))?;

        let pl = if step % self.cfg.pl_interval == 0 {
            Some(self.path_length_step(&examples)?)
        } else {
            None
        };

        let metrics = StepMetrics {
            step,
            d_loss: d_value,
            g_loss: g_value,
            r1,
            pl,
            d_acc,
        };
        metrics.check_finite()?;
        self.step += 1;
        Ok(metrics)
    }

    /// Runs `cfg.iters` steps, writing one JSON line per step to `log`.
    pub fn train(&mut self, mut log: Option<&mut dyn Write>) -> Result<Vec<StepMetrics>> {
        let mut trace = Vec::with_capacity(self.cfg.iters);
        for _ in 0..self.cfg.iters {
            let m = self.train_step()?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", serde_json::to_string(&m)?)?;
            }
            trace.push(m);
        }
        Ok(trace)
    }

    /// `model.m2tw` (+ `model.json`) and `disc.m2tw` in `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.model.save(&dir.join("model.m2tw"))?;
        self.disc.save(&dir.join("disc.m2tw"))
    }
}

/// Mean discriminator accuracy over the last `frac` of a trace.
pub fn tail_accuracy(trace: &[StepMetrics], frac: f64) -> f32 {
    let n = ((trace.len() as f64 * frac).ceil() as usize).clamp(1, trace.len().max(1));
    let tail = &trace[trace.len().saturating_sub(n)..];
    tail.iter().map(|m| m.d_acc).sum::<f32>() / tail.len().max(1) as f32
}
