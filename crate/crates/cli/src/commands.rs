use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use serde::Serialize;

use meshfield::context::MeshContext;
use meshfield::field::sample_face_grid;
use meshfield::gantrain::{generate_corpus, load_corpus, save_corpus, tail_accuracy, training_shapes, Trainer};
use meshfield::generator::{generate_features, Noise, TextureLatent};
use meshfield::geometry::{load_obj, obj::to_obj_string, qmh, shapes, subdivide, QuadMeshHierarchy};
use meshfield::model::Model;
use meshfield::render::{
    load_mask_png, load_noc_png, load_rgb_png, rasterize, render_noc as noc_image, render_view, save_mask_png,
    save_noc_png, save_rgb_png, Image, Mask, ShadeMode,
};
use meshfield::selftest;
use meshfield::transfer::{transfer as run_transfer, PoseMode, TransferQuery};

use crate::config::RunConfig;
use crate::{PoseArg, ShapeKind, View};

/// Offset of the training-shape stream from the run seed.
const SHAPE_SEED_OFFSET: u64 = 1000;

pub enum LatentSource {
    Seed(Option<u64>),
    File(PathBuf),
}

impl LatentSource {
    pub fn new(seed: Option<u64>, file: Option<PathBuf>) -> Self {
        match file {
            Some(f) => Self::File(f),
            None => Self::Seed(seed),
        }
    }

    fn resolve(&self, model: &Model, run_seed: Option<u64>) -> Result<TextureLatent> {
        match self {
            Self::Seed(s) => Ok(TextureLatent::from_seed(
                &model.params,
                &model.cfg,
                s.or(run_seed).unwrap_or(0),
            )?),
            Self::File(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let z: Vec<f32> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                ensure!(
                    z.len() == model.cfg.z_dim,
                    "{} holds {} values, the model expects z of {}",
                    path.display(),
                    z.len(),
                    model.cfg.z_dim
                );
                Ok(TextureLatent::from_z(&model.params, &model.cfg, z)?)
            }
        }
    }
}

pub struct PoseRequest {
    pub mode: Option<PoseArg>,
    pub camera: Option<(f64, f64)>,
    pub bins: Option<(usize, usize)>,
}

/// QMH1 files load as stored; OBJ meshes are subdivided to `levels`.
fn load_hierarchy(path: &Path, levels: usize) -> Result<QuadMeshHierarchy> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    let h = match ext.as_str() {
        "qmh" => qmh::load(path)?,
        "obj" => subdivide(&load_obj(path)?, levels)?,
        _ => bail!("{}: expected a .qmh or .obj mesh", path.display()),
    };
    Ok(h)
}

fn load_context(path: &Path, levels: usize) -> Result<MeshContext> {
    let ctx = MeshContext::new(load_hierarchy(path, levels)?)
        .with_context(|| format!("preparing mesh {}", path.display()))?;
    Ok(ctx)
}

fn load_model(path: &Path) -> Result<Model> {
    let m = Model::load(path).with_context(|| format!("loading weights {}", path.display()))?;
    m.cfg.validate()?;
    Ok(m)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn hierarchy(input: &Path, levels: usize, output: &Path) -> Result<()> {
    ensure!(levels >= 1, "--levels must be >= 1");
    let mesh = load_obj(input)?;
    let h = subdivide(&mesh, levels)?;
    qmh::save(output, &h)?;
    let counts: Vec<usize> = h.levels().iter().map(|m| m.n_faces()).collect();
    info!("wrote {} with face counts {counts:?}", output.display());
    Ok(())
}

pub fn generate(
    cfg: &RunConfig,
    seed: Option<u64>,
    weights: &Path,
    mesh: &Path,
    latent: LatentSource,
    view: &View,
    output: &Path,
) -> Result<()> {
    let model = load_model(weights)?;
    let ctx = load_context(mesh, model.cfg.levels.max(cfg.render.levels))?;
    let latent = latent.resolve(&model, seed)?;
    let cam = cfg.render.camera(view.azimuth, view.elevation, view.size);
    let out = render_view(
        &model.params,
        &model.cfg,
        &ctx,
        &latent,
        &cam,
        Noise::Seeded(cfg.render.noise_seed),
        ShadeMode::Field,
        cfg.render.background,
    )?;
    save_rgb_png(output, &out.rgb)?;
    info!("wrote {} ({} foreground pixels)", output.display(), out.mask.count());
    Ok(())
}

pub fn bake(
    cfg: &RunConfig,
    seed: Option<u64>,
    weights: &Path,
    mesh: &Path,
    resolution: usize,
    z_seed: Option<u64>,
    out_dir: &Path,
) -> Result<()> {
    ensure!(resolution >= 1, "--resolution must be >= 1");
    let model = load_model(weights)?;
    let ctx = load_context(mesh, model.cfg.levels.max(cfg.render.levels))?;
    let latent = LatentSource::Seed(z_seed).resolve(&model, seed)?;
    let (fc, _) = generate_features(&model.params, &model.cfg, &ctx, &latent, Noise::Seeded(cfg.render.noise_seed))?;
    fs::create_dir_all(out_dir)?;
    let n_faces = ctx.finest().n_faces();
    let plane = resolution * resolution;
    for face in 0..n_faces {
        let rgb = sample_face_grid(&model.params, &ctx, &fc, face as u32, resolution)?;
        let mut tile = Image::zeros(resolution, resolution, 3);
        for (i, px) in rgb.iter().enumerate() {
            for c in 0..3 {
                tile.data[c * plane + i] = px[c];
            }
        }
        save_rgb_png(&out_dir.join(format!("face_{face:05}.png")), &tile)?;
    }
    info!("baked {n_faces} tiles of {resolution}x{resolution} into {}", out_dir.display());
    Ok(())
}

#[derive(Serialize)]
struct LatentFile<'a> {
    z: Option<&'a [f32]>,
    w: &'a [f32],
}

#[derive(Serialize)]
struct TransferSummary {
    azimuth_deg: f64,
    elevation_deg: f64,
    phase1_support: Vec<String>,
    phase2_support: Vec<String>,
    final_loss: Option<f32>,
}

#[allow(clippy::too_many_arguments)]
pub fn transfer(
    cfg: &RunConfig,
    seed: Option<u64>,
    weights: &Path,
    mesh: &Path,
    query: &Path,
    mask: &Path,
    noc: Option<&Path>,
    pose: PoseRequest,
    out_dir: &Path,
) -> Result<()> {
    let model = load_model(weights)?;
    let ctx = load_context(mesh, model.cfg.levels.max(cfg.render.levels))?;
    let rgb = load_rgb_png(query)?;
    let mut tcfg = cfg.transfer.clone();
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    tcfg.pose_mode = match (pose.mode, pose.bins) {
        (Some(PoseArg::Provided), Some((a, e))) | (None, Some((a, e))) => PoseMode::Provided {
            azimuth_bin: a,
            elevation_bin: e,
        },
        (Some(PoseArg::Provided), None) => bail!("--pose-mode provided needs --azimuth-bin and --elevation-bin"),
        (Some(PoseArg::Exact), _) => PoseMode::Exact,
        (Some(PoseArg::Bins), _) => PoseMode::Bins,
        (None, None) => tcfg.pose_mode,
    };
    let camera = pose.camera.map(|(a, e)| cfg.render.camera(a, e, Some(rgb.width)));
    if matches!(tcfg.pose_mode, PoseMode::Exact | PoseMode::Bins) {
        ensure!(camera.is_some(), "this pose mode needs --azimuth and --elevation of the query");
    }
    let q = TransferQuery {
        mask: load_mask_png(mask)?,
        noc: noc.map(load_noc_png).transpose()?,
        camera,
        rgb,
    };
    let fx = cfg.extractor()?;
    let res = run_transfer(&q, &ctx, &model, &fx, &tcfg)?;

    fs::create_dir_all(out_dir)?;
    save_rgb_png(&out_dir.join("final.png"), &res.final_render.rgb)?;
    write_json(&out_dir.join("loss_trace.json"), &res.loss_trace)?;
    res.refined.save(&out_dir.join("delta.m2tw"))?;
    write_json(
        &out_dir.join("latent.json"),
        &LatentFile {
            z: res.latent.z.as_deref(),
            w: &res.latent.w,
        },
    )?;
    write_json(
        &out_dir.join("summary.json"),
        &TransferSummary {
            azimuth_deg: res.camera.azimuth.to_degrees(),
            elevation_deg: res.camera.elevation.to_degrees(),
            phase1_support: res.phase1_support.iter().cloned().collect(),
            phase2_support: res.phase2_support.iter().cloned().collect(),
            final_loss: res.loss_trace.last().copied(),
        },
    )?;
    info!(
        "transfer done: {} iterations, final loss {:?}",
        res.loss_trace.len(),
        res.loss_trace.last()
    );
    Ok(())
}

pub fn train(cfg: &RunConfig, seed: Option<u64>, corpus: &Path, weights: Option<&Path>, output: &Path) -> Result<()> {
    let mut tcfg = cfg.train.clone();
    if let Some(s) = seed {
        tcfg.seed = s;
    }
    let model = match weights {
        Some(w) => load_model(w)?,
        None => {
            let mut mcfg = cfg.model.clone();
            if let Some(s) = seed {
                mcfg.seed = s;
            }
            Model::init(mcfg)?
        }
    };
    let reals = load_corpus(corpus).with_context(|| format!("loading corpus {}", corpus.display()))?;
    ensure!(!reals.is_empty(), "{} holds no PNG images", corpus.display());
    let shapes = training_shapes(tcfg.n_shapes, model.cfg.levels, tcfg.seed + SHAPE_SEED_OFFSET)?;
    let mut trainer = Trainer::new(tcfg, model, shapes, reals)?;
    fs::create_dir_all(output)?;
    let log_path = output.join("metrics.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);
    let trace = trainer.train(Some(&mut log))?;
    log.flush()?;
    trainer.save_checkpoint(output)?;
    info!(
        "trained {} steps; tail D accuracy {:.3}",
        trace.len(),
        tail_accuracy(&trace, 0.2)
    );
    Ok(())
}

pub fn render_noc(cfg: &RunConfig, mesh: &Path, view: &View, output: &Path, mask: Option<&Path>) -> Result<()> {
    let ctx = load_context(mesh, cfg.render.levels)?;
    let cam = cfg.render.camera(view.azimuth, view.elevation, view.size);
    let frag = rasterize(ctx.finest(), &cam)?;
    save_noc_png(output, &noc_image(&frag, ctx.finest(), &ctx.noc_frame))?;
    if let Some(m) = mask {
        save_mask_png(m, &Mask::from_frag(&frag))?;
    }
    Ok(())
}

pub fn selftest(instances: usize, seed: u64) -> Result<()> {
    ensure!(instances >= 1, "--instances must be >= 1");
    let reports = selftest::run_all(instances, seed)?;
    print!("{}", selftest::format_table(&reports));
    let failed = reports.iter().filter(|r| !r.passed).count();
    ensure!(failed == 0, "{failed} of {} checks failed", reports.len());
    Ok(())
}

pub fn init(cfg: &RunConfig, seed: Option<u64>, output: &Path) -> Result<()> {
    let mut mcfg = cfg.model.clone();
    if let Some(s) = seed {
        mcfg.seed = s;
    }
    Model::init(mcfg)?.save(output)?;
    Ok(())
}

pub fn corpus(cfg: &RunConfig, seed: Option<u64>, output: &Path) -> Result<()> {
    let c = &cfg.corpus;
    ensure!(c.images >= 1 && c.image_size >= 1, "corpus needs a positive image count and size");
    let images = generate_corpus(c.images, c.image_size, seed.unwrap_or(c.seed))?;
    save_corpus(output, &images)?;
    info!("wrote {} images to {}", images.len(), output.display());
    Ok(())
}

pub fn make_shape(kind: ShapeKind, output: &Path) -> Result<()> {
    let mesh = match kind {
        ShapeKind::Cube => shapes::unit_cube(),
        ShapeKind::Sphere => shapes::quad_sphere(1, 0.5),
        ShapeKind::Plane => shapes::plane_grid(2, 2),
    };
    fs::write(output, to_obj_string(&mesh)).with_context(|| format!("writing {}", output.display()))?;
    Ok(())
}
