mod common;

use std::collections::BTreeSet;

use meshfield::context::MeshContext;
use meshfield::generator::{ModelConfig, Noise, TextureLatent};
use meshfield::geometry::{shapes, subdivide};
use meshfield::model::Model;
use meshfield::perceptual::{FeatureExtractor, StyleLossSpec};
use meshfield::render::{render_view, Camera, Mask, PoseBins, RenderedView, ShadeMode};
use meshfield::transfer::{estimate_pose, transfer, transfer_from, PoseMode, TransferConfig, TransferQuery, LATENT_NAME};

fn model() -> Model {
    Model::init(ModelConfig {
        levels: 2,
        enc_channels: vec![4, 8],
        dec_channels: vec![8, 6],
        z_dim: 8,
        w_dim: 8,
        mapping_layers: 2,
        aux_dim: 8,
        field_hidden: 8,
        seed: 2,
    })
    .unwrap()
}

fn cfg(phase1: usize, phase2: usize) -> TransferConfig {
    TransferConfig {
        phase1_iters: phase1,
        phase2_iters: phase2,
        spec: StyleLossSpec {
            patch_size: 16,
            min_patch_size: 8,
            n_levels: 2,
            ..StyleLossSpec::default()
        },
        ..TransferConfig::default()
    }
}

struct Fixture {
    model: Model,
    ctx: MeshContext,
    fx: FeatureExtractor,
    truth: TextureLatent,
    view: RenderedView,
    camera: Camera,
}

impl Fixture {
    fn new() -> Self {
        let model = model();
        let ctx = MeshContext::new(subdivide(&shapes::unit_cube(), 2).unwrap()).unwrap();
        let truth = TextureLatent::from_seed(&model.params, &model.cfg, 77).unwrap();
        let camera = Camera {
            azimuth: 0.6,
            elevation: 0.4,
            image_size: 32,
            ..Camera::default()
        };
        let c = cfg(0, 0);
        let view = render_view(
            &model.params,
            &model.cfg,
            &ctx,
            &truth,
            &camera,
            Noise::Seeded(c.noise_seed),
            ShadeMode::Field,
            c.background,
        )
        .unwrap();
        Self {
            model,
            ctx,
            fx: FeatureExtractor::tinyvgg(),
            truth,
            view,
            camera,
        }
    }

    fn query(&self) -> TransferQuery {
        TransferQuery {
            rgb: self.view.rgb.clone(),
            mask: self.view.mask.clone(),
            noc: Some(self.view.noc.clone()),
            camera: Some(self.camera),
        }
    }
}

#[test]
fn self_transfer_from_the_truth_starts_at_zero_loss() {
    let f = Fixture::new();
    let res = transfer_from(&f.query(), &f.ctx, &f.model, &f.fx, &cfg(5, 0), f.truth.clone()).unwrap();
    assert!(res.loss_trace[0].abs() <= 1e-6, "loss {}", res.loss_trace[0]);
}

#[test]
fn schedule_and_freeze_contract() {
    let f = Fixture::new();
    let res = transfer(&f.query(), &f.ctx, &f.model, &f.fx, &cfg(6, 4)).unwrap();
    assert_eq!(res.loss_trace.len(), 10);
    assert_eq!(res.phase1_support, BTreeSet::from([LATENT_NAME.to_string()]));
    let refine: BTreeSet<String> = f.model.cfg.refinement_tensors().into_iter().collect();
    assert_eq!(res.phase2_support, refine);
    let refined: BTreeSet<String> = res.refined.names().map(String::from).collect();
    assert_eq!(refined, refine);
}

#[test]
fn phase_two_alone_changes_only_the_refined_layers() {
    let f = Fixture::new();
    let res = transfer(&f.query(), &f.ctx, &f.model, &f.fx, &cfg(0, 5)).unwrap();
    let after = res.apply(&f.model);
    let refine: BTreeSet<String> = f.model.cfg.refinement_tensors().into_iter().collect();
    for (name, t) in f.model.params.iter() {
        let new = after.params.get(name).unwrap();
        if refine.contains(name) {
            assert_ne!(new.data(), t.data(), "{name} should move");
        } else {
            assert_eq!(new.data(), t.data(), "{name} should be frozen");
        }
    }
}

#[test]
fn identical_inputs_give_identical_traces() {
    let f = Fixture::new();
    let a = transfer(&f.query(), &f.ctx, &f.model, &f.fx, &cfg(4, 3)).unwrap();
    let b = transfer(&f.query(), &f.ctx, &f.model, &f.fx, &cfg(4, 3)).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.latent, b.latent);
    assert_eq!(a.refined, b.refined);
}

#[test]
fn precondition_failures() {
    let f = Fixture::new();
    let mut q = f.query();
    q.mask = Mask {
        width: 32,
        height: 32,
        data: vec![false; 32 * 32],
    };
    assert!(transfer(&q, &f.ctx, &f.model, &f.fx, &cfg(1, 0)).is_err());

    let mut q = f.query();
    q.noc = None;
    assert!(transfer(&q, &f.ctx, &f.model, &f.fx, &cfg(1, 0)).is_err());

    let mut q = f.query();
    q.camera = None;
    assert!(transfer(&q, &f.ctx, &f.model, &f.fx, &cfg(1, 0)).is_err());
}

#[test]
fn pose_modes() {
    let bins = PoseBins::default();
    let base = Camera::default();
    let truth = Camera {
        azimuth: 17f64.to_radians(),
        elevation: 25f64.to_radians(),
        ..base
    };
    assert_eq!(estimate_pose(PoseMode::Exact, Some(&truth), &bins, &base).unwrap(), truth);
    let snapped = estimate_pose(PoseMode::Bins, Some(&truth), &bins, &base).unwrap();
    assert!((snapped.azimuth.to_degrees() - 15.0).abs() < 1e-9);
    assert!((snapped.elevation.to_degrees() - 30.0).abs() < 1e-9);
    let provided = PoseMode::Provided {
        azimuth_bin: 3,
        elevation_bin: 1,
    };
    assert_eq!(
        estimate_pose(provided, None, &bins, &base).unwrap(),
        bins.camera(3, 1, &base).unwrap()
    );
    assert!(estimate_pose(PoseMode::Bins, None, &bins, &base).is_err());
}
