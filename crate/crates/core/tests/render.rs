mod common;

use meshfield::context::MeshContext;
use meshfield::generator::{ModelConfig, Noise, TextureLatent};
use meshfield::geometry::{barycentric_point, shapes, subdivide};
use meshfield::model::Model;
use meshfield::render::{
    load_frag, load_mask_png, load_noc_png, load_rgb_png, pose_from_bins, rasterize, render_view, save_frag,
    save_mask_png, save_noc_png, save_rgb_png, Camera, Image, Mask, PoseBins, ShadeMode, DEFAULT_BACKGROUND,
};
use rand::Rng;

fn sphere_ctx() -> MeshContext {
    MeshContext::new(subdivide(&shapes::quad_sphere(1, 0.7), 3).unwrap()).unwrap()
}

fn cam(az: f64, el: f64, size: usize) -> Camera {
    Camera {
        azimuth: az,
        elevation: el,
        image_size: size,
        ..Camera::default()
    }
}

#[test]
fn fragments_reproject_to_their_pixel_centres() {
    let ctx = sphere_ctx();
    for (az, el) in [(0.0, 0.0), (1.3, 0.5), (-2.0, 1.0)] {
        let c = cam(az, el, 40);
        let frame = c.frame().unwrap();
        let frag = rasterize(ctx.finest(), &c).unwrap();
        assert!(frag.coverage() > 100);
        for (pix, sp) in frag.surface_points() {
            let p = barycentric_point(&sp, ctx.finest());
            let (x, y, depth) = frame.project(p).unwrap();
            let (px, py) = ((pix % 40) as f64 + 0.5, (pix / 40) as f64 + 0.5);
            assert!((x - px).abs() < 1e-3 && (y - py).abs() < 1e-3, "pixel {pix}: ({x}, {y})");
            let stored = frag.fragments[pix].depth as f64;
            assert!((stored - depth).abs() <= 1e-4 * depth);
        }
    }
}

#[test]
fn visible_surface_is_the_nearest_one() {
    // Along each covered pixel ray the visible point of a convex shape is
    // closer than the camera distance; the hidden back side is farther.
    let ctx = sphere_ctx();
    let c = cam(0.4, 0.2, 32);
    let frag = rasterize(ctx.finest(), &c).unwrap();
    for f in frag.fragments.iter().filter(|f| f.is_foreground()) {
        assert!((f.depth as f64) < c.distance);
    }
}

#[test]
fn rgb_png_round_trip_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(1);
    let mut img = Image::zeros(9, 7, 3);
    for v in img.data.iter_mut() {
        *v = rng.random_range(-1.0..=1.0);
    }
    let p = dir.path().join("x.png");
    save_rgb_png(&p, &img).unwrap();
    let back = load_rgb_png(&p).unwrap();
    assert_eq!((back.width, back.height), (9, 7));
    assert!(common::max_abs_diff(&img.data, &back.data) <= 1.0 / 255.0 + 1e-6);
}

#[test]
fn noc_png_is_sixteen_bit() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = common::rng(2);
    let mut noc = Image::zeros(5, 5, 3);
    for v in noc.data.iter_mut() {
        *v = rng.random();
    }
    let p = dir.path().join("n.png");
    save_noc_png(&p, &noc).unwrap();
    let back = load_noc_png(&p).unwrap();
    assert!(common::max_abs_diff(&noc.data, &back.data) <= 0.5 / 65535.0 + 1e-7);
}

#[test]
fn mask_and_fragment_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = sphere_ctx();
    let frag = rasterize(ctx.finest(), &cam(0.9, 0.3, 24)).unwrap();
    let mask = Mask::from_frag(&frag);
    save_mask_png(&dir.path().join("m.png"), &mask).unwrap();
    assert_eq!(load_mask_png(&dir.path().join("m.png")).unwrap(), mask);
    save_frag(&dir.path().join("f.frag"), &frag).unwrap();
    // Depth is not part of the dump.
    let back = load_frag(&dir.path().join("f.frag")).unwrap();
    assert_eq!((back.width, back.height), (frag.width, frag.height));
    for (a, b) in back.fragments.iter().zip(&frag.fragments) {
        assert_eq!((a.face, a.half, a.bary), (b.face, b.half, b.bary));
    }
}

#[test]
fn render_view_fills_background_and_respects_range() {
    let model = Model::init(ModelConfig {
        levels: 2,
        enc_channels: vec![4, 8],
        dec_channels: vec![8, 6],
        z_dim: 8,
        w_dim: 8,
        mapping_layers: 2,
        aux_dim: 8,
        field_hidden: 8,
        seed: 1,
    })
    .unwrap();
    let ctx = sphere_ctx();
    let latent = TextureLatent::from_seed(&model.params, &model.cfg, 4).unwrap();
    for mode in [ShadeMode::Field, ShadeMode::Coarse] {
        let v = render_view(
            &model.params,
            &model.cfg,
            &ctx,
            &latent,
            &cam(0.2, 0.3, 32),
            Noise::Seeded(0),
            mode,
            DEFAULT_BACKGROUND,
        )
        .unwrap();
        let plane = 32 * 32;
        for i in 0..plane {
            for c in 0..3 {
                let x = v.rgb.data[c * plane + i];
                if v.mask.data[i] {
                    assert!((-1.0..=1.0).contains(&x));
                } else {
                    assert_eq!(x, DEFAULT_BACKGROUND[c]);
                    assert_eq!(v.noc.data[c * plane + i], 0.0);
                }
            }
        }
    }
}

#[test]
fn bins_cover_twelve_by_five_centres() {
    let bins = PoseBins::default();
    let base = Camera::default();
    let all = bins.all_cameras(&base);
    assert_eq!(all.len(), 60);
    let c = pose_from_bins(0, 0, &base).unwrap();
    assert!((c.azimuth.to_degrees() - 15.0).abs() < 1e-9);
    assert!((c.elevation.to_degrees() - 6.0).abs() < 1e-9);
    assert!(pose_from_bins(12, 0, &base).is_err());
}
