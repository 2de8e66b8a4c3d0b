mod common;

use meshfield::context::MeshContext;
use meshfield::diff::Tape;
use meshfield::geometry::{shapes, subdivide};
use meshfield::perceptual::{
    global_style_loss_images, image_to_var, match_patch, sample_query_patch, style_grams, FeatureExtractor,
};
use meshfield::render::{rasterize, render_noc, Camera, Image, Mask};
use rand::Rng;

fn rendered_noc(size: usize, az: f64) -> (Image, Mask) {
    let ctx = MeshContext::new(subdivide(&shapes::quad_sphere(1, 0.6), 3).unwrap()).unwrap();
    let cam = Camera {
        azimuth: az,
        elevation: 0.4,
        image_size: size,
        ..Camera::default()
    };
    let frag = rasterize(ctx.finest(), &cam).unwrap();
    (render_noc(&frag, ctx.finest(), &ctx.noc_frame), Mask::from_frag(&frag))
}

fn random_image(seed: u64, size: usize) -> Image {
    let mut rng = common::rng(seed);
    let mut img = Image::zeros(size, size, 3);
    for v in img.data.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    img
}

#[test]
fn match_patch_agrees_with_exhaustive_scan() {
    let mut rng = common::rng(11);
    for _ in 0..50 {
        let (i_noc, _) = common::random_noc_pair(&mut rng, 32);
        let (x_noc, x_mask) = common::random_noc_pair(&mut rng, 32);
        for _ in 0..4 {
            let (x, y) = (rng.random_range(0..32), rng.random_range(0..32));
            let want = common::nearest_noc_scan(&x_noc, &x_mask, [0, 1, 2].map(|c| i_noc.pixel(x, y)[c]));
            assert_eq!(Some(match_patch(&i_noc, &x_noc, &x_mask, (x, y)).unwrap()), want);
        }
    }
}

#[test]
fn self_match_returns_the_same_pixel() {
    let (noc, mask) = rendered_noc(64, 0.7);
    let fg: Vec<usize> = (0..mask.data.len()).filter(|&i| mask.data[i]).collect();
    let mut rng = common::rng(3);
    for _ in 0..100 {
        let i = fg[rng.random_range(0..fg.len())];
        let (x, y) = (i % 64, i / 64);
        assert_eq!(match_patch(&noc, &noc, &mask, (x, y)).unwrap(), (x, y));
    }
}

#[test]
fn match_patch_rejects_an_empty_render() {
    let (noc, mask) = rendered_noc(16, 0.1);
    let empty = Mask {
        width: 16,
        height: 16,
        data: vec![false; 256],
    };
    let (x, y) = (0..256).find(|&i| mask.data[i]).map(|i| (i % 16, i / 16)).unwrap();
    assert!(match_patch(&noc, &noc, &empty, (x, y)).is_err());
}

#[test]
fn query_patches_fit_inside_the_image_and_start_on_foreground() {
    let (_, mask) = rendered_noc(48, 1.1);
    let mut rng = common::rng(5);
    for _ in 0..50 {
        let p = sample_query_patch(&mask, 32, 8, &mut rng).unwrap();
        assert!(mask.get(p.x, p.y));
        let (x0, y0) = p.origin();
        assert!(x0 + p.size <= 48 && y0 + p.size <= 48);
    }
    // A window larger than the image shrinks; an impossible minimum gives None.
    let p = sample_query_patch(&mask, 64, 8, &mut rng).unwrap();
    assert!(p.size <= 48);
    assert!(sample_query_patch(&mask, 64, 60, &mut rng).is_none());
}

#[test]
fn grams_match_a_dense_oracle_on_the_taps() {
    let fx = FeatureExtractor::tinyvgg();
    let img = random_image(7, 24);
    let (_, mask) = rendered_noc(24, 0.3);
    let mut tape = Tape::new();
    let x = image_to_var(&mut tape, &img).unwrap();
    let taps = fx.forward(&mut tape, x).unwrap();
    let grams = style_grams(&mut tape, &fx, x, &mask).unwrap();
    assert_eq!(taps.len(), grams.len());
    for (t, g) in taps.iter().zip(&grams) {
        let s = tape.shape(*t).to_vec();
        let (c, h, w) = (s[1], s[2], s[3]);
        let m = mask.downsample(24 / h);
        let want = common::naive_gram(tape.value(*t), c, h * w, Some(&m.data));
        let got = tape.value(*g);
        for (a, b) in got.iter().zip(&want) {
            assert!((*a as f64 - b).abs() <= 1e-4 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn style_loss_vanishes_on_identical_images_only() {
    let fx = FeatureExtractor::tinyvgg();
    let (_, mask) = rendered_noc(32, 0.9);
    let a = random_image(1, 32);
    let b = random_image(2, 32);
    assert_eq!(global_style_loss_images(&fx, &a, &mask, &a, &mask, 3).unwrap(), 0.0);
    let d = global_style_loss_images(&fx, &a, &mask, &b, &mask, 3).unwrap();
    assert!(d > 0.0 && d.is_finite());
}
