mod common;

use meshfield::context::MeshContext;
use meshfield::diff::{Tape, Tensor};
use meshfield::field::{eval_field, point_at_uv, position_code, sample_face_grid, vertex_features};
use meshfield::generator::{FaceFeatureMap, ModelConfig};
use meshfield::geometry::{shapes, subdivide, SurfacePoint};
use meshfield::model::Model;
use rand::Rng;

fn small_cfg() -> ModelConfig {
    ModelConfig {
        levels: 2,
        enc_channels: vec![4, 8],
        dec_channels: vec![8, 6],
        z_dim: 8,
        w_dim: 8,
        mapping_layers: 2,
        aux_dim: 10,
        field_hidden: 12,
        seed: 5,
    }
}

fn setup(seed: u64) -> (Model, MeshContext, FaceFeatureMap) {
    let model = Model::init(ModelConfig { seed, ..small_cfg() }).unwrap();
    let ctx = MeshContext::new(subdivide(&shapes::quad_sphere(1, 0.8), 2).unwrap()).unwrap();
    let mut rng = common::rng(seed);
    let n = ctx.finest().n_faces();
    let c = model.cfg.fc_channels();
    let fc = FaceFeatureMap {
        level: ctx.finest_level(),
        channels: c,
        values: Tensor::randn(vec![n * c], 2.0, &mut rng).into_data(),
    };
    (model, ctx, fc)
}

#[test]
fn vertex_features_match_incidence_scan() {
    let (_, ctx, fc) = setup(1);
    let mut tape = Tape::new();
    let x = tape.constant(vec![fc.n_faces(), fc.channels], fc.values.clone()).unwrap();
    let v = vertex_features(&mut tape, &ctx, x).unwrap();
    let vals = tape.value(v).to_vec();
    for vert in 0..ctx.finest().n_vertices() as u32 {
        let want = common::vertex_feature_scan(&ctx, &fc, vert);
        for (c, w) in want.iter().enumerate() {
            let got = vals[vert as usize * fc.channels + c] as f64;
            assert!((got - w).abs() <= 1e-5, "vertex {vert} channel {c}");
        }
    }
}

#[test]
fn output_range_over_random_points_and_large_features() {
    for seed in 0..4 {
        let (model, ctx, mut fc) = setup(seed);
        for v in fc.values.iter_mut() {
            *v *= 50.0;
        }
        let mut rng = common::rng(seed);
        let pts: Vec<SurfacePoint> = (0..500)
            .map(|_| {
                SurfacePoint::new(
                    rng.random_range(0..ctx.finest().n_faces() as u32),
                    rng.random_range(0..2),
                    common::random_bary(&mut rng),
                )
            })
            .collect();
        for rgb in eval_field(&model.params, &ctx, &fc, &pts).unwrap() {
            assert!(rgb.iter().all(|c| (-1.0..=1.0).contains(c)), "{rgb:?}");
        }
    }
}

#[test]
fn continuous_across_the_internal_diagonal() {
    let (model, ctx, fc) = setup(2);
    let mut rng = common::rng(2);
    let eps = 1e-4;
    let mut worst = 0.0f32;
    for _ in 0..200 {
        let f = rng.random_range(0..ctx.finest().n_faces() as u32);
        let u: f32 = rng.random_range(0.05..0.95);
        let below = point_at_uv(f, u, 1.0 - u - eps);
        let above = point_at_uv(f, u, 1.0 - u + eps);
        assert_eq!((below.half, above.half), (0, 1));
        let out = eval_field(&model.params, &ctx, &fc, &[below, above]).unwrap();
        worst = worst.max(common::max_abs_diff(&out[0], &out[1]));
    }
    assert!(worst <= 1e-3, "worst jump {worst}");
}

#[test]
fn vertex_and_centroid_match_the_dense_oracle() {
    let (model, ctx, fc) = setup(3);
    let mesh = ctx.finest();
    let third = 1.0f32 / 3.0;
    for f in (0..mesh.n_faces()).step_by(7) {
        for half in 0..2u8 {
            let tri = mesh.triangle(f, half);
            let corner = SurfacePoint::new(f as u32, half, [1.0, 0.0, 0.0]);
            let centre = SurfacePoint::new(f as u32, half, [third, third, third]);
            let got = eval_field(&model.params, &ctx, &fc, &[corner, centre]).unwrap();

            let f1 = common::vertex_feature_scan(&ctx, &fc, tri[0]);
            let want = common::mlp_oracle(&model.params, &f1, position_code(&corner));
            for c in 0..3 {
                assert!((got[0][c] as f64 - want[c]).abs() <= 1e-6, "vertex case face {f}");
            }

            let feats: Vec<Vec<f64>> = tri.iter().map(|&v| common::vertex_feature_scan(&ctx, &fc, v)).collect();
            let mean: Vec<f64> = (0..fc.channels).map(|k| feats.iter().map(|x| x[k]).sum::<f64>() / 3.0).collect();
            let want = common::mlp_oracle(&model.params, &mean, position_code(&centre));
            for c in 0..3 {
                assert!((got[1][c] as f64 - want[c]).abs() <= 1e-6, "centroid case face {f}");
            }
        }
    }
}

#[test]
fn grid_samples_equal_pointwise_calls_and_centre() {
    let (model, ctx, fc) = setup(4);
    let grid = sample_face_grid(&model.params, &ctx, &fc, 5, 4).unwrap();
    assert_eq!(grid.len(), 16);
    for j in 0..4 {
        for i in 0..4 {
            let sp = point_at_uv(5, (i as f32 + 0.5) / 4.0, (j as f32 + 0.5) / 4.0);
            let one = eval_field(&model.params, &ctx, &fc, &[sp]).unwrap();
            assert_eq!(one[0], grid[j * 4 + i]);
        }
    }
    let single = sample_face_grid(&model.params, &ctx, &fc, 5, 1).unwrap();
    let centre = eval_field(&model.params, &ctx, &fc, &[point_at_uv(5, 0.5, 0.5)]).unwrap();
    assert_eq!(single, centre);
}

#[test]
fn invariant_to_uniform_scaling_of_positions() {
    let (model, ctx, fc) = setup(6);
    let scaled = MeshContext::new(ctx.hierarchy.map_vertices(|v| v.map(|x| 3.5 * x))).unwrap();
    let pts: Vec<SurfacePoint> = (0..24).map(|f| point_at_uv(f, 0.3, 0.6)).collect();
    assert_eq!(
        eval_field(&model.params, &ctx, &fc, &pts).unwrap(),
        eval_field(&model.params, &scaled, &fc, &pts).unwrap()
    );
}

#[test]
fn constant_features_give_a_constant_grid_per_position_code() {
    let (model, ctx, mut fc) = setup(7);
    for v in fc.values.iter_mut() {
        *v = 0.3;
    }
    // Constant vertex features; only the position code can vary the colour,
    // and it is the same at matching lattice sites of different faces.
    let a = sample_face_grid(&model.params, &ctx, &fc, 0, 3).unwrap();
    let b = sample_face_grid(&model.params, &ctx, &fc, 11, 3).unwrap();
    assert_eq!(a, b);
}
