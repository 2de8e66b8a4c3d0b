//! Parallel vs sequential path on the kernels that fan out over workers.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshfield::diff::{Tape, Tensor};
use meshfield::geometry::{shapes, subdivide};
use meshfield::par;
use meshfield::render::{rasterize, Camera};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PATHS: [(&str, bool); 2] = [("parallel", true), ("sequential", false)];

fn matmul_fwd_bwd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let a = Tensor::randn(vec![1024, 256], 1.0, &mut rng);
    let b = Tensor::randn(vec![256, 128], 1.0, &mut rng);
    let mut group = c.benchmark_group("matmul_1024x256x128");
    for (label, on) in PATHS {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(label), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(&a);
                let w = tape.param(b.shape().to_vec(), b.data().to_vec()).unwrap();
                let y = tape.matmul(x, w).unwrap();
                let s = tape.sum(y);
                tape.backward(s).unwrap()
            })
        });
    }
    group.finish();
    par::set_parallel(true);
}

fn conv_fwd_bwd(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Tensor::randn(vec![4, 16, 48, 48], 1.0, &mut rng);
    let w0 = Tensor::randn(vec![32, 16, 3, 3], 0.1, &mut rng);
    let mut group = c.benchmark_group("conv3x3_4x16x48x48_to_32");
    for (label, on) in PATHS {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(label), |bench| {
            bench.iter(|| {
                let mut tape = Tape::new();
                let x = tape.leaf(&x0);
                let w = tape.param(w0.shape().to_vec(), w0.data().to_vec()).unwrap();
                let y = tape.conv2d(x, w, None, 1).unwrap();
                let s = tape.sum(y);
                tape.backward(s).unwrap()
            })
        });
    }
    group.finish();
    par::set_parallel(true);
}

fn raster(c: &mut Criterion) {
    let h = subdivide(&shapes::quad_sphere(1, 0.8), 4).unwrap();
    let cam = Camera {
        image_size: 256,
        ..Camera::default()
    };
    let mut group = c.benchmark_group("rasterize_256px");
    for (label, on) in PATHS {
        par::set_parallel(on);
        group.bench_function(BenchmarkId::from_parameter(label), |bench| {
            bench.iter(|| rasterize(h.finest(), &cam).unwrap())
        });
    }
    group.finish();
    par::set_parallel(true);
}

criterion_group!(benches, matmul_fwd_bwd, conv_fwd_bwd, raster);
criterion_main!(benches);
