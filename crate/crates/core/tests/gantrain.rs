mod common;

use meshfield::diff::{Binding, Tape, Tensor, Trainable};
use meshfield::gantrain::{
    gan_losses, generate_corpus, init_discriminator, load_corpus, path_gradient, r1_penalty, save_corpus,
    training_shapes, DiscConfig, PathLengthState, TrainConfig, Trainer,
};
use meshfield::generator::ModelConfig;
use meshfield::model::Model;
use meshfield::render::Image;
use rand::Rng;

fn tiny_model(seed: u64) -> Model {
    Model::init(ModelConfig {
        levels: 2,
        enc_channels: vec![4, 8],
        dec_channels: vec![8, 6],
        z_dim: 8,
        w_dim: 8,
        mapping_layers: 2,
        aux_dim: 8,
        field_hidden: 8,
        seed,
    })
    .unwrap()
}

fn tiny_train_cfg(size: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        image_size: size,
        views_per_shape: 2,
        n_shapes: 2,
        disc_channels: vec![4, 8],
        r1_interval: 2,
        pl_interval: 2,
        iters: 3,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_trainer(seed: u64) -> Trainer {
    let cfg = tiny_train_cfg(16, seed);
    let shapes = training_shapes(cfg.n_shapes, 2, seed + 1000).unwrap();
    let reals = generate_corpus(6, 16, seed + 2000).unwrap();
    Trainer::new(cfg, tiny_model(seed), shapes, reals).unwrap()
}

fn solid(size: usize, rgb: [f32; 3]) -> Image {
    let mut img = Image::zeros(size, size, 3);
    for c in 0..3 {
        img.data[c * size * size..(c + 1) * size * size].fill(rgb[c]);
    }
    img
}

fn batch(img: &Image, n: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * img.data.len());
    for _ in 0..n {
        data.extend_from_slice(&img.data);
    }
    Tensor::new(vec![n, 3, img.height, img.width], data).unwrap()
}

#[test]
fn softplus_losses_match_closed_forms() {
    let ln2 = std::f32::consts::LN_2;
    let (d, g) = gan_losses(&[0.0, 0.0], &[0.0, 0.0, 0.0]);
    assert!((d - 2.0 * ln2).abs() < 1e-6 && (g - ln2).abs() < 1e-6);
    let (_, g) = gan_losses(&[0.0], &[40.0]);
    assert!(g < 1e-12);
    // softplus(x) = ln(1 + e^x) evaluated directly for moderate logits.
    let (real, fake) = ([0.7f32, -1.2], [0.3f32, 2.0]);
    let sp = |x: f32| (1.0 + (x as f64).exp()).ln();
    let want_d = (sp(-0.7) + sp(1.2)) / 2.0 + (sp(0.3) + sp(2.0)) / 2.0;
    let want_g = (sp(-0.3) + sp(-2.0)) / 2.0;
    let (d, g) = gan_losses(&real, &fake);
    assert!((d as f64 - want_d).abs() < 1e-6 && (g as f64 - want_g).abs() < 1e-6);
}

#[test]
fn r1_of_a_linear_discriminator_is_the_weight_norm() {
    let mut rng = common::rng(4);
    for size in [2usize, 4, 8] {
        let cfg = DiscConfig {
            channels: vec![],
            image_size: size,
        };
        let p = init_discriminator(&cfg, "d", &mut rng).unwrap();
        let n = rng.random_range(1..4);
        let mut tape = Tape::new();
        let mut b = Binding::new(&p, Trainable::Nothing);
        let x = tape.leaf(&Tensor::randn(vec![n, 3, size, size], 1.0, &mut rng));
        let r1 = r1_penalty(&mut tape, &mut b, &cfg, "d", x).unwrap();
        // The stored head is scaled by 1/sqrt(fan_in) at use.
        let fan = (3 * size * size) as f64;
        let want: f64 = p.get("d.out.weight").unwrap().data().iter().map(|&w| (w as f64).powi(2) / fan).sum();
        assert!((tape.scalar(r1) as f64 - want).abs() < 1e-5, "size {size}");
    }
}

#[test]
fn discriminator_step_touches_only_discriminator_weights() {
    let mut t = tiny_trainer(1);
    let model_before = t.model.params.clone();
    let disc_before = t.disc.clone();
    let real = batch(&solid(16, [1.0, -1.0, -1.0]), 2);
    let fake = batch(&solid(16, [-1.0, -1.0, 1.0]), 2);
    t.discriminator_step(&real, &fake, &fake, true).unwrap();
    assert_eq!(t.model.params, model_before);
    for (name, tensor) in t.disc.iter() {
        assert!(name.starts_with("disc."));
        assert_ne!(tensor.data(), disc_before.get(name).unwrap().data(), "{name} did not move");
    }
}

#[test]
fn learning_rate_groups_route_updates() {
    let mut frozen_g = tiny_trainer(2);
    frozen_g.cfg.encoder_lr = 0.0;
    frozen_g.cfg.generator_lr = 0.0;
    frozen_g.cfg.field_lr = 0.0;
    let before = frozen_g.model.params.clone();
    let disc_before = frozen_g.disc.clone();
    frozen_g.train_step().unwrap();
    frozen_g.train_step().unwrap();
    assert_eq!(frozen_g.model.params, before);
    assert_ne!(frozen_g.disc, disc_before);

    let mut frozen_d = tiny_trainer(2);
    frozen_d.cfg.disc_lr = 0.0;
    let before = frozen_d.model.params.clone();
    let disc_before = frozen_d.disc.clone();
    frozen_d.train_step().unwrap();
    assert_eq!(frozen_d.disc, disc_before);
    let changed: Vec<&str> = frozen_d
        .model
        .params
        .iter()
        .filter(|(n, t)| t.data() != before.get(n).unwrap().data())
        .map(|(n, _)| n)
        .collect();
    assert!(changed.iter().any(|n| n.starts_with("gen.")));
    assert!(changed.iter().any(|n| n.starts_with("psi.")));
}

#[test]
fn separable_colours_are_learned_by_the_discriminator() {
    let mut t = tiny_trainer(3);
    t.cfg.r1_weight = 0.0;
    let mut rng = common::rng(3);
    let mut last = 0.0;
    for step in 0..200 {
        let jitter = |rng: &mut rand_chacha::ChaCha8Rng, base: [f32; 3]| base.map(|c| c + rng.random_range(-0.2..0.2));
        let r = solid(16, jitter(&mut rng, [0.8, -0.8, -0.8]));
        let f = solid(16, jitter(&mut rng, [-0.8, -0.8, 0.8]));
        let (_, _, acc) = t.discriminator_step(&batch(&r, 2), &batch(&f, 2), &batch(&f, 2), false).unwrap();
        last = acc;
        if step > 20 && acc > 0.9 {
            break;
        }
    }
    assert!(last > 0.9, "accuracy {last}");
}

#[test]
fn path_gradient_of_a_linear_generator_is_the_transpose_product() {
    let mut rng = common::rng(8);
    let (n_in, n_out) = (5, 7);
    let a = Tensor::randn(vec![n_in, n_out], 1.0, &mut rng);
    let w0 = Tensor::randn(vec![1, n_in], 1.0, &mut rng);
    let y = Tensor::randn(vec![1, n_out], 1.0, &mut rng);
    let mut tape = Tape::new();
    let w = tape.param(vec![1, n_in], w0.data().to_vec()).unwrap();
    let av = tape.leaf(&a);
    let out = tape.matmul(w, av).unwrap();
    let g = path_gradient(tape, w, out, y.data()).unwrap();
    for i in 0..n_in {
        let want: f64 = (0..n_out).map(|j| a.data()[i * n_out + j] as f64 * y.data()[j] as f64).sum();
        assert!((g[i] as f64 - want).abs() < 1e-5);
    }
}

#[test]
fn path_length_running_mean_follows_its_recurrence() {
    let mut s = PathLengthState::default();
    let mut ema = 0.0f64;
    for lengths in [[1.0f32, 3.0], [2.0, 2.0], [5.0, 1.0]] {
        let mean = (lengths[0] + lengths[1]) as f64 / 2.0;
        ema += 0.01 * (mean - ema);
        let want = lengths.iter().map(|&l| (l as f64 - ema).powi(2)).sum::<f64>() / 2.0;
        let pen = s.update(&lengths);
        assert!((s.ema as f64 - ema).abs() < 1e-6 && (pen as f64 - want).abs() < 1e-5);
    }
}

#[test]
fn short_training_run_is_finite_and_reproducible() {
    let run = || {
        let mut t = tiny_trainer(5);
        let trace = t.train(None).unwrap();
        (trace, t.model.params, t.disc)
    };
    let (a, ma, da) = run();
    let (b, mb, db) = run();
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    assert_eq!(da, db);
    assert!(a.iter().all(|m| m.d_loss.is_finite() && m.g_loss.is_finite()));
    assert!(a[0].r1.is_some() && a[0].pl.is_some() && a[1].r1.is_none());
}

#[test]
fn corpus_round_trips_through_png() {
    let dir = tempfile::tempdir().unwrap();
    let imgs = generate_corpus(3, 12, 4).unwrap();
    save_corpus(dir.path(), &imgs).unwrap();
    let back = load_corpus(dir.path()).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in imgs.iter().zip(&back) {
        assert!(common::max_abs_diff(&a.data, &b.data) <= 1.0 / 255.0 + 1e-6);
    }
}

#[test]
fn mismatched_corpus_size_is_rejected() {
    let cfg = tiny_train_cfg(16, 0);
    let shapes = training_shapes(1, 2, 0).unwrap();
    let reals = generate_corpus(2, 8, 0).unwrap();
    assert!(Trainer::new(cfg, tiny_model(0), shapes, reals).is_err());
}
