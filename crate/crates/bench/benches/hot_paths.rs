//! Criterion benchmarks for the paths that dominate a training run: the
//! contrastive loss, the encoder forward pass, view sampling, and CAM
//! computation.

use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::{Array2, Array3, Array4};
use rand::Rng;

use myelin::data::{sample_two_views, AugmentationConfig, Pixels};
use myelin::nn::{ConvEncoder, EncoderSpec, Mode};
use myelin::rng::rng_from_seed;
use myelin::saliency::{grad_cam, grad_cam_pp, ActivationCapture};
use myelin::ssl::{l2_normalize_rows, nt_xent_loss, EmbeddingBatch};

fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = rng_from_seed(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

fn bench_nt_xent(c: &mut Criterion) {
    let v1 = l2_normalize_rows(&random_matrix(32, 128, 1)).unwrap().0;
    let v2 = l2_normalize_rows(&random_matrix(32, 128, 2)).unwrap().0;
    let batch = EmbeddingBatch::from_views(&v1, &v2).unwrap();
    c.bench_function("nt_xent_32x128", |b| {
        b.iter(|| nt_xent_loss(std::hint::black_box(&batch), 0.5).unwrap())
    });
}

fn bench_encoder_forward(c: &mut Criterion) {
    let spec = EncoderSpec::tiny();
    let mut rng = rng_from_seed(3);
    let mut encoder = ConvEncoder::new(spec, &mut rng).unwrap();
    let mut data_rng = rng_from_seed(4);
    let x = Array4::from_shape_fn((8, 3, 32, 32), |_| data_rng.random_range(-1.0..1.0));
    c.bench_function("tiny_encoder_forward_8x32x32", |b| {
        b.iter(|| encoder.forward(std::hint::black_box(&x), Mode::Eval).unwrap())
    });
}

fn bench_two_views(c: &mut Criterion) {
    let mut rng = rng_from_seed(5);
    let img = Pixels::from_shape_fn((64, 64), |_| rng.random_range(0.0..1.0));
    let cfg = AugmentationConfig::ssl_default();
    c.bench_function("sample_two_views_64->32", |b| {
        let mut seed = 0u64;
        b.iter(|| {
            seed = seed.wrapping_add(1);
            sample_two_views(std::hint::black_box(&img), &cfg, seed, 32)
        })
    });
}

fn bench_grad_cam(c: &mut Criterion) {
    let mut rng = rng_from_seed(6);
    let acts = Array3::from_shape_fn((128, 8, 8), |_| rng.random_range(0.0..1.0));
    let grads = Array3::from_shape_fn((128, 8, 8), |_| rng.random_range(-1.0..1.0));
    let capture = ActivationCapture::new("bench", acts, grads, 0).unwrap();
    c.bench_function("grad_cam_128x8x8", |b| {
        b.iter(|| {
            let cap = std::hint::black_box(&capture);
            (grad_cam(cap).unwrap(), grad_cam_pp(cap).unwrap())
        })
    });
}

criterion_group!(benches, bench_nt_xent, bench_encoder_forward, bench_two_views, bench_grad_cam);
criterion_main!(benches);
