use criterion::{black_box, criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use salforge::kernels::{conv2d_backward, conv2d_forward, gaussian_smooth};
use salforge::net::{build_model, GradMode, Mode, ModelConfig};
use salforge::Tensor;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn conv(c: &mut Criterion) {
    let x = random(&[16, 32, 32], 1);
    let w = random(&[32, 16, 3, 3], 2);
    let b = random(&[32], 3);
    let up = random(&[32, 32, 32], 4);
    c.bench_function("conv3x3 16->32 @32 forward", |bench| {
        bench.iter(|| conv2d_forward(black_box(&x), &w, &b, 1, 1).unwrap())
    });
    c.bench_function("conv3x3 16->32 @32 backward", |bench| {
        bench.iter(|| conv2d_backward(black_box(&x), &w, &up, 1, 1).unwrap())
    });
}

fn model_step(c: &mut Criterion) {
    for arch in ["micro-res", "micro-eff"] {
        let m = build_model(&ModelConfig::stock(arch, (64, 64)).unwrap(), 0).unwrap();
        let xs: Vec<Tensor> = (0..16).map(|i| random(&[1, 64, 64], 10 + i)).collect();
        let seeds: Vec<Tensor> = (0..16).map(|i| random(&[2], 40 + i)).collect();
        c.bench_function(&format!("{arch} batch16 @64 forward+backward"), |bench| {
            bench.iter(|| {
                let trace = m.forward_batch(black_box(&xs), Mode::Train).unwrap();
                m.backward_batch(&trace, seeds.clone(), GradMode::Standard, &[])
                    .unwrap()
            })
        });
    }
}

fn smoothing(c: &mut Criterion) {
    let map = random(&[64, 64], 5);
    c.bench_function("gaussian smooth sigma1 @64", |bench| {
        bench.iter(|| gaussian_smooth(black_box(&map), 1.0).unwrap())
    });
}

criterion_group!(benches, conv, model_step, smoothing);
criterion_main!(benches);
