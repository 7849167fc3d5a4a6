use criterion::{black_box, criterion_group, criterion_main, Criterion};
use salforge::eval::{pointing_study, PointingConfig};
use salforge::net::{build_model, ModelConfig};
use salforge::saliency::{compute_suite, Method, SaliencyOptions, Target};
use salforge::synthdata::{generate_samples, GenSpec, DEFECT};

fn suite(c: &mut Criterion) {
    let samples = generate_samples(&GenSpec::preset("fobj", 8, 64, 3).unwrap()).unwrap();
    let defects: Vec<_> = samples.into_iter().filter(|s| s.label == DEFECT).collect();
    let methods = Method::benchmark_set();
    let options = SaliencyOptions::default();
    for arch in ["micro-res", "micro-eff"] {
        let m = build_model(&ModelConfig::stock(arch, (64, 64)).unwrap(), 0).unwrap();
        c.bench_function(&format!("{arch} full method suite, one image"), |bench| {
            bench.iter(|| {
                compute_suite(
                    &m,
                    black_box(&defects[0].image),
                    Target::Class(DEFECT),
                    &methods,
                    &options,
                )
                .unwrap()
            })
        });
        let config = PointingConfig {
            tau: 4,
            ..PointingConfig::default()
        };
        c.bench_function(&format!("{arch} pointing study, 8 images"), |bench| {
            bench.iter(|| {
                pointing_study(&m, black_box(&defects), &methods, &config, &options).unwrap()
            })
        });
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = suite
}
criterion_main!(benches);
