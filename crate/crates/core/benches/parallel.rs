//! Sequential fallback against the rayon path on the three hot loops:
//! batch gradients, oracle denoising of a large field and integration of a
//! multi-component mask.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use dnorm_core::denoisers::{ConditionBundle, Denoiser, GaussianMixture, GaussianMixtureOracle, Mlp, PixelExample};
use dnorm_core::exec::{self, Execution};
use dnorm_core::integrate::{integrate_depth, normals_to_gradients, IntegrationParams};
use dnorm_core::losses::NoiseSharing;
use dnorm_core::metrics::pixelwise_variance;
use dnorm_core::rng::seeded;
use dnorm_core::task::{scene_pixels, ToyTask, YosoSource};
use dnorm_core::toygen::{heightfield_normal_map, make_heightfield};
use dnorm_core::train::ExampleSource;
use dnorm_core::{LatentField, NoiseSchedule, NormalMap};
use std::hint::black_box;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gradient(c: &mut Criterion) {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let task = ToyTask::default();
    let pixels = scene_pixels(&task.scene(1).unwrap()).unwrap();
    let src = YosoSource { pixels: &pixels, sched: &sched, t_plus_index: 400, lambda: 0.4, sharing: NoiseSharing::Independent };
    let batch: Vec<PixelExample> = src.batch(256, &mut seeded(2));
    let net = Mlp::new(task.yoso_spec(400), 3).unwrap();
    let mut g = c.benchmark_group("batch_gradient_256");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| black_box(net.loss_and_gradient(black_box(&batch)).unwrap()))
        });
    }
    g.finish();
}

fn oracle(c: &mut Criterion) {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let oracle = GaussianMixtureOracle::new(GaussianMixture::new(vec![0.3, 0.7], vec![-1.0, 2.0], vec![0.2, 0.5]).unwrap(), sched);
    let x = LatentField::standard_normal(128, 128, 3, &mut seeded(4));
    let cond = ConditionBundle::unconditional();
    let mut g = c.benchmark_group("oracle_predict_128x128x3");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| black_box(oracle.predict(black_box(&x), 300, &cond).unwrap()))
        });
    }
    g.finish();
}

fn variance(c: &mut Criterion) {
    let runs: Vec<NormalMap> = (0..10)
        .map(|i| NormalMap::from_latent(&LatentField::standard_normal(64, 64, 3, &mut seeded(i)), None).unwrap())
        .collect();
    let mut g = c.benchmark_group("pixelwise_variance_10x64x64");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| black_box(pixelwise_variance(black_box(&runs)).unwrap()))
        });
    }
    g.finish();
}

fn integration(c: &mut Criterion) {
    let hf = make_heightfield(5, 12, 64, 64).unwrap();
    let mut grads = normals_to_gradients(&heightfield_normal_map(&hf), 0.05).unwrap();
    // four quadrants, solved independently
    for i in 0..64 * 64 {
        if i % 64 == 32 || i / 64 == 32 {
            grads.mask[i] = false;
        }
    }
    let params = IntegrationParams { dx: 1.0 / 64.0, dy: 1.0 / 64.0, ..Default::default() };
    let mut g = c.benchmark_group("integrate_4_components_64x64");
    for (name, mode) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            exec::set_mode(mode);
            b.iter(|| black_box(integrate_depth(black_box(&grads), &params).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, gradient, oracle, variance, integration);
criterion_main!(benches);
