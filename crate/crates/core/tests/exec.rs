//! Both execution paths must give bit-identical results. Kept to a single
//! test because the execution mode is process-wide.

use dnorm_core::denoisers::{ConditionBundle, GaussianMixture, GaussianMixtureOracle, Mlp};
use dnorm_core::exec::{self, Execution};
use dnorm_core::integrate::{integrate_depth, normals_to_gradients, IntegrationParams};
use dnorm_core::losses::NoiseSharing;
use dnorm_core::metrics::{ensemble_variance_curve, pixelwise_variance};
use dnorm_core::rng::seeded;
use dnorm_core::samplers::{make_substep_grid, ddim_sample, SamplerConfig};
use dnorm_core::task::{scene_pixels, ToyTask, YosoSource};
use dnorm_core::toygen::heightfield_normal_map;
use dnorm_core::train::{train_denoiser, TrainConfig};
use dnorm_core::{LatentField, NoiseSchedule, NormalMap};

#[derive(Debug, PartialEq)]
struct Outputs {
    params: Vec<f64>,
    losses: Vec<f64>,
    samples: LatentField,
    variance: Vec<f64>,
    curve: Vec<(usize, f64)>,
    depth: Vec<f64>,
}

fn workload() -> Outputs {
    let sched = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
    let task = ToyTask::default();
    let scene = task.scene(2).unwrap();
    let pixels = scene_pixels(&scene).unwrap();
    let source = YosoSource { pixels: &pixels, sched: &sched, t_plus_index: 400, lambda: 0.4, sharing: NoiseSharing::Independent };
    let mut net = Mlp::new(task.yoso_spec(400), 1).unwrap();
    let report = train_denoiser(&mut net, &source, &TrainConfig { epochs: 2, steps_per_epoch: 20, batch_size: 64, lr: 1e-3, seed: 3 }).unwrap();

    let oracle = GaussianMixtureOracle::new(GaussianMixture::symmetric_pair(2.0, 0.1).unwrap(), sched.clone());
    let x = LatentField::standard_normal(100, 100, 1, &mut seeded(4));
    let grid = make_substep_grid(999, 20).unwrap();
    let cfg = SamplerConfig { tau: 0.3, seed: 5, ..Default::default() };
    let samples = ddim_sample(&x, &grid, &oracle, &ConditionBundle::unconditional(), &cfg, &sched).unwrap().into_prediction();

    let runs: Vec<NormalMap> = (0..6)
        .map(|i| {
            let v = LatentField::standard_normal(8, 8, 3, &mut seeded(10 + i));
            NormalMap::from_latent(&v, None).unwrap()
        })
        .collect();

    let hf = dnorm_core::toygen::make_heightfield(6, 5, 32, 32).unwrap();
    let mut g = normals_to_gradients(&heightfield_normal_map(&hf), 0.05).unwrap();
    // split the mask so two components are solved concurrently
    for r in 0..32 {
        g.mask[r * 32 + 16] = false;
    }
    let depth = integrate_depth(&g, &IntegrationParams::default()).unwrap().depth.depth;

    Outputs {
        params: net.params().to_vec(),
        losses: report.epoch_losses,
        samples,
        variance: pixelwise_variance(&runs).unwrap().variance,
        curve: ensemble_variance_curve(&runs).unwrap(),
        depth,
    }
}

#[test]
fn sequential_and_parallel_paths_agree_bitwise() {
    exec::set_mode(Execution::Sequential);
    assert_eq!(exec::mode(), Execution::Sequential);
    let seq = workload();
    exec::set_mode(Execution::Parallel);
    let par = workload();
    assert_eq!(seq, par);

    let f = |i: usize| (i as f64).sqrt().sin();
    assert_eq!(exec::map_range_with(Execution::Sequential, 1000, f), exec::map_range_with(Execution::Parallel, 1000, f));
}
