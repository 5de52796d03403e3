use dnorm_core::denoisers::GaussianMixture;
use dnorm_core::integrate::{depth_rmse, integrate_depth, normals_to_gradients, DepthField, IntegrationParams, DEFAULT_Z_FLOOR};
use dnorm_core::toygen::{
    heightfield_normal_map, make_heightfield, make_heightfield_with, make_scene, render_shading, sample_gaussian_mixture,
    HeightField, HeightFieldParams,
};
use statrs::distribution::{ChiSquared, ContinuousCDF};

#[test]
fn standard_normal_draws_have_unit_moments() {
    let xs = sample_gaussian_mixture(&GaussianMixture::single(0.0, 1.0).unwrap(), 100_000, 17);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() < 0.02, "{mean}");
    assert!((var - 1.0).abs() < 0.03, "{var}");
    assert!(sample_gaussian_mixture(&GaussianMixture::single(0.0, 1.0).unwrap(), 0, 1).is_empty());
}

#[test]
fn equal_modes_are_hit_equally() {
    let gm = GaussianMixture::symmetric_pair(2.0, 0.3).unwrap();
    let xs = sample_gaussian_mixture(&gm, 100_000, 4);
    let frac = xs.iter().filter(|&&x| x > 0.0).count() as f64 / xs.len() as f64;
    assert!((frac - 0.5).abs() < 0.01, "{frac}");
}

#[test]
fn unequal_weights_set_component_frequencies() {
    let gm = GaussianMixture::new(vec![0.2, 0.5, 0.3], vec![-10.0, 0.0, 10.0], vec![0.5, 0.5, 0.5]).unwrap();
    let xs = sample_gaussian_mixture(&gm, 100_000, 8);
    for (lo, hi, w) in [(-20.0, -5.0, 0.2), (-5.0, 5.0, 0.5), (5.0, 20.0, 0.3)] {
        let frac = xs.iter().filter(|&&x| x > lo && x < hi).count() as f64 / xs.len() as f64;
        assert!((frac - w).abs() < 0.01, "{frac} vs {w}");
    }
}

#[test]
fn bump_centres_are_uniform_on_the_square() {
    // 10x10 cells, one bump per field, 10^4 fields: Pearson chi-squared
    // with 99 degrees of freedom, rejected only above the 99% quantile.
    let cells = 10;
    let mut counts = vec![0usize; cells * cells];
    let fields = 10_000;
    for seed in 0..fields {
        let hf = make_heightfield(seed, 1, 4, 4).unwrap();
        let b = hf.bumps[0];
        assert!((0.0..1.0).contains(&b.cx) && (0.0..1.0).contains(&b.cy));
        let (i, j) = ((b.cx * cells as f64) as usize, (b.cy * cells as f64) as usize);
        counts[j * cells + i] += 1;
    }
    let expected = fields as f64 / (cells * cells) as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let critical = ChiSquared::new((cells * cells - 1) as f64).unwrap().inverse_cdf(0.99);
    assert!(stat < critical, "chi2 = {stat}, critical {critical}");
}

#[test]
fn generators_are_pure_functions_of_the_seed() {
    let p = HeightFieldParams::high_frequency();
    assert_eq!(make_heightfield_with(5, 7, 8, 9, &p).unwrap(), make_heightfield_with(5, 7, 8, 9, &p).unwrap());
    assert_ne!(make_heightfield(5, 7, 8, 9).unwrap().bumps, make_heightfield(6, 7, 8, 9).unwrap().bumps);
    assert_eq!(make_scene(3, 4, 8, 8, &p).unwrap(), make_scene(3, 4, 8, 8, &p).unwrap());
    assert!(make_heightfield(1, 2, 0, 4).is_err());
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let h = 1e-5;
    for seed in 0..20 {
        let hf = make_heightfield_with(seed, 6, 8, 8, &HeightFieldParams::high_frequency()).unwrap();
        for (x, y) in [(0.1, 0.2), (0.5, 0.5), (0.73, 0.31), (0.9, 0.95)] {
            let (gx, gy) = hf.gradient(x, y);
            let fx = (hf.eval(x + h, y) - hf.eval(x - h, y)) / (2.0 * h);
            let fy = (hf.eval(x, y + h) - hf.eval(x, y - h)) / (2.0 * h);
            assert!((gx - fx).abs() < 1e-5 && (gy - fy).abs() < 1e-5, "seed {seed}: ({gx},{gy}) vs ({fx},{fy})");
        }
    }
}

#[test]
fn plane_z_equals_x() {
    let hf = HeightField::new(vec![], [1.0, 0.0, 0.0], 4, 5).unwrap();
    let n = heightfield_normal_map(&hf);
    let s = 0.5f64.sqrt();
    for v in n.normals() {
        assert!((v[0] + s).abs() < 1e-12 && v[1].abs() < 1e-12 && (v[2] - s).abs() < 1e-12);
    }
    let shade = render_shading(&n, [0.0, 0.0, 1.0], 0.0).unwrap();
    assert!(shade.values().iter().all(|&v| (v - s).abs() < 1e-12));
}

#[test]
fn normals_are_unit_and_shading_bounded() {
    for seed in 0..10 {
        let scene = make_scene(seed, 8, 16, 16, &HeightFieldParams::default()).unwrap();
        for v in scene.normals.normals() {
            assert!(((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt() - 1.0).abs() < 1e-9);
        }
        assert!(scene.shading.values().iter().all(|s| (0.0..=1.0).contains(s)));
        assert!(scene.semantic.values().iter().all(|s| (0.0..=1.0).contains(s)));
    }
}

#[test]
fn integrating_the_normals_recovers_the_height_field() {
    for seed in 0..5 {
        let hf = make_heightfield(seed, 6, 24, 24).unwrap();
        let normals = heightfield_normal_map(&hf);
        let g = normals_to_gradients(&normals, DEFAULT_Z_FLOOR).unwrap();
        let params = IntegrationParams { dx: 1.0 / 24.0, dy: 1.0 / 24.0, ..Default::default() };
        let out = integrate_depth(&g, &params).unwrap();
        assert!(out.converged());
        let truth = hf.height_map().into_values();
        let range = truth.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - truth.iter().cloned().fold(f64::INFINITY, f64::min);
        let gt = DepthField::new(24, 24, truth, vec![true; 576]).unwrap();
        let rmse = depth_rmse(&out.depth, &gt).unwrap();
        assert!(rmse < 0.01 * range, "seed {seed}: rmse {rmse}, range {range}");
    }
}
