use dnorm_core::denoisers::{
    Activation, AsEps, ConditionBundle, ConditionalGaussianOracle, Denoiser, GaussianMixture, GaussianMixtureOracle, Mlp,
    MlpSpec, Parameterization, PixelExample,
};
use dnorm_core::rng::seeded;
use dnorm_core::train::{train_denoiser, FixedDataset, TrainConfig};
use dnorm_core::{LatentField, NoiseSchedule};
use rand::Rng;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

/// E[x0 | x_t] by brute-force trapezoid quadrature of prior times likelihood.
fn quadrature_posterior_mean(gm: &GaussianMixture, x: f64, ab: f64, points: usize) -> f64 {
    let lo = gm.means().iter().zip(gm.stds()).map(|(m, s)| m - 12.0 * s).fold(f64::INFINITY, f64::min);
    let hi = gm.means().iter().zip(gm.stds()).map(|(m, s)| m + 12.0 * s).fold(f64::NEG_INFINITY, f64::max);
    let h = (hi - lo) / (points - 1) as f64;
    let log_joint = |x0: f64| {
        let prior = gm
            .weights()
            .iter()
            .zip(gm.means())
            .zip(gm.stds())
            .map(|((w, m), s)| w / s * (-0.5 * ((x0 - m) / s).powi(2)).exp())
            .sum::<f64>();
        let d = x - ab.sqrt() * x0;
        prior.ln() - 0.5 * d * d / (1.0 - ab)
    };
    let logs: Vec<f64> = (0..points).map(|i| log_joint(lo + i as f64 * h)).collect();
    let max = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for (i, l) in logs.iter().enumerate() {
        let edge = if i == 0 || i + 1 == points { 0.5 } else { 1.0 };
        let p = edge * (l - max).exp();
        num += p * (lo + i as f64 * h);
        den += p;
    }
    num / den
}

fn random_mixture(r: &mut impl Rng) -> GaussianMixture {
    let k = r.random_range(1..=4);
    let raw: Vec<f64> = (0..k).map(|_| r.random_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let means = (0..k).map(|_| r.random_range(-3.0..3.0)).collect();
    let stds = (0..k).map(|_| r.random_range(0.2..1.2)).collect();
    GaussianMixture::new(weights, means, stds).unwrap()
}

#[test]
fn mixture_oracle_matches_quadrature() {
    let s = sched();
    let mut r = seeded(11);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let gm = random_mixture(&mut r);
        for _ in 0..10 {
            let t = r.random_range(0..1000);
            let ab = s.alpha_bar(t).unwrap();
            // a plausible x_t: a data point pushed through the forward kernel
            let k = r.random_range(0..gm.components());
            let x0 = gm.means()[k] + gm.stds()[k] * r.random_range(-2.0..2.0);
            let x = ab.sqrt() * x0 + (1.0 - ab).sqrt() * r.random_range(-2.0..2.0);
            let exact = gm.posterior_mean(x, ab);
            let quad = quadrature_posterior_mean(&gm, x, ab, 10_000);
            worst = worst.max((exact - quad).abs());
        }
    }
    assert!(worst < 1e-6, "worst deviation {worst}");
}

#[test]
fn oracle_raster_prediction_is_elementwise() {
    let s = sched();
    let gm = GaussianMixture::new(vec![0.3, 0.7], vec![-1.0, 1.5], vec![0.4, 0.3]).unwrap();
    let oracle = GaussianMixtureOracle::new(gm.clone(), s.clone());
    let x = LatentField::standard_normal(9, 1000, 1, &mut seeded(2));
    let out = oracle.predict(&x, 250, &ConditionBundle::unconditional()).unwrap();
    let ab = s.alpha_bar(250).unwrap();
    for (o, v) in out.values().iter().zip(x.values()) {
        assert_eq!(*o, gm.posterior_mean(*v, ab));
    }
}

#[test]
fn eps_wrapper_is_coherent_with_the_x0_oracle() {
    let s = sched();
    let gm = GaussianMixture::symmetric_pair(2.0, 0.1).unwrap();
    let oracle = GaussianMixtureOracle::new(gm, s.clone());
    let wrapped = AsEps::new(oracle.clone(), s.clone()).unwrap();
    assert_eq!(wrapped.kind(), Parameterization::Eps);
    let cond = ConditionBundle::unconditional();
    let mut r = seeded(5);
    for _ in 0..50 {
        let t = r.random_range(0..1000);
        let x = LatentField::standard_normal(4, 4, 1, &mut r).scale(3.0).unwrap();
        let x0 = oracle.predict(&x, t, &cond).unwrap();
        let eps = wrapped.predict(&x, t, &cond).unwrap();
        let back = s.eps_to_x0(&x, &eps, t).unwrap();
        for (a, b) in back.values().iter().zip(x0.values()) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "t={t}: {a} vs {b}");
        }
    }
    assert!(AsEps::new(wrapped, s).is_err());
}

#[test]
fn conditional_oracle_agrees_with_a_single_component_mixture() {
    let s = sched();
    let cond_oracle = ConditionalGaussianOracle::new(0.3, s.clone()).unwrap();
    let mu = 0.8;
    let gm_oracle = GaussianMixtureOracle::new(GaussianMixture::single(mu, 0.3).unwrap(), s.clone());
    let x = LatentField::standard_normal(3, 3, 1, &mut seeded(9));
    let cond = ConditionBundle::image(LatentField::filled(3, 3, 1, mu));
    for t in [0, 10, 400, 999] {
        let a = cond_oracle.predict(&x, t, &cond).unwrap();
        let b = gm_oracle.predict(&x, t, &ConditionBundle::unconditional()).unwrap();
        for (u, v) in a.values().iter().zip(b.values()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

fn injected_spec() -> MlpSpec {
    MlpSpec {
        kind: Parameterization::X0,
        latent_channels: 3,
        image_channels: 4,
        semantic_channels: 2,
        injection_hidden: 5,
        hidden: vec![8, 8],
        activation: Activation::Tanh,
        time_steps: 1000,
    }
}

#[test]
fn injection_branch_is_silent_until_its_projection_moves() {
    let mut net = Mlp::new(injected_spec(), 4).unwrap();
    assert!(net.injection_projection_is_zero());
    let mut r = seeded(1);
    let img = LatentField::standard_normal(5, 5, 4, &mut r);
    let sem = LatentField::standard_normal(5, 5, 2, &mut r);
    let x = LatentField::standard_normal(5, 5, 3, &mut r);
    let with = ConditionBundle::new(img.clone(), Some(sem), 1.0).unwrap();
    let without = ConditionBundle::image(img);
    let a = net.predict(&x, 300, &with).unwrap();
    assert_eq!(a, net.predict(&x, 300, &without).unwrap());

    let range = net.injection_projection_range().unwrap();
    for (k, p) in net.params_mut()[range].iter_mut().enumerate() {
        *p = 0.01 * (k as f64 + 1.0);
    }
    assert!(!net.injection_projection_is_zero());
    assert_ne!(net.predict(&x, 300, &with).unwrap(), a);
    assert_eq!(net.predict(&x, 300, &without).unwrap(), a);
}

#[test]
fn linear_network_converges_to_least_squares() {
    // y = w . image + b with identity activation and no hidden layer: the
    // normal equations give the optimum directly.
    let spec = MlpSpec {
        kind: Parameterization::X0,
        latent_channels: 1,
        image_channels: 2,
        semantic_channels: 0,
        injection_hidden: 0,
        hidden: vec![],
        activation: Activation::Identity,
        time_steps: 0,
    };
    let mut r = seeded(21);
    let data: Vec<PixelExample> = (0..40)
        .map(|_| {
            let image = vec![r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            let target = vec![0.7 * image[0] - 1.3 * image[1] + 0.25 + 0.1 * r.random_range(-1.0..1.0)];
            PixelExample { x: vec![0.0], t: 0, image, semantic: None, injection_scale: 0.0, target }
        })
        .collect();

    // Normal equations over features (x, i0, i1, 1); x is always 0 so its
    // weight stays at its initial value and drops out.
    let feats: Vec<[f64; 3]> = data.iter().map(|e| [e.image[0], e.image[1], 1.0]).collect();
    let mut a = [[0.0; 3]; 3];
    let mut b = [0.0; 3];
    for (f, e) in feats.iter().zip(&data) {
        for i in 0..3 {
            b[i] += f[i] * e.target[0];
            for j in 0..3 {
                a[i][j] += f[i] * f[j];
            }
        }
    }
    let solution = solve3(a, b);

    let mut net = Mlp::new(spec, 8).unwrap();
    let cfg = TrainConfig { epochs: 1, steps_per_epoch: 4000, batch_size: 40, lr: 1e-2, seed: 0 };
    train_denoiser(&mut net, &FixedDataset(data), &cfg).unwrap();
    // layout: weight row [w_x, w_i0, w_i1], then bias
    let p = net.params();
    let learned = [p[1], p[2], p[3]];
    let dist = learned.iter().zip(&solution).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
    assert!(dist < 1e-3, "learned {learned:?}, least squares {solution:?}");
}

fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let s: f64 = (row + 1..3).map(|k| a[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / a[row][row];
    }
    x
}
