use dnorm_core::denoisers::{Activation, ConditionBundle, Denoiser, Mlp, MlpSpec, Parameterization, PixelExample};
use dnorm_core::losses::{
    denoising_loss, loss_gradient, shrinkage_gate, yoso_shrinkage_loss, Branch, NoiseSharing, ShrinkageConfig, TargetKind,
};
use dnorm_core::rng::seeded;
use dnorm_core::{LatentField, NoiseSchedule, Result};
use rand::Rng;

fn sched() -> NoiseSchedule {
    NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap()
}

#[test]
fn gate_frequency_concentrates_at_lambda() {
    let mut r = seeded(123);
    let n = 100_000;
    let shrunk = (0..n).filter(|_| shrinkage_gate(0.4, &mut r) == Branch::Shrunk).count();
    let frac = shrunk as f64 / n as f64;
    assert!((frac - 0.4).abs() <= 0.005, "{frac}");
}

struct Constant(Parameterization, f64);

impl Denoiser for Constant {
    fn kind(&self) -> Parameterization {
        self.0
    }

    fn predict(&self, x: &LatentField, _t: usize, _c: &ConditionBundle) -> Result<LatentField> {
        Ok(LatentField::filled(x.height(), x.width(), x.channels(), self.1))
    }
}

#[test]
fn shrinkage_loss_tracks_the_gate() {
    let s = sched();
    let x0 = LatentField::filled(2, 2, 3, 0.5);
    let yoso = Constant(Parameterization::XtPlus { t_plus: 400 }, 0.0);
    let cond = ConditionBundle::unconditional();
    let mut r = seeded(3);
    let mut shrunk = 0;
    for _ in 0..2000 {
        let cfg = ShrinkageConfig::new(0.4, 0).unwrap();
        let l = yoso_shrinkage_loss(&yoso, &x0, 400, &cond, &cfg, &s, NoiseSharing::Independent, &mut r).unwrap();
        assert!(l.value >= 0.0);
        shrunk += usize::from(l.branch == Branch::Shrunk);
    }
    // binomial(2000, 0.4): sd ~ 22
    assert!((shrunk as i64 - 800).abs() < 110, "{shrunk}");
    assert!(yoso_shrinkage_loss(&yoso, &x0, 1000, &cond, &ShrinkageConfig::default(), &s, NoiseSharing::Independent, &mut r).is_err());
}

#[test]
fn eps_and_x0_losses_relate_by_snr_over_random_cases() {
    // For x0-form prediction x0_hat and eps_hat = x0_to_eps(x_t, x0_hat),
    // |eps_hat - eps|^2 = ab / (1 - ab) |x0_hat - x0|^2 elementwise.
    let s = sched();
    let mut r = seeded(77);
    let cond = ConditionBundle::unconditional();
    for _ in 0..200 {
        let t = r.random_range(1..1000);
        let ab = s.alpha_bar(t).unwrap();
        let x0 = LatentField::standard_normal(3, 3, 2, &mut r);
        let eps = LatentField::standard_normal(3, 3, 2, &mut r);
        let guess = r.random_range(-1.0..1.0);
        let x_t = s.forward_diffuse(&x0, t, &eps).unwrap();
        let x0_loss = denoising_loss(&Constant(Parameterization::X0, guess), TargetKind::X0, &x0, t, &eps, &cond, &s).unwrap();

        struct Converted(LatentField);
        impl Denoiser for Converted {
            fn kind(&self) -> Parameterization {
                Parameterization::Eps
            }
            fn predict(&self, _x: &LatentField, _t: usize, _c: &ConditionBundle) -> Result<LatentField> {
                Ok(self.0.clone())
            }
        }
        let eps_hat = s.x0_to_eps(&x_t, &LatentField::filled(3, 3, 2, guess), t).unwrap();
        let eps_loss = denoising_loss(&Converted(eps_hat), TargetKind::Eps, &x0, t, &eps, &cond, &s).unwrap();
        let expected = ab / (1.0 - ab) * x0_loss.value;
        assert!((eps_loss.value - expected).abs() <= 1e-9 * expected.max(1e-12), "t={t}");
    }
}

#[test]
fn loss_is_zero_only_for_exact_predictions() {
    let s = sched();
    let x0 = LatentField::filled(2, 3, 1, 0.25);
    let eps = LatentField::zeros(2, 3, 1);
    let cond = ConditionBundle::unconditional();
    let exact = denoising_loss(&Constant(Parameterization::X0, 0.25), TargetKind::X0, &x0, 10, &eps, &cond, &s).unwrap();
    assert_eq!(exact.value, 0.0);
    let off = denoising_loss(&Constant(Parameterization::X0, 0.25 + 1e-3), TargetKind::X0, &x0, 10, &eps, &cond, &s).unwrap();
    assert!(off.value > 0.0);
    let res = off.residuals.unwrap();
    let mean_sq = res.values().iter().map(|v| v * v).sum::<f64>() / res.len() as f64;
    assert_eq!(off.value, mean_sq);
    assert!(denoising_loss(&Constant(Parameterization::Eps, 0.0), TargetKind::X0, &x0, 10, &eps, &cond, &s).is_err());
}

fn spec(hidden: Vec<usize>, activation: Activation, semantic: usize) -> MlpSpec {
    MlpSpec {
        kind: Parameterization::X0,
        latent_channels: 2,
        image_channels: 3,
        semantic_channels: semantic,
        injection_hidden: 0,
        hidden,
        activation,
        time_steps: 100,
    }
}

fn example(r: &mut impl Rng, semantic: usize) -> PixelExample {
    PixelExample {
        x: (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
        t: r.random_range(0..100),
        image: (0..3).map(|_| r.random_range(-1.0..1.0)).collect(),
        semantic: (semantic > 0).then(|| (0..semantic).map(|_| r.random_range(-1.0..1.0)).collect()),
        injection_scale: 0.7,
        target: (0..2).map(|_| r.random_range(-1.0..1.0)).collect(),
    }
}

#[test]
fn zero_residual_batch_has_zero_gradient() {
    let net = Mlp::new(spec(vec![6, 6], Activation::Tanh, 2), 3).unwrap();
    let mut r = seeded(4);
    let batch: Vec<PixelExample> = (0..20)
        .map(|_| {
            let mut e = example(&mut r, 2);
            e.target = net.predict_pixel(&e.x, e.t, &e.image, e.semantic.as_deref(), e.injection_scale);
            e
        })
        .collect();
    let g = loss_gradient(&net, &batch).unwrap();
    assert_eq!(g.loss, 0.0);
    assert!(g.grad.iter().all(|&v| v == 0.0));
}

#[test]
fn single_linear_layer_gradient_is_the_least_squares_gradient() {
    // y = W u + b with u = (x, t/T, image). For mean loss over N examples and
    // C channels: dL/dW = 2/(N C) sum (y - target) u^T, dL/db = 2/(N C) sum (y - target).
    let net = Mlp::new(spec(vec![], Activation::Identity, 0), 9).unwrap();
    let mut r = seeded(10);
    let batch: Vec<PixelExample> = (0..13).map(|_| example(&mut r, 0)).collect();
    let g = loss_gradient(&net, &batch).unwrap();
    let p = net.params();
    let cols = 6;
    let (w, b) = (&p[..2 * cols], &p[2 * cols..2 * cols + 2]);
    let mut expected = vec![0.0; p.len()];
    let norm = 2.0 / (batch.len() * 2) as f64;
    for e in &batch {
        let mut u = e.x.clone();
        u.push(e.t as f64 / 100.0);
        u.extend(&e.image);
        for row in 0..2 {
            let y = b[row] + (0..cols).map(|c| w[row * cols + c] * u[c]).sum::<f64>();
            let d = y - e.target[row];
            for c in 0..cols {
                expected[row * cols + c] += norm * d * u[c];
            }
            expected[2 * cols + row] += norm * d;
        }
    }
    for (a, e) in g.grad.iter().zip(&expected) {
        assert!((a - e).abs() < 1e-12, "{a} vs {e}");
    }
}

#[test]
fn relu_network_gradient_matches_finite_differences() {
    let net = Mlp::new(spec(vec![7, 5], Activation::Relu, 0), 6).unwrap();
    let mut r = seeded(8);
    let batch: Vec<PixelExample> = (0..10).map(|_| example(&mut r, 0)).collect();
    let g = loss_gradient(&net, &batch).unwrap();
    let h = 1e-6;
    for i in 0..net.num_params() {
        let mut plus = net.clone();
        plus.params_mut()[i] += h;
        let mut minus = net.clone();
        minus.params_mut()[i] -= h;
        let fd = (plus.batch_loss(&batch).unwrap() - minus.batch_loss(&batch).unwrap()) / (2.0 * h);
        let scale = fd.abs().max(g.grad[i].abs()).max(1e-6);
        assert!((fd - g.grad[i]).abs() / scale < 1e-4, "param {i}: {fd} vs {}", g.grad[i]);
    }
}
