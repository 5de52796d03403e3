use crate::dataset::{self, read_mask, read_normals, read_raster, read_split, sidecar, write_normals, write_raster};
use crate::error::{CliError, CliResult};
use crate::settings::Settings;
use crate::{
    Cli, Command, EvaluateArgs, GenDataArgs, InferArgs, IntegrateArgs, OracleDemoArgs, SamplerArgs, ScheduleArgs,
    TrainArgs, TrainRefinerArgs, TrainYosoArgs, VarianceArgs,
};
use dnorm_core::config::KvConfig;
use dnorm_core::denoisers::{ConditionBundle, ConditionalGaussianOracle, Denoiser, GaussianMixture, GaussianMixtureOracle, Mlp, ShrunkOneShotOracle};
use dnorm_core::integrate::{depth_rmse, integrate_depth, mesh_obj, normals_to_gradients, DepthField, IntegrationParams, DEFAULT_TOL, DEFAULT_Z_FLOOR};
use dnorm_core::io::{encode_normal_8bit, load_checkpoint, save_checkpoint, write_ppm, FloatRaster};
use dnorm_core::losses::NoiseSharing;
use dnorm_core::metrics::{ensemble_variance_curve, evaluate, format_table, pixelwise_variance, VarianceReport};
use dnorm_core::rng::{derive_seed, substream};
use dnorm_core::samplers::{ddim_sample, ddpm_sample, make_substep_grid, sample_from_noise, SamplerConfig, DEFAULT_T_PLUS};
use dnorm_core::task::{latent_normals, raster_condition, raster_pixels, two_stage, yoso_only, LabelledPixel, RefinerSource, ToyTask, YosoSource};
use dnorm_core::toygen::{make_scene, HeightFieldParams};
use dnorm_core::train::{train_denoiser, TrainConfig, TrainReport};
use dnorm_core::{exec, LatentField, NoiseSchedule, NormalMap};
use log::info;
use std::fmt::Write as _;
use std::path::Path;

pub fn run(cli: &Cli) -> CliResult<()> {
    let config = cli.config.as_deref();
    match &cli.command {
        Command::GenData(a) => gen_data(a, config),
        Command::TrainYoso(a) => train_yoso(a, config),
        Command::TrainRefiner(a) => train_refiner(a, config),
        Command::Infer(a) => infer(a, config),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Variance(a) => variance(a, config),
        Command::Integrate(a) => integrate(a, config),
        Command::OracleDemo(a) => oracle_demo(a, config),
    }
}

fn schedule_flags(s: &mut Settings, a: &ScheduleArgs) {
    s.flag("T", a.timesteps)
        .flag("beta_start", a.beta_start)
        .flag("beta_end", a.beta_end)
        .flag("schedule_kind", a.schedule_kind.as_ref());
}

fn sampler_flags(s: &mut Settings, a: &SamplerArgs) {
    s.flag("tau", a.tau)
        .flag("num_steps", a.steps)
        .flag("t_plus", a.t_plus)
        .flag("yoso_input", a.yoso_input.as_ref());
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn gen_data(a: &GenDataArgs, config: Option<&Path>) -> CliResult<()> {
    let mut s = Settings::load(KvConfig::new(), config)?;
    s.flag("train", a.train)
        .flag("test", a.test)
        .flag("height", a.height)
        .flag("width", a.width)
        .flag("bumps", a.bumps)
        .switch("high_frequency", a.high_frequency);
    let d = ToyTask::default();
    let high_frequency = s.get("high_frequency", false)?;
    let task = ToyTask {
        height: s.get("height", d.height)?,
        width: s.get("width", d.width)?,
        n_bumps: s.get("bumps", d.n_bumps)?,
        bumps: if high_frequency { HeightFieldParams::high_frequency() } else { HeightFieldParams::default() },
        ..d
    };
    let counts = [("train", s.get("train", 32usize)?), ("test", s.get("test", 8usize)?)];
    if counts.iter().any(|(_, n)| *n == 0) {
        return Err(CliError::usage("both splits need at least one scene"));
    }
    for (k, (split, n)) in counts.iter().enumerate() {
        let scenes = task.scenes(derive_seed(a.seed, k as u64), *n)?;
        dataset::write_split(&a.out.join(split), &scenes)?;
        info!("wrote {n} {split} scenes");
    }
    let mut meta = KvConfig::new();
    meta.set("seed", a.seed);
    meta.set("train", counts[0].1);
    meta.set("test", counts[1].1);
    meta.set("height", task.height);
    meta.set("width", task.width);
    meta.set("bumps", task.n_bumps);
    meta.set("high_frequency", high_frequency);
    write_text(&a.out.join("dataset.cfg"), &meta.to_text())?;
    print!("{}", meta.to_text());
    Ok(())
}

struct Training {
    settings: Settings,
    task: ToyTask,
    sched: NoiseSchedule,
    cfg: TrainConfig,
    pixels: Vec<LabelledPixel>,
}

fn prepare_training(a: &TrainArgs, config: Option<&Path>, extra: impl FnOnce(&mut Settings)) -> CliResult<Training> {
    let mut s = Settings::load(KvConfig::new(), config)?;
    s.flag("epochs", a.epochs)
        .flag("steps_per_epoch", a.steps_per_epoch)
        .flag("batch_size", a.batch)
        .flag("lr", a.lr)
        .flag("hidden", a.hidden.as_ref());
    schedule_flags(&mut s, &a.schedule);
    extra(&mut s);
    let sched = NoiseSchedule::from_config(s.config())?;
    let d = ToyTask::default();
    let task = ToyTask {
        hidden: s.list("hidden", &d.hidden)?,
        injection_hidden: s.get("injection_hidden", d.injection_hidden)?,
        injection_scale: s.get("injection_scale", d.injection_scale)?,
        ..d
    };
    let cfg = TrainConfig {
        epochs: s.get("epochs", 4)?,
        steps_per_epoch: s.get("steps_per_epoch", 1000)?,
        batch_size: s.get("batch_size", 32)?,
        lr: s.get("lr", 1e-3)?,
        seed: derive_seed(a.seed, 1),
    };
    let mut pixels = Vec::new();
    for scene in read_split(&a.data.join("train"))? {
        pixels.extend(raster_pixels(&scene.shading, &scene.semantic, &scene.normals)?);
    }
    if pixels.is_empty() {
        return Err(CliError::usage("training split has no valid pixels"));
    }
    info!("{} training pixels", pixels.len());
    Ok(Training { settings: s, task, sched, cfg, pixels })
}

/// Records the effective settings of a finished run next to the checkpoint
/// and prints them.
fn finish_training(a: &TrainArgs, t: &Training, net: &Mlp, report: &TrainReport, mut meta: KvConfig) -> CliResult<()> {
    save_checkpoint(&a.out, net)?;
    meta.merge(&t.sched.to_config());
    meta.set("train_seed", a.seed);
    meta.set("epochs", t.cfg.epochs);
    meta.set("steps_per_epoch", t.cfg.steps_per_epoch);
    meta.set("batch_size", t.cfg.batch_size);
    meta.set("lr", t.cfg.lr);
    meta.set("hidden", t.task.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","));
    write_text(&sidecar(&a.out), &meta.to_text())?;
    meta.set("params", net.num_params());
    meta.set("steps", report.steps);
    for (i, l) in report.epoch_losses.iter().enumerate() {
        meta.set(&format!("epoch_{}_loss", i + 1), l);
    }
    print!("{}", meta.to_text());
    Ok(())
}

fn train_yoso(a: &TrainYosoArgs, config: Option<&Path>) -> CliResult<()> {
    let t = prepare_training(&a.common, config, |s| {
        s.flag("lambda", a.lambda).flag("t_plus", a.t_plus).switch("shared_noise", a.shared_noise);
    })?;
    let t_plus: usize = t.settings.get("t_plus", DEFAULT_T_PLUS)?;
    if t_plus == 0 || t_plus > t.sched.len() {
        return Err(CliError::usage(format!("t_plus must lie in 1..={}, got {t_plus}", t.sched.len())));
    }
    let lambda = t.settings.get("lambda", 0.4)?;
    let shared = t.settings.get("shared_noise", false)?;
    let mut net = Mlp::new(t.task.yoso_spec(t_plus - 1), derive_seed(a.common.seed, 0))?;
    let src = YosoSource {
        pixels: &t.pixels,
        sched: &t.sched,
        t_plus_index: t_plus - 1,
        lambda,
        sharing: if shared { NoiseSharing::Shared } else { NoiseSharing::Independent },
    };
    let report = train_denoiser(&mut net, &src, &t.cfg)?;
    let mut meta = KvConfig::new();
    meta.set("role", "yoso");
    meta.set("t_plus", t_plus);
    meta.set("lambda", lambda);
    meta.set("shared_noise", shared);
    finish_training(&a.common, &t, &net, &report, meta)
}

fn train_refiner(a: &TrainRefinerArgs, config: Option<&Path>) -> CliResult<()> {
    let t = prepare_training(&a.common, config, |s| {
        s.flag("injection_hidden", a.injection_hidden)
            .flag("injection_scale", a.injection_scale)
            .flag("use_semantics", a.no_semantics.then_some(false));
    })?;
    let use_semantics = t.settings.get("use_semantics", true)?;
    let mut net = Mlp::new(t.task.refiner_spec(t.sched.len()), derive_seed(a.common.seed, 0))?;
    let src = RefinerSource { pixels: &t.pixels, sched: &t.sched, injection_scale: t.task.injection_scale, use_semantics };
    let report = train_denoiser(&mut net, &src, &t.cfg)?;
    let mut meta = KvConfig::new();
    meta.set("role", "refiner");
    meta.set("injection_hidden", t.task.injection_hidden);
    meta.set("injection_scale", t.task.injection_scale);
    meta.set("use_semantics", use_semantics);
    finish_training(&a.common, &t, &net, &report, meta)
}

/// Settings recorded next to the checkpoints, later files winning.
fn checkpoint_settings(ckpts: &[&Path]) -> CliResult<KvConfig> {
    let mut base = KvConfig::new();
    for ckpt in ckpts {
        let path = sidecar(ckpt);
        if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            base.merge(&KvConfig::parse(&text)?);
        }
    }
    Ok(base)
}

/// The two trained networks with the condition and mask of one input.
struct TrainedPair {
    yoso: Mlp,
    refiner: Mlp,
    cond: ConditionBundle,
    mask: Vec<bool>,
}

fn load_pair(yoso: &Path, refiner: &Path, shading: &Path, semantic: &Path, mask: Option<&Path>, s: &Settings, sched: &NoiseSchedule) -> CliResult<TrainedPair> {
    let yoso = load_checkpoint(yoso).map_err(|e| CliError::io(yoso, e))?;
    let refiner_net = load_checkpoint(refiner).map_err(|e| CliError::io(refiner, e))?;
    if refiner_net.spec().time_steps != sched.len() {
        return Err(CliError::usage(format!(
            "refiner was trained for {} steps but the schedule has {}",
            refiner_net.spec().time_steps,
            sched.len()
        )));
    }
    let shading = read_raster(shading)?.to_latent()?;
    let semantic = read_raster(semantic)?.to_latent()?;
    let mut cond = raster_condition(&shading, &semantic, s.get("injection_scale", 1.0)?)?;
    if !s.get("use_semantics", true)? {
        cond = cond.without_semantics();
    }
    let mask = match mask {
        Some(p) => read_mask(p)?,
        None => vec![true; shading.pixel_count()],
    };
    if mask.len() != shading.pixel_count() {
        return Err(CliError::usage("mask and shading differ in size"));
    }
    Ok(TrainedPair { yoso, refiner: refiner_net, cond, mask })
}

fn infer(a: &InferArgs, config: Option<&Path>) -> CliResult<()> {
    let mut s = Settings::load(checkpoint_settings(&[&a.yoso, &a.refiner])?, config)?;
    sampler_flags(&mut s, &a.sampler);
    schedule_flags(&mut s, &a.schedule);
    let sched = NoiseSchedule::from_config(s.config())?;
    let cfg = SamplerConfig { seed: a.seed, ..SamplerConfig::from_config(s.config())? };
    cfg.validate(&sched)?;
    let pair = load_pair(&a.yoso, &a.refiner, &a.shading, &a.semantic, a.mask.as_deref(), &s, &sched)?;

    let mut report = cfg.to_config();
    let normals = if a.yoso_only {
        report.set("mode", "yoso-only");
        report.set("nfe", 1);
        yoso_only(&pair.cond, &pair.yoso, &cfg, &pair.mask)?
    } else {
        let (n, traj) = two_stage(&pair.cond, &pair.yoso, &pair.refiner, &cfg, &sched, &pair.mask)?;
        report.set("mode", "two-stage");
        report.set("nfe", traj.evaluations());
        report.set("entries", traj.num_entries());
        if let Some(dir) = &a.trajectory {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
            for (k, (t, state)) in traj.states().iter().enumerate() {
                write_raster(&dir.join(format!("state_{k:02}_t{t:04}.dnfr")), &FloatRaster::from_latent(state))?;
            }
            write_raster(&dir.join("prediction.dnfr"), &FloatRaster::from_latent(traj.prediction()))?;
        }
        n
    };
    write_normals(&a.out, &normals)?;
    if let Some(p) = &a.ppm {
        write_ppm(p, &encode_normal_8bit(&normals).0).map_err(|e| CliError::io(p, e))?;
    }
    report.set("height", normals.height());
    report.set("width", normals.width());
    report.set("n_valid", normals.valid_count());
    print!("{}", report.to_text());
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> CliResult<()> {
    let pred = read_normals(&a.pred, a.mask.as_deref())?;
    let gt = read_normals(&a.gt, a.mask.as_deref())?;
    print!("{}", evaluate(&pred, &gt)?.to_config().to_text());
    Ok(())
}

/// Output of repeated runs of one sampler.
struct Repeated {
    report: VarianceReport,
    runs: Vec<NormalMap>,
    nfe: usize,
}

fn repeat_runs(repeats: usize, run: impl Fn(u64) -> dnorm_core::Result<(NormalMap, usize)> + Sync + Send, seed: u64) -> CliResult<Repeated> {
    let out = exec::try_map_range(repeats, |i| run(seed.wrapping_add(i as u64)))?;
    let nfe = out[0].1;
    let runs: Vec<NormalMap> = out.into_iter().map(|(n, _)| n).collect();
    Ok(Repeated { report: pixelwise_variance(&runs)?, runs, nfe })
}

/// Source name, one-shot stage, refiner, condition and mask.
type VarianceSetup = (&'static str, Box<dyn Denoiser>, Box<dyn Denoiser>, ConditionBundle, Vec<bool>);

fn variance(a: &VarianceArgs, config: Option<&Path>) -> CliResult<()> {
    let base = match (&a.yoso, &a.refiner) {
        (Some(y), Some(r)) => checkpoint_settings(&[y, r])?,
        _ => KvConfig::new(),
    };
    let mut s = Settings::load(base, config)?;
    sampler_flags(&mut s, &a.sampler);
    schedule_flags(&mut s, &a.schedule);
    s.flag("repeats", a.repeats).flag("full_steps", a.full_steps).flag("full_tau", a.full_tau);
    let sched = NoiseSchedule::from_config(s.config())?;
    let repeats: usize = s.get("repeats", 10)?;
    if repeats < 2 {
        return Err(CliError::usage("variance needs at least 2 repeats"));
    }
    let two_cfg = SamplerConfig { seed: a.seed, ..SamplerConfig::from_config(s.config())? };
    two_cfg.validate(&sched)?;
    let full_cfg = SamplerConfig {
        tau: s.get("full_tau", 1.0)?,
        num_steps: s.get("full_steps", dnorm_core::samplers::DEFAULT_FULL_CHAIN_STEPS)?,
        ..two_cfg.clone()
    };
    if full_cfg.num_steps == 0 || full_cfg.num_steps > sched.len() {
        return Err(CliError::usage(format!("full_steps must lie in 1..={}", sched.len())));
    }

    // Either trained checkpoints on a given input or the closed-form pair on
    // a scene drawn from the seed.
    let (source, yoso, refiner, cond, mask): VarianceSetup =
        match (&a.yoso, &a.refiner, &a.shading, &a.semantic) {
            (Some(y), Some(r), Some(sh), Some(se)) => {
                let p = load_pair(y, r, sh, se, a.mask.as_deref(), &s, &sched)?;
                ("checkpoints", Box::new(p.yoso), Box::new(p.refiner), p.cond, p.mask)
            }
            _ => {
                let scene = make_scene(a.seed, 12, 32, 32, &HeightFieldParams::high_frequency())?;
                (
                    "oracle",
                    Box::new(ShrunkOneShotOracle::new(two_cfg.t_plus_index(), sched.clone())?),
                    Box::new(ConditionalGaussianOracle::new(0.3, sched.clone())?),
                    ConditionBundle::image(scene.normals.to_latent()),
                    scene.normals.mask().to_vec(),
                )
            }
        };

    let started = std::time::Instant::now();
    let two = repeat_runs(
        repeats,
        |seed| {
            let cfg = SamplerConfig { seed, ..two_cfg.clone() };
            let traj = dnorm_core::samplers::heuristic_sample(&cond, yoso.as_ref(), refiner.as_ref(), &cfg, &sched)?;
            Ok((latent_normals(traj.prediction(), &mask)?, traj.evaluations()))
        },
        a.seed,
    )?;
    info!("two-stage runs took {:.3} s", started.elapsed().as_secs_f64());
    let started = std::time::Instant::now();
    let full = repeat_runs(
        repeats,
        |seed| {
            let cfg = SamplerConfig { seed, ..full_cfg.clone() };
            let traj = sample_from_noise(&cond, refiner.as_ref(), &cfg, &sched)?;
            Ok((latent_normals(traj.prediction(), &mask)?, traj.evaluations()))
        },
        a.seed,
    )?;
    info!("full-chain runs took {:.3} s", started.elapsed().as_secs_f64());
    let curve_two = ensemble_variance_curve(&two.runs)?;
    let curve_full = ensemble_variance_curve(&full.runs)?;

    let mut out = String::new();
    let mut setup = KvConfig::new();
    setup.set("source", source);
    setup.set("seed", a.seed);
    setup.set("repeats", repeats);
    setup.set("height", two.report.height);
    setup.set("width", two.report.width);
    let _ = write!(out, "[setup]\n{}", setup.to_text());
    for (name, cfg, r) in [("two-stage", &two_cfg, &two), ("full-chain", &full_cfg, &full)] {
        let mut kv = KvConfig::new();
        kv.set("tau", cfg.tau);
        kv.set("num_steps", cfg.num_steps);
        kv.merge(&r.report.to_config());
        let _ = write!(out, "\n[{name}]\n{}", kv.to_text());
    }
    let rows: Vec<Vec<String>> = curve_two
        .iter()
        .zip(&curve_full)
        .map(|((k, v2), (_, vf))| {
            vec![k.to_string(), v2.to_string(), vf.to_string(), (k * two.nfe).to_string(), (k * full.nfe).to_string()]
        })
        .collect();
    let header = ["k", "two_stage", "full_chain", "two_stage_nfe", "full_chain_nfe"];
    let _ = write!(out, "\n[ensemble-variance]\n{}", format_table(&header, &rows));
    let nfe_rows = vec![
        vec!["two-stage".to_string(), two.nfe.to_string()],
        vec!["full-chain".to_string(), full.nfe.to_string()],
    ];
    let _ = write!(out, "\n[nfe]\n{}", format_table(&["sampler", "evaluations"], &nfe_rows));

    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for (name, r) in [("two_stage", &two.report), ("full_chain", &full.report)] {
            let data = r.variance.iter().map(|&v| v as f32).collect();
            write_raster(&dir.join(format!("{name}_variance.dnfr")), &FloatRaster::new(r.height, r.width, 1, data)?)?;
        }
        write_text(&dir.join("report.txt"), &out)?;
    }
    print!("{out}");
    Ok(())
}

fn integrate(a: &IntegrateArgs, config: Option<&Path>) -> CliResult<()> {
    let mut s = Settings::load(KvConfig::new(), config)?;
    s.flag("z_floor", a.z_floor)
        .flag("tol", a.tol)
        .flag("max_iter", a.max_iter)
        .flag("dx", a.dx)
        .flag("dy", a.dy);
    let normals = read_normals(&a.normals, a.mask.as_deref())?;
    let params = IntegrationParams {
        tol: s.get("tol", DEFAULT_TOL)?,
        max_iter: s.config().get("max_iter")?,
        dx: s.get("dx", 1.0)?,
        dy: s.get("dy", 1.0)?,
    };
    let g = normals_to_gradients(&normals, s.get("z_floor", DEFAULT_Z_FLOOR)?)?;
    let out = integrate_depth(&g, &params)?;
    let d = &out.depth;
    let values = d.depth.iter().zip(&d.mask).map(|(&z, &m)| if m { z as f32 } else { 0.0 }).collect();
    write_raster(&a.out, &FloatRaster::new(d.height, d.width, 1, values)?)?;
    if let Some(p) = &a.obj {
        write_text(p, &mesh_obj(d, params.dx, params.dy))?;
    }

    let mut report = KvConfig::new();
    report.set("components", out.components.len());
    report.set("pixels", out.components.iter().map(|c| c.pixels).sum::<usize>());
    report.set("max_iterations", out.components.iter().map(|c| c.iterations).max().unwrap_or(0));
    report.set("converged", out.converged());
    if let Some(p) = &a.gt_depth {
        let gt = read_raster(p)?.to_latent()?;
        if gt.channels() != 1 {
            return Err(CliError::usage("ground-truth depth must have one channel"));
        }
        let gt = DepthField::new(gt.height(), gt.width(), gt.values().to_vec(), d.mask.clone())?;
        report.set("depth_rmse", depth_rmse(d, &gt)?);
    }
    print!("{}", report.to_text());
    if !out.converged() {
        let stuck = out.components.iter().filter(|c| !c.converged).count();
        return Err(CliError::NotConverged(format!("{stuck} of {} components hit the iteration cap", out.components.len())));
    }
    Ok(())
}

fn oracle_demo(a: &OracleDemoArgs, config: Option<&Path>) -> CliResult<()> {
    let mut s = Settings::load(KvConfig::new(), config)?;
    s.flag("samples", a.samples).flag("num_steps", a.steps).flag("sampler", a.sampler.as_ref()).flag("tau", a.tau);
    schedule_flags(&mut s, &a.schedule);
    let sched = NoiseSchedule::from_config(s.config())?;
    let n: usize = s.get("samples", 10_000)?;
    if n == 0 {
        return Err(CliError::usage("samples must be positive"));
    }
    let gm = GaussianMixture::new(vec![0.3, 0.7], vec![-2.0, 2.0], vec![0.1, 0.1])?;
    let oracle = GaussianMixtureOracle::new(gm.clone(), sched.clone());
    let cond = ConditionBundle::unconditional();
    let x_init = LatentField::standard_normal(1, n, 1, &mut substream(a.seed, 0));
    let sampler: String = s.get("sampler", "ddim".to_string())?;
    let (samples, nfe) = match sampler.as_str() {
        "ddim" => {
            let steps: usize = s.get("num_steps", dnorm_core::samplers::DEFAULT_FULL_CHAIN_STEPS)?;
            if steps == 0 || steps > sched.len() {
                return Err(CliError::usage(format!("steps must lie in 1..={}", sched.len())));
            }
            let cfg = SamplerConfig { tau: s.get("tau", 0.0)?, num_steps: steps, seed: a.seed, ..Default::default() };
            let grid = make_substep_grid(sched.len() - 1, steps)?;
            let traj = ddim_sample(&x_init, &grid, &oracle, &cond, &cfg, &sched)?;
            (traj.prediction().values().to_vec(), traj.evaluations())
        }
        "ddpm" => (ddpm_sample(&x_init, &oracle, &cond, a.seed, &sched)?.into_values(), sched.len()),
        other => return Err(CliError::usage(format!("unknown sampler `{other}` (ddim|ddpm)"))),
    };

    // assign every sample to its nearest mode
    let k = gm.components();
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); k];
    for &x in &samples {
        let j = (0..k)
            .min_by(|&i, &j| (x - gm.means()[i]).abs().total_cmp(&(x - gm.means()[j]).abs()))
            .expect("mixture has components");
        sums[j].0 += 1;
        sums[j].1 += x;
        sums[j].2 += x * x;
    }
    let rows: Vec<Vec<String>> = (0..k)
        .map(|j| {
            let (c, s1, s2) = sums[j];
            let m = if c > 0 { s1 / c as f64 } else { f64::NAN };
            let sd = if c > 1 { ((s2 - s1 * s1 / c as f64) / (c - 1) as f64).max(0.0).sqrt() } else { f64::NAN };
            vec![
                j.to_string(),
                gm.weights()[j].to_string(),
                gm.means()[j].to_string(),
                gm.stds()[j].to_string(),
                format!("{:.4}", c as f64 / n as f64),
                format!("{m:.4}"),
                format!("{sd:.4}"),
            ]
        })
        .collect();
    println!("sampler = {sampler}\nsamples = {n}\nnfe = {nfe}");
    print!("{}", format_table(&["mode", "weight", "mean", "std", "sampled_weight", "sampled_mean", "sampled_std"], &rows));
    Ok(())
}
