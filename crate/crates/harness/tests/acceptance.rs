//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. `ACCEPTANCE_ONLY=1,4` restricts the run.

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use specarray::attacks::{eps_for_psr, fgsm, pgd, project_lp_ball, AttackConfig, AttackMethod, BALL_TOL};
use specarray::glrt::{detection_statistic, doa_pair, glrt_detect, glrt_doa, Calibration, GlrtDoaConfig};
use specarray::linalg::C64;
use specarray::neural::{Arch, Batch, Layer, Mode, Network};
use specarray::signal::dataset::example_rng;
use specarray::signal::{synthesize_detection_example, synthesize_doa_example, ArrayConfig, SynthesisParams, Task};
use specarray::speculative::{
    expected_latency, mean_latency, speculative_infer, Execution, LatencyModel, PostProcess, SpeculativeTrace,
    Validator,
};
use specarray::stats::{detection_windows, empirical_covariance, CovariancePair};
use specarray::{Norm, RealTensor};
use specarray_harness::config::{AttackSpec, ExperimentConfig, LatencySettings, ModelKind, Split};
use specarray_harness::pipeline::{self, Models, RunPaths, TaskData};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

// ------------------------------------------------------------------ shared

/// A trained desk-scale setup for one task.
struct TaskContext {
    cfg: ExperimentConfig,
    test: TaskData,
    net: Network,
    validator: Validator,
    calibration: Option<Calibration>,
}

fn build_context(task: Task, root: &Path) -> TaskContext {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::default_for(task);
    cfg.output_dir = root.join(task.name());
    cfg.models = vec![ModelKind::Cnn, ModelKind::Glrt];
    let paths = RunPaths::new(cfg.task_dir());
    pipeline::generate(&cfg, &paths).expect("generate");
    let train = pipeline::load_split(&cfg, &paths, Split::Train).expect("train split");
    let test = pipeline::load_split(&cfg, &paths, Split::Test).expect("test split");
    let mut models = pipeline::train_models(&cfg, &train).expect("training");
    let net = models.remove(0).1.network;
    let (validator, calibration) = match task {
        Task::Detection => {
            let cal = pipeline::calibrate_detection(&cfg, &train).expect("calibration");
            (Validator::Detection(cal.to_config()), Some(cal))
        }
        Task::Doa => (Validator::Doa(pipeline::doa_config(&cfg).unwrap()), None),
    };
    println!(
        "  [setup] {} model trained on {} examples in {:.0} s",
        task.name(),
        train.len(),
        t.elapsed().as_secs_f64()
    );
    TaskContext {
        cfg,
        test,
        net,
        validator,
        calibration,
    }
}

fn cnn_accuracy(net: &Network, data: &TaskData) -> f64 {
    let hits: usize = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| usize::from(net.predict(x).unwrap() == y))
        .sum();
    hits as f64 / data.len() as f64
}

fn glrt_accuracy(v: &Validator, data: &TaskData) -> f64 {
    let hits: usize = data
        .inputs
        .par_iter()
        .zip(&data.labels)
        .map(|(x, &y)| usize::from(v.decide(x).unwrap() == y))
        .sum();
    hits as f64 / data.len() as f64
}

// ------------------------------------------------------------------ 1

fn criterion_1() -> Outcome {
    let t = Instant::now();
    let rows = pipeline::verify_theorem(1, 8, 64, 1000, &[1e-3, 1e-2, 1e-1]).expect("theorem trials");
    let secs = t.elapsed().as_secs_f64();
    let trials: usize = rows.iter().map(|r| r.trials).sum();
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    let max_ratio = rows.iter().map(|r| r.max_ratio).fold(0.0, f64::max);
    Outcome::new(
        violations == 0 && rows.iter().all(|r| r.trials >= 1000) && secs < 30.0,
        format!("{trials} trials over p in {{2, inf}} x 3 eps, {violations} violations, max actual/bound {max_ratio:.3}, {secs:.1} s"),
    )
}

// ------------------------------------------------------------------ 2

const FD_H: f64 = 1e-4;

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + FD_H;
            let up = f(&x);
            x[i] = orig - FD_H;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * FD_H)
        })
        .collect()
}

fn toy_network(seed: u64) -> Network {
    let mut net = Network::new(
        Arch::Custom,
        [4, 10, 2],
        vec![
            Layer::conv(2, 3, 2, 4),
            Layer::Relu,
            Layer::batch_norm(4),
            Layer::MaxPool { ph: 1, pw: 2 },
            Layer::conv(2, 2, 4, 3),
            Layer::Relu,
            Layer::MaxPool { ph: 2, pw: 1 },
            Layer::Flatten,
            Layer::dense(9, 6),
            Layer::Relu,
            Layer::Dropout { rate: 0.3 },
            Layer::dense(6, 3),
        ],
    )
    .unwrap();
    net.initialize(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xff);
    for layer in net.layers_mut() {
        if let Layer::BatchNorm {
            gamma,
            beta,
            running_mean,
            running_var,
            ..
        } = layer
        {
            gamma.iter_mut().for_each(|g| *g = rng.random_range(0.5..1.5));
            beta.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
            running_mean.iter_mut().for_each(|m| *m = rng.random_range(-0.2..0.2));
            running_var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
        }
    }
    net
}

/// Worst relative error over the input gradient and every parameter tensor.
/// In training mode the dropout mask is pinned by reseeding per evaluation.
fn worst_network_error(net: &Network, batch: &Batch, labels: &[usize], mode: Mode) -> f64 {
    let loss_at = |net: &Network, data: &[f64]| {
        let b = Batch {
            n: batch.n,
            dims: batch.dims,
            data: data.to_vec(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let r: Option<&mut dyn rand::RngCore> = match mode {
            Mode::Train => Some(&mut rng),
            Mode::Eval => None,
        };
        net.batch_loss_and_gradients(&b, labels, mode, r).unwrap()
    };
    let (_, grads, dx, _) = loss_at(net, &batch.data);
    let mut worst = rel_err(&dx.data, &central_difference(&batch.data, |d| loss_at(net, d).0));
    for (t, analytic) in grads.0.iter().enumerate() {
        let base = net.params()[t].to_vec();
        let fd = central_difference(&base, |p| {
            let mut n = net.clone();
            n.params_mut()[t].copy_from_slice(p);
            loss_at(&n, &batch.data).0
        });
        worst = worst.max(rel_err(analytic, &fd));
    }
    worst
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let mut worst = 0.0f64;
    for seed in 0..3u64 {
        let net = toy_network(seed + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let batch = Batch {
            n: 3,
            dims: [4, 10, 2],
            data: (0..240).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        for mode in [Mode::Train, Mode::Eval] {
            worst = worst.max(worst_network_error(&net, &batch, &[0, 2, 1], mode));
        }
    }
    // published detection head on a narrow input: input gradient only
    let mut det = Network::detection([8, 20, 2]).unwrap();
    det.initialize(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = RealTensor::new([8, 20, 2], (0..320).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let lg = det.loss_and_gradients(&x, 1, Mode::Eval).unwrap();
    let fd = central_difference(x.data(), |d| {
        det.loss(&RealTensor::new([8, 20, 2], d.to_vec()).unwrap(), 1).unwrap()
    });
    worst = worst.max(rel_err(lg.input.data(), &fd));
    let secs = t.elapsed().as_secs_f64();
    Outcome::new(
        worst < 1e-4 && secs < 60.0,
        format!("conv/relu/maxpool/batchnorm/flatten/dense/dropout in train and eval mode, worst rel err {worst:.2e}, {secs:.1} s"),
    )
}

// ------------------------------------------------------------------ 3

fn oracle_doa_class(pair: &CovariancePair, cfg: &GlrtDoaConfig) -> usize {
    let l = pair.r_old.values.clone().cholesky().expect("positive definite").l();
    let linv = l.try_inverse().unwrap();
    let c = &linv * &pair.r_new.values * linv.adjoint();
    let c = (&c + c.adjoint()) * C64::new(0.5, 0.0);
    let eig = c.symmetric_eigen();
    let u = eig.eigenvectors.column(eig.eigenvalues.iamax()).into_owned();
    let v = linv.adjoint() * u;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, a) in cfg.grid.iter().enumerate() {
        let s = a
            .values
            .iter()
            .zip(v.iter())
            .map(|(ai, vi)| ai.conj() * vi)
            .sum::<C64>()
            .norm();
        if s > best.1 {
            best = (i, s);
        }
    }
    best.0
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = ArrayConfig::default();
    let params = SynthesisParams::detection_default();
    let mut worst = 0.0f64;
    for i in 0..200u64 {
        let z = synthesize_detection_example(&cfg, &params, (i % 2) as usize, &mut example_rng(33, i)).unwrap();
        let start = rng.random_range(0..=params.snapshots - 20);
        let (old, new) = detection_windows(&z.samples, 10, start).unwrap();
        let pair = CovariancePair::new(empirical_covariance(&old, 1e-6), empirical_covariance(&new, 1e-6)).unwrap();
        let got = detection_statistic(&pair).unwrap();
        let want = (pair.r_old.values.clone().try_inverse().unwrap() * &pair.r_new.values)
            .trace()
            .re;
        worst = worst.max((got - want).abs() / want.abs());
    }

    let mut doa_params = SynthesisParams::doa_default();
    doa_params.soi_power = 10.0;
    let dcfg = GlrtDoaConfig::new(doa_params.doa_onset(), 1e-6, cfg.steering_grid().unwrap()).unwrap();
    let angles = cfg.grid_angles();
    let agree = (0..200u64)
        .into_par_iter()
        .filter(|&i| {
            let mut r = example_rng(34, i);
            let theta = angles[r.random_range(0..angles.len())];
            let z = synthesize_doa_example(&cfg, &doa_params, theta, &mut r).unwrap();
            let pair = doa_pair(&z.samples, dcfg.k, doa_params.doa_onset(), dcfg.zeta).unwrap();
            glrt_doa(&pair, &dcfg).unwrap().class_index == oracle_doa_class(&pair, &dcfg)
        })
        .count();
    Outcome::new(
        worst < 1e-8 && agree == 200,
        format!("statistic vs dense inverse worst rel err {worst:.2e}; DoA argmax agrees with eigendecomposition on {agree}/200"),
    )
}

// ------------------------------------------------------------------ 4

fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 3], scale: f64) -> RealTensor {
    let n = dims.iter().product();
    RealTensor::new(dims, (0..n).map(|_| rng.random_range(-scale..scale)).collect()).unwrap()
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = [2, 4, 2];
    let mut bad = 0;
    for p in [Norm::L2, Norm::Linf] {
        for _ in 0..10_000 {
            let c = random_tensor(&mut rng, dims, 1.0);
            let eps = 10f64.powf(rng.random_range(-3.0..0.5));
            let x = c.add(&random_tensor(&mut rng, dims, 3.0)).unwrap();
            let once = project_lp_ball(&x, &c, eps, p).unwrap();
            let twice = project_lp_ball(&once, &c, eps, p).unwrap();
            let feasible = once.sub(&c).unwrap().norm(p) <= eps * (1.0 + BALL_TOL);
            let idempotent = twice.sub(&once).unwrap().linf_norm() <= 1e-12 * (1.0 + once.linf_norm());
            if !(feasible && idempotent) {
                bad += 1;
            }
        }
    }
    let mut not_nearest = 0;
    let instances = 100;
    for _ in 0..instances {
        let c = random_tensor(&mut rng, dims, 1.0);
        let eps = rng.random_range(0.1..1.0);
        let x = c.add(&random_tensor(&mut rng, dims, 3.0)).unwrap();
        let proj = project_lp_ball(&x, &c, eps, Norm::L2).unwrap();
        let best = x.sub(&proj).unwrap().l2_norm();
        for _ in 0..1000 {
            let dir = random_tensor(&mut rng, dims, 1.0);
            let y = c.add(&dir.scaled(eps * rng.random::<f64>() / dir.l2_norm())).unwrap();
            if x.sub(&y).unwrap().l2_norm() <= best {
                not_nearest += 1;
            }
        }
    }
    Outcome::new(
        bad == 0 && not_nearest == 0,
        format!(
            "2 x 10000 projections, {bad} infeasible or non-idempotent; l2 minimality vs 1000 feasible points x {instances} instances, {not_nearest} counterexamples"
        ),
    )
}

// ------------------------------------------------------------------ 5

fn criterion_5(det: &TaskContext) -> Outcome {
    let cal = det.calibration.as_ref().unwrap();
    let gcfg = cal.to_config();
    let cfg = &det.cfg;
    // Fresh H0 draws from a stream disjoint from both splits.
    let trials = 2000u64;
    let alarms: usize = (0..trials)
        .into_par_iter()
        .map(|i| {
            let z = synthesize_detection_example(&cfg.array, &cfg.synthesis, 0, &mut example_rng(cfg.seed ^ 0x5a5a, i))
                .unwrap();
            glrt_detect(&z.samples, &gcfg).unwrap()
        })
        .sum();
    let rate = alarms as f64 / trials as f64;
    Outcome::new(
        (rate - 0.05).abs() <= 0.02,
        format!(
            "threshold {:.4} from {} training H0 examples; held-out false-alarm rate {:.2}% over {trials} trials",
            cal.gamma_t,
            cal.n_calibration,
            100.0 * rate
        ),
    )
}

// ------------------------------------------------------------------ 6

struct Ordering {
    pass: bool,
    detail: String,
}

fn robustness_ordering(ctx: &TaskContext) -> Ordering {
    let clean_cnn = cnn_accuracy(&ctx.net, &ctx.test);
    let clean_glrt = glrt_accuracy(&ctx.validator, &ctx.test);
    let models = Models {
        cnn: Some(ctx.net.clone()),
        cnn_advtrain: None,
        validator: Some(ctx.validator.clone()),
    };
    let spec = AttackSpec {
        method: AttackMethod::Fgsm,
        norm: Norm::Linf,
    };
    let sweep = pipeline::run_sweep(
        &ctx.test,
        &models,
        &[spec],
        &[-15.0],
        &[ModelKind::Cnn, ModelKind::Glrt],
        ctx.cfg.pgd_steps,
    )
    .unwrap();
    let att_cnn = sweep.accuracy(-15.0, spec, ModelKind::Cnn).unwrap();
    let att_glrt = sweep.accuracy(-15.0, spec, ModelKind::Glrt).unwrap();
    let pass = clean_cnn >= 0.95 && att_cnn < 0.6 * clean_cnn && clean_glrt - att_glrt <= 0.10;
    Ordering {
        pass,
        detail: format!(
            "{}: cnn {:.3} -> {:.3} (ratio {:.2}), glrt {:.3} -> {:.3} (drop {:.1} pts)",
            ctx.cfg.task.name(),
            clean_cnn,
            att_cnn,
            att_cnn / clean_cnn,
            clean_glrt,
            att_glrt,
            100.0 * (clean_glrt - att_glrt)
        ),
    }
}

fn criterion_6(det: &TaskContext, doa: &TaskContext) -> Outcome {
    let a = robustness_ordering(det);
    let b = robustness_ordering(doa);
    Outcome::new(
        a.pass && b.pass,
        format!("FGSM linf at -15 dB; {}; {}", a.detail, b.detail),
    )
}

// ------------------------------------------------------------------ 7

fn criterion_7(det: &TaskContext) -> Outcome {
    let n = 200;
    let xs = &det.test.inputs[..n];
    let ys = &det.test.labels[..n];
    let mut parts = Vec::new();
    let mut pass = true;
    for p in [Norm::Linf, Norm::L2] {
        let (lf, lp): (f64, f64) = xs
            .par_iter()
            .zip(ys)
            .map(|(x, &y)| {
                let eps = eps_for_psr(x.l2_norm(), -20.0, p, x.len()).unwrap();
                let f = fgsm(&det.net, x, y, &AttackConfig::fgsm(p, eps)).unwrap();
                let g = pgd(&det.net, x, y, &AttackConfig::pgd(p, eps, 10)).unwrap();
                (
                    det.net.loss(&f.apply(x).unwrap(), y).unwrap(),
                    det.net.loss(&g.apply(x).unwrap(), y).unwrap(),
                )
            })
            .reduce(|| (0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
        let (lf, lp) = (lf / n as f64, lp / n as f64);
        pass &= lp >= 0.98 * lf;
        parts.push(format!("{}: pgd {:.4} vs fgsm {:.4}", p.name(), lp, lf));
    }
    Outcome::new(
        pass,
        format!(
            "mean loss over {n} detection examples at -20 dB, Q = 10; {}",
            parts.join("; ")
        ),
    )
}

// ------------------------------------------------------------------ 8

fn criterion_8(det: &TaskContext) -> Outcome {
    let latency = LatencySettings::Injected {
        tau_dl_ms: 1.0,
        tau_glrt_ms: 5.0,
    };
    let (traces, report) = pipeline::run_speculation(&det.test, &det.net, &det.validator, &latency).unwrap();
    let only: Vec<SpeculativeTrace> = traces.iter().map(|(_, t)| *t).collect();
    let final_is_glrt = only
        .iter()
        .all(|t| t.final_output == t.glrt_output && t.is_consistent());
    let model = LatencyModel::from_traces(&only).unwrap();
    let e = expected_latency(&model);
    let injected_ok = (mean_latency(&only).unwrap() - e).abs() <= 1e-12 * e
        && model.tau_dl <= e
        && e <= model.tau_dl + model.tau_glrt;

    // Wall-clock run: validator on its own thread.
    let n = 300;
    let exec = Execution::Concurrent {
        post: PostProcess::default(),
    };
    let measured: Vec<SpeculativeTrace> = det.test.inputs[..n]
        .iter()
        .map(|x| speculative_infer(x, &det.net, &det.validator, exec).unwrap())
        .collect();
    let mm = LatencyModel::from_traces(&measured).unwrap();
    let lat: Vec<f64> = measured.iter().map(SpeculativeTrace::latency).collect();
    let mean = lat.iter().sum::<f64>() / n as f64;
    let sd = (lat.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let se = sd / (n as f64).sqrt();
    let em = expected_latency(&mm);
    let measured_ok = (mean - em).abs() <= 3.0 * se + 1e-9
        && measured.iter().all(|t| t.final_output == t.glrt_output)
        && mm.tau_dl <= em
        && em <= mm.tau_dl + mm.tau_glrt;
    Outcome::new(
        final_is_glrt && injected_ok && measured_ok,
        format!(
            "{} traces final = glrt: {final_is_glrt}; injected p = {:.3}, E = {:.4} ms; measured mean {:.4} ms vs E {:.4} ms (3 SE = {:.4} ms)",
            traces.len(),
            report.p_agree,
            report.expected_latency_ms,
            mean * 1e3,
            em * 1e3,
            3e3 * se
        ),
    )
}

// ------------------------------------------------------------------ 9

fn agreement(ctx: &TaskContext) -> f64 {
    let agree: usize = ctx
        .test
        .inputs
        .par_iter()
        .map(|x| usize::from(ctx.net.predict(x).unwrap() == ctx.validator.decide(x).unwrap()))
        .sum();
    agree as f64 / ctx.test.len() as f64
}

fn criterion_9(det: &TaskContext, doa: &TaskContext) -> Outcome {
    let a = agreement(det);
    let b = agreement(doa);
    Outcome::new(
        a >= 0.85 && b >= 0.85,
        format!(
            "clean CNN-GLRT agreement: det {a:.3} on {}, doa {b:.3} on {}",
            det.test.len(),
            doa.test.len()
        ),
    )
}

// ------------------------------------------------------------------ 10

fn tiny_config(task: Task) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_for(task);
    cfg.output_dir = PathBuf::from(format!("run_{}", task.name()));
    cfg.dataset.train = 48;
    cfg.dataset.test = 16;
    cfg.train.epochs = 2;
    cfg.train.batch_size = 16;
    cfg.pgd_steps = 3;
    cfg.psr_grid_db = vec![-20.0, -10.0];
    cfg.theorem.trials = 20;
    cfg.theorem.snapshots = 16;
    cfg
}

fn collect_files(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>, root: &Path) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(&path, out, root);
        } else {
            out.insert(
                path.strip_prefix(root).unwrap().to_path_buf(),
                std::fs::read(&path).unwrap(),
            );
        }
    }
}

fn cli_run(dir: &Path, config: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_specarray"))
        .current_dir(dir)
        .arg("run")
        .arg("--config")
        .arg(config)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion_10() -> Outcome {
    let configs = tempfile::tempdir().unwrap();
    let runs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let mut ok = true;
    for task in [Task::Detection, Task::Doa] {
        let path = configs.path().join(format!("{}.json", task.name()));
        std::fs::write(&path, tiny_config(task).to_json().unwrap()).unwrap();
        for run in &runs {
            ok &= cli_run(run.path(), &path);
        }
    }
    if !ok {
        return Outcome::new(false, "CLI run failed");
    }
    let mut trees = Vec::new();
    for run in &runs {
        let mut files = BTreeMap::new();
        collect_files(run.path(), &mut files, run.path());
        trees.push(files);
    }
    let differing: Vec<String> = trees[0]
        .iter()
        .filter(|(k, v)| trees[1].get(*k) != Some(*v))
        .map(|(k, _)| k.display().to_string())
        .collect();
    let same_names = trees[0].keys().eq(trees[1].keys());
    let kinds = ["arrd", "spnn", "csv"];
    let covered = kinds
        .iter()
        .all(|ext| trees[0].keys().any(|k| k.extension().is_some_and(|e| e == *ext)));
    Outcome::new(
        differing.is_empty() && same_names && covered,
        format!(
            "two `specarray run` invocations per task, {} files compared, {} differ{}",
            trees[0].len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {}", differing.join(", "))
            }
        ),
    )
}

// ------------------------------------------------------------------ main

fn main() {
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let wanted = |id: u32| only.as_ref().is_none_or(|ids| ids.contains(&id));
    let names = [
        "covariance-shift bound",
        "gradient correctness",
        "oracle equivalence",
        "projection correctness",
        "calibration",
        "robustness ordering",
        "attack potency ordering",
        "speculative identities",
        "nominal agreement",
        "determinism",
    ];

    let mut results: Vec<(u32, Outcome)> = Vec::new();
    let mut report = |id: u32, o: Outcome| {
        println!(
            "criterion {id:>2} {:<24} {}  {}",
            names[id as usize - 1],
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, o));
    };

    println!("acceptance suite");
    if wanted(1) {
        report(1, criterion_1());
    }
    if wanted(2) {
        report(2, criterion_2());
    }
    if wanted(3) {
        report(3, criterion_3());
    }
    if wanted(4) {
        report(4, criterion_4());
    }
    let needs_det = [5, 6, 7, 8, 9].iter().any(|&i| wanted(i));
    let needs_doa = [6, 9].iter().any(|&i| wanted(i));
    let scratch = tempfile::tempdir().unwrap();
    let det = needs_det.then(|| build_context(Task::Detection, scratch.path()));
    if let Some(det) = &det {
        if wanted(5) {
            report(5, criterion_5(det));
        }
    }
    let doa = needs_doa.then(|| build_context(Task::Doa, scratch.path()));
    if let (Some(det), Some(doa)) = (&det, &doa) {
        if wanted(6) {
            report(6, criterion_6(det, doa));
        }
    }
    if let Some(det) = &det {
        if wanted(7) {
            report(7, criterion_7(det));
        }
        if wanted(8) {
            report(8, criterion_8(det));
        }
    }
    if let (Some(det), Some(doa)) = (&det, &doa) {
        if wanted(9) {
            report(9, criterion_9(det, doa));
        }
    }
    drop(scratch);
    if wanted(10) {
        report(10, criterion_10());
    }

    let failed: Vec<u32> = results.iter().filter(|(_, o)| !o.pass).map(|(i, _)| *i).collect();
    println!(
        "acceptance: {} of {} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
