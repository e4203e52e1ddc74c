//! The pipeline stages behind each CLI subcommand. Every stage reads its
//! inputs from the run directory and writes versioned outputs back to it, so
//! stages can be re-run independently.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use specarray::attacks::{attack, eps_for_psr, AttackConfig, AttackMethod};
use specarray::glrt::{calibrate, Calibration, GlrtDetectionConfig, GlrtDoaConfig};
use specarray::neural::{adversarial_train, covariance_input_at, train, write_history, Network, TrainedModel};
use specarray::signal::dataset::{read_metadata, write_dataset, ArrdReader};
use specarray::signal::{tensor_to_complex, Task};
use specarray::speculative::{
    expected_latency, mean_latency, speculative_infer, write_trace_csv, Execution, LatencyModel, PostProcess,
    SpeculativeTrace, Validator,
};
use specarray::stats::random_shift_trial;
use specarray::{Norm, RealTensor};

use crate::config::{AttackSpec, ExperimentConfig, LatencySettings, ModelKind, Split};
use crate::error::{HarnessError, Result};
use crate::plot::accuracy_plot_svg;

/// File layout of a run directory.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn dataset(&self, split: Split) -> PathBuf {
        self.root.join(format!("{}.arrd", split.name()))
    }

    pub fn model(&self, kind: ModelKind) -> PathBuf {
        self.root.join(format!("{}.spnn", kind.name()))
    }

    pub fn history(&self, kind: ModelKind) -> PathBuf {
        self.root.join(format!("{}_history.json", kind.name()))
    }

    pub fn calibration(&self) -> PathBuf {
        self.root.join("calibration.json")
    }

    pub fn sweep_csv(&self) -> PathBuf {
        self.root.join("sweep.csv")
    }

    pub fn sweep_manifest(&self) -> PathBuf {
        self.root.join("attacks.json")
    }

    pub fn sweep_plot(&self, attack: &AttackSpec) -> PathBuf {
        self.root.join(format!("sweep_{}.svg", attack.label()))
    }

    pub fn traces(&self) -> PathBuf {
        self.root.join("traces.csv")
    }

    pub fn latency(&self) -> PathBuf {
        self.root.join("latency.json")
    }

    pub fn theorem_report(&self) -> PathBuf {
        self.root.join("theorem_report.csv")
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
}

fn require(path: &Path, hint: &str) -> Result<()> {
    if !path.exists() {
        return Err(HarnessError::MissingArtifact {
            path: path.to_path_buf(),
            hint: hint.to_string(),
        });
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    Ok(BufWriter::new(
        File::create(path).map_err(|e| HarnessError::io(path, e))?,
    ))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(specarray::Error::from)?;
    w.write_all(b"\n").map_err(|e| HarnessError::io(path, e))?;
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Classifier inputs and labels for one split.
#[derive(Debug, Clone)]
pub struct TaskData {
    pub task: Task,
    pub inputs: Vec<RealTensor>,
    pub labels: Vec<usize>,
}

impl TaskData {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Map a raw snapshot tensor to what the classifier consumes: itself for
/// detection, the stacked covariance tensor for DoA.
pub fn classifier_input(cfg: &ExperimentConfig, raw: RealTensor) -> Result<RealTensor> {
    Ok(match cfg.task {
        Task::Detection => raw,
        Task::Doa => covariance_input_at(
            &tensor_to_complex(&raw)?,
            cfg.glrt.k,
            cfg.synthesis.doa_onset(),
            cfg.glrt.zeta,
        )?,
    })
}

// ---------------------------------------------------------------- generate

pub fn generate(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<()> {
    fs::create_dir_all(&paths.root).map_err(|e| HarnessError::io(&paths.root, e))?;
    for (split, n) in [(Split::Train, cfg.dataset.train), (Split::Test, cfg.dataset.test)] {
        let path = paths.dataset(split);
        write_dataset(&path, cfg.task, &cfg.array, &cfg.split_params(split), n)?;
    }
    Ok(())
}

pub fn load_split(cfg: &ExperimentConfig, paths: &RunPaths, split: Split) -> Result<TaskData> {
    let path = paths.dataset(split);
    require(&path, "run `specarray generate` first")?;
    let meta = read_metadata(&path)?;
    if meta.task != cfg.task {
        return Err(HarnessError::Config(format!(
            "{} holds {} data but the config is for {}",
            path.display(),
            meta.task.name(),
            cfg.task.name()
        )));
    }
    let reader = ArrdReader::open(&path)?;
    let labels: Vec<usize> = reader.labels.clone();
    let inputs = reader.map(|x| classifier_input(cfg, x?)).collect::<Result<Vec<_>>>()?;
    Ok(TaskData {
        task: cfg.task,
        inputs,
        labels,
    })
}

// ---------------------------------------------------------------- train

pub fn network_for(cfg: &ExperimentConfig, input_dims: [usize; 3]) -> Result<Network> {
    Ok(match cfg.task {
        Task::Detection => Network::detection(input_dims)?,
        Task::Doa => Network::doa(input_dims, cfg.array.num_classes())?,
    })
}

/// Attack configuration used for adversarial training; ε is set from the
/// configured PSR against a unit-energy reference of the given size.
pub fn adversarial_attack(cfg: &ExperimentConfig, reference: &RealTensor) -> Result<AttackConfig> {
    let spec = cfg.adversarial_training.attack;
    let eps = eps_for_psr(
        reference.l2_norm(),
        cfg.adversarial_training.psr_db,
        spec.norm,
        reference.len(),
    )?;
    Ok(attack_config(spec, eps, cfg.pgd_steps))
}

pub fn attack_config(spec: AttackSpec, eps: f64, pgd_steps: usize) -> AttackConfig {
    match spec.method {
        AttackMethod::Fgsm => AttackConfig::fgsm(spec.norm, eps),
        AttackMethod::Pgd => AttackConfig::pgd(spec.norm, eps, pgd_steps),
    }
}

pub fn train_models(cfg: &ExperimentConfig, data: &TaskData) -> Result<Vec<(ModelKind, TrainedModel)>> {
    let first = data
        .inputs
        .first()
        .ok_or_else(|| HarnessError::Config("training split is empty".into()))?;
    let net = network_for(cfg, first.dims())?;
    let tc = cfg.train_config();
    let mut out = Vec::new();
    if cfg
        .models
        .iter()
        .any(|m| matches!(m, ModelKind::Cnn | ModelKind::Speculative))
    {
        out.push((ModelKind::Cnn, train(net.clone(), &data.inputs, &data.labels, &tc)?));
    }
    if cfg.models.contains(&ModelKind::CnnAdvtrain) {
        let atk = adversarial_attack(cfg, first)?;
        out.push((
            ModelKind::CnnAdvtrain,
            adversarial_train(net, &data.inputs, &data.labels, &tc, &atk)?,
        ));
    }
    Ok(out)
}

pub fn train_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<()> {
    let data = load_split(cfg, paths, Split::Train)?;
    for (kind, model) in train_models(cfg, &data)? {
        let path = paths.model(kind);
        model.network.save(&path).map_err(|e| match e {
            specarray::Error::Io(io) => HarnessError::io(&path, io),
            other => other.into(),
        })?;
        write_history(&model.history, paths.history(kind))?;
    }
    Ok(())
}

pub fn load_model(paths: &RunPaths, kind: ModelKind) -> Result<Network> {
    let path = paths.model(kind);
    require(&path, "run `specarray train` first")?;
    Ok(Network::load(&path)?)
}

// ---------------------------------------------------------------- calibrate

pub fn detection_config(cfg: &ExperimentConfig) -> GlrtDetectionConfig {
    GlrtDetectionConfig {
        k: cfg.glrt.k,
        zeta: cfg.glrt.zeta,
        percentile: cfg.glrt.percentile,
        threshold: None,
    }
}

pub fn doa_config(cfg: &ExperimentConfig) -> Result<GlrtDoaConfig> {
    Ok(GlrtDoaConfig::new(
        cfg.glrt.k,
        cfg.glrt.zeta,
        cfg.array.steering_grid()?,
    )?)
}

/// Threshold from the H₀ examples of the training split.
pub fn calibrate_detection(cfg: &ExperimentConfig, data: &TaskData) -> Result<Calibration> {
    let limit = cfg.glrt.calibration_examples.unwrap_or(usize::MAX);
    let h0: Vec<_> = data
        .inputs
        .iter()
        .zip(&data.labels)
        .filter(|(_, &y)| y == 0)
        .take(limit)
        .map(|(x, _)| tensor_to_complex(x))
        .collect::<specarray::Result<_>>()?;
    Ok(calibrate(h0.iter(), &detection_config(cfg))?)
}

pub fn calibrate_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Option<Calibration>> {
    if cfg.task == Task::Doa {
        return Ok(None);
    }
    let data = load_split(cfg, paths, Split::Train)?;
    let cal = calibrate_detection(cfg, &data)?;
    write_json(&paths.calibration(), &cal)?;
    Ok(Some(cal))
}

pub fn load_validator(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Validator> {
    Ok(match cfg.task {
        Task::Detection => {
            let path = paths.calibration();
            require(&path, "run `specarray calibrate` first")?;
            let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
            let cal: Calibration = serde_json::from_str(&text).map_err(specarray::Error::from)?;
            Validator::Detection(cal.to_config())
        }
        Task::Doa => Validator::Doa(doa_config(cfg)?),
    })
}

// ---------------------------------------------------------------- sweep

/// The evaluated systems. The GLRT and the speculative pipeline see the
/// perturbation crafted against the plain CNN (they share its observation);
/// the adversarially trained CNN is attacked directly.
pub struct Models {
    pub cnn: Option<Network>,
    pub cnn_advtrain: Option<Network>,
    pub validator: Option<Validator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub psr_db: f64,
    pub attack: AttackMethod,
    pub norm: Norm,
    pub model: ModelKind,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsrStats {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// One entry of the attack manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub method: AttackMethod,
    pub p: Norm,
    /// Mean ball radius over examples (radii follow each example's energy).
    pub eps: f64,
    #[serde(rename = "Q")]
    pub q: usize,
    pub target_psr_db: f64,
    pub achieved_psr_stats: PsrStats,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub manifest: Vec<AttackRecord>,
}

pub const SWEEP_CSV_HEADER: &str = "psr_db,attack,norm,model,accuracy,n";

impl SweepResult {
    pub fn accuracy(&self, psr_db: f64, attack: AttackSpec, model: ModelKind) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.psr_db == psr_db && r.attack == attack.method && r.norm == attack.norm && r.model == model)
            .map(|r| r.accuracy)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{SWEEP_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{:.6},{}",
                r.psr_db,
                r.attack.name(),
                r.norm.name(),
                r.model.name(),
                r.accuracy,
                r.n
            )?;
        }
        Ok(())
    }
}

struct ExampleOutcome {
    cnn: Option<bool>,
    adv: Option<bool>,
    glrt: Option<bool>,
    speculative: Option<bool>,
    eps: f64,
    psr: f64,
}

fn evaluate_example(
    models: &Models,
    x: &RealTensor,
    y: usize,
    spec: AttackSpec,
    psr_db: f64,
    pgd_steps: usize,
) -> Result<ExampleOutcome> {
    let eps = eps_for_psr(x.l2_norm(), psr_db, spec.norm, x.len())?;
    let atk = attack_config(spec, eps, pgd_steps);
    let mut out = ExampleOutcome {
        cnn: None,
        adv: None,
        glrt: None,
        speculative: None,
        eps,
        psr: f64::NAN,
    };
    // Without a CNN to craft against, the shared observation stays clean.
    let shared = match &models.cnn {
        Some(net) => {
            let p = attack(net, x, y, &atk)?;
            out.psr = p.psr_db;
            p.apply(x)?
        }
        None => x.clone(),
    };
    let dl = match &models.cnn {
        Some(net) => Some(net.predict(&shared)?),
        None => None,
    };
    out.cnn = dl.map(|d| d == y);
    if let Some(v) = &models.validator {
        let g = v.decide(&shared)?;
        out.glrt = Some(g == y);
        if let Some(d) = dl {
            out.speculative = Some(SpeculativeTrace::resolve(d, g, 0.0, 0.0).final_output == y);
        }
    }
    if let Some(adv) = &models.cnn_advtrain {
        let p = attack(adv, x, y, &atk)?;
        if models.cnn.is_none() {
            out.psr = p.psr_db;
        }
        out.adv = Some(adv.predict(&p.apply(x)?)? == y);
    }
    Ok(out)
}

pub fn run_sweep(
    data: &TaskData,
    models: &Models,
    attacks: &[AttackSpec],
    psr_grid: &[f64],
    wanted: &[ModelKind],
    pgd_steps: usize,
) -> Result<SweepResult> {
    let mut result = SweepResult::default();
    for &spec in attacks {
        for &psr in psr_grid {
            let outcomes = data
                .inputs
                .par_iter()
                .zip(&data.labels)
                .map(|(x, &y)| evaluate_example(models, x, y, spec, psr, pgd_steps))
                .collect::<Result<Vec<_>>>()?;
            let n = outcomes.len();
            for &kind in wanted {
                let hits: Option<usize> = outcomes
                    .iter()
                    .map(|o| match kind {
                        ModelKind::Cnn => o.cnn,
                        ModelKind::CnnAdvtrain => o.adv,
                        ModelKind::Glrt => o.glrt,
                        ModelKind::Speculative => o.speculative,
                    })
                    .map(|h| h.map(usize::from))
                    .sum();
                if let Some(hits) = hits {
                    result.rows.push(SweepRow {
                        psr_db: psr,
                        attack: spec.method,
                        norm: spec.norm,
                        model: kind,
                        accuracy: hits as f64 / n as f64,
                        n,
                    });
                }
            }
            let psrs: Vec<f64> = outcomes.iter().map(|o| o.psr).filter(|p| p.is_finite()).collect();
            let stats = if psrs.is_empty() {
                PsrStats {
                    mean: f64::NEG_INFINITY,
                    min: f64::NEG_INFINITY,
                    max: f64::NEG_INFINITY,
                }
            } else {
                PsrStats {
                    mean: psrs.iter().sum::<f64>() / psrs.len() as f64,
                    min: psrs.iter().cloned().fold(f64::INFINITY, f64::min),
                    max: psrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                }
            };
            result.manifest.push(AttackRecord {
                method: spec.method,
                p: spec.norm,
                eps: outcomes.iter().map(|o| o.eps).sum::<f64>() / n.max(1) as f64,
                q: if spec.method == AttackMethod::Pgd { pgd_steps } else { 1 },
                target_psr_db: psr,
                achieved_psr_stats: stats,
            });
        }
    }
    Ok(result)
}

pub fn load_models(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Models> {
    let needs_cnn = cfg
        .models
        .iter()
        .any(|m| matches!(m, ModelKind::Cnn | ModelKind::Speculative));
    let needs_glrt = cfg
        .models
        .iter()
        .any(|m| matches!(m, ModelKind::Glrt | ModelKind::Speculative));
    Ok(Models {
        cnn: needs_cnn.then(|| load_model(paths, ModelKind::Cnn)).transpose()?,
        cnn_advtrain: cfg
            .models
            .contains(&ModelKind::CnnAdvtrain)
            .then(|| load_model(paths, ModelKind::CnnAdvtrain))
            .transpose()?,
        validator: needs_glrt.then(|| load_validator(cfg, paths)).transpose()?,
    })
}

pub fn attack_sweep_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<SweepResult> {
    let models = load_models(cfg, paths)?;
    let data = load_split(cfg, paths, Split::Test)?;
    let result = run_sweep(
        &data,
        &models,
        &cfg.attacks,
        &cfg.psr_grid_db,
        &cfg.models,
        cfg.pgd_steps,
    )?;
    let path = paths.sweep_csv();
    let mut w = create(&path)?;
    result.write_csv(&mut w).map_err(|e| HarnessError::io(&path, e))?;
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    write_json(&paths.sweep_manifest(), &result.manifest)?;
    for spec in &cfg.attacks {
        let series: Vec<(String, Vec<(f64, f64)>)> = cfg
            .models
            .iter()
            .map(|&m| {
                let pts = cfg
                    .psr_grid_db
                    .iter()
                    .filter_map(|&p| result.accuracy(p, *spec, m).map(|a| (p, a)))
                    .collect();
                (m.name().to_string(), pts)
            })
            .filter(|(_, pts): &(String, Vec<(f64, f64)>)| !pts.is_empty())
            .collect();
        let title = format!("{} {}: accuracy vs PSR", cfg.task.name(), spec.label());
        let svg = accuracy_plot_svg(&title, &series);
        let path = paths.sweep_plot(spec);
        fs::write(&path, svg).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(result)
}

// ---------------------------------------------------------------- speculate

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub n: usize,
    pub p_agree: f64,
    pub tau_dl_ms: f64,
    pub tau_glrt_ms: f64,
    pub expected_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub accuracy_dl: f64,
    pub accuracy_glrt: f64,
    pub accuracy_final: f64,
}

pub fn run_speculation(
    data: &TaskData,
    net: &Network,
    validator: &Validator,
    latency: &LatencySettings,
) -> Result<(Vec<(usize, SpeculativeTrace)>, LatencyReport)> {
    let exec = match *latency {
        LatencySettings::Injected { tau_dl_ms, tau_glrt_ms } => Execution::Sequential {
            injected: Some((tau_dl_ms * 1e-3, tau_glrt_ms * 1e-3)),
        },
        LatencySettings::Measured { post_processing_ms } => Execution::Concurrent {
            post: PostProcess {
                duration: std::time::Duration::from_secs_f64(post_processing_ms.max(0.0) * 1e-3),
            },
        },
    };
    // Measured latencies are only meaningful one inference at a time.
    let traces: Vec<(usize, SpeculativeTrace)> = match exec {
        Execution::Sequential { .. } => data
            .inputs
            .par_iter()
            .zip(&data.labels)
            .map(|(x, &y)| Ok((y, speculative_infer(x, net, validator, exec)?)))
            .collect::<Result<_>>()?,
        Execution::Concurrent { .. } => data
            .inputs
            .iter()
            .zip(&data.labels)
            .map(|(x, &y)| Ok((y, speculative_infer(x, net, validator, exec)?)))
            .collect::<Result<_>>()?,
    };
    let only: Vec<SpeculativeTrace> = traces.iter().map(|(_, t)| *t).collect();
    let model = LatencyModel::from_traces(&only)?;
    let n = traces.len() as f64;
    let acc = |f: &dyn Fn(&SpeculativeTrace) -> usize| traces.iter().filter(|(y, t)| f(t) == *y).count() as f64 / n;
    let report = LatencyReport {
        n: traces.len(),
        p_agree: model.p_agree,
        tau_dl_ms: model.tau_dl * 1e3,
        tau_glrt_ms: model.tau_glrt * 1e3,
        expected_latency_ms: expected_latency(&model) * 1e3,
        mean_latency_ms: mean_latency(&only)? * 1e3,
        accuracy_dl: acc(&|t| t.dl_output),
        accuracy_glrt: acc(&|t| t.glrt_output),
        accuracy_final: acc(&|t| t.final_output),
    };
    Ok((traces, report))
}

pub fn speculate_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<LatencyReport> {
    let net = load_model(paths, ModelKind::Cnn)?;
    let validator = load_validator(cfg, paths)?;
    let data = load_split(cfg, paths, Split::Test)?;
    let (traces, report) = run_speculation(&data, &net, &validator, &cfg.latency)?;
    let path = paths.traces();
    let mut w = create(&path)?;
    write_trace_csv(&mut w, cfg.task, &traces)?;
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    write_json(&paths.latency(), &report)?;
    Ok(report)
}

// ---------------------------------------------------------------- theorem

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremRow {
    pub p: Norm,
    pub eps: f64,
    pub trials: usize,
    pub violations: usize,
    pub max_ratio: f64,
    pub mean_ratio: f64,
}

pub const THEOREM_CSV_HEADER: &str = "p,eps,trials,violations,max_ratio,mean_ratio";

/// Random trials of the covariance-shift bound for every (p, ε) pair. Each
/// pair has its own seeded stream, so rows do not depend on each other.
pub fn verify_theorem(
    seed: u64,
    elements: usize,
    snapshots: usize,
    trials: usize,
    eps_list: &[f64],
) -> Result<Vec<TheoremRow>> {
    let cases: Vec<(usize, Norm, f64)> = [Norm::L2, Norm::Linf]
        .into_iter()
        .flat_map(|p| eps_list.iter().map(move |&e| (p, e)))
        .enumerate()
        .map(|(i, (p, e))| (i, p, e))
        .collect();
    cases
        .par_iter()
        .map(|&(i, p, eps)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            let mut row = TheoremRow {
                p,
                eps,
                trials,
                violations: 0,
                max_ratio: 0.0,
                mean_ratio: 0.0,
            };
            for _ in 0..trials {
                let b = random_shift_trial(&mut rng, elements, snapshots, p, eps)?;
                if !b.holds() {
                    row.violations += 1;
                }
                let ratio = if b.bound > 0.0 { b.actual / b.bound } else { 0.0 };
                row.max_ratio = row.max_ratio.max(ratio);
                row.mean_ratio += ratio / trials as f64;
            }
            Ok(row)
        })
        .collect()
}

pub fn write_theorem_csv<W: Write>(rows: &[TheoremRow], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{THEOREM_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{:e},{},{},{:.6},{:.6}",
            r.p.name(),
            r.eps,
            r.trials,
            r.violations,
            r.max_ratio,
            r.mean_ratio
        )?;
    }
    Ok(())
}

pub fn verify_theorem_stage(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<Vec<TheoremRow>> {
    let rows = verify_theorem(
        cfg.seed,
        cfg.array.num_elements,
        cfg.theorem.snapshots,
        cfg.theorem.trials,
        &cfg.theorem.eps,
    )?;
    let path = paths.theorem_report();
    let mut w = create(&path)?;
    write_theorem_csv(&rows, &mut w).map_err(|e| HarnessError::io(&path, e))?;
    w.flush().map_err(|e| HarnessError::io(&path, e))?;
    Ok(rows)
}

// ---------------------------------------------------------------- all

/// Every stage in order; the resolved config is saved alongside the outputs.
pub fn run_all(cfg: &ExperimentConfig, paths: &RunPaths) -> Result<()> {
    generate(cfg, paths)?;
    let path = paths.config();
    fs::write(&path, cfg.to_json()?).map_err(|e| HarnessError::io(&path, e))?;
    train_stage(cfg, paths)?;
    calibrate_stage(cfg, paths)?;
    attack_sweep_stage(cfg, paths)?;
    if cfg.models.contains(&ModelKind::Speculative) {
        speculate_stage(cfg, paths)?;
    }
    let rows = verify_theorem_stage(cfg, paths)?;
    let violations: usize = rows.iter().map(|r| r.violations).sum();
    if violations > 0 {
        return Err(HarnessError::BoundViolated(violations));
    }
    Ok(())
}
