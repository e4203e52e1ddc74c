//! Experiment configuration: one JSON file drives a whole pipeline run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use specarray::attacks::AttackMethod;
use specarray::glrt::DEFAULT_LOADING;
use specarray::neural::TrainConfig;
use specarray::signal::{ArrayConfig, SynthesisParams, Task};
use specarray::Norm;

use crate::error::{HarnessError, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    CnnAdvtrain,
    Glrt,
    Speculative,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::CnnAdvtrain => "cnn_advtrain",
            ModelKind::Glrt => "glrt",
            ModelKind::Speculative => "speculative",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackSpec {
    pub method: AttackMethod,
    pub norm: Norm,
}

impl AttackSpec {
    pub fn label(&self) -> String {
        format!("{}-{}", self.method.name(), self.norm.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub train: usize,
    pub test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlrtSettings {
    /// Window length; detection uses short sliding windows, DoA the halves
    /// either side of the onset.
    pub k: usize,
    pub zeta: f64,
    pub percentile: f64,
    /// Number of H₀ training examples used to set the threshold (all when
    /// absent).
    #[serde(default)]
    pub calibration_examples: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdvTrainSettings {
    pub attack: AttackSpec,
    pub psr_db: f64,
}

/// How speculation traces get their latencies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum LatencySettings {
    /// Fixed per-path latencies; traces are reproducible byte for byte.
    Injected { tau_dl_ms: f64, tau_glrt_ms: f64 },
    /// Wall-clock latencies with the validator on its own thread.
    Measured { post_processing_ms: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremSettings {
    pub trials: usize,
    pub eps: Vec<f64>,
    pub snapshots: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub task: Task,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSizes,
    pub array: ArrayConfig,
    pub synthesis: SynthesisParams,
    pub glrt: GlrtSettings,
    pub train: TrainConfig,
    pub attacks: Vec<AttackSpec>,
    pub pgd_steps: usize,
    pub psr_grid_db: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub adversarial_training: AdvTrainSettings,
    pub latency: LatencySettings,
    pub theorem: TheoremSettings,
}

/// Default PSR sweep: −35 dB to −10 dB in 2.5 dB steps.
pub fn default_psr_grid() -> Vec<f64> {
    (0..=10).map(|i| -35.0 + 2.5 * i as f64).collect()
}

impl ExperimentConfig {
    pub fn default_for(task: Task) -> Self {
        let array = ArrayConfig::default();
        let (synthesis, k, train) = match task {
            Task::Detection => (SynthesisParams::detection_default(), 10, TrainConfig::detection()),
            Task::Doa => {
                let s = SynthesisParams::doa_default();
                let k = s.doa_onset();
                (s, k, TrainConfig::doa())
            }
        };
        let attacks = [AttackMethod::Fgsm, AttackMethod::Pgd]
            .into_iter()
            .flat_map(|method| [Norm::Linf, Norm::L2].map(|norm| AttackSpec { method, norm }))
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            task,
            seed: synthesis.rng_seed,
            output_dir: PathBuf::from(format!("runs/{}", task.name())),
            dataset: DatasetSizes {
                train: 4000,
                test: 1000,
            },
            array,
            synthesis,
            glrt: GlrtSettings {
                k,
                zeta: DEFAULT_LOADING,
                percentile: 95.0,
                calibration_examples: None,
            },
            train,
            attacks,
            pgd_steps: 10,
            psr_grid_db: default_psr_grid(),
            models: vec![
                ModelKind::Cnn,
                ModelKind::CnnAdvtrain,
                ModelKind::Glrt,
                ModelKind::Speculative,
            ],
            adversarial_training: AdvTrainSettings {
                attack: AttackSpec {
                    method: AttackMethod::Fgsm,
                    norm: Norm::Linf,
                },
                psr_db: -20.0,
            },
            latency: LatencySettings::Injected {
                tau_dl_ms: 1.0,
                tau_glrt_ms: 5.0,
            },
            theorem: TheoremSettings {
                trials: 1000,
                eps: vec![1e-3, 1e-2, 1e-1],
                snapshots: 64,
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("invalid config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(specarray::Error::from)?;
        s.push('\n');
        Ok(s)
    }

    /// Replaces the run seed; it drives both synthesis and training.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "config schema version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.array.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.synthesis
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.train.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.dataset.train == 0 || self.dataset.test == 0 {
            return bad("dataset sizes must be positive".into());
        }
        if self.psr_grid_db.is_empty() || self.psr_grid_db.windows(2).any(|w| w[1] <= w[0]) {
            return bad("psr_grid_db must be nonempty and strictly increasing".into());
        }
        if self.psr_grid_db.iter().any(|p| !p.is_finite()) {
            return bad("psr_grid_db entries must be finite".into());
        }
        if self.pgd_steps == 0 {
            return bad("pgd_steps must be at least 1".into());
        }
        if self.models.is_empty() {
            return bad("at least one model must be listed".into());
        }
        if !(self.glrt.zeta > 0.0) || self.glrt.k == 0 {
            return bad("glrt.k and glrt.zeta must be positive".into());
        }
        if !(self.glrt.percentile > 0.0 && self.glrt.percentile <= 100.0) {
            return bad(format!(
                "glrt.percentile must lie in (0, 100], got {}",
                self.glrt.percentile
            ));
        }
        if self.task == Task::Doa {
            let t0 = self.synthesis.doa_onset();
            if self.glrt.k > t0 || t0 + self.glrt.k > self.synthesis.snapshots {
                return bad(format!(
                    "DoA windows of {} snapshots around onset {t0} do not fit {} snapshots",
                    self.glrt.k, self.synthesis.snapshots
                ));
            }
        } else if 2 * self.glrt.k > self.synthesis.snapshots {
            return bad("detection windows longer than the observation".into());
        }
        if let LatencySettings::Injected { tau_dl_ms, tau_glrt_ms } = self.latency {
            if !(tau_dl_ms >= 0.0 && tau_glrt_ms >= 0.0) {
                return bad("injected latencies must be nonnegative".into());
            }
        }
        if self.theorem.trials == 0 || self.theorem.snapshots < 2 || self.theorem.eps.iter().any(|e| !(*e > 0.0)) {
            return bad("theorem settings need trials ≥ 1, snapshots ≥ 2 and positive eps".into());
        }
        Ok(())
    }

    pub fn task_dir(&self) -> PathBuf {
        self.output_dir.clone()
    }

    /// Synthesis parameters for a split; the split is folded into the seed so
    /// train and test never share example streams.
    pub fn split_params(&self, split: Split) -> SynthesisParams {
        let mut p = self.synthesis.clone();
        p.rng_seed = split_seed(self.seed, split);
        p
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.rng_seed = self.seed;
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

pub fn split_seed(seed: u64, split: Split) -> u64 {
    match split {
        Split::Train => seed,
        Split::Test => seed ^ 0x9e37_79b9_7f4a_7c15,
    }
}
