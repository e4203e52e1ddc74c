//! Speculative inference: act on the fast classifier's label at once, validate
//! it with the GLRT, and restart downstream work when the two disagree.

use std::io::Write;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::attacks::covariance_pair_from_tensor;
use crate::error::{Error, Result};
use crate::glrt::{glrt_detect, glrt_doa, GlrtDetectionConfig, GlrtDoaConfig};
use crate::neural::Network;
use crate::signal::{from_real_tensor, Task};
use crate::tensor::RealTensor;

/// Outcome of one speculative inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeculativeTrace {
    pub dl_output: usize,
    pub glrt_output: usize,
    pub agreement: bool,
    pub final_output: usize,
    /// Seconds.
    pub tau_dl: f64,
    pub tau_glrt: f64,
    pub restarted: bool,
}

impl SpeculativeTrace {
    /// Applies the consistency rule: keep the fast label when both agree,
    /// otherwise take the validator's label and restart.
    pub fn resolve(dl_output: usize, glrt_output: usize, tau_dl: f64, tau_glrt: f64) -> Self {
        let agreement = dl_output == glrt_output;
        Self {
            dl_output,
            glrt_output,
            agreement,
            final_output: if agreement { dl_output } else { glrt_output },
            tau_dl,
            tau_glrt,
            restarted: !agreement,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.agreement == (self.dl_output == self.glrt_output)
            && self.final_output
                == if self.agreement {
                    self.dl_output
                } else {
                    self.glrt_output
                }
            && self.restarted == !self.agreement
            && self.tau_dl >= 0.0
            && self.tau_glrt >= 0.0
    }

    /// Time until a committed decision: the fast path alone, plus the
    /// validator when a restart was needed.
    pub fn latency(&self) -> f64 {
        if self.restarted {
            self.tau_dl + self.tau_glrt
        } else {
            self.tau_dl
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub p_agree: f64,
    pub tau_dl: f64,
    pub tau_glrt: f64,
}

impl LatencyModel {
    pub fn new(p_agree: f64, tau_dl: f64, tau_glrt: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_agree) {
            return Err(Error::Domain(format!(
                "agreement probability must lie in [0, 1], got {p_agree}"
            )));
        }
        if !(tau_dl >= 0.0 && tau_glrt >= 0.0) {
            return Err(Error::Domain("latencies must be nonnegative".into()));
        }
        Ok(Self {
            p_agree,
            tau_dl,
            tau_glrt,
        })
    }

    /// Agreement rate and mean latencies of a set of traces.
    pub fn from_traces(traces: &[SpeculativeTrace]) -> Result<Self> {
        let p = agreement_rate(traces)?;
        let n = traces.len() as f64;
        Self::new(
            p,
            traces.iter().map(|t| t.tau_dl).sum::<f64>() / n,
            traces.iter().map(|t| t.tau_glrt).sum::<f64>() / n,
        )
    }
}

/// p·τ_DL + (1 − p)·(τ_DL + τ_GLRT).
pub fn expected_latency(m: &LatencyModel) -> f64 {
    m.p_agree * m.tau_dl + (1.0 - m.p_agree) * (m.tau_dl + m.tau_glrt)
}

pub fn agreement_rate(traces: &[SpeculativeTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("agreement rate of an empty trace set".into()));
    }
    Ok(traces.iter().filter(|t| t.agreement).count() as f64 / traces.len() as f64)
}

pub fn mean_latency(traces: &[SpeculativeTrace]) -> Result<f64> {
    if traces.is_empty() {
        return Err(Error::Domain("mean latency of an empty trace set".into()));
    }
    Ok(traces.iter().map(SpeculativeTrace::latency).sum::<f64>() / traces.len() as f64)
}

/// The statistical validator paired with the classifier.
#[derive(Debug, Clone)]
pub enum Validator {
    Detection(GlrtDetectionConfig),
    Doa(GlrtDoaConfig),
}

impl Validator {
    pub fn task(&self) -> Task {
        match self {
            Validator::Detection(_) => Task::Detection,
            Validator::Doa(_) => Task::Doa,
        }
    }

    /// GLRT label for the observation both paths share: the snapshot tensor
    /// for detection, the covariance tensor for DoA.
    pub fn decide(&self, x: &RealTensor) -> Result<usize> {
        match self {
            Validator::Detection(cfg) => glrt_detect(&from_real_tensor(x)?, cfg),
            Validator::Doa(cfg) => Ok(glrt_doa(&covariance_pair_from_tensor(x, cfg.zeta)?, cfg)?.class_index),
        }
    }
}

/// Downstream work that consumes a label (decoding, tracking, ...), modelled
/// as a fixed delay.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PostProcess {
    pub duration: Duration,
}

impl PostProcess {
    pub fn run(&self, _label: usize) {
        if !self.duration.is_zero() {
            thread::sleep(self.duration);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Execution {
    /// Classifier then validator on the calling thread. Injected latencies,
    /// when given, replace the measured ones so traces are reproducible.
    Sequential { injected: Option<(f64, f64)> },
    /// Validator on its own thread while the classifier's label is already
    /// being post-processed; the consistency check is the join.
    Concurrent { post: PostProcess },
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let start = Instant::now();
    let out = f()?;
    Ok((out, start.elapsed().as_secs_f64()))
}

/// One speculative inference on observation `x`.
pub fn speculative_infer(
    x: &RealTensor,
    net: &Network,
    validator: &Validator,
    exec: Execution,
) -> Result<SpeculativeTrace> {
    match exec {
        Execution::Sequential { injected } => {
            let (dl, tau_dl) = timed(|| net.predict(x))?;
            let (glrt, tau_glrt) = timed(|| validator.decide(x))?;
            let (tau_dl, tau_glrt) = injected.unwrap_or((tau_dl, tau_glrt));
            Ok(SpeculativeTrace::resolve(dl, glrt, tau_dl, tau_glrt))
        }
        Execution::Concurrent { post } => thread::scope(|s| {
            let validation = s.spawn(|| timed(|| validator.decide(x)));
            let (dl, tau_dl) = timed(|| net.predict(x))?;
            post.run(dl);
            let (glrt, tau_glrt) = validation
                .join()
                .map_err(|_| Error::State("validator thread panicked".into()))??;
            let trace = SpeculativeTrace::resolve(dl, glrt, tau_dl, tau_glrt);
            if trace.restarted {
                post.run(trace.final_output);
            }
            Ok(trace)
        }),
    }
}

pub const TRACE_CSV_HEADER: &str = "task,true_label,dl_out,glrt_out,agree,final,tau_dl_ms,tau_glrt_ms,restarted";

/// One CSV line per trace, in the column order of [`TRACE_CSV_HEADER`].
pub fn write_trace_csv<W: Write>(mut w: W, task: Task, rows: &[(usize, SpeculativeTrace)]) -> Result<()> {
    writeln!(w, "{TRACE_CSV_HEADER}")?;
    for (label, t) in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.6},{:.6},{}",
            task.name(),
            label,
            t.dl_output,
            t.glrt_output,
            t.agreement,
            t.final_output,
            t.tau_dl * 1e3,
            t.tau_glrt * 1e3,
            t.restarted
        )?;
    }
    Ok(())
}
