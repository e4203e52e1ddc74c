//! Uniform linear array observation model.
//!
//! An observation is the M×T complex matrix of array snapshots
//!
//! ```text
//! z(t) = a(θ₁)·s₁(t) + a(θ₂)·s₂(t) + n(t)
//! ```
//!
//! where `s₁` is the interference, `s₂` the signal of interest (SOI) and `n`
//! white Gaussian noise. Every synthesized matrix is scaled as a whole to unit
//! energy, which keeps the configured power ratios intact.
//!
//! Snapshot indices are zero-based throughout: an SOI with onset `t0` is
//! present in columns `t0..T` and exactly zero in columns `0..t0`.

pub mod dataset;

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::tensor::RealTensor;

/// Geometry of the array and the angular grid used for DoA classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub num_elements: usize,
    /// Inter-element spacing in wavelengths.
    pub spacing_wavelengths: f64,
    pub grid_min_deg: f64,
    pub grid_max_deg: f64,
    pub grid_step_deg: f64,
}

impl Default for ArrayConfig {
    fn default() -> Self {
        Self {
            num_elements: 8,
            spacing_wavelengths: 0.5,
            grid_min_deg: -60.0,
            grid_max_deg: 60.0,
            grid_step_deg: 2.0,
        }
    }
}

const GRID_TOL: f64 = 1e-9;

impl ArrayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_elements < 2 {
            return Err(Error::Domain(format!(
                "array needs at least 2 elements, got {}",
                self.num_elements
            )));
        }
        if !(self.spacing_wavelengths > 0.0) {
            return Err(Error::Domain("element spacing must be positive".into()));
        }
        if !(self.grid_min_deg < self.grid_max_deg) || !(self.grid_step_deg > 0.0) {
            return Err(Error::Domain(
                "grid bounds must satisfy min < max with a positive step".into(),
            ));
        }
        let steps = (self.grid_max_deg - self.grid_min_deg) / self.grid_step_deg;
        if (steps - steps.round()).abs() > GRID_TOL {
            return Err(Error::Domain("grid span is not a multiple of the grid step".into()));
        }
        if self.grid_min_deg <= -90.0 || self.grid_max_deg >= 90.0 {
            return Err(Error::Domain("grid must lie inside (-90°, 90°)".into()));
        }
        Ok(())
    }

    /// Number of DoA classes on the grid.
    pub fn num_classes(&self) -> usize {
        ((self.grid_max_deg - self.grid_min_deg) / self.grid_step_deg).round() as usize + 1
    }

    pub fn grid_angles(&self) -> Vec<f64> {
        (0..self.num_classes()).map(|i| self.angle_of_class(i)).collect()
    }

    pub fn angle_of_class(&self, class: usize) -> f64 {
        self.grid_min_deg + class as f64 * self.grid_step_deg
    }

    /// Class index of an on-grid angle.
    pub fn class_index(&self, angle_deg: f64) -> Result<usize> {
        let pos = (angle_deg - self.grid_min_deg) / self.grid_step_deg;
        let idx = pos.round();
        if (pos - idx).abs() > GRID_TOL || idx < 0.0 || idx as usize >= self.num_classes() {
            return Err(Error::Domain(format!("angle {angle_deg}° is not on the steering grid")));
        }
        Ok(idx as usize)
    }

    /// Steering vectors for every grid angle, in class order.
    pub fn steering_grid(&self) -> Result<Vec<SteeringVector>> {
        self.grid_angles()
            .into_iter()
            .map(|a| steering_vector(self, a))
            .collect()
    }
}

/// Per-element phase response to a far-field source.
#[derive(Debug, Clone, PartialEq)]
pub struct SteeringVector {
    pub angle_deg: f64,
    pub values: Vec<C64>,
}

/// `a(θ)[m] = exp(−j·2π·d·m·sin θ)`, referenced to element 0.
pub fn steering_vector(config: &ArrayConfig, angle_deg: f64) -> Result<SteeringVector> {
    if !(angle_deg > -90.0 && angle_deg < 90.0) {
        return Err(Error::Domain(format!("angle {angle_deg}° outside (-90°, 90°)")));
    }
    let phase_step = -2.0 * PI * config.spacing_wavelengths * angle_deg.to_radians().sin();
    let values = (0..config.num_elements)
        .map(|m| C64::from_polar(1.0, phase_step * m as f64))
        .collect();
    Ok(SteeringVector { angle_deg, values })
}

/// Which of the two array-processing problems an observation belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Task {
    #[serde(rename = "det")]
    Detection,
    #[serde(rename = "doa")]
    Doa,
}

impl Task {
    pub fn tag(self) -> u8 {
        match self {
            Task::Detection => 0,
            Task::Doa => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Task::Detection),
            1 => Ok(Task::Doa),
            other => Err(Error::Format(format!("unknown task tag {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::Detection => "det",
            Task::Doa => "doa",
        }
    }
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "det" | "detection" => Ok(Task::Detection),
            "doa" => Ok(Task::Doa),
            other => Err(Error::Domain(format!("unknown task '{other}' (expected det or doa)"))),
        }
    }
}

/// Knobs of the synthetic data generator. Powers are per-element variances
/// before the final unit-energy scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisParams {
    pub snapshots: usize,
    pub noise_power: f64,
    pub soi_power: f64,
    pub interference_power: f64,
    /// Inclusive bounds of the random detection onset.
    pub onset_min: usize,
    pub onset_max: usize,
    pub rng_seed: u64,
}

impl SynthesisParams {
    /// Detection defaults: T = 500, onset uniform on {20, …, 480}.
    pub fn detection_default() -> Self {
        Self {
            snapshots: 500,
            noise_power: 0.04,
            soi_power: 3.0,
            interference_power: 1.0,
            onset_min: 20,
            onset_max: 480,
            rng_seed: 1,
        }
    }

    /// DoA defaults: T = 1500 with the SOI switched on at T/2.
    pub fn doa_default() -> Self {
        Self {
            snapshots: 1500,
            noise_power: 0.01,
            soi_power: 3.0,
            interference_power: 1.0,
            onset_min: 750,
            onset_max: 750,
            rng_seed: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 {
            return Err(Error::Domain("snapshot count must be positive".into()));
        }
        for (name, v) in [
            ("noise_power", self.noise_power),
            ("soi_power", self.soi_power),
            ("interference_power", self.interference_power),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} must be a finite nonnegative number")));
            }
        }
        if self.onset_min < 1 || self.onset_max > self.snapshots || self.onset_min > self.onset_max {
            return Err(Error::Domain(format!(
                "onset range [{}, {}] invalid for T = {}",
                self.onset_min, self.onset_max, self.snapshots
            )));
        }
        Ok(())
    }

    /// DoA onset: the midpoint of the observation window.
    pub fn doa_onset(&self) -> usize {
        self.snapshots / 2
    }
}

/// One synthesized observation plus its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceivedArray {
    /// M×T complex snapshots.
    pub samples: CMatrix,
    pub task: Task,
    /// Hypothesis bit for detection, grid class index for DoA.
    pub label: usize,
    /// Zero-based SOI onset column, absent when no SOI is present.
    pub onset: Option<usize>,
}

impl ReceivedArray {
    pub fn num_elements(&self) -> usize {
        self.samples.nrows()
    }

    pub fn snapshots(&self) -> usize {
        self.samples.ncols()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|z| z.norm_sqr()).sum()
    }
}

fn complex_gaussian(rng: &mut ChaCha8Rng, power: f64) -> C64 {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    C64::new(re * s, im * s)
}

fn add_steered_source(z: &mut CMatrix, steering: &SteeringVector, power: f64, from: usize, rng: &mut ChaCha8Rng) {
    for t in from..z.ncols() {
        let s = complex_gaussian(rng, power);
        for (m, a) in steering.values.iter().enumerate() {
            z[(m, t)] += a * s;
        }
    }
}

fn add_white(z: &mut CMatrix, power: f64, rng: &mut ChaCha8Rng) {
    // Column-major walk keeps draw order identical to snapshot order.
    for t in 0..z.ncols() {
        for m in 0..z.nrows() {
            z[(m, t)] += complex_gaussian(rng, power);
        }
    }
}

fn unit_energy_scale(z: &CMatrix) -> f64 {
    let e: f64 = z.iter().map(|v| v.norm_sqr()).sum();
    if e > 0.0 {
        1.0 / e.sqrt()
    } else {
        1.0
    }
}

/// Observation together with its scaled SOI contribution, for tests that need
/// the noiseless component.
#[derive(Debug, Clone)]
pub struct TracedArray {
    pub array: ReceivedArray,
    /// The SOI term after unit-energy scaling (all zeros when absent).
    pub soi: CMatrix,
}

fn uniform_angle(rng: &mut ChaCha8Rng) -> f64 {
    rng.random_range(-60.0..=60.0)
}

/// Detection observation under hypothesis `label` (0: interference only,
/// 1: interference plus an SOI switched on at a random onset).
pub fn synthesize_detection_traced(
    config: &ArrayConfig,
    params: &SynthesisParams,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> Result<TracedArray> {
    config.validate()?;
    params.validate()?;
    if label > 1 {
        return Err(Error::Domain(format!("detection label must be 0 or 1, got {label}")));
    }
    let (m, t) = (config.num_elements, params.snapshots);
    let mut z = CMatrix::zeros(m, t);

    let interference = steering_vector(config, uniform_angle(rng))?;
    add_steered_source(&mut z, &interference, params.interference_power, 0, rng);

    let mut soi = CMatrix::zeros(m, t);
    let mut onset = None;
    if label == 1 {
        let t0 = rng.random_range(params.onset_min..=params.onset_max);
        let target = steering_vector(config, uniform_angle(rng))?;
        add_steered_source(&mut soi, &target, params.soi_power, t0, rng);
        onset = Some(t0);
    }
    add_white(&mut z, params.noise_power, rng);
    z += &soi;

    let scale = C64::new(unit_energy_scale(&z), 0.0);
    Ok(TracedArray {
        array: ReceivedArray {
            samples: z * scale,
            task: Task::Detection,
            label,
            onset,
        },
        soi: soi * scale,
    })
}

pub fn synthesize_detection_example(
    config: &ArrayConfig,
    params: &SynthesisParams,
    label: usize,
    rng: &mut ChaCha8Rng,
) -> Result<ReceivedArray> {
    synthesize_detection_traced(config, params, label, rng).map(|t| t.array)
}

/// DoA observation: spatially white interference for the whole window and an
/// SOI from the grid angle `theta2_deg` from the midpoint onwards.
pub fn synthesize_doa_traced(
    config: &ArrayConfig,
    params: &SynthesisParams,
    theta2_deg: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TracedArray> {
    config.validate()?;
    params.validate()?;
    let class = config.class_index(theta2_deg)?;
    let (m, t) = (config.num_elements, params.snapshots);
    let t0 = params.doa_onset();

    let mut z = CMatrix::zeros(m, t);
    add_white(&mut z, params.interference_power + params.noise_power, rng);
    let mut soi = CMatrix::zeros(m, t);
    let target = steering_vector(config, theta2_deg)?;
    add_steered_source(&mut soi, &target, params.soi_power, t0, rng);
    z += &soi;

    let scale = C64::new(unit_energy_scale(&z), 0.0);
    Ok(TracedArray {
        array: ReceivedArray {
            samples: z * scale,
            task: Task::Doa,
            label: class,
            onset: Some(t0),
        },
        soi: soi * scale,
    })
}

pub fn synthesize_doa_example(
    config: &ArrayConfig,
    params: &SynthesisParams,
    theta2_deg: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ReceivedArray> {
    synthesize_doa_traced(config, params, theta2_deg, rng).map(|t| t.array)
}

/// Split a complex matrix into an M×T×2 tensor (channel 0 real, 1 imaginary).
pub fn complex_to_tensor(z: &CMatrix) -> RealTensor {
    let (m, t) = z.shape();
    let mut out = RealTensor::zeros([m, t, 2]);
    for r in 0..m {
        for c in 0..t {
            let v = z[(r, c)];
            out.set(r, c, 0, v.re);
            out.set(r, c, 1, v.im);
        }
    }
    out
}

/// Inverse of [`complex_to_tensor`].
pub fn tensor_to_complex(x: &RealTensor) -> Result<CMatrix> {
    let [m, t, ch] = x.dims();
    if ch != 2 {
        return Err(Error::Shape {
            expected: vec![m, t, 2],
            got: x.dims().to_vec(),
        });
    }
    Ok(CMatrix::from_fn(m, t, |r, c| C64::new(x.get(r, c, 0), x.get(r, c, 1))))
}

pub fn to_real_tensor(z: &ReceivedArray) -> RealTensor {
    complex_to_tensor(&z.samples)
}

pub fn from_real_tensor(x: &RealTensor) -> Result<CMatrix> {
    tensor_to_complex(x)
}
