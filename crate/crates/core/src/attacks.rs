//! Gradient-based evasion attacks (FGSM and PGD under ℓ2 or ℓ∞), ball
//! projections and perturbation-to-signal accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::neural::{Mode, Network};
use crate::signal::tensor_to_complex;
use crate::stats::{CovarianceMatrix, CovariancePair};
use crate::tensor::{Norm, RealTensor};

/// Slack allowed on ball membership of returned perturbations.
pub const BALL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMethod {
    Fgsm,
    Pgd,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Pgd => "pgd",
        }
    }
}

impl std::str::FromStr for AttackMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fgsm" => Ok(AttackMethod::Fgsm),
            "pgd" => Ok(AttackMethod::Pgd),
            other => Err(Error::Domain(format!(
                "unknown attack '{other}' (expected fgsm or pgd)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub norm: Norm,
    /// Ball radius in the norm of `norm`, in tensor units.
    pub eps: f64,
    /// PGD iterations; ignored by FGSM.
    pub steps: usize,
    /// Optional extra cap on ‖δ‖₂², off by default.
    #[serde(default)]
    pub power_cap: Option<f64>,
}

impl AttackConfig {
    pub const DEFAULT_STEPS: usize = 10;

    pub fn fgsm(norm: Norm, eps: f64) -> Self {
        Self {
            method: AttackMethod::Fgsm,
            norm,
            eps,
            steps: 1,
            power_cap: None,
        }
    }

    pub fn pgd(norm: Norm, eps: f64, steps: usize) -> Self {
        Self {
            method: AttackMethod::Pgd,
            norm,
            eps,
            steps,
            power_cap: None,
        }
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    /// PGD step size α = ε/Q.
    pub fn step_size(&self) -> f64 {
        self.eps / self.steps as f64
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(Error::Domain(format!(
                "attack eps must be finite and nonnegative, got {}",
                self.eps
            )));
        }
        if self.steps == 0 {
            return Err(Error::Domain("attack steps must be at least 1".into()));
        }
        if let Some(cap) = self.power_cap {
            if !(cap >= 0.0) {
                return Err(Error::Domain(format!("power cap must be nonnegative, got {cap}")));
            }
        }
        Ok(())
    }
}

/// An additive perturbation with its achieved norms and PSR.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta: RealTensor,
    pub l2: f64,
    pub linf: f64,
    /// 10·log₁₀(‖δ‖²/‖x‖²); −∞ for δ = 0.
    pub psr_db: f64,
    /// Set when a zero gradient stopped the attack from moving.
    pub degenerate: bool,
}

impl Perturbation {
    fn new(delta: RealTensor, reference: &RealTensor, degenerate: bool) -> Result<Self> {
        Ok(Self {
            l2: delta.l2_norm(),
            linf: delta.linf_norm(),
            psr_db: psr_db(&delta, reference)?,
            delta,
            degenerate,
        })
    }

    pub fn norm(&self, p: Norm) -> f64 {
        match p {
            Norm::L2 => self.l2,
            Norm::Linf => self.linf,
        }
    }

    /// The attacked input x + δ.
    pub fn apply(&self, x: &RealTensor) -> Result<RealTensor> {
        x.add(&self.delta)
    }
}

/// A classifier whose loss can be differentiated with respect to its input.
pub trait Differentiable {
    fn input_dims(&self) -> [usize; 3];
    fn loss_and_input_gradient(&self, x: &RealTensor, label: usize) -> Result<(f64, RealTensor)>;
}

/// Attacks target the deployed function: dropout off, running batch-norm
/// statistics.
impl Differentiable for Network {
    fn input_dims(&self) -> [usize; 3] {
        Network::input_dims(self)
    }

    fn loss_and_input_gradient(&self, x: &RealTensor, label: usize) -> Result<(f64, RealTensor)> {
        let lg = self.loss_and_gradients(x, label, Mode::Eval)?;
        Ok((lg.loss, lg.input))
    }
}

fn check_dims(net: &impl Differentiable, x: &RealTensor) -> Result<()> {
    if net.input_dims() != x.dims() {
        return Err(Error::Shape {
            expected: net.input_dims().to_vec(),
            got: x.dims().to_vec(),
        });
    }
    Ok(())
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Steepest-ascent direction of unit size in the given norm, or `None` for a
/// zero gradient under ℓ2.
fn ascent_direction(grad: &RealTensor, p: Norm) -> Option<RealTensor> {
    match p {
        Norm::Linf => {
            let data = grad.data().iter().map(|&g| sign(g)).collect();
            Some(RealTensor::new(grad.dims(), data).expect("same dims as gradient"))
        }
        Norm::L2 => {
            let n = grad.l2_norm();
            (n > 0.0).then(|| grad.scaled(1.0 / n))
        }
    }
}

fn apply_cap(delta: RealTensor, cap: Option<f64>) -> RealTensor {
    match cap {
        Some(cap) => {
            let n = delta.l2_norm();
            let limit = cap.sqrt();
            if n > limit {
                delta.scaled(limit / n)
            } else {
                delta
            }
        }
        None => delta,
    }
}

/// Single gradient step of size ε: ε·sign(∇) for ℓ∞, ε·∇/‖∇‖₂ for ℓ2.
pub fn fgsm(net: &impl Differentiable, x: &RealTensor, label: usize, cfg: &AttackConfig) -> Result<Perturbation> {
    cfg.validate()?;
    check_dims(net, x)?;
    if cfg.eps == 0.0 {
        return Perturbation::new(RealTensor::zeros(x.dims()), x, false);
    }
    let (_, grad) = net.loss_and_input_gradient(x, label)?;
    let (delta, degenerate) = match ascent_direction(&grad, cfg.norm) {
        Some(dir) => (dir.scaled(cfg.eps), grad.linf_norm() == 0.0),
        None => (RealTensor::zeros(x.dims()), true),
    };
    Perturbation::new(apply_cap(delta, cfg.power_cap), x, degenerate)
}

/// Q steps of size ε/Q from the clean input, each followed by projection onto
/// the ε-ball around it.
pub fn pgd(net: &impl Differentiable, x: &RealTensor, label: usize, cfg: &AttackConfig) -> Result<Perturbation> {
    cfg.validate()?;
    check_dims(net, x)?;
    if cfg.eps == 0.0 {
        return Perturbation::new(RealTensor::zeros(x.dims()), x, false);
    }
    let alpha = cfg.step_size();
    let mut z = x.clone();
    let mut degenerate = false;
    for _ in 0..cfg.steps {
        let (_, grad) = net.loss_and_input_gradient(&z, label)?;
        let Some(dir) = ascent_direction(&grad, cfg.norm) else {
            degenerate = true;
            break;
        };
        if grad.linf_norm() == 0.0 {
            degenerate = true;
            break;
        }
        z = project_lp_ball(&z.add(&dir.scaled(alpha))?, x, cfg.eps, cfg.norm)?;
    }
    Perturbation::new(apply_cap(z.sub(x)?, cfg.power_cap), x, degenerate)
}

/// Dispatch on the configured method.
pub fn attack(net: &impl Differentiable, x: &RealTensor, label: usize, cfg: &AttackConfig) -> Result<Perturbation> {
    match cfg.method {
        AttackMethod::Fgsm => fgsm(net, x, label, cfg),
        AttackMethod::Pgd => pgd(net, x, label, cfg),
    }
}

/// Nearest point of the closed ℓp ball of radius ε around `center`.
pub fn project_lp_ball(x: &RealTensor, center: &RealTensor, eps: f64, p: Norm) -> Result<RealTensor> {
    x.check_same_dims(center)?;
    if !(eps >= 0.0) {
        return Err(Error::Domain(format!("ball radius must be nonnegative, got {eps}")));
    }
    match p {
        Norm::Linf => {
            let data = x
                .data()
                .iter()
                .zip(center.data())
                .map(|(&v, &c)| v.clamp(c - eps, c + eps))
                .collect();
            RealTensor::new(x.dims(), data)
        }
        Norm::L2 => {
            let d = x.sub(center)?;
            let n = d.l2_norm();
            if n <= eps {
                return Ok(x.clone());
            }
            center.add(&d.scaled(eps / n))
        }
    }
}

/// Perturbation-to-signal power ratio in dB.
pub fn psr_db(delta: &RealTensor, reference: &RealTensor) -> Result<f64> {
    delta.check_same_dims(reference)?;
    let signal = reference.energy();
    if signal <= 0.0 {
        return Err(Error::Domain("PSR reference has zero energy".into()));
    }
    let power = delta.energy();
    if power == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(10.0 * (power / signal).log10())
}

/// Ball radius that yields the target PSR against a reference of the given
/// ℓ2 norm. For ℓ∞ this assumes a full-sign perturbation over `elements`
/// entries, so ‖δ‖₂² = n·ε².
pub fn eps_for_psr(reference_l2: f64, target_psr_db: f64, p: Norm, elements: usize) -> Result<f64> {
    if !(reference_l2 > 0.0) || elements == 0 {
        return Err(Error::Domain(
            "eps_for_psr needs a nonzero reference and element count".into(),
        ));
    }
    let l2 = reference_l2 * 10f64.powf(target_psr_db / 20.0);
    Ok(match p {
        Norm::L2 => l2,
        Norm::Linf => l2 / (elements as f64).sqrt(),
    })
}

/// Attack the DoA classifier in its covariance-tensor input domain.
pub fn attack_doa_example(
    net: &Network,
    cov_input: &RealTensor,
    label: usize,
    cfg: &AttackConfig,
) -> Result<Perturbation> {
    let [m, cols, ch] = cov_input.dims();
    if cols != 2 * m || ch != 2 {
        return Err(Error::Shape {
            expected: vec![m, 2 * m, 2],
            got: cov_input.dims().to_vec(),
        });
    }
    attack(net, cov_input, label, cfg)
}

/// Splits an M×2M×2 covariance tensor back into its two complex M×M halves.
/// The halves are used as-is; a perturbed tensor need not be Hermitian.
pub fn split_covariance_tensor(x: &RealTensor) -> Result<(CMatrix, CMatrix)> {
    let [m, cols, ch] = x.dims();
    if cols != 2 * m || ch != 2 {
        return Err(Error::Shape {
            expected: vec![m, 2 * m, 2],
            got: x.dims().to_vec(),
        });
    }
    let joined = tensor_to_complex(x)?;
    Ok((joined.columns(0, m).into_owned(), joined.columns(m, m).into_owned()))
}

fn hermitian_part(a: CMatrix) -> CMatrix {
    (&a + a.adjoint()) * C64::new(0.5, 0.0)
}

/// The covariance pair a consumer of the (possibly perturbed) tensor sees.
/// Each half is projected onto the Hermitian matrices, since a covariance
/// estimate is Hermitian by construction; `zeta` is recorded as the loading
/// already contained in the values.
pub fn covariance_pair_from_tensor(x: &RealTensor, zeta: f64) -> Result<CovariancePair> {
    let (r_old, r_new) = split_covariance_tensor(x)?;
    CovariancePair::new(
        CovarianceMatrix {
            values: hermitian_part(r_old),
            loading: zeta,
        },
        CovarianceMatrix {
            values: hermitian_part(r_new),
            loading: zeta,
        },
    )
}
