//! Windowing, empirical covariances and the covariance-stability bound.
//!
//! Two covariance estimators live here and are never mixed:
//!
//! * [`empirical_covariance`]: the uncentered `W·Wᴴ + ζI` used by the GLRT
//!   and the DoA classifier input.
//! * [`centered_sample_covariance`]: `Z_c·Z_cᴴ / (T−1)` with the column mean
//!   removed, the object the perturbation bound in
//!   [`covariance_shift_bound`] is stated for.

use nalgebra::SymmetricEigen;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::linalg::{frobenius, hermitian_residual, spectral_norm, CMatrix, C64};
use crate::tensor::Norm;

/// Hermitian covariance estimate together with its diagonal loading.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceMatrix {
    pub values: CMatrix,
    pub loading: f64,
}

impl CovarianceMatrix {
    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn hermitian_residual(&self) -> f64 {
        hermitian_residual(&self.values)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius(&self.values)
    }

    /// Eigenvalues (ascending) of the Hermitian part.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.values + self.values.adjoint()) * C64::new(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }
}

/// The (old, new) covariance pair a GLRT decision is computed from.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePair {
    pub r_old: CovarianceMatrix,
    pub r_new: CovarianceMatrix,
}

impl CovariancePair {
    pub fn new(r_old: CovarianceMatrix, r_new: CovarianceMatrix) -> Result<Self> {
        if r_old.values.shape() != r_new.values.shape() || r_old.values.nrows() != r_old.values.ncols() {
            return Err(Error::Shape {
                expected: vec![r_old.dim(), r_old.dim()],
                got: vec![r_new.values.nrows(), r_new.values.ncols()],
            });
        }
        Ok(Self { r_old, r_new })
    }

    /// Both halves divided by their own Frobenius norms.
    pub fn normalized(&self) -> Result<Self> {
        Ok(Self {
            r_old: frobenius_normalize(&self.r_old)?,
            r_new: frobenius_normalize(&self.r_new)?,
        })
    }
}

fn columns(z: &CMatrix, start: usize, len: usize) -> CMatrix {
    z.columns(start, len).into_owned()
}

/// Adjacent, disjoint detection windows of `k` columns starting at the
/// zero-based column `start`: `Z_old = [start, start+k)`,
/// `Z_new = [start+k, start+2k)`.
pub fn detection_windows(z: &CMatrix, k: usize, start: usize) -> Result<(CMatrix, CMatrix)> {
    let t = z.ncols();
    if k == 0 || start + 2 * k > t {
        return Err(Error::Range(format!(
            "detection windows k = {k} at start {start} do not fit in T = {t}"
        )));
    }
    Ok((columns(z, start, k), columns(z, start + k, k)))
}

/// DoA windows around the zero-based onset `t0`:
/// `Z_old = [t0−k, t0)`, `Z_new = [t0, t0+k)`.
pub fn doa_windows(z: &CMatrix, k: usize, t0: usize) -> Result<(CMatrix, CMatrix)> {
    let t = z.ncols();
    if k == 0 || k > t0 || t0 + k > t {
        return Err(Error::Range(format!(
            "DoA windows k = {k} around t0 = {t0} do not fit in T = {t}"
        )));
    }
    Ok((columns(z, t0 - k, k), columns(z, t0, k)))
}

/// `W·Wᴴ + ζI`. Only the upper triangle is accumulated and mirrored, so the
/// result is exactly Hermitian.
pub fn empirical_covariance(w: &CMatrix, zeta: f64) -> CovarianceMatrix {
    let m = w.nrows();
    let mut r = CMatrix::zeros(m, m);
    for i in 0..m {
        for j in i..m {
            let mut acc = C64::new(0.0, 0.0);
            for t in 0..w.ncols() {
                acc += w[(i, t)] * w[(j, t)].conj();
            }
            if i == j {
                r[(i, i)] = C64::new(acc.re + zeta, 0.0);
            } else {
                r[(i, j)] = acc;
                r[(j, i)] = acc.conj();
            }
        }
    }
    CovarianceMatrix {
        values: r,
        loading: zeta,
    }
}

/// Scale to unit Frobenius norm. The loading is scaled along with the values
/// so it keeps describing the eigenvalue floor.
pub fn frobenius_normalize(r: &CovarianceMatrix) -> Result<CovarianceMatrix> {
    let nrm = r.frobenius_norm();
    if !(nrm > 0.0) || !nrm.is_finite() {
        return Err(Error::Domain("cannot normalize a zero-norm covariance".into()));
    }
    Ok(CovarianceMatrix {
        values: &r.values * C64::new(1.0 / nrm, 0.0),
        loading: r.loading / nrm,
    })
}

/// Remove the column mean from every snapshot.
pub fn center_columns(z: &CMatrix) -> CMatrix {
    let t = z.ncols();
    let mean = z.column_sum() / C64::new(t as f64, 0.0);
    let mut zc = z.clone();
    for mut col in zc.column_iter_mut() {
        col -= &mean;
    }
    zc
}

/// `S(Z) = Z_c·Z_cᴴ / (T−1)`; no loading.
pub fn centered_sample_covariance(z: &CMatrix) -> Result<CovarianceMatrix> {
    let t = z.ncols();
    if t < 2 {
        return Err(Error::Domain(format!("sample covariance needs T >= 2, got {t}")));
    }
    let mut s = empirical_covariance(&center_columns(z), 0.0);
    s.values *= C64::new(1.0 / (t - 1) as f64, 0.0);
    Ok(s)
}

/// Norm of a complex matrix taken over its real representation (real and
/// imaginary parts as separate coordinates), the domain attacks act on.
pub fn real_view_norm(delta: &CMatrix, p: Norm) -> f64 {
    match p {
        Norm::L2 => frobenius(delta),
        Norm::Linf => delta.iter().fold(0.0f64, |m, z| m.max(z.re.abs()).max(z.im.abs())),
    }
}

/// Both sides of the covariance-stability inequality for one (Z, δ) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShiftBound {
    /// `‖S(Z+δ) − S(Z)‖₂`.
    pub actual: f64,
    pub bound: f64,
    /// Term linear in ε.
    pub linear_term: f64,
    /// Term quadratic in ε.
    pub quadratic_term: f64,
    /// `‖Z_c‖₂`.
    pub centered_norm: f64,
}

impl ShiftBound {
    pub fn holds(&self) -> bool {
        self.actual <= self.bound
    }
}

/// Slack allowed when checking `‖δ‖_p ≤ ε`, matching the attack ball tolerance.
pub const BALL_TOL: f64 = 1e-9;

/// Evaluate `‖S(Z+δ) − S(Z)‖₂` and its bound
///
/// ```text
/// p = 2: 2√T/(T−1)·‖Z_c‖₂·ε + T/(T−1)·ε²
/// p = ∞: 2√(Td)/(T−1)·‖Z_c‖₂·ε + Td/(T−1)·ε²
/// ```
///
/// `snapshot_dim` is `d`, the real dimension of one snapshot (2M for a
/// complex M-element array).
pub fn covariance_shift_bound(
    z: &CMatrix,
    delta: &CMatrix,
    p: Norm,
    eps: f64,
    snapshot_dim: usize,
) -> Result<ShiftBound> {
    if z.shape() != delta.shape() {
        return Err(Error::Shape {
            expected: vec![z.nrows(), z.ncols()],
            got: vec![delta.nrows(), delta.ncols()],
        });
    }
    let t = z.ncols();
    if t < 2 {
        return Err(Error::Domain(format!("bound needs T >= 2, got {t}")));
    }
    if !(eps >= 0.0) {
        return Err(Error::Domain("epsilon must be nonnegative".into()));
    }
    let dn = real_view_norm(delta, p);
    if dn > eps + BALL_TOL {
        return Err(Error::Precondition(format!(
            "perturbation norm {dn:e} exceeds epsilon {eps:e}"
        )));
    }

    let s_clean = centered_sample_covariance(z)?;
    let s_pert = centered_sample_covariance(&(z + delta))?;
    let actual = spectral_norm(&(&s_pert.values - &s_clean.values));
    let centered_norm = spectral_norm(&center_columns(z));

    let tf = t as f64;
    let scale = match p {
        Norm::L2 => tf,
        Norm::Linf => tf * snapshot_dim as f64,
    };
    let linear_term = 2.0 * scale.sqrt() / (tf - 1.0) * centered_norm * eps;
    let quadratic_term = scale / (tf - 1.0) * eps * eps;
    Ok(ShiftBound {
        actual,
        bound: linear_term + quadratic_term,
        linear_term,
        quadratic_term,
        centered_norm,
    })
}

/// One random bound trial on an `m`×`t` complex observation.
///
/// The observation has a random overall scale. The perturbation is either a
/// Gaussian direction or a worst-case shape for the norm (every real entry at
/// ±ε for ℓ∞, the centered data itself for ℓ2), scaled onto the sphere of
/// radius ε in its norm.
pub fn random_shift_trial(rng: &mut impl Rng, m: usize, t: usize, p: Norm, eps: f64) -> Result<ShiftBound> {
    let scale = 10f64.powf(rng.random_range(-2.0..1.0));
    let gauss =
        |rng: &mut dyn rand::RngCore| C64::new(StandardNormal.sample(&mut *rng), StandardNormal.sample(&mut *rng));
    let z = CMatrix::from_fn(m, t, |_, _| gauss(&mut *rng) * scale);
    let mut delta = if rng.random_bool(0.5) {
        CMatrix::from_fn(m, t, |_, _| gauss(&mut *rng))
    } else {
        match p {
            Norm::Linf => CMatrix::from_fn(m, t, |_, _| {
                let re = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                let im = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                C64::new(re, im)
            }),
            Norm::L2 => center_columns(&z),
        }
    };
    let n = real_view_norm(&delta, p);
    if n > 0.0 {
        delta *= C64::new(eps / n, 0.0);
    }
    covariance_shift_bound(&z, &delta, p, eps, 2 * m)
}
