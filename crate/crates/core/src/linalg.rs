//! Small dense complex linear algebra used by the covariance and GLRT code.
//!
//! Matrices here are tiny (M×M with M around 8) so everything is plain
//! `nalgebra` dynamic storage. The two iterative routines, spectral norm and
//! dominant eigenpair, are written out explicitly because their stopping
//! rules are part of the contract.

use nalgebra::{Complex, DMatrix, DVector};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

/// Iteration cap for the spectral norm.
pub const SPECTRAL_MAX_ITERS: usize = 200;
/// Relative change in the norm estimate below which iteration stops.
pub const SPECTRAL_REL_TOL: f64 = 1e-12;

/// Largest entrywise deviation from Hermitian symmetry.
pub fn hermitian_residual(a: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            worst = worst.max((a[(i, j)] - a[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Starting vector for power iterations: the column of `g` with the largest
/// norm. Unlike a fixed vector it cannot be orthogonal to the dominant
/// eigenvector unless that column is zero.
fn seed_vector(g: &CMatrix) -> CVector {
    let n = g.ncols();
    let mut best = 0;
    let mut best_norm = -1.0;
    for j in 0..n {
        let nrm = g.column(j).norm();
        if nrm > best_norm {
            best_norm = nrm;
            best = j;
        }
    }
    if best_norm <= 0.0 {
        return CVector::from_element(n, C64::new(1.0, 0.0));
    }
    g.column(best).into_owned() / C64::new(best_norm, 0.0)
}

/// Spectral norm (largest singular value) by power iteration on the smaller
/// Gram matrix, stopping after [`SPECTRAL_MAX_ITERS`] iterations or once the
/// estimate changes by less than [`SPECTRAL_REL_TOL`] relative.
pub fn spectral_norm(a: &CMatrix) -> f64 {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0.0;
    }
    let gram = if a.nrows() <= a.ncols() {
        a * a.adjoint()
    } else {
        a.adjoint() * a
    };
    let mut v = seed_vector(&gram);
    let mut estimate = 0.0f64;
    for _ in 0..SPECTRAL_MAX_ITERS {
        let w = &gram * &v;
        let nrm = w.norm();
        if nrm == 0.0 {
            return 0.0;
        }
        let prev = estimate;
        estimate = nrm;
        v = w / C64::new(nrm, 0.0);
        if prev > 0.0 && ((estimate - prev) / estimate).abs() < SPECTRAL_REL_TOL {
            break;
        }
    }
    // Rayleigh quotient on the unit iterate is at least as accurate as the
    // growth factor and never exceeds the true top eigenvalue.
    let rq = v.dotc(&(&gram * &v)).re;
    rq.max(estimate).max(0.0).sqrt()
}

/// Frobenius norm of a complex matrix.
pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Result of a dominant-eigenpair power iteration.
#[derive(Debug, Clone)]
pub struct Eigenpair {
    pub value: C64,
    /// Unit-norm eigenvector estimate.
    pub vector: CVector,
    pub iterations: usize,
    /// ‖Mv − λv‖₂ for the returned unit vector.
    pub residual: f64,
}

/// Dominant eigenpair of a general (possibly non-Hermitian) square matrix by
/// normalized power iteration. Converged when the residual drops below `tol`.
pub fn dominant_eigenpair(m: &CMatrix, max_iters: usize, tol: f64) -> Result<Eigenpair> {
    if m.nrows() != m.ncols() {
        return Err(Error::Shape {
            expected: vec![m.nrows(), m.nrows()],
            got: vec![m.nrows(), m.ncols()],
        });
    }
    let mut v = seed_vector(m);
    let mut residual = f64::INFINITY;
    for iter in 1..=max_iters {
        let w = m * &v;
        let lambda = v.dotc(&w);
        residual = (&w - &v * lambda).norm();
        if residual < tol {
            return Ok(Eigenpair {
                value: lambda,
                vector: v,
                iterations: iter,
                residual,
            });
        }
        let nrm = w.norm();
        if nrm == 0.0 || !nrm.is_finite() {
            break;
        }
        v = w / C64::new(nrm, 0.0);
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual,
    })
}
