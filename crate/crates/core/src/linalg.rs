//! Dense linear-algebra helpers shared by the GP and empirical modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const JITTER_START: f64 = 1e-8;
pub const JITTER_MAX: f64 = 1e-2;

/// A Cholesky factor together with the diagonal jitter that was needed.
pub struct Factor {
    pub chol: Cholesky<f64, Dyn>,
    /// Absolute jitter added to the diagonal (0 when none was needed).
    pub jitter: f64,
}

impl Factor {
    pub fn log_det(&self) -> f64 {
        2.0 * self.chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    pub fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn l(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}

/// Cholesky with bounded jitter escalation: on failure add
/// `ε·mean(diag)` with `ε = 1e-8, 1e-7, …, 1e-2`.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<Factor> {
    if let Some(chol) = a.clone().cholesky() {
        return Ok(Factor { chol, jitter: 0.0 });
    }
    let n = a.nrows();
    let mean_diag = if n == 0 { 1.0 } else { a.diagonal().mean() };
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() {
        mean_diag
    } else {
        1.0
    };
    let mut eps = JITTER_START;
    while eps <= JITTER_MAX * 1.000_001 {
        let jitter = eps * scale;
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += jitter;
        }
        if let Some(chol) = b.cholesky() {
            return Ok(Factor { chol, jitter });
        }
        eps *= 10.0;
    }
    Err(Error::NotPositiveDefinite { jitter: JITTER_MAX })
}

/// Symmetric square root `V·diag(√max(λ, 0))` of a covariance. Modes more
/// negative than `JITTER_MAX·mean(diag)` mean the matrix is not a covariance.
pub fn psd_root(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite covariance entry".into()));
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let eig = sym.symmetric_eigen();
    let scale = a.diagonal().iter().map(|d| d.abs()).sum::<f64>() / a.nrows().max(1) as f64;
    if eig.eigenvalues.iter().any(|&l| l < -JITTER_MAX * scale) {
        return Err(Error::NotPositiveDefinite { jitter: JITTER_MAX });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Draws `n` columns from `N(mean, L Lᵀ)` given the lower factor `l`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    l: &DMatrix<f64>,
    n: usize,
    rng: &mut R,
) -> DMatrix<f64> {
    let dim = mean.len();
    let z = DMatrix::from_fn(dim, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut out = l * z;
    for mut col in out.column_iter_mut() {
        col += mean;
    }
    out
}

/// Relative Frobenius error `‖a − b‖ / ‖b‖`.
pub fn frobenius_rel_error(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn variance(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / v.len() as f64
}
