//! Nonparametric mean/covariance estimates from multiple draws.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{psd_root, sample_mvn, symmetrize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub n_draws: usize,
    pub psd_repaired: bool,
}

/// Row means and `YYᵀ/M − ȳȳᵀ` (divisor `M`) for an `N × M` draw matrix.
pub fn empirical_moments(y: &DMatrix<f64>) -> EmpiricalGaussian {
    let m = y.ncols();
    let mean = y.column_mean();
    let mut cov = if m == 0 {
        DMatrix::zeros(y.nrows(), y.nrows())
    } else {
        let mut centered = y.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        // centred form of YYᵀ/M − ȳȳᵀ, same value with less cancellation
        &centered * centered.transpose() / m as f64
    };
    symmetrize(&mut cov);
    EmpiricalGaussian {
        mean,
        cov,
        n_draws: m,
        psd_repaired: false,
    }
}

pub const DEFAULT_FLOOR_RATIO: f64 = 1e-10;

/// Eigenvalue clipping: eigenvalues below `floor_ratio·λmax` are raised to
/// that floor.
pub fn psd_project(g: &EmpiricalGaussian, floor_ratio: f64) -> Result<EmpiricalGaussian> {
    if g.cov.iter().chain(g.mean.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite covariance entry".into()));
    }
    let n = g.cov.nrows();
    let mut cov = g.cov.clone();
    symmetrize(&mut cov);
    if n > 0 {
        let eig = cov.clone().symmetric_eigen();
        let lmax = eig.eigenvalues.max();
        let floor = if lmax > 0.0 { floor_ratio * lmax } else { floor_ratio };
        if eig.eigenvalues.iter().any(|&l| l < floor) {
            let clipped = eig.eigenvalues.map(|l| l.max(floor));
            cov = &eig.eigenvectors
                * DMatrix::from_diagonal(&clipped)
                * eig.eigenvectors.transpose();
            symmetrize(&mut cov);
        }
    }
    Ok(EmpiricalGaussian {
        mean: g.mean.clone(),
        cov,
        n_draws: g.n_draws,
        psd_repaired: true,
    })
}

/// `n` draws from `N(mean, cov)`; requires a projected covariance.
pub fn sample_empirical(g: &EmpiricalGaussian, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if !g.psd_repaired {
        return Err(Error::NotProjected);
    }
    let root = psd_root(&g.cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_mvn(&g.mean, &root, n, &mut rng))
}

/// Unconstrained single-draw maximum likelihood covariance
/// `(y − ȳ)(y − ȳ)ᵀ`, rank at most one.
pub fn degenerate_mle(y: &[f64]) -> DMatrix<f64> {
    let n = y.len();
    let mean = if n == 0 { 0.0 } else { y.iter().sum::<f64>() / n as f64 };
    let c = DVector::from_iterator(n, y.iter().map(|v| v - mean));
    &c * c.transpose()
}

/// Writes a covariance as CSV: a header of test-input locations, then one
/// row per input.
pub fn write_cov_csv(path: &Path, xs: &[f64], cov: &DMatrix<f64>) -> Result<()> {
    let mut buf = Vec::new();
    cov_csv(&mut buf, xs, cov).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn cov_csv<W: Write>(mut w: W, xs: &[f64], cov: &DMatrix<f64>) -> std::io::Result<()> {
    let header: Vec<String> = xs.iter().map(|x| format!("{x}")).collect();
    writeln!(w, "x,{}", header.join(","))?;
    for (i, x) in xs.iter().enumerate() {
        let row: Vec<String> = cov.row(i).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{x},{}", row.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_rel_error;
    use approx::assert_relative_eq;

    #[test]
    fn hand_computed_moments() {
        let y = DMatrix::from_columns(&[
            DVector::from_vec(vec![1.0, -1.0]),
            DVector::from_vec(vec![-1.0, 1.0]),
        ]);
        let g = empirical_moments(&y);
        assert_eq!(g.mean, DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(g.cov, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
        assert!(!g.psd_repaired);
    }

    #[test]
    fn identical_columns_have_zero_covariance() {
        let col = DVector::from_vec(vec![0.3, 1.2, -4.0]);
        let y = DMatrix::from_columns(&vec![col; 6]);
        assert!(empirical_moments(&y).cov.iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn identity_is_unchanged() {
        let g = EmpiricalGaussian {
            mean: DVector::zeros(3),
            cov: DMatrix::identity(3, 3),
            n_draws: 1,
            psd_repaired: false,
        };
        let p = psd_project(&g, DEFAULT_FLOOR_RATIO).unwrap();
        assert_eq!(p.cov, DMatrix::identity(3, 3));
        assert!(p.psd_repaired);
    }

    #[test]
    fn indefinite_matrix_projection() {
        let g = EmpiricalGaussian {
            mean: DVector::zeros(2),
            cov: DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            n_draws: 1,
            psd_repaired: false,
        };
        let p = psd_project(&g, DEFAULT_FLOOR_RATIO).unwrap();
        for v in p.cov.iter() {
            assert_relative_eq!(*v, 1.5, epsilon = 1e-9);
        }
        let twice = psd_project(&p, DEFAULT_FLOOR_RATIO).unwrap();
        assert!((twice.cov - &p.cov).norm() < 1e-10);
    }

    #[test]
    fn non_positive_spectrum_floors_to_ratio() {
        let g = EmpiricalGaussian {
            mean: DVector::zeros(2),
            cov: -DMatrix::identity(2, 2),
            n_draws: 1,
            psd_repaired: false,
        };
        let p = psd_project(&g, 1e-3).unwrap();
        assert_relative_eq!(p.cov, DMatrix::identity(2, 2) * 1e-3, epsilon = 1e-15);
    }

    #[test]
    fn rejects_non_finite() {
        let mut cov = DMatrix::identity(2, 2);
        cov[(0, 1)] = f64::NAN;
        let g = EmpiricalGaussian {
            mean: DVector::zeros(2),
            cov,
            n_draws: 1,
            psd_repaired: false,
        };
        assert!(psd_project(&g, DEFAULT_FLOOR_RATIO).is_err());
    }

    #[test]
    fn sampling_requires_projection() {
        let g = empirical_moments(&DMatrix::from_element(2, 3, 1.0));
        assert!(matches!(sample_empirical(&g, 2, 0), Err(Error::NotProjected)));
    }

    #[test]
    fn zero_covariance_samples_equal_mean() {
        let mut g = empirical_moments(&DMatrix::from_element(3, 4, 2.5));
        g.psd_repaired = true;
        let s = sample_empirical(&g, 10, 1).unwrap();
        assert!(s.iter().all(|&v| v == 2.5));
    }

    #[test]
    fn sampling_recovers_covariance() {
        let cov = DMatrix::from_row_slice(3, 3, &[2.0, 0.8, 0.1, 0.8, 1.0, 0.3, 0.1, 0.3, 0.5]);
        let g = EmpiricalGaussian {
            mean: DVector::from_vec(vec![1.0, -1.0, 0.0]),
            cov: cov.clone(),
            n_draws: 0,
            psd_repaired: true,
        };
        let s = sample_empirical(&g, 10_000, 5).unwrap();
        assert_eq!(s, sample_empirical(&g, 10_000, 5).unwrap());
        let back = empirical_moments(&s);
        assert!(frobenius_rel_error(&back.cov, &cov) < 0.1);
        assert!((back.mean - &g.mean).amax() < 0.1);
    }

    #[test]
    fn degenerate_mle_examples() {
        let k = degenerate_mle(&[1.0, 2.0]);
        assert_eq!(k, DMatrix::from_row_slice(2, 2, &[0.25, -0.25, -0.25, 0.25]));
        assert!(degenerate_mle(&[3.0; 4]).iter().all(|&v| v == 0.0));
        let k = degenerate_mle(&[0.3, -1.2, 4.0, 0.7, 2.2]);
        let sv = k.singular_values();
        let mut s: Vec<f64> = sv.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        assert!(s[1] < 1e-10 * s[0]);
    }

    #[test]
    fn csv_layout() {
        let mut buf = Vec::new();
        cov_csv(&mut buf, &[0.5, 1.0], &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,0.5,1\n0.5,1,0\n1,0,1\n");
    }
}
