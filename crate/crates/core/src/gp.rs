//! Zero-mean Gaussian process machinery.
//!
//! All likelihoods go through one routine, [`multi_lml_and_grad`], which
//! scores several target vectors that share the same inputs and covariance.
//! The multi-draw prediction objective is a difference of two such joint
//! likelihoods: `Σⱼ log p(y, y★⁽ʲ⁾) − W·log p(y)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gram, kernel_grads, kernel_matrix, KernelSpec};
use crate::linalg::{cholesky_jittered, psd_root, Factor, sample_mvn, symmetrize};

/// A kernel plus Gaussian observation noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpModel {
    pub kernel: KernelSpec,
    pub log_noise_var: f64,
    /// When set, the noise is not a free parameter.
    #[serde(default)]
    pub noise_frozen: bool,
}

impl GpModel {
    pub fn new(kernel: KernelSpec, noise_var: f64) -> Self {
        Self {
            kernel,
            log_noise_var: noise_var.ln(),
            noise_frozen: false,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.noise_frozen = true;
        self
    }

    pub fn noise_var(&self) -> f64 {
        self.log_noise_var.exp()
    }

    pub fn n_free(&self) -> usize {
        self.kernel.n_params() + usize::from(!self.noise_frozen)
    }

    /// Kernel parameters followed by the log noise variance (unless frozen).
    pub fn free_params(&self) -> Vec<f64> {
        let mut p = self.kernel.params();
        if !self.noise_frozen {
            p.push(self.log_noise_var);
        }
        p
    }

    pub fn with_free_params(&self, v: &[f64]) -> Result<GpModel> {
        if v.len() != self.n_free() {
            return Err(Error::ParamLength {
                expected: self.n_free(),
                got: v.len(),
            });
        }
        let nk = self.kernel.n_params();
        Ok(GpModel {
            kernel: self.kernel.with_params(&v[..nk])?,
            log_noise_var: if self.noise_frozen {
                self.log_noise_var
            } else {
                v[nk]
            },
            noise_frozen: self.noise_frozen,
        })
    }

    /// `K(X, X) + σₙ² I`
    pub fn covariance(&self, xs: &[f64]) -> DMatrix<f64> {
        let mut c = gram(&self.kernel, xs);
        let s = self.noise_var();
        for i in 0..xs.len() {
            c[(i, i)] += s;
        }
        c
    }
}

/// Training data plus `W` predicted curves on a shared test grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "DrawSetRecord", try_from = "DrawSetRecord")]
pub struct DrawSet {
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    pub x_test: Vec<f64>,
    /// `N★ × W`; column `j` is draw `j`.
    pub y_test: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct DrawSetRecord {
    x_train: Vec<f64>,
    y_train: Vec<f64>,
    x_test: Vec<f64>,
    draws: Vec<Vec<f64>>,
}

impl From<DrawSet> for DrawSetRecord {
    fn from(d: DrawSet) -> Self {
        let draws = d
            .y_test
            .column_iter()
            .map(|c| c.iter().copied().collect())
            .collect();
        DrawSetRecord {
            x_train: d.x_train,
            y_train: d.y_train,
            x_test: d.x_test,
            draws,
        }
    }
}

impl TryFrom<DrawSetRecord> for DrawSet {
    type Error = Error;

    fn try_from(r: DrawSetRecord) -> Result<Self> {
        let cols: Vec<DVector<f64>> = r.draws.into_iter().map(DVector::from_vec).collect();
        if cols.iter().any(|c| c.len() != r.x_test.len()) {
            return Err(Error::validation("draws", "draw length differs from x_test"));
        }
        let y_test = if cols.is_empty() {
            DMatrix::zeros(r.x_test.len(), 0)
        } else {
            DMatrix::from_columns(&cols)
        };
        DrawSet::new(r.x_train, r.y_train, r.x_test, y_test)
    }
}

fn all_distinct(xs: &[f64]) -> bool {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v.windows(2).all(|w| w[0] != w[1])
}

impl DrawSet {
    pub fn new(
        x_train: Vec<f64>,
        y_train: Vec<f64>,
        x_test: Vec<f64>,
        y_test: DMatrix<f64>,
    ) -> Result<Self> {
        if x_train.len() != y_train.len() {
            return Err(Error::validation("y_train", "length differs from x_train"));
        }
        if y_test.nrows() != x_test.len() {
            return Err(Error::validation("y_test", "row count differs from x_test"));
        }
        if y_test.ncols() == 0 {
            return Err(Error::validation("y_test", "need at least one draw"));
        }
        let finite = x_train
            .iter()
            .chain(&y_train)
            .chain(&x_test)
            .chain(y_test.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("draws", "non-finite value"));
        }
        if !all_distinct(&x_train) {
            return Err(Error::validation("x_train", "inputs must be distinct"));
        }
        if !all_distinct(&x_test) {
            return Err(Error::validation("x_test", "inputs must be distinct"));
        }
        Ok(Self {
            x_train,
            y_train,
            x_test,
            y_test,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.y_test.ncols()
    }

    /// `[x_train; x_test]`
    pub fn stacked_inputs(&self) -> Vec<f64> {
        self.x_train.iter().chain(&self.x_test).copied().collect()
    }

    /// Each column is `[y_train; y★⁽ʲ⁾]`.
    pub fn stacked_targets(&self) -> DMatrix<f64> {
        let n = self.x_train.len();
        let m = self.x_test.len();
        let w = self.n_draws();
        DMatrix::from_fn(n + m, w, |i, j| {
            if i < n {
                self.y_train[i]
            } else {
                self.y_test[(i - n, j)]
            }
        })
    }
}

/// Smallest admissible squared Cholesky pivot relative to the largest
/// diagonal entry when evaluating likelihoods.
pub const MIN_PIVOT_RATIO: f64 = 1e-12;

/// Jittered Cholesky that also rejects factors whose pivots have collapsed
/// to round-off level, where the computed density is meaningless.
fn likelihood_factor(cov: &DMatrix<f64>) -> Result<Factor> {
    let factor = cholesky_jittered(cov)?;
    let max_diag = cov.diagonal().max();
    let min_pivot = factor.chol.l_dirty().diagonal().min();
    if min_pivot * min_pivot < MIN_PIVOT_RATIO * max_diag {
        return Err(Error::NotPositiveDefinite {
            jitter: factor.jitter,
        });
    }
    Ok(factor)
}

/// Sum of `log N(yⱼ; 0, K + σₙ²I)` over the columns of `targets`, with its
/// gradient over the model's free parameters.
pub fn multi_lml_and_grad(
    model: &GpModel,
    xs: &[f64],
    targets: &DMatrix<f64>,
) -> Result<(f64, Vec<f64>)> {
    let n = xs.len();
    let w = targets.ncols() as f64;
    let factor = likelihood_factor(&model.covariance(xs))?;
    let alpha = factor.solve(targets);
    let fit: f64 = alpha.component_mul(targets).sum();
    let value = -0.5 * fit - 0.5 * w * factor.log_det() - 0.5 * w * n as f64 * (2.0 * PI).ln();

    // ½ tr((A Aᵀ − W C⁻¹) ∂C)
    let mut inner = &alpha * alpha.transpose();
    inner -= factor.inverse() * w;
    let mut grad: Vec<f64> = kernel_grads(&model.kernel, xs)
        .iter()
        .map(|d| 0.5 * inner.component_mul(d).sum())
        .collect();
    if !model.noise_frozen {
        grad.push(0.5 * model.noise_var() * inner.trace());
    }
    Ok((value, grad))
}

fn multi_lml(model: &GpModel, xs: &[f64], targets: &DMatrix<f64>) -> Result<f64> {
    let n = xs.len();
    let w = targets.ncols() as f64;
    let factor = likelihood_factor(&model.covariance(xs))?;
    let alpha = factor.solve(targets);
    let fit: f64 = alpha.component_mul(targets).sum();
    Ok(-0.5 * fit - 0.5 * w * factor.log_det() - 0.5 * w * n as f64 * (2.0 * PI).ln())
}

fn check_xy(xs: &[f64], y: &[f64]) -> Result<()> {
    if xs.len() != y.len() {
        return Err(Error::validation("y", "length differs from X"));
    }
    if xs.is_empty() {
        return Err(Error::validation("X", "need at least one point"));
    }
    Ok(())
}

/// `log N(y; 0, K + σₙ²I)` via Cholesky.
pub fn log_marginal_likelihood(model: &GpModel, xs: &[f64], y: &[f64]) -> Result<f64> {
    check_xy(xs, y)?;
    multi_lml(model, xs, &DMatrix::from_column_slice(y.len(), 1, y))
}

/// Gradient of [`log_marginal_likelihood`] over [`GpModel::free_params`].
pub fn lml_grad(model: &GpModel, xs: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    lml_and_grad(model, xs, y).map(|(_, g)| g)
}

pub fn lml_and_grad(model: &GpModel, xs: &[f64], y: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_xy(xs, y)?;
    multi_lml_and_grad(model, xs, &DMatrix::from_column_slice(y.len(), 1, y))
}

/// Draws `n_draws` columns from `N(0, K + σₙ²I)`.
pub fn sample_prior(model: &GpModel, xs: &[f64], n_draws: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n_draws == 0 {
        return Err(Error::InvalidArgument("n_draws must be >= 1".into()));
    }
    let factor = cholesky_jittered(&model.covariance(xs))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_mvn(
        &DVector::zeros(xs.len()),
        &factor.l(),
        n_draws,
        &mut rng,
    ))
}

/// Posterior mean and covariance of the latent function at `x_star`. With
/// `noisy` the observation noise is added to the covariance diagonal.
pub fn posterior_predictive(
    model: &GpModel,
    xs: &[f64],
    y: &[f64],
    x_star: &[f64],
    noisy: bool,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_xy(xs, y)?;
    if x_star.is_empty() {
        return Err(Error::validation("X_star", "need at least one test point"));
    }
    let factor = cholesky_jittered(&model.covariance(xs))?;
    let k_star = kernel_matrix(&model.kernel, xs, x_star);
    let mean = k_star.transpose() * factor.solve_vec(&DVector::from_column_slice(y));
    let v = factor.solve(&k_star);
    let mut cov = gram(&model.kernel, x_star) - k_star.transpose() * v;
    symmetrize(&mut cov);
    if noisy {
        let s = model.noise_var();
        for i in 0..x_star.len() {
            cov[(i, i)] += s;
        }
    }
    Ok((mean, cov))
}

/// `W` i.i.d. noise-free posterior draws on `x_star`.
pub fn sample_posterior(
    model: &GpModel,
    xs: &[f64],
    y: &[f64],
    x_star: &[f64],
    w: usize,
    seed: u64,
) -> Result<DrawSet> {
    sample_posterior_with(model, xs, y, x_star, w, seed, false)
}

/// As [`sample_posterior`]; `noisy` draws observations instead of latent
/// function values.
pub fn sample_posterior_with(
    model: &GpModel,
    xs: &[f64],
    y: &[f64],
    x_star: &[f64],
    w: usize,
    seed: u64,
    noisy: bool,
) -> Result<DrawSet> {
    if w == 0 {
        return Err(Error::InvalidArgument("W must be >= 1".into()));
    }
    let (mean, cov) = posterior_predictive(model, xs, y, x_star, noisy)?;
    let root = psd_root(&cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y_test = sample_mvn(&mean, &root, w, &mut rng);
    DrawSet::new(xs.to_vec(), y.to_vec(), x_star.to_vec(), y_test)
}

/// `Σⱼ log p(y★⁽ʲ⁾ | y, kθ)`.
pub fn predictive_conditional_lml(model: &GpModel, draws: &DrawSet) -> Result<f64> {
    if draws.x_test.is_empty() {
        return Ok(0.0);
    }
    let w = draws.n_draws() as f64;
    let joint = multi_lml(model, &draws.stacked_inputs(), &draws.stacked_targets())?;
    let train = if draws.x_train.is_empty() {
        0.0
    } else {
        log_marginal_likelihood(model, &draws.x_train, &draws.y_train)?
    };
    Ok(joint - w * train)
}

pub fn predictive_conditional_lml_and_grad(
    model: &GpModel,
    draws: &DrawSet,
) -> Result<(f64, Vec<f64>)> {
    if draws.x_test.is_empty() {
        return Ok((0.0, vec![0.0; model.n_free()]));
    }
    let w = draws.n_draws() as f64;
    let (joint, mut grad) =
        multi_lml_and_grad(model, &draws.stacked_inputs(), &draws.stacked_targets())?;
    if draws.x_train.is_empty() {
        return Ok((joint, grad));
    }
    let (train, train_grad) = lml_and_grad(model, &draws.x_train, &draws.y_train)?;
    for (g, t) in grad.iter_mut().zip(train_grad) {
        *g -= w * t;
    }
    Ok((joint - w * train, grad))
}

/// Gaussian log-density of each column of `ys` under `N(mean, cov)`.
pub fn mvn_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, ys: &DMatrix<f64>) -> Result<f64> {
    let factor = cholesky_jittered(cov)?;
    let mut centered = ys.clone();
    for mut col in centered.column_iter_mut() {
        col -= mean;
    }
    let alpha = factor.solve(&centered);
    let w = ys.ncols() as f64;
    let n = mean.len() as f64;
    Ok(-0.5 * alpha.component_mul(&centered).sum()
        - 0.5 * w * factor.log_det()
        - 0.5 * w * n * (2.0 * PI).ln())
}
