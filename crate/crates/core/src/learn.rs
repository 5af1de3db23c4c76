//! Multi-restart hyperparameter fitting for the data marginal likelihood and
//! the multi-draw prediction objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::{lml_and_grad, predictive_conditional_lml_and_grad, DrawSet, GpModel};
use crate::kernels::{sm_init_with_rng, KernelSpec};
use crate::linalg::variance;
use crate::optimize::{optimize, Bounds, OptimizeOptions};
use crate::seeds::derive_seed;

/// Box applied to every log-space parameter during fitting.
pub const LOG_PARAM_BOUND: f64 = 20.0;
/// RBF and RQ signal variances are capped at this multiple of the target
/// variance.
pub const AMPLITUDE_BOUND_RATIO: f64 = 1e3;
/// Spectral mixture weights are capped at this multiple of the target
/// variance.
pub const SM_WEIGHT_BOUND_RATIO: f64 = 10.0;
/// Spectral mixture frequencies are capped at this multiple of the
/// mean-spacing Nyquist frequency.
pub const FREQUENCY_BOUND_RATIO: f64 = 1.0;
/// Spectral mixture frequencies complete at least this many cycles over
/// the input range.
pub const FREQUENCY_FLOOR_CYCLES: f64 = 0.5;
/// Spectral mixture bandwidths (frequency standard deviations) stay above
/// this many cycles per input range.
pub const BANDWIDTH_FLOOR_CYCLES: f64 = 0.5;
/// Noise variance floor relative to the target variance.
pub const NOISE_FLOOR_RATIO: f64 = 1e-6;
/// Standard deviation of the log-space restart perturbation.
pub const RESTART_PERTURBATION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitObjective {
    /// Marginal likelihood of the training data.
    DataMl,
    /// Predictive conditional marginal likelihood of the draws.
    PredictionMl,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub seed: u64,
    pub objective: FitObjective,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            grad_tol: 1e-6,
            seed: 0,
            objective: FitObjective::DataMl,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be >= 1".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be >= 1".into()));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::InvalidArgument("grad_tol must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartSummary {
    pub index: usize,
    pub seed: u64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub best_spec: KernelSpec,
    pub best_noise: f64,
    pub best_objective: f64,
    pub best_restart: usize,
    pub per_restart: Vec<RestartSummary>,
}

impl FitReport {
    pub fn best_model(&self, template: &GpModel) -> GpModel {
        GpModel {
            kernel: self.best_spec.clone(),
            log_noise_var: self.best_noise.ln(),
            noise_frozen: template.noise_frozen,
        }
    }

    /// Fixed-width table, one line per restart.
    pub fn table(&self) -> String {
        let mut s = format!(
            "{:>7} {:>20} {:>16} {:>6} {:>9} {:>10}\n",
            "restart", "seed", "objective", "iters", "converged", "|grad|"
        );
        for r in &self.per_restart {
            let mark = if r.index == self.best_restart { " *" } else { "" };
            s.push_str(&format!(
                "{:>7} {:>20} {:>16.6} {:>6} {:>9} {:>10.3e}{}\n",
                r.index, r.seed, r.objective, r.iterations, r.converged, r.grad_norm, mark
            ));
        }
        s
    }
}

/// Scale information used to draw random spectral mixture restarts.
#[derive(Debug, Clone, Copy)]
struct InitScale {
    x_range: f64,
    y_variance: f64,
    nyquist: f64,
}

impl InitScale {
    fn from_data(xs: &[f64], ys: &[f64]) -> Self {
        let mut sorted = xs.to_vec();
        sorted.sort_by(f64::total_cmp);
        sorted.dedup();
        let x_range = match (sorted.first(), sorted.last()) {
            (Some(a), Some(b)) if b > a => b - a,
            _ => 1.0,
        };
        // mean spacing; the minimum spacing of scattered inputs can be tiny
        let spacing = x_range / (sorted.len().max(2) - 1) as f64;
        let y_variance = variance(ys);
        Self {
            x_range,
            y_variance: if y_variance > 0.0 { y_variance } else { 1.0 },
            nyquist: 0.5 / spacing,
        }
    }
}

fn randomize_kernel<R: Rng>(spec: &KernelSpec, scale: &InitScale, rng: &mut R) -> KernelSpec {
    let jitter = Normal::new(0.0, RESTART_PERTURBATION).expect("positive std");
    match spec {
        KernelSpec::SpectralMixture { components } => sm_init_with_rng(
            scale.x_range,
            scale.y_variance,
            scale.nyquist,
            components.len(),
            rng,
        )
        .expect("scale is positive"),
        KernelSpec::Product { left, right } => KernelSpec::product(
            randomize_kernel(left, scale, rng),
            randomize_kernel(right, scale, rng),
        ),
        leaf => {
            let p: Vec<f64> = leaf
                .params()
                .iter()
                .zip(leaf.log_space_mask())
                .map(|(v, is_log)| {
                    let step = jitter.sample(rng);
                    if is_log {
                        v + step
                    } else {
                        v + step * scale.x_range
                    }
                })
                .collect();
            leaf.with_params(&p).expect("same structure")
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Role {
    Amplitude,
    SmWeight,
    Frequency,
    Bandwidth,
    Other,
}

fn push_roles(spec: &KernelSpec, out: &mut Vec<Role>) {
    use Role::*;
    match spec {
        KernelSpec::Rbf { .. } => out.extend([Other, Amplitude]),
        KernelSpec::Rq { .. } => out.extend([Other, Amplitude, Other]),
        KernelSpec::Linear { .. } => out.extend([Other, Other]),
        KernelSpec::SpectralMixture { components } => {
            for _ in components {
                out.extend([SmWeight, Frequency, Bandwidth]);
            }
        }
        KernelSpec::Product { left, right } => {
            push_roles(left, out);
            push_roles(right, out);
        }
    }
}

fn bounds_for(template: &GpModel, log_noise_floor: f64, scale: &InitScale) -> Bounds {
    let mut lower = Vec::with_capacity(template.n_free());
    let mut upper = Vec::with_capacity(template.n_free());
    let mut roles = Vec::with_capacity(template.n_free());
    push_roles(&template.kernel, &mut roles);
    let amp_cap = (AMPLITUDE_BOUND_RATIO * scale.y_variance).ln().min(LOG_PARAM_BOUND);
    let weight_cap = (SM_WEIGHT_BOUND_RATIO * scale.y_variance).ln().min(LOG_PARAM_BOUND);
    let freq_cap = (FREQUENCY_BOUND_RATIO * scale.nyquist).ln().min(LOG_PARAM_BOUND);
    let freq_floor = (FREQUENCY_FLOOR_CYCLES / scale.x_range).ln().max(-LOG_PARAM_BOUND);
    let bandwidth_floor = (2.0 * (BANDWIDTH_FLOOR_CYCLES / scale.x_range).ln()).max(-LOG_PARAM_BOUND);
    for (is_log, role) in template.kernel.log_space_mask().into_iter().zip(roles) {
        if is_log {
            lower.push(match role {
                Role::Frequency => freq_floor,
                Role::Bandwidth => bandwidth_floor,
                _ => -LOG_PARAM_BOUND,
            });
            upper.push(match role {
                Role::Amplitude => amp_cap,
                Role::SmWeight => weight_cap,
                Role::Frequency => freq_cap,
                Role::Bandwidth | Role::Other => LOG_PARAM_BOUND,
            });
        } else {
            lower.push(f64::NEG_INFINITY);
            upper.push(f64::INFINITY);
        }
    }
    if !template.noise_frozen {
        lower.push(log_noise_floor.max(-LOG_PARAM_BOUND * 2.0));
        upper.push(LOG_PARAM_BOUND);
    }
    Bounds { lower, upper }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

struct RestartOutcome {
    summary: RestartSummary,
    params: Option<Vec<f64>>,
}

/// Runs the restart protocol against an arbitrary objective of the model.
fn fit_generic<F>(
    template: &GpModel,
    scale: InitScale,
    opts: &FitOptions,
    objective: F,
) -> Result<FitReport>
where
    F: Fn(&GpModel) -> Result<(f64, Vec<f64>)> + Sync,
{
    opts.validate()?;
    template.kernel.validate()?;
    let log_floor = (NOISE_FLOOR_RATIO * scale.y_variance).ln();
    let bounds = bounds_for(template, log_floor, &scale);
    let opt_opts = OptimizeOptions {
        max_iters: opts.max_iters,
        grad_tol: opts.grad_tol,
        ..Default::default()
    };

    let outcomes: Vec<RestartOutcome> = (0..opts.restarts)
        .into_par_iter()
        .map(|index| {
            let seed = derive_seed(opts.seed, index as u64);
            let start_model = if index == 0 {
                template.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let kernel = randomize_kernel(&template.kernel, &scale, &mut rng);
                let log_noise_var = if template.noise_frozen {
                    template.log_noise_var
                } else {
                    template.log_noise_var + RESTART_PERTURBATION * rng.sample::<f64, _>(rand_distr::StandardNormal)
                };
                GpModel {
                    kernel,
                    log_noise_var,
                    noise_frozen: template.noise_frozen,
                }
            };
            let start = start_model.free_params();
            let eval = |v: &[f64]| -> Option<(f64, Vec<f64>)> {
                let m = template.with_free_params(v).ok()?;
                objective(&m).ok()
            };
            match optimize(eval, &start, Some(&bounds), &opt_opts) {
                Ok(r) => RestartOutcome {
                    summary: RestartSummary {
                        index,
                        seed,
                        objective: r.value,
                        iterations: r.iterations,
                        converged: r.converged,
                        grad_norm: r.grad_norm,
                        error: None,
                    },
                    params: Some(r.x),
                },
                Err(e) => RestartOutcome {
                    summary: RestartSummary {
                        index,
                        seed,
                        objective: f64::NAN,
                        iterations: 0,
                        converged: false,
                        grad_norm: f64::NAN,
                        error: Some(e.to_string()),
                    },
                    params: None,
                },
            }
        })
        .collect();

    let mut best: Option<(usize, f64, f64)> = None;
    for (i, o) in outcomes.iter().enumerate() {
        let Some(p) = &o.params else { continue };
        let value = o.summary.objective;
        let n2 = norm2(p);
        let better = match best {
            None => true,
            Some((_, bv, bn)) => value > bv || (value == bv && n2 < bn),
        };
        if better {
            best = Some((i, value, n2));
        }
    }
    let Some((bi, best_objective, _)) = best else {
        return Err(Error::AllRestartsFailed(
            outcomes
                .iter()
                .map(|o| {
                    format!(
                        "restart {}: {}",
                        o.summary.index,
                        o.summary.error.as_deref().unwrap_or("failed")
                    )
                })
                .collect(),
        ));
    };
    let best_model = template.with_free_params(outcomes[bi].params.as_ref().expect("checked"))?;
    Ok(FitReport {
        best_spec: best_model.kernel,
        best_noise: best_model.log_noise_var.exp(),
        best_objective,
        best_restart: bi,
        per_restart: outcomes.into_iter().map(|o| o.summary).collect(),
    })
}

/// Maximizes the data log marginal likelihood.
pub fn fit_data_kernel(
    template: &GpModel,
    xs: &[f64],
    ys: &[f64],
    opts: &FitOptions,
) -> Result<FitReport> {
    if xs.len() != ys.len() {
        return Err(Error::validation("y", "length differs from X"));
    }
    if xs.len() < 2 {
        return Err(Error::validation("X", "need at least two points"));
    }
    let scale = InitScale::from_data(xs, ys);
    fit_generic(template, scale, opts, |m| lml_and_grad(m, xs, ys))
}

/// Maximizes the summed log marginal likelihood of several independent
/// datasets sharing one set of hyperparameters.
pub fn fit_pooled_data_kernel(
    template: &GpModel,
    datasets: &[(Vec<f64>, Vec<f64>)],
    opts: &FitOptions,
) -> Result<FitReport> {
    if datasets.is_empty() {
        return Err(Error::validation("datasets", "need at least one dataset"));
    }
    let all_x: Vec<f64> = datasets.iter().flat_map(|(x, _)| x.iter().copied()).collect();
    let all_y: Vec<f64> = datasets.iter().flat_map(|(_, y)| y.iter().copied()).collect();
    let scale = InitScale::from_data(&all_x, &all_y);
    fit_generic(template, scale, opts, |m| {
        let mut total = 0.0;
        let mut grad = vec![0.0; m.n_free()];
        for (x, y) in datasets {
            let (v, g) = lml_and_grad(m, x, y)?;
            total += v;
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
        }
        Ok((total, grad))
    })
}

/// Maximizes `Σⱼ log p(y★⁽ʲ⁾ | y, kθ)`.
pub fn fit_prediction_kernel(
    template: &GpModel,
    draws: &DrawSet,
    opts: &FitOptions,
) -> Result<FitReport> {
    let xs = draws.stacked_inputs();
    let targets = draws.stacked_targets();
    let scale = InitScale::from_data(&xs, targets.as_slice());
    fit_generic(template, scale, opts, |m| {
        predictive_conditional_lml_and_grad(m, draws)
    })
}

/// Dispatches on `opts.objective`; `DataMl` uses only the training part.
pub fn fit(template: &GpModel, draws: &DrawSet, opts: &FitOptions) -> Result<FitReport> {
    match opts.objective {
        FitObjective::DataMl => fit_data_kernel(template, &draws.x_train, &draws.y_train, opts),
        FitObjective::PredictionMl => fit_prediction_kernel(template, draws, opts),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{log_marginal_likelihood, predictive_conditional_lml, sample_posterior, sample_prior};
    use crate::kernels::SmComponent;

    fn rbf_data(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
        let xs: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
        let truth = GpModel::new(KernelSpec::rbf(1.5, 1.0), 0.01);
        let y = sample_prior(&truth, &xs, 1, seed).unwrap();
        (xs, y.column(0).iter().copied().collect())
    }

    #[test]
    fn beats_template_objective() {
        let (xs, ys) = rbf_data(30, 3);
        let template = GpModel::new(KernelSpec::rbf(0.5, 2.0), 0.1);
        let opts = FitOptions {
            restarts: 3,
            ..Default::default()
        };
        let r = fit_data_kernel(&template, &xs, &ys, &opts).unwrap();
        let at_template = log_marginal_likelihood(&template, &xs, &ys).unwrap();
        assert!(r.best_objective >= at_template);
        let max = r
            .per_restart
            .iter()
            .map(|s| s.objective)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(r.best_objective, max);
        for s in &r.per_restart {
            if s.converged {
                assert!(s.grad_norm < opts.grad_tol);
            }
        }
    }

    #[test]
    fn deterministic_reports() {
        let (xs, ys) = rbf_data(25, 4);
        let template = GpModel::new(KernelSpec::rbf(1.0, 1.0), 0.05);
        let opts = FitOptions {
            restarts: 4,
            seed: 11,
            ..Default::default()
        };
        let a = fit_data_kernel(&template, &xs, &ys, &opts).unwrap();
        let b = fit_data_kernel(&template, &xs, &ys, &opts).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restart_monotonicity() {
        let (xs, ys) = rbf_data(25, 5);
        let template = GpModel::new(
            KernelSpec::spectral_mixture(vec![SmComponent::new(1.0, 0.2, 0.01); 2]),
            0.05,
        );
        let mut last = f64::NEG_INFINITY;
        for restarts in 1..=4 {
            let opts = FitOptions {
                restarts,
                seed: 2,
                max_iters: 100,
                ..Default::default()
            };
            let r = fit_data_kernel(&template, &xs, &ys, &opts).unwrap();
            assert!(r.best_objective >= last);
            last = r.best_objective;
        }
    }

    #[test]
    fn frozen_noise_is_unchanged() {
        let (xs, ys) = rbf_data(20, 6);
        let template = GpModel::new(KernelSpec::rbf(1.0, 1.0), 0.01).frozen();
        let opts = FitOptions {
            restarts: 2,
            ..Default::default()
        };
        let r = fit_data_kernel(&template, &xs, &ys, &opts).unwrap();
        assert_eq!(r.best_noise, template.noise_var());
    }

    #[test]
    fn rejects_bad_options_and_data() {
        let template = GpModel::new(KernelSpec::rbf(1.0, 1.0), 0.01);
        let bad = FitOptions {
            restarts: 0,
            ..Default::default()
        };
        assert!(fit_data_kernel(&template, &[0.0, 1.0], &[0.0, 1.0], &bad).is_err());
        assert!(fit_data_kernel(&template, &[0.0], &[0.0], &FitOptions::default()).is_err());
    }

    #[test]
    fn prediction_fit_does_not_lose_to_truth() {
        let truth = GpModel::new(
            KernelSpec::spectral_mixture(vec![SmComponent::new(1.0, 0.3, 0.005)]),
            0.01,
        );
        let xs = [0.0, 0.5, 1.0, 1.5, 2.0];
        let ys = [0.1, 0.5, 0.2, -0.3, -0.4];
        let x_star: Vec<f64> = (0..8).map(|i| 2.5 + i as f64 * 0.5).collect();
        let draws = sample_posterior(&truth, &xs, &ys, &x_star, 5, 1).unwrap();
        let opts = FitOptions {
            restarts: 2,
            max_iters: 200,
            objective: FitObjective::PredictionMl,
            ..Default::default()
        };
        let r = fit(&truth, &draws, &opts).unwrap();
        let at_truth = predictive_conditional_lml(&truth, &draws).unwrap();
        assert!(r.best_objective >= at_truth - 1e-6);
    }
}
