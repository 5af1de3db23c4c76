//! Recovering a prediction kernel from `W` posterior extrapolations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    linspace, lines, median, normalized_l2, random_inputs, sm_learner, FitBudget, Report, Table,
};
use crate::error::{Error, Result};
use crate::gp::{sample_posterior_with, sample_prior, DrawSet, GpModel};
use crate::kernels::{kernel_curve, KernelSpec, SmComponent};
use crate::learn::{fit_prediction_kernel, FitObjective};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconstructConfig {
    pub data_kernel: KernelSpec,
    pub data_noise_var: f64,
    pub prediction_kernel: KernelSpec,
    pub prediction_noise_var: f64,
    pub n_train: usize,
    pub train_domain: (f64, f64),
    pub n_test: usize,
    pub test_domain: (f64, f64),
    pub draw_counts: Vec<usize>,
    pub learner_components: usize,
    /// Independent repetitions; errors are summarized by their median.
    pub trials: usize,
    pub tau_max: f64,
    pub n_tau: usize,
    pub fit: FitBudget,
}

impl Default for ReconstructConfig {
    fn default() -> Self {
        Self {
            data_kernel: KernelSpec::rbf(1.0, 1.0),
            data_noise_var: 0.01,
            prediction_kernel: KernelSpec::spectral_mixture(vec![
                SmComponent::new(0.6, 0.2, 0.04f64.powi(2)),
                SmComponent::new(0.4, 0.6, 0.05f64.powi(2)),
            ]),
            prediction_noise_var: 0.01,
            n_train: 20,
            train_domain: (0.0, 10.0),
            n_test: 20,
            test_domain: (10.0, 20.0),
            draw_counts: vec![1, 10, 20],
            learner_components: 5,
            trials: 10,
            tau_max: 10.0,
            n_tau: 101,
            fit: FitBudget::default(),
        }
    }
}

impl ReconstructConfig {
    fn validate(&self) -> Result<()> {
        self.data_kernel.validate()?;
        self.prediction_kernel.validate()?;
        if self.draw_counts.is_empty() || self.draw_counts.contains(&0) {
            return Err(Error::validation("draw_counts", "need positive draw counts"));
        }
        if self.n_train < 2 || self.n_test == 0 || self.trials == 0 || self.n_tau < 2 {
            return Err(Error::validation(
                "n_train",
                "need n_train >= 2, n_test >= 1, trials >= 1, n_tau >= 2",
            ));
        }
        if !(self.train_domain.0 < self.train_domain.1 && self.test_domain.0 < self.test_domain.1)
        {
            return Err(Error::validation("train_domain", "empty domain"));
        }
        if self.learner_components == 0 {
            return Err(Error::validation("learner_components", "must be >= 1"));
        }
        Ok(())
    }
}

struct Fitted {
    w: usize,
    spec: KernelSpec,
    objective: f64,
    error: f64,
    mode_gap: f64,
}

/// Relative distance from `target` to the nearest learned frequency among
/// components carrying at least 5% of the total weight.
fn nearest_mode_gap(spec: &KernelSpec, target: f64) -> f64 {
    let KernelSpec::SpectralMixture { components } = spec else {
        return f64::NAN;
    };
    let total: f64 = components.iter().map(|c| c.weight()).sum();
    components
        .iter()
        .filter(|c| c.weight() >= 0.05 * total)
        .map(|c| (c.frequency() - target).abs() / target)
        .fold(f64::INFINITY, f64::min)
}

fn highest_frequency(spec: &KernelSpec) -> Option<f64> {
    match spec {
        KernelSpec::SpectralMixture { components } => components
            .iter()
            .map(|c| c.frequency())
            .max_by(f64::total_cmp),
        _ => None,
    }
}

fn run_trial(cfg: &ReconstructConfig, seed: u64, taus: &[f64]) -> Result<Vec<Fitted>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let xs = random_inputs(&mut rng, cfg.n_train, cfg.train_domain.0, cfg.train_domain.1);
    let x_test = linspace(cfg.test_domain.0, cfg.test_domain.1, cfg.n_test);
    let data_model = GpModel::new(cfg.data_kernel.clone(), cfg.data_noise_var);
    let y: Vec<f64> = sample_prior(&data_model, &xs, 1, derive_seed(seed, 1))?
        .column(0)
        .iter()
        .copied()
        .collect();
    let pred_model = GpModel::new(cfg.prediction_kernel.clone(), cfg.prediction_noise_var);
    let w_max = *cfg.draw_counts.iter().max().expect("validated");
    let all = sample_posterior_with(&pred_model, &xs, &y, &x_test, w_max, derive_seed(seed, 2), true)?;
    let k_pred = kernel_curve(&cfg.prediction_kernel, 0.0, taus);
    let high = highest_frequency(&cfg.prediction_kernel);

    cfg.draw_counts
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let draws = DrawSet::new(
                xs.clone(),
                y.clone(),
                x_test.clone(),
                all.y_test.columns(0, w).into_owned(),
            )?;
            let template = sm_learner(&draws, cfg.learner_components, derive_seed(seed, 100 + i as u64))?;
            let opts = cfg
                .fit
                .options(FitObjective::PredictionMl, derive_seed(seed, 200 + i as u64));
            let report = fit_prediction_kernel(&template, &draws, &opts)?;
            let k = kernel_curve(&report.best_spec, 0.0, taus);
            Ok(Fitted {
                w,
                error: normalized_l2(&k, &k_pred),
                mode_gap: high.map_or(f64::NAN, |h| nearest_mode_gap(&report.best_spec, h)),
                objective: report.best_objective,
                spec: report.best_spec,
            })
        })
        .collect()
}

/// Fits an SM learner to `W` extrapolations of a prediction-kernel GP
/// conditioned on data from the data kernel, for every `W` in the config.
///
/// Sections: `kernel_curves_W{w}` (first trial; columns `tau, k_learned,
/// k_prediction, k_data`) and `errors` (columns `trial, W, error,
/// objective, mode_gap`). Summary keys: `median_error_W{w}`,
/// `median_mode_gap_W{w}`.
pub fn run_reconstruction(cfg: &ReconstructConfig, seed: u64) -> Result<Report> {
    cfg.validate()?;
    let taus = linspace(0.0, cfg.tau_max, cfg.n_tau);
    let trials: Vec<Vec<Fitted>> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| run_trial(cfg, derive_seed(seed, t as u64), &taus))
        .collect::<Result<_>>()?;

    let mut report = Report::new("reconstruct");
    let k_pred = kernel_curve(&cfg.prediction_kernel, 0.0, &taus);
    let k_data = kernel_curve(&cfg.data_kernel, 0.0, &taus);
    for f in &trials[0] {
        let k = kernel_curve(&f.spec, 0.0, &taus);
        let mut t = Table::new(["tau", "k_learned", "k_prediction", "k_data"]);
        for i in 0..taus.len() {
            t.push_nums(&[taus[i], k[i], k_pred[i], k_data[i]]);
        }
        report.add(
            format!("kernel_curves_W{}", f.w),
            t,
            lines(
                &format!("learned kernel, W = {}", f.w),
                "tau",
                &["k_learned", "k_prediction", "k_data"],
            ),
        );
    }
    let mut errors = Table::new(["trial", "W", "error", "objective", "mode_gap"]);
    for (t, fits) in trials.iter().enumerate() {
        for f in fits {
            errors.push_nums(&[t as f64, f.w as f64, f.error, f.objective, f.mode_gap]);
        }
    }
    report.add("errors", errors, None);
    for (i, &w) in cfg.draw_counts.iter().enumerate() {
        let errs: Vec<f64> = trials.iter().map(|f| f[i].error).collect();
        let gaps: Vec<f64> = trials.iter().map(|f| f[i].mode_gap).collect();
        report.put(&format!("median_error_W{w}"), median(&errs));
        report.put(&format!("median_mode_gap_W{w}"), median(&gaps));
    }
    report.put("trials", cfg.trials);
    Ok(report)
}
