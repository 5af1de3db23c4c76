//! Sequences of stimuli from one kernel, answered by simulated responders
//! whose hyperparameters move from a personal prior towards the pooled
//! marginal likelihood fit of every dataset seen so far.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stimuli::StimulusGrid;
use super::{cov_table, linspace, lines, normalized_l2, sm_learner, FitBudget, Plot, Report, Table};
use crate::empirical::empirical_moments;
use crate::error::{Error, Result};
use crate::gp::{posterior_predictive, sample_posterior, sample_prior, DrawSet, GpModel};
use crate::kernels::{kernel_curve, KernelSpec, SmComponent};
use crate::learn::{fit_data_kernel, fit_pooled_data_kernel, fit_prediction_kernel, FitObjective};
use crate::linalg::variance;
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgressiveSet {
    pub name: String,
    /// Generates the stimuli.
    pub truth: GpModel,
    /// Responders' prior before jitter; the truth when absent.
    pub responder: Option<GpModel>,
    /// Distinct stimuli; the first is shown again at the end.
    pub n_distinct: usize,
    pub responders: usize,
    pub grid: StimulusGrid,
    /// Also report empirical and true posterior covariance of the last
    /// stimulus.
    pub covariance: bool,
}

impl Default for ProgressiveSet {
    fn default() -> Self {
        Self {
            name: "A".into(),
            truth: GpModel::new(KernelSpec::rq(1.5, 1.0, 0.5), 0.01),
            responder: None,
            n_distinct: 5,
            responders: 20,
            grid: StimulusGrid {
                domain: (0.0, 10.0),
                train_end: 5.0,
                n_train: 20,
                n_test: 20,
            },
            covariance: false,
        }
    }
}

impl ProgressiveSet {
    /// Spectral mixture times linear kernel, 10 responders, with covariance
    /// output.
    pub fn default_b() -> Self {
        Self {
            name: "B".into(),
            truth: GpModel::new(
                KernelSpec::product(
                    KernelSpec::spectral_mixture(vec![SmComponent::new(1.0, 0.3, 0.03f64.powi(2))]),
                    KernelSpec::linear(0.05, -1.0),
                ),
                0.01,
            ),
            responders: 10,
            covariance: true,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProgressiveConfig {
    pub sets: Vec<ProgressiveSet>,
    /// Standard deviation of each responder's log-space hyperparameter
    /// offsets.
    pub jitter_std: f64,
    /// Weight of a responder's prior hyperparameters, in datasets, against
    /// the pooled fit to the datasets seen so far.
    pub prior_strength: f64,
    pub learner_components: usize,
    pub tau_max: f64,
    pub n_tau: usize,
    pub fit: FitBudget,
    /// Budget for the pooled fit responders adapt towards.
    pub responder_fit: FitBudget,
}

impl Default for ProgressiveConfig {
    fn default() -> Self {
        Self {
            sets: vec![ProgressiveSet::default(), ProgressiveSet::default_b()],
            jitter_std: 0.3,
            prior_strength: 2.0,
            learner_components: 3,
            tau_max: 5.0,
            n_tau: 101,
            fit: FitBudget {
                restarts: 5,
                ..Default::default()
            },
            responder_fit: FitBudget {
                restarts: 3,
                ..Default::default()
            },
        }
    }
}

fn jitter_kernel(spec: &KernelSpec, std: f64, seed: u64) -> Result<KernelSpec> {
    if std == 0.0 {
        return Ok(spec.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, std).map_err(|e| Error::validation("jitter_std", e.to_string()))?;
    let params: Vec<f64> = spec
        .params()
        .iter()
        .zip(spec.log_space_mask())
        .map(|(p, is_log)| if is_log { p + normal.sample(&mut rng) } else { *p })
        .collect();
    spec.with_params(&params)
}

/// Pearson correlation of the upper triangles (diagonal included).
pub fn upper_triangle_correlation(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for i in 0..n {
        for j in i..n {
            xs.push(a[(i, j)]);
            ys.push(b[(i, j)]);
        }
    }
    let mx = super::mean(&xs);
    let my = super::mean(&ys);
    let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let vx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let vy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    cov / (vx * vy).sqrt()
}

struct StimulusResult {
    learned: KernelSpec,
    rbf: KernelSpec,
    draws: DrawSet,
}

fn run_set(
    cfg: &ProgressiveConfig,
    set: &ProgressiveSet,
    seed: u64,
    report: &mut Report,
    distances: &mut Table,
) -> Result<()> {
    set.grid.validate()?;
    set.truth.kernel.validate()?;
    if set.n_distinct == 0 || set.responders == 0 {
        return Err(Error::validation("responders", "need stimuli and responders"));
    }
    let x_train = set.grid.x_train();
    let x_test = set.grid.x_test();
    let all_x: Vec<f64> = x_train.iter().chain(&x_test).copied().collect();
    let n = x_train.len();

    // stimuli s = 0..n_distinct, then stimulus 0 again
    let mut datasets = Vec::new();
    for s in 0..set.n_distinct {
        let f = sample_prior(&set.truth, &all_x, 1, derive_seed(seed, 10 + s as u64))?;
        datasets.push(f.column(0).rows(0, n).iter().copied().collect::<Vec<f64>>());
    }
    let sequence: Vec<usize> = (0..set.n_distinct).chain(std::iter::once(0)).collect();

    let base = set.responder.clone().unwrap_or_else(|| set.truth.clone());
    let priors: Vec<GpModel> = (0..set.responders)
        .map(|p| {
            Ok(GpModel {
                kernel: jitter_kernel(&base.kernel, cfg.jitter_std, derive_seed(seed, 1000 + p as u64))?,
                ..base.clone()
            }
            .frozen())
        })
        .collect::<Result<_>>()?;

    let taus = linspace(0.0, cfg.tau_max, cfg.n_tau);
    let x_ref = x_test[0];
    let truth_curve = kernel_curve(&set.truth.kernel, x_ref, &taus);
    let mut results = Vec::with_capacity(sequence.len());
    for (pos, &s) in sequence.iter().enumerate() {
        let y = &datasets[s];
        let seen: Vec<(Vec<f64>, Vec<f64>)> = sequence[..=pos]
            .iter()
            .map(|&k| (x_train.clone(), datasets[k].clone()))
            .collect();
        let pseed = derive_seed(seed, 100_000 + pos as u64);
        let opts = cfg.responder_fit.options(FitObjective::DataMl, pseed);
        let pooled = fit_pooled_data_kernel(&base.clone().frozen(), &seen, &opts)?.best_spec.params();
        let m = seen.len() as f64;
        let columns: Vec<Vec<f64>> = priors
            .par_iter()
            .enumerate()
            .map(|(p, prior)| {
                let blended: Vec<f64> = prior
                    .kernel
                    .params()
                    .iter()
                    .zip(&pooled)
                    .map(|(a, b)| (cfg.prior_strength * a + m * b) / (cfg.prior_strength + m))
                    .collect();
                let belief = GpModel {
                    kernel: prior.kernel.with_params(&blended)?,
                    ..prior.clone()
                };
                let d = sample_posterior(&belief, &x_train, y, &x_test, 1, derive_seed(pseed, 1 + p as u64))?;
                Ok(d.y_test.column(0).iter().copied().collect())
            })
            .collect::<Result<_>>()?;
        let y_test = DMatrix::from_fn(x_test.len(), columns.len(), |i, j| columns[j][i]);
        let draws = DrawSet::new(x_train.clone(), y.clone(), x_test.clone(), y_test)?;
        let sseed = derive_seed(seed, 500 + pos as u64);
        let template = sm_learner(&draws, cfg.learner_components, derive_seed(sseed, 0))?;
        let learned = fit_prediction_kernel(
            &template,
            &draws,
            &cfg.fit.options(FitObjective::PredictionMl, derive_seed(sseed, 1)),
        )?
        .best_spec;
        let rbf_template = GpModel::new(KernelSpec::rbf(1.0, variance(y).max(1e-6)), 0.01);
        let rbf = fit_data_kernel(
            &rbf_template,
            &x_train,
            y,
            &cfg.fit.options(FitObjective::DataMl, derive_seed(sseed, 2)),
        )?
        .best_spec;
        results.push(StimulusResult {
            learned,
            rbf,
            draws,
        });
    }

    for (pos, r) in results.iter().enumerate() {
        let learned = kernel_curve(&r.learned, x_ref, &taus);
        let rbf = kernel_curve(&r.rbf, x_ref, &taus);
        let mut t = Table::new(["tau", "k_learned", "k_truth", "k_rbf_baseline"]);
        for i in 0..taus.len() {
            t.push_nums(&[taus[i], learned[i], truth_curve[i], rbf[i]]);
        }
        let name = format!("kernel_curves_{}_stimulus{}", set.name, pos + 1);
        report.add(
            name.clone(),
            t,
            lines(&name, "tau", &["k_learned", "k_truth", "k_rbf_baseline"]),
        );
        report.put(&format!("learned_kernel_{}_stimulus{}", set.name, pos + 1), &r.learned);
        let d_learned = normalized_l2(&learned, &truth_curve);
        let d_rbf = normalized_l2(&rbf, &truth_curve);
        distances.push(vec![
            set.name.clone(),
            (pos + 1).to_string(),
            super::report::fmt_num(d_learned),
            super::report::fmt_num(d_rbf),
        ]);
        if pos == 0 {
            report.put(&format!("distance_{}_first", set.name), d_learned);
        }
        if pos + 1 == results.len() {
            report.put(&format!("distance_{}_last", set.name), d_learned);
        }
    }

    if set.covariance {
        let last = results.last().expect("nonempty sequence");
        let empirical = empirical_moments(&last.draws.y_test).cov;
        let (_, true_cov) = posterior_predictive(&set.truth, &x_train, &last.draws.y_train, &x_test, false)?;
        let (_, true_noisy) = posterior_predictive(&set.truth, &x_train, &last.draws.y_train, &x_test, true)?;
        let heat = |title: &str, m: &DMatrix<f64>| {
            Some(Plot::Heatmap {
                title: title.into(),
                xs: x_test.clone(),
                matrix: m.clone(),
            })
        };
        report.add(
            format!("empirical_cov_{}", set.name),
            cov_table(&x_test, &empirical),
            heat("empirical posterior covariance", &empirical),
        );
        report.add(
            format!("true_cov_{}", set.name),
            cov_table(&x_test, &true_cov),
            heat("true posterior covariance", &true_cov),
        );
        report.add(
            format!("true_cov_noisy_{}", set.name),
            cov_table(&x_test, &true_noisy),
            heat("true posterior covariance with noise", &true_noisy),
        );
        report.put(
            &format!("cov_upper_corr_{}", set.name),
            upper_triangle_correlation(&empirical, &true_cov),
        );
    }
    Ok(())
}

/// Runs every configured set. Per set and stimulus position `s` (1-based,
/// the last position repeats the first stimulus) the section
/// `kernel_curves_{set}_stimulus{s}` has columns `tau, k_learned, k_truth,
/// k_rbf_baseline`; `distances` holds normalized L2 distances to the truth.
pub fn run_progressive(cfg: &ProgressiveConfig, seed: u64) -> Result<Report> {
    if cfg.sets.is_empty() {
        return Err(Error::validation("sets", "need at least one set"));
    }
    if !(cfg.jitter_std >= 0.0 && cfg.prior_strength >= 0.0) || cfg.n_tau < 2 || cfg.learner_components == 0 {
        return Err(Error::validation("jitter_std", "invalid settings"));
    }
    let mut report = Report::new("progressive");
    let mut distances = Table::new(["set", "stimulus", "distance_learned", "distance_rbf"]);
    for (i, set) in cfg.sets.iter().enumerate() {
        run_set(cfg, set, derive_seed(seed, i as u64), &mut report, &mut distances)?;
    }
    report.add("distances", distances, None);
    Ok(report)
}
