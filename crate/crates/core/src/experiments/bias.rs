//! Length-scale bias of the marginal likelihood mode under repeated sampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{mean, random_inputs, sample_std, FitBudget, Report, Table};
use crate::error::{Error, Result};
use crate::gp::{sample_prior, GpModel};
use crate::kernels::KernelSpec;
use crate::learn::{fit_data_kernel, FitObjective};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    pub lengthscale: f64,
    pub signal_var: f64,
    pub noise_var: f64,
    /// Keep the noise variance at its true value while fitting.
    pub freeze_noise: bool,
    pub domain: (f64, f64),
    pub n_points: usize,
    pub replicates: usize,
    /// Additional dataset sizes, each with `sweep_replicates` replicates.
    pub sweep: Vec<usize>,
    pub sweep_replicates: usize,
    pub fit: FitBudget,
}

impl Default for BiasConfig {
    fn default() -> Self {
        Self {
            lengthscale: 1.0,
            signal_var: 1.0,
            noise_var: 0.3,
            freeze_noise: true,
            domain: (0.0, 3.0),
            n_points: 20,
            replicates: 200,
            sweep: vec![500],
            sweep_replicates: 20,
            fit: FitBudget {
                restarts: 3,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSummary {
    pub n_points: usize,
    pub replicates: usize,
    pub failed: usize,
    pub mean_bias: f64,
    pub std_bias: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t_statistic: f64,
    /// One-sided p-value for mean bias > 0.
    pub p_value: f64,
}

/// Mean, 95% interval and one-sided t-test of `values` against zero.
pub fn summarize(n_points: usize, values: &[f64], failed: usize) -> BiasSummary {
    let n = values.len();
    let m = if n > 0 { mean(values) } else { f64::NAN };
    let s = sample_std(values);
    let se = s / (n as f64).sqrt();
    let (t, p, half) = if n >= 2 && se > 0.0 {
        let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof >= 1");
        let t = m / se;
        (t, 1.0 - dist.cdf(t), dist.inverse_cdf(0.975) * se)
    } else {
        (f64::NAN, f64::NAN, f64::NAN)
    };
    BiasSummary {
        n_points,
        replicates: n + failed,
        failed,
        mean_bias: m,
        std_bias: s,
        ci_low: m - half,
        ci_high: m + half,
        t_statistic: t,
        p_value: p,
    }
}

struct Replicate {
    log_ls_hat: f64,
    signal_var_hat: f64,
}

fn replicate(cfg: &BiasConfig, n: usize, seed: u64) -> Result<Replicate> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let xs = random_inputs(&mut rng, n, cfg.domain.0, cfg.domain.1);
    let truth = GpModel::new(KernelSpec::rbf(cfg.lengthscale, cfg.signal_var), cfg.noise_var);
    let ys: Vec<f64> = sample_prior(&truth, &xs, 1, derive_seed(seed, 1))?
        .column(0)
        .iter()
        .copied()
        .collect();
    let template = if cfg.freeze_noise {
        truth.frozen()
    } else {
        truth
    };
    let opts = cfg.fit.options(FitObjective::DataMl, derive_seed(seed, 2));
    let fit = fit_data_kernel(&template, &xs, &ys, &opts)?;
    match fit.best_spec {
        KernelSpec::Rbf {
            log_lengthscale,
            log_signal_var,
        } => Ok(Replicate {
            log_ls_hat: log_lengthscale,
            signal_var_hat: log_signal_var.exp(),
        }),
        other => Err(Error::InvalidKernel(format!("expected RBF, got {other:?}"))),
    }
}

/// Fits an RBF by marginal likelihood to repeated samples from an RBF
/// prior and reports the distribution of `log ℓ̂ − log ℓ`.
///
/// Sections: `replicates` (columns `n_points, replicate, log_ls_hat, bias,
/// signal_var_hat`) and `bias_summary`. Failed fits are left out of the
/// statistics and counted.
pub fn run_bias_study(cfg: &BiasConfig, seed: u64) -> Result<Report> {
    if !(cfg.lengthscale > 0.0 && cfg.signal_var > 0.0 && cfg.noise_var > 0.0) {
        return Err(Error::validation("lengthscale", "hyperparameters must be > 0"));
    }
    if cfg.n_points < 2 || cfg.replicates == 0 {
        return Err(Error::validation("replicates", "need n_points >= 2 and replicates >= 1"));
    }
    if !(cfg.domain.0 < cfg.domain.1) {
        return Err(Error::validation("domain", "empty domain"));
    }
    let mut sizes = vec![(cfg.n_points, cfg.replicates)];
    sizes.extend(cfg.sweep.iter().map(|&n| (n, cfg.sweep_replicates)));

    let mut report = Report::new("bias");
    let mut rows = Table::new(["n_points", "replicate", "log_ls_hat", "bias", "signal_var_hat"]);
    let mut summary_table = Table::new([
        "n_points", "replicates", "failed", "mean_bias", "std_bias", "ci_low", "ci_high",
        "t_statistic", "p_value",
    ]);
    let mut summaries = Vec::new();
    for (k, &(n, reps)) in sizes.iter().enumerate() {
        if n < 2 || reps == 0 {
            continue;
        }
        let size_seed = derive_seed(seed, k as u64);
        let results: Vec<Result<Replicate>> = (0..reps)
            .into_par_iter()
            .map(|r| replicate(cfg, n, derive_seed(size_seed, r as u64)))
            .collect();
        let mut biases = Vec::new();
        let mut failed = 0;
        for (r, res) in results.iter().enumerate() {
            match res {
                Ok(rep) => {
                    let b = rep.log_ls_hat - cfg.lengthscale.ln();
                    biases.push(b);
                    rows.push_nums(&[n as f64, r as f64, rep.log_ls_hat, b, rep.signal_var_hat]);
                }
                Err(_) => failed += 1,
            }
        }
        let s = summarize(n, &biases, failed);
        summary_table.push_nums(&[
            n as f64,
            s.replicates as f64,
            s.failed as f64,
            s.mean_bias,
            s.std_bias,
            s.ci_low,
            s.ci_high,
            s.t_statistic,
            s.p_value,
        ]);
        summaries.push(s);
    }
    report.add("replicates", rows, None);
    report.add("bias_summary", summary_table, None);
    report.put("summaries", &summaries);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_replicate_row() {
        let cfg = BiasConfig {
            replicates: 1,
            sweep: vec![],
            ..Default::default()
        };
        let r = run_bias_study(&cfg, 5).unwrap();
        assert_eq!(r.section("replicates").unwrap().table.rows.len(), 1);
    }

    #[test]
    fn t_test_matches_hand_computation() {
        // mean 2, sample sd 1, n = 4 -> t = 4 with 3 dof
        let s = summarize(20, &[1.0, 2.0, 2.0, 3.0].map(|v| v), 1);
        assert!((s.mean_bias - 2.0).abs() < 1e-15);
        assert!((s.std_bias - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let t = 2.0 / ((2.0f64 / 3.0).sqrt() / 2.0);
        assert!((s.t_statistic - t).abs() < 1e-12);
        assert!(s.p_value > 0.0 && s.p_value < 0.01);
        assert_eq!(s.replicates, 5);
        assert!(s.ci_low < 2.0 && s.ci_high > 2.0);
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = BiasConfig {
            lengthscale: 0.0,
            ..Default::default()
        };
        assert!(run_bias_study(&cfg, 0).is_err());
    }
}
