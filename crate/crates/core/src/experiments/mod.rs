//! End-to-end experiment pipelines with simulated responders.
//!
//! Every run is a pure function of its configuration and seed. Each one
//! returns a [`Report`] that [`emit_report`] turns into CSV and SVG files.

pub mod bias;
pub mod occam;
pub mod progressive;
pub mod reconstruct;
pub mod report;
pub mod stimuli;
mod svg;
pub mod unconventional;

use std::path::PathBuf;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use bias::{run_bias_study, BiasConfig};
pub use occam::{aggregate_rankings, build_occam_task, run_occam, OccamConfig, OccamTask};
pub use progressive::{run_progressive, ProgressiveConfig};
pub use reconstruct::{run_reconstruction, ReconstructConfig};
pub use report::{emit_report, Manifest, Plot, Report, Section, Table};
pub use stimuli::{make_sawtooth, make_step};
pub use unconventional::{run_unconventional, UnconventionalConfig};

use crate::error::{Error, Result};
use crate::gp::{DrawSet, GpModel};
use crate::kernels::default_sm_init;
use crate::linalg::variance;
use crate::learn::{FitObjective, FitOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "experiment", rename_all = "snake_case")]
pub enum ExperimentParams {
    Reconstruct(ReconstructConfig),
    Progressive(ProgressiveConfig),
    Unconventional(UnconventionalConfig),
    Occam(OccamConfig),
    Bias(BiasConfig),
}

impl ExperimentParams {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Reconstruct(_) => "reconstruct",
            Self::Progressive(_) => "progressive",
            Self::Unconventional(_) => "unconventional",
            Self::Occam(_) => "occam",
            Self::Bias(_) => "bias",
        }
    }

    /// Default parameters for an experiment name.
    pub fn default_for(name: &str) -> Result<Self> {
        Ok(match name {
            "reconstruct" => Self::Reconstruct(Default::default()),
            "progressive" => Self::Progressive(Default::default()),
            "unconventional" => Self::Unconventional(Default::default()),
            "occam" => Self::Occam(Default::default()),
            "bias" => Self::Bias(Default::default()),
            other => {
                return Err(Error::validation(
                    "experiment",
                    format!("unknown experiment {other:?}"),
                ))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(flatten)]
    pub params: ExperimentParams,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn run(&self) -> Result<Report> {
        match &self.params {
            ExperimentParams::Reconstruct(c) => run_reconstruction(c, self.seed),
            ExperimentParams::Progressive(c) => run_progressive(c, self.seed),
            ExperimentParams::Unconventional(c) => run_unconventional(c, self.seed),
            ExperimentParams::Occam(c) => run_occam(c, self.seed),
            ExperimentParams::Bias(c) => run_bias_study(c, self.seed),
        }
    }

    pub fn run_and_emit(&self) -> Result<Manifest> {
        emit_report(&self.run()?, &self.output_dir)
    }
}

/// Optimizer budget shared by the experiment configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitBudget {
    pub restarts: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
}

impl Default for FitBudget {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 500,
            grad_tol: 1e-6,
        }
    }
}

impl FitBudget {
    pub fn options(&self, objective: FitObjective, seed: u64) -> FitOptions {
        FitOptions {
            restarts: self.restarts,
            max_iters: self.max_iters,
            grad_tol: self.grad_tol,
            seed,
            objective,
        }
    }
}

/// Spectral mixture learner initialized from the scale of the stacked
/// training and test data, with noise at 1% of the target variance.
pub fn sm_learner(draws: &DrawSet, q: usize, seed: u64) -> Result<GpModel> {
    let stacked = draws.stacked_inputs();
    let targets = draws.stacked_targets();
    let lo = stacked.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = stacked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spacing = (hi - lo) / (stacked.len() - 1) as f64;
    let var = variance(targets.as_slice());
    let init = default_sm_init(hi - lo, var, 0.5 / spacing, q, seed)?;
    Ok(GpModel::new(init, 0.01 * var))
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![lo],
        _ => (0..n)
            .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// `n` sorted uniform draws on `[lo, hi)`.
pub fn random_inputs<R: Rng + ?Sized>(rng: &mut R, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut xs: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    xs.sort_by(f64::total_cmp);
    xs
}

/// `‖a − b‖ / ‖b‖`.
pub fn normalized_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

/// Median of the finite entries; NaN when there are none.
pub fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (divisor n − 1); zero for a single value.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt()
}

/// Covariance as a table with an `x` column followed by one column per grid
/// point, matching the layout of [`crate::empirical::cov_csv`].
pub fn cov_table(xs: &[f64], cov: &DMatrix<f64>) -> Table {
    let mut t = Table::new(
        std::iter::once("x".to_string()).chain(xs.iter().map(|x| report::fmt_num(*x))),
    );
    for (i, x) in xs.iter().enumerate() {
        let mut row = vec![*x];
        row.extend(cov.row(i).iter());
        t.push_nums(&row);
    }
    t
}

/// Matrix columns as curves, one table column each, against `x`.
pub fn curves_table(xs: &[f64], columns: &[(String, Vec<f64>)]) -> Table {
    let mut t = Table::new(std::iter::once("x".to_string()).chain(columns.iter().map(|c| c.0.clone())));
    for (i, x) in xs.iter().enumerate() {
        let mut row = vec![*x];
        row.extend(columns.iter().map(|c| c.1[i]));
        t.push_nums(&row);
    }
    t
}

pub fn lines(title: &str, x: &str, series: &[&str]) -> Option<Plot> {
    Some(Plot::Lines {
        title: title.into(),
        x: x.into(),
        series: series.iter().map(|s| s.to_string()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip_with_defaults() {
        let text = r#"{"experiment":"bias","seed":7,"replicates":3}"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
        match &cfg.params {
            ExperimentParams::Bias(b) => assert_eq!(b.replicates, 3),
            other => panic!("wrong variant {other:?}"),
        }
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_experiment_is_rejected() {
        assert!(ExperimentParams::default_for("nope").is_err());
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"experiment":"nope"}"#).is_err());
    }

    #[test]
    fn helpers() {
        assert_eq!(linspace(0.0, 1.0, 3), vec![0.0, 0.5, 1.0]);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!((normalized_l2(&[1.0, 1.0], &[1.0, 0.0]) - 1.0).abs() < 1e-15);
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
