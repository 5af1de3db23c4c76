//! Sawtooth and step stimuli: responses are grouped (clustering or
//! threshold filtering) and each group is summarized by its empirical
//! Gaussian, next to SM and RBF extrapolations of the training data.

use std::path::PathBuf;

use chrono::{DateTime, Utc};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stimuli::{make_sawtooth, make_step, StimulusGrid};
use super::{cov_table, curves_table, lines, mean, FitBudget, Plot, Report, Table};
use crate::empirical::{empirical_moments, psd_project, sample_empirical, DEFAULT_FLOOR_RATIO};
use crate::error::{Error, Result};
use crate::gp::{posterior_predictive, sample_posterior, GpModel};
use crate::kernels::{default_sm_init, KernelSpec, SmComponent};
use crate::learn::{fit_data_kernel, FitObjective};
use crate::linalg::{frobenius_rel_error, variance};
use crate::responses::{
    agglomerative_cluster, filter_responses, load_responses, total_variation, FilterThresholds, ResponseRecord,
    Stimulus,
};
use crate::seeds::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnconventionalStimulus {
    Sawtooth,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulatedPool {
    /// Responders following the main behaviour.
    pub primary: usize,
    /// Responders of each secondary behaviour type.
    pub per_other_type: usize,
    /// Sawtooth responder kernel, applied to mean-centred data.
    pub responder: GpModel,
    /// Pointwise noise on step responses.
    pub step_noise: f64,
}

impl Default for SimulatedPool {
    fn default() -> Self {
        // first three harmonics of a period-2 sawtooth, damped as 1/k^4
        let harmonic = |k: f64| {
            SmComponent::new(1.0 / (2.0 * std::f64::consts::PI.powi(2) * k.powi(4)), 0.5 * k, 0.03f64.powi(2))
        };
        Self {
            primary: 40,
            per_other_type: 8,
            responder: GpModel::new(
                KernelSpec::spectral_mixture(vec![harmonic(1.0), harmonic(2.0), harmonic(3.0)]),
                1e-3,
            ),
            step_noise: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnconventionalConfig {
    pub stimulus: UnconventionalStimulus,
    pub period: f64,
    pub amplitude: f64,
    pub breakpoints: Vec<f64>,
    pub levels: Vec<f64>,
    pub grid: StimulusGrid,
    /// Line-delimited response records to analyse instead of a simulated
    /// pool; records for other stimuli are ignored.
    pub responses_file: Option<PathBuf>,
    pub pool: SimulatedPool,
    /// Cluster count for the sawtooth.
    pub clusters: usize,
    pub thresholds: FilterThresholds,
    /// Draws from each group's empirical Gaussian.
    pub n_samples: usize,
    pub baseline_components: usize,
    pub fit: FitBudget,
}

impl Default for UnconventionalConfig {
    fn default() -> Self {
        Self {
            stimulus: UnconventionalStimulus::Sawtooth,
            period: 2.0,
            amplitude: 1.0,
            breakpoints: vec![1.5, 3.0, 4.5, 6.5],
            levels: vec![0.0, 1.0, 0.0, 1.0, 0.0],
            grid: StimulusGrid::default(),
            responses_file: None,
            pool: SimulatedPool::default(),
            clusters: 3,
            thresholds: FilterThresholds::default(),
            n_samples: 200,
            baseline_components: 3,
            fit: FitBudget {
                restarts: 5,
                ..Default::default()
            },
        }
    }
}

impl UnconventionalConfig {
    pub fn build_stimulus(&self) -> Result<Stimulus> {
        match self.stimulus {
            UnconventionalStimulus::Sawtooth => {
                make_sawtooth("sawtooth", self.period, self.amplitude, &self.grid)
            }
            UnconventionalStimulus::Step => {
                make_step("step", &self.breakpoints, &self.levels, &self.grid)
            }
        }
    }
}

fn timestamp(i: usize) -> DateTime<Utc> {
    DateTime::from_timestamp(1_700_000_000 + i as i64, 0).expect("in range")
}

fn record(pid: String, stimulus: &Stimulus, y_star: Vec<f64>, rt: f64, i: usize) -> ResponseRecord {
    ResponseRecord {
        participant_id: pid,
        stimulus_id: stimulus.id.clone(),
        y_star,
        response_time_s: rt,
        submitted_at: timestamp(i),
    }
}

/// Responder posterior covariance on the test grid.
pub fn responder_posterior_cov(pool: &SimulatedPool, stimulus: &Stimulus) -> Result<DMatrix<f64>> {
    Ok(posterior_predictive(&pool.responder, &stimulus.x_train, &stimulus.y_train, &stimulus.x_test, false)?.1)
}

/// Sawtooth pool: posterior draws from the responder kernel, plus linear
/// rising and falling continuations of the last training value.
fn simulate_sawtooth(pool: &SimulatedPool, s: &Stimulus, seed: u64) -> Result<Vec<ResponseRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let offset = mean(&s.y_train);
    let centred: Vec<f64> = s.y_train.iter().map(|y| y - offset).collect();
    let draws = sample_posterior(&pool.responder, &s.x_train, &centred, &s.x_test, pool.primary.max(1), derive_seed(seed, 1))?;
    let small = Normal::new(0.0, 0.05).expect("positive std");
    let mut out = Vec::new();
    for j in 0..pool.primary {
        let y: Vec<f64> = draws.y_test.column(j).iter().map(|v| v + offset).collect();
        out.push(record(format!("periodic-{j:03}"), s, y, rng.random_range(60.0..180.0), out.len()));
    }
    let last = *s.y_train.last().expect("nonempty");
    let x0 = s.x_test[0];
    for (name, sign) in [("rising", 1.0), ("falling", -1.0)] {
        for j in 0..pool.per_other_type {
            let slope = sign * rng.random_range(0.8..1.2);
            let y = s.x_test.iter().map(|x| last + slope * (x - x0) + small.sample(&mut rng)).collect();
            out.push(record(format!("{name}-{j:03}"), s, y, rng.random_range(60.0..180.0), out.len()));
        }
    }
    Ok(out)
}

/// Step pool: responders who continue with a single jump inside the middle
/// third of the test grid, plus fast responders and erratic responders.
fn simulate_step(pool: &SimulatedPool, s: &Stimulus, levels: &[f64], seed: u64) -> Vec<ResponseRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let noise = Normal::new(0.0, pool.step_noise.max(1e-12)).expect("positive std");
    let wild = Normal::new(0.0, 0.5).expect("positive std");
    let m = s.x_test.len();
    let before = *s.y_train.last().expect("nonempty");
    let after = levels
        .iter()
        .copied()
        .find(|l| *l != before)
        .unwrap_or(before + 1.0);
    let step_curve = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let jump = rng.random_range(m / 3..(2 * m).div_ceil(3).max(m / 3 + 1));
        (0..m)
            .map(|i| if i < jump { before } else { after } + noise.sample(rng))
            .collect()
    };
    let mut out = Vec::new();
    for j in 0..pool.primary {
        let y = step_curve(&mut rng);
        out.push(record(format!("step-{j:03}"), s, y, rng.random_range(60.0..180.0), out.len()));
    }
    for j in 0..pool.per_other_type {
        let y = step_curve(&mut rng);
        out.push(record(format!("fast-{j:03}"), s, y, rng.random_range(10.0..40.0), out.len()));
    }
    for j in 0..pool.per_other_type {
        let y = (0..m).map(|_| before + wild.sample(&mut rng)).collect();
        out.push(record(format!("erratic-{j:03}"), s, y, rng.random_range(60.0..180.0), out.len()));
    }
    out
}

/// Share of a curve's total variation falling between grid thirds
/// `[m/3, 2m/3]`.
pub fn middle_third_tv_share(y: &[f64]) -> f64 {
    let m = y.len();
    let total = total_variation(y);
    if total == 0.0 {
        return 0.0;
    }
    total_variation(&y[m / 3..=(2 * m / 3).min(m - 1)]) / total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupSummary {
    pub group: usize,
    pub size: usize,
    pub mean_tv_members: f64,
    pub mean_tv_samples: f64,
    pub median_middle_tv_share: f64,
}

/// Clusters (sawtooth) or filters (step) the responses, then reports each
/// group's projected empirical covariance, samples from it, and the SM and
/// RBF extrapolations of the training data.
///
/// Sections: `responses`, `groups` (columns `participant_id, group,
/// response_time_s, total_variation`), `group{g}_cov`, `group{g}_samples`,
/// `baselines` (columns `x, sm_mean, rbf_mean`).
pub fn run_unconventional(cfg: &UnconventionalConfig, seed: u64) -> Result<Report> {
    let stimulus = cfg.build_stimulus()?;
    if cfg.n_samples == 0 {
        return Err(Error::validation("n_samples", "must be >= 1"));
    }
    let simulated = cfg.responses_file.is_none();
    let responses: Vec<ResponseRecord> = match &cfg.responses_file {
        Some(path) => load_responses(path)?
            .into_iter()
            .filter(|r| r.stimulus_id == stimulus.id)
            .collect(),
        None => match cfg.stimulus {
            UnconventionalStimulus::Sawtooth => simulate_sawtooth(&cfg.pool, &stimulus, derive_seed(seed, 0))?,
            UnconventionalStimulus::Step => simulate_step(&cfg.pool, &stimulus, &cfg.levels, derive_seed(seed, 0)),
        },
    };
    if responses.is_empty() {
        return Err(Error::validation("responses", "no responses for this stimulus"));
    }
    for r in &responses {
        r.validate_for(&stimulus)?;
    }

    let labels: Vec<usize> = match cfg.stimulus {
        UnconventionalStimulus::Sawtooth => {
            let curves: Vec<Vec<f64>> = responses.iter().map(|r| r.y_star.clone()).collect();
            agglomerative_cluster(&curves, cfg.clusters.min(responses.len()))?
        }
        UnconventionalStimulus::Step => {
            filter_responses(&responses, &cfg.thresholds)?;
            responses
                .iter()
                .map(|r| if cfg.thresholds.passes(r) { 0 } else { 1 })
                .collect()
        }
    };
    let n_groups = labels.iter().max().map_or(0, |m| m + 1);

    let mut report = Report::new("unconventional");
    report.put("stimulus", &stimulus.id);
    let x_test = &stimulus.x_test;
    let named: Vec<(String, Vec<f64>)> = responses
        .iter()
        .map(|r| (r.participant_id.clone(), r.y_star.clone()))
        .collect();
    report.add("responses", curves_table(x_test, &named), None);

    let mut groups = Table::new(["participant_id", "group", "response_time_s", "total_variation"]);
    for (r, l) in responses.iter().zip(&labels) {
        groups.push(vec![
            r.participant_id.clone(),
            l.to_string(),
            super::report::fmt_num(r.response_time_s),
            super::report::fmt_num(total_variation(&r.y_star)),
        ]);
    }
    report.add("groups", groups, None);

    let mut summaries = Vec::new();
    let mut projected = Vec::new();
    for g in 0..n_groups {
        let members: Vec<&ResponseRecord> = responses.iter().zip(&labels).filter(|(_, l)| **l == g).map(|(r, _)| r).collect();
        let y = DMatrix::from_fn(x_test.len(), members.len(), |i, j| members[j].y_star[i]);
        let emp = psd_project(&empirical_moments(&y), DEFAULT_FLOOR_RATIO)?;
        let samples = sample_empirical(&emp, cfg.n_samples, derive_seed(seed, 10 + g as u64))?;
        let sample_tv: Vec<f64> = samples.column_iter().map(|c| total_variation(c.as_slice())).collect();
        let mut shares: Vec<f64> = samples.column_iter().map(|c| middle_third_tv_share(c.as_slice())).collect();
        shares.sort_by(f64::total_cmp);
        let member_tv: Vec<f64> = members.iter().map(|r| total_variation(&r.y_star)).collect();
        summaries.push(GroupSummary {
            group: g,
            size: members.len(),
            mean_tv_members: mean(&member_tv),
            mean_tv_samples: mean(&sample_tv),
            median_middle_tv_share: super::median(&shares),
        });
        report.add(
            format!("group{g}_cov"),
            cov_table(x_test, &emp.cov),
            Some(Plot::Heatmap {
                title: format!("group {g} empirical covariance"),
                xs: x_test.clone(),
                matrix: emp.cov.clone(),
            }),
        );
        let shown = samples.ncols().min(5);
        let mut cols = vec![("mean".to_string(), emp.mean.iter().copied().collect::<Vec<f64>>())];
        cols.extend((0..shown).map(|j| (format!("sample_{j}"), samples.column(j).iter().copied().collect())));
        let names: Vec<&str> = cols.iter().map(|c| c.0.as_str()).collect();
        let plot = lines(&format!("group {g} samples"), "x", &names);
        report.add(format!("group{g}_samples"), curves_table(x_test, &cols), plot);
        projected.push(emp);
    }
    report.put("groups", &summaries);
    // largest group first; ties keep the lower label
    let main = (0..n_groups).max_by(|&a, &b| summaries[a].size.cmp(&summaries[b].size).then(b.cmp(&a))).expect("nonempty");
    report.put("main_group", main);
    let s = &summaries[main];
    report.put("main_tv_rel_diff", (s.mean_tv_samples - s.mean_tv_members).abs() / s.mean_tv_members);
    report.put("main_middle_tv_share", s.median_middle_tv_share);
    if simulated && cfg.stimulus == UnconventionalStimulus::Sawtooth {
        let truth = responder_posterior_cov(&cfg.pool, &stimulus)?;
        report.put("main_cov_rel_error", frobenius_rel_error(&projected[main].cov, &truth));
        report.add(
            "responder_posterior_cov",
            cov_table(x_test, &truth),
            Some(Plot::Heatmap {
                title: "responder posterior covariance".into(),
                xs: x_test.clone(),
                matrix: truth,
            }),
        );
    }

    // baselines from the training data alone
    let (xs, ys) = (&stimulus.x_train, &stimulus.y_train);
    let offset = mean(ys);
    let centred: Vec<f64> = ys.iter().map(|y| y - offset).collect();
    let var = variance(&centred).max(1e-6);
    let range = xs[xs.len() - 1] - xs[0];
    let spacing = range / (xs.len() - 1) as f64;
    let sm_init = default_sm_init(range, var, 0.5 / spacing, cfg.baseline_components, derive_seed(seed, 100))?;
    let mut curves = Vec::new();
    for (name, template, k) in [
        ("sm_mean", GpModel::new(sm_init, 0.01 * var), 101u64),
        ("rbf_mean", GpModel::new(KernelSpec::rbf(1.0, var), 0.01 * var), 102u64),
    ] {
        let fit = fit_data_kernel(&template, xs, &centred, &cfg.fit.options(FitObjective::DataMl, derive_seed(seed, k)))?;
        let model = fit.best_model(&template);
        let (m, _) = posterior_predictive(&model, xs, &centred, x_test, false)?;
        curves.push((name.to_string(), m.iter().map(|v| v + offset).collect::<Vec<f64>>()));
    }
    report.add("baselines", curves_table(x_test, &curves), lines("baseline extrapolations", "x", &["sm_mean", "rbf_mean"]));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn middle_share_of_a_centred_step() {
        let y: Vec<f64> = (0..30).map(|i| if i < 15 { 0.0 } else { 1.0 }).collect();
        assert_eq!(middle_third_tv_share(&y), 1.0);
        let flat = vec![1.0; 10];
        assert_eq!(middle_third_tv_share(&flat), 0.0);
    }

    #[test]
    fn step_partition_matches_manual_thresholds() {
        let cfg = UnconventionalConfig {
            stimulus: UnconventionalStimulus::Step,
            n_samples: 10,
            fit: FitBudget {
                restarts: 1,
                max_iters: 50,
                grad_tol: 1e-6,
            },
            ..Default::default()
        };
        let r = run_unconventional(&cfg, 9).unwrap();
        let t = &r.section("groups").unwrap().table;
        for row in &t.rows {
            let rt: f64 = row[2].parse().unwrap();
            let tv: f64 = row[3].parse().unwrap();
            let manual = (50.0..=200.0).contains(&rt) && tv <= 3.0;
            assert_eq!(row[1], if manual { "0" } else { "1" }, "{row:?}");
        }
        assert_eq!(t.rows.iter().filter(|r| r[1] == "0").count(), cfg.pool.primary);
    }
}
