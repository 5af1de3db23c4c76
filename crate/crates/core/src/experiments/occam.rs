//! Occam's-razor ranking tasks: seven candidate fits to five points, and
//! statistics over human or simulated rankings of them.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    curves_table, lines, linspace, mean, random_inputs, sample_std, FitBudget, Report, Table,
};
use crate::error::{Error, Result};
use crate::gp::{log_marginal_likelihood, posterior_predictive, sample_prior, GpModel};
use crate::kernels::KernelSpec;
use crate::learn::{fit_data_kernel, FitObjective};
use crate::responses::{Plausibility, RankingRecord, N_CANDIDATES};
use crate::seeds::derive_seed;

/// Rounds of "refit from the best candidate" used to make the label-1 fit
/// dominate every offset candidate.
const MAX_REFITS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OccamConfig {
    /// Generating model; its kernel must be RBF.
    pub template: GpModel,
    /// Offsets to the fitted log length-scale for labels 3..=7.
    pub offsets: Vec<f64>,
    pub domain: (f64, f64),
    /// Size of the generating dataset the five points are drawn from.
    pub n_full: usize,
    pub n_subsample: usize,
    pub display_points: usize,
    /// Also optimize the noise variance for label 1.
    pub optimize_noise: bool,
    pub tasks: usize,
    pub fit: FitBudget,
}

impl Default for OccamConfig {
    fn default() -> Self {
        Self {
            template: GpModel::new(KernelSpec::rbf(1.0, 1.0), 0.01),
            offsets: vec![1.0, 0.5, -0.5, -1.0, -1.5],
            domain: (0.0, 5.0),
            n_full: 50,
            n_subsample: 5,
            display_points: 100,
            optimize_noise: false,
            tasks: 50,
            fit: FitBudget {
                restarts: 5,
                ..Default::default()
            },
        }
    }
}

impl OccamConfig {
    fn validate(&self) -> Result<()> {
        if !matches!(self.template.kernel, KernelSpec::Rbf { .. }) {
            return Err(Error::validation("template", "kernel must be RBF"));
        }
        if self.offsets.len() != N_CANDIDATES - 2 {
            return Err(Error::validation(
                "offsets",
                format!("need exactly {} offsets", N_CANDIDATES - 2),
            ));
        }
        if self.offsets.windows(2).any(|w| w[0] <= w[1]) {
            return Err(Error::validation("offsets", "must be strictly decreasing"));
        }
        if !(self.offsets.iter().any(|o| *o > 0.0) && self.offsets.iter().any(|o| *o < 0.0)) {
            return Err(Error::validation("offsets", "need positive and negative offsets"));
        }
        if self.n_subsample < 2 || self.n_subsample > self.n_full {
            return Err(Error::validation("n_subsample", "need 2 <= n_subsample <= n_full"));
        }
        if self.display_points < 2 || !(self.domain.0 < self.domain.1) {
            return Err(Error::validation("display_points", "need a nonempty display grid"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccamTask {
    pub id: String,
    pub dataset_x: Vec<f64>,
    pub dataset_y: Vec<f64>,
    pub display_x: Vec<f64>,
    /// Predictive means; entry `i` belongs to internal label `i + 1`.
    pub candidate_curves: Vec<Vec<f64>>,
    pub candidate_configs: Vec<GpModel>,
    pub log_ls_offsets: Vec<f64>,
    /// Log marginal likelihood of the five points under each candidate.
    pub lml: Vec<f64>,
    pub full_x: Vec<f64>,
    pub full_y: Vec<f64>,
}

impl OccamTask {
    /// Rank of each label by marginal likelihood, 1 = highest; ties go to
    /// the lower label.
    pub fn lml_ranks(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.lml.len()).collect();
        order.sort_by(|&a, &b| self.lml[b].total_cmp(&self.lml[a]).then(a.cmp(&b)));
        let mut ranks = vec![0; self.lml.len()];
        for (r, &i) in order.iter().enumerate() {
            ranks[i] = r + 1;
        }
        ranks
    }

    /// Marginal likelihood strictly decreases along the negative offsets.
    pub fn negative_offsets_monotone(&self) -> bool {
        let neg: Vec<f64> = self
            .log_ls_offsets
            .iter()
            .zip(&self.lml[2..])
            .filter(|(o, _)| **o < 0.0)
            .map(|(_, l)| *l)
            .collect();
        neg.windows(2).all(|w| w[0] > w[1])
    }
}

fn with_log_ls(model: &GpModel, log_ls: f64) -> GpModel {
    let mut m = model.clone();
    if let KernelSpec::Rbf {
        log_lengthscale, ..
    } = &mut m.kernel
    {
        *log_lengthscale = log_ls;
    }
    m
}

fn log_ls(model: &GpModel) -> f64 {
    match model.kernel {
        KernelSpec::Rbf {
            log_lengthscale, ..
        } => log_lengthscale,
        _ => f64::NAN,
    }
}

/// Samples a dataset from the template, keeps a random subsample, and
/// builds the seven candidates: 1 = marginal likelihood fit, 2 = the
/// generating hyperparameters (curve conditioned on the full dataset),
/// 3..=7 = the fit with its log length-scale shifted by each offset.
pub fn build_occam_task(cfg: &OccamConfig, id: &str, seed: u64) -> Result<OccamTask> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let full_x = random_inputs(&mut rng, cfg.n_full, cfg.domain.0, cfg.domain.1);
    let full_y: Vec<f64> = sample_prior(&cfg.template, &full_x, 1, derive_seed(seed, 1))?
        .column(0)
        .iter()
        .copied()
        .collect();
    let mut idx = sample(&mut rng, cfg.n_full, cfg.n_subsample).into_vec();
    idx.sort_unstable();
    let xs: Vec<f64> = idx.iter().map(|&i| full_x[i]).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| full_y[i]).collect();

    let mut start = if cfg.optimize_noise {
        GpModel {
            noise_frozen: false,
            ..cfg.template.clone()
        }
    } else {
        cfg.template.clone().frozen()
    };
    let mut fitted = start.clone();
    let mut lml = Vec::new();
    for round in 0..MAX_REFITS {
        let opts = cfg
            .fit
            .options(FitObjective::DataMl, derive_seed(seed, 10 + round as u64));
        fitted = fit_data_kernel(&start, &xs, &ys, &opts)?.best_model(&start);
        let base = log_ls(&fitted);
        lml = std::iter::once(log_marginal_likelihood(&fitted, &xs, &ys)?)
            .chain(cfg.offsets.iter().map(|o| {
                log_marginal_likelihood(&with_log_ls(&fitted, base + o), &xs, &ys)
            }).collect::<Result<Vec<_>>>()?)
            .collect();
        let best = (1..lml.len()).max_by(|&a, &b| lml[a].total_cmp(&lml[b])).expect("offsets");
        if lml[best] <= lml[0] {
            break;
        }
        start = with_log_ls(&fitted, base + cfg.offsets[best - 1]);
    }

    let base = log_ls(&fitted);
    let truth = cfg.template.clone();
    let mut configs = vec![fitted.clone(), truth.clone()];
    configs.extend(cfg.offsets.iter().map(|o| with_log_ls(&fitted, base + o)));
    let display_x = linspace(cfg.domain.0, cfg.domain.1, cfg.display_points);
    let mut curves = Vec::with_capacity(N_CANDIDATES);
    let mut all_lml = Vec::with_capacity(N_CANDIDATES);
    for (i, m) in configs.iter().enumerate() {
        let (cx, cy) = if i == 1 {
            (&full_x, &full_y)
        } else {
            (&xs, &ys)
        };
        let (mean, _) = posterior_predictive(m, cx, cy, &display_x, false)?;
        curves.push(mean.iter().copied().collect());
        all_lml.push(if i == 0 {
            lml[0]
        } else if i == 1 {
            log_marginal_likelihood(m, &xs, &ys)?
        } else {
            lml[i - 1]
        });
    }
    Ok(OccamTask {
        id: id.into(),
        dataset_x: xs,
        dataset_y: ys,
        display_x,
        candidate_curves: curves,
        candidate_configs: configs,
        log_ls_offsets: cfg.offsets.clone(),
        lml: all_lml,
        full_x,
        full_y,
    })
}

/// Builds `cfg.tasks` seeded tasks and reports how often label 1 tops the
/// marginal likelihood ranking, how often likelihood falls monotonically
/// along the negative offsets, and each label's average likelihood rank.
pub fn run_occam(cfg: &OccamConfig, seed: u64) -> Result<Report> {
    cfg.validate()?;
    if cfg.tasks == 0 {
        return Err(Error::validation("tasks", "must be >= 1"));
    }
    let tasks: Vec<OccamTask> = (0..cfg.tasks)
        .into_par_iter()
        .map(|t| build_occam_task(cfg, &format!("occam-{t}"), derive_seed(seed, t as u64)))
        .collect::<Result<_>>()?;

    let mut report = Report::new("occam");
    let mut cols = vec!["task".to_string()];
    cols.extend((1..=N_CANDIDATES).map(|l| format!("lml_{l}")));
    cols.extend(["ml_rank_1".into(), "monotone".into()]);
    let mut table = Table::new(cols);
    let mut rank_sums = vec![0.0; N_CANDIDATES];
    let (mut first, mut monotone) = (0usize, 0usize);
    for (t, task) in tasks.iter().enumerate() {
        let ranks = task.lml_ranks();
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += *r as f64;
        }
        let is_first = ranks[0] == 1;
        let is_mono = task.negative_offsets_monotone();
        first += is_first as usize;
        monotone += is_mono as usize;
        let mut row = vec![t as f64];
        row.extend(&task.lml);
        row.extend([is_first as u8 as f64, is_mono as u8 as f64]);
        table.push_nums(&row);
    }
    report.add("tasks", table, None);

    let mut avg = Table::new(["label", "mean_lml_rank"]);
    for (l, s) in rank_sums.iter().enumerate() {
        avg.push_nums(&[(l + 1) as f64, s / tasks.len() as f64]);
    }
    report.add("average_lml_rank", avg, None);

    let t0 = &tasks[0];
    let named: Vec<(String, Vec<f64>)> = t0
        .candidate_curves
        .iter()
        .enumerate()
        .map(|(i, c)| (format!("label_{}", i + 1), c.clone()))
        .collect();
    let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
    report.add(
        "candidate_curves",
        curves_table(&t0.display_x, &named),
        lines("candidate fits, first task", "x", &names),
    );
    let mut pts = Table::new(["x", "y"]);
    for (x, y) in t0.dataset_x.iter().zip(&t0.dataset_y) {
        pts.push_nums(&[*x, *y]);
    }
    report.add("task_points", pts, None);
    report.put("tasks", tasks.len());
    report.put("fraction_ml_rank_1", first as f64 / tasks.len() as f64);
    report.put("fraction_monotone", monotone as f64 / tasks.len() as f64);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelStats {
    pub label: u8,
    pub first_place_count: usize,
    pub first_place_share: f64,
    pub mean_rank: f64,
    /// Sample standard deviation (divisor n − 1).
    pub std_rank: f64,
    /// `std_rank / √n`.
    pub se_rank: f64,
    pub lml_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingSummary {
    pub task_id: String,
    pub n: usize,
    pub labels: Vec<LabelStats>,
    /// Between the labels' mean human rank and their likelihood rank.
    pub spearman: f64,
    /// Share of answered plausibility questions that said "likely".
    pub plausible_share: Option<f64>,
}

impl RankingSummary {
    pub fn to_report(&self) -> Report {
        let mut report = Report::new("occam_rankings");
        let mut t = Table::new([
            "label",
            "first_place_count",
            "first_place_share",
            "mean_rank",
            "std_rank",
            "se_rank",
            "lml_rank",
        ]);
        for s in &self.labels {
            t.push_nums(&[
                s.label as f64,
                s.first_place_count as f64,
                s.first_place_share,
                s.mean_rank,
                s.std_rank,
                s.se_rank,
                s.lml_rank as f64,
            ]);
        }
        report.add("ranking_summary", t, None);
        report.put("n", self.n);
        report.put("spearman", self.spearman);
        report.put("plausible_share", self.plausible_share);
        report
    }
}

/// Ranks with ties sharing their average position (1-based).
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for k in i..=j {
            ranks[order[k]] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; NaN when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let (ma, mb) = (mean(&ra), mean(&rb));
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    cov / (va * vb).sqrt()
}

/// Per-label vote and rank statistics over rankings of one task.
pub fn aggregate_rankings(rankings: &[RankingRecord], task: &OccamTask) -> Result<RankingSummary> {
    if rankings.is_empty() {
        return Err(Error::validation("rankings", "need at least one ranking"));
    }
    for r in rankings {
        r.validate()?;
        if r.task_id != task.id {
            return Err(Error::validation(
                "task_id",
                format!("ranking for {} mixed into task {}", r.task_id, task.id),
            ));
        }
    }
    let n = rankings.len();
    let lml_ranks = task.lml_ranks();
    let labels: Vec<LabelStats> = (1..=N_CANDIDATES as u8)
        .map(|label| {
            let ranks: Vec<f64> = rankings
                .iter()
                .map(|r| r.rank_of(label).expect("validated permutation") as f64)
                .collect();
            let first = rankings.iter().filter(|r| r.order[0] == label).count();
            let std = sample_std(&ranks);
            LabelStats {
                label,
                first_place_count: first,
                first_place_share: first as f64 / n as f64,
                mean_rank: mean(&ranks),
                std_rank: std,
                se_rank: std / (n as f64).sqrt(),
                lml_rank: lml_ranks.get(label as usize - 1).copied().unwrap_or(0),
            }
        })
        .collect();
    let human: Vec<f64> = labels.iter().map(|s| s.mean_rank).collect();
    let model: Vec<f64> = labels.iter().map(|s| s.lml_rank as f64).collect();
    let answered: Vec<&Plausibility> = rankings
        .iter()
        .filter_map(|r| r.plausibility_answer.as_ref())
        .collect();
    let plausible_share = (!answered.is_empty()).then(|| {
        answered.iter().filter(|a| ***a == Plausibility::Likely).count() as f64
            / answered.len() as f64
    });
    Ok(RankingSummary {
        task_id: task.id.clone(),
        n,
        labels,
        spearman: spearman(&human, &model),
        plausible_share,
    })
}
