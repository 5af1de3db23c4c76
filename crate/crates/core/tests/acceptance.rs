//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a
//! subset, e.g. `cargo test --test acceptance -- 1 2 9`.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use humankernel::experiments::occam::{aggregate_rankings, build_occam_task};
use humankernel::experiments::unconventional::UnconventionalStimulus;
use humankernel::experiments::{
    emit_report, ExperimentConfig, ExperimentParams, FitBudget, OccamConfig, ProgressiveConfig,
    ReconstructConfig, UnconventionalConfig,
};
use humankernel::experiments::{run_bias_study, run_occam, run_reconstruction, run_unconventional, BiasConfig};
use humankernel::gp::{lml_and_grad, mvn_log_density, predictive_conditional_lml_and_grad};
use humankernel::linalg::frobenius_rel_error;
use humankernel::responses::RankingRecord;
use humankernel::{
    empirical_moments, posterior_predictive, predictive_conditional_lml, sample_empirical, DrawSet,
    EmpiricalGaussian, GpModel, KernelSpec, SmComponent,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_leaf(rng: &mut ChaCha8Rng) -> KernelSpec {
    match rng.random_range(0..4) {
        0 => KernelSpec::rbf(rng.random_range(0.3..3.0), rng.random_range(0.5..2.0)),
        1 => KernelSpec::rq(
            rng.random_range(0.3..3.0),
            rng.random_range(0.5..2.0),
            rng.random_range(0.5..3.0),
        ),
        2 => KernelSpec::linear(rng.random_range(0.1..1.0), rng.random_range(-1.0..1.0)),
        _ => {
            let q = rng.random_range(1..=3);
            KernelSpec::spectral_mixture(
                (0..q)
                    .map(|_| {
                        SmComponent::new(
                            rng.random_range(0.2..1.0),
                            rng.random_range(0.05..1.0),
                            rng.random_range(0.001..0.05),
                        )
                    })
                    .collect(),
            )
        }
    }
}

fn random_spec(rng: &mut ChaCha8Rng) -> KernelSpec {
    if rng.random_bool(0.3) {
        KernelSpec::product(random_leaf(rng), random_leaf(rng))
    } else {
        random_leaf(rng)
    }
}

fn sorted_uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Richardson-extrapolated central difference of `f` along each coordinate.
fn finite_diff(f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
    let h = 1e-4;
    let central = |i: usize, h: f64| {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    };
    (0..x.len())
        .map(|i| (4.0 * central(i, h / 2.0) - central(i, h)) / 3.0)
        .collect()
}

/// Largest relative error among components outside the absolute floor,
/// if it exceeds the tolerance.
fn grad_mismatch(analytic: &[f64], numeric: &[f64]) -> Option<f64> {
    analytic
        .iter()
        .zip(numeric)
        .filter(|(a, n)| (*a - *n).abs() > 1e-8)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()))
        .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |w| w.max(r))))
        .filter(|w| *w > 1e-4)
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut checked = 0;
    for case in 0..50 {
        let spec = random_spec(&mut rng);
        let model = GpModel::new(spec.clone(), rng.random_range(0.05..0.5));
        let n = rng.random_range(3..=6);
        let m = rng.random_range(2..=4);
        let xs = sorted_uniform(&mut rng, n, 0.0, 5.0);
        let y = normals(&mut rng, n);
        let x_test = sorted_uniform(&mut rng, m, 5.0, 7.0);
        let w = rng.random_range(1..=3);
        let draws = DrawSet::new(
            xs.clone(),
            y.clone(),
            x_test,
            DMatrix::from_column_slice(m, w, &normals(&mut rng, m * w)),
        )
        .map_err(|e| e.to_string())?;
        let theta = model.free_params();

        let (_, g) = lml_and_grad(&model, &xs, &y).map_err(|e| e.to_string())?;
        let f = |v: &[f64]| {
            humankernel::log_marginal_likelihood(&model.with_free_params(v).unwrap(), &xs, &y).unwrap()
        };
        if let Some(rel) = grad_mismatch(&g, &finite_diff(&f, &theta)) {
            return Err(format!("case {case}: data LML gradient off by rel {rel:.2e} for {spec:?}"));
        }
        let (_, g) = predictive_conditional_lml_and_grad(&model, &draws).map_err(|e| e.to_string())?;
        let f = |v: &[f64]| predictive_conditional_lml(&model.with_free_params(v).unwrap(), &draws).unwrap();
        if let Some(rel) = grad_mismatch(&g, &finite_diff(&f, &theta)) {
            return Err(format!("case {case}: conditional gradient off by rel {rel:.2e} for {spec:?}"));
        }
        checked += 1;
    }
    Ok(format!("{checked} specs, both objectives within rel 1e-4 / abs 1e-8"))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let model = GpModel::new(random_spec(&mut rng), rng.random_range(0.05..0.5));
        let n = rng.random_range(2..=8);
        let m = rng.random_range(1..=5);
        let xs = sorted_uniform(&mut rng, n, 0.0, 5.0);
        let y = normals(&mut rng, n);
        let x_test = sorted_uniform(&mut rng, m, 5.0, 8.0);
        let y_star = normals(&mut rng, m);
        let (mean, cov) = posterior_predictive(&model, &xs, &y, &x_test, true).map_err(|e| e.to_string())?;
        let direct = mvn_log_density(&mean, &cov, &DMatrix::from_column_slice(m, 1, &y_star))
            .map_err(|e| e.to_string())?;
        let draws = DrawSet::new(xs, y, x_test, DMatrix::from_column_slice(m, 1, &y_star))
            .map_err(|e| e.to_string())?;
        let via_joint = predictive_conditional_lml(&model, &draws).map_err(|e| e.to_string())?;
        worst = worst.max((direct - via_joint).abs());
    }
    ensure(worst < 1e-8, format!("max |difference| {worst:.2e} over 100 cases"))
}

fn criterion_3() -> Outcome {
    let r = run_reconstruction(&ReconstructConfig::default(), 0).map_err(|e| e.to_string())?;
    let e = |w: u32| r.get_f64(&format!("median_error_W{w}")).unwrap_or(f64::NAN);
    let (e1, e10, e20) = (e(1), e(10), e(20));
    ensure(
        e20 < e10 && e10 < e1 && e20 < 0.25,
        format!("median errors W1 {e1:.3}, W10 {e10:.3}, W20 {e20:.3}"),
    )
}

fn criterion_4() -> Outcome {
    let d = 5;
    let cov = DMatrix::from_fn(d, d, |i, j| {
        let s = 1.0 + 0.5 * i as f64;
        let t = 1.0 + 0.5 * j as f64;
        s * t * 0.6f64.powi((i as i32 - j as i32).abs())
    });
    let truth = EmpiricalGaussian {
        mean: DVector::from_fn(d, |i, _| i as f64 - 2.0),
        cov: cov.clone(),
        n_draws: 0,
        psd_repaired: true,
    };
    let reps = 20;
    let mean_error = |m: usize| -> Result<f64, String> {
        let mut total = 0.0;
        for r in 0..reps {
            let y = sample_empirical(&truth, m, 1000 * m as u64 + r).map_err(|e| e.to_string())?;
            total += frobenius_rel_error(&empirical_moments(&y).cov, &cov);
        }
        Ok(total / reps as f64)
    };
    let (e100, e1000, e10000) = (mean_error(100)?, mean_error(1000)?, mean_error(10_000)?);
    let ratio = e100 / e10000;
    ensure(
        e1000 < 0.15 && (5.0..=20.0).contains(&ratio),
        format!("mean over {reps} datasets: error(1000) {e1000:.4}, error(100)/error(10000) {ratio:.2}"),
    )
}

fn criterion_5() -> Outcome {
    let r = run_bias_study(&BiasConfig::default(), 0).map_err(|e| e.to_string())?;
    let s = &r.summary["summaries"];
    let f = |i: usize, k: &str| s[i][k].as_f64().unwrap_or(f64::NAN);
    let (m20, p20, m500) = (f(0, "mean_bias"), f(0, "p_value"), f(1, "mean_bias"));
    ensure(
        s[0]["n_points"] == 20 && s[1]["n_points"] == 500 && m20 > 0.0 && p20 < 0.01 && m500.abs() < m20.abs(),
        format!("N=20 mean {m20:.4} (p {p20:.2e}), N=500 mean {m500:.4}"),
    )
}

fn criterion_6() -> Outcome {
    let cfg = OccamConfig::default();
    if cfg.tasks != 50 {
        return Err(format!("default task count is {}", cfg.tasks));
    }
    let r = run_occam(&cfg, 0).map_err(|e| e.to_string())?;
    let rank1 = r.get_f64("fraction_ml_rank_1").unwrap_or(f64::NAN);
    let mono = r.get_f64("fraction_monotone").unwrap_or(f64::NAN);
    ensure(
        rank1 == 1.0 && mono >= 0.9,
        format!("ML fit rank 1 in {:.0}%, monotone in {:.0}% of 50 tasks", 100.0 * rank1, 100.0 * mono),
    )
}

fn criterion_7() -> Outcome {
    let cfg = UnconventionalConfig::default();
    let r = run_unconventional(&cfg, 0).map_err(|e| e.to_string())?;
    let main = r.summary["main_group"].as_u64().unwrap_or(u64::MAX) as usize;
    let size = r.summary["groups"][main]["size"].as_u64().unwrap_or(0);
    let cov_err = r.get_f64("main_cov_rel_error").unwrap_or(f64::NAN);
    let tv = r.get_f64("main_tv_rel_diff").unwrap_or(f64::NAN);
    ensure(
        size == cfg.pool.primary as u64 && size == 40 && cov_err < 0.4 && tv < 0.25,
        format!("cluster of {size}: covariance rel error {cov_err:.3}, mean TV rel diff {tv:.3}"),
    )
}

fn csv_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

fn criterion_8() -> Outcome {
    let quick = FitBudget {
        restarts: 2,
        max_iters: 60,
        grad_tol: 1e-6,
    };
    let mut progressive = ProgressiveConfig {
        fit: quick,
        responder_fit: quick,
        learner_components: 2,
        ..Default::default()
    };
    for s in &mut progressive.sets {
        s.responders = 3;
    }
    let configs = vec![
        ExperimentParams::Reconstruct(ReconstructConfig {
            trials: 2,
            learner_components: 2,
            draw_counts: vec![1, 3],
            fit: quick,
            ..Default::default()
        }),
        ExperimentParams::Progressive(progressive),
        ExperimentParams::Unconventional(UnconventionalConfig::default()),
        ExperimentParams::Unconventional(UnconventionalConfig {
            stimulus: UnconventionalStimulus::Step,
            ..Default::default()
        }),
        ExperimentParams::Occam(OccamConfig::default()),
        ExperimentParams::Bias(BiasConfig {
            replicates: 8,
            sweep: vec![40],
            sweep_replicates: 3,
            ..Default::default()
        }),
    ];
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut files = 0;
    for (i, params) in configs.into_iter().enumerate() {
        let name = params.name();
        let mut outputs = Vec::new();
        for run in 0..2 {
            let dir = tmp.path().join(format!("{i}_{run}"));
            let cfg = ExperimentConfig {
                seed: 17,
                output_dir: dir.clone(),
                params: params.clone(),
            };
            let report = cfg.run().map_err(|e| format!("{name}: {e}"))?;
            emit_report(&report, &dir).map_err(|e| format!("{name}: {e}"))?;
            outputs.push(csv_files(&dir));
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            return Err(format!("{name}: CSV outputs differ between runs"));
        }
        files += outputs[0].len();
    }
    Ok(format!("6 configurations, {files} CSV files byte-identical across re-runs"))
}

fn criterion_9() -> Outcome {
    let task = build_occam_task(&OccamConfig::default(), "fixture", 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let records: Vec<RankingRecord> = (0..200)
        .map(|i| {
            let mut rest: Vec<u8> = (2..=7).collect();
            for k in (1..rest.len()).rev() {
                rest.swap(k, rng.random_range(0..=k));
            }
            let order = if i < 74 {
                std::iter::once(1).chain(rest).collect()
            } else {
                let pos = rng.random_range(1..7);
                let mut o = rest;
                o.insert(pos, 1);
                o
            };
            RankingRecord {
                participant_id: format!("p{i:03}"),
                task_id: "fixture".into(),
                order,
                plausibility_answer: None,
            }
        })
        .collect();
    let s = aggregate_rankings(&records, &task).map_err(|e| e.to_string())?;
    let l1 = s.labels.iter().find(|l| l.label == 1).ok_or("label 1 missing")?;
    for l in &s.labels {
        let ranks: Vec<f64> = records.iter().map(|r| r.rank_of(l.label).unwrap() as f64).collect();
        let n = ranks.len() as f64;
        let mean = ranks.iter().sum::<f64>() / n;
        let sd = (ranks.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let expected = sd / n.sqrt();
        if (l.se_rank - expected).abs() > 1e-12 * expected.max(1.0) || l.se_rank != l.std_rank / 200f64.sqrt() {
            return Err(format!("label {}: se {} vs stdev/sqrt(200) {}", l.label, l.se_rank, expected));
        }
    }
    ensure(
        s.n == 200 && l1.first_place_count == 74 && l1.first_place_share == 0.37,
        format!("label 1 first-place share {} ({} of {}), SE = stdev/sqrt(200) for all labels", l1.first_place_share, l1.first_place_count, s.n),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_1),
        (2, "conditional identity", criterion_2),
        (3, "kernel reconstruction", criterion_3),
        (4, "empirical estimator", criterion_4),
        (5, "under-fitting bias", criterion_5),
        (6, "occam harness", criterion_6),
        (7, "unconventional kernels", criterion_7),
        (8, "determinism", criterion_8),
        (9, "fixture statistics", criterion_9),
    ];
    let mut failed = 0;
    for (id, name, check) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {id} {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {id} {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
