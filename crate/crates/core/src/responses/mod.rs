//! Extrapolation responses: the records collected from participants (or
//! simulated responders) and the processing that turns them into draws.

mod cluster;
mod store;

pub use cluster::agglomerative_cluster;
pub use store::{
    append_record, load_rankings, load_records, load_responses, load_stimuli, save_rankings,
    save_records, save_responses, save_stimuli, write_responses_csv, RESPONSES_CSV_HEADER,
};

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gp::DrawSet;
use crate::kernels::KernelSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StimulusFamily {
    GpSample,
    Sawtooth,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorParams {
    GpSample {
        kernel: KernelSpec,
        noise_var: f64,
        seed: u64,
    },
    Sawtooth {
        period: f64,
        amplitude: f64,
    },
    Step {
        breakpoints: Vec<f64>,
        levels: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stimulus {
    pub id: String,
    pub x_train: Vec<f64>,
    pub y_train: Vec<f64>,
    /// Grid on which respondents answer.
    pub x_test: Vec<f64>,
    pub family: StimulusFamily,
    pub generator_params: GeneratorParams,
    /// Fixed vertical axis range shown to every participant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y_range: Option<(f64, f64)>,
}

fn strictly_increasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl Stimulus {
    pub fn validate(&self) -> Result<()> {
        if self.x_train.len() != self.y_train.len() {
            return Err(Error::validation("y_train", "length differs from x_train"));
        }
        if !strictly_increasing(&self.x_train) {
            return Err(Error::validation("x_train", "must be strictly increasing"));
        }
        if self.x_test.is_empty() || !strictly_increasing(&self.x_test) {
            return Err(Error::validation("x_test", "must be nonempty and strictly increasing"));
        }
        if self.x_test.iter().any(|x| self.x_train.contains(x)) {
            return Err(Error::validation("x_test", "overlaps x_train"));
        }
        let finite = self
            .x_train
            .iter()
            .chain(&self.y_train)
            .chain(&self.x_test)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::validation("stimulus", "non-finite value"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub participant_id: String,
    pub stimulus_id: String,
    /// One value per `x_test` point of the stimulus.
    pub y_star: Vec<f64>,
    pub response_time_s: f64,
    pub submitted_at: DateTime<Utc>,
}

impl ResponseRecord {
    /// Checks the record against the stimulus it answers.
    pub fn validate_for(&self, stimulus: &Stimulus) -> Result<()> {
        if self.stimulus_id != stimulus.id {
            return Err(Error::validation(
                "stimulus_id",
                format!("{} does not match {}", self.stimulus_id, stimulus.id),
            ));
        }
        if self.y_star.len() != stimulus.x_test.len() {
            return Err(Error::validation(
                "y_star",
                format!(
                    "participant {}: expected {} values, got {}",
                    self.participant_id,
                    stimulus.x_test.len(),
                    self.y_star.len()
                ),
            ));
        }
        if self.y_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("y_star", "non-finite value"));
        }
        if !(self.response_time_s > 0.0 && self.response_time_s.is_finite()) {
            return Err(Error::validation("response_time_s", "must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Plausibility {
    Likely,
    Unlikely,
}

/// Number of candidate fits in a ranking task.
pub const N_CANDIDATES: usize = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRecord {
    pub participant_id: String,
    pub task_id: String,
    /// Internal labels 1..=7, best fit first.
    pub order: Vec<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plausibility_answer: Option<Plausibility>,
}

/// True when `order` is a permutation of `1..=7`.
pub fn is_valid_order(order: &[u8]) -> bool {
    let mut seen = [false; N_CANDIDATES];
    order.len() == N_CANDIDATES
        && order.iter().all(|&l| {
            let i = l as usize;
            (1..=N_CANDIDATES).contains(&i) && !std::mem::replace(&mut seen[i - 1], true)
        })
}

impl RankingRecord {
    pub fn validate(&self) -> Result<()> {
        if !is_valid_order(&self.order) {
            return Err(Error::validation("order", "must be a permutation of 1..=7"));
        }
        Ok(())
    }

    /// 1-based rank of `label` in this ranking.
    pub fn rank_of(&self, label: u8) -> Option<usize> {
        self.order.iter().position(|&l| l == label).map(|p| p + 1)
    }
}

/// A stimulus's responses stacked as draws.
#[derive(Debug, Clone)]
pub struct AlignedDraws {
    pub draws: DrawSet,
    /// Participant per column.
    pub participants: Vec<String>,
    /// Duplicate submissions that were superseded.
    pub warnings: Vec<String>,
}

/// Stacks responses into a [`DrawSet`]; columns ordered by
/// `(participant_id, submitted_at)`, duplicate participants keep their
/// latest submission.
pub fn to_drawset(stimulus: &Stimulus, responses: &[ResponseRecord]) -> Result<AlignedDraws> {
    if responses.is_empty() {
        return Err(Error::validation("responses", "need at least one response"));
    }
    for r in responses {
        r.validate_for(stimulus)?;
    }
    let mut latest: BTreeMap<&str, &ResponseRecord> = BTreeMap::new();
    let mut warnings = Vec::new();
    for r in responses {
        match latest.get(r.participant_id.as_str()) {
            Some(prev) => {
                let keep_new = r.submitted_at >= prev.submitted_at;
                warnings.push(format!(
                    "participant {} answered {} more than once; keeping submission at {}",
                    r.participant_id,
                    stimulus.id,
                    if keep_new { r.submitted_at } else { prev.submitted_at }
                ));
                if keep_new {
                    latest.insert(&r.participant_id, r);
                }
            }
            None => {
                latest.insert(&r.participant_id, r);
            }
        }
    }
    let cols: Vec<DVector<f64>> = latest
        .values()
        .map(|r| DVector::from_column_slice(&r.y_star))
        .collect();
    let draws = DrawSet::new(
        stimulus.x_train.clone(),
        stimulus.y_train.clone(),
        stimulus.x_test.clone(),
        DMatrix::from_columns(&cols),
    )?;
    Ok(AlignedDraws {
        draws,
        participants: latest.keys().map(|s| s.to_string()).collect(),
        warnings,
    })
}

/// `Σ |y[i+1] − y[i]|`
pub fn total_variation(y_star: &[f64]) -> f64 {
    y_star.windows(2).map(|w| (w[1] - w[0]).abs()).sum()
}

/// `max − min`
pub fn value_range(y_star: &[f64]) -> f64 {
    let max = y_star.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y_star.iter().copied().fold(f64::INFINITY, f64::min);
    if y_star.is_empty() {
        0.0
    } else {
        max - min
    }
}

/// Which spread statistic the variation threshold applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariationMeasure {
    #[default]
    TotalVariation,
    Range,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterThresholds {
    pub rt_min_s: f64,
    pub rt_max_s: f64,
    pub tv_max: f64,
    #[serde(default)]
    pub measure: VariationMeasure,
}

impl Default for FilterThresholds {
    fn default() -> Self {
        Self {
            rt_min_s: 50.0,
            rt_max_s: 200.0,
            tv_max: 3.0,
            measure: VariationMeasure::TotalVariation,
        }
    }
}

impl FilterThresholds {
    pub fn passes(&self, r: &ResponseRecord) -> bool {
        let spread = match self.measure {
            VariationMeasure::TotalVariation => total_variation(&r.y_star),
            VariationMeasure::Range => value_range(&r.y_star),
        };
        (self.rt_min_s..=self.rt_max_s).contains(&r.response_time_s) && spread <= self.tv_max
    }
}

/// Splits responses into those inside the response-time window with
/// limited variation, and the rest. Input order is preserved in both lists.
pub fn filter_responses(
    responses: &[ResponseRecord],
    thresholds: &FilterThresholds,
) -> Result<(Vec<ResponseRecord>, Vec<ResponseRecord>)> {
    let t = thresholds;
    if !(t.rt_min_s > 0.0 && t.rt_max_s > 0.0 && t.tv_max > 0.0) {
        return Err(Error::InvalidArgument("thresholds must be positive".into()));
    }
    if t.rt_min_s >= t.rt_max_s {
        return Err(Error::InvalidArgument("rt_min_s must be < rt_max_s".into()));
    }
    Ok(responses.iter().cloned().partition(|r| t.passes(r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use proptest::prelude::*;

    pub(crate) fn stimulus(n_test: usize) -> Stimulus {
        Stimulus {
            id: "s1".into(),
            x_train: vec![0.0, 1.0, 2.0],
            y_train: vec![0.0, 0.5, 1.0],
            x_test: (0..n_test).map(|i| 3.0 + i as f64).collect(),
            family: StimulusFamily::Sawtooth,
            generator_params: GeneratorParams::Sawtooth {
                period: 2.0,
                amplitude: 1.0,
            },
            y_range: None,
        }
    }

    pub(crate) fn response(pid: &str, y: Vec<f64>, rt: f64, minute: u32) -> ResponseRecord {
        ResponseRecord {
            participant_id: pid.into(),
            stimulus_id: "s1".into(),
            y_star: y,
            response_time_s: rt,
            submitted_at: Utc.with_ymd_and_hms(2024, 1, 1, 0, minute, 0).unwrap(),
        }
    }

    #[test]
    fn single_response_gives_one_draw() {
        let s = stimulus(4);
        let a = to_drawset(&s, &[response("p", vec![1.0; 4], 60.0, 0)]).unwrap();
        assert_eq!(a.draws.n_draws(), 1);
    }

    #[test]
    fn twenty_participants_on_twenty_points() {
        let s = stimulus(20);
        let rs: Vec<_> = (0..20)
            .map(|i| response(&format!("p{i:02}"), vec![i as f64; 20], 60.0, 0))
            .collect();
        let a = to_drawset(&s, &rs).unwrap();
        assert_eq!(a.draws.y_test.shape(), (20, 20));
    }

    #[test]
    fn wrong_length_names_participant() {
        let s = stimulus(4);
        let err = to_drawset(&s, &[response("alice", vec![1.0; 3], 60.0, 0)]).unwrap_err();
        assert!(err.to_string().contains("alice"));
        assert!(err.to_string().contains("y_star"));
    }

    #[test]
    fn latest_duplicate_wins_and_columns_are_sorted() {
        let s = stimulus(2);
        let rs = vec![
            response("b", vec![2.0, 2.0], 60.0, 5),
            response("a", vec![1.0, 1.0], 60.0, 1),
            response("b", vec![3.0, 3.0], 60.0, 9),
            response("b", vec![9.0, 9.0], 60.0, 7),
        ];
        let a = to_drawset(&s, &rs).unwrap();
        assert_eq!(a.participants, vec!["a", "b"]);
        assert_eq!(a.draws.y_test[(0, 0)], 1.0);
        assert_eq!(a.draws.y_test[(0, 1)], 3.0);
        assert_eq!(a.warnings.len(), 2);
    }

    #[test]
    fn total_variation_examples() {
        assert_eq!(total_variation(&[0.0, 1.0, 0.0]), 2.0);
        assert_eq!(total_variation(&[4.0; 5]), 0.0);
        assert_eq!(total_variation(&[0.0, 1.0, 2.0, 3.0]), 3.0);
        assert_eq!(total_variation(&[7.0]), 0.0);
    }

    fn with_tv(tv: f64, rt: f64) -> ResponseRecord {
        response("p", vec![0.0, tv], rt, 0)
    }

    #[test]
    fn filter_examples() {
        let t = FilterThresholds::default();
        assert!(t.passes(&with_tv(2.0, 120.0)));
        assert!(!t.passes(&with_tv(1.0, 30.0)));
        assert!(!t.passes(&with_tv(5.0, 100.0)));
        // inclusive window
        assert!(t.passes(&with_tv(3.0, 50.0)));
        assert!(t.passes(&with_tv(3.0, 200.0)));
    }

    #[test]
    fn range_measure_differs_from_total_variation() {
        let r = response("p", vec![0.0, 2.0, 0.0, 2.0], 100.0, 0);
        let tv = FilterThresholds::default();
        let range = FilterThresholds {
            measure: VariationMeasure::Range,
            ..tv
        };
        assert!(!tv.passes(&r));
        assert!(range.passes(&r));
    }

    #[test]
    fn bad_thresholds_rejected() {
        let t = FilterThresholds {
            rt_min_s: 200.0,
            rt_max_s: 50.0,
            ..Default::default()
        };
        assert!(filter_responses(&[], &t).is_err());
    }

    #[test]
    fn order_validation() {
        assert!(is_valid_order(&[3, 1, 2, 7, 5, 4, 6]));
        assert!(!is_valid_order(&[3, 1, 2, 7, 5, 4, 4]));
        assert!(!is_valid_order(&[0, 1, 2, 3, 4, 5, 6]));
        assert!(!is_valid_order(&[1, 2, 3]));
    }

    proptest! {
        #[test]
        fn filter_partitions_input(
            items in prop::collection::vec((1.0..300.0f64, prop::collection::vec(-3.0..3.0f64, 1..6)), 0..30)
        ) {
            let rs: Vec<_> = items
                .into_iter()
                .map(|(rt, y)| response("p", y, rt, 0))
                .collect();
            let (pass, fail) = filter_responses(&rs, &FilterThresholds::default()).unwrap();
            prop_assert_eq!(pass.len() + fail.len(), rs.len());
            prop_assert!(pass.iter().all(|r| FilterThresholds::default().passes(r)));
            prop_assert!(fail.iter().all(|r| !FilterThresholds::default().passes(r)));
        }

        #[test]
        fn total_variation_shift_and_scale(
            y in prop::collection::vec(-10.0..10.0f64, 1..20),
            c in -5.0..5.0f64,
            a in -3.0..3.0f64,
        ) {
            let tv = total_variation(&y);
            let shifted: Vec<f64> = y.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = y.iter().map(|v| v * a).collect();
            prop_assert!((total_variation(&shifted) - tv).abs() < 1e-9);
            prop_assert!((total_variation(&scaled) - a.abs() * tv).abs() < 1e-9);
        }
    }
}
