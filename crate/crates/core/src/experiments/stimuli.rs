//! Deterministic non-GP stimuli.

use serde::{Deserialize, Serialize};

use super::linspace;
use crate::error::{Error, Result};
use crate::responses::{GeneratorParams, Stimulus, StimulusFamily};

/// Training inputs are evenly spaced on `[domain.0, train_end]`; the
/// `n_test` test inputs are evenly spaced on `(train_end, domain.1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulusGrid {
    pub domain: (f64, f64),
    pub train_end: f64,
    pub n_train: usize,
    pub n_test: usize,
}

impl Default for StimulusGrid {
    fn default() -> Self {
        Self {
            domain: (0.0, 10.0),
            train_end: 5.0,
            n_train: 40,
            n_test: 30,
        }
    }
}

impl StimulusGrid {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.domain;
        if !(lo < self.train_end && self.train_end < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::validation(
                "domain",
                "need domain.0 < train_end < domain.1",
            ));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(Error::validation("n_test", "grids must be nonempty"));
        }
        Ok(())
    }

    pub fn x_train(&self) -> Vec<f64> {
        linspace(self.domain.0, self.train_end, self.n_train)
    }

    pub fn x_test(&self) -> Vec<f64> {
        let step = (self.domain.1 - self.train_end) / self.n_test as f64;
        (1..=self.n_test)
            .map(|i| self.train_end + step * i as f64)
            .collect()
    }
}

pub fn sawtooth(x: f64, period: f64, amplitude: f64) -> f64 {
    let u = x / period;
    amplitude * (u - u.floor())
}

/// Right-continuous: `levels[i]` holds on `[breakpoints[i-1], breakpoints[i])`.
pub fn step(x: f64, breakpoints: &[f64], levels: &[f64]) -> f64 {
    levels[breakpoints.partition_point(|b| *b <= x)]
}

fn y_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.5 * (hi - lo).max(1e-3);
    (lo - pad, hi + pad)
}

/// `f(x) = amplitude · frac(x / period)`.
pub fn make_sawtooth(id: &str, period: f64, amplitude: f64, grid: &StimulusGrid) -> Result<Stimulus> {
    grid.validate()?;
    if !(period > 0.0 && period.is_finite()) {
        return Err(Error::validation("period", "must be > 0"));
    }
    if !amplitude.is_finite() || amplitude == 0.0 {
        return Err(Error::validation("amplitude", "must be finite and nonzero"));
    }
    let x_train = grid.x_train();
    let y_train: Vec<f64> = x_train.iter().map(|x| sawtooth(*x, period, amplitude)).collect();
    let range = y_range(&[0.0, amplitude]);
    let s = Stimulus {
        id: id.into(),
        x_train,
        y_train,
        x_test: grid.x_test(),
        family: StimulusFamily::Sawtooth,
        generator_params: GeneratorParams::Sawtooth { period, amplitude },
        y_range: Some(range),
    };
    s.validate()?;
    Ok(s)
}

/// Piecewise-constant function with `levels.len() == breakpoints.len() + 1`.
pub fn make_step(
    id: &str,
    breakpoints: &[f64],
    levels: &[f64],
    grid: &StimulusGrid,
) -> Result<Stimulus> {
    grid.validate()?;
    if levels.len() != breakpoints.len() + 1 {
        return Err(Error::validation(
            "levels",
            "need exactly one more level than breakpoints",
        ));
    }
    if levels.iter().any(|l| !l.is_finite()) {
        return Err(Error::validation("levels", "must be finite"));
    }
    let (lo, hi) = grid.domain;
    if breakpoints.windows(2).any(|w| w[0] >= w[1])
        || breakpoints.iter().any(|b| !(*b > lo && *b < hi))
    {
        return Err(Error::validation(
            "breakpoints",
            "must be strictly increasing inside the domain",
        ));
    }
    let x_train = grid.x_train();
    let y_train: Vec<f64> = x_train.iter().map(|x| step(*x, breakpoints, levels)).collect();
    let s = Stimulus {
        id: id.into(),
        x_train,
        y_train,
        x_test: grid.x_test(),
        family: StimulusFamily::Step,
        generator_params: GeneratorParams::Step {
            breakpoints: breakpoints.to_vec(),
            levels: levels.to_vec(),
        },
        y_range: Some(y_range(levels)),
    };
    s.validate()?;
    Ok(s)
}
