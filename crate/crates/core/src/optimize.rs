//! Box-constrained limited-memory BFGS ascent.
//!
//! Maximizes a smooth objective given its gradient. Bounds are handled by
//! projection: coordinates pinned at a bound with the gradient pushing
//! outward are held fixed for the step. Every accepted step satisfies an
//! Armijo condition, so the objective sequence never decreases.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    /// Convergence threshold on the projected gradient ∞-norm.
    pub grad_tol: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        Self {
            max_iters: 500,
            grad_tol: 1e-6,
            memory: 10,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Projected gradient ∞-norm at `x`.
    pub grad_norm: f64,
    /// Objective after each accepted step, starting with the initial value.
    pub trace: Vec<f64>,
}

/// Objective callback: returns `(value, gradient)` or `None` where the
/// objective is undefined (e.g. a failed factorization).
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)>;
}

impl<F> Objective for F
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    fn eval(&mut self, x: &[f64]) -> Option<(f64, Vec<f64>)> {
        self(x)
    }
}

const ARMIJO_C1: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 40;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

fn finite_eval<O: Objective>(obj: &mut O, x: &[f64]) -> Option<(f64, Vec<f64>)> {
    obj.eval(x)
        .filter(|(v, g)| v.is_finite() && g.iter().all(|d| d.is_finite()))
}

/// Ascent direction of the objective restricted to free coordinates.
fn projected_gradient(x: &[f64], g: &[f64], bounds: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            let at_lower = xi <= bounds.lower[i] && gi < 0.0;
            let at_upper = xi >= bounds.upper[i] && gi > 0.0;
            if at_lower || at_upper {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Maximizes `obj` from `start`.
pub fn optimize<O: Objective>(
    mut obj: O,
    start: &[f64],
    bounds: Option<&Bounds>,
    opts: &OptimizeOptions,
) -> Result<OptimizeResult> {
    let n = start.len();
    let bounds = bounds.cloned().unwrap_or_else(|| Bounds::unbounded(n));
    if bounds.lower.len() != n || bounds.upper.len() != n {
        return Err(Error::ParamLength {
            expected: n,
            got: bounds.lower.len(),
        });
    }
    let mut x = start.to_vec();
    bounds.clamp(&mut x);
    let (mut f, mut g) = finite_eval(&mut obj, &x).ok_or(Error::NonFiniteStart)?;
    let mut trace = vec![f];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let mut iterations = 0;

    loop {
        let pg = projected_gradient(&x, &g, &bounds);
        let gnorm = inf_norm(&pg);
        if gnorm < opts.grad_tol || n == 0 {
            return Ok(OptimizeResult {
                x,
                value: f,
                iterations,
                converged: true,
                grad_norm: gnorm,
                trace,
            });
        }
        if iterations >= opts.max_iters {
            return Ok(OptimizeResult {
                x,
                value: f,
                iterations,
                converged: false,
                grad_norm: gnorm,
                trace,
            });
        }
        iterations += 1;

        let mut accepted = None;
        for attempt in 0..2 {
            if attempt == 1 {
                if pairs.is_empty() {
                    break;
                }
                pairs.clear();
            }
            let mut dir = direction(&pg, &pairs);
            if dot(&dir, &pg) <= 0.0 {
                pairs.clear();
                dir = pg.clone();
            }
            // without curvature information, cap the first trial step
            let mut t = if pairs.is_empty() {
                (1.0 / inf_norm(&dir)).min(1.0)
            } else {
                1.0
            };
            for _ in 0..MAX_BACKTRACKS {
                let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + t * di).collect();
                bounds.clamp(&mut trial);
                let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
                if inf_norm(&step) == 0.0 {
                    break;
                }
                if let Some((ft, gt)) = finite_eval(&mut obj, &trial) {
                    if ft >= f + ARMIJO_C1 * dot(&g, &step) && ft >= f {
                        accepted = Some((trial, ft, gt, step));
                        break;
                    }
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }

        let Some((x_new, f_new, g_new, step)) = accepted else {
            // step collapse
            return Ok(OptimizeResult {
                x,
                value: f,
                iterations,
                converged: false,
                grad_norm: gnorm,
                trace,
            });
        };

        // curvature pair for the minimization view: s = Δx, y = −Δg
        let y: Vec<f64> = g.iter().zip(&g_new).map(|(a, b)| a - b).collect();
        let sy = dot(&step, &y);
        if sy > 1e-12 * (dot(&step, &step) * dot(&y, &y)).sqrt() {
            if pairs.len() == opts.memory.max(1) {
                pairs.pop_front();
            }
            pairs.push_back((step, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
}

/// Two-loop recursion: approximate `H·pg` where `H` is the inverse Hessian
/// of the negated objective.
fn direction(pg: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = pg.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in &mut q {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    // keep pinned coordinates fixed
    for (qi, p) in q.iter_mut().zip(pg) {
        if *p == 0.0 {
            *qi = 0.0;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(target: Vec<f64>) -> impl FnMut(&[f64]) -> Option<(f64, Vec<f64>)> {
        move |v: &[f64]| {
            let d: Vec<f64> = v.iter().zip(&target).map(|(a, b)| a - b).collect();
            Some((-dot(&d, &d), d.iter().map(|x| -2.0 * x).collect()))
        }
    }

    #[test]
    fn concave_quadratic_converges() {
        let target = vec![1.5, -2.0, 0.25, 7.0];
        for start in [vec![0.0; 4], vec![10.0, 10.0, -10.0, 3.0]] {
            let r = optimize(quadratic(target.clone()), &start, None, &OptimizeOptions::default())
                .unwrap();
            assert!(r.converged);
            for (a, b) in r.x.iter().zip(&target) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn trace_is_monotone() {
        let r = optimize(rosenbrock, &[0.0, 0.0], None, &OptimizeOptions::default()).unwrap();
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }

    fn rosenbrock(v: &[f64]) -> Option<(f64, Vec<f64>)> {
        let (a, b) = (v[0], v[1]);
        let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
        let ga = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
        let gb = 200.0 * (b - a * a);
        Some((-f, vec![-ga, -gb]))
    }

    #[test]
    fn negated_rosenbrock() {
        let opts = OptimizeOptions {
            grad_tol: 1e-4,
            ..Default::default()
        };
        let r = optimize(rosenbrock, &[0.0, 0.0], None, &opts).unwrap();
        assert!(r.converged && r.iterations <= 500, "{r:?}");
        assert!(r.grad_norm < 1e-4);
        assert!((r.x[0] - 1.0).abs() < 1e-3 && (r.x[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn respects_bounds() {
        let bounds = Bounds {
            lower: vec![2.0, f64::NEG_INFINITY],
            upper: vec![f64::INFINITY, 0.5],
        };
        let r = optimize(
            quadratic(vec![0.0, 1.0]),
            &[5.0, -3.0],
            Some(&bounds),
            &OptimizeOptions::default(),
        )
        .unwrap();
        assert!(r.converged);
        assert!((r.x[0] - 2.0).abs() < 1e-12 && (r.x[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_finite_start_is_an_error() {
        let bad = |_: &[f64]| Some((f64::NAN, vec![0.0]));
        assert!(matches!(
            optimize(bad, &[0.0], None, &OptimizeOptions::default()),
            Err(Error::NonFiniteStart)
        ));
    }

    #[test]
    fn undefined_region_is_avoided() {
        // objective only defined for x < 1; optimum of the unconstrained
        // quadratic lies outside
        let f = |v: &[f64]| {
            if v[0] >= 1.0 {
                None
            } else {
                Some((-(v[0] - 3.0).powi(2), vec![-2.0 * (v[0] - 3.0)]))
            }
        };
        let r = optimize(f, &[0.0], None, &OptimizeOptions::default()).unwrap();
        assert!(r.x[0] < 1.0 && r.x[0] > 0.9);
        assert!(r.trace.windows(2).all(|w| w[1] >= w[0]));
    }
}
