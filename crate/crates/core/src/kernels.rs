//! Covariance functions over one-dimensional inputs.
//!
//! Kernels form a small expression tree ([`KernelSpec`]). Every positive
//! hyperparameter is stored as a natural logarithm so that optimizers can
//! move freely over the reals. The only unconstrained parameter is the
//! linear kernel's offset.
//!
//! Parameters flatten depth-first in field-declaration order:
//!
//! | node              | parameters                                   |
//! |-------------------|----------------------------------------------|
//! | `Rbf`             | `log_lengthscale`, `log_signal_var`          |
//! | `Rq`              | `log_lengthscale`, `log_signal_var`, `log_alpha` |
//! | `Linear`          | `log_slope_var`, `offset_c`                  |
//! | `SpectralMixture` | per component `log_weight`, `log_frequency`, `log_freq_var` |
//! | `Product`         | all of `left`, then all of `right`           |

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One Gaussian bump of a spectral mixture, in log space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmComponent {
    pub log_weight: f64,
    /// Log of the centre frequency, in cycles per input unit.
    pub log_frequency: f64,
    /// Log of the spectral variance around the centre frequency.
    pub log_freq_var: f64,
}

impl SmComponent {
    pub fn new(weight: f64, frequency: f64, freq_var: f64) -> Self {
        Self {
            log_weight: weight.ln(),
            log_frequency: frequency.ln(),
            log_freq_var: freq_var.ln(),
        }
    }

    pub fn weight(&self) -> f64 {
        self.log_weight.exp()
    }

    pub fn frequency(&self) -> f64 {
        self.log_frequency.exp()
    }

    pub fn freq_var(&self) -> f64 {
        self.log_freq_var.exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    /// `σ² exp(-r² / 2ℓ²)`
    Rbf {
        log_lengthscale: f64,
        log_signal_var: f64,
    },
    /// `σ² (1 + r² / 2αℓ²)^-α`
    Rq {
        log_lengthscale: f64,
        log_signal_var: f64,
        log_alpha: f64,
    },
    /// `σᵥ² (x - c)(x' - c)`
    Linear { log_slope_var: f64, offset_c: f64 },
    /// `Σ w exp(-2π²τ²v) cos(2πτμ)`
    SpectralMixture { components: Vec<SmComponent> },
    Product {
        left: Box<KernelSpec>,
        right: Box<KernelSpec>,
    },
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64, signal_var: f64) -> Self {
        KernelSpec::Rbf {
            log_lengthscale: lengthscale.ln(),
            log_signal_var: signal_var.ln(),
        }
    }

    pub fn rq(lengthscale: f64, signal_var: f64, alpha: f64) -> Self {
        KernelSpec::Rq {
            log_lengthscale: lengthscale.ln(),
            log_signal_var: signal_var.ln(),
            log_alpha: alpha.ln(),
        }
    }

    pub fn linear(slope_var: f64, offset_c: f64) -> Self {
        KernelSpec::Linear {
            log_slope_var: slope_var.ln(),
            offset_c,
        }
    }

    pub fn spectral_mixture(components: Vec<SmComponent>) -> Self {
        KernelSpec::SpectralMixture { components }
    }

    pub fn product(left: KernelSpec, right: KernelSpec) -> Self {
        KernelSpec::Product {
            left: Box::new(left),
            right: Box::new(right),
        }
    }

    /// Checks the structural invariants: finite parameters and at least one
    /// spectral mixture component.
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::SpectralMixture { components } = self {
            if components.is_empty() {
                return Err(Error::InvalidKernel(
                    "spectral mixture needs at least one component".into(),
                ));
            }
        }
        if let KernelSpec::Product { left, right } = self {
            left.validate()?;
            right.validate()?;
        }
        if self.params().iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidKernel("non-finite hyperparameter".into()));
        }
        Ok(())
    }

    /// True when the tree contains no `Linear` node.
    pub fn is_stationary(&self) -> bool {
        match self {
            KernelSpec::Linear { .. } => false,
            KernelSpec::Product { left, right } => left.is_stationary() && right.is_stationary(),
            _ => true,
        }
    }

    pub fn eval(&self, x: f64, x2: f64) -> f64 {
        match self {
            KernelSpec::Rbf {
                log_lengthscale,
                log_signal_var,
            } => {
                let r = x - x2;
                let ls2 = (2.0 * log_lengthscale).exp();
                log_signal_var.exp() * (-0.5 * r * r / ls2).exp()
            }
            KernelSpec::Rq {
                log_lengthscale,
                log_signal_var,
                log_alpha,
            } => {
                let r = x - x2;
                let alpha = log_alpha.exp();
                let ls2 = (2.0 * log_lengthscale).exp();
                let u = 1.0 + r * r / (2.0 * alpha * ls2);
                log_signal_var.exp() * (-alpha * u.ln()).exp()
            }
            KernelSpec::Linear {
                log_slope_var,
                offset_c,
            } => {
                // fixed operand order keeps the product exactly symmetric
                let (a, b) = if x <= x2 { (x, x2) } else { (x2, x) };
                log_slope_var.exp() * ((a - offset_c) * (b - offset_c))
            }
            KernelSpec::SpectralMixture { components } => {
                let tau = x - x2;
                components
                    .iter()
                    .map(|c| {
                        let envelope = (-2.0 * PI * PI * tau * tau * c.freq_var()).exp();
                        c.weight() * envelope * (2.0 * PI * tau * c.frequency()).cos()
                    })
                    .sum()
            }
            KernelSpec::Product { left, right } => left.eval(x, x2) * right.eval(x, x2),
        }
    }

    /// Gradient of `eval(x, x2)` with respect to every flattened parameter,
    /// appended to `out` in flattening order.
    fn eval_grad_into(&self, x: f64, x2: f64, out: &mut Vec<f64>) {
        match self {
            KernelSpec::Rbf {
                log_lengthscale, ..
            } => {
                let k = self.eval(x, x2);
                let r = x - x2;
                let ls2 = (2.0 * log_lengthscale).exp();
                out.push(k * r * r / ls2);
                out.push(k);
            }
            KernelSpec::Rq {
                log_lengthscale,
                log_alpha,
                ..
            } => {
                let k = self.eval(x, x2);
                let r = x - x2;
                let alpha = log_alpha.exp();
                let ls2 = (2.0 * log_lengthscale).exp();
                let u = 1.0 + r * r / (2.0 * alpha * ls2);
                out.push(k * r * r / (ls2 * u));
                out.push(k);
                out.push(k * alpha * ((u - 1.0) / u - u.ln()));
            }
            KernelSpec::Linear {
                log_slope_var,
                offset_c,
            } => {
                let s = log_slope_var.exp();
                let (a, b) = if x <= x2 { (x, x2) } else { (x2, x) };
                out.push(s * ((a - offset_c) * (b - offset_c)));
                out.push(-s * (x + x2 - 2.0 * offset_c));
            }
            KernelSpec::SpectralMixture { components } => {
                let tau = x - x2;
                for c in components {
                    let (w, mu, v) = (c.weight(), c.frequency(), c.freq_var());
                    let envelope = (-2.0 * PI * PI * tau * tau * v).exp();
                    let phase = 2.0 * PI * tau * mu;
                    let term = w * envelope * phase.cos();
                    out.push(term);
                    out.push(-w * envelope * phase.sin() * phase);
                    out.push(term * (-2.0 * PI * PI * tau * tau * v));
                }
            }
            KernelSpec::Product { left, right } => {
                let kl = left.eval(x, x2);
                let kr = right.eval(x, x2);
                let start = out.len();
                left.eval_grad_into(x, x2, out);
                for g in &mut out[start..] {
                    *g *= kr;
                }
                let mid = out.len();
                right.eval_grad_into(x, x2, out);
                for g in &mut out[mid..] {
                    *g *= kl;
                }
            }
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            KernelSpec::Rbf { .. } | KernelSpec::Linear { .. } => 2,
            KernelSpec::Rq { .. } => 3,
            KernelSpec::SpectralMixture { components } => 3 * components.len(),
            KernelSpec::Product { left, right } => left.n_params() + right.n_params(),
        }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_params(&mut out);
        out
    }

    fn push_params(&self, out: &mut Vec<f64>) {
        match self {
            KernelSpec::Rbf {
                log_lengthscale,
                log_signal_var,
            } => out.extend([*log_lengthscale, *log_signal_var]),
            KernelSpec::Rq {
                log_lengthscale,
                log_signal_var,
                log_alpha,
            } => out.extend([*log_lengthscale, *log_signal_var, *log_alpha]),
            KernelSpec::Linear {
                log_slope_var,
                offset_c,
            } => out.extend([*log_slope_var, *offset_c]),
            KernelSpec::SpectralMixture { components } => {
                for c in components {
                    out.extend([c.log_weight, c.log_frequency, c.log_freq_var]);
                }
            }
            KernelSpec::Product { left, right } => {
                left.push_params(out);
                right.push_params(out);
            }
        }
    }

    /// Rebuilds a spec with the structure of `self` and values from `v`.
    pub fn with_params(&self, v: &[f64]) -> Result<KernelSpec> {
        if v.len() != self.n_params() {
            return Err(Error::ParamLength {
                expected: self.n_params(),
                got: v.len(),
            });
        }
        let mut it = v.iter().copied();
        Ok(self.rebuild(&mut it))
    }

    fn rebuild(&self, it: &mut impl Iterator<Item = f64>) -> KernelSpec {
        let mut next = || it.next().expect("length checked");
        match self {
            KernelSpec::Rbf { .. } => KernelSpec::Rbf {
                log_lengthscale: next(),
                log_signal_var: next(),
            },
            KernelSpec::Rq { .. } => KernelSpec::Rq {
                log_lengthscale: next(),
                log_signal_var: next(),
                log_alpha: next(),
            },
            KernelSpec::Linear { .. } => KernelSpec::Linear {
                log_slope_var: next(),
                offset_c: next(),
            },
            KernelSpec::SpectralMixture { components } => KernelSpec::SpectralMixture {
                components: components
                    .iter()
                    .map(|_| SmComponent {
                        log_weight: next(),
                        log_frequency: next(),
                        log_freq_var: next(),
                    })
                    .collect(),
            },
            KernelSpec::Product { left, right } => {
                let l = left.rebuild(it);
                let r = right.rebuild(it);
                KernelSpec::product(l, r)
            }
        }
    }

    /// Marks which flattened parameters live in log space. Only the linear
    /// offset does not.
    pub fn log_space_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.n_params());
        self.push_mask(&mut out);
        out
    }

    fn push_mask(&self, out: &mut Vec<bool>) {
        match self {
            KernelSpec::Linear { .. } => out.extend([true, false]),
            KernelSpec::Product { left, right } => {
                left.push_mask(out);
                right.push_mask(out);
            }
            other => out.extend(std::iter::repeat_n(true, other.n_params())),
        }
    }
}

/// Flattened hyperparameter vector, depth-first in field-declaration order.
pub fn flatten_params(spec: &KernelSpec) -> Vec<f64> {
    spec.params()
}

pub fn unflatten_params(template: &KernelSpec, v: &[f64]) -> Result<KernelSpec> {
    template.with_params(v)
}

pub fn eval_kernel(spec: &KernelSpec, x: f64, x2: f64) -> f64 {
    spec.eval(x, x2)
}

pub fn kernel_matrix(spec: &KernelSpec, xs: &[f64], xs2: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(xs.len(), xs2.len(), |i, j| spec.eval(xs[i], xs2[j]))
}

/// Symmetric Gram matrix over a single input set.
pub fn gram(spec: &KernelSpec, xs: &[f64]) -> DMatrix<f64> {
    let n = xs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = spec.eval(xs[i], xs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// `∂K/∂θᵢ` for every flattened parameter, each symmetric.
pub fn kernel_grads(spec: &KernelSpec, xs: &[f64]) -> Vec<DMatrix<f64>> {
    let n = xs.len();
    let p = spec.n_params();
    let mut grads = vec![DMatrix::zeros(n, n); p];
    let mut buf = Vec::with_capacity(p);
    for i in 0..n {
        for j in 0..=i {
            buf.clear();
            spec.eval_grad_into(xs[i], xs[j], &mut buf);
            for (g, &d) in grads.iter_mut().zip(&buf) {
                g[(i, j)] = d;
                g[(j, i)] = d;
            }
        }
    }
    grads
}

/// Stationary profile `k(x_ref, x_ref + τ)` over a grid of lags.
pub fn kernel_curve(spec: &KernelSpec, x_ref: f64, taus: &[f64]) -> Vec<f64> {
    taus.iter().map(|t| spec.eval(x_ref, x_ref + t)).collect()
}

/// Random spectral mixture initialization.
///
/// Frequencies are uniform on `(0, nyquist]`, weights are `y_variance / Q`
/// and spectral standard deviations are `|N(0, (1/x_range)²)|`.
pub fn default_sm_init(
    x_range: f64,
    y_variance: f64,
    nyquist: f64,
    q: usize,
    seed: u64,
) -> Result<KernelSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sm_init_with_rng(x_range, y_variance, nyquist, q, &mut rng)
}

pub(crate) fn sm_init_with_rng<R: Rng + ?Sized>(
    x_range: f64,
    y_variance: f64,
    nyquist: f64,
    q: usize,
    rng: &mut R,
) -> Result<KernelSpec> {
    if !(x_range > 0.0 && x_range.is_finite()) {
        return Err(Error::InvalidArgument(format!("x_range must be > 0, got {x_range}")));
    }
    if !(y_variance > 0.0 && y_variance.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "y_variance must be > 0, got {y_variance}"
        )));
    }
    if !(nyquist > 0.0 && nyquist.is_finite()) {
        return Err(Error::InvalidArgument(format!("nyquist must be > 0, got {nyquist}")));
    }
    if q == 0 {
        return Err(Error::InvalidArgument("need at least one component".into()));
    }
    let spread = Normal::new(0.0, 1.0 / x_range).expect("positive std");
    let components = (0..q)
        .map(|_| {
            // (0, nyquist]: avoids ln(0)
            let mu = nyquist * (1.0 - rng.random::<f64>());
            let sd = spread.sample(rng).abs().max(1e-6 / x_range);
            SmComponent::new(y_variance / q as f64, mu, sd * sd)
        })
        .collect();
    Ok(KernelSpec::SpectralMixture { components })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    pub(crate) fn arb_leaf() -> impl Strategy<Value = KernelSpec> {
        prop_oneof![
            (-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| KernelSpec::Rbf {
                log_lengthscale: a,
                log_signal_var: b
            }),
            (-1.0..1.0f64, -1.0..1.0f64, -1.0..2.0f64).prop_map(|(a, b, c)| KernelSpec::Rq {
                log_lengthscale: a,
                log_signal_var: b,
                log_alpha: c
            }),
            (-1.0..1.0f64, -2.0..2.0f64).prop_map(|(a, b)| KernelSpec::Linear {
                log_slope_var: a,
                offset_c: b
            }),
            prop::collection::vec((-1.0..1.0f64, -2.0..0.5f64, -3.0..0.0f64), 1..4).prop_map(
                |cs| KernelSpec::SpectralMixture {
                    components: cs
                        .into_iter()
                        .map(|(w, m, v)| SmComponent {
                            log_weight: w,
                            log_frequency: m,
                            log_freq_var: v
                        })
                        .collect()
                }
            ),
        ]
    }

    fn arb_spec() -> impl Strategy<Value = KernelSpec> {
        arb_leaf().prop_recursive(2, 4, 2, |inner| {
            (inner.clone(), inner).prop_map(|(l, r)| KernelSpec::product(l, r))
        })
    }

    #[test]
    fn rbf_values() {
        let k = KernelSpec::rbf(1.0, 1.0);
        assert_eq!(eval_kernel(&k, 0.3, 0.3), 1.0);
        assert_relative_eq!(eval_kernel(&k, 0.0, 1.0), (-0.5f64).exp(), epsilon = 1e-15);
        assert_relative_eq!(eval_kernel(&k, 0.0, 1.0), 0.6065306597, epsilon = 1e-9);
    }

    #[test]
    fn sm_at_zero_lag_is_total_weight() {
        let k = KernelSpec::spectral_mixture(vec![
            SmComponent::new(0.3, 0.5, 0.1),
            SmComponent::new(0.7, 2.0, 0.01),
        ]);
        assert_relative_eq!(eval_kernel(&k, 1.7, 1.7), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rq_approaches_rbf_for_large_alpha() {
        let rq = KernelSpec::rq(1.0, 1.0, 1e6);
        let rbf = KernelSpec::rbf(1.0, 1.0);
        assert!((rq.eval(0.0, 1.0) - rbf.eval(0.0, 1.0)).abs() < 1e-5);
    }

    #[test]
    fn gram_of_single_point_is_signal_var() {
        let k = KernelSpec::rbf(0.7, 2.5);
        let m = kernel_matrix(&k, &[0.0], &[0.0]);
        assert_relative_eq!(m[(0, 0)], 2.5, epsilon = 1e-12);
    }

    #[test]
    fn log_signal_var_gradient_is_gram() {
        let k = KernelSpec::rbf(0.7, 2.5);
        let xs = [0.0, 0.4, 1.3, 2.0];
        let g = kernel_grads(&k, &xs);
        assert_relative_eq!(g[1], gram(&k, &xs), epsilon = 1e-14);
    }

    #[test]
    fn product_rule_for_left_subtree() {
        let l = KernelSpec::rbf(0.8, 1.2);
        let r = KernelSpec::linear(0.5, 0.3);
        let p = KernelSpec::product(l.clone(), r.clone());
        let xs = [-1.0, 0.2, 0.9];
        let gp = kernel_grads(&p, &xs);
        let gl = kernel_grads(&l, &xs);
        let kr = gram(&r, &xs);
        for i in 0..l.n_params() {
            assert_relative_eq!(gp[i], gl[i].component_mul(&kr), epsilon = 1e-14);
        }
    }

    #[test]
    fn param_counts() {
        assert_eq!(flatten_params(&KernelSpec::rbf(1.0, 1.0)).len(), 2);
        let sm = default_sm_init(10.0, 1.0, 5.0, 5, 3).unwrap();
        assert_eq!(flatten_params(&sm).len(), 15);
        assert!(unflatten_params(&sm, &[0.0; 14]).is_err());
    }

    #[test]
    fn sm_init_contract() {
        let a = default_sm_init(10.0, 1.0, 4.0, 5, 42).unwrap();
        let b = default_sm_init(10.0, 1.0, 4.0, 5, 42).unwrap();
        assert_eq!(a, b);
        let KernelSpec::SpectralMixture { components } = &a else {
            panic!("expected SM")
        };
        let total: f64 = components.iter().map(|c| c.weight()).sum();
        assert!((0.2..=5.0).contains(&total));
        assert!(components.iter().all(|c| c.frequency() > 0.0 && c.frequency() <= 4.0));
        assert!(default_sm_init(0.0, 1.0, 4.0, 5, 1).is_err());
        assert!(default_sm_init(1.0, 1.0, 4.0, 0, 1).is_err());
    }

    #[test]
    fn empty_mixture_is_invalid() {
        let k = KernelSpec::SpectralMixture { components: vec![] };
        assert!(k.validate().is_err());
    }

    #[test]
    fn serde_shape() {
        let k = KernelSpec::product(KernelSpec::rbf(1.0, 1.0), KernelSpec::linear(1.0, 0.5));
        let s = serde_json::to_string(&k).unwrap();
        assert!(s.starts_with(r#"{"type":"product","left":{"type":"rbf""#));
        let back: KernelSpec = serde_json::from_str(&s).unwrap();
        assert_eq!(back, k);
    }

    fn central_fd(spec: &KernelSpec, xs: &[f64], i: usize, h: f64) -> DMatrix<f64> {
        let mut p = spec.params();
        p[i] += h;
        let up = gram(&spec.with_params(&p).unwrap(), xs);
        p[i] -= 2.0 * h;
        let down = gram(&spec.with_params(&p).unwrap(), xs);
        (up - down) / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn symmetric(spec in arb_spec(), a in -5.0..5.0f64, b in -5.0..5.0f64) {
            prop_assert_eq!(spec.eval(a, b), spec.eval(b, a));
        }

        #[test]
        fn grads_match_finite_differences(
            spec in arb_spec(),
            xs in prop::collection::vec(-3.0..3.0f64, 1..6),
        ) {
            let grads = kernel_grads(&spec, &xs);
            for (i, g) in grads.iter().enumerate() {
                prop_assert!((g - g.transpose()).amax() < 1e-12);
                let fd = central_fd(&spec, &xs, i, 1e-5);
                for (a, e) in g.iter().zip(fd.iter()) {
                    let tol = 1e-4 * e.abs().max(a.abs()) + 1e-8;
                    prop_assert!((a - e).abs() <= tol, "param {}: {} vs {}", i, a, e);
                }
            }
        }

        #[test]
        fn jittered_gram_is_positive_definite(
            spec in arb_spec(),
            raw in prop::collection::btree_set(-300i32..300, 1..8),
        ) {
            let xs: Vec<f64> = raw.into_iter().map(|v| v as f64 / 100.0).collect();
            let k = gram(&spec, &xs);
            let mean_diag = k.diagonal().mean();
            prop_assume!(mean_diag > 0.0);
            let c = &k + DMatrix::identity(xs.len(), xs.len()) * (1e-6 * mean_diag);
            prop_assert!(c.cholesky().is_some());
        }

        #[test]
        fn sm_envelope(spec in arb_leaf(), tau in -20.0..20.0f64) {
            if let KernelSpec::SpectralMixture { .. } = spec {
                prop_assert!(spec.eval(0.0, tau).abs() <= spec.eval(0.0, 0.0) + 1e-15);
            }
        }

        #[test]
        fn flatten_round_trip(spec in arb_spec()) {
            let v = flatten_params(&spec);
            prop_assert_eq!(unflatten_params(&spec, &v).unwrap(), spec.clone());
            let json = serde_json::to_string(&spec).unwrap();
            let back: KernelSpec = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back, spec);
        }
    }

    #[test]
    fn eigenvalues_of_random_gram_are_positive() {
        for seed in 0..10 {
            let spec = default_sm_init(5.0, 1.0, 2.0, 3, seed).unwrap();
            let xs = [0.0, 0.7, 1.9, 3.1, 4.4];
            let k = gram(&spec, &xs) + DMatrix::identity(5, 5) * 1e-8;
            let eig = k.symmetric_eigen();
            assert!(eig.eigenvalues.iter().all(|&l| l > 0.0), "seed {seed}");
        }
    }
}
