//! Convex test functions `F: ℝⁿ → ℝ` with evaluation, a deterministic
//! subgradient selection, Lipschitz constants where known, and hard-coded
//! closed-form reference values.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::scalar::{sigmoid, softplus, Real};
use crate::skmodel::{self, SkParams};
use crate::special::{ln_normal_cdf, normal_cdf};

/// Convex map applied coordinatewise before an inner functional.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarMap {
    Softplus,
    Square,
    Identity,
}

impl ScalarMap {
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            ScalarMap::Softplus => softplus(x),
            ScalarMap::Square => x * x,
            ScalarMap::Identity => x,
        }
    }

    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            ScalarMap::Softplus => sigmoid(x),
            ScalarMap::Square => x + x,
            ScalarMap::Identity => T::one(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScalarMap::Softplus => "softplus",
            ScalarMap::Square => "square",
            ScalarMap::Identity => "identity",
        }
    }
}

/// Where a functional is known to be coordinatewise nondecreasing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Monotonicity {
    Nowhere,
    NonnegativeOrthant,
    Everywhere,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kind<T> {
    Linear { a: Vec<T>, b: T },
    EuclidNorm,
    MaxCoord,
    LogSumExp { temperature: T },
    SkFreeEnergy { params: SkParams<T> },
    Composed { rho: ScalarMap, inner: Box<Functional<T>> },
    /// `−F`. Concave whenever `F` is convex; used only as a negative control.
    Negated { inner: Box<Functional<T>> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ClosedForm<T> {
    pub mean: T,
    pub variance: T,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Functional<T> {
    #[serde(flatten)]
    kind: Kind<T>,
    dim: usize,
}

impl<T: Real> Functional<T> {
    pub fn linear(a: Vec<T>, b: T) -> Result<Self> {
        if a.is_empty() {
            return Err(Error::InvalidParameter("linear functional needs a nonempty coefficient vector".into()));
        }
        if a.iter().chain(std::iter::once(&b)).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("linear coefficients".into()));
        }
        let dim = a.len();
        Ok(Self { kind: Kind::Linear { a, b }, dim })
    }

    pub fn euclid_norm(n: usize) -> Result<Self> {
        Self::with_dim(Kind::EuclidNorm, n)
    }

    pub fn max_coord(n: usize) -> Result<Self> {
        Self::with_dim(Kind::MaxCoord, n)
    }

    /// `τ ln Σ_i e^{x_i/τ}`.
    pub fn log_sum_exp(n: usize, temperature: T) -> Result<Self> {
        if !(temperature > T::zero()) || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!("temperature must be positive, got {temperature}")));
        }
        Self::with_dim(Kind::LogSumExp { temperature }, n)
    }

    /// `ln Z_N(x)` on the flattened `N × N` disorder matrix.
    pub fn sk_free_energy(params: SkParams<T>) -> Self {
        Self {
            dim: params.disorder_dim(),
            kind: Kind::SkFreeEnergy { params },
        }
    }

    /// `x ↦ inner(ρ(x_1), …, ρ(x_n))`. Convexity needs `ρ` convex and `inner`
    /// convex and coordinatewise nondecreasing on the range of `ρ`.
    pub fn composed(rho: ScalarMap, inner: Functional<T>) -> Result<Self> {
        let required = match rho {
            ScalarMap::Identity => Monotonicity::Nowhere,
            ScalarMap::Softplus | ScalarMap::Square => Monotonicity::NonnegativeOrthant,
        };
        if !inner.is_convex() {
            return Err(Error::InvalidParameter("composition needs a convex inner functional".into()));
        }
        if inner.monotonicity() < required {
            return Err(Error::InvalidParameter(format!(
                "{} composition needs an inner functional that is nondecreasing on the nonnegative orthant",
                rho.name()
            )));
        }
        let dim = inner.dim;
        Ok(Self {
            kind: Kind::Composed { rho, inner: Box::new(inner) },
            dim,
        })
    }

    pub fn negated(inner: Functional<T>) -> Self {
        let dim = inner.dim;
        Self {
            kind: Kind::Negated { inner: Box::new(inner) },
            dim,
        }
    }

    fn with_dim(kind: Kind<T>, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("dimension must be positive".into()));
        }
        Ok(Self { kind, dim: n })
    }

    pub fn kind(&self) -> &Kind<T> {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_convex(&self) -> bool {
        match &self.kind {
            Kind::Negated { inner } => matches!(inner.kind, Kind::Linear { .. }),
            Kind::Composed { inner, .. } => inner.is_convex(),
            _ => true,
        }
    }

    pub fn monotonicity(&self) -> Monotonicity {
        match &self.kind {
            Kind::Linear { a, .. } => {
                if a.iter().all(|&v| v >= T::zero()) {
                    Monotonicity::Everywhere
                } else {
                    Monotonicity::Nowhere
                }
            }
            Kind::MaxCoord | Kind::LogSumExp { .. } => Monotonicity::Everywhere,
            Kind::EuclidNorm => Monotonicity::NonnegativeOrthant,
            Kind::SkFreeEnergy { .. } | Kind::Negated { .. } => Monotonicity::Nowhere,
            Kind::Composed { rho, inner } => match rho {
                ScalarMap::Identity => inner.monotonicity(),
                // ρ nondecreasing everywhere with range in (0, ∞)
                ScalarMap::Softplus => Monotonicity::Everywhere.min(match inner.monotonicity() {
                    Monotonicity::Nowhere => Monotonicity::Nowhere,
                    _ => Monotonicity::Everywhere,
                }),
                ScalarMap::Square => match inner.monotonicity() {
                    Monotonicity::Nowhere => Monotonicity::Nowhere,
                    _ => Monotonicity::NonnegativeOrthant,
                },
            },
        }
    }

    pub fn lipschitz(&self) -> Option<T> {
        match &self.kind {
            Kind::Linear { a, .. } => Some(a.iter().map(|&v| v * v).sum::<T>().sqrt()),
            Kind::EuclidNorm | Kind::MaxCoord | Kind::LogSumExp { .. } => Some(T::one()),
            Kind::SkFreeEnergy { params } => Some(params.lipschitz()),
            Kind::Composed { rho, inner } => match rho {
                ScalarMap::Square => None,
                ScalarMap::Softplus | ScalarMap::Identity => inner.lipschitz(),
            },
            Kind::Negated { inner } => inner.lipschitz(),
        }
    }

    /// True when `F` is continuously differentiable everywhere.
    pub fn is_smooth(&self) -> bool {
        match &self.kind {
            Kind::Linear { .. } | Kind::LogSumExp { .. } | Kind::SkFreeEnergy { .. } => true,
            Kind::EuclidNorm | Kind::MaxCoord => false,
            Kind::Composed { inner, .. } | Kind::Negated { inner } => inner.is_smooth(),
        }
    }

    /// For `n = 1`, every point where `F` may fail to be differentiable.
    /// Empty in higher dimensions.
    pub fn kinks_1d(&self) -> Vec<T> {
        if self.dim != 1 {
            return Vec::new();
        }
        match &self.kind {
            Kind::EuclidNorm => vec![T::zero()],
            Kind::Linear { .. } | Kind::MaxCoord | Kind::LogSumExp { .. } | Kind::SkFreeEnergy { .. } => Vec::new(),
            Kind::Negated { inner } => inner.kinks_1d(),
            Kind::Composed { rho, inner } => {
                let mut out = Vec::new();
                for k in inner.kinks_1d() {
                    match rho {
                        ScalarMap::Identity => out.push(k),
                        ScalarMap::Square if k == T::zero() => out.push(k),
                        ScalarMap::Square if k > T::zero() => out.extend([-k.sqrt(), k.sqrt()]),
                        ScalarMap::Softplus if k > T::zero() => out.push(k.exp_m1().ln()),
                        _ => {}
                    }
                }
                out
            }
        }
    }

    fn check_input(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("functional input".into()));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[T]) -> Result<T> {
        self.check_input(x)?;
        let v = match &self.kind {
            Kind::Linear { a, b } => a.iter().zip(x).fold(*b, |acc, (&ai, &xi)| acc + ai * xi),
            Kind::EuclidNorm => x.iter().map(|&v| v * v).sum::<T>().sqrt(),
            Kind::MaxCoord => x.iter().copied().fold(T::neg_infinity(), T::max),
            Kind::LogSumExp { temperature } => {
                let top = x.iter().copied().fold(T::neg_infinity(), T::max);
                let s: T = x.iter().map(|&v| ((v - top) / *temperature).exp()).sum();
                top + *temperature * s.ln()
            }
            Kind::SkFreeEnergy { params } => skmodel::log_partition_of(params, x)?,
            Kind::Composed { rho, inner } => {
                let y: Vec<T> = x.iter().map(|&v| rho.apply(v)).collect();
                inner.eval(&y)?
            }
            Kind::Negated { inner } => -inner.eval(x)?,
        };
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{self} at {x:?}")));
        }
        Ok(v)
    }

    /// A supporting vector at `x`. Ties: the Euclidean norm returns `0` at the
    /// origin and the max returns the indicator of the lowest-index maximizer.
    pub fn subgradient(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_input(x)?;
        Ok(match &self.kind {
            Kind::Linear { a, .. } => a.clone(),
            Kind::EuclidNorm => {
                let norm = x.iter().map(|&v| v * v).sum::<T>().sqrt();
                if norm == T::zero() {
                    vec![T::zero(); self.dim]
                } else {
                    x.iter().map(|&v| v / norm).collect()
                }
            }
            Kind::MaxCoord => {
                let (arg, _) = x
                    .iter()
                    .enumerate()
                    .fold((0, x[0]), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) });
                let mut g = vec![T::zero(); self.dim];
                g[arg] = T::one();
                g
            }
            Kind::LogSumExp { temperature } => {
                let top = x.iter().copied().fold(T::neg_infinity(), T::max);
                let w: Vec<T> = x.iter().map(|&v| ((v - top) / *temperature).exp()).collect();
                let s: T = w.iter().copied().sum();
                w.into_iter().map(|wi| wi / s).collect()
            }
            Kind::SkFreeEnergy { params } => skmodel::log_partition_gradient(params, x)?.1,
            Kind::Composed { rho, inner } => {
                let y: Vec<T> = x.iter().map(|&v| rho.apply(v)).collect();
                let gi = inner.subgradient(&y)?;
                gi.iter().zip(x).map(|(&g, &v)| g * rho.derivative(v)).collect()
            }
            Kind::Negated { inner } => inner.subgradient(x)?.into_iter().map(|g| -g).collect(),
        })
    }

    /// Exact mean and variance of `F(g)` where known.
    pub fn closed_form(&self) -> Option<ClosedForm<T>> {
        match &self.kind {
            Kind::Linear { a, b } => Some(ClosedForm {
                mean: *b,
                variance: a.iter().map(|&v| v * v).sum(),
            }),
            Kind::EuclidNorm => {
                // chi distribution with n degrees of freedom
                let n = self.dim as f64;
                let mean = std::f64::consts::SQRT_2
                    * (statrs::function::gamma::ln_gamma((n + 1.0) / 2.0) - statrs::function::gamma::ln_gamma(n / 2.0))
                        .exp();
                Some(ClosedForm {
                    mean: T::of(mean),
                    variance: T::of(n - mean * mean),
                })
            }
            Kind::SkFreeEnergy { params } if params.n_spins == 1 => Some(ClosedForm {
                mean: (T::of(2.0) * params.h.cosh()).ln(),
                variance: params.beta * params.beta,
            }),
            _ => None,
        }
    }

    /// Exact `Φ(λ) = λ⁻¹ ln E e^{λF(g)}` where a closed form is hard-coded.
    pub fn closed_form_phi(&self, lambda: T) -> Option<T> {
        match &self.kind {
            Kind::Linear { a, b } => {
                let sq: T = a.iter().map(|&v| v * v).sum();
                Some(*b + lambda * sq * T::of(0.5))
            }
            Kind::EuclidNorm if self.dim == 1 => {
                let l = lambda.f64();
                if l.abs() < 1e-8 {
                    return Some(T::of((2.0 / std::f64::consts::PI).sqrt()));
                }
                // E e^{λ|g|} = 2 e^{λ²/2} N(λ)
                Some(T::of((2f64.ln() + 0.5 * l * l + ln_normal_cdf(l)) / l))
            }
            Kind::SkFreeEnergy { params } if params.n_spins == 1 => {
                // ln Z_1(x) = βx + ln(2 cosh h)
                Some((T::of(2.0) * params.h.cosh()).ln() + lambda * params.beta * params.beta * T::of(0.5))
            }
            _ => None,
        }
    }

    /// Probability `P(F(g) − E F(g) ≤ −t)` where it is known exactly.
    pub fn closed_form_lower_tail(&self, t: T) -> Option<T> {
        match &self.kind {
            Kind::Linear { a, .. } => {
                let sd = a.iter().map(|&v| v * v).sum::<T>().sqrt().f64();
                Some(T::of(normal_cdf(-t.f64() / sd)))
            }
            _ => None,
        }
    }

    pub fn name(&self) -> String {
        self.to_string()
    }
}

impl<T: Real> fmt::Display for Functional<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            Kind::Linear { a, b } => {
                let a: Vec<String> = a.iter().map(|v| v.to_string()).collect();
                write!(f, "linear:a={}:b={}", a.join(","), b)
            }
            Kind::EuclidNorm => write!(f, "norm:n={}", self.dim),
            Kind::MaxCoord => write!(f, "max:n={}", self.dim),
            Kind::LogSumExp { temperature } => write!(f, "lse:n={}:tau={}", self.dim, temperature),
            Kind::SkFreeEnergy { params } => {
                write!(f, "sk:N={}:beta={}:h={}", params.n_spins, params.beta, params.h)
            }
            Kind::Composed { rho, inner } => write!(f, "composed:rho={}:inner={}", rho.name(), inner),
            Kind::Negated { inner } => write!(f, "neg:inner={inner}"),
        }
    }
}

/// The functionals every audit-level property is run against.
pub fn catalog() -> Vec<Functional<f64>> {
    vec![
        Functional::linear(vec![1.0], 0.0).unwrap(),
        Functional::linear(vec![1.0, 1.0], 0.0).unwrap(),
        Functional::euclid_norm(1).unwrap(),
        Functional::euclid_norm(3).unwrap(),
        Functional::euclid_norm(5).unwrap(),
        Functional::max_coord(3).unwrap(),
        Functional::log_sum_exp(2, 1.0).unwrap(),
        Functional::log_sum_exp(5, 1.0).unwrap(),
        Functional::composed(ScalarMap::Softplus, Functional::log_sum_exp(3, 1.0).unwrap()).unwrap(),
        Functional::sk_free_energy(SkParams::new(4, 1.0, 0.0).unwrap()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn evaluation_examples() {
        let lin = Functional::linear(vec![1.0, 1.0], 0.0).unwrap();
        assert_eq!(lin.eval(&[2.0, 3.0]).unwrap(), 5.0);
        assert_eq!(Functional::<f64>::euclid_norm(2).unwrap().eval(&[3.0, 4.0]).unwrap(), 5.0);
        let sk = Functional::sk_free_energy(SkParams::new(1, 1.0, 0.0).unwrap());
        assert!((sk.eval(&[0.7]).unwrap() - (0.7 + 2f64.ln())).abs() < 1e-14);
    }

    #[test]
    fn evaluation_errors() {
        let norm = Functional::<f64>::euclid_norm(2).unwrap();
        assert_eq!(
            norm.eval(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        );
        assert!(matches!(norm.eval(&[f64::NAN, 0.0]), Err(Error::NonFinite(_))));
        assert!(norm.subgradient(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn subgradient_examples() {
        let norm = Functional::<f64>::euclid_norm(2).unwrap();
        assert_eq!(norm.subgradient(&[3.0, 4.0]).unwrap(), vec![0.6, 0.8]);
        assert_eq!(norm.subgradient(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let lin = Functional::linear(vec![2.0, -1.0], 5.0).unwrap();
        assert_eq!(lin.subgradient(&[9.0, -3.0]).unwrap(), vec![2.0, -1.0]);
        let max = Functional::<f64>::max_coord(3).unwrap();
        assert_eq!(max.subgradient(&[1.0, 2.0, 2.0]).unwrap(), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn closed_form_phi_examples() {
        let lin = Functional::linear(vec![1.0, 0.0, 0.0], 2.0).unwrap();
        assert_eq!(lin.closed_form_phi(-4.0), Some(0.0));
        let norm = Functional::<f64>::euclid_norm(1).unwrap();
        assert!((norm.closed_form_phi(1.0).unwrap() - 1.020_393_401_536_495).abs() < 1e-12);
        assert!((norm.closed_form_phi(-1.0).unwrap() - 0.647_874_464_449_318).abs() < 1e-12);
        assert!((norm.closed_form_phi(0.0).unwrap() - (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-15);
        assert!(Functional::<f64>::euclid_norm(2).unwrap().closed_form_phi(1.0).is_none());
        assert!(Functional::<f64>::max_coord(2).unwrap().closed_form_phi(1.0).is_none());
        let sk = Functional::sk_free_energy(SkParams::new(1, 1.0, 1.0).unwrap());
        assert!((sk.closed_form_phi(-2.0).unwrap() - ((2.0 * 1f64.cosh()).ln() - 1.0)).abs() < 1e-14);
    }

    #[test]
    fn closed_form_phi_is_continuous_at_zero() {
        let norm = Functional::<f64>::euclid_norm(1).unwrap();
        let at0 = norm.closed_form_phi(0.0).unwrap();
        for l in [1e-4, -1e-4] {
            assert!((norm.closed_form_phi(l).unwrap() - at0).abs() < 1e-3);
        }
    }

    #[test]
    fn chi_moments() {
        let cf = Functional::<f64>::euclid_norm(1).unwrap().closed_form().unwrap();
        assert!((cf.mean - 0.797_884_560_802_865_4).abs() < 1e-14);
        assert!((cf.variance - (1.0 - 2.0 / std::f64::consts::PI)).abs() < 1e-14);
        let cf3 = Functional::<f64>::euclid_norm(3).unwrap().closed_form().unwrap();
        assert!((cf3.mean - 2.0 * (2.0 / std::f64::consts::PI).sqrt()).abs() < 1e-13);
    }

    #[test]
    fn composition_rules() {
        let lse = Functional::<f64>::log_sum_exp(3, 1.0).unwrap();
        assert!(Functional::composed(ScalarMap::Softplus, lse.clone()).is_ok());
        assert!(Functional::composed(ScalarMap::Square, Functional::<f64>::euclid_norm(2).unwrap()).is_ok());
        let decreasing = Functional::linear(vec![1.0, -1.0], 0.0).unwrap();
        assert!(Functional::composed(ScalarMap::Softplus, decreasing.clone()).is_err());
        assert!(Functional::composed(ScalarMap::Identity, decreasing).is_ok());
        let sk = Functional::sk_free_energy(SkParams::new(2, 1.0, 0.0).unwrap());
        assert!(Functional::composed(ScalarMap::Square, sk).is_err());
        let neg = Functional::negated(Functional::<f64>::euclid_norm(2).unwrap());
        assert!(!neg.is_convex());
        assert!(Functional::composed(ScalarMap::Identity, neg).is_err());
        let c = Functional::composed(ScalarMap::Softplus, lse).unwrap();
        assert_eq!(c.lipschitz(), Some(1.0));
        let sq = Functional::composed(ScalarMap::Square, Functional::<f64>::max_coord(2).unwrap()).unwrap();
        assert_eq!(sq.lipschitz(), None);
    }

    #[test]
    fn log_sum_exp_temperature() {
        let f = Functional::<f64>::log_sum_exp(2, 0.5).unwrap();
        let want = 0.5 * ((2.0f64).exp() + (4.0f64).exp()).ln();
        assert!((f.eval(&[1.0, 2.0]).unwrap() - want).abs() < 1e-13);
        assert!(Functional::<f64>::log_sum_exp(2, 0.0).is_err());
    }

    #[test]
    fn display_round_trips_through_names() {
        let c = Functional::composed(ScalarMap::Softplus, Functional::<f64>::log_sum_exp(3, 1.0).unwrap()).unwrap();
        assert_eq!(c.to_string(), "composed:rho=softplus:inner=lse:n=3:tau=1");
    }
}
