//! Numerical checks of the log-MGF inequalities for convex Gaussian
//! functionals: convexity of Φ, one-sided sub-Gaussianity with the variance
//! as proxy, the Φ-gap and derivative bounds on λ < 0, and the lower-tail
//! bound, each with explicit statistical slack.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::check::{Check, CheckPoint, SlackPolicy};
use crate::error::{Error, Result};
use crate::functionals::{Functional, Kind};
use crate::gaussmc::{MomentEstimate, PhiCurve, SampleBank, ValueSample};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub seed: u64,
    pub samples: usize,
    /// Bank size used instead of `samples` when `F` is an SK free energy.
    pub sk_disorder_samples: usize,
    pub convexity_grid: Vec<f64>,
    /// λ ≤ 0 grid for the sub-Gaussian and Φ-gap checks.
    pub negative_grid: Vec<f64>,
    /// Strictly negative grid for the derivative check.
    pub dlog_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub slack: SlackPolicy,
}

impl AuditConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            samples: 1_000_000,
            sk_disorder_samples: 10_000,
            convexity_grid: arithmetic_grid(-3.0, 3.0, 0.25),
            negative_grid: arithmetic_grid(-3.0, 0.0, 0.25),
            dlog_grid: geometric_grid(-3.0, -0.125, 12),
            t_grid: arithmetic_grid(0.25, 3.0, 0.25),
            slack: SlackPolicy::default(),
        }
    }

    pub fn samples_for<T: Real>(&self, f: &Functional<T>) -> usize {
        match f.kind() {
            Kind::SkFreeEnergy { .. } => self.sk_disorder_samples,
            _ => self.samples,
        }
    }
}

/// `lo, lo + step, …` up to `hi` inclusive (to within a hundredth of a step).
pub fn arithmetic_grid(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    assert!(step > 0.0 && hi >= lo);
    let n = ((hi - lo) / step + 1e-2).floor() as usize;
    (0..=n).map(|k| lo + step * k as f64).collect()
}

/// `count` points from `lo` to `hi` (same sign) with a constant ratio.
pub fn geometric_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(count >= 2 && lo * hi > 0.0);
    let ratio = (hi / lo).powf(1.0 / (count - 1) as f64);
    (0..count)
        .map(|k| if k + 1 == count { hi } else { lo * ratio.powi(k as i32) })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AuditReport {
    pub functional: String,
    pub m: usize,
    pub seed: u64,
    pub grids: BTreeMap<String, Vec<f64>>,
    pub checks: Vec<Check>,
    pub pass: bool,
    #[serde(skip)]
    pub curve: PhiCurve<f64>,
}

fn to_f64_curve<T: Real>(c: &PhiCurve<T>) -> PhiCurve<f64> {
    PhiCurve {
        lambdas: c.lambdas.iter().map(|v| v.f64()).collect(),
        phi: c.phi.iter().map(|v| v.f64()).collect(),
        stderr: c.stderr.iter().map(|v| v.f64()).collect(),
        m: c.m,
        seed: c.seed,
    }
}

fn uniform_step<T: Real>(lambdas: &[T]) -> Result<f64> {
    let step = (lambdas[1] - lambdas[0]).f64();
    if !(step > 0.0) {
        return Err(Error::NonUniformGrid);
    }
    for w in lambdas.windows(2) {
        if ((w[1] - w[0]).f64() - step).abs() > 1e-9 * step.max(1.0) {
            return Err(Error::NonUniformGrid);
        }
    }
    Ok(step)
}

/// Second differences `Φ(λ_{i-1}) − 2Φ(λ_i) + Φ(λ_{i+1}) ≥ −(tol + k·σ_i)` on a
/// uniform grid, with σ_i the error of the second difference propagated from
/// the pointwise standard errors.
pub fn check_convexity<T: Real>(curve: &PhiCurve<T>, slack: &SlackPolicy) -> Result<Check> {
    if curve.len() < 3 {
        return Err(Error::InvalidParameter("convexity check needs at least three grid points".into()));
    }
    uniform_step(&curve.lambdas)?;
    let phi: Vec<f64> = curve.phi.iter().map(|v| v.f64()).collect();
    let se: Vec<f64> = curve.stderr.iter().map(|v| v.f64()).collect();
    let points = (1..curve.len() - 1)
        .map(|i| {
            let d2 = phi[i - 1] - 2.0 * phi[i] + phi[i + 1];
            let prop = (se[i - 1].powi(2) + 4.0 * se[i].powi(2) + se[i + 1].powi(2)).sqrt();
            CheckPoint::new(curve.lambdas[i].f64(), d2, slack.slack(prop)).with("stderr", prop)
        })
        .collect();
    Ok(Check::from_points("convexity", points))
}

fn require_nonpositive<T: Real>(lambdas: &[T]) -> Result<()> {
    match lambdas.iter().find(|&&l| l > T::zero()) {
        Some(l) => Err(Error::InvalidParameter(format!("grid must satisfy lambda <= 0, found {l}"))),
        None => Ok(()),
    }
}

/// `ln Ê e^{λ(F − ÊF)} ≤ λ² V̂ar / 2` for λ ≤ 0, from an evaluated sample.
pub fn subgaussian_from_sample<T: Real>(sample: &ValueSample<T>, lambdas: &[T], slack: &SlackPolicy) -> Result<Check> {
    require_nonpositive(lambdas)?;
    let mom = sample.moments();
    let (mean, var) = (mom.mean.f64(), mom.variance.f64());
    let points = lambdas
        .iter()
        .map(|&l| {
            let (phi, se_phi) = sample.phi(l);
            let lf = l.f64();
            let lhs = lf * (phi.f64() - mean);
            let rhs = 0.5 * lf * lf * var;
            let se = ((lf * se_phi.f64()).powi(2)
                + (lf * mom.stderr_mean.f64()).powi(2)
                + (0.5 * lf * lf * mom.stderr_variance.f64()).powi(2))
            .sqrt();
            CheckPoint::new(lf, rhs - lhs, slack.slack(se))
                .with("lhs", lhs)
                .with("rhs", rhs)
                .with("stderr", se)
        })
        .collect();
    Ok(Check::from_points("subgaussian", points))
}

pub fn check_subgaussian<T: Real>(
    f: &Functional<T>,
    bank: &SampleBank,
    lambdas: &[T],
    slack: &SlackPolicy,
) -> Result<Check> {
    require_nonpositive(lambdas)?;
    subgaussian_from_sample(&ValueSample::evaluate(f, bank)?, lambdas, slack)
}

/// `|Φ(λ) − E F| ≤ |λ| Var / 2` for λ ≤ 0.
pub fn check_phi_gap<T: Real>(curve: &PhiCurve<T>, moments: &MomentEstimate<T>, slack: &SlackPolicy) -> Result<Check> {
    require_nonpositive(&curve.lambdas)?;
    let (mean, var) = (moments.mean.f64(), moments.variance.f64());
    let points = (0..curve.len())
        .map(|i| {
            let lf = curve.lambdas[i].f64();
            let gap = (curve.phi[i].f64() - mean).abs();
            let bound = 0.5 * lf.abs() * var;
            let se = (curve.stderr[i].f64().powi(2)
                + moments.stderr_mean.f64().powi(2)
                + (0.5 * lf * moments.stderr_variance.f64()).powi(2))
            .sqrt();
            CheckPoint::new(lf, bound - gap, slack.slack(se))
                .with("gap", gap)
                .with("bound", bound)
                .with("stderr", se)
        })
        .collect();
    Ok(Check::from_points("phi_gap", points))
}

/// Three-point derivative weights on a nonuniform grid around `i`.
fn derivative_weights(l: &[f64], i: usize) -> [f64; 3] {
    let h1 = l[i] - l[i - 1];
    let h2 = l[i + 1] - l[i];
    [
        -h2 / (h1 * (h1 + h2)),
        (h2 - h1) / (h1 * h2),
        h1 / (h2 * (h1 + h2)),
    ]
}

fn third_derivative(l: &[f64], p: &[f64], start: usize) -> f64 {
    // divided differences over l[start..start + 4]
    let mut dd: Vec<f64> = p[start..start + 4].to_vec();
    for order in 1..4 {
        for k in 0..4 - order {
            dd[k] = (dd[k + 1] - dd[k]) / (l[start + k + order] - l[start + k]);
        }
    }
    6.0 * dd[0]
}

/// `|Φ'(λ_i) − Φ'(λ_j)| ≤ |ln(λ_i/λ_j)| V̂ar` for all interior pairs of a
/// strictly negative grid. Φ' comes from three-point differences; each
/// point carries a discretization allowance `h₁h₂|Φ'''|/6` estimated from
/// the neighbouring third divided difference.
pub fn check_dlog_lipschitz<T: Real>(
    curve: &PhiCurve<T>,
    moments: &MomentEstimate<T>,
    slack: &SlackPolicy,
) -> Result<Check> {
    let l: Vec<f64> = curve.lambdas.iter().map(|v| v.f64()).collect();
    let p: Vec<f64> = curve.phi.iter().map(|v| v.f64()).collect();
    let se: Vec<f64> = curve.stderr.iter().map(|v| v.f64()).collect();
    if l.len() < 3 {
        return Err(Error::InvalidParameter("derivative check needs at least three grid points".into()));
    }
    if l.iter().any(|&v| !(v < 0.0)) {
        return Err(Error::InvalidParameter("derivative check needs a strictly negative grid".into()));
    }
    if l.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidParameter("derivative grid must be strictly increasing".into()));
    }
    let k = l.len();
    let mut deriv = Vec::new();
    for i in 1..k - 1 {
        let w = derivative_weights(&l, i);
        let d = w[0] * p[i - 1] + w[1] * p[i] + w[2] * p[i + 1];
        let d_se = ((w[0] * se[i - 1]).powi(2) + (w[1] * se[i]).powi(2) + (w[2] * se[i + 1]).powi(2)).sqrt();
        let allowance = if k >= 4 {
            let start = if i + 2 < k { i - 1 } else { i - 2 };
            (l[i] - l[i - 1]) * (l[i + 1] - l[i]) * third_derivative(&l, &p, start).abs() / 6.0
        } else {
            0.0
        };
        deriv.push((l[i], d, d_se, allowance));
    }
    let var = moments.variance.f64();
    let se_var = moments.stderr_variance.f64();
    let mut points = Vec::new();
    for a in 0..deriv.len() {
        for b in a + 1..deriv.len() {
            let (la, da, sa, aa) = deriv[a];
            let (lb, db, sb, ab) = deriv[b];
            let log_ratio = (la / lb).ln().abs();
            let bound = log_ratio * var;
            let stat = (sa * sa + sb * sb + (log_ratio * se_var).powi(2)).sqrt();
            points.push(
                CheckPoint::new(la, bound - (da - db).abs(), slack.slack(stat) + aa + ab)
                    .with("lambda_other", lb)
                    .with("derivative", da)
                    .with("derivative_other", db)
                    .with("bound", bound)
                    .with("allowance", aa + ab),
            );
        }
    }
    Ok(Check::from_points("dlog_lipschitz", points))
}

/// Empirical lower tail `P̂(F − ÊF ≤ −t) ≤ exp(−t² / 2V̂ar)` on a t grid.
/// The Lipschitz (`exp(−t²/2L²)`) and `exp(−t²/1000 V̂ar)` comparison bounds
/// are reported alongside but not tested.
pub fn small_deviation_from_sample<T: Real>(
    sample: &ValueSample<T>,
    lipschitz: Option<f64>,
    t_grid: &[f64],
    slack: &SlackPolicy,
) -> Result<Check> {
    if let Some(t) = t_grid.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter(format!("tail levels must be positive, got {t}")));
    }
    let mom = sample.moments();
    let (var, se_var) = (mom.variance.f64(), mom.stderr_variance.f64());
    let m = sample.len() as f64;
    let points = t_grid
        .iter()
        .map(|&t| {
            let tail = sample.lower_tail(mom.mean, T::of(t));
            let p = tail.p_hat.f64();
            let bound = if var > 0.0 { (-t * t / (2.0 * var)).exp() } else { 0.0 };
            let dbound = if var > 0.0 { bound * t * t / (2.0 * var * var) } else { 0.0 };
            let se = (p * (1.0 - p) / m + (dbound * se_var).powi(2)).sqrt();
            let mut pt = CheckPoint::new(t, bound - p, slack.slack(se))
                .with("p_hat", p)
                .with("ci_upper_95", tail.ci_upper_95.f64())
                .with("bound", bound);
            if var > 0.0 {
                let pv = (-t * t / (1000.0 * var)).exp();
                pt = pt.with("pv_bound", pv).with("ratio_to_pv", bound / pv);
            }
            if let Some(lip) = lipschitz.filter(|&l| l > 0.0) {
                let lb = (-t * t / (2.0 * lip * lip)).exp();
                pt = pt.with("lipschitz_bound", lb).with("ratio_to_lipschitz", bound / lb);
            }
            pt
        })
        .collect();
    Ok(Check::from_points("small_deviation", points))
}

pub fn check_small_deviation<T: Real>(
    f: &Functional<T>,
    bank: &SampleBank,
    t_grid: &[f64],
    slack: &SlackPolicy,
) -> Result<Check> {
    if let Some(t) = t_grid.iter().find(|&&t| !(t > 0.0)) {
        return Err(Error::InvalidParameter(format!("tail levels must be positive, got {t}")));
    }
    let sample = ValueSample::evaluate(f, bank)?;
    small_deviation_from_sample(&sample, f.lipschitz().map(|l| l.f64()), t_grid, slack)
}

/// `V̂ar ≤ L² (1 + k · stderr(V̂ar)/V̂ar)`: the variance never exceeds the
/// squared Lipschitz constant beyond sampling error.
pub fn check_variance_vs_lipschitz<T: Real>(moments: &MomentEstimate<T>, lipschitz: f64, slack: &SlackPolicy) -> Check {
    let (var, se) = (moments.variance.f64(), moments.stderr_variance.f64());
    let l2 = lipschitz * lipschitz;
    let rel = if var > 0.0 { se / var } else { 0.0 };
    let point = CheckPoint::new(0.0, l2 - var, slack.sigmas * l2 * rel)
        .with("variance", var)
        .with("lipschitz_sq", l2);
    Check::from_points("variance_vs_lipschitz", vec![point])
}

/// All audit checks on one shared bank. `convexity_override` replaces the
/// estimated curve in the convexity check (used for negative controls).
pub fn audit_with<T: Real>(
    f: &Functional<T>,
    cfg: &AuditConfig,
    convexity_override: Option<PhiCurve<T>>,
) -> Result<AuditReport> {
    let m = cfg.samples_for(f);
    let bank = SampleBank::new(cfg.seed, f.dim(), m)?;
    let sample = ValueSample::evaluate(f, &bank)?;
    let moments = sample.moments();
    let grid = |g: &[f64]| g.iter().map(|&v| T::of(v)).collect::<Vec<T>>();

    let curve = sample.curve(&grid(&cfg.convexity_grid))?;
    let convexity_curve = convexity_override.unwrap_or_else(|| curve.clone());
    let mut checks = vec![
        check_convexity(&convexity_curve, &cfg.slack)?,
        subgaussian_from_sample(&sample, &grid(&cfg.negative_grid), &cfg.slack)?,
        check_phi_gap(&sample.curve(&grid(&cfg.negative_grid))?, &moments, &cfg.slack)?,
        check_dlog_lipschitz(&sample.curve(&grid(&cfg.dlog_grid))?, &moments, &cfg.slack)?,
    ];
    let lip = f.lipschitz().map(|l| l.f64());
    checks.push(small_deviation_from_sample(&sample, lip, &cfg.t_grid, &cfg.slack)?);
    if let Some(l) = lip {
        checks.push(check_variance_vs_lipschitz(&moments, l, &cfg.slack));
    }
    let pass = checks.iter().all(|c| c.pass);
    let grids = BTreeMap::from([
        ("convexity".to_string(), cfg.convexity_grid.clone()),
        ("negative".to_string(), cfg.negative_grid.clone()),
        ("dlog".to_string(), cfg.dlog_grid.clone()),
        ("t".to_string(), cfg.t_grid.clone()),
    ]);
    Ok(AuditReport {
        functional: f.to_string(),
        m,
        seed: cfg.seed,
        grids,
        checks,
        pass,
        curve: to_f64_curve(&curve),
    })
}

pub fn audit_all<T: Real>(f: &Functional<T>, cfg: &AuditConfig) -> Result<AuditReport> {
    audit_with(f, cfg, None)
}

/// `Φ(λ) = −λ²` on the given grid: a strictly concave negative control.
pub fn synthetic_concave_curve(lambdas: &[f64]) -> PhiCurve<f64> {
    PhiCurve::exact(lambdas.to_vec(), lambdas.iter().map(|l| -l * l).collect())
}
