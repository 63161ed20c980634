//! Sherrington–Kirkpatrick partition functions by exhaustive enumeration,
//! annealed replica curves `Γ_N(λ) = (λN)⁻¹ ln E Z_N^λ`, and the SK-specific
//! checks built on them.
//!
//! The disorder is the full `N × N` matrix (diagonal included), so
//! `H(σ) = β N^{-1/2} Σ_{i,j} x_ij σ_i σ_j + h Σ_i σ_i`. The diagonal only
//! contributes the spin-independent shift `β N^{-1/2} Σ_i x_ii`.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::check::{Check, CheckPoint, SlackPolicy};
use crate::error::{Error, Result};
use crate::gaussmc::{fmt17, MomentEstimate, SampleBank, ValueSample};
use crate::scalar::{LogSumExp, Real};

pub const MAX_SPINS: usize = 20;
pub const MAX_NAIVE_SPINS: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SkParams<T> {
    pub n_spins: usize,
    pub beta: T,
    pub h: T,
}

impl<T: Real> SkParams<T> {
    pub fn new(n_spins: usize, beta: T, h: T) -> Result<Self> {
        if !(1..=MAX_SPINS).contains(&n_spins) {
            return Err(Error::OutOfRange(format!("SK size N={n_spins} outside 1..={MAX_SPINS}")));
        }
        if !(beta >= T::zero()) || !beta.is_finite() || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("SK parameters beta={beta}, h={h}")));
        }
        Ok(Self { n_spins, beta, h })
    }

    /// Length of the flattened disorder vector, `N²`.
    pub fn disorder_dim(&self) -> usize {
        self.n_spins * self.n_spins
    }

    /// `F_N` is `β√N`-Lipschitz in the disorder.
    pub fn lipschitz(&self) -> T {
        self.beta * T::of_usize(self.n_spins).sqrt()
    }

    fn coupling_scale(&self) -> T {
        self.beta / T::of_usize(self.n_spins).sqrt()
    }

    fn check_disorder(&self, x: &[T]) -> Result<()> {
        if x.len() != self.disorder_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.disorder_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("SK disorder".into()));
        }
        Ok(())
    }
}

/// One disorder realization, row-major `x[i * N + j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkInstance<T> {
    pub params: SkParams<T>,
    pub disorder: Vec<T>,
}

impl<T: Real> SkInstance<T> {
    pub fn new(params: SkParams<T>, disorder: Vec<T>) -> Result<Self> {
        params.check_disorder(&disorder)?;
        Ok(Self { params, disorder })
    }

    pub fn negated(&self) -> Self {
        Self {
            params: self.params,
            disorder: self.disorder.iter().map(|&v| -v).collect(),
        }
    }

    /// `H(σ)` from scratch; `spins[i]` is ±1.
    pub fn hamiltonian(&self, spins: &[i8]) -> T {
        let n = self.params.n_spins;
        let mut quad = T::zero();
        for i in 0..n {
            let row = self.disorder[i * n..(i + 1) * n]
                .iter()
                .zip(spins)
                .fold(T::zero(), |acc, (&x, &s)| acc + x * T::of(s as f64));
            quad = quad + row * T::of(spins[i] as f64);
        }
        let mag: i32 = spins.iter().map(|&s| s as i32).sum();
        self.params.coupling_scale() * quad + self.params.h * T::of(mag as f64)
    }
}

/// Walks all `2^N` configurations in reflected-binary order, calling
/// `visit(H(σ), σ)` once per configuration.
///
/// Each step flips one spin `p` and updates the energy in `O(N)` through the
/// cached local fields `ℓ_p = Σ_{q≠p} (x_pq + x_qp) σ_q`, i.e. the σ-weighted
/// row plus column sums with the diagonal removed.
fn enumerate_gray<T: Real>(params: &SkParams<T>, x: &[T], mut visit: impl FnMut(T, &[i8])) {
    let n = params.n_spins;
    let scale = params.coupling_scale();
    let mut spins = vec![1i8; n];
    let mut coupling = vec![T::zero(); n * n];
    for p in 0..n {
        for q in 0..n {
            if p != q {
                coupling[p * n + q] = x[p * n + q] + x[q * n + p];
            }
        }
    }
    let mut field: Vec<T> = (0..n)
        .map(|p| (0..n).map(|q| coupling[p * n + q]).fold(T::zero(), |a, b| a + b))
        .collect();
    let mut quad: T = x.iter().copied().fold(T::zero(), |a, b| a + b);
    let mut mag = n as i64;
    visit(scale * quad + params.h * T::of(mag as f64), &spins);
    let two = T::of(2.0);
    for k in 1u64..(1u64 << n) {
        let p = k.trailing_zeros() as usize;
        let s = T::of(spins[p] as f64);
        quad = quad - two * s * field[p];
        mag -= 2 * spins[p] as i64;
        let row = &coupling[p * n..(p + 1) * n];
        for (q, f) in field.iter_mut().enumerate() {
            if q != p {
                *f = *f - two * s * row[q];
            }
        }
        spins[p] = -spins[p];
        visit(scale * quad + params.h * T::of(mag as f64), &spins);
    }
}

/// `ln Z_N(x)` by Gray-code enumeration on a flattened disorder slice.
pub fn log_partition_of<T: Real>(params: &SkParams<T>, x: &[T]) -> Result<T> {
    params.check_disorder(x)?;
    let mut acc = LogSumExp::new();
    enumerate_gray(params, x, |h, _| acc.push(h));
    Ok(acc.value())
}

pub fn log_partition<T: Real>(inst: &SkInstance<T>) -> Result<T> {
    log_partition_of(&inst.params, &inst.disorder)
}

/// Reference `ln Z_N` evaluating every Hamiltonian from scratch.
pub fn log_partition_naive<T: Real>(inst: &SkInstance<T>) -> Result<T> {
    let n = inst.params.n_spins;
    if n > MAX_NAIVE_SPINS {
        return Err(Error::OutOfRange(format!(
            "naive enumeration limited to N <= {MAX_NAIVE_SPINS}, got {n}"
        )));
    }
    let mut acc = LogSumExp::new();
    let mut spins = vec![0i8; n];
    for bits in 0u32..(1u32 << n) {
        for (i, s) in spins.iter_mut().enumerate() {
            *s = if bits >> i & 1 == 1 { -1 } else { 1 };
        }
        acc.push(inst.hamiltonian(&spins));
    }
    Ok(acc.value())
}

/// `ln Z_N(x)` and `∇_x ln Z_N = β N^{-1/2} ⟨σ_i σ_j⟩` (Gibbs averages).
pub fn log_partition_gradient<T: Real>(params: &SkParams<T>, x: &[T]) -> Result<(T, Vec<T>)> {
    let log_z = log_partition_of(params, x)?;
    let n = params.n_spins;
    let mut corr = vec![T::zero(); n * n];
    enumerate_gray(params, x, |h, spins| {
        let w = (h - log_z).exp();
        for i in 0..n {
            let wi = if spins[i] > 0 { w } else { -w };
            for j in 0..n {
                let c = &mut corr[i * n + j];
                *c = if spins[j] > 0 { *c + wi } else { *c - wi };
            }
        }
    });
    let scale = params.coupling_scale();
    Ok((log_z, corr.into_iter().map(|c| scale * c).collect()))
}

/// `ln Z_N(g⁽ⁱ⁾)` for every disorder draw of the bank.
pub fn free_energy_sample<T: Real>(params: &SkParams<T>, bank: &SampleBank) -> Result<ValueSample<T>> {
    if bank.dim() != params.disorder_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.disorder_dim(),
            got: bank.dim(),
        });
    }
    let values = (0..bank.len())
        .into_par_iter()
        .map_init(
            || vec![T::zero(); bank.dim()],
            |buf, i| {
                bank.fill(i, buf);
                log_partition_of(params, buf)
            },
        )
        .collect::<Result<Vec<T>>>()?;
    ValueSample::new(values, bank.seed())
}

pub fn free_energy_variance<T: Real>(params: &SkParams<T>, bank: &SampleBank) -> Result<MomentEstimate<T>> {
    Ok(free_energy_sample(params, bank)?.moments())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GammaCurve<T> {
    pub params: SkParams<T>,
    pub lambdas: Vec<T>,
    pub gamma: Vec<T>,
    pub stderr: Vec<T>,
    pub n_disorder: usize,
    pub seed: u64,
}

impl<T: Real> GammaCurve<T> {
    pub fn from_sample(params: SkParams<T>, sample: &ValueSample<T>, lambdas: &[T]) -> Result<Self> {
        let curve = sample.curve(lambdas)?;
        let n = T::of_usize(params.n_spins);
        Ok(Self {
            params,
            lambdas: curve.lambdas,
            gamma: curve.phi.iter().map(|&p| p / n).collect(),
            stderr: curve.stderr.iter().map(|&s| s / n).collect(),
            n_disorder: curve.m,
            seed: curve.seed,
        })
    }

    /// `Φ_N = N Γ_N`, the log-MGF curve of `F_N` itself.
    pub fn to_phi_curve(&self) -> crate::gaussmc::PhiCurve<T> {
        let n = T::of_usize(self.params.n_spins);
        crate::gaussmc::PhiCurve {
            lambdas: self.lambdas.clone(),
            phi: self.gamma.iter().map(|&g| g * n).collect(),
            stderr: self.stderr.iter().map(|&s| s * n).collect(),
            m: self.n_disorder,
            seed: self.seed,
        }
    }

    /// Writes `N,beta,h,lambda,gamma,stderr,n_disorder`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(["N", "beta", "h", "lambda", "gamma", "stderr", "n_disorder"])
            .map_err(io)?;
        for i in 0..self.lambdas.len() {
            out.write_record([
                self.params.n_spins.to_string(),
                fmt17(self.params.beta),
                fmt17(self.params.h),
                fmt17(self.lambdas[i]),
                fmt17(self.gamma[i]),
                fmt17(self.stderr[i]),
                self.n_disorder.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn gamma_curve<T: Real>(params: &SkParams<T>, lambdas: &[T], bank: &SampleBank) -> Result<GammaCurve<T>> {
    GammaCurve::from_sample(*params, &free_energy_sample(params, bank)?, lambdas)
}

/// Uniform Lipschitz bound `|Γ(λ) − Γ(λ')| ≤ β²|λ − λ'|/2` over all grid
/// pairs, together with monotonicity of Γ in λ.
pub fn check_gamma_lipschitz<T: Real>(curve: &GammaCurve<T>, slack: &SlackPolicy) -> Result<Vec<Check>> {
    if curve.lambdas.len() < 2 {
        return Err(Error::InvalidParameter("Lipschitz check needs at least two grid points".into()));
    }
    let half_beta2 = 0.5 * curve.params.beta.f64().powi(2);
    let (mut lip, mut mono) = (Vec::new(), Vec::new());
    let k = curve.lambdas.len();
    for i in 0..k {
        for j in i + 1..k {
            let (li, lj) = (curve.lambdas[i].f64(), curve.lambdas[j].f64());
            let (gi, gj) = (curve.gamma[i].f64(), curve.gamma[j].f64());
            let se = curve.stderr[i].f64().hypot(curve.stderr[j].f64());
            let bound = half_beta2 * (li - lj).abs();
            lip.push(
                CheckPoint::new(li, bound - (gi - gj).abs(), slack.slack(se))
                    .with("lambda_other", lj)
                    .with("bound", bound)
                    .with("pair_stderr", se),
            );
            // Γ nondecreasing: (Γ(λ_hi) − Γ(λ_lo)) ≥ 0
            let rise = if lj > li { gj - gi } else { gi - gj };
            mono.push(CheckPoint::new(li, rise, slack.slack(se)).with("lambda_other", lj));
        }
    }
    Ok(vec![
        Check::from_points("gamma_lipschitz", lip),
        Check::from_points("gamma_monotone", mono),
    ])
}

/// One row of the quenched/annealed gap trend table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DfmRow {
    pub n_spins: usize,
    pub variance: f64,
    pub variance_per_n: f64,
    pub variance_log_n_per_n: f64,
    pub max_gap_per_lambda: f64,
}

/// `|Γ(λ) − Γ(0)| ≤ (|λ| / 2N) · Var(ln Z_N)` for `λ < 0` at `h = 0`.
pub fn check_dfm_gap<T: Real>(
    params: &SkParams<T>,
    lambdas: &[T],
    bank: &SampleBank,
    slack: &SlackPolicy,
) -> Result<(Check, DfmRow)> {
    if params.h != T::zero() {
        return Err(Error::InvalidParameter(
            "quenched/annealed gap bound is only asserted for h = 0".into(),
        ));
    }
    if let Some(l) = lambdas.iter().find(|&&l| !(l < T::zero())) {
        return Err(Error::InvalidParameter(format!("gap check needs lambda < 0, got {l}")));
    }
    let sample = free_energy_sample(params, bank)?;
    let mom = sample.moments();
    let n = params.n_spins as f64;
    let (var, se_var) = (mom.variance.f64(), mom.stderr_variance.f64());
    let gamma0 = mom.mean.f64() / n;
    let mut points = Vec::new();
    let mut max_ratio = 0.0f64;
    for &l in lambdas {
        let (phi, se_phi) = sample.phi(l);
        let lf = l.f64();
        let gap = (phi.f64() / n - gamma0).abs();
        max_ratio = max_ratio.max(gap / lf.abs());
        let bound = lf.abs() / (2.0 * n) * var;
        let se = ((se_phi.f64() / n).powi(2)
            + (mom.stderr_mean.f64() / n).powi(2)
            + (lf.abs() / (2.0 * n) * se_var).powi(2))
        .sqrt();
        points.push(
            CheckPoint::new(lf, bound - gap, slack.slack(se))
                .with("gap", gap)
                .with("bound", bound),
        );
    }
    let row = DfmRow {
        n_spins: params.n_spins,
        variance: var,
        variance_per_n: var / n,
        variance_log_n_per_n: var * n.ln() / n,
        max_gap_per_lambda: max_ratio,
    };
    Ok((Check::from_points(format!("dfm_gap_N{}", params.n_spins), points), row))
}

/// Gap checks over several sizes with independent banks, plus the trend table.
pub fn dfm_trend<T: Real>(
    sizes: &[usize],
    beta: T,
    lambdas: &[T],
    seed: u64,
    n_disorder: usize,
    slack: &SlackPolicy,
) -> Result<(Vec<Check>, Vec<DfmRow>)> {
    let mut checks = Vec::new();
    let mut rows = Vec::new();
    for &n in sizes {
        let params = SkParams::new(n, beta, T::zero())?;
        let bank = SampleBank::new(crate::gaussmc::derive_seed(seed, 0xD0F0 + n as u64), n * n, n_disorder)?;
        let (c, r) = check_dfm_gap(&params, lambdas, &bank, slack)?;
        checks.push(c);
        rows.push(r);
    }
    Ok((checks, rows))
}

/// Superadditivity of `Φ_N(λ) = λ⁻¹ ln E Z_N^λ` for `λ < 0`:
/// `Φ_{M+N} ≥ Φ_M + Φ_N`, each term estimated on an independent bank.
/// Multiplying through by `λ < 0` reverses the inequality for the bare
/// `ln E Z^λ` values, which are reported alongside.
#[allow(clippy::too_many_arguments)]
pub fn check_superadditivity<T: Real>(
    m_spins: usize,
    n_spins: usize,
    beta: T,
    h: T,
    lambda: T,
    banks: [&SampleBank; 3],
    slack: &SlackPolicy,
) -> Result<Check> {
    if m_spins + n_spins > MAX_SPINS {
        return Err(Error::OutOfRange(format!(
            "M + N = {} exceeds the enumeration budget {MAX_SPINS}",
            m_spins + n_spins
        )));
    }
    if !(lambda < T::zero()) {
        return Err(Error::InvalidParameter(format!("superadditivity needs lambda < 0, got {lambda}")));
    }
    let [bank_joint, bank_m, bank_n] = banks;
    if bank_m.seed() == bank_n.seed() || bank_joint.seed() == bank_m.seed() || bank_joint.seed() == bank_n.seed() {
        return Err(Error::InvalidParameter("superadditivity banks must be independent".into()));
    }
    let sizes = [m_spins + n_spins, m_spins, n_spins];
    let mut log_means = [0.0f64; 3];
    let mut ses = [0.0f64; 3];
    for (k, (&size, bank)) in sizes.iter().zip([bank_joint, bank_m, bank_n]).enumerate() {
        let params = SkParams::new(size, beta, h)?;
        let sample = free_energy_sample(&params, bank)?;
        let (lme, rel_sd) = sample.log_mean_exp(lambda);
        log_means[k] = lme.f64();
        ses[k] = rel_sd.f64() / (sample.len() as f64).sqrt();
    }
    let lf = lambda.f64();
    let margin = (log_means[0] - log_means[1] - log_means[2]) / lf;
    let se = (ses[0].powi(2) + ses[1].powi(2) + ses[2].powi(2)).sqrt() / lf.abs();
    let point = CheckPoint::new(lambda.f64(), margin, slack.slack(se))
        .with("log_mean_joint", log_means[0])
        .with("log_mean_m", log_means[1])
        .with("log_mean_n", log_means[2])
        .with("stderr", se);
    Ok(Check::from_points(
        format!("superadditivity_M{m_spins}_N{n_spins}"),
        vec![point],
    ))
}
