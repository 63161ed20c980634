use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::bank::SampleBank;
use super::reduce;
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::scalar::Real;
use crate::special::clopper_pearson_upper;

/// Below this `|λ|` the curve switches to the sample mean.
pub const LAMBDA_EPS: f64 = 1e-6;

/// Φ(λ) estimates on a λ grid, all drawn from one sample bank.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhiCurve<T> {
    pub lambdas: Vec<T>,
    pub phi: Vec<T>,
    pub stderr: Vec<T>,
    pub m: usize,
    pub seed: u64,
}

impl<T: Real> PhiCurve<T> {
    /// A curve with zero error bars, for negative controls and closed forms.
    pub fn exact(lambdas: Vec<T>, phi: Vec<T>) -> Self {
        let stderr = vec![T::zero(); lambdas.len()];
        Self {
            lambdas,
            phi,
            stderr,
            m: 0,
            seed: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Writes `lambda,phi,stderr,m,seed`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        out.write_record(["lambda", "phi", "stderr", "m", "seed"]).map_err(io)?;
        for i in 0..self.len() {
            out.write_record([
                fmt17(self.lambdas[i]),
                fmt17(self.phi[i]),
                fmt17(self.stderr[i]),
                self.m.to_string(),
                self.seed.to_string(),
            ])
            .map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Formats with 17 significant digits.
pub fn fmt17<T: Real>(x: T) -> String {
    format!("{:.16e}", x.f64())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MomentEstimate<T> {
    pub mean: T,
    pub variance: T,
    pub stderr_mean: T,
    pub stderr_variance: T,
    pub m: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TailEstimate<T> {
    pub t: T,
    pub p_hat: T,
    pub ci_upper_95: T,
    pub count: u64,
    pub m: usize,
}

/// Evaluated values `F(g⁽ⁱ⁾)` of one functional over one bank. Every
/// estimator works from this so that all statistics of a run share the
/// same draws.
#[derive(Clone, Debug)]
pub struct ValueSample<T> {
    values: Vec<T>,
    seed: u64,
}

impl<T: Real> ValueSample<T> {
    pub fn new(values: Vec<T>, seed: u64) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter("empty value sample".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("functional value at sample {i}")));
        }
        Ok(Self { values, seed })
    }

    /// Evaluates `f` at every vector of `bank`, in parallel.
    pub fn evaluate(f: &Functional<T>, bank: &SampleBank) -> Result<Self> {
        if bank.dim() != f.dim() {
            return Err(Error::DimensionMismatch {
                expected: f.dim(),
                got: bank.dim(),
            });
        }
        let values: Vec<T> = (0..bank.len())
            .into_par_iter()
            .map_init(
                || vec![T::zero(); bank.dim()],
                |buf, i| {
                    bank.fill(i, buf);
                    f.eval(buf)
                },
            )
            .collect::<Result<Vec<T>>>()?;
        Self::new(values, bank.seed())
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mean(&self) -> T {
        reduce::sum(&self.values) / T::of_usize(self.len())
    }

    /// Unbiased mean and variance with standard errors (two-pass).
    pub fn moments(&self) -> MomentEstimate<T> {
        let m = self.len();
        let mf = T::of_usize(m);
        let mean = self.mean();
        if m < 2 {
            return MomentEstimate {
                mean,
                variance: T::zero(),
                stderr_mean: T::infinity(),
                stderr_variance: T::infinity(),
                m,
            };
        }
        let ss = reduce::sum_map(&self.values, |x| (x - mean).powi(2));
        let s4 = reduce::sum_map(&self.values, |x| (x - mean).powi(4));
        let variance = ss / (mf - T::one());
        let m4 = s4 / mf;
        // Var(s²) ≈ (μ₄ − σ⁴ (m−3)/(m−1)) / m
        let var_of_var = (m4 - variance * variance * (mf - T::of(3.0)) / (mf - T::one())) / mf;
        MomentEstimate {
            mean,
            variance,
            stderr_mean: (variance / mf).sqrt(),
            stderr_variance: var_of_var.max(T::zero()).sqrt(),
            m,
        }
    }

    /// `ln( m⁻¹ Σ e^{λ F_i} )` and the relative sample standard deviation
    /// `sd(e^{λF}) / mean(e^{λF})`, both formed in log space.
    pub fn log_mean_exp(&self, lambda: T) -> (T, T) {
        let mf = T::of_usize(self.len());
        let lse = reduce::log_sum_exp_map(&self.values, |x| lambda * x);
        let lme = lse - mf.ln();
        if self.len() < 2 {
            return (lme, T::infinity());
        }
        let ss = reduce::sum_map(&self.values, |x| ((lambda * x - lme).exp() - T::one()).powi(2));
        (lme, (ss / (mf - T::one())).sqrt())
    }

    /// Φ̂(λ) and its delta-method standard error.
    pub fn phi(&self, lambda: T) -> (T, T) {
        let mf = T::of_usize(self.len());
        if lambda.abs() < T::of(LAMBDA_EPS) {
            let mom = self.moments();
            return (mom.mean, mom.stderr_mean);
        }
        let (lme, rel_sd) = self.log_mean_exp(lambda);
        (lme / lambda, rel_sd / (mf.sqrt() * lambda.abs()))
    }

    pub fn curve(&self, lambdas: &[T]) -> Result<PhiCurve<T>> {
        if let Some(l) = lambdas.iter().find(|l| !l.is_finite()) {
            return Err(Error::NonFinite(format!("lambda grid entry {l}")));
        }
        let (phi, stderr) = lambdas.iter().map(|&l| self.phi(l)).unzip();
        Ok(PhiCurve {
            lambdas: lambdas.to_vec(),
            phi,
            stderr,
            m: self.len(),
            seed: self.seed,
        })
    }

    /// Empirical `P(F − center ≤ −t)` with a Clopper–Pearson upper limit.
    pub fn lower_tail(&self, center: T, t: T) -> TailEstimate<T> {
        let count = reduce::count(&self.values, |x| x - center <= -t);
        let m = self.len();
        TailEstimate {
            t,
            p_hat: T::of(count as f64 / m as f64),
            ci_upper_95: T::of(clopper_pearson_upper(count, m as u64, 0.05)),
            count,
            m,
        }
    }
}

pub fn make_bank(seed: u64, n: usize, m: usize) -> Result<SampleBank> {
    SampleBank::new(seed, n, m)
}

pub fn estimate_phi_curve<T: Real>(f: &Functional<T>, bank: &SampleBank, lambdas: &[T]) -> Result<PhiCurve<T>> {
    ValueSample::evaluate(f, bank)?.curve(lambdas)
}

pub fn estimate_moments<T: Real>(f: &Functional<T>, bank: &SampleBank) -> Result<MomentEstimate<T>> {
    Ok(ValueSample::evaluate(f, bank)?.moments())
}

/// Lower tail around the bank's own sample mean.
pub fn estimate_tail<T: Real>(f: &Functional<T>, bank: &SampleBank, t: T) -> Result<TailEstimate<T>> {
    if !(t > T::zero()) {
        return Err(Error::InvalidParameter(format!("tail level t must be positive, got {t}")));
    }
    let sample = ValueSample::evaluate(f, bank)?;
    let mean = sample.mean();
    Ok(sample.lower_tail(mean, t))
}
