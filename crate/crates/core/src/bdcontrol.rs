//! Discretized stochastic-control representation of the smoothed log-MGF
//! `Φ(s, x) = λ⁻¹ ln E e^{λF(x + √(1−s) g)}` in dimension one or two.
//!
//! `Φ` is tabulated on a space-time grid by quadrature, the HJB equation
//! `∂ₛΦ = −½(ΔΦ + λ‖∇Φ‖²)` is checked by finite differences, and the
//! payoff `F(Y(1)) − (λ/2)∫‖u‖²` is simulated by Euler–Maruyama for
//! grid-optimal and suboptimal drifts.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::check::{Check, CheckPoint, SlackPolicy};
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::gaussmc::{fmt17, reduce, QuadRule, Quadrature, SampleBank};
use crate::scalar::Real;

pub const MAX_CONTROL_DIM: usize = 2;
/// Largest tolerated fraction of clamped path steps.
pub const MAX_CLAMP_FRACTION: f64 = 0.01;

#[derive(Clone, Debug)]
pub struct ControlProblem<T> {
    functional: Functional<T>,
    lambda: T,
    steps: usize,
    dx: T,
    x_max: T,
    rule: QuadRule,
}

impl<T: Real> ControlProblem<T> {
    /// Validates the box against `x_max ≥ 4 + 4|λ| sup‖∂F‖` and requires the
    /// spacing to divide `2 x_max`, so that the origin is a node.
    pub fn new(functional: Functional<T>, lambda: T, steps: usize, dx: T, x_max: T) -> Result<Self> {
        let n = functional.dim();
        if n == 0 || n > MAX_CONTROL_DIM {
            return Err(Error::OutOfRange(format!("control problems need dimension 1 or 2, got {n}")));
        }
        if !(lambda.abs() > T::zero()) || !lambda.is_finite() {
            return Err(Error::InvalidParameter("lambda must be finite and nonzero".into()));
        }
        if steps < 4 {
            return Err(Error::InvalidParameter(format!("need at least 4 time steps, got {steps}")));
        }
        if !(dx > T::zero()) || !(x_max > T::zero()) {
            return Err(Error::InvalidParameter("dx and x_max must be positive".into()));
        }
        let cells = (T::of(2.0) * x_max / dx).f64();
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 2.0 {
            return Err(Error::InvalidParameter(format!(
                "2*x_max/dx must be an integer >= 2, got {cells}"
            )));
        }
        let rule = if n == 1 {
            QuadRule::Adaptive { tol: 1e-11 }
        } else {
            QuadRule::GaussHermite { nodes_per_dim: 64 }
        };
        let problem = Self {
            functional,
            lambda,
            steps,
            dx,
            x_max,
            rule,
        };
        let sup = problem.sup_subgradient_norm()?;
        let need = T::of(4.0) + T::of(4.0) * lambda.abs() * sup;
        if x_max < need {
            return Err(Error::InvalidParameter(format!(
                "x_max = {x_max} is below 4 + 4|lambda| sup|grad F| = {need}"
            )));
        }
        Ok(problem)
    }

    /// Replaces the quadrature rule used for the value grid.
    pub fn with_rule(mut self, rule: QuadRule) -> Result<Self> {
        Quadrature::new(rule)?;
        self.rule = rule;
        Ok(self)
    }

    pub fn functional(&self) -> &Functional<T> {
        &self.functional
    }

    pub fn lambda(&self) -> T {
        self.lambda
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> T {
        T::one() / T::of_usize(self.steps)
    }

    pub fn dx(&self) -> T {
        self.dx
    }

    pub fn x_max(&self) -> T {
        self.x_max
    }

    pub fn rule(&self) -> QuadRule {
        self.rule
    }

    pub fn dim(&self) -> usize {
        self.functional.dim()
    }

    /// Nodes per axis; odd, with the origin at the middle index.
    pub fn nodes_per_axis(&self) -> usize {
        (T::of(2.0) * self.x_max / self.dx).f64().round() as usize + 1
    }

    pub fn coordinate(&self, idx: usize) -> T {
        -self.x_max + T::of_usize(idx) * self.dx
    }

    fn node_point(&self, flat: usize) -> Vec<T> {
        let nx = self.nodes_per_axis();
        let mut rem = flat;
        (0..self.dim())
            .map(|_| {
                let i = rem % nx;
                rem /= nx;
                self.coordinate(i)
            })
            .collect()
    }

    fn sup_subgradient_norm(&self) -> Result<T> {
        let nodes = self.nodes_per_axis().pow(self.dim() as u32);
        let mut sup = T::zero();
        for flat in 0..nodes {
            let g = self.functional.subgradient(&self.node_point(flat))?;
            let norm = g.iter().map(|&v| v * v).sum::<T>().sqrt();
            sup = sup.max(norm);
        }
        Ok(sup)
    }
}

/// `Φ(s_k, x)` and `∇Φ(s_k, x)` on every node; layer `k = steps` is `F`.
#[derive(Clone, Debug)]
pub struct ValueGrid<T> {
    problem: ControlProblem<T>,
    values: Vec<T>,
    gradients: Vec<T>,
}

impl<T: Real> ValueGrid<T> {
    pub fn problem(&self) -> &ControlProblem<T> {
        &self.problem
    }

    fn layer_len(&self) -> usize {
        self.problem.nodes_per_axis().pow(self.problem.dim() as u32)
    }

    /// Value at time index `k` and per-axis node indices `idx`.
    pub fn value(&self, k: usize, idx: &[usize]) -> T {
        self.values[k * self.layer_len() + self.flat(idx)]
    }

    pub fn gradient(&self, k: usize, idx: &[usize]) -> Vec<T> {
        let n = self.problem.dim();
        let at = (k * self.layer_len() + self.flat(idx)) * n;
        self.gradients[at..at + n].to_vec()
    }

    /// `Φ(0, 0)`, which equals `Φ(λ)` of the functional.
    pub fn phi_at_origin(&self) -> T {
        let mid = self.problem.nodes_per_axis() / 2;
        self.value(0, &vec![mid; self.problem.dim()])
    }

    fn flat(&self, idx: &[usize]) -> usize {
        let nx = self.problem.nodes_per_axis();
        idx.iter().rev().fold(0, |acc, &i| acc * nx + i)
    }

    /// Multilinear interpolation of `∇Φ(s_k, ·)` at `x` (clamped to the box).
    pub fn interpolate_gradient(&self, k: usize, x: &[T], out: &mut [T]) {
        let p = &self.problem;
        let n = p.dim();
        let nx = p.nodes_per_axis();
        let mut base = [0usize; MAX_CONTROL_DIM];
        let mut frac = [T::zero(); MAX_CONTROL_DIM];
        for d in 0..n {
            let u = ((x[d] + p.x_max) / p.dx).max(T::zero());
            let i = (u.floor().to_usize().unwrap_or(0)).min(nx - 2);
            base[d] = i;
            frac[d] = (u - T::of_usize(i)).min(T::one());
        }
        out.iter_mut().for_each(|v| *v = T::zero());
        let layer = k * self.layer_len();
        for corner in 0..(1usize << n) {
            let mut weight = T::one();
            let mut flat = 0;
            let mut stride = 1;
            for d in 0..n {
                let hi = (corner >> d) & 1 == 1;
                weight = weight * if hi { frac[d] } else { T::one() - frac[d] };
                flat += (base[d] + hi as usize) * stride;
                stride *= nx;
            }
            let at = (layer + flat) * n;
            for (o, &g) in out.iter_mut().zip(&self.gradients[at..at + n]) {
                *o = *o + weight * g;
            }
        }
    }

    /// Writes `s,x1[,x2],phi,grad1[,grad2]` for every node.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let p = &self.problem;
        let n = p.dim();
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["s".to_string()];
        header.extend((1..=n).map(|d| format!("x{d}")));
        header.push("phi".into());
        header.extend((1..=n).map(|d| format!("grad{d}")));
        out.write_record(&header).map_err(io)?;
        let len = self.layer_len();
        for k in 0..=p.steps {
            let s = T::of_usize(k) * p.dt();
            for flat in 0..len {
                let mut row = vec![fmt17(s)];
                row.extend(p.node_point(flat).into_iter().map(fmt17));
                row.push(fmt17(self.values[k * len + flat]));
                let at = (k * len + flat) * n;
                row.extend(self.gradients[at..at + n].iter().map(|&g| fmt17(g)));
                out.write_record(&row).map_err(io)?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Tabulates `Φ(s, x)` by quadrature at every node with scale `√(1−s)`;
/// gradients by centered differences, one-sided at the box faces.
pub fn build_value_grid<T: Real>(problem: &ControlProblem<T>) -> Result<ValueGrid<T>> {
    let quad = Quadrature::new(problem.rule)?;
    let n = problem.dim();
    let nx = problem.nodes_per_axis();
    let layer = nx.pow(n as u32);
    let steps = problem.steps;
    let total = (steps + 1) * layer;
    let dt = problem.dt();
    let f = &problem.functional;

    let values: Vec<T> = (0..total)
        .into_par_iter()
        .map(|flat| {
            let k = flat / layer;
            let x = problem.node_point(flat % layer);
            if k == steps {
                return f.eval(&x);
            }
            let scale = (T::one() - T::of_usize(k) * dt).max(T::zero()).sqrt();
            quad.smoothed_phi(f, problem.lambda, &x, scale).map_err(|e| {
                Error::NonFinite(format!("value grid node s={}, x={x:?}: {e}", T::of_usize(k) * dt))
            })
        })
        .collect::<Result<_>>()?;

    let mut gradients = vec![T::zero(); total * n];
    gradients
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(flat, g)| {
            let k = flat / layer;
            let node = flat % layer;
            let mut stride = 1;
            for gd in g.iter_mut() {
                let i = (node / stride) % nx;
                let at = |j: usize| values[k * layer + node - i * stride + j * stride];
                *gd = if i == 0 {
                    (at(1) - at(0)) / problem.dx
                } else if i == nx - 1 {
                    (at(nx - 1) - at(nx - 2)) / problem.dx
                } else {
                    (at(i + 1) - at(i - 1)) / (T::of(2.0) * problem.dx)
                };
                stride *= nx;
            }
        });

    Ok(ValueGrid {
        problem: problem.clone(),
        values,
        gradients,
    })
}

/// Max over interior nodes and `1 ≤ k ≤ steps − 2` of
/// `|∂ₛΦ + ½(ΔΦ + λ‖∇Φ‖²)|` with centered differences in `s` and `x`.
pub fn hjb_residual<T: Real>(grid: &ValueGrid<T>) -> Result<T> {
    Ok(hjb_residual_profile(grid)?
        .into_iter()
        .map(|(_, r)| r)
        .fold(T::zero(), |a, b| a.max(b)))
}

/// Per-layer maxima `(s_k, residual_k)` behind [`hjb_residual`]. Near `s = 1`
/// the smoothing scale `√(1 − s)` drops below `dx` and a kink in `F` shows up
/// as an O(1) residual there.
pub fn hjb_residual_profile<T: Real>(grid: &ValueGrid<T>) -> Result<Vec<(T, T)>> {
    let p = &grid.problem;
    let n = p.dim();
    let nx = p.nodes_per_axis();
    if nx < 3 {
        return Err(Error::InvalidParameter(format!("need at least 3 nodes per axis, got {nx}")));
    }
    let layer = grid.layer_len();
    let dt = p.dt();
    let dx2 = p.dx * p.dx;
    let half = T::of(0.5);
    let v = &grid.values;
    let interior = |node: usize| {
        let mut rem = node;
        (0..n).all(|_| {
            let i = rem % nx;
            rem /= nx;
            i > 0 && i + 1 < nx
        })
    };
    (1..p.steps - 1)
        .into_par_iter()
        .map(|k| {
            let mut worst = T::zero();
            for node in (0..layer).filter(|&nd| interior(nd)) {
                let c = v[k * layer + node];
                let ds = (v[(k + 1) * layer + node] - v[(k - 1) * layer + node]) / (T::of(2.0) * dt);
                let mut lap = T::zero();
                let mut grad2 = T::zero();
                let mut stride = 1;
                for _ in 0..n {
                    let up = v[k * layer + node + stride];
                    let dn = v[k * layer + node - stride];
                    lap = lap + (up - T::of(2.0) * c + dn) / dx2;
                    let g = (up - dn) / (T::of(2.0) * p.dx);
                    grad2 = grad2 + g * g;
                    stride *= nx;
                }
                let r = (ds + half * (lap + p.lambda * grad2)).abs();
                worst = worst.max(r);
            }
            Ok((T::of_usize(k) * dt, worst))
        })
        .collect()
}

/// Second differences of `Φ(s_k, ·)` along each axis, `k < steps`. Convexity
/// in `x` survives Gaussian smoothing, so every margin should be `≥ −tol`.
pub fn check_grid_convexity<T: Real>(grid: &ValueGrid<T>, tol: f64) -> Check {
    let p = &grid.problem;
    let n = p.dim();
    let nx = p.nodes_per_axis();
    let layer = grid.layer_len();
    let worst: Vec<(f64, f64)> = (0..p.steps)
        .into_par_iter()
        .map(|k| {
            let mut w = (f64::INFINITY, 0.0);
            for node in 0..layer {
                let mut stride = 1;
                for _ in 0..n {
                    let i = (node / stride) % nx;
                    if i > 0 && i + 1 < nx {
                        let at = k * layer + node;
                        let d2 = (grid.values[at + stride] - T::of(2.0) * grid.values[at]
                            + grid.values[at - stride])
                            .f64();
                        if d2 < w.0 {
                            w = (d2, (T::of_usize(k) * p.dt()).f64());
                        }
                    }
                    stride *= nx;
                }
            }
            w
        })
        .collect();
    let points = worst
        .into_iter()
        .filter(|w| w.0.is_finite())
        .map(|(d2, s)| CheckPoint::new(s, d2, tol))
        .collect();
    Check::from_points("grid_convexity", points)
}

#[derive(Clone, Debug)]
pub enum DriftPolicy<'a, T> {
    OptimalFromGrid(&'a ValueGrid<T>),
    Constant(Vec<T>),
    Zero,
}

impl<T: Real> DriftPolicy<'_, T> {
    /// `u(s_k, x)`; the grid policy is piecewise constant in `s`.
    pub fn drift(&self, k: usize, x: &[T], out: &mut [T]) {
        match self {
            DriftPolicy::OptimalFromGrid(grid) => grid.interpolate_gradient(k, x, out),
            DriftPolicy::Constant(c) => out.copy_from_slice(c),
            DriftPolicy::Zero => out.iter_mut().for_each(|v| *v = T::zero()),
        }
    }

    pub fn label(&self) -> String {
        match self {
            DriftPolicy::OptimalFromGrid(_) => "optimal".into(),
            DriftPolicy::Constant(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                format!("constant:{}", parts.join(","))
            }
            DriftPolicy::Zero => "zero".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathEnsemble<T> {
    pub n_paths: usize,
    /// Row-major `n_paths × dim`.
    pub terminal: Vec<T>,
    /// `Σ ‖u‖²/2 Δt` per path.
    pub cost: Vec<T>,
    pub payoff: Vec<T>,
    pub objective: T,
    pub stderr: T,
    pub clamped_steps: u64,
    pub clamp_fraction: f64,
}

impl<T: Real> PathEnsemble<T> {
    /// Writes `path,y1[,y2],cost,payoff`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let n = self.terminal.len() / self.n_paths.max(1);
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.to_string());
        let mut header = vec!["path".to_string()];
        header.extend((1..=n).map(|d| format!("y{d}")));
        header.extend(["cost".to_string(), "payoff".to_string()]);
        out.write_record(&header).map_err(io)?;
        for i in 0..self.n_paths {
            let mut row = vec![i.to_string()];
            row.extend(self.terminal[i * n..(i + 1) * n].iter().map(|&v| fmt17(v)));
            row.push(fmt17(self.cost[i]));
            row.push(fmt17(self.payoff[i]));
            out.write_record(&row).map_err(io)?;
        }
        out.flush()?;
        Ok(())
    }
}

struct PathResult<T> {
    terminal: Vec<T>,
    cost: T,
    payoff: T,
    clamped: u64,
}

/// Euler–Maruyama for `dY = λ u(s, Y) ds + dW` from `Y(0) = 0`; the payoff
/// `F(Y(1)) − λ Σ‖u‖²Δt/2` is averaged over paths. Paths leaving the box are
/// clamped to it; more than 1% clamped steps is an error.
pub fn control_objective<T: Real>(
    problem: &ControlProblem<T>,
    policy: &DriftPolicy<'_, T>,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble<T>> {
    if n_paths == 0 {
        return Err(Error::InvalidParameter("need at least one path".into()));
    }
    if let DriftPolicy::Constant(c) = policy {
        if c.len() != problem.dim() {
            return Err(Error::DimensionMismatch { expected: problem.dim(), got: c.len() });
        }
    }
    let n = problem.dim();
    let steps = problem.steps;
    let bank = SampleBank::new(seed, steps * n, n_paths)?;
    let dt = problem.dt();
    let sqrt_dt = dt.sqrt();
    let lambda = problem.lambda;
    let (lo, hi) = (-problem.x_max, problem.x_max);

    let results: Vec<PathResult<T>> = (0..n_paths)
        .into_par_iter()
        .map_init(
            || (vec![T::zero(); steps * n], vec![T::zero(); n]),
            |(noise, u), i| {
                bank.fill(i, noise);
                let mut y = vec![T::zero(); n];
                let mut cost = T::zero();
                let mut clamped = 0u64;
                for k in 0..steps {
                    policy.drift(k, &y, u);
                    let mut u2 = T::zero();
                    let mut hit = false;
                    for d in 0..n {
                        u2 = u2 + u[d] * u[d];
                        let next = y[d] + lambda * u[d] * dt + sqrt_dt * noise[k * n + d];
                        y[d] = next.max(lo).min(hi);
                        hit |= y[d] != next;
                    }
                    clamped += hit as u64;
                    cost = cost + T::of(0.5) * u2 * dt;
                }
                let value = problem.functional.eval(&y).unwrap_or(T::nan());
                PathResult {
                    payoff: value - lambda * cost,
                    terminal: y,
                    cost,
                    clamped,
                }
            },
        )
        .collect();

    let clamped_steps: u64 = results.iter().map(|r| r.clamped).sum();
    let total_steps = (n_paths * steps) as u64;
    if clamped_steps as f64 > MAX_CLAMP_FRACTION * total_steps as f64 {
        return Err(Error::PathExplosion {
            clamped: clamped_steps,
            total: total_steps,
        });
    }
    let payoff: Vec<T> = results.iter().map(|r| r.payoff).collect();
    if let Some(i) = payoff.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("payoff of path {i}")));
    }
    let m = T::of_usize(n_paths);
    let objective = reduce::sum(&payoff) / m;
    let ss = reduce::sum_map(&payoff, |v| (v - objective) * (v - objective));
    let stderr = if n_paths > 1 {
        (ss / (m - T::one()) / m).sqrt()
    } else {
        T::zero()
    };
    Ok(PathEnsemble {
        n_paths,
        terminal: results.iter().flat_map(|r| r.terminal.iter().copied()).collect(),
        cost: results.iter().map(|r| r.cost).collect(),
        payoff,
        objective,
        stderr,
        clamped_steps,
        clamp_fraction: clamped_steps as f64 / total_steps as f64,
    })
}

/// Tolerance on `|objective(optimal) − Φ|`.
pub const REPRESENTATION_TOL: f64 = 0.02;

#[derive(Clone, Debug, Serialize)]
pub struct PolicyOutcome {
    pub policy: String,
    pub objective: f64,
    pub stderr: f64,
    pub clamp_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Representation {
    pub lambda: f64,
    pub phi_quadrature: f64,
    pub outcomes: Vec<PolicyOutcome>,
    pub check: Check,
}

/// Simulates the grid-optimal drift and every suboptimal policy. The optimal
/// objective must be within [`REPRESENTATION_TOL`] of `Φ(0, 0)`; every other
/// objective must sit below `Φ` (λ > 0) or above it (λ < 0) up to slack.
pub fn verify_representation<T: Real>(
    grid: &ValueGrid<T>,
    suboptimal: &[DriftPolicy<'_, T>],
    n_paths: usize,
    seed: u64,
    slack: &SlackPolicy,
) -> Result<Representation> {
    if suboptimal.len() < 2 {
        return Err(Error::InvalidParameter("need at least two suboptimal policies".into()));
    }
    let problem = grid.problem();
    let phi = grid.phi_at_origin().f64();
    let lambda = problem.lambda().f64();
    let mut outcomes = Vec::new();
    let mut points = Vec::new();

    let optimal = control_objective(problem, &DriftPolicy::OptimalFromGrid(grid), n_paths, seed)?;
    let gap = optimal.objective.f64() - phi;
    points.push(
        CheckPoint::new(0.0, REPRESENTATION_TOL - gap.abs(), 0.0)
            .with("objective", optimal.objective.f64())
            .with("stderr", optimal.stderr.f64()),
    );
    outcomes.push(PolicyOutcome {
        policy: "optimal".into(),
        objective: optimal.objective.f64(),
        stderr: optimal.stderr.f64(),
        clamp_fraction: optimal.clamp_fraction,
    });

    for (j, policy) in suboptimal.iter().enumerate() {
        let ens = control_objective(problem, policy, n_paths, seed)?;
        let obj = ens.objective.f64();
        let margin = if lambda > 0.0 { phi - obj } else { obj - phi };
        points.push(
            CheckPoint::new((j + 1) as f64, margin, slack.slack(ens.stderr.f64()))
                .with("objective", obj)
                .with("stderr", ens.stderr.f64()),
        );
        outcomes.push(PolicyOutcome {
            policy: policy.label(),
            objective: obj,
            stderr: ens.stderr.f64(),
            clamp_fraction: ens.clamp_fraction,
        });
    }
    Ok(Representation {
        lambda,
        phi_quadrature: phi,
        outcomes,
        check: Check::from_points("representation", points),
    })
}
