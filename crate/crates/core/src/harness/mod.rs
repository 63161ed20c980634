//! Experiment orchestration: turns a [`RunConfig`] into checks, data files
//! and a [`RunReport`].

pub mod config;
pub mod report;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

pub use config::{Experiment, Format, Overrides, RunConfig, Target};
pub use report::emit_report;

use crate::auditor::{self, AuditConfig, AuditReport};
use crate::bdcontrol::{
    build_value_grid, check_grid_convexity, control_objective, hjb_residual, verify_representation, ControlProblem,
    DriftPolicy, PolicyOutcome,
};
use crate::check::{Check, CheckPoint};
use crate::error::{Error, Result};
use crate::functionals::Functional;
use crate::gaussmc::{derive_seed, SampleBank};
use crate::skmodel::{
    check_gamma_lipschitz, check_superadditivity, dfm_trend, free_energy_sample, DfmRow, GammaCurve, SkParams,
};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, Serialize)]
pub struct SkReport {
    pub curve: GammaCurve<f64>,
    pub checks: Vec<Check>,
    pub dfm_table: Vec<DfmRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ControlReport {
    pub functional: String,
    pub lambda: f64,
    pub steps: usize,
    pub dx: f64,
    pub x_max: f64,
    pub phi_quadrature: f64,
    pub hjb_residual: f64,
    pub outcomes: Vec<PolicyOutcome>,
    pub checks: Vec<Check>,
}

/// Everything a run produces. Wall-clock timings are kept out of the
/// serialized form so that identical configs give identical bytes.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub version: &'static str,
    pub config: RunConfig,
    pub pass: bool,
    pub audit: Vec<AuditReport>,
    pub sk: Option<SkReport>,
    pub control: Vec<ControlReport>,
    /// Data files relative to the output directory.
    pub files: Vec<String>,
    #[serde(skip)]
    pub timing: BTreeMap<String, f64>,
}

impl RunReport {
    /// `(scope, check)` for every check in the run, in report order.
    pub fn checks(&self) -> Vec<(String, &Check)> {
        let mut out = Vec::new();
        for a in &self.audit {
            out.extend(a.checks.iter().map(|c| (format!("audit {}", a.functional), c)));
        }
        if let Some(sk) = &self.sk {
            out.extend(sk.checks.iter().map(|c| ("sk".to_string(), c)));
        }
        for r in &self.control {
            out.extend(r.checks.iter().map(|c| (format!("control {} lambda={}", r.functional, r.lambda), c)));
        }
        out
    }
}

/// Exit status of a finished or failed run.
pub fn exit_code(outcome: &Result<RunReport>) -> i32 {
    match outcome {
        Ok(r) if r.pass => 0,
        Ok(_) => 1,
        Err(e) => error_exit_code(e),
    }
}

/// Bad input is a configuration error (2); numerical failures during a
/// run count as failed checks (1).
pub fn error_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::InvalidParameter(_)
        | Error::OutOfRange(_)
        | Error::DimensionMismatch { .. }
        | Error::NonUniformGrid => 2,
        Error::NonFinite(_) | Error::PathExplosion { .. } | Error::Io(_) => 1,
    }
}

struct Sink<'a> {
    dir: Option<&'a Path>,
    files: Vec<String>,
}

impl Sink<'_> {
    fn write(&mut self, name: &str, body: impl FnOnce(BufWriter<File>) -> Result<()>) -> Result<()> {
        if let Some(dir) = self.dir {
            std::fs::create_dir_all(dir)?;
            body(BufWriter::new(File::create(dir.join(name))?))?;
            self.files.push(name.to_string());
        }
        Ok(())
    }
}

fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Runs the configured experiment(s), writing data files to `config.out`.
pub fn run(config: &RunConfig) -> Result<RunReport> {
    config.validate()?;
    let mut sink = Sink {
        dir: config.out.as_deref(),
        files: Vec::new(),
    };
    let mut timing = BTreeMap::new();
    let (mut audit, mut sk, mut control) = (Vec::new(), None, Vec::new());
    let wants = |e: Experiment| config.experiment == e || config.experiment == Experiment::All;

    if wants(Experiment::Audit) {
        let t = Instant::now();
        audit = run_audit(config, &mut sink)?;
        timing.insert("audit".into(), t.elapsed().as_secs_f64());
    }
    if wants(Experiment::Sk) {
        let t = Instant::now();
        sk = Some(run_sk(config, &mut sink)?);
        timing.insert("sk".into(), t.elapsed().as_secs_f64());
    }
    if wants(Experiment::Control) {
        let t = Instant::now();
        control = run_control(config, &mut sink)?;
        timing.insert("control".into(), t.elapsed().as_secs_f64());
    }
    let mut report = RunReport {
        version: VERSION,
        config: config.clone(),
        pass: true,
        audit,
        sk,
        control,
        files: sink.files,
        timing,
    };
    report.pass = report.checks().iter().all(|(_, c)| c.pass);
    Ok(report)
}

fn audit_config(config: &RunConfig) -> Result<AuditConfig> {
    let mut cfg = AuditConfig::new(config.seed);
    cfg.samples = config.samples;
    cfg.sk_disorder_samples = config.sk.disorder_samples;
    cfg.convexity_grid = config.lambda_points("-3:3:0.25")?;
    let negative: Vec<f64> = cfg.convexity_grid.iter().copied().filter(|&l| l <= 0.0).collect();
    if !negative.is_empty() {
        cfg.negative_grid = negative;
    }
    cfg.t_grid = config.t_points()?;
    cfg.slack = config.slack;
    Ok(cfg)
}

fn run_audit(config: &RunConfig, sink: &mut Sink) -> Result<Vec<AuditReport>> {
    let cfg = audit_config(config)?;
    let mut reports = Vec::new();
    for spec in &config.functionals {
        for target in config::parse_functional_list(spec)? {
            let report = match target {
                Target::Functional(f) => auditor::audit_all(&f, &cfg)?,
                Target::SyntheticConcave => {
                    let f = Functional::linear(vec![1.0], 0.0)?;
                    let curve = auditor::synthetic_concave_curve(&cfg.convexity_grid);
                    let mut r = auditor::audit_with(&f, &cfg, Some(curve.clone()))?;
                    r.functional = "synthetic-concave".into();
                    r.curve = curve;
                    r
                }
            };
            let name = format!("audit_{:02}_{}_phi.csv", reports.len(), file_stem(&report.functional));
            sink.write(&name, |w| report.curve.write_csv(w))?;
            reports.push(report);
        }
    }
    Ok(reports)
}

fn run_sk(config: &RunConfig, sink: &mut Sink) -> Result<SkReport> {
    let sk = &config.sk;
    let slack = &config.slack;
    let params = SkParams::new(sk.n_spins, sk.beta, sk.h)?;
    let lambdas = config.lambda_points("-2:0:0.25")?;
    let bank = SampleBank::new(derive_seed(config.seed, 1), params.disorder_dim(), sk.disorder_samples)?;
    let sample = free_energy_sample(&params, &bank)?;
    let curve = GammaCurve::from_sample(params, &sample, &lambdas)?;
    sink.write("sk_gamma.csv", |w| curve.write_csv(w))?;

    let mut checks = Vec::new();
    if lambdas.len() >= 2 {
        checks.extend(check_gamma_lipschitz(&curve, slack)?);
    }
    if lambdas.len() >= 3 {
        match auditor::check_convexity(&curve.to_phi_curve(), slack) {
            Ok(mut c) => {
                c.name = "sk_phi_convexity".into();
                checks.push(c);
            }
            Err(Error::NonUniformGrid) => {}
            Err(e) => return Err(e),
        }
    }
    if sk.n_spins == 1 {
        checks.push(single_spin_closed_form(&curve, slack.sigmas));
    }

    let mut dfm_table = Vec::new();
    let negative: Vec<f64> = lambdas.iter().copied().filter(|&l| l < 0.0).collect();
    if sk.h == 0.0 && !negative.is_empty() {
        let (gap_checks, rows) = dfm_trend(&sk.dfm_sizes, sk.beta, &negative, config.seed, sk.disorder_samples, slack)?;
        checks.extend(gap_checks);
        dfm_table = rows;
        sink.write("dfm_trend.csv", |w| write_dfm_table(&dfm_table, w))?;
    }

    for (p, &[m, n]) in sk.superadditivity_pairs.iter().enumerate() {
        let tag = 0x5000 + 8 * p as u64;
        let banks = [
            SampleBank::new(derive_seed(config.seed, tag), (m + n) * (m + n), sk.disorder_samples)?,
            SampleBank::new(derive_seed(config.seed, tag + 1), m * m, sk.disorder_samples)?,
            SampleBank::new(derive_seed(config.seed, tag + 2), n * n, sk.disorder_samples)?,
        ];
        let mut points = Vec::new();
        for &l in &sk.superadditivity_lambdas {
            let c = check_superadditivity(m, n, sk.beta, sk.h, l, [&banks[0], &banks[1], &banks[2]], slack)?;
            points.extend(c.points);
        }
        checks.push(Check::from_points(format!("superadditivity_M{m}_N{n}"), points));
    }
    Ok(SkReport {
        curve,
        checks,
        dfm_table,
    })
}

/// For one spin `ln Z = βx + ln(2 cosh h)`, so `Γ(λ) = ln(2 cosh h) + λβ²/2`.
fn single_spin_closed_form(curve: &GammaCurve<f64>, sigmas: f64) -> Check {
    let p = curve.params;
    let points = (0..curve.lambdas.len())
        .map(|i| {
            let l = curve.lambdas[i];
            let exact = (2.0 * p.h.cosh()).ln() + 0.5 * l * p.beta * p.beta;
            CheckPoint::new(l, -(curve.gamma[i] - exact).abs(), sigmas * curve.stderr[i] + 1e-12)
                .with("exact", exact)
                .with("estimate", curve.gamma[i])
        })
        .collect();
    Check::from_points("gamma_closed_form", points)
}

pub fn write_dfm_table<W: std::io::Write>(rows: &[DfmRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let io = |e: csv::Error| Error::Io(e.to_string());
    out.write_record(["N", "variance", "variance_per_n", "variance_log_n_per_n", "max_gap_per_lambda"])
        .map_err(io)?;
    for r in rows {
        out.write_record([
            r.n_spins.to_string(),
            format!("{:.16e}", r.variance),
            format!("{:.16e}", r.variance_per_n),
            format!("{:.16e}", r.variance_log_n_per_n),
            format!("{:.16e}", r.max_gap_per_lambda),
        ])
        .map_err(io)?;
    }
    out.flush()?;
    Ok(())
}

/// Smallest half-width on the `dx/2` lattice with `x_max ≥ 4 + 4|λ|L`.
pub fn auto_x_max(f: &Functional<f64>, lambda: f64, dx: f64) -> Result<f64> {
    let lip = f
        .lipschitz()
        .ok_or_else(|| Error::Config(format!("{f} has no Lipschitz bound; set control.xmax")))?;
    let need = 4.0 + 4.0 * lambda.abs() * lip;
    let half = 0.5 * dx;
    Ok((need / half - 1e-9).ceil() * half)
}

fn run_control(config: &RunConfig, sink: &mut Sink) -> Result<Vec<ControlReport>> {
    let c = &config.control;
    let f = config::parse_functional(&c.functional)?;
    let n = f.dim();
    let mut reports = Vec::new();
    for (idx, &lambda) in c.lambdas.iter().enumerate() {
        let x_max = match c.xmax {
            Some(v) => v,
            None => auto_x_max(&f, lambda, c.dx)?,
        };
        let problem = ControlProblem::new(f.clone(), lambda, c.steps, c.dx, x_max)?;
        let grid = build_value_grid(&problem)?;
        let hjb = hjb_residual(&grid)?;
        let subs = [
            DriftPolicy::Zero,
            DriftPolicy::Constant(vec![0.5; n]),
            DriftPolicy::Constant(vec![-0.5; n]),
        ];
        let seed = derive_seed(config.seed, 0xC000 + idx as u64);
        let rep = verify_representation(&grid, &subs, c.paths, seed, &config.slack)?;
        let mut checks = vec![rep.check.clone(), check_grid_convexity(&grid, 1e-6)];
        if f.is_smooth() {
            checks.push(Check::from_points(
                "hjb_residual",
                vec![CheckPoint::new(0.0, c.hjb_tol - hjb, 0.0).with("residual", hjb)],
            ));
        }
        let stem = format!("control_{idx}_{}", file_stem(&f.to_string()));
        if c.write_grid {
            sink.write(&format!("{stem}_grid.csv"), |w| grid.write_csv(w))?;
        }
        if c.write_paths {
            let ens = control_objective(&problem, &DriftPolicy::OptimalFromGrid(&grid), c.paths, seed)?;
            sink.write(&format!("{stem}_paths.csv"), |w| ens.write_csv(w))?;
        }
        reports.push(ControlReport {
            functional: f.to_string(),
            lambda,
            steps: c.steps,
            dx: c.dx,
            x_max,
            phi_quadrature: rep.phi_quadrature,
            hjb_residual: hjb,
            outcomes: rep.outcomes,
            checks,
        });
    }
    Ok(reports)
}
