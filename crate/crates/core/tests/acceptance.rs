//! The ten acceptance criteria, run in order at their stated sizes and
//! tolerances. Prints one PASS/FAIL line per criterion followed by details.
//!
//! Criterion 8 is stated for the bare `ln E Z^λ`; for `λ < 0` that
//! inequality points the other way. It is evaluated as stated, reported,
//! and does not change the exit status. Every other failure does.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use glmgf::auditor::{self, arithmetic_grid, geometric_grid};
use glmgf::bdcontrol::{
    build_value_grid, hjb_residual, hjb_residual_profile, verify_representation, ControlProblem, DriftPolicy,
};
use glmgf::functionals::catalog;
use glmgf::gaussmc::{derive_seed, SampleBank, ValueSample};
use glmgf::harness::{auto_x_max, write_dfm_table};
use glmgf::skmodel::{self, log_partition, log_partition_naive};
use glmgf::{Check, CheckPoint, Functional, Kind, ScalarMap, SkInstance, SkParams, SlackPolicy};

const SEED: u64 = 20_240_611;
const M: usize = 1_000_000;
const SK_DISORDER: usize = 10_000;

/// Criteria whose statement is false as written; see the module docs.
const FALSE_AS_STATED: &[usize] = &[8];

struct Outcome {
    pass: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, details: Vec::new() }
    }

    fn require(&mut self, ok: bool, line: String) {
        self.pass &= ok;
        self.details.push(format!("{} {line}", if ok { "ok  " } else { "FAIL" }));
    }

    fn note(&mut self, line: String) {
        self.details.push(format!("     {line}"));
    }
}

fn stderr_of(p: &CheckPoint, slack: &SlackPolicy) -> f64 {
    p.extra
        .get("stderr")
        .copied()
        .unwrap_or((p.slack - slack.abs_tol) / slack.sigmas)
}

fn summary(c: &Check) -> String {
    format!(
        "{:<24} pass={} worst_margin={:+.3e} at {:?} slack={:.3e}",
        c.name, c.pass, c.worst_margin, c.location, c.slack_used
    )
}

/// Exact `λ⁻¹ ln E e^{λ|g|}`: `E e^{λ|g|} = 2 e^{λ²/2} N(λ)`, with `N` from
/// `erfc` by series and continued fraction.
fn abs_phi(lambda: f64) -> f64 {
    fn erfc(x: f64) -> f64 {
        if x < 0.0 {
            return 2.0 - erfc(-x);
        }
        if x < 2.0 {
            let (mut term, mut sum) = (x, x);
            for n in 1..80 {
                term *= -x * x / n as f64;
                sum += term / (2 * n + 1) as f64;
            }
            return 1.0 - 2.0 / PI.sqrt() * sum;
        }
        let mut cf = 0.0;
        for k in (1..200).rev() {
            cf = (k as f64 / 2.0) / (x + cf);
        }
        (-x * x).exp() / PI.sqrt() / (x + cf)
    }
    let cdf = 0.5 * erfc(-lambda / 2f64.sqrt());
    (2.0 * (0.5 * lambda * lambda).exp() * cdf).ln() / lambda
}

struct CatalogSamples {
    functionals: Vec<Functional<f64>>,
    samples: Vec<ValueSample<f64>>,
}

fn catalog_samples() -> CatalogSamples {
    let functionals = catalog();
    let samples = functionals
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let m = if matches!(f.kind(), Kind::SkFreeEnergy { .. }) { SK_DISORDER } else { M };
            let bank = SampleBank::new(derive_seed(SEED, 0x100 + i as u64), f.dim(), m).unwrap();
            ValueSample::evaluate(f, &bank).unwrap()
        })
        .collect();
    CatalogSamples { functionals, samples }
}

fn criterion_1() -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let lin = Functional::<f64>::linear(vec![1.0], 0.0).unwrap();
    let bank = SampleBank::new(derive_seed(SEED, 1), 1, M).unwrap();
    let lambdas = [-2.0, -1.0, -0.5, 0.5, 1.0, 2.0];
    let curve = ValueSample::evaluate(&lin, &bank).unwrap().curve(&lambdas).unwrap();
    let secs = t.elapsed().as_secs_f64();
    for i in 0..curve.len() {
        let (l, phi, se) = (curve.lambdas[i], curve.phi[i], curve.stderr[i]);
        let dev = (phi - l / 2.0).abs();
        out.require(dev <= 3.0 * se, format!("linear λ={l:+}: Φ̂={phi:.6} exact={:.6} |dev|={dev:.2e} 3se={:.2e}", l / 2.0, 3.0 * se));
    }
    out.require(secs < 5.0, format!("linear curve at m=1e6 in {secs:.2}s (< 5s)"));

    let norm = Functional::<f64>::euclid_norm(1).unwrap();
    let bank = SampleBank::new(derive_seed(SEED, 2), 1, M).unwrap();
    let curve = ValueSample::evaluate(&norm, &bank).unwrap().curve(&[1.0, -1.0]).unwrap();
    for (i, quoted) in [(0usize, 1.02043), (1, 0.64787)] {
        let (l, phi, se) = (curve.lambdas[i], curve.phi[i], curve.stderr[i]);
        let exact = abs_phi(l);
        out.require(
            (phi - exact).abs() <= 3.0 * se,
            format!("norm λ={l:+}: Φ̂={phi:.6} exact={exact:.6} 3se={:.2e}", 3.0 * se),
        );
        out.require(
            (phi - quoted).abs() <= 3.0 * se,
            format!("norm λ={l:+}: against the quoted {quoted}: |dev|={:.2e}", (phi - quoted).abs()),
        );
    }
    out
}

fn criterion_2(cat: &CatalogSamples, build_secs: f64) -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let t = Instant::now();
    let grid = arithmetic_grid(-3.0, 3.0, 0.25);
    for (f, s) in cat.functionals.iter().zip(&cat.samples) {
        let c = auditor::check_convexity(&s.curve(&grid).unwrap(), &slack).unwrap();
        out.require(c.pass, format!("{f:<40} m={:<8} {}", s.len(), summary(&c)));
    }
    let secs = build_secs + t.elapsed().as_secs_f64();
    out.require(secs < 120.0, format!("sampling and convexity over the catalog in {secs:.1}s (< 120s)"));
    out
}

fn criterion_3(cat: &CatalogSamples) -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let negative = arithmetic_grid(-3.0, 0.0, 0.25);
    let dlog = geometric_grid(-3.0, -0.125, 12);
    for (f, s) in cat.functionals.iter().zip(&cat.samples) {
        let moments = s.moments();
        let checks = [
            auditor::subgaussian_from_sample(s, &negative, &slack).unwrap(),
            auditor::check_phi_gap(&s.curve(&negative).unwrap(), &moments, &slack).unwrap(),
            auditor::check_dlog_lipschitz(&s.curve(&dlog).unwrap(), &moments, &slack).unwrap(),
        ];
        for c in &checks {
            out.require(c.pass, format!("{f:<40} {}", summary(c)));
        }
        if matches!(f.kind(), Kind::Linear { .. }) {
            for c in &checks[..2] {
                let worst = c
                    .points
                    .iter()
                    .filter(|p| stderr_of(p, &slack) > 0.0)
                    .map(|p| p.margin.abs() / stderr_of(p, &slack))
                    .fold(0.0, f64::max);
                out.require(worst <= 4.0, format!("{f:<40} {} at equality: max |margin|/stderr = {worst:.2}", c.name));
            }
        }
    }
    out
}

fn criterion_4(cat: &CatalogSamples) -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let t_grid = arithmetic_grid(0.25, 3.0, 0.25);
    let wanted = ["linear:a=1:b=0", "norm:n=1", "norm:n=5", "lse:n=5:tau=1", "sk:N=4:beta=1:h=0"];
    for name in wanted {
        let Some(i) = cat.functionals.iter().position(|f| f.to_string() == name) else {
            out.require(false, format!("{name} missing from the catalog"));
            continue;
        };
        let (f, s) = (&cat.functionals[i], &cat.samples[i]);
        let lip = f.lipschitz();
        let c = auditor::small_deviation_from_sample(s, lip, &t_grid, &slack).unwrap();
        out.require(c.pass, format!("{name:<24} {}", summary(&c)));
        if let Some(l) = lip {
            let v = auditor::check_variance_vs_lipschitz(&s.moments(), l, &slack);
            out.require(v.pass, format!("{name:<24} {}", summary(&v)));
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut out = Outcome::new();
    let t = Instant::now();
    let mut worst = 0.0f64;
    for n in 1..=10 {
        for inst in 0..100u64 {
            let beta = [0.5, 1.0, 2.0][inst as usize % 3];
            let h = [0.0, 0.3, -0.7][(inst as usize / 3) % 3];
            let bank = SampleBank::new(derive_seed(SEED, 0x5_0000 + 1000 * n as u64 + inst), n * n, 1).unwrap();
            let sk = SkInstance::new(SkParams::new(n, beta, h).unwrap(), bank.sample(0)).unwrap();
            let (gray, naive): (f64, f64) = (log_partition(&sk).unwrap(), log_partition_naive(&sk).unwrap());
            worst = worst.max((gray - naive).abs() / naive.abs().max(f64::MIN_POSITIVE));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    out.require(worst <= 1e-9, format!("max relative |Gray − naive| over N=1..10 × 100 = {worst:.2e}"));
    out.require(secs < 30.0, format!("{secs:.2}s (< 30s)"));
    out
}

fn criterion_6() -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let lambdas = arithmetic_grid(-2.0, 0.0, 0.25);
    for (tag, (n, beta, h)) in [(1, 1.0, 0.0), (1, 0.5, 0.4), (4, 0.5, 0.0), (4, 1.0, 0.3), (8, 1.0, 0.0)].into_iter().enumerate() {
        let p = SkParams::new(n, beta, h).unwrap();
        let bank = SampleBank::new(derive_seed(SEED, 0x600 + tag as u64), n * n, SK_DISORDER).unwrap();
        let curve = skmodel::gamma_curve(&p, &lambdas, &bank).unwrap();
        let checks = skmodel::check_gamma_lipschitz(&curve, &slack).unwrap();
        for c in &checks {
            out.require(c.pass, format!("N={n} β={beta} h={h}: {}", summary(c)));
        }
        if n == 1 {
            let worst = checks[0]
                .points
                .iter()
                .map(|p| p.margin.abs() / p.extra["pair_stderr"].max(1e-300))
                .fold(0.0, f64::max);
            out.require(worst <= 4.0, format!("N=1 β={beta} h={h}: slopes at β²/2, max |margin|/pair_stderr = {worst:.2}"));
        }
    }
    out
}

fn criterion_7() -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let lambdas = arithmetic_grid(-2.0, -0.0625, 0.0625);
    let (checks, rows) = skmodel::dfm_trend(&[1, 4, 8], 1.0, &lambdas, SEED, SK_DISORDER, &slack).unwrap();
    for c in &checks {
        out.require(c.pass, summary(c));
    }
    let mut table = Vec::new();
    write_dfm_table(&rows, &mut table).unwrap();
    for line in String::from_utf8(table).unwrap().lines() {
        out.note(line.to_string());
    }
    out
}

fn criterion_8() -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let mut normalized_ok = true;
    let mut worst_literal = f64::INFINITY;
    for (p, (m, n)) in [(1usize, 1usize), (2, 2), (4, 4)].into_iter().enumerate() {
        let tag = 0x800 + 8 * p as u64;
        let banks = [
            SampleBank::new(derive_seed(SEED, tag), (m + n) * (m + n), SK_DISORDER).unwrap(),
            SampleBank::new(derive_seed(SEED, tag + 1), m * m, SK_DISORDER).unwrap(),
            SampleBank::new(derive_seed(SEED, tag + 2), n * n, SK_DISORDER).unwrap(),
        ];
        for beta in [0.5, 1.0] {
            for h in [0.0, 0.3] {
                for lambda in [-1.0f64, -0.5] {
                    let c = skmodel::check_superadditivity(m, n, beta, h, lambda, [&banks[0], &banks[1], &banks[2]], &slack)
                        .unwrap();
                    let pt = &c.points[0];
                    let (joint, lm, ln) = (pt.extra["log_mean_joint"], pt.extra["log_mean_m"], pt.extra["log_mean_n"]);
                    let literal = joint - lm - ln;
                    let literal_slack = slack.slack(pt.extra["stderr"] * lambda.abs());
                    worst_literal = worst_literal.min(literal + literal_slack);
                    normalized_ok &= c.pass;
                    out.require(
                        literal >= -literal_slack,
                        format!(
                            "M={m} N={n} β={beta} h={h} λ={lambda}: ln E Z_(M+N)^λ − ln E Z_M^λ − ln E Z_N^λ = {literal:+.4e} (slack {literal_slack:.1e}); λ⁻¹-normalized margin {:+.4e}",
                            pt.margin
                        ),
                    );
                }
            }
        }
    }
    out.note(format!("as stated: worst margin + slack = {worst_literal:+.4e}"));
    out.note(format!(
        "λ⁻¹ ln E Z^λ form (superadditivity of Φ_N for λ < 0) holds at every point: {normalized_ok}"
    ));
    out.note("e.g. M=N=1, β=1, h=0, λ=−1: ln E Z_1^λ = −ln 2 + 1/2 each, while ln E Z_2^λ ≈ −1.21 < −0.386".into());
    out
}

struct Hjb {
    coarse: f64,
    fine: f64,
}

fn hjb_pair(f: &Functional<f64>, lambda: f64, x_max: f64) -> Hjb {
    let run = |steps, dx| {
        let p = ControlProblem::new(f.clone(), lambda, steps, dx, x_max).unwrap();
        hjb_residual(&build_value_grid(&p).unwrap()).unwrap()
    };
    Hjb { coarse: run(1000, 0.05), fine: run(2000, 0.025) }
}

const ROUNDOFF_FLOOR: f64 = 1e-9;

fn criterion_9() -> Outcome {
    let mut out = Outcome::new();
    let slack = SlackPolicy::default();
    let (steps, dx, paths) = (1000usize, 0.05, 100_000usize);
    let cases: [(&str, Functional<f64>); 2] = [
        ("norm:n=1", Functional::euclid_norm(1).unwrap()),
        ("lse:n=1:tau=1", Functional::log_sum_exp(1, 1.0).unwrap()),
    ];
    for (ci, (name, f)) in cases.iter().enumerate() {
        for (li, lambda) in [1.0, -1.0].into_iter().enumerate() {
            let t = Instant::now();
            let x_max = auto_x_max(f, lambda, dx).unwrap();
            let problem = ControlProblem::new(f.clone(), lambda, steps, dx, x_max).unwrap();
            let grid = build_value_grid(&problem).unwrap();
            let subs = [DriftPolicy::Zero, DriftPolicy::Constant(vec![0.5]), DriftPolicy::Constant(vec![-0.5])];
            let seed = derive_seed(SEED, 0x900 + 2 * ci as u64 + li as u64);
            let rep = verify_representation(&grid, &subs, paths, seed, &slack).unwrap();
            let secs = t.elapsed().as_secs_f64();
            let opt = &rep.outcomes[0];
            let gap = opt.objective - rep.phi_quadrature;
            out.require(
                gap.abs() <= 0.02,
                format!("{name} λ={lambda:+}: Φ_quad={:.6} optimal={:.6}±{:.1e} |gap|={:.2e}", rep.phi_quadrature, opt.objective, opt.stderr, gap.abs()),
            );
            for (pt, o) in rep.check.points.iter().zip(&rep.outcomes).skip(1) {
                out.require(pt.holds(), format!("{name} λ={lambda:+}: {:<16} objective={:.6} direction margin={:+.3e}", o.policy, o.objective, pt.margin));
            }
            out.require(secs < 60.0, format!("{name} λ={lambda:+}: grid + {} policies × {paths} paths in {secs:.1}s (< 60s)", rep.outcomes.len()));
            if *name == "norm:n=1" {
                let profile = hjb_residual_profile(&grid).unwrap();
                let upto = |cut: f64| profile.iter().filter(|(s, _)| *s <= cut).map(|r| r.1).fold(0.0, f64::max);
                out.note(format!(
                    "{name} λ={lambda:+}: HJB residual over s ≤ 0.9 is {:.2e}; over all layers {:.2e} (terminal kink, not resolved at dx)",
                    upto(0.9),
                    upto(1.0)
                ));
            }
        }
    }

    let lse = Functional::log_sum_exp(1, 1.0).unwrap();
    let softplus = Functional::composed(ScalarMap::Softplus, Functional::linear(vec![1.0], 0.0).unwrap()).unwrap();
    for lambda in [1.0, -1.0] {
        let h = hjb_pair(&lse, lambda, 8.0);
        out.require(h.coarse <= 1e-2, format!("lse:n=1 λ={lambda:+}: HJB residual {:.2e} (≤ 1e-2)", h.coarse));
        let shrinks = h.fine * 3.0 <= h.coarse || h.fine.max(h.coarse) < ROUNDOFF_FLOOR;
        out.require(
            shrinks,
            format!("lse:n=1 λ={lambda:+}: halved grid {:.2e}; ≥3× shrink or both under the roundoff floor {ROUNDOFF_FLOOR:.0e}", h.fine),
        );
        let h = hjb_pair(&softplus, lambda, 8.0);
        out.require(
            h.coarse <= 1e-2 && h.fine * 3.0 <= h.coarse,
            format!("softplus(x) λ={lambda:+}: HJB {:.2e} → {:.2e} under halving, ratio {:.2}", h.coarse, h.fine, h.coarse / h.fine),
        );
    }
    out
}

fn run_cli(args: &[&str], threads: Option<&str>, env_threads: Option<&str>) -> (i32, Vec<u8>) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_glmgf"));
    cmd.args(args).env_remove("GLMGF_THREADS");
    if let Some(t) = threads {
        cmd.args(["--threads", t]);
    }
    if let Some(t) = env_threads {
        cmd.env("GLMGF_THREADS", t);
    }
    let o = cmd.output().expect("run glmgf");
    (o.status.code().unwrap_or(-1), o.stdout)
}

fn outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        let name = e.file_name().to_string_lossy().into_owned();
        if name != "timing.json" {
            files.insert(name, std::fs::read(e.path()).unwrap());
        }
    }
    files
}

/// Exit code, stdout and output files of one CLI run.
type RunOutput = (i32, Vec<u8>, BTreeMap<String, Vec<u8>>);

fn criterion_10() -> Outcome {
    let mut out = Outcome::new();
    let root = tempfile::tempdir().unwrap();
    let control_cfg = root.path().join("control.toml");
    std::fs::write(
        &control_cfg,
        "experiment = \"control\"\nseed = 11\n[control]\nfunctional = \"norm:n=1\"\nlambdas = [1.0, -1.0]\nsteps = 100\ndx = 0.1\npaths = 5000\nwrite_grid = true\nwrite_paths = true\n",
    )
    .unwrap();
    let cfg = control_cfg.to_str().unwrap().to_string();
    let runs: Vec<(&str, Vec<&str>)> = vec![
        ("audit json", vec!["audit", "--seed", "5", "--samples", "2e5", "--functional", "norm:n=3", "--functional", "lse:n=2", "--format", "json"]),
        ("audit csv", vec!["audit", "--seed", "5", "--samples", "2e5", "--functional", "max:n=3", "--format", "csv"]),
        ("sk json", vec!["sk", "--seed", "5", "--N", "4", "--disorder-samples", "4000", "--lambda-grid", "-1:0:0.25"]),
        ("control json", vec!["control", "--config", &cfg]),
    ];
    for (label, args) in &runs {
        let mut seen: Option<RunOutput> = None;
        for (k, (threads, env)) in [(Some("1"), None), (Some("4"), None), (None, Some("3"))].into_iter().enumerate() {
            let dir = root.path().join(format!("{}_{k}", label.replace(' ', "_")));
            let mut full = args.clone();
            let dir_s = dir.to_str().unwrap().to_string();
            full.extend(["--out", &dir_s]);
            let (code, stdout) = run_cli(&full, threads, env);
            let files = outputs(&dir);
            match &seen {
                None => {
                    out.note(format!("{label}: exit {code}, {} bytes stdout, files {:?}", stdout.len(), files.keys().collect::<Vec<_>>()));
                    seen = Some((code, stdout, files));
                }
                Some((c0, s0, f0)) => {
                    let same = *c0 == code && *s0 == stdout && *f0 == files;
                    let how = match (threads, env) {
                        (Some(t), _) => format!("--threads {t}"),
                        (None, Some(e)) => format!("GLMGF_THREADS={e}"),
                        _ => unreachable!(),
                    };
                    out.require(same, format!("{label}: {how} byte-identical to --threads 1"));
                }
            }
        }
    }
    out
}

fn main() -> ExitCode {
    println!("acceptance suite, seed {SEED}");
    let mut cat: Option<CatalogSamples> = None;
    let mut cat_secs = 0.0;
    let mut failures = Vec::new();
    let titles = [
        "closed-form oracle match",
        "convexity of Φ over the catalog",
        "sub-Gaussian, Φ-gap and log-derivative checks",
        "small deviation and variance vs Lipschitz",
        "Gray-code enumeration exactness",
        "Γ_N Lipschitz and monotone",
        "quenched/annealed gap and Var/N trend",
        "superadditivity of ln E Z^λ as stated",
        "control representation and HJB residual",
        "determinism across thread counts",
    ];
    for (idx, title) in titles.iter().enumerate() {
        let n = idx + 1;
        if (2..=4).contains(&n) && cat.is_none() {
            let t = Instant::now();
            cat = Some(catalog_samples());
            cat_secs = t.elapsed().as_secs_f64();
        }
        let t = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(|| match n {
            1 => criterion_1(),
            2 => criterion_2(cat.as_ref().unwrap(), cat_secs),
            3 => criterion_3(cat.as_ref().unwrap()),
            4 => criterion_4(cat.as_ref().unwrap()),
            5 => criterion_5(),
            6 => criterion_6(),
            7 => criterion_7(),
            8 => criterion_8(),
            9 => criterion_9(),
            _ => criterion_10(),
        }));
        let outcome = result.unwrap_or_else(|_| {
            let mut o = Outcome::new();
            o.require(false, "panicked".into());
            o
        });
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        let secs = t.elapsed().as_secs_f64() + if n == 2 { cat_secs } else { 0.0 };
        let tag = if !outcome.pass && FALSE_AS_STATED.contains(&n) { " (false as stated; not counted)" } else { "" };
        println!("criterion {n:>2} {title}: {verdict}{tag} ({secs:.1}s)");
        for line in &outcome.details {
            println!("    {line}");
        }
        if !outcome.pass && !FALSE_AS_STATED.contains(&n) {
            failures.push(n);
        }
        if n == 4 {
            cat = None;
        }
    }
    if failures.is_empty() {
        println!("acceptance: all counted criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failures:?}");
        ExitCode::FAILURE
    }
}
