use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use glmgf::harness::config::{parse_count, Experiment, Format, Overrides, RunConfig};
use glmgf::harness::{self, emit_report, error_exit_code, exit_code};

#[derive(Parser)]
#[command(name = "glmgf", version, about = "Log-MGF estimation and inequality audits for convex Gaussian functionals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convexity, sub-Gaussian, gap, derivative and tail checks per functional.
    Audit(Common),
    /// Annealed replica curves and exact-enumeration checks for the SK model.
    Sk(Common),
    /// Value grids, HJB residuals and control-representation checks.
    Control(Common),
    /// All of the above.
    All(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_count)]
    samples: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "GLMGF_THREADS")]
    threads: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    format: Option<Format>,
    /// Functional spec such as `norm:n=3`, `catalog` or `synthetic-concave`; repeatable.
    #[arg(long = "functional")]
    functionals: Vec<String>,
    /// `lo:hi:step`.
    #[arg(long, allow_hyphen_values = true)]
    lambda_grid: Option<String>,
    /// `lo:hi:step`.
    #[arg(long, allow_hyphen_values = true)]
    t_grid: Option<String>,
    #[arg(long = "N")]
    n_spins: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    h: Option<f64>,
    #[arg(long, value_parser = parse_count)]
    disorder_samples: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    dx: Option<f64>,
    #[arg(long)]
    xmax: Option<f64>,
    #[arg(long, value_parser = parse_count)]
    paths: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (experiment, common) = match cli.command {
        Command::Audit(c) => (Experiment::Audit, c),
        Command::Sk(c) => (Experiment::Sk, c),
        Command::Control(c) => (Experiment::Control, c),
        Command::All(c) => (Experiment::All, c),
    };
    let threads = common.threads;
    let config_path = common.config.clone();
    let overrides = Overrides {
        experiment: Some(experiment),
        seed: common.seed,
        samples: common.samples,
        functionals: common.functionals,
        lambda_grid: common.lambda_grid,
        t_grid: common.t_grid,
        out: common.out,
        format: common.format,
        n_spins: common.n_spins,
        beta: common.beta,
        h: common.h,
        disorder_samples: common.disorder_samples,
        steps: common.steps,
        dx: common.dx,
        xmax: common.xmax,
        paths: common.paths,
    };
    let config = match RunConfig::resolve(config_path.as_deref(), overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.unwrap_or(0)).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    };
    let outcome = pool.install(|| harness::run(&config));
    let code = exit_code(&outcome);
    match outcome {
        Ok(report) => {
            match emit_report(&report, config.format, config.out.as_deref()) {
                Ok(text) => print!("{text}"),
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(error_exit_code(&e) as u8);
                }
            }
            for (stage, secs) in &report.timing {
                eprintln!("{stage}: {secs:.2}s");
            }
            if let Some(dir) = &config.out {
                let timing = serde_json::to_string_pretty(&report.timing).unwrap_or_default();
                if let Err(e) = std::fs::write(dir.join("timing.json"), timing) {
                    eprintln!("warning: cannot write timing.json: {e}");
                }
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(code as u8)
}
