//! Run configuration: a TOML file, CLI overrides on top, and the textual
//! functional specs `kind:key=value:…`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::check::SlackPolicy;
use crate::error::{Error, Result};
use crate::functionals::{catalog, Functional, ScalarMap};
use crate::skmodel::SkParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Audit,
    Sk,
    Control,
    All,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Table,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkConfig {
    #[serde(rename = "N", default = "default_spins")]
    pub n_spins: usize,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default)]
    pub h: f64,
    #[serde(default = "default_disorder")]
    pub disorder_samples: usize,
    /// System sizes for the quenched/annealed gap table (`h = 0` only).
    #[serde(default = "default_dfm_sizes")]
    pub dfm_sizes: Vec<usize>,
    #[serde(default = "default_pairs")]
    pub superadditivity_pairs: Vec<[usize; 2]>,
    #[serde(default = "default_super_lambdas")]
    pub superadditivity_lambdas: Vec<f64>,
}

impl Default for SkConfig {
    fn default() -> Self {
        Self {
            n_spins: default_spins(),
            beta: 1.0,
            h: 0.0,
            disorder_samples: default_disorder(),
            dfm_sizes: default_dfm_sizes(),
            superadditivity_pairs: default_pairs(),
            superadditivity_lambdas: default_super_lambdas(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlConfig {
    #[serde(default = "default_control_functional")]
    pub functional: String,
    #[serde(default = "default_control_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_dx")]
    pub dx: f64,
    /// Smallest admissible box when absent.
    #[serde(default)]
    pub xmax: Option<f64>,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default = "default_hjb_tol")]
    pub hjb_tol: f64,
    #[serde(default)]
    pub write_grid: bool,
    #[serde(default)]
    pub write_paths: bool,
}

impl Default for ControlConfig {
    fn default() -> Self {
        Self {
            functional: default_control_functional(),
            lambdas: default_control_lambdas(),
            steps: default_steps(),
            dx: default_dx(),
            xmax: None,
            paths: default_paths(),
            hjb_tol: default_hjb_tol(),
            write_grid: false,
            write_paths: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub seed: u64,
    #[serde(default = "default_samples")]
    pub samples: usize,
    /// Functional specs for the audit; `catalog` expands to the built-in list.
    #[serde(default = "default_functionals")]
    pub functionals: Vec<String>,
    /// Convexity grid of the audit and Γ grid of the SK experiment.
    #[serde(default)]
    pub lambda_grid: Option<GridSpec>,
    #[serde(default)]
    pub t_grid: Option<GridSpec>,
    #[serde(default)]
    pub slack: SlackPolicy,
    #[serde(default)]
    pub sk: SkConfig,
    #[serde(default)]
    pub control: ControlConfig,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing)]
    pub format: Format,
}

fn default_spins() -> usize {
    4
}
fn one() -> f64 {
    1.0
}
fn default_disorder() -> usize {
    10_000
}
fn default_dfm_sizes() -> Vec<usize> {
    vec![1, 4, 8]
}
fn default_pairs() -> Vec<[usize; 2]> {
    vec![[1, 1], [2, 2], [4, 4]]
}
fn default_super_lambdas() -> Vec<f64> {
    vec![-1.0, -0.5]
}
fn default_control_functional() -> String {
    "norm:n=1".into()
}
fn default_control_lambdas() -> Vec<f64> {
    vec![1.0, -1.0]
}
fn default_steps() -> usize {
    1000
}
fn default_dx() -> f64 {
    0.05
}
fn default_paths() -> usize {
    100_000
}
fn default_hjb_tol() -> f64 {
    1e-2
}
fn default_samples() -> usize {
    1_000_000
}
fn default_functionals() -> Vec<String> {
    vec!["catalog".into()]
}

/// A grid written either as `lo:hi:step` or as an explicit list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridSpec {
    Range(String),
    List(Vec<f64>),
}

impl GridSpec {
    pub fn points(&self) -> Result<Vec<f64>> {
        let pts = match self {
            GridSpec::List(v) => v.clone(),
            GridSpec::Range(s) => parse_range(s)?,
        };
        if pts.is_empty() {
            return Err(Error::Config("grid is empty".into()));
        }
        if pts.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("grid contains non-finite values".into()));
        }
        Ok(pts)
    }
}

/// `lo:hi:step`, inclusive of `hi` when it lies on the grid.
pub fn parse_range(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || Error::Config(format!("grid '{s}' is not lo:hi:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    let (lo, hi, step) = (nums[0], nums[1], nums[2]);
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("grid '{s}' needs step > 0 and hi >= lo")));
    }
    if (hi - lo) / step > 1e6 {
        return Err(Error::Config(format!("grid '{s}' has too many points")));
    }
    Ok(crate::auditor::arithmetic_grid(lo, hi, step))
}

/// Accepts `1000000`, `1e6` or `1_000_000`, rejecting non-integers.
pub fn parse_count(s: &str) -> std::result::Result<usize, String> {
    let cleaned = s.replace('_', "");
    if let Ok(v) = cleaned.parse::<usize>() {
        return Ok(v);
    }
    let v: f64 = cleaned.parse().map_err(|_| format!("'{s}' is not a count"))?;
    if v < 0.0 || v.fract() != 0.0 || v > 1e15 {
        return Err(format!("'{s}' is not a nonnegative integer"));
    }
    Ok(v as usize)
}

/// Flag values that win over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub seed: Option<u64>,
    pub samples: Option<usize>,
    pub functionals: Vec<String>,
    pub lambda_grid: Option<String>,
    pub t_grid: Option<String>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub n_spins: Option<usize>,
    pub beta: Option<f64>,
    pub h: Option<f64>,
    pub disorder_samples: Option<usize>,
    pub steps: Option<usize>,
    pub dx: Option<f64>,
    pub xmax: Option<f64>,
    pub paths: Option<usize>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Builds the config from an optional file plus overrides. Without a file
    /// the experiment comes from the subcommand and the seed is required.
    pub fn resolve(file: Option<&Path>, ov: Overrides) -> Result<Self> {
        let mut cfg = match file {
            Some(p) => Self::from_file(p)?,
            None => {
                let seed = ov
                    .seed
                    .ok_or_else(|| Error::Config("a seed is required (--seed or seed = in the config)".into()))?;
                let experiment = ov.experiment.ok_or_else(|| Error::Config("no experiment selected".into()))?;
                Self::new(experiment, seed)
            }
        };
        cfg.apply(ov);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            experiment,
            seed,
            samples: default_samples(),
            functionals: default_functionals(),
            lambda_grid: None,
            t_grid: None,
            slack: SlackPolicy::default(),
            sk: SkConfig::default(),
            control: ControlConfig::default(),
            out: None,
            format: Format::Json,
        }
    }

    pub fn apply(&mut self, ov: Overrides) {
        if let Some(v) = ov.experiment {
            self.experiment = v;
        }
        if let Some(v) = ov.seed {
            self.seed = v;
        }
        if let Some(v) = ov.samples {
            self.samples = v;
        }
        if !ov.functionals.is_empty() {
            self.functionals = ov.functionals;
        }
        if let Some(v) = ov.lambda_grid {
            self.lambda_grid = Some(GridSpec::Range(v));
        }
        if let Some(v) = ov.t_grid {
            self.t_grid = Some(GridSpec::Range(v));
        }
        if ov.out.is_some() {
            self.out = ov.out;
        }
        if let Some(v) = ov.format {
            self.format = v;
        }
        let sk = &mut self.sk;
        if let Some(v) = ov.n_spins {
            sk.n_spins = v;
        }
        if let Some(v) = ov.beta {
            sk.beta = v;
        }
        if let Some(v) = ov.h {
            sk.h = v;
        }
        if let Some(v) = ov.disorder_samples {
            sk.disorder_samples = v;
        }
        let c = &mut self.control;
        if let Some(v) = ov.steps {
            c.steps = v;
        }
        if let Some(v) = ov.dx {
            c.dx = v;
        }
        if ov.xmax.is_some() {
            c.xmax = ov.xmax;
        }
        if let Some(v) = ov.paths {
            c.paths = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg_err = |m: String| Err(Error::Config(m));
        if self.samples < 2 {
            return cfg_err(format!("samples must be at least 2, got {}", self.samples));
        }
        if !(self.slack.sigmas >= 0.0) || !(self.slack.abs_tol >= 0.0) {
            return cfg_err("slack parameters must be nonnegative".into());
        }
        if let Some(g) = &self.lambda_grid {
            g.points()?;
        }
        if let Some(g) = &self.t_grid {
            if g.points()?.iter().any(|&t| !(t > 0.0)) {
                return cfg_err("t grid must be positive".into());
            }
        }
        if self.functionals.is_empty() {
            return cfg_err("no functionals given".into());
        }
        for spec in &self.functionals {
            parse_functional_list(spec)?;
        }
        let sk = &self.sk;
        SkParams::new(sk.n_spins, sk.beta, sk.h).map_err(|e| Error::Config(e.to_string()))?;
        if sk.disorder_samples < 2 {
            return cfg_err("disorder_samples must be at least 2".into());
        }
        if sk.superadditivity_lambdas.is_empty() || sk.dfm_sizes.is_empty() || sk.superadditivity_pairs.is_empty() {
            return cfg_err("SK grids must be non-empty".into());
        }
        let c = &self.control;
        parse_functional(&c.functional)?;
        if c.lambdas.is_empty() || c.lambdas.iter().any(|&l| l == 0.0 || !l.is_finite()) {
            return cfg_err("control lambdas must be non-empty and nonzero".into());
        }
        if c.paths == 0 || c.steps < 4 || !(c.dx > 0.0) {
            return cfg_err("control needs paths >= 1, steps >= 4 and dx > 0".into());
        }
        Ok(())
    }

    pub fn lambda_points(&self, default: &str) -> Result<Vec<f64>> {
        match &self.lambda_grid {
            Some(g) => g.points(),
            None => parse_range(default),
        }
    }

    pub fn t_points(&self) -> Result<Vec<f64>> {
        match &self.t_grid {
            Some(g) => g.points(),
            None => parse_range("0.25:3:0.25"),
        }
    }
}

/// A parsed audit target. The synthetic concave control replaces the
/// estimated curve with `−λ²` in the convexity check.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Functional(Functional<f64>),
    SyntheticConcave,
}

/// Expands `catalog` and parses everything else as a single functional.
pub fn parse_functional_list(spec: &str) -> Result<Vec<Target>> {
    match spec.trim() {
        "catalog" => Ok(catalog().into_iter().map(Target::Functional).collect()),
        "synthetic-concave" => Ok(vec![Target::SyntheticConcave]),
        s => Ok(vec![Target::Functional(parse_functional(s)?)]),
    }
}

fn parse_vec(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: '{p}' is not a number")))
        })
        .collect()
}

fn take<'a>(keys: &mut BTreeMap<&str, &'a str>, k: &str) -> Option<&'a str> {
    keys.remove(k)
}

fn parse_num<N: std::str::FromStr>(key: &str, v: &str) -> Result<N> {
    v.trim()
        .parse::<N>()
        .map_err(|_| Error::Config(format!("{key}: '{v}' is not a valid value")))
}

/// Parses `kind:key=value:…`. For `composed` and `neg`, everything after
/// `inner=` is the inner spec.
pub fn parse_functional(spec: &str) -> Result<Functional<f64>> {
    let spec = spec.trim();
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    let mut keys: BTreeMap<&str, &str> = BTreeMap::new();
    let mut inner: Option<&str> = None;
    let mut remaining = rest;
    while !remaining.is_empty() {
        if let Some(after) = remaining.strip_prefix("inner=") {
            inner = Some(after);
            break;
        }
        let (token, tail) = remaining.split_once(':').unwrap_or((remaining, ""));
        let (k, v) = token
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("'{token}' in '{spec}' is not key=value")))?;
        if keys.insert(k, v).is_some() {
            return Err(Error::Config(format!("duplicate key '{k}' in '{spec}'")));
        }
        remaining = tail;
    }
    let cfg = |e: Error| Error::Config(format!("{spec}: {e}"));
    let f = match kind {
        "linear" => {
            let a = parse_vec("a", take(&mut keys, "a").ok_or_else(|| Error::Config("linear needs a=".into()))?)?;
            let b = take(&mut keys, "b").map(|v| parse_num("b", v)).transpose()?.unwrap_or(0.0);
            Functional::linear(a, b).map_err(cfg)?
        }
        "norm" | "max" | "lse" => {
            let n: usize = parse_num("n", take(&mut keys, "n").ok_or_else(|| Error::Config(format!("{kind} needs n=")))?)?;
            match kind {
                "norm" => Functional::euclid_norm(n),
                "max" => Functional::max_coord(n),
                _ => {
                    let tau = take(&mut keys, "tau").map(|v| parse_num("tau", v)).transpose()?.unwrap_or(1.0);
                    Functional::log_sum_exp(n, tau)
                }
            }
            .map_err(cfg)?
        }
        "sk" => {
            let n: usize = parse_num("N", take(&mut keys, "N").ok_or_else(|| Error::Config("sk needs N=".into()))?)?;
            let beta = take(&mut keys, "beta").map(|v| parse_num("beta", v)).transpose()?.unwrap_or(1.0);
            let h = take(&mut keys, "h").map(|v| parse_num("h", v)).transpose()?.unwrap_or(0.0);
            Functional::sk_free_energy(SkParams::new(n, beta, h).map_err(cfg)?)
        }
        "composed" => {
            let rho = match take(&mut keys, "rho") {
                Some("softplus") => ScalarMap::Softplus,
                Some("square") => ScalarMap::Square,
                Some("identity") => ScalarMap::Identity,
                other => return Err(Error::Config(format!("composed needs rho=softplus|square|identity, got {other:?}"))),
            };
            let inner = inner.ok_or_else(|| Error::Config("composed needs inner=".into()))?;
            Functional::composed(rho, parse_functional(inner)?).map_err(cfg)?
        }
        "neg" => {
            let inner = inner.ok_or_else(|| Error::Config("neg needs inner=".into()))?;
            Functional::negated(parse_functional(inner)?)
        }
        other => return Err(Error::Config(format!("unknown functional kind '{other}'"))),
    };
    if inner.is_some() && !matches!(kind, "composed" | "neg") {
        return Err(Error::Config(format!("'{kind}' takes no inner functional")));
    }
    if let Some(k) = keys.keys().next() {
        return Err(Error::Config(format!("unknown key '{k}' for {kind}")));
    }
    Ok(f)
}
