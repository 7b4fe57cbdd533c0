//! Run configuration: a TOML file with fixed sections whose keys mirror the
//! model parameters. Loading samples every coefficient and builds every
//! cutoff, so all hypothesis violations surface before a run starts.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::{CutoffMode, CutoffSpec};
use crate::diagnostics::{BallSpec, DiagnosticsConfig, DiagnosticsError, Functional, FunctionalSpec};
use crate::expr::{parse_expr, ParseError};
use crate::grid::{Field, Grid, GridError};
use crate::maxreg::{estimate_k, k_tilde, max_stable_dt, MaxRegError};
use crate::solver::{ProblemSpec, SolverError, StepperConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("{key}: {source}")]
    Expr {
        key: &'static str,
        #[source]
        source: ParseError,
    },
    #[error("{key}: {source}")]
    Grid {
        key: &'static str,
        #[source]
        source: GridError,
    },
    #[error("hypothesis mu >= 0 violated: mu = {value} at cell ({i}, {j}), center ({x}, {y})")]
    NegativeMu { i: usize, j: usize, x: f64, y: f64, value: f64 },
    #[error("{key}: {message}")]
    Invalid { key: String, message: String },
    #[error("functionals[{index}]: {source}")]
    Functional {
        index: usize,
        #[source]
        source: DiagnosticsError,
    },
    #[error("K~ probe for functionals[{index}]: {source}")]
    Probe {
        index: usize,
        #[source]
        source: MaxRegError,
    },
    #[error(transparent)]
    Solver(#[from] SolverError),
}

fn invalid(key: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    #[serde(rename = "Lx")]
    pub lx: f64,
    #[serde(rename = "Ly")]
    pub ly: f64,
    pub nx: usize,
    pub ny: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientsConfig {
    #[serde(default = "zero_expr")]
    pub kappa_expr: String,
    pub mu_expr: String,
    pub u0_expr: String,
    #[serde(default = "zero_expr")]
    pub v0_expr: String,
}

fn zero_expr() -> String {
    "0".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub t_final: f64,
    /// Defaults to `T / 2`.
    pub tau: Option<f64>,
    #[serde(default = "defaults::dt_max")]
    pub dt_max: f64,
    #[serde(default = "defaults::dt_min")]
    pub dt_min: f64,
    #[serde(default = "defaults::cfl_safety")]
    pub cfl_safety: f64,
    #[serde(default = "defaults::u_cap")]
    pub u_cap: f64,
}

mod defaults {
    use crate::solver::StepperConfig;

    pub fn dt_max() -> f64 {
        StepperConfig::default().dt_max
    }
    pub fn dt_min() -> f64 {
        StepperConfig::default().dt_min
    }
    pub fn cfl_safety() -> f64 {
        StepperConfig::default().cfl_safety
    }
    pub fn u_cap() -> f64 {
        StepperConfig::default().u_cap
    }
    pub fn tol_quad() -> f64 {
        0.02
    }
    pub fn theta_b() -> f64 {
        0.5
    }
    pub fn mu_tol() -> f64 {
        1e-8
    }
    pub fn csv() -> String {
        "diagnostics.csv".into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsSection {
    /// Spacing of diagnostic records; defaults to `T / 100`.
    pub record_every: Option<f64>,
    #[serde(default)]
    pub s: Vec<f64>,
    #[serde(default)]
    pub grad_q: Vec<f64>,
    #[serde(default = "defaults::tol_quad")]
    pub tol_quad: f64,
    #[serde(default = "defaults::theta_b", rename = "theta_B")]
    pub theta_b: f64,
    #[serde(default = "defaults::mu_tol")]
    pub mu_tol: f64,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            record_every: None,
            s: vec![],
            grad_q: vec![],
            tol_quad: defaults::tol_quad(),
            theta_b: defaults::theta_b(),
            mu_tol: defaults::mu_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputsConfig {
    #[serde(default = "defaults::csv")]
    pub csv: String,
    #[serde(default)]
    pub snapshot_times: Vec<f64>,
    #[serde(default)]
    pub heatmaps: bool,
}

impl Default for OutputsConfig {
    fn default() -> Self {
        Self { csv: defaults::csv(), snapshot_times: vec![], heatmaps: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutoffConfig {
    pub x0: (f64, f64),
    pub r_inner: f64,
    pub r_outer: f64,
    /// Defaults to `1 / (2 (p + 1))`.
    pub eta: Option<f64>,
    #[serde(default)]
    pub mode: CutoffMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub p: f64,
    pub eps: f64,
    /// Estimate of `K~(p + 1)`; probed at load time when absent.
    pub k_tilde: Option<f64>,
    pub cutoff: CutoffConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub domain: DomainConfig,
    pub coefficients: CoefficientsConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub outputs: OutputsConfig,
    #[serde(default)]
    pub functionals: Vec<FunctionalConfig>,
    #[serde(default)]
    pub balls: Vec<BallSpec>,
}

/// A validated configuration with every derived object constructed.
#[derive(Debug, Clone)]
pub struct Experiment {
    /// The configuration with all defaults and probe estimates filled in.
    pub config: RunConfig,
    pub problem: ProblemSpec,
    pub stepper: StepperConfig,
    pub diagnostics: DiagnosticsConfig,
    pub theta_b: f64,
    pub mu_tol: f64,
    /// Sorted, deduplicated record times in `(0, T]`.
    pub record_times: Vec<f64>,
}

pub fn parse_config(text: &str) -> Result<Experiment, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.build()
}

pub fn load_config(path: &Path) -> Result<Experiment, ConfigError> {
    let text =
        fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
    parse_config(&text)
}

fn sample(key: &'static str, src: &str, grid: Grid) -> Result<Field, ConfigError> {
    let expr = parse_expr(src).map_err(|source| ConfigError::Expr { key, source })?;
    Field::from_expr(grid, &expr).map_err(|source| ConfigError::Grid { key, source })
}

/// Grid and horizon of the eager `K~` probe.
const PROBE_CELLS: usize = 8;
const PROBE_STEPS: usize = 16;
const PROBE_BUDGET: usize = 200;

impl RunConfig {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn build(&self) -> Result<Experiment, ConfigError> {
        let mut cfg = self.clone();
        let d = &cfg.domain;
        let grid = Grid::new(d.nx, d.ny, d.lx, d.ly).map_err(|source| ConfigError::Grid { key: "domain", source })?;
        let c = &cfg.coefficients;
        let kappa = sample("kappa_expr", &c.kappa_expr, grid)?;
        let mu = sample("mu_expr", &c.mu_expr, grid)?;
        let u0 = sample("u0_expr", &c.u0_expr, grid)?;
        let v0 = sample("v0_expr", &c.v0_expr, grid)?;
        if let Some(k) = mu.values().iter().position(|&m| !(m >= 0.0)) {
            let (i, j) = (k % grid.nx(), k / grid.nx());
            return Err(ConfigError::NegativeMu { i, j, x: grid.x(i), y: grid.y(j), value: mu.values()[k] });
        }

        let t = &mut cfg.time;
        let t_final = t.t_final;
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(invalid("time.T", format!("must be positive, got {}", t_final)));
        }
        let tau = *t.tau.get_or_insert(t_final / 2.0);
        if !(tau > 0.0 && tau < t_final) {
            return Err(invalid("time.tau", format!("need 0 < tau < T = {}, got {}", t_final, tau)));
        }
        let stepper = StepperConfig { cfl_safety: t.cfl_safety, dt_max: t.dt_max, dt_min: t.dt_min, u_cap: t.u_cap };
        let problem = ProblemSpec::new(kappa, mu, u0, v0, t_final, tau)?;
        stepper.validate(&problem)?;

        let ds = &mut cfg.diagnostics;
        let every = *ds.record_every.get_or_insert(t_final / 100.0);
        if !(every > 0.0 && every <= t_final) {
            return Err(invalid("diagnostics.record_every", format!("must lie in (0, T], got {}", every)));
        }
        if !(ds.tol_quad >= 0.0) {
            return Err(invalid("diagnostics.tol_quad", "must be nonnegative"));
        }
        if !(ds.theta_b > 0.0 && ds.theta_b <= 1.0) {
            return Err(invalid("diagnostics.theta_B", "must lie in (0, 1]"));
        }
        for (key, exps) in [("diagnostics.s", &ds.s), ("diagnostics.grad_q", &ds.grad_q)] {
            if let Some(e) = exps.iter().find(|&&e| !(e >= 1.0)) {
                return Err(invalid(key, format!("exponents must be >= 1, got {}", e)));
            }
        }
        for (b, ball) in cfg.balls.iter().enumerate() {
            if let Some(e) = ball.q.iter().chain(&ball.alpha).chain(&ball.r).find(|&&e| !(e >= 1.0)) {
                return Err(invalid(&format!("balls[{}]", b), format!("exponents must be >= 1, got {}", e)));
            }
        }
        for &s in &cfg.outputs.snapshot_times {
            if !(0.0..=t_final).contains(&s) {
                return Err(invalid("outputs.snapshot_times", format!("{} outside [0, T]", s)));
            }
        }

        let kappa0 = problem.kappa0();
        let mut functionals = Vec::with_capacity(cfg.functionals.len());
        for (index, f) in cfg.functionals.iter_mut().enumerate() {
            let p = f.p;
            let eta = *f.cutoff.eta.get_or_insert(1.0 / (2.0 * (p + 1.0)));
            let cutoff = CutoffSpec {
                x0: f.cutoff.x0,
                r_inner: f.cutoff.r_inner,
                r_outer: f.cutoff.r_outer,
                eta,
                mode: f.cutoff.mode,
            };
            let mu_x0 = parse_expr(&cfg.coefficients.mu_expr)
                .expect("parsed above")
                .eval(cutoff.x0.0, cutoff.x0.1)
                .map_err(|e| invalid(&format!("functionals[{}].cutoff.x0", index), e.to_string()))?;
            let kt = match f.k_tilde {
                Some(k) => k,
                None => {
                    let k = probe_k_tilde(grid, p, cfg.seed).map_err(|source| ConfigError::Probe { index, source })?;
                    f.k_tilde = Some(k);
                    k
                }
            };
            let spec = FunctionalSpec { p, eps: f.eps, cutoff };
            functionals.push(
                Functional::new(spec, &grid, mu_x0, kappa0, t_final, kt)
                    .map_err(|source| ConfigError::Functional { index, source })?,
            );
        }

        let diagnostics = DiagnosticsConfig {
            s: ds.s.clone(),
            grad_q: ds.grad_q.clone(),
            balls: cfg.balls.clone(),
            functionals,
            tol_quad: ds.tol_quad,
        };
        diagnostics.validate().map_err(|e| invalid("balls", e.to_string()))?;

        let mut record_times: Vec<f64> = (1..)
            .map(|k| k as f64 * every)
            .take_while(|&t| t <= t_final * (1.0 + 1e-12))
            .map(|t| t.min(t_final))
            .collect();
        record_times.push(t_final);
        record_times.sort_by(f64::total_cmp);
        record_times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * t_final);

        let (theta_b, mu_tol) = (ds.theta_b, ds.mu_tol);
        Ok(Experiment { config: cfg, problem, stepper, diagnostics, theta_b, mu_tol, record_times })
    }
}

/// `K~(p + 1)` from a seeded lower-bound probe on a coarse grid over the
/// same domain.
pub fn probe_k_tilde(grid: Grid, p: f64, seed: u64) -> Result<f64, MaxRegError> {
    let probe = Grid::new(PROBE_CELLS, PROBE_CELLS, grid.lx(), grid.ly()).expect("probe grid is valid");
    let dt = 0.9 * max_stable_dt(&probe);
    let r = estimate_k(probe, dt, PROBE_STEPS, p + 1.0, p + 1.0, PROBE_BUDGET, seed)?;
    Ok(k_tilde(p + 1.0, r.k_hat))
}

/// Sets a dotted key (`time.T`, `coefficients.u0_expr`, `seed`) in a parsed
/// config document. The value is read as a TOML literal when possible and as
/// a bare string otherwise.
pub fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<(), ConfigError> {
    let parsed = toml::from_str::<toml::Table>(&format!("v = {}", value))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| invalid(key, "empty key"))?;
    let mut table = doc;
    for part in parts {
        table = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| invalid(key, format!("`{}` is not a section", part)))?;
    }
    table.insert(last.to_string(), parsed);
    Ok(())
}
