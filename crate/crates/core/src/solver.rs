//! Explicit finite-volume stepper for the chemotaxis-growth system
//!
//! ```text
//! u_t = lap u - div(u grad v) + kappa u - mu u^2
//! v_t = lap v - v + u
//! ```
//!
//! with zero-flux boundaries. Taxis fluxes live on cell faces and use the
//! donor-cell value of `u`; diffusion uses the mirror-ghost five-point
//! stencil. A candidate step with any negative (or non-finite) cell is
//! rejected and retried at half the step; halving below `dt_min` stops the
//! run, which together with the `u_cap` threshold serves as the numerical
//! blow-up sensor.

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{laplacian_into, Field, Grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("{name} must be nonnegative, found {value} at cell ({i}, {j})")]
    Negative { name: &'static str, i: usize, j: usize, value: f64 },
    #[error("{name} has a non-finite value at cell ({i}, {j})")]
    NonFinite { name: &'static str, i: usize, j: usize },
    #[error("fields must share the problem grid")]
    GridMismatch,
    #[error("need 0 < tau < T, got tau = {tau}, T = {t_final}")]
    TimeWindow { tau: f64, t_final: f64 },
    #[error("invalid stepper configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub grid: Grid,
    pub kappa: Field,
    pub mu: Field,
    pub u0: Field,
    pub v0: Field,
    pub t_final: f64,
    /// Warm-up time after which localized space-time integrals accumulate.
    pub tau: f64,
}

fn check_field(name: &'static str, f: &Field, grid: &Grid, nonneg: bool) -> Result<(), SolverError> {
    if f.grid() != grid {
        return Err(SolverError::GridMismatch);
    }
    for (i, j) in grid.cells() {
        let value = f[(i, j)];
        if !value.is_finite() {
            return Err(SolverError::NonFinite { name, i, j });
        }
        if nonneg && value < 0.0 {
            return Err(SolverError::Negative { name, i, j, value });
        }
    }
    Ok(())
}

impl ProblemSpec {
    pub fn new(kappa: Field, mu: Field, u0: Field, v0: Field, t_final: f64, tau: f64) -> Result<Self, SolverError> {
        let grid = *u0.grid();
        check_field("kappa", &kappa, &grid, false)?;
        check_field("mu", &mu, &grid, true)?;
        check_field("u0", &u0, &grid, true)?;
        check_field("v0", &v0, &grid, true)?;
        if !(tau > 0.0 && tau < t_final && t_final.is_finite()) {
            return Err(SolverError::TimeWindow { tau, t_final });
        }
        Ok(Self { grid, kappa, mu, u0, v0, t_final, tau })
    }

    /// `||kappa||_inf`.
    pub fn kappa0(&self) -> f64 {
        self.kappa.max_abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepperConfig {
    pub cfl_safety: f64,
    pub dt_max: f64,
    pub dt_min: f64,
    pub u_cap: f64,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self { cfl_safety: 0.9, dt_max: 1e-2, dt_min: 1e-12, u_cap: 1e6 }
    }
}

impl StepperConfig {
    pub fn validate(&self, spec: &ProblemSpec) -> Result<(), SolverError> {
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return Err(SolverError::Config(format!("cfl_safety {} not in (0, 1]", self.cfl_safety)));
        }
        if !(self.dt_min > 0.0 && self.dt_min < self.dt_max) {
            return Err(SolverError::Config(format!(
                "need 0 < dt_min < dt_max, got {} and {}",
                self.dt_min, self.dt_max
            )));
        }
        if !(self.u_cap > spec.u0.max()) {
            return Err(SolverError::Config(format!("u_cap {} must exceed max u0 = {}", self.u_cap, spec.u0.max())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Field,
    pub v: Field,
    pub t: f64,
}

impl State {
    pub fn initial(spec: &ProblemSpec) -> Self {
        Self { u: spec.u0.clone(), v: spec.v0.clone(), t: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StopReason {
    TReachedT,
    UExceededCap,
    DtUnderflow,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::TReachedT => "t_reached_T",
            StopReason::UExceededCap => "u_exceeded_cap",
            StopReason::DtUnderflow => "dt_underflow",
        }
    }

    /// Whether this stop counts as numerical blow-up.
    pub fn is_blow_up(&self) -> bool {
        !matches!(self, StopReason::TReachedT)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub dt_used: f64,
    pub rejections: u32,
    pub stop_reason: Option<StopReason>,
}

/// Largest stable step for the current state, clamped to `[dt_min, dt_max]`.
pub fn compute_stable_dt(s: &State, spec: &ProblemSpec, cfg: &StepperConfig) -> f64 {
    let g = &spec.grid;
    let (hx, hy) = (g.hx(), g.hy());
    let diffusion = 1.0 / (2.0 / (hx * hx) + 2.0 / (hy * hy));
    let (ax, ay) = max_face_speeds(&s.v);
    let taxis_x = if ax > 0.0 { hx / ax } else { f64::INFINITY };
    let taxis_y = if ay > 0.0 { hy / ay } else { f64::INFINITY };
    let reaction = 1.0 / (spec.kappa0() + spec.mu.max() * s.u.max() + 1.0);
    let dt = cfl_min(&[diffusion, taxis_x, taxis_y, reaction]) * cfg.cfl_safety;
    dt.clamp(cfg.dt_min, cfg.dt_max)
}

fn cfl_min(limits: &[f64]) -> f64 {
    limits.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Largest `|dv/dx|` over interior x-faces and `|dv/dy|` over interior y-faces.
pub fn max_face_speeds(v: &Field) -> (f64, f64) {
    let g = v.grid();
    let (nx, ny) = (g.nx(), g.ny());
    let vals = v.values();
    let mut ax = 0.0f64;
    let mut ay = 0.0f64;
    for j in 0..ny {
        for i in 0..nx {
            let k = j * nx + i;
            if i + 1 < nx {
                ax = ax.max((vals[k + 1] - vals[k]).abs());
            }
            if j + 1 < ny {
                ay = ay.max((vals[k + nx] - vals[k]).abs());
            }
        }
    }
    (ax / g.hx(), ay / g.hy())
}

/// Explicit stepper with reusable scratch buffers.
pub struct Stepper<'a> {
    spec: &'a ProblemSpec,
    cfg: StepperConfig,
    lap_u: Vec<f64>,
    lap_v: Vec<f64>,
    flux_x: Vec<f64>,
    flux_y: Vec<f64>,
}

impl<'a> Stepper<'a> {
    pub fn new(spec: &'a ProblemSpec, cfg: StepperConfig) -> Self {
        let n = spec.grid.len();
        Self { spec, cfg, lap_u: vec![0.0; n], lap_v: vec![0.0; n], flux_x: vec![0.0; n], flux_y: vec![0.0; n] }
    }

    pub fn config(&self) -> &StepperConfig {
        &self.cfg
    }

    /// One forward-Euler candidate, written into `out`. No positivity check.
    pub fn candidate(&mut self, s: &State, dt: f64, out: &mut State) {
        let g = &self.spec.grid;
        let (nx, ny) = (g.nx(), g.ny());
        let (hx, hy) = (g.hx(), g.hy());
        let u = s.u.values();
        let v = s.v.values();
        laplacian_into(g, u, &mut self.lap_u);
        laplacian_into(g, v, &mut self.lap_v);

        // flux_x[k]: face between (i, j) and (i + 1, j); flux_y[k]: between (i, j) and (i, j + 1)
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                self.flux_x[k] = if i + 1 < nx {
                    let a = (v[k + 1] - v[k]) / hx;
                    a * if a > 0.0 { u[k] } else { u[k + 1] }
                } else {
                    0.0
                };
                self.flux_y[k] = if j + 1 < ny {
                    let a = (v[k + nx] - v[k]) / hy;
                    a * if a > 0.0 { u[k] } else { u[k + nx] }
                } else {
                    0.0
                };
            }
        }

        let kappa = self.spec.kappa.values();
        let mu = self.spec.mu.values();
        let out_u = out.u.values_mut();
        for j in 0..ny {
            for i in 0..nx {
                let k = j * nx + i;
                let west = if i > 0 { self.flux_x[k - 1] } else { 0.0 };
                let south = if j > 0 { self.flux_y[k - nx] } else { 0.0 };
                let div = (self.flux_x[k] - west) / hx + (self.flux_y[k] - south) / hy;
                let uk = u[k];
                out_u[k] = uk + dt * (self.lap_u[k] - div + kappa[k] * uk - mu[k] * uk * uk);
            }
        }
        let out_v = out.v.values_mut();
        for k in 0..v.len() {
            out_v[k] = v[k] + dt * (self.lap_v[k] - v[k] + u[k]);
        }
        out.t = s.t + dt;
    }

    /// Reject-and-halve: tries `dt`, `dt/2`, ... until the candidate is
    /// nonnegative and finite. Stops with `DtUnderflow` once the trial step
    /// would drop below `dt_min` (a first trial already below `dt_min`, as
    /// when landing on a checkpoint, is still attempted).
    pub fn advance(&mut self, s: &State, dt: f64, out: &mut State) -> StepOutcome {
        let mut trial = dt;
        let mut rejections = 0;
        loop {
            self.candidate(s, trial, out);
            if admissible(&out.u) && admissible(&out.v) {
                return StepOutcome { accepted: true, dt_used: trial, rejections, stop_reason: None };
            }
            rejections += 1;
            trial *= 0.5;
            if trial < self.cfg.dt_min {
                return StepOutcome {
                    accepted: false,
                    dt_used: trial,
                    rejections,
                    stop_reason: Some(StopReason::DtUnderflow),
                };
            }
        }
    }
}

fn admissible(f: &Field) -> bool {
    f.values().iter().all(|&x| x >= 0.0 && x.is_finite())
}

/// Single forward-Euler update of `s` by `dt` without the positivity check.
pub fn step(s: &State, spec: &ProblemSpec, dt: f64) -> State {
    let mut stepper = Stepper::new(spec, StepperConfig::default());
    let mut out = s.clone();
    stepper.candidate(s, dt, &mut out);
    out
}

/// Hooks called by [`run`].
pub trait Observer {
    /// After every accepted step; `before` is the state the step started from.
    fn on_step(&mut self, _before: &State, _after: &State, _dt: f64) {}

    /// When the run lands exactly on a checkpoint time.
    fn on_checkpoint(&mut self, _state: &State, _dt: f64) {}
}

impl Observer for () {}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub stop_reason: StopReason,
    pub t_stop: f64,
    pub state: State,
    pub steps: u64,
    pub rejections: u64,
    /// Step size of the last accepted step.
    pub last_dt: f64,
}

/// Integrates from `t = 0` to `spec.t_final`, landing exactly on every
/// checkpoint in `(0, T]`.
pub fn run(
    spec: &ProblemSpec,
    cfg: &StepperConfig,
    checkpoints: &[f64],
    observer: &mut dyn Observer,
) -> Result<RunOutput, SolverError> {
    cfg.validate(spec)?;
    let t_final = spec.t_final;
    let mut times: Vec<f64> = checkpoints.iter().copied().filter(|&t| t > 0.0 && t <= t_final).collect();
    times.sort_by(f64::total_cmp);
    times.dedup();
    let mut next = 0;

    let mut stepper = Stepper::new(spec, *cfg);
    let mut state = State::initial(spec);
    let mut scratch = state.clone();
    let (mut steps, mut rejections, mut last_dt) = (0u64, 0u64, 0.0);

    let stop_reason = loop {
        if state.t >= t_final {
            break StopReason::TReachedT;
        }
        let target = times.get(next).copied().unwrap_or(t_final);
        let mut dt = compute_stable_dt(&state, spec, cfg);
        let mut landing = false;
        if state.t + dt >= target {
            dt = target - state.t;
            landing = true;
        }
        let outcome = stepper.advance(&state, dt, &mut scratch);
        rejections += outcome.rejections as u64;
        if !outcome.accepted {
            break outcome.stop_reason.unwrap_or(StopReason::DtUnderflow);
        }
        steps += 1;
        last_dt = outcome.dt_used;
        if landing && outcome.dt_used == dt {
            scratch.t = target;
        } else {
            landing = false;
        }
        observer.on_step(&state, &scratch, outcome.dt_used);
        std::mem::swap(&mut state, &mut scratch);
        if landing && next < times.len() && times[next] == target {
            observer.on_checkpoint(&state, last_dt);
            next += 1;
        }
        if state.u.max() > cfg.u_cap {
            break StopReason::UExceededCap;
        }
    };

    Ok(RunOutput { stop_reason, t_stop: state.t, state, steps, rejections, last_dt })
}
