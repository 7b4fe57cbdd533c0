//! Experiment orchestration and file output.
//!
//! A run directory holds `diagnostics.csv` (or the configured name),
//! `effective.toml` (the configuration with every default filled in),
//! `run.meta` (key=value: effective config, stop reason, mass-bound check,
//! blow-up report, functional margins) and `snapshots/` with text grids and
//! optional PGM heatmaps named `u_t{t}` / `v_t{t}`.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{apply_override, load_config, ConfigError, Experiment, RunConfig};
use crate::cutoff::{build_cutoff, verify_fractional_bounds, CutoffError, CutoffSpec};
use crate::diagnostics::{
    blow_up_report, check_mass_bound, write_csv, BlowUpReport, Diagnostics, DiagnosticsError, DiagnosticsRecord,
    MassBoundCheck,
};
use crate::grid::Grid;
use crate::io::{write_pgm, write_text_grid, FormatError};
use crate::maxreg::{
    dense_operator_norm, estimate_k, interpolation_check, k_tilde, max_stable_dt, InterpolationReport, MaxRegError,
    ProbeResult, SpaceTimeOperator,
};
use crate::solver::{run, Observer, RunOutput, SolverError, State, StopReason};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Probe(#[from] MaxRegError),
    #[error(transparent)]
    Cutoff(#[from] CutoffError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("sweep run {index} ({key} = {value}): {source}")]
    Sweep {
        index: usize,
        key: String,
        value: String,
        #[source]
        source: Box<RunnerError>,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.display().to_string(), source }
}

struct RunObserver<'a> {
    diag: Diagnostics<'a>,
    record_times: &'a [f64],
    snapshot_times: &'a [f64],
    snapshots: Vec<State>,
}

impl Observer for RunObserver<'_> {
    fn on_step(&mut self, before: &State, after: &State, dt: f64) {
        self.diag.on_step(before, after, dt);
    }

    fn on_checkpoint(&mut self, state: &State, dt: f64) {
        if self.record_times.contains(&state.t) {
            self.diag.on_checkpoint(state, dt);
        }
        if self.snapshot_times.contains(&state.t) {
            self.snapshots.push(state.clone());
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub output: RunOutput,
    /// Records at `t = 0`, every record time reached, and the stop time.
    pub records: Vec<DiagnosticsRecord>,
    pub mass_bound: MassBoundCheck,
    pub blow_up: BlowUpReport,
    pub snapshots: Vec<State>,
}

pub fn execute(exp: &Experiment) -> Result<RunResult, RunnerError> {
    let snapshot_times = &exp.config.outputs.snapshot_times;
    let mut obs = RunObserver {
        diag: Diagnostics::new(&exp.problem, &exp.diagnostics),
        record_times: &exp.record_times,
        snapshot_times,
        snapshots: Vec::new(),
    };
    let initial = State::initial(&exp.problem);
    obs.diag.on_checkpoint(&initial, 0.0);
    if snapshot_times.contains(&0.0) {
        obs.snapshots.push(initial);
    }
    let checkpoints: Vec<f64> = exp.record_times.iter().chain(snapshot_times).copied().collect();
    let output = run(&exp.problem, &exp.stepper, &checkpoints, &mut obs)?;
    let mut diag = obs.diag;
    if diag.records.last().map(|r| r.t) != Some(output.t_stop) {
        let rec = diag.record(&output.state, output.last_dt);
        diag.records.push(rec);
    }
    let mass_bound = check_mass_bound(&diag.records, exp.diagnostics.tol_quad)?;
    let blow_up = blow_up_report(&output, &exp.problem.mu, exp.theta_b, exp.mu_tol);
    Ok(RunResult { output, records: diag.records, mass_bound, blow_up, snapshots: obs.snapshots })
}

/// Flattens a TOML document into `a.b.c=value` lines.
fn flatten(prefix: &str, v: &toml::Value, out: &mut String) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{}.{}", prefix, k) };
                flatten(&key, v, out);
            }
        }
        toml::Value::Array(a) if a.iter().any(|x| x.is_table()) => {
            for (i, v) in a.iter().enumerate() {
                flatten(&format!("{}.{}", prefix, i), v, out);
            }
        }
        other => {
            let _ = writeln!(out, "{}={}", prefix, other);
        }
    }
}

pub fn config_meta(config: &RunConfig) -> String {
    let value = toml::Value::try_from(config).expect("config serializes");
    let mut out = String::new();
    flatten("config", &value, &mut out);
    out
}

/// The `run.meta` sidecar.
pub fn run_meta(exp: &Experiment, res: &RunResult) -> String {
    let mut s = config_meta(&exp.config);
    let o = &res.output;
    let m = &res.mass_bound;
    let b = &res.blow_up;
    let _ = writeln!(s, "stop_reason={}", o.stop_reason);
    let _ = writeln!(s, "t_stop={:e}", o.t_stop);
    let _ = writeln!(s, "steps={}", o.steps);
    let _ = writeln!(s, "rejections={}", o.rejections);
    let _ = writeln!(s, "last_dt={:e}", o.last_dt);
    let _ = writeln!(s, "mass_bound.passed={}", m.passed);
    let _ = writeln!(s, "mass_bound.tol_quad={:e}", exp.diagnostics.tol_quad);
    let _ = writeln!(s, "mass_bound.worst_margin={:e}", m.worst_margin);
    let _ = writeln!(s, "mass_bound.worst_t={:e}", m.worst_t);
    if let Some(v) = m.violation {
        let _ = writeln!(s, "mass_bound.violation_t={:e}", v.t);
        let _ = writeln!(s, "mass_bound.violation_lhs={:e}", v.lhs);
        let _ = writeln!(s, "mass_bound.violation_rhs={:e}", v.rhs);
    }
    let _ = writeln!(s, "blowup.triggered={}", b.triggered);
    let _ = writeln!(s, "blowup.t_stop={:e}", b.t_stop);
    let _ = writeln!(s, "blowup.argmax_x={:e}", b.argmax.0);
    let _ = writeln!(s, "blowup.argmax_y={:e}", b.argmax.1);
    let _ = writeln!(s, "blowup.sup_u={:e}", b.sup_u);
    let _ = writeln!(s, "blowup.theta_B={:e}", b.theta_b);
    let _ = writeln!(s, "blowup.mu_tol={:e}", b.mu_tol);
    let _ = writeln!(s, "blowup.set_size={}", b.blowup_set.len());
    let _ = writeln!(s, "blowup.zero_set_size={}", b.zero_set_size);
    match b.distance {
        Some(d) => {
            let _ = writeln!(s, "blowup.distance={:e}", d);
        }
        None => {
            let _ = writeln!(s, "blowup.distance=none");
        }
    }
    for (i, f) in exp.diagnostics.functionals.iter().enumerate() {
        let _ = writeln!(s, "functional.{}.mu_x0={:e}", i, f.mu_x0);
        let _ = writeln!(s, "functional.{}.k_tilde={:e}", i, f.k_tilde);
        let _ = writeln!(s, "functional.{}.c_phi={:e}", i, f.cutoff.c_phi);
        let _ = writeln!(s, "functional.{}.admissibility_margin={:e}", i, f.margin);
        let _ = writeln!(s, "functional.{}.admissible={}", i, f.is_admissible());
    }
    s
}

fn snapshot_name(prefix: &str, t: f64, ext: &str) -> String {
    format!("{}_t{}.{}", prefix, t, ext)
}

pub fn write_outputs(exp: &Experiment, res: &RunResult, dir: &Path) -> Result<(), RunnerError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join(&exp.config.outputs.csv);
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    write_csv(BufWriter::new(file), &exp.diagnostics, &res.records).map_err(io_err(&csv_path))?;

    let toml_path = dir.join("effective.toml");
    fs::write(&toml_path, exp.config.to_toml()).map_err(io_err(&toml_path))?;
    let meta_path = dir.join("run.meta");
    fs::write(&meta_path, run_meta(exp, res)).map_err(io_err(&meta_path))?;

    if !res.snapshots.is_empty() {
        let snap = dir.join("snapshots");
        fs::create_dir_all(&snap).map_err(io_err(&snap))?;
        for s in &res.snapshots {
            for (name, f) in [("u", &s.u), ("v", &s.v)] {
                write_text_grid(&snap.join(snapshot_name(name, s.t, "txt")), f)?;
                if exp.config.outputs.heatmaps {
                    write_pgm(&snap.join(snapshot_name(name, s.t, "pgm")), f)?;
                }
            }
        }
    }
    Ok(())
}

/// Compact outcome of one run, one line of `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub stop_reason: StopReason,
    pub t_stop: f64,
    pub sup_u: f64,
    pub argmax: (f64, f64),
    pub blowup_distance: Option<f64>,
    pub mass_bound_passed: bool,
    pub mass_bound_margin: f64,
}

impl RunSummary {
    fn new(dir: &Path, res: &RunResult) -> Self {
        Self {
            dir: dir.to_path_buf(),
            stop_reason: res.output.stop_reason,
            t_stop: res.output.t_stop,
            sup_u: res.blow_up.sup_u,
            argmax: res.blow_up.argmax,
            blowup_distance: res.blow_up.distance,
            mass_bound_passed: res.mass_bound.passed,
            mass_bound_margin: res.mass_bound.worst_margin,
        }
    }

    pub fn line(&self) -> String {
        format!(
            "dir={} stop_reason={} t_stop={:e} sup_u={:e} argmax=({:e},{:e}) blowup_distance={} mass_bound_passed={} mass_bound_margin={:e}",
            self.dir.display(),
            self.stop_reason,
            self.t_stop,
            self.sup_u,
            self.argmax.0,
            self.argmax.1,
            self.blowup_distance.map_or("none".to_string(), |d| format!("{:e}", d)),
            self.mass_bound_passed,
            self.mass_bound_margin,
        )
    }
}

pub fn run_experiment(exp: &Experiment, out_dir: &Path) -> Result<RunSummary, RunnerError> {
    let res = execute(exp)?;
    write_outputs(exp, &res, out_dir)?;
    Ok(RunSummary::new(out_dir, &res))
}

pub fn cmd_run(config: &Path, out_dir: &Path) -> Result<RunSummary, RunnerError> {
    run_experiment(&load_config(config)?, out_dir)
}

/// One run per value of `key`, in `out_dir/run_000`, `run_001`, ...; runs
/// execute concurrently, each sequential inside. Also writes `sweep.csv`.
pub fn cmd_sweep(config: &Path, key: &str, values: &[String], out_dir: &Path) -> Result<Vec<RunSummary>, RunnerError> {
    let text = fs::read_to_string(config).map_err(io_err(config))?;
    let base: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let summaries: Vec<Result<RunSummary, RunnerError>> = values
        .par_iter()
        .enumerate()
        .map(|(index, value)| {
            let one = || -> Result<RunSummary, RunnerError> {
                let mut doc = base.clone();
                apply_override(&mut doc, key, value)?;
                let cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
                run_experiment(&cfg.build()?, &out_dir.join(format!("run_{:03}", index)))
            };
            one().map_err(|e| RunnerError::Sweep {
                index,
                key: key.to_string(),
                value: value.clone(),
                source: Box::new(e),
            })
        })
        .collect();
    let summaries: Vec<RunSummary> = summaries.into_iter().collect::<Result<_, _>>()?;

    let path = out_dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| io_err(&path)(e.into()))?;
    let row_err = |e: csv::Error| RunnerError::Io { path: path.display().to_string(), source: e.into() };
    w.write_record([
        "index",
        "value",
        "dir",
        "stop_reason",
        "t_stop",
        "sup_u",
        "argmax_x",
        "argmax_y",
        "blowup_distance",
        "mass_bound_passed",
    ])
    .map_err(row_err)?;
    for (i, (v, s)) in values.iter().zip(&summaries).enumerate() {
        w.write_record([
            i.to_string(),
            v.clone(),
            s.dir.display().to_string(),
            s.stop_reason.to_string(),
            format!("{:e}", s.t_stop),
            format!("{:e}", s.sup_u),
            format!("{:e}", s.argmax.0),
            format!("{:e}", s.argmax.1),
            s.blowup_distance.map_or("none".into(), |d| format!("{:e}", d)),
            s.mass_bound_passed.to_string(),
        ])
        .map_err(row_err)?;
    }
    w.flush().map_err(|e| io_err(&path)(e))?;
    Ok(summaries)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxRegArgs {
    pub nx: usize,
    pub ny: usize,
    pub lx: f64,
    pub ly: f64,
    pub t_final: f64,
    /// Defaults to the largest step below `0.9` of the stability limit that
    /// divides `T`.
    pub dt: Option<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
    pub seeds: u64,
    pub budget: usize,
}

impl Default for MaxRegArgs {
    fn default() -> Self {
        Self {
            nx: 8,
            ny: 8,
            lx: 1.0,
            ly: 1.0,
            t_final: 0.05,
            dt: None,
            p: vec![2.0],
            q: vec![2.0],
            seeds: 1,
            budget: 500,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MaxRegReport {
    pub dt: f64,
    pub steps: usize,
    /// Best result over seeds for every `(p, q)`.
    pub samples: Vec<ProbeResult>,
    /// Dense-SVD norm of the `p = q = 2` operator when it is small enough.
    pub svd_norm: Option<f64>,
    pub interpolation: Vec<(f64, f64, f64, InterpolationReport)>,
}

/// Largest operator (input length) for which the dense SVD check runs.
const SVD_MAX_INPUT: usize = 2048;

pub fn cmd_maxreg(args: &MaxRegArgs, out_dir: &Path) -> Result<MaxRegReport, RunnerError> {
    let grid =
        Grid::new(args.nx, args.ny, args.lx, args.ly).map_err(|source| ConfigError::Grid { key: "grid", source })?;
    let (dt, steps) = match args.dt {
        Some(dt) => (dt, crate::maxreg::HeatSolveSpec::with_horizon(grid, dt, args.t_final)?.steps),
        None => {
            let steps = (args.t_final / (0.9 * max_stable_dt(&grid))).ceil().max(1.0) as usize;
            (args.t_final / steps as f64, steps)
        }
    };
    let mut samples = Vec::new();
    for &p in &args.p {
        for &q in &args.q {
            let mut best: Option<ProbeResult> = None;
            for seed in 0..args.seeds.max(1) {
                let r = estimate_k(grid, dt, steps, p, q, args.budget, seed)?;
                if best.as_ref().is_none_or(|b| r.k_hat > b.k_hat) {
                    best = Some(r);
                }
            }
            samples.push(best.expect("at least one seed"));
        }
    }
    let op = SpaceTimeOperator::new(grid, dt, steps)?;
    let svd_norm = (samples.iter().any(|s| s.p == 2.0 && s.q == 2.0) && op.input_len() <= SVD_MAX_INPUT)
        .then(|| dense_operator_norm(&op));

    // advisory interpolation checks along the diagonal p = q
    let mut diag: Vec<&ProbeResult> = samples.iter().filter(|s| s.p == s.q).collect();
    diag.sort_by(|a, b| a.p.total_cmp(&b.p));
    let mut interpolation = Vec::new();
    for w in diag.windows(3) {
        let (a, m, b) = (w[0], w[1], w[2]);
        let theta = (1.0 / a.p - 1.0 / m.p) / (1.0 / a.p - 1.0 / b.p);
        interpolation.push((a.p, m.p, b.p, interpolation_check(a, b, m, theta, 0.10)?));
    }

    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut meta = String::new();
    let _ = writeln!(meta, "grid.nx={}\ngrid.ny={}\ngrid.Lx={:e}\ngrid.Ly={:e}", args.nx, args.ny, args.lx, args.ly);
    let _ = writeln!(
        meta,
        "T={:e}\ndt={:e}\nsteps={}\nseeds={}\nbudget={}",
        dt * steps as f64,
        dt,
        steps,
        args.seeds,
        args.budget
    );
    for s in &samples {
        let _ = writeln!(meta, "K_hat.p{}.q{}={:e}", s.p, s.q, s.k_hat);
        let _ = writeln!(meta, "iterations.p{}.q{}={}", s.p, s.q, s.iterations);
        let _ = writeln!(meta, "best_forcing.p{}.q{}={}", s.p, s.q, s.best_forcing);
        if s.p == s.q {
            let _ = writeln!(meta, "K_tilde.p{}={:e}", s.p, k_tilde(s.p, s.k_hat));
        }
    }
    if let Some(n) = svd_norm {
        let _ = writeln!(meta, "svd_norm.p2.q2={:e}", n);
    }
    for (a, m, b, r) in &interpolation {
        let _ = writeln!(
            meta,
            "interpolation.p{}.p{}.p{}=theta:{:e} K_theta:{:e} bound:{:e} passed:{} advisory:{}",
            a, m, b, r.theta, r.k_theta, r.bound, r.passed, r.advisory
        );
    }
    let meta_path = out_dir.join("probe.meta");
    fs::write(&meta_path, meta).map_err(io_err(&meta_path))?;

    let mut csv_text = String::from("p,q,K_hat,iterations\n");
    for s in &samples {
        let _ = writeln!(csv_text, "{:e},{:e},{:e},{}", s.p, s.q, s.k_hat, s.iterations);
    }
    let csv_path = out_dir.join("samples.csv");
    fs::write(&csv_path, csv_text).map_err(io_err(&csv_path))?;
    Ok(MaxRegReport { dt, steps, samples, svd_norm, interpolation })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CutoffReport {
    pub power: u32,
    pub c_phi: f64,
    pub bounds_hold: bool,
    pub plateau_cells: usize,
    pub support_cells: usize,
    pub root_laplacian_sup: f64,
}

impl CutoffReport {
    pub fn meta(&self) -> String {
        format!(
            "power={}\nc_phi={:e}\nbounds_hold={}\nplateau_cells={}\nsupport_cells={}\nroot_laplacian_sup={:e}\n",
            self.power, self.c_phi, self.bounds_hold, self.plateau_cells, self.support_cells, self.root_laplacian_sup
        )
    }
}

/// Builds the cutoff, computes `C_phi` and, given `out_dir`, writes `phi.txt`,
/// `grad_phi.txt` (`|grad phi|`), `lap_phi.txt` and `cutoff.meta`.
pub fn cmd_cutoff_check(spec: &CutoffSpec, grid: &Grid, out_dir: Option<&Path>) -> Result<CutoffReport, RunnerError> {
    let field = build_cutoff(spec, grid)?;
    let c_phi = verify_fractional_bounds(&field)?;
    let report = CutoffReport {
        power: field.power,
        c_phi,
        bounds_hold: field.bounds_hold(c_phi),
        plateau_cells: field.plateau_cells().count(),
        support_cells: field.phi.values().iter().filter(|&&v| v > 0.0).count(),
        root_laplacian_sup: field.root_laplacian_sup(),
    };
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        write_text_grid(&dir.join("phi.txt"), &field.phi)?;
        write_text_grid(&dir.join("grad_phi.txt"), &field.grad_magnitude())?;
        write_text_grid(&dir.join("lap_phi.txt"), &field.lap)?;
        let meta = format!(
            "grid.nx={}\ngrid.ny={}\ngrid.Lx={:e}\ngrid.Ly={:e}\nx0=({:e},{:e})\nr_inner={:e}\nr_outer={:e}\neta={:e}\nmode={:?}\n{}",
            grid.nx(),
            grid.ny(),
            grid.lx(),
            grid.ly(),
            spec.x0.0,
            spec.x0.1,
            spec.r_inner,
            spec.r_outer,
            spec.eta,
            spec.mode,
            report.meta()
        );
        let path = dir.join("cutoff.meta");
        fs::write(&path, meta).map_err(io_err(&path))?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    const SMALL: &str = r#"
seed = 3

[domain]
Lx = 1.0
Ly = 1.0
nx = 16
ny = 16

[coefficients]
kappa_expr = "1 - 2*x"
mu_expr = "(x-0.5)^2 + y"
u0_expr = "1 + 0.5*cos(pi*x)*cos(pi*y)"
v0_expr = "x*y"

[time]
T = 0.05
tau = 0.02

[diagnostics]
record_every = 0.01
s = [2.0]
grad_q = [4.0]

[outputs]
snapshot_times = [0.0, 0.03]
heatmaps = true

[[balls]]
center = [0.5, 0.5]
radius = 0.25
q = [3.0]
alpha = [2.0]
r = [1.5]
"#;

    #[test]
    fn run_writes_every_artifact() {
        let exp = parse_config(SMALL).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let summary = run_experiment(&exp, dir.path()).unwrap();
        assert_eq!(summary.stop_reason, StopReason::TReachedT);
        assert!(summary.mass_bound_passed);
        let csv = fs::read_to_string(dir.path().join("diagnostics.csv")).unwrap();
        // comment, header, t = 0 and five record times
        assert_eq!(csv.lines().count(), 2 + 6);
        let meta = fs::read_to_string(dir.path().join("run.meta")).unwrap();
        assert!(meta.contains("config.coefficients.mu_expr=\"(x-0.5)^2 + y\""));
        assert!(meta.contains("config.balls.0.radius=0.25"));
        assert!(meta.contains("stop_reason=t_reached_T"));
        let pgm = fs::read(dir.path().join("snapshots/u_t0.03.pgm")).unwrap();
        assert!(pgm.starts_with(b"P5\n16 16\n255\n"));
        assert!(dir.path().join("snapshots/v_t0.txt").exists());
        let eff = fs::read_to_string(dir.path().join("effective.toml")).unwrap();
        assert_eq!(parse_config(&eff).unwrap().config, exp.config);
    }

    #[test]
    fn identical_config_gives_identical_csv() {
        let exp = parse_config(SMALL).unwrap();
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_experiment(&exp, a.path()).unwrap();
        run_experiment(&exp, b.path()).unwrap();
        assert_eq!(
            fs::read(a.path().join("diagnostics.csv")).unwrap(),
            fs::read(b.path().join("diagnostics.csv")).unwrap()
        );
    }

    #[test]
    fn cutoff_check_reports() {
        let g = Grid::new(32, 32, 1.0, 1.0).unwrap();
        let spec = CutoffSpec {
            x0: (0.0, 0.5),
            r_inner: 0.1,
            r_outer: 0.3,
            eta: 0.2,
            mode: crate::cutoff::CutoffMode::Tensor,
        };
        let r = cmd_cutoff_check(&spec, &g, None).unwrap();
        assert!(r.bounds_hold && r.c_phi.is_finite() && r.plateau_cells > 0);
        assert_eq!(r.power, 10);
    }

    #[test]
    fn maxreg_command_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let args = MaxRegArgs {
            nx: 4,
            ny: 4,
            t_final: 0.1,
            p: vec![2.0, 3.0],
            q: vec![2.0],
            budget: 40,
            ..Default::default()
        };
        let rep = cmd_maxreg(&args, dir.path()).unwrap();
        assert_eq!(rep.samples.len(), 2);
        let svd = rep.svd_norm.unwrap();
        assert!((rep.samples[0].k_hat - svd).abs() <= 1e-3 * svd);
        let csv = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
        assert_eq!(csv.lines().count(), 3);
        assert!(fs::read_to_string(dir.path().join("probe.meta")).unwrap().contains("K_hat.p2.q2="));
    }
}
