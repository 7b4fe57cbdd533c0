//! The acceptance suite: ten checks, each returning a pass flag and a
//! one-line detail with the measured values and thresholds.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::cutoff::{build_cutoff, verify_fractional_bounds, CutoffMode, CutoffSpec};
use crate::diagnostics::{
    blow_up_report, check_mass_bound, concentration_ratio, BlowUpReport, Diagnostics, DiagnosticsConfig,
};
use crate::grid::{integrate, Field, Grid};
use crate::maxreg::{
    dense_operator_norm, estimate_k, local_regularity_check, max_stable_dt, power_iteration,
    random_local_regularity_case, solve_heat, SpaceTimeOperator,
};
use crate::solver::{compute_stable_dt, run, ProblemSpec, State, Stepper, StepperConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} criterion {:>2} {}: {} ({:.1}s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

fn timed(id: u32, name: &'static str, f: impl FnOnce() -> (bool, String)) -> CriterionResult {
    let start = Instant::now();
    let (passed, detail) = f();
    CriterionResult { id, name, passed, detail, seconds: start.elapsed().as_secs_f64() }
}

fn unit(n: usize) -> Grid {
    Grid::new(n, n, 1.0, 1.0).expect("valid grid")
}

fn spec(kappa: Field, mu: Field, u0: Field, v0: Field, t_final: f64) -> ProblemSpec {
    ProblemSpec::new(kappa, mu, u0, v0, t_final, t_final / 2.0).expect("valid problem")
}

pub const CRITERIA: [(u32, &str); 10] = [
    (1, "conservation"),
    (2, "mass identity"),
    (3, "mass bound suite"),
    (4, "logistic oracle"),
    (5, "v relaxation oracle"),
    (6, "spatial order"),
    (7, "cutoff bounds"),
    (8, "max-regularity oracle"),
    (9, "localized max-regularity inequality"),
    (10, "localization experiment"),
];

pub fn run_criterion(id: u32) -> Option<CriterionResult> {
    Some(match id {
        1 => conservation(),
        2 => mass_identity(),
        3 => mass_bound_suite(),
        4 => logistic_oracle(),
        5 => relaxation_oracle(),
        6 => spatial_order(),
        7 => cutoff_bounds(),
        8 => maxreg_oracle(),
        9 => local_regularity_batches(),
        10 => localization(&LocalizationSetup::default()),
        _ => return None,
    })
}

pub fn run_all() -> Vec<CriterionResult> {
    CRITERIA.iter().filter_map(|&(id, _)| run_criterion(id)).collect()
}

/// `kappa = mu = 0`, random nonnegative `u0`, active taxis: relative mass
/// drift stays below `1e-10` over 10 000 steps on 64x64.
pub fn conservation() -> CriterionResult {
    timed(1, "conservation", || {
        let g = unit(64);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let u0 = Field::from_values(g, (0..g.len()).map(|_| rng.gen_range(0.0..1.0)).collect()).unwrap();
        let v0 = Field::from_fn(g, |x, y| 1.0 + (PI * x).cos() * (2.0 * PI * y).cos());
        let p = spec(Field::zeros(g), Field::zeros(g), u0, v0, 1e9);
        let cfg = StepperConfig { dt_max: 1.0, ..Default::default() };
        let mut stepper = Stepper::new(&p, cfg);
        let mut s = State::initial(&p);
        let mut next = s.clone();
        let m0 = integrate(&s.u);
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let dt = compute_stable_dt(&s, &p, &cfg);
            let out = stepper.advance(&s, dt, &mut next);
            if !out.accepted {
                return (false, format!("step rejected at t = {:e}", s.t));
            }
            std::mem::swap(&mut s, &mut next);
            worst = worst.max((integrate(&s.u) - m0).abs() / m0);
        }
        (worst <= 1e-10, format!("max relative drift {:.3e} over 10000 steps (tol 1e-10), t = {:.4}", worst, s.t))
    })
}

/// `kappa = 1, mu = 0`: `int u(1) = e int u0` within `1e-4` relative at `dt <= 1e-4`.
pub fn mass_identity() -> CriterionResult {
    timed(2, "mass identity", || {
        let g = unit(32);
        let u0 = Field::from_fn(g, |x, y| 1.0 + 0.5 * (PI * x).cos() * (PI * y).cos());
        let v0 = Field::from_fn(g, |x, y| x * x + y);
        let p = spec(Field::constant(g, 1.0), Field::zeros(g), u0, v0, 1.0);
        let out = run(&p, &StepperConfig { dt_max: 1e-4, ..Default::default() }, &[], &mut ()).unwrap();
        let want = std::f64::consts::E * integrate(&p.u0);
        let err = (integrate(&out.state.u) - want).abs() / want;
        (
            err <= 1e-4 && out.t_stop == 1.0,
            format!("relative error {:.3e} at t = {} with dt <= 1e-4 (tol 1e-4)", err, out.t_stop),
        )
    })
}

/// Heterogeneous coefficient pairs for the mass-bound suite.
pub const MASS_BOUND_SUITE: [(&str, &str); 6] = [
    ("1 - 2*x", "(x-0.5)^2 + y"),
    ("2*sin(2*pi*x)*cos(2*pi*y)", "1"),
    ("1", "min(1, 16*((x-0.5)^2 + (y-0.5)^2))"),
    ("0.5 + 0.5*cos(pi*x)", "x"),
    ("-1 + 3*y", "exp(-((x-0.3)^2 + (y-0.7)^2)/0.02)"),
    ("tanh(10*(x - y))", "0"),
];

/// `M(t) + A(t) <= ||u0||_1 e^{kappa0 t} (1 + 0.02)` at every record of each run.
pub fn mass_bound_suite() -> CriterionResult {
    timed(3, "mass bound suite", || {
        let g = unit(32);
        let mut all = true;
        let mut parts = Vec::new();
        for (k, m) in MASS_BOUND_SUITE {
            let kappa = Field::from_expr(g, &k.parse().unwrap()).unwrap();
            let mu = Field::from_expr(g, &m.parse().unwrap()).unwrap();
            let u0 = Field::from_fn(g, |x, y| 1.0 + 4.0 * (-20.0 * ((x - 0.4).powi(2) + (y - 0.6).powi(2))).exp());
            let v0 = Field::from_fn(g, |x, y| 0.5 + x * y);
            let p = spec(kappa, mu, u0, v0, 1.0);
            let cfg = DiagnosticsConfig::default();
            let mut d = Diagnostics::new(&p, &cfg);
            let s0 = State::initial(&p);
            crate::solver::Observer::on_checkpoint(&mut d, &s0, 0.0);
            let times: Vec<f64> = (1..=20).map(|i| i as f64 * 0.05).collect();
            let out = run(&p, &StepperConfig::default(), &times, &mut d).unwrap();
            let check = check_mass_bound(&d.records, 0.02).unwrap();
            all &= check.passed && out.t_stop == 1.0;
            parts.push(format!("[kappa={} mu={}: margin {:.3e}]", k, m, check.worst_margin));
        }
        (all, format!("{} configs, tol_quad 0.02 {}", MASS_BOUND_SUITE.len(), parts.join(" ")))
    })
}

/// Homogeneous `kappa = mu = 1`, `u0 = 0.5`: `u(2) = 0.8808 +- 1e-3`.
pub fn logistic_oracle() -> CriterionResult {
    timed(4, "logistic oracle", || {
        let g = unit(16);
        let p = spec(Field::constant(g, 1.0), Field::constant(g, 1.0), Field::constant(g, 0.5), Field::zeros(g), 2.0);
        let out = run(&p, &StepperConfig { dt_max: 1e-4, ..Default::default() }, &[], &mut ()).unwrap();
        let (lo, hi) = (out.state.u.min(), out.state.u.max());
        let err = (lo - 0.8808).abs().max((hi - 0.8808).abs());
        (err <= 1e-3, format!("u(2) in [{:.6}, {:.6}], target 0.8808 +- 1e-3", lo, hi))
    })
}

/// `u = 1`, `v0 = 2`: `v(1) = 1 + e^{-1} = 1.3679 +- 1e-3`.
pub fn relaxation_oracle() -> CriterionResult {
    timed(5, "v relaxation oracle", || {
        let g = unit(16);
        let p = spec(Field::zeros(g), Field::zeros(g), Field::constant(g, 1.0), Field::constant(g, 2.0), 1.0);
        let out = run(&p, &StepperConfig { dt_max: 1e-4, ..Default::default() }, &[], &mut ()).unwrap();
        let (lo, hi) = (out.state.v.min(), out.state.v.max());
        let err = (lo - 1.3679).abs().max((hi - 1.3679).abs());
        (err <= 1e-3, format!("v(1) in [{:.6}, {:.6}], target 1.3679 +- 1e-3", lo, hi))
    })
}

/// Decay rate of the `cos(pi x)` mode of `v` (with `u = 0`) against
/// `pi^2 + 1`, at the stepper's own step size.
pub fn eigenmode_rate_error(n: usize, t_final: f64) -> f64 {
    let g = unit(n);
    let mode = Field::from_fn(g, |x, _| (PI * x).cos());
    let v0 = mode.map(|c| 1.0 + c);
    let p = spec(Field::zeros(g), Field::zeros(g), Field::zeros(g), v0, t_final);
    let out = run(&p, &StepperConfig::default(), &[], &mut ()).unwrap();
    let project = |f: &Field| -> f64 {
        let num: f64 = f.values().iter().zip(mode.values()).map(|(a, b)| a * b).sum();
        let den: f64 = mode.values().iter().map(|b| b * b).sum();
        num / den
    };
    let rate = -(project(&out.state.v) / project(&p.v0)).ln() / out.t_stop;
    (rate - (PI * PI + 1.0)).abs()
}

pub fn spatial_order() -> CriterionResult {
    timed(6, "spatial order", || {
        let errs: Vec<f64> = [32, 64, 128].iter().map(|&n| eigenmode_rate_error(n, 0.1)).collect();
        let o1 = (errs[0] / errs[1]).log2();
        let o2 = (errs[1] / errs[2]).log2();
        (
            o1 >= 1.8 && o2 >= 1.8,
            format!(
                "rate errors {:.3e}, {:.3e}, {:.3e} at n = 32, 64, 128; observed orders {:.3}, {:.3} (min 1.8)",
                errs[0], errs[1], errs[2], o1, o2
            ),
        )
    })
}

pub fn cutoff_specs() -> [CutoffSpec; 5] {
    let c = |x0, r_inner, r_outer, eta, mode| CutoffSpec { x0, r_inner, r_outer, eta, mode };
    [
        c((0.5, 0.5), 0.1, 0.3, 0.05, CutoffMode::Radial),
        c((0.0, 0.5), 0.1, 0.3, 0.1, CutoffMode::Tensor),
        c((1.0, 1.0), 0.15, 0.4, 0.2, CutoffMode::Tensor),
        c((0.3, 0.6), 0.05, 0.2, 0.3, CutoffMode::Radial),
        c((0.5, 0.0), 0.1, 0.35, 0.45, CutoffMode::Tensor),
    ]
}

pub fn cutoff_bounds() -> CriterionResult {
    timed(7, "cutoff bounds", || {
        let g = unit(64);
        let mut all = true;
        let mut parts = Vec::new();
        for s in cutoff_specs() {
            match build_cutoff(&s, &g).and_then(|f| verify_fractional_bounds(&f).map(|c| (c, f.bounds_hold(c)))) {
                Ok((c, holds)) => {
                    all &= c.is_finite() && holds;
                    parts.push(format!("[eta={} x0=({}, {}) C={:.4e} holds={}]", s.eta, s.x0.0, s.x0.1, c, holds));
                }
                Err(e) => {
                    all = false;
                    parts.push(format!("[eta={} error: {}]", s.eta, e));
                }
            }
        }
        (all, parts.join(" "))
    })
}

/// Grid, step count and step size shared by the two max-regularity checks.
pub fn maxreg_setup() -> (Grid, usize, f64) {
    let g = unit(8);
    (g, 16, 0.9 * max_stable_dt(&g))
}

pub fn maxreg_oracle() -> CriterionResult {
    timed(8, "max-regularity oracle", || {
        let (g, steps, dt) = maxreg_setup();
        let probe = estimate_k(g, dt, steps, 2.0, 2.0, 100_000, 0).unwrap();
        let svd = dense_operator_norm(&SpaceTimeOperator::new(g, dt, steps).unwrap());
        let rel = (probe.k_hat - svd).abs() / svd;
        (
            rel <= 1e-6,
            format!(
                "power iteration {:.12e} ({} iterations) vs dense SVD {:.12e}: relative {:.3e} (tol 1e-6)",
                probe.k_hat, probe.iterations, svd, rel
            ),
        )
    })
}

pub fn local_regularity_batches() -> CriterionResult {
    timed(9, "localized max-regularity inequality", || {
        let g = unit(12);
        let steps = 16;
        let dt = 0.9 * max_stable_dt(&g);
        let k = power_iteration(&SpaceTimeOperator::new(g, dt, steps).unwrap(), 100_000, 1e-14, 0).k_hat;
        let mut all = true;
        let mut worst = f64::INFINITY;
        for seed in 0..10 {
            let (heat, cs) = random_local_regularity_case(g, dt, steps, seed);
            let cutoff = build_cutoff(&cs, &g).unwrap();
            let rep = local_regularity_check(&cutoff, &solve_heat(&heat).unwrap(), k);
            all &= rep.passed && rep.worst_margin > 0.0;
            worst = worst.min(rep.worst_margin);
        }
        (all, format!("10 seeded batches on 12x12, 16 steps, K(2,2) = {:.6e}; smallest margin {:.4e}", k, worst))
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalizationSetup {
    pub n: usize,
    pub t_final: f64,
    pub u_cap: f64,
    pub zero: (f64, f64),
    pub control_zero: (f64, f64),
    pub u0_center: (f64, f64),
    pub u0_mass: f64,
    pub u0_width: f64,
    /// `v0 = v0_factor * u0`.
    pub v0_factor: f64,
    /// Zero-set threshold as a multiple of `min mu_h`; the zero may fall on a cell corner.
    pub mu_tol_factor: f64,
    /// Radius of the ball around the control zero that must contain the control argmax.
    pub follow_radius: f64,
}

impl Default for LocalizationSetup {
    fn default() -> Self {
        Self {
            n: 128,
            t_final: 5.0,
            u_cap: 1e6,
            zero: (0.5, 0.5),
            control_zero: (0.25, 0.25),
            u0_center: (0.5, 0.5),
            u0_mass: 400.0,
            u0_width: 0.03,
            v0_factor: 0.0,
            mu_tol_factor: 1.01,
            follow_radius: 0.15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LocalizationRun {
    pub zero: (f64, f64),
    pub report: BlowUpReport,
    pub steps: u64,
    /// `sup_{B(zero, 0.15)} u / sup_{outside B(zero, 0.3)} u` at stop time.
    pub ratio: f64,
}

impl LocalizationSetup {
    pub fn mu_expr(zero: (f64, f64)) -> String {
        format!("min(1, 16*((x-{})^2 + (y-{})^2))", zero.0, zero.1)
    }

    pub fn u0_expr(&self) -> String {
        let s2 = 2.0 * self.u0_width * self.u0_width;
        format!("{}*exp(-((x-{})^2 + (y-{})^2)/{})", self.u0_mass / (PI * s2), self.u0_center.0, self.u0_center.1, s2)
    }

    pub fn run(&self, zero: (f64, f64)) -> LocalizationRun {
        let g = unit(self.n);
        let mu = Field::from_expr(g, &Self::mu_expr(zero).parse().unwrap()).unwrap();
        let u0 = Field::from_expr(g, &self.u0_expr().parse().unwrap()).unwrap();
        let v0 = u0.map(|u| self.v0_factor * u);
        let p = spec(Field::constant(g, 1.0), mu, u0, v0, self.t_final);
        let cfg = StepperConfig { u_cap: self.u_cap, ..Default::default() };
        let out = run(&p, &cfg, &[], &mut ()).unwrap();
        let mu_min = p.mu.values().iter().cloned().fold(f64::INFINITY, f64::min);
        let report = blow_up_report(&out, &p.mu, 0.5, self.mu_tol_factor * mu_min);
        let ratio = concentration_ratio(&out.state.u, zero, 0.15, 0.3);
        LocalizationRun { zero, report, steps: out.steps, ratio }
    }
}

fn describe(r: &LocalizationRun) -> String {
    let b = &r.report;
    format!(
        "zero ({}, {}): stop {} at t = {:.4}, {} steps, sup u {:.4e} at ({:.4}, {:.4}), |B_h| = {}, d = {}, ratio {:.3e}",
        r.zero.0,
        r.zero.1,
        b.stop_reason,
        b.t_stop,
        r.steps,
        b.sup_u,
        b.argmax.0,
        b.argmax.1,
        b.blowup_set.len(),
        b.distance.map_or("none".into(), |d| format!("{:.4e}", d)),
        r.ratio
    )
}

/// Evaluates the localization criterion for an already computed pair of runs.
pub fn judge_localization(
    setup: &LocalizationSetup,
    main: &LocalizationRun,
    control: &LocalizationRun,
) -> (bool, String) {
    let h = 1.0 / setup.n as f64;
    let tol = 2.0 * h;
    let dist = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).hypot(a.1 - b.1);
    let header = format!(
        "n = {}, T = {}, u_cap = {:e}, kappa = 1, mu = {}, u0 = {}; ",
        setup.n,
        setup.t_final,
        setup.u_cap,
        LocalizationSetup::mu_expr(setup.zero),
        setup.u0_expr()
    );
    let body = format!("main {}; control {}", describe(main), describe(control));
    if main.report.triggered || control.report.triggered {
        let main_ok = !main.report.triggered || main.report.distance.is_some_and(|d| d <= tol);
        let control_ok = !control.report.triggered || control.report.distance.is_some_and(|d| d <= tol);
        let a = control.report.argmax;
        let follows = dist(a, control.zero) <= setup.follow_radius && dist(a, control.zero) < dist(a, setup.zero);
        (
            main_ok && control_ok && follows,
            format!(
                "{}sensor triggered: d <= 2h = {:.4e} main {} control {}, control argmax in B({}) of its zero and nearer it than the main zero {}; {}",
                header, tol, main_ok, control_ok, setup.follow_radius, follows, body
            ),
        )
    } else {
        let ok = main.ratio >= 10.0 && control.ratio >= 10.0;
        (ok, format!("{}no trigger, concentration ratio >= 10 required for both runs; {}", header, body))
    }
}

pub fn localization(setup: &LocalizationSetup) -> CriterionResult {
    timed(10, "localization experiment", || {
        let (main, control) = rayon::join(|| setup.run(setup.zero), || setup.run(setup.control_zero));
        judge_localization(setup, &main, &control)
    })
}
