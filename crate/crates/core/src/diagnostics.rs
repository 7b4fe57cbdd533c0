//! Monitored functionals of a run.
//!
//! Every record carries the mass `M(t)`, the accumulated damping
//! `A(t) = int_0^t int mu u^2` (left-endpoint in time), the growth envelope
//! `z(t) = ||u0||_1 exp(||kappa||_inf t)`, global and ball-local norms of `v`
//! and `grad v`, the localized functionals `int phi_p u^p`, and the three
//! computable terms of their differential inequality. None of the local
//! quantities is asserted against a bound; only finiteness is checked.

use std::io;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cutoff::{build_cutoff, CutoffError, CutoffField, CutoffSpec};
use crate::grid::{
    gradient_centers, in_ball, integrate, laplacian, lp_norm, magnitude, masked_integrate, masked_sup, Field, Grid,
};
use crate::solver::{Observer, ProblemSpec, RunOutput, State, StopReason};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiagnosticsError {
    #[error("functional exponent p must lie in (1, 2), got {0}")]
    Exponent(f64),
    #[error("functional needs 0 < eps < mu(x0)/8 = {bound}, got eps = {eps}")]
    Epsilon { eps: f64, bound: f64 },
    #[error("functional cutoff: {0}")]
    Cutoff(#[from] CutoffError),
    #[error("functional cutoff around ({0}, {1}) has no support on the grid")]
    SupportOutsideGrid(f64, f64),
    #[error("ball radius must be positive, got {0}")]
    BallRadius(f64),
    #[error("mass bound check needs at least one record")]
    NoRecords,
}

/// A ball on which local norms of the solution are monitored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: (f64, f64),
    pub radius: f64,
    /// Exponents of instantaneous `||grad v||_{L^q(B)}`.
    #[serde(default)]
    pub q: Vec<f64>,
    /// Exponents of accumulated `int_tau^t int_B |grad v|^alpha`.
    #[serde(default)]
    pub alpha: Vec<f64>,
    /// Exponents of accumulated `int_tau^t int_B |lap v|^r`.
    #[serde(default)]
    pub r: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    pub p: f64,
    pub eps: f64,
    pub cutoff: CutoffSpec,
}

/// `int phi_p u^p` with its cutoff built on the run grid.
#[derive(Debug, Clone)]
pub struct Functional {
    pub spec: FunctionalSpec,
    pub cutoff: CutoffField,
    pub mu_x0: f64,
    /// Estimate of `K~(p + 1)` used in the admissibility margin.
    pub k_tilde: f64,
    pub margin: f64,
}

/// `mu(x0)/2 - 4 eps - (p - 1) e^{p kappa0 T} K~(p+1) / (p eps^p)`.
pub fn admissibility_margin(p: f64, eps: f64, mu_x0: f64, kappa0: f64, t_final: f64, k_tilde: f64) -> f64 {
    mu_x0 / 2.0 - 4.0 * eps - (p - 1.0) * (p * kappa0 * t_final).exp() * k_tilde / (p * eps.powf(p))
}

impl Functional {
    pub fn new(
        spec: FunctionalSpec,
        grid: &Grid,
        mu_x0: f64,
        kappa0: f64,
        t_final: f64,
        k_tilde: f64,
    ) -> Result<Self, DiagnosticsError> {
        if !(spec.p > 1.0 && spec.p < 2.0) {
            return Err(DiagnosticsError::Exponent(spec.p));
        }
        let bound = mu_x0 / 8.0;
        if !(spec.eps > 0.0 && spec.eps < bound) {
            return Err(DiagnosticsError::Epsilon { eps: spec.eps, bound });
        }
        let cutoff = build_cutoff(&spec.cutoff, grid)?;
        if !cutoff.has_support() {
            return Err(DiagnosticsError::SupportOutsideGrid(spec.cutoff.x0.0, spec.cutoff.x0.1));
        }
        let margin = admissibility_margin(spec.p, spec.eps, mu_x0, kappa0, t_final, k_tilde);
        if margin < 0.0 {
            warn!(
                "functional at ({}, {}) with p = {}, eps = {}: admissibility margin {:.3e} < 0 \
                 with K~ estimate {:.3e} (advisory)",
                spec.cutoff.x0.0, spec.cutoff.x0.1, spec.p, spec.eps, margin, k_tilde
            );
        }
        Ok(Self { spec, cutoff, mu_x0, k_tilde, margin })
    }

    pub fn is_admissible(&self) -> bool {
        self.margin >= 0.0
    }

    pub fn value(&self, u: &Field) -> f64 {
        let p = self.spec.p;
        weighted_integral(u, &self.cutoff.phi, |x| x.powf(p))
    }
}

fn weighted_integral(f: &Field, weight: &Field, g: impl Fn(f64) -> f64) -> f64 {
    let grid = f.grid();
    let s: f64 = f.values().iter().zip(weight.values()).filter(|(_, &w)| w != 0.0).map(|(&v, &w)| w * g(v)).sum();
    s * grid.area() / grid.len() as f64
}

/// Computable right-hand-side terms of the differential inequality for
/// `int phi_p u^p`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct FunctionalTerms {
    /// `int (mu - 4 eps) phi_p u^{p+1}`
    pub dissipation: f64,
    /// `(p - 1)/(p eps^p) int phi_p |lap v|^{p+1}`
    pub regularity: f64,
    /// `||kappa||_inf int phi_p u^p`
    pub growth: f64,
}

pub fn functional_terms(u: &Field, lap_v: &Field, mu: &Field, kappa0: f64, functional: &Functional) -> FunctionalTerms {
    let FunctionalSpec { p, eps, .. } = functional.spec;
    let phi = &functional.cutoff.phi;
    let grid = u.grid();
    let cell = grid.area() / grid.len() as f64;
    let (mut diss, mut reg, mut growth) = (0.0, 0.0, 0.0);
    for k in 0..grid.len() {
        let w = phi.values()[k];
        if w == 0.0 {
            continue;
        }
        let uk = u.values()[k];
        diss += (mu.values()[k] - 4.0 * eps) * w * uk.powf(p + 1.0);
        reg += w * lap_v.values()[k].abs().powf(p + 1.0);
        growth += w * uk.powf(p);
    }
    FunctionalTerms {
        dissipation: diss * cell,
        regularity: (p - 1.0) / (p * eps.powf(p)) * reg * cell,
        growth: kappa0 * growth * cell,
    }
}

#[derive(Debug, Clone)]
pub struct DiagnosticsConfig {
    /// Exponents of `||v||_{L^s}`.
    pub s: Vec<f64>,
    /// Exponents of global `||grad v||_{L^q}`.
    pub grad_q: Vec<f64>,
    pub balls: Vec<BallSpec>,
    pub functionals: Vec<Functional>,
    pub tol_quad: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self { s: vec![], grad_q: vec![], balls: vec![], functionals: vec![], tol_quad: 0.02 }
    }
}

fn fmt_exp(x: f64) -> String {
    format!("{}", x)
}

impl DiagnosticsConfig {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        for b in &self.balls {
            if !(b.radius > 0.0) {
                return Err(DiagnosticsError::BallRadius(b.radius));
            }
        }
        Ok(())
    }

    /// Names of the configured columns, in config order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend(self.s.iter().map(|s| format!("v_L{}", fmt_exp(*s))));
        names.extend(self.grad_q.iter().map(|q| format!("grad_v_L{}", fmt_exp(*q))));
        for (b, ball) in self.balls.iter().enumerate() {
            names.push(format!("ball{}_sup_u", b));
            names.extend(ball.q.iter().map(|q| format!("ball{}_grad_v_L{}", b, fmt_exp(*q))));
            names.extend(ball.alpha.iter().map(|a| format!("ball{}_int_grad_v_pow{}", b, fmt_exp(*a))));
            names.extend(ball.r.iter().map(|r| format!("ball{}_int_lap_v_pow{}", b, fmt_exp(*r))));
        }
        for (f, _) in self.functionals.iter().enumerate() {
            for suffix in ["value", "dissipation", "regularity", "growth"] {
                names.push(format!("F{}_{}", f, suffix));
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallRecord {
    pub sup_u: f64,
    pub grad_v: Vec<f64>,
    pub int_grad_v: Vec<f64>,
    pub int_lap_v: Vec<f64>,
    /// Fewer than two cells inside the ball.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FunctionalRecord {
    pub value: f64,
    pub terms: FunctionalTerms,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub dt: f64,
    pub mass: f64,
    pub sup_u: f64,
    pub argmax: (f64, f64),
    /// `int_0^t int mu u^2`
    pub a_acc: f64,
    pub z_bound: f64,
    pub v_norms: Vec<f64>,
    pub grad_v_norms: Vec<f64>,
    pub balls: Vec<BallRecord>,
    pub functionals: Vec<FunctionalRecord>,
}

impl DiagnosticsRecord {
    /// Configured columns flattened in the order of [`DiagnosticsConfig::column_names`].
    pub fn extra_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(&self.v_norms);
        out.extend(&self.grad_v_norms);
        for b in &self.balls {
            out.push(b.sup_u);
            out.extend(&b.grad_v);
            out.extend(&b.int_grad_v);
            out.extend(&b.int_lap_v);
        }
        for f in &self.functionals {
            out.extend([f.value, f.terms.dissipation, f.terms.regularity, f.terms.growth]);
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        [self.t, self.dt, self.mass, self.sup_u, self.a_acc, self.z_bound]
            .iter()
            .chain(self.extra_values().iter())
            .all(|v| v.is_finite())
    }
}

/// Accumulates space-time integrals along a run and emits records at
/// checkpoints.
pub struct Diagnostics<'a> {
    spec: &'a ProblemSpec,
    cfg: &'a DiagnosticsConfig,
    u0_l1: f64,
    kappa0: f64,
    a_acc: f64,
    /// Per ball, accumulated `|grad v|^alpha` then `|lap v|^r` integrals.
    ball_acc: Vec<(Vec<f64>, Vec<f64>)>,
    pub records: Vec<DiagnosticsRecord>,
}

impl<'a> Diagnostics<'a> {
    pub fn new(spec: &'a ProblemSpec, cfg: &'a DiagnosticsConfig) -> Self {
        let ball_acc = cfg.balls.iter().map(|b| (vec![0.0; b.alpha.len()], vec![0.0; b.r.len()])).collect();
        Self {
            spec,
            cfg,
            u0_l1: lp_norm(&spec.u0, 1.0),
            kappa0: spec.kappa0(),
            a_acc: 0.0,
            ball_acc,
            records: Vec::new(),
        }
    }

    pub fn u0_l1(&self) -> f64 {
        self.u0_l1
    }

    pub fn kappa0(&self) -> f64 {
        self.kappa0
    }

    pub fn damping_integral(&self) -> f64 {
        self.a_acc
    }

    /// Snapshot of every monitored quantity at `state`.
    pub fn record(&self, state: &State, dt: f64) -> DiagnosticsRecord {
        let grid = &self.spec.grid;
        let u = &state.u;
        let (k, sup_u) = u.argmax();
        let needs_grad = !self.cfg.grad_q.is_empty() || self.cfg.balls.iter().any(|b| !b.q.is_empty());
        let grad = needs_grad.then(|| {
            let (gx, gy) = gradient_centers(&state.v);
            magnitude(&gx, &gy)
        });
        let lap_v = (!self.cfg.functionals.is_empty()).then(|| laplacian(&state.v));

        let balls = self
            .cfg
            .balls
            .iter()
            .zip(&self.ball_acc)
            .map(|(b, (acc_grad, acc_lap))| {
                let cells = masked_integrate(u, b.center, b.radius, 1.0).cells;
                BallRecord {
                    sup_u: masked_sup(u, b.center, b.radius).unwrap_or(0.0),
                    grad_v: b
                        .q
                        .iter()
                        .map(|&q| masked_integrate(grad.as_ref().unwrap(), b.center, b.radius, q).value.powf(1.0 / q))
                        .collect(),
                    int_grad_v: acc_grad.clone(),
                    int_lap_v: acc_lap.clone(),
                    degenerate: cells <= 1,
                }
            })
            .collect();

        let functionals = self
            .cfg
            .functionals
            .iter()
            .map(|f| FunctionalRecord {
                value: f.value(u),
                terms: functional_terms(u, lap_v.as_ref().unwrap(), &self.spec.mu, self.kappa0, f),
            })
            .collect();

        DiagnosticsRecord {
            t: state.t,
            dt,
            mass: integrate(u),
            sup_u,
            argmax: grid.center(k),
            a_acc: self.a_acc,
            z_bound: self.u0_l1 * (self.kappa0 * state.t).exp(),
            v_norms: self.cfg.s.iter().map(|&s| lp_norm(&state.v, s)).collect(),
            grad_v_norms: self.cfg.grad_q.iter().map(|&q| lp_norm(grad.as_ref().unwrap(), q)).collect(),
            balls,
            functionals,
        }
    }
}

fn damping_density(u: &Field, mu: &Field) -> f64 {
    let s: f64 = u.values().iter().zip(mu.values()).map(|(&u, &m)| m * u * u).sum();
    s * u.grid().area() / u.grid().len() as f64
}

impl Observer for Diagnostics<'_> {
    fn on_step(&mut self, before: &State, after: &State, dt: f64) {
        self.a_acc += dt * damping_density(&before.u, &self.spec.mu);

        let tau = self.spec.tau;
        if self.cfg.balls.iter().all(|b| b.alpha.is_empty() && b.r.is_empty()) || after.t <= tau {
            return;
        }
        // share of the step inside [tau, t]
        let w = after.t - before.t.max(tau);
        let grad = self.cfg.balls.iter().any(|b| !b.alpha.is_empty()).then(|| {
            let (gx, gy) = gradient_centers(&before.v);
            magnitude(&gx, &gy)
        });
        let lap = self.cfg.balls.iter().any(|b| !b.r.is_empty()).then(|| laplacian(&before.v));
        for (b, (acc_grad, acc_lap)) in self.cfg.balls.iter().zip(self.ball_acc.iter_mut()) {
            for (a, acc) in b.alpha.iter().zip(acc_grad.iter_mut()) {
                *acc += w * masked_integrate(grad.as_ref().unwrap(), b.center, b.radius, *a).value;
            }
            for (r, acc) in b.r.iter().zip(acc_lap.iter_mut()) {
                *acc += w * masked_integrate(lap.as_ref().unwrap(), b.center, b.radius, *r).value;
            }
        }
    }

    fn on_checkpoint(&mut self, state: &State, dt: f64) {
        let rec = self.record(state, dt);
        if !rec.all_finite() {
            warn!("non-finite diagnostics at t = {}", rec.t);
        }
        self.records.push(rec);
    }
}

/// Leading columns of `diagnostics.csv`; configured columns follow.
pub const CSV_FIXED_COLUMNS: [&str; 8] = ["t", "dt", "mass", "sup_u", "argmax_x", "argmax_y", "A", "z_bound"];

/// Writes records as CSV, preceded by one `#` line naming the configured
/// columns. Values use Rust's `{:e}` formatting.
pub fn write_csv<W: io::Write>(mut out: W, cfg: &DiagnosticsConfig, records: &[DiagnosticsRecord]) -> io::Result<()> {
    let names = cfg.column_names();
    writeln!(out, "# configured columns: {}", if names.is_empty() { "none".into() } else { names.join(",") })?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_FIXED_COLUMNS.iter().copied().chain(names.iter().map(String::as_str)))?;
    for r in records {
        let fixed = [r.t, r.dt, r.mass, r.sup_u, r.argmax.0, r.argmax.1, r.a_acc, r.z_bound];
        w.write_record(fixed.iter().chain(r.extra_values().iter()).map(|v| format!("{:e}", v)))?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassBoundViolation {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MassBoundCheck {
    pub passed: bool,
    /// Smallest `(z (1 + tol) - (M + A)) / z` over all records.
    pub worst_margin: f64,
    pub worst_t: f64,
    pub violation: Option<MassBoundViolation>,
}

/// Checks `M(t) + A(t) <= ||u0||_1 e^{kappa0 t} (1 + tol)` at every record.
pub fn check_mass_bound(records: &[DiagnosticsRecord], tol: f64) -> Result<MassBoundCheck, DiagnosticsError> {
    let first = records.first().ok_or(DiagnosticsError::NoRecords)?;
    let mut out = MassBoundCheck { passed: true, worst_margin: f64::INFINITY, worst_t: first.t, violation: None };
    for r in records {
        let lhs = r.mass + r.a_acc;
        let rhs = r.z_bound * (1.0 + tol);
        let margin = if r.z_bound > 0.0 { (rhs - lhs) / r.z_bound } else { -lhs };
        if margin < out.worst_margin {
            out.worst_margin = margin;
            out.worst_t = r.t;
        }
        if lhs > rhs && out.violation.is_none() {
            out.passed = false;
            out.violation = Some(MassBoundViolation { t: r.t, lhs, rhs });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlowUpReport {
    pub triggered: bool,
    pub stop_reason: StopReason,
    pub t_stop: f64,
    pub argmax: (f64, f64),
    pub sup_u: f64,
    pub theta_b: f64,
    pub mu_tol: f64,
    /// Centers of cells with `u >= theta_b sup u` (empty unless triggered).
    pub blowup_set: Vec<(f64, f64)>,
    /// Number of cells with `mu <= mu_tol`.
    pub zero_set_size: usize,
    /// `max_{b in B} min_{z in Z} |b - z|`; `None` when `B` is empty,
    /// infinite when `Z` is empty but `B` is not.
    pub distance: Option<f64>,
}

/// Estimated blow-up set of a halted run and its distance to the zero set of `mu`.
pub fn blow_up_report(out: &RunOutput, mu: &Field, theta_b: f64, mu_tol: f64) -> BlowUpReport {
    let u = &out.state.u;
    let grid = *u.grid();
    let (k, sup_u) = u.argmax();
    let triggered = out.stop_reason.is_blow_up();
    let blowup_set: Vec<(f64, f64)> = if triggered {
        (0..grid.len()).filter(|&k| u.values()[k] >= theta_b * sup_u).map(|k| grid.center(k)).collect()
    } else {
        Vec::new()
    };
    let zeros: Vec<(f64, f64)> =
        (0..grid.len()).filter(|&k| mu.values()[k] <= mu_tol).map(|k| grid.center(k)).collect();
    let distance = (!blowup_set.is_empty()).then(|| set_distance(&blowup_set, &zeros));
    BlowUpReport {
        triggered,
        stop_reason: out.stop_reason,
        t_stop: out.t_stop,
        argmax: grid.center(k),
        sup_u,
        theta_b,
        mu_tol,
        blowup_set,
        zero_set_size: zeros.len(),
        distance,
    }
}

/// One-sided Hausdorff distance `max_{b} min_{z} |b - z|`.
pub fn set_distance(from: &[(f64, f64)], to: &[(f64, f64)]) -> f64 {
    from.iter()
        .map(|b| to.iter().map(|z| (b.0 - z.0).hypot(b.1 - z.1)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// `sup_{B(center, r_in)} u / sup_{outside B(center, r_out)} u`.
pub fn concentration_ratio(u: &Field, center: (f64, f64), r_in: f64, r_out: f64) -> f64 {
    let g = *u.grid();
    let inner = masked_sup(u, center, r_in).unwrap_or(0.0);
    let outer = g
        .cells()
        .filter(|&(i, j)| !in_ball(g.x(i), g.y(j), center, r_out))
        .map(|(i, j)| u[(i, j)].abs())
        .fold(0.0, f64::max);
    if outer > 0.0 {
        inner / outer
    } else if inner > 0.0 {
        f64::INFINITY
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cutoff::CutoffMode;
    use crate::solver::{run, StepperConfig};

    fn unit(n: usize) -> Grid {
        Grid::new(n, n, 1.0, 1.0).unwrap()
    }

    fn spec_with(g: Grid, kappa: Field, mu: Field, u0: Field) -> ProblemSpec {
        ProblemSpec::new(kappa, mu, u0, Field::zeros(g), 1.0, 0.25).unwrap()
    }

    fn whole_domain_functional(g: &Grid, p: f64) -> Functional {
        let cutoff = CutoffSpec { x0: (0.5, 0.5), r_inner: 5.0, r_outer: 10.0, eta: 0.2, mode: CutoffMode::Tensor };
        Functional::new(FunctionalSpec { p, eps: 0.01, cutoff }, g, 1.0, 0.0, 1.0, 1.0).unwrap()
    }

    #[test]
    fn functional_spec_invariants() {
        let g = unit(16);
        let cutoff = CutoffSpec { x0: (0.5, 0.5), r_inner: 0.1, r_outer: 0.2, eta: 0.2, mode: CutoffMode::Radial };
        let mk = |p, eps| Functional::new(FunctionalSpec { p, eps, cutoff }, &g, 1.0, 0.0, 1.0, 1.0);
        assert!(matches!(mk(2.0, 0.05), Err(DiagnosticsError::Exponent(_))));
        assert!(matches!(mk(1.5, 0.2), Err(DiagnosticsError::Epsilon { .. })));
        assert!(mk(1.5, 0.1).is_ok());
        // radial ball of radius smaller than half a cell around a cell corner: no support
        let tiny = CutoffSpec { x0: (0.5, 0.5), r_inner: 0.001, r_outer: 0.002, eta: 0.2, mode: CutoffMode::Radial };
        assert!(matches!(
            Functional::new(FunctionalSpec { p: 1.5, eps: 0.01, cutoff: tiny }, &g, 1.0, 0.0, 1.0, 1.0),
            Err(DiagnosticsError::SupportOutsideGrid(..))
        ));
    }

    #[test]
    fn margin_formula() {
        let m = admissibility_margin(1.5, 0.1, 1.0, 1.0, 2.0, 10.0);
        let expected = 0.5 - 0.4 - 0.5 * (3.0f64).exp() * 10.0 / (1.5 * 0.1f64.powf(1.5));
        assert!((m - expected).abs() < 1e-12 * expected.abs());
    }

    #[test]
    fn zero_density_records() {
        let g = unit(16);
        let spec = spec_with(g, Field::constant(g, 1.0), Field::constant(g, 1.0), Field::zeros(g));
        let cfg = DiagnosticsConfig {
            s: vec![2.0],
            grad_q: vec![1.5],
            functionals: vec![whole_domain_functional(&g, 1.5)],
            ..Default::default()
        };
        let mut d = Diagnostics::new(&spec, &cfg);
        let s = State::initial(&spec);
        d.on_step(&s, &s, 0.1);
        let r = d.record(&s, 0.1);
        assert_eq!((r.mass, r.a_acc), (0.0, 0.0));
        assert_eq!(r.functionals[0].value, 0.0);
        assert_eq!(r.functionals[0].terms, FunctionalTerms::default());
        assert!(check_mass_bound(&[r], 0.02).unwrap().passed);
    }

    #[test]
    fn unit_density_full_cutoff() {
        let g = Grid::new(8, 12, 2.0, 3.0).unwrap();
        let f = whole_domain_functional(&g, 1.5);
        assert!((f.value(&Field::constant(g, 1.0)) - 6.0).abs() < 1e-14);
    }

    #[test]
    fn damping_accumulates_on_half_domain() {
        let g = unit(16);
        let mu = Field::from_fn(g, |x, _| if x < 0.5 { 1.0 } else { 0.0 });
        let spec = spec_with(g, Field::zeros(g), mu, Field::constant(g, 2.0));
        let cfg = DiagnosticsConfig::default();
        let mut d = Diagnostics::new(&spec, &cfg);
        let s = State::initial(&spec);
        let dt = 1e-3;
        d.on_step(&s, &s, dt);
        // direct quadrature: dt * (area/2) * u^2
        assert!((d.damping_integral() - dt * 0.5 * 4.0).abs() < 1e-15);
    }

    #[test]
    fn functional_terms_cases() {
        let g = unit(16);
        let f = whole_domain_functional(&g, 1.5);
        // coefficient cancellation: mu = 4 eps everywhere
        let mu = Field::constant(g, 4.0 * f.spec.eps);
        let t = functional_terms(&Field::constant(g, 3.0), &Field::zeros(g), &mu, 1.0, &f);
        assert_eq!(t.dissipation, 0.0);
        assert_eq!(t.regularity, 0.0);

        // u = 1, v = 0, kappa0 = 1: growth equals int phi
        let radial = CutoffSpec { x0: (0.5, 0.5), r_inner: 0.1, r_outer: 0.3, eta: 0.2, mode: CutoffMode::Radial };
        let f = Functional::new(FunctionalSpec { p: 1.5, eps: 0.01, cutoff: radial }, &g, 1.0, 1.0, 1.0, 1.0).unwrap();
        let int_phi = integrate(&f.cutoff.phi);
        let t = functional_terms(&Field::constant(g, 1.0), &Field::zeros(g), &mu, 1.0, &f);
        assert!((t.growth - int_phi).abs() < 1e-14);
    }

    #[test]
    fn mass_bound_on_growth_without_damping() {
        let g = unit(16);
        let spec = ProblemSpec::new(
            Field::constant(g, 1.0),
            Field::zeros(g),
            Field::from_fn(g, |x, y| 1.0 + (6.0 * x).sin() * (4.0 * y).cos()),
            Field::from_fn(g, |x, _| x),
            1.0,
            0.5,
        )
        .unwrap();
        let cfg = DiagnosticsConfig::default();
        let mut d = Diagnostics::new(&spec, &cfg);
        let times: Vec<f64> = (1..=10).map(|k| k as f64 * 0.1).collect();
        run(&spec, &StepperConfig { dt_max: 1e-3, ..Default::default() }, &times, &mut d).unwrap();
        let check = check_mass_bound(&d.records, 0.02).unwrap();
        assert!(check.passed);
        assert!((check.worst_margin - 0.02).abs() < 1e-3, "{}", check.worst_margin);
        assert!(d.records.windows(2).all(|w| w[1].a_acc >= w[0].a_acc && w[1].z_bound >= w[0].z_bound));
    }

    #[test]
    fn mass_bound_violation_is_reported() {
        let g = unit(4);
        let spec = spec_with(g, Field::zeros(g), Field::zeros(g), Field::constant(g, 1.0));
        let cfg = DiagnosticsConfig::default();
        let d = Diagnostics::new(&spec, &cfg);
        let mut r = d.record(&State::initial(&spec), 0.0);
        r.mass *= 1.5;
        let check = check_mass_bound(&[r], 0.02).unwrap();
        assert!(!check.passed);
        let v = check.violation.unwrap();
        assert!(v.lhs > v.rhs);
        assert_eq!(check_mass_bound(&[], 0.02), Err(DiagnosticsError::NoRecords));
    }

    #[test]
    fn ball_accumulators_start_at_tau() {
        let g = unit(16);
        let spec = ProblemSpec::new(
            Field::zeros(g),
            Field::zeros(g),
            Field::constant(g, 1.0),
            Field::from_fn(g, |x, y| (x - 0.5).powi(2) + y),
            1.0,
            0.5,
        )
        .unwrap();
        let cfg = DiagnosticsConfig {
            balls: vec![BallSpec { center: (0.5, 0.5), radius: 0.3, q: vec![3.0], alpha: vec![2.0], r: vec![1.5] }],
            ..Default::default()
        };
        let mut d = Diagnostics::new(&spec, &cfg);
        run(&spec, &StepperConfig::default(), &[0.4, 1.0], &mut d).unwrap();
        let (early, late) = (&d.records[0].balls[0], &d.records[1].balls[0]);
        assert_eq!(early.int_grad_v, vec![0.0]);
        assert_eq!(early.int_lap_v, vec![0.0]);
        assert!(late.int_grad_v[0] > 0.0 && late.int_lap_v[0] > 0.0);
        assert!(d.records.iter().all(|r| r.all_finite()));
        assert_eq!(cfg.column_names().len(), d.records[0].extra_values().len());
    }

    #[test]
    fn blow_up_reports() {
        let g = unit(16);
        let u0 = Field::from_fn(g, |x, y| (-50.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp());
        let spec = spec_with(g, Field::zeros(g), Field::zeros(g), u0);
        let quiet = run(&spec, &StepperConfig::default(), &[], &mut ()).unwrap();
        let r = blow_up_report(&quiet, &spec.mu, 0.5, 1e-8);
        assert!(!r.triggered && r.blowup_set.is_empty() && r.distance.is_none());

        let mut forced = quiet.clone();
        forced.stop_reason = StopReason::UExceededCap;
        let r = blow_up_report(&forced, &spec.mu, 0.5, 1e-8);
        assert!(r.triggered && !r.blowup_set.is_empty());
        // mu = 0 everywhere: every blow-up cell is a zero cell
        assert_eq!(r.zero_set_size, g.len());
        assert_eq!(r.distance, Some(0.0));

        let mu = Field::from_fn(g, |x, y| if x < 0.25 && y < 0.25 { 0.0 } else { 1.0 });
        let r = blow_up_report(&forced, &mu, 0.5, 1e-8);
        assert!(r.distance.unwrap() > 0.2);
    }

    #[test]
    fn csv_layout() {
        let g = unit(8);
        let spec = spec_with(g, Field::zeros(g), Field::zeros(g), Field::constant(g, 1.0));
        let cfg = DiagnosticsConfig { s: vec![2.0], ..Default::default() };
        let d = Diagnostics::new(&spec, &cfg);
        let rec = d.record(&State::initial(&spec), 0.0);
        let mut buf = Vec::new();
        write_csv(&mut buf, &cfg, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# configured columns: v_L2");
        assert_eq!(lines[1], "t,dt,mass,sup_u,argmax_x,argmax_y,A,z_bound,v_L2");
        assert!(lines[2].starts_with("0e0,0e0,1e0,1e0,"));
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn concentration() {
        let g = unit(32);
        let u = Field::from_fn(g, |x, y| 1.0 + 100.0 * (-200.0 * ((x - 0.5).powi(2) + (y - 0.5).powi(2))).exp());
        assert!(concentration_ratio(&u, (0.5, 0.5), 0.15, 0.3) > 10.0);
        assert!(concentration_ratio(&u, (0.1, 0.1), 0.05, 0.3) < 1.5);
    }
}
