//! Discrete maximal-regularity probe for `w_t = lap w - w + f` with Neumann
//! data.
//!
//! Time stepping is explicit Euler, `w^{n+1} = B w^n + dt f^n` with
//! `B = I + dt (L - I)`. The output attached to step `n` is
//! `(w^{n+1}, (w^{n+1} - w^n)/dt, L w^{n+1})`, so the map from forcing to
//! output is causal and the prefix norms are monotone in time.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::cutoff::{CutoffField, CutoffMode, CutoffSpec};
use crate::grid::{gradient_centers, laplacian_into, Field, Grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaxRegError {
    #[error("dt = {dt} exceeds the diffusion limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("T / dt = {0} is not an integer step count")]
    Horizon(f64),
    #[error("forcing has {got} slices of the wrong shape, expected {steps} of {cells} values")]
    ForcingShape { steps: usize, cells: usize, got: usize },
    #[error("forcing is identically zero, the regularity ratio is undefined")]
    ZeroForcing,
    #[error("exponents must lie in (1, inf), got p = {0}, q = {1}")]
    Exponent(f64, f64),
    #[error("probe budget exhausted before any valid ratio")]
    Budget,
    #[error("interpolation parameters inconsistent: {0}")]
    Theta(String),
}

/// Largest stable Euler step: keeps every entry of `B` nonnegative.
pub fn max_stable_dt(grid: &Grid) -> f64 {
    1.0 / (2.0 / (grid.hx() * grid.hx()) + 2.0 / (grid.hy() * grid.hy()) + 1.0)
}

#[derive(Debug, Clone)]
pub struct HeatSolveSpec {
    pub grid: Grid,
    pub dt: f64,
    pub steps: usize,
    /// `forcing[n]` acts on the step from `t_n` to `t_{n+1}`.
    pub forcing: Vec<Vec<f64>>,
    pub w0: Vec<f64>,
    /// Free-form description carried into reports.
    pub label: String,
}

impl HeatSolveSpec {
    pub fn new(grid: Grid, dt: f64, steps: usize) -> Self {
        Self {
            grid,
            dt,
            steps,
            forcing: vec![vec![0.0; grid.len()]; steps],
            w0: vec![0.0; grid.len()],
            label: "zero".into(),
        }
    }

    pub fn with_horizon(grid: Grid, dt: f64, t_final: f64) -> Result<Self, MaxRegError> {
        let ratio = t_final / dt;
        let steps = ratio.round();
        if !(steps >= 1.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
            return Err(MaxRegError::Horizon(ratio));
        }
        Ok(Self::new(grid, dt, steps as usize))
    }

    /// `f(x, t) = space(x) * profile(t)`, sampled at the left end of each step.
    pub fn separable(grid: Grid, dt: f64, steps: usize, space: &Field, profile: impl Fn(f64) -> f64) -> Self {
        let mut s = Self::new(grid, dt, steps);
        for (n, slice) in s.forcing.iter_mut().enumerate() {
            let a = profile(n as f64 * dt);
            slice.iter_mut().zip(space.values()).for_each(|(f, &g)| *f = a * g);
        }
        s.label = "separable".into();
        s
    }

    pub fn from_flat(grid: Grid, dt: f64, steps: usize, flat: &[f64], label: &str) -> Self {
        let mut s = Self::new(grid, dt, steps);
        for (slice, chunk) in s.forcing.iter_mut().zip(flat.chunks(grid.len())) {
            slice.copy_from_slice(chunk);
        }
        s.label = label.into();
        s
    }

    pub fn t_final(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn validate(&self) -> Result<(), MaxRegError> {
        let limit = max_stable_dt(&self.grid);
        if !(self.dt > 0.0 && self.dt <= limit) {
            return Err(MaxRegError::Cfl { dt: self.dt, limit });
        }
        if self.steps == 0 {
            return Err(MaxRegError::Horizon(0.0));
        }
        let cells = self.grid.len();
        if self.forcing.len() != self.steps || self.forcing.iter().any(|f| f.len() != cells) || self.w0.len() != cells {
            return Err(MaxRegError::ForcingShape { steps: self.steps, cells, got: self.forcing.len() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub dt: f64,
    /// `w^0 .. w^N`
    pub w: Vec<Vec<f64>>,
    /// `(w^{n+1} - w^n) / dt` for `n < N`
    pub w_t: Vec<Vec<f64>>,
    /// `L w^{n+1}` for `n < N`
    pub lap: Vec<Vec<f64>>,
    pub forcing: Vec<Vec<f64>>,
    pub label: String,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.w_t.len()
    }

    pub fn field_at(&self, n: usize) -> Field {
        Field::from_values(self.grid, self.w[n].clone()).expect("trajectory slice has grid length")
    }
}

pub fn solve_heat(spec: &HeatSolveSpec) -> Result<Trajectory, MaxRegError> {
    spec.validate()?;
    let (g, dt, n) = (spec.grid, spec.dt, spec.steps);
    let mut w = Vec::with_capacity(n + 1);
    let mut w_t = Vec::with_capacity(n);
    let mut lap = Vec::with_capacity(n);
    w.push(spec.w0.clone());
    let mut l = vec![0.0; g.len()];
    laplacian_into(&g, &spec.w0, &mut l);
    for f in &spec.forcing {
        let prev = w.last().unwrap();
        let next: Vec<f64> = prev.iter().zip(&l).zip(f).map(|((&w, &lw), &f)| w + dt * (lw - w + f)).collect();
        w_t.push(next.iter().zip(prev).map(|(a, b)| (a - b) / dt).collect());
        laplacian_into(&g, &next, &mut l);
        lap.push(l.clone());
        w.push(next);
    }
    Ok(Trajectory { grid: g, dt, w, w_t, lap, forcing: spec.forcing.clone(), label: spec.label.clone() })
}

/// `sum_n dt (sum_cells |x|^q hx hy)^{p/q}` over the given slices.
fn mixed_norm_pow<'a>(slices: impl Iterator<Item = &'a Vec<f64>>, p: f64, q: f64, dt: f64, cell: f64) -> f64 {
    slices
        .map(|s| {
            let inner: f64 =
                if q == 2.0 { s.iter().map(|v| v * v).sum() } else { s.iter().map(|v| v.abs().powf(q)).sum() };
            dt * (inner * cell).powf(p / q)
        })
        .sum()
}

/// `(|w|^p + |w_t|^p + |lap w|^p in L^p(L^q))^{1/p} / ||f||_{L^p(L^q)}`.
pub fn regularity_ratio(traj: &Trajectory, p: f64, q: f64) -> Result<f64, MaxRegError> {
    check_exponents(p, q)?;
    let (dt, cell) = (traj.dt, traj.grid.cell_area());
    let den = mixed_norm_pow(traj.forcing.iter(), p, q, dt, cell);
    if den == 0.0 {
        return Err(MaxRegError::ZeroForcing);
    }
    let num = mixed_norm_pow(traj.w[1..].iter(), p, q, dt, cell)
        + mixed_norm_pow(traj.w_t.iter(), p, q, dt, cell)
        + mixed_norm_pow(traj.lap.iter(), p, q, dt, cell);
    Ok((num / den).powf(1.0 / p))
}

fn check_exponents(p: f64, q: f64) -> Result<(), MaxRegError> {
    if p > 1.0 && q > 1.0 && p.is_finite() && q.is_finite() {
        Ok(())
    } else {
        Err(MaxRegError::Exponent(p, q))
    }
}

/// The space-time operator `f -> (w, w_t, L w)` with `w^0 = 0`, acting on
/// flat vectors (`steps * cells` in, `3 * steps * cells` out). The quadrature
/// weight `dt hx hy` is common to both sides and therefore dropped.
pub struct SpaceTimeOperator {
    grid: Grid,
    dt: f64,
    steps: usize,
}

impl SpaceTimeOperator {
    pub fn new(grid: Grid, dt: f64, steps: usize) -> Result<Self, MaxRegError> {
        HeatSolveSpec::new(grid, dt, steps).validate()?;
        Ok(Self { grid, dt, steps })
    }

    pub fn input_len(&self) -> usize {
        self.steps * self.grid.len()
    }

    pub fn output_len(&self) -> usize {
        3 * self.input_len()
    }

    fn apply_b(&self, x: &[f64], out: &mut [f64]) {
        laplacian_into(&self.grid, x, out);
        let dt = self.dt;
        out.iter_mut().zip(x).for_each(|(o, &x)| *o = x + dt * (*o - x));
    }

    /// Output layout: all `w` slices, then all `w_t`, then all `L w`.
    pub fn apply(&self, f: &[f64], out: &mut [f64]) {
        let m = self.grid.len();
        let block = self.input_len();
        let dt = self.dt;
        let (wa, rest) = out.split_at_mut(block);
        let (wb, wc) = rest.split_at_mut(block);
        let mut prev = vec![0.0; m];
        let mut next = vec![0.0; m];
        for n in 0..self.steps {
            self.apply_b(&prev, &mut next);
            let fs = &f[n * m..(n + 1) * m];
            next.iter_mut().zip(fs).for_each(|(w, &f)| *w += dt * f);
            let r = n * m..(n + 1) * m;
            wa[r.clone()].copy_from_slice(&next);
            wb[r.clone()].iter_mut().zip(next.iter().zip(&prev)).for_each(|(o, (a, b))| *o = (a - b) / dt);
            laplacian_into(&self.grid, &next, &mut wc[r]);
            std::mem::swap(&mut prev, &mut next);
        }
    }

    /// Transpose of [`apply`](Self::apply).
    pub fn apply_adjoint(&self, y: &[f64], out: &mut [f64]) {
        let m = self.grid.len();
        let block = self.input_len();
        let dt = self.dt;
        let (a, rest) = y.split_at(block);
        let (b, c) = rest.split_at(block);
        let slice = |v: &[f64], k: usize| -> Vec<f64> { v[k * m..(k + 1) * m].to_vec() };
        // gradient with respect to w^{k}, k = 1..N, stored at k - 1
        let mut lc = vec![0.0; m];
        let mut lambda = vec![0.0; m];
        let mut tmp = vec![0.0; m];
        for k in (0..self.steps).rev() {
            laplacian_into(&self.grid, &c[k * m..(k + 1) * m], &mut lc);
            let bk = slice(b, k);
            let bnext = if k + 1 < self.steps { slice(b, k + 1) } else { vec![0.0; m] };
            let ak = &a[k * m..(k + 1) * m];
            // lambda^k = y^{k+1} + B lambda^{k+1}
            self.apply_b(&lambda, &mut tmp);
            for i in 0..m {
                let yk = ak[i] + lc[i] + (bk[i] - bnext[i]) / dt;
                lambda[i] = yk + if k + 1 < self.steps { tmp[i] } else { 0.0 };
            }
            out[k * m..(k + 1) * m].iter_mut().zip(&lambda).for_each(|(o, &l)| *o = dt * l);
        }
    }

    /// Dense matrix of the operator, column by column.
    pub fn dense(&self) -> DMatrix<f64> {
        let (rows, cols) = (self.output_len(), self.input_len());
        let mut m = DMatrix::zeros(rows, cols);
        let mut e = vec![0.0; cols];
        let mut col = vec![0.0; rows];
        for j in 0..cols {
            e[j] = 1.0;
            self.apply(&e, &mut col);
            m.column_mut(j).copy_from_slice(&col);
            e[j] = 0.0;
        }
        m
    }
}

/// Largest singular value from a dense SVD; the independent check on the
/// power iteration.
pub fn dense_operator_norm(op: &SpaceTimeOperator) -> f64 {
    op.dense().singular_values().max()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub p: f64,
    pub q: f64,
    /// Lower bound on the discrete constant.
    pub k_hat: f64,
    pub iterations: usize,
    /// Running estimates; nondecreasing.
    pub history: Vec<f64>,
    pub converged: bool,
    pub best_forcing: String,
    #[serde(skip)]
    pub forcing: Vec<f64>,
}

fn normalize(x: &mut [f64]) -> f64 {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
    n
}

/// Power iteration on `M^T M`; converged when successive Rayleigh quotients
/// differ by at most `rel_tol` relative.
pub fn power_iteration(op: &SpaceTimeOperator, max_iter: usize, rel_tol: f64, seed: u64) -> ProbeResult {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<f64> = (0..op.input_len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut x);
    let mut y = vec![0.0; op.output_len()];
    let mut history = Vec::new();
    let mut prev = 0.0;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        op.apply(&x, &mut y);
        let rq: f64 = y.iter().map(|v| v * v).sum();
        history.push(rq.sqrt());
        op.apply_adjoint(&y, &mut x);
        normalize(&mut x);
        if (rq - prev).abs() <= rel_tol * rq {
            converged = true;
            break;
        }
        prev = rq;
    }
    // Rayleigh quotients of a PSD matrix never decrease along the iteration
    let k_hat = history.iter().copied().fold(0.0, f64::max);
    ProbeResult {
        p: 2.0,
        q: 2.0,
        k_hat,
        iterations,
        history,
        converged,
        best_forcing: format!("power-iteration seed {}", seed),
        forcing: x,
    }
}

/// Lower-bound estimate of the discrete `K(p, q)`.
///
/// `p = q = 2` runs power iteration with at most `budget` iterations. Other
/// exponents evaluate `budget` ratios: a few starting forcings (constant, the
/// `L^2` maximizer, random), then random coordinate perturbations of the best
/// one, keeping only improvements.
pub fn estimate_k(
    grid: Grid,
    dt: f64,
    steps: usize,
    p: f64,
    q: f64,
    budget: usize,
    seed: u64,
) -> Result<ProbeResult, MaxRegError> {
    check_exponents(p, q)?;
    let op = SpaceTimeOperator::new(grid, dt, steps)?;
    if budget == 0 {
        return Err(MaxRegError::Budget);
    }
    if p == 2.0 && q == 2.0 {
        return Ok(power_iteration(&op, budget, 1e-8, seed));
    }

    let ratio = |f: &[f64]| -> Option<f64> {
        let traj = solve_heat(&HeatSolveSpec::from_flat(grid, dt, steps, f, "")).ok()?;
        regularity_ratio(&traj, p, q).ok()
    };
    let n = op.input_len();
    let l2 = power_iteration(&op, 200, 1e-10, seed).forcing;
    let n_random = 4usize;
    let mut starts: Vec<(String, Vec<f64>)> = vec![("constant".into(), vec![1.0; n]), ("l2-maximizer".into(), l2)];
    for s in 0..n_random {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1 + s as u64));
        starts.push((format!("random start {}", s), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()));
    }
    starts.truncate(budget);
    let scored: Vec<Option<f64>> = starts.par_iter().map(|(_, f)| ratio(f)).collect();
    let mut evaluations = starts.len();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in scored.iter().enumerate() {
        if let Some(r) = *r {
            if best.is_none_or(|(_, b)| r > b) {
                best = Some((i, r));
            }
        }
        if let Some((_, b)) = best {
            history.push(b);
        }
    }
    let (bi, mut k_hat) = best.ok_or(MaxRegError::Budget)?;
    let (label, mut f) = starts.swap_remove(bi);

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut step = 0.5 * f.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut failures = 0usize;
    let mut accepted = 0usize;
    while evaluations < budget {
        let k = rng.gen_range(0..n);
        let delta = if rng.gen::<bool>() { step } else { -step };
        f[k] += delta;
        evaluations += 1;
        match ratio(&f) {
            Some(r) if r > k_hat => {
                k_hat = r;
                accepted += 1;
                failures = 0;
            }
            _ => {
                f[k] -= delta;
                failures += 1;
                if failures >= n {
                    step *= 0.5;
                    failures = 0;
                }
            }
        }
        history.push(k_hat);
    }
    Ok(ProbeResult {
        p,
        q,
        k_hat,
        iterations: evaluations,
        history,
        converged: false,
        best_forcing: format!("{} + {} accepted perturbations", label, accepted),
        forcing: f,
    })
}

/// `K~(p) = (8^{p-1} K^p + 6^{p-1}) 2^p` for a given `K = K(p, p)`.
pub fn k_tilde(p: f64, k: f64) -> f64 {
    (8f64.powf(p - 1.0) * k.powf(p) + 6f64.powf(p - 1.0)) * 2f64.powf(p)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InterpolationReport {
    pub theta: f64,
    pub k_theta: f64,
    pub bound: f64,
    pub passed: bool,
    /// False only for the degenerate endpoints, where the check is exact.
    pub advisory: bool,
}

/// `K(p_theta, q_theta) <= K(p0, q0)^{1 - theta} K(p1, q1)^theta (1 + tol)`.
pub fn interpolation_check(
    end0: &ProbeResult,
    end1: &ProbeResult,
    mid: &ProbeResult,
    theta: f64,
    tol: f64,
) -> Result<InterpolationReport, MaxRegError> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(MaxRegError::Theta(format!("theta = {} outside [0, 1]", theta)));
    }
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
    let ip = (1.0 - theta) / end0.p + theta / end1.p;
    let iq = (1.0 - theta) / end0.q + theta / end1.q;
    if !close(ip, 1.0 / mid.p) || !close(iq, 1.0 / mid.q) {
        return Err(MaxRegError::Theta(format!(
            "1/p_theta = {} and 1/q_theta = {} do not match ({}, {})",
            ip, iq, mid.p, mid.q
        )));
    }
    let bound = end0.k_hat.powf(1.0 - theta) * end1.k_hat.powf(theta);
    Ok(InterpolationReport {
        theta,
        k_theta: mid.k_hat,
        bound,
        passed: mid.k_hat <= bound * (1.0 + tol),
        advisory: !(theta == 0.0 || theta == 1.0),
    })
}

/// Discrete `||g||^2_{W^{2,2}}`: `g`, both first and all second differences.
pub fn w22_norm_sq(g: &Field) -> f64 {
    let (gx, gy) = gradient_centers(g);
    let (gxx, gxy) = gradient_centers(&gx);
    let (_, gyy) = gradient_centers(&gy);
    let sq = |f: &Field| f.values().iter().map(|v| v * v).sum::<f64>();
    (sq(g) + sq(&gx) + sq(&gy) + sq(&gxx) + 2.0 * sq(&gxy) + sq(&gyy)) * g.grid().cell_area()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalRegularityReport {
    pub k22: f64,
    pub k_tilde: f64,
    pub lhs: f64,
    pub rhs: f64,
    /// Smallest `(rhs - lhs) / rhs` over all prefix times.
    pub worst_margin: f64,
    pub worst_t: f64,
    pub passed: bool,
    pub forcing: String,
}

/// Both sides of the localized maximal-regularity inequality at `p = 2`,
/// evaluated at every prefix time of `traj`.
pub fn local_regularity_check(cutoff: &CutoffField, traj: &Trajectory, k22: f64) -> LocalRegularityReport {
    let g = traj.grid;
    let cell = g.cell_area();
    let dt = traj.dt;
    let kt = k_tilde(2.0, k22);
    let phi = cutoff.phi.values();
    let (px, py, plap) = (cutoff.grad_x.values(), cutoff.grad_y.values(), cutoff.lap.values());

    let phi_w0 = traj.field_at(0).zip_map(&cutoff.phi, |w, p| w * p);
    let data = w22_norm_sq(&phi_w0);

    let (mut lhs, mut acc) = (0.0, 0.0);
    let mut worst = (f64::INFINITY, 0.0);
    let mut passed = true;
    for n in 0..traj.steps() {
        let w = traj.field_at(n + 1);
        let (wx, wy) = gradient_centers(&w);
        let (mut l, mut r) = (0.0, 0.0);
        for k in 0..g.len() {
            l += (phi[k] * traj.lap[n][k]).powi(2);
            let cross = px[k] * wx.values()[k] + py[k] * wy.values()[k];
            r += cross * cross + (w.values()[k] * plap[k]).powi(2) + (phi[k] * traj.forcing[n][k]).powi(2);
        }
        lhs += dt * cell * l;
        acc += dt * cell * r;
        let rhs = kt * (data + acc);
        if lhs > rhs * (1.0 + 1e-6) {
            passed = false;
        }
        if lhs == 0.0 && rhs == 0.0 {
            continue;
        }
        let margin = if rhs > 0.0 { (rhs - lhs) / rhs } else { -1.0 };
        if margin < worst.0 {
            worst = (margin, (n + 1) as f64 * dt);
        }
    }
    LocalRegularityReport {
        k22,
        k_tilde: kt,
        lhs,
        rhs: kt * (data + acc),
        worst_margin: worst.0,
        worst_t: worst.1,
        passed,
        forcing: traj.label.clone(),
    }
}

/// Seeded random forcing and admissible interior cutoff on the unit square.
pub fn random_local_regularity_case(grid: Grid, dt: f64, steps: usize, seed: u64) -> (HeatSolveSpec, CutoffSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let flat: Vec<f64> = (0..steps * grid.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let spec = HeatSolveSpec::from_flat(grid, dt, steps, &flat, &format!("uniform[-1,1] seed {}", seed));
    let (lx, ly) = (grid.lx(), grid.ly());
    let x0 = (rng.gen_range(0.3..0.7) * lx, rng.gen_range(0.3..0.7) * ly);
    let r_outer = rng.gen_range(0.15..0.25) * lx.min(ly);
    let cutoff = CutoffSpec {
        x0,
        r_inner: rng.gen_range(0.3..0.7) * r_outer,
        r_outer,
        eta: rng.gen_range(0.1..0.45),
        mode: CutoffMode::Radial,
    };
    (spec, cutoff)
}
