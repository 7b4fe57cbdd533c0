//! C² cutoff functions with fractional-power derivative bounds.
//!
//! A cutoff is `phi = chi^m` where `chi` is built from the descending quintic
//! smoothstep profile and `m = ceil(2 / eta)`. Because `m * eta >= 2`, the
//! root `phi^eta = chi^(m * eta)` stays C², and the chain rule gives
//!
//! ```text
//! |grad phi| <= C phi^(1 - eta),   |lap phi| <= C phi^(1 - 2 eta).
//! ```
//!
//! Gradients and Laplacians are evaluated analytically at cell centers.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{in_ball, Field, Grid};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CutoffError {
    #[error("cutoff radii must satisfy 0 < r_inner < r_outer, got {r_inner} and {r_outer}")]
    Radii { r_inner: f64, r_outer: f64 },
    #[error("cutoff exponent eta must lie in (0, 1/2), got {0}")]
    Eta(f64),
    #[error("cutoff center ({0}, {1}) lies outside the closed domain")]
    CenterOutside(f64, f64),
    #[error(
        "radial cutoff ball of radius {r_outer} around ({x}, {y}) leaves the open domain; \
         use mode = \"tensor\" for centers near or on the boundary"
    )]
    RadialLeavesDomain { x: f64, y: f64, r_outer: f64 },
    #[error(
        "tensor cutoff needs r_inner < r_outer / sqrt(2) so its square support fits in the \
         outer ball, got {r_inner} and {r_outer}"
    )]
    TensorRadii { r_inner: f64, r_outer: f64 },
    #[error(
        "tensor cutoff transition band crosses the face {face} (distance {distance} from \
         the center, band ({lo}, {hi})); the normal derivative would not vanish there"
    )]
    TransitionCrossesFace { face: &'static str, distance: f64, lo: f64, hi: f64 },
    #[error("construction bug: phi = 0 at cell ({i}, {j}) but derivatives are nonzero")]
    NonzeroDerivativeOffSupport { i: usize, j: usize },
    #[error("cutoff has no support on the grid")]
    NoSupport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CutoffMode {
    /// `chi(x) = profile(|x - x0|)`; the outer ball must sit inside the domain.
    Radial,
    /// `chi(x) = profile(|x1 - x01|) * profile(|x2 - x02|)`; allowed at the boundary.
    #[default]
    Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffSpec {
    pub x0: (f64, f64),
    /// `phi = 1` on `B(x0, r_inner)`.
    pub r_inner: f64,
    /// `phi = 0` outside `B(x0, r_outer)`.
    pub r_outer: f64,
    pub eta: f64,
    pub mode: CutoffMode,
}

impl CutoffSpec {
    pub fn validate(&self) -> Result<(), CutoffError> {
        if !(self.r_inner > 0.0 && self.r_inner < self.r_outer && self.r_outer.is_finite()) {
            return Err(CutoffError::Radii { r_inner: self.r_inner, r_outer: self.r_outer });
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(CutoffError::Eta(self.eta));
        }
        Ok(())
    }

    /// `m = ceil(2 / eta)`, with quotients within 1e-9 of an integer snapped to it.
    pub fn power(&self) -> u32 {
        let q = 2.0 / self.eta;
        let snapped = q.round();
        if (q - snapped).abs() <= 1e-9 * q {
            snapped as u32
        } else {
            q.ceil() as u32
        }
    }
}

/// Descending C² profile: 1 on `[0, a]`, 0 on `[b, inf)`, quintic in between.
#[derive(Debug, Clone, Copy)]
pub struct Profile {
    a: f64,
    b: f64,
}

impl Profile {
    pub fn new(a: f64, b: f64) -> Self {
        Self { a, b }
    }

    /// Value, first and second derivative at `s >= 0`.
    pub fn eval(&self, s: f64) -> (f64, f64, f64) {
        if s <= self.a {
            return (1.0, 0.0, 0.0);
        }
        if s >= self.b {
            return (0.0, 0.0, 0.0);
        }
        let w = self.b - self.a;
        let t = (s - self.a) / w;
        let t2 = t * t;
        let smooth = t2 * t * (10.0 - 15.0 * t + 6.0 * t2);
        let d1 = -30.0 * t2 * (1.0 - t) * (1.0 - t) / w;
        let d2 = -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t) / (w * w);
        (1.0 - smooth, d1, d2)
    }
}

#[derive(Debug, Clone)]
pub struct CutoffField {
    pub spec: CutoffSpec,
    pub power: u32,
    pub phi: Field,
    pub grad_x: Field,
    pub grad_y: Field,
    pub lap: Field,
    /// Smallest constant for which both fractional bounds hold cell-wise.
    pub c_phi: f64,
    chi: Field,
    chi_gx: Field,
    chi_gy: Field,
    chi_lap: Field,
}

fn check_tensor_faces(spec: &CutoffSpec, grid: &Grid) -> Result<(), CutoffError> {
    let (lo, hi) = (spec.r_inner, spec.r_outer / SQRT_2);
    let faces = [
        ("x = 0", spec.x0.0),
        ("x = Lx", grid.lx() - spec.x0.0),
        ("y = 0", spec.x0.1),
        ("y = Ly", grid.ly() - spec.x0.1),
    ];
    for (face, distance) in faces {
        if distance > lo && distance < hi {
            return Err(CutoffError::TransitionCrossesFace { face, distance, lo, hi });
        }
    }
    Ok(())
}

/// `(chi, d_x chi, d_y chi, lap chi)` at a point.
type Sampler = Box<dyn Fn(f64, f64) -> (f64, f64, f64, f64)>;

/// Builds the cutoff described by `spec` on `grid` and certifies its constant.
pub fn build_cutoff(spec: &CutoffSpec, grid: &Grid) -> Result<CutoffField, CutoffError> {
    spec.validate()?;
    let (x0, y0) = spec.x0;
    if !(0.0..=grid.lx()).contains(&x0) || !(0.0..=grid.ly()).contains(&y0) {
        return Err(CutoffError::CenterOutside(x0, y0));
    }
    let sample: Sampler = match spec.mode {
        CutoffMode::Radial => {
            let r = spec.r_outer;
            if !(x0 - r > 0.0 && x0 + r < grid.lx() && y0 - r > 0.0 && y0 + r < grid.ly()) {
                return Err(CutoffError::RadialLeavesDomain { x: x0, y: y0, r_outer: r });
            }
            let prof = Profile::new(spec.r_inner, spec.r_outer);
            Box::new(move |x, y| {
                let (dx, dy) = (x - x0, y - y0);
                let r = dx.hypot(dy);
                let (c, d1, d2) = prof.eval(r);
                if d1 == 0.0 && d2 == 0.0 {
                    return (c, 0.0, 0.0, 0.0);
                }
                // r > r_inner > 0 on the transition band
                (c, d1 * dx / r, d1 * dy / r, d2 + d1 / r)
            })
        }
        CutoffMode::Tensor => {
            if spec.r_inner >= spec.r_outer / SQRT_2 {
                return Err(CutoffError::TensorRadii { r_inner: spec.r_inner, r_outer: spec.r_outer });
            }
            check_tensor_faces(spec, grid)?;
            let prof = Profile::new(spec.r_inner, spec.r_outer / SQRT_2);
            Box::new(move |x, y| {
                let (dx, dy) = (x - x0, y - y0);
                let (cx, dcx, ddcx) = prof.eval(dx.abs());
                let (cy, dcy, ddcy) = prof.eval(dy.abs());
                let gx = dcx * dx.signum() * cy;
                let gy = cx * dcy * dy.signum();
                (cx * cy, gx, gy, ddcx * cy + cx * ddcy)
            })
        }
    };

    let m = spec.power();
    let mf = m as f64;
    let mut fields: [Field; 8] = std::array::from_fn(|_| Field::zeros(*grid));
    for (i, j) in grid.cells() {
        let (c, gx, gy, lap) = sample(grid.x(i), grid.y(j));
        let phi = c.powi(m as i32);
        let k = grid.idx(i, j);
        fields[4].values_mut()[k] = c;
        fields[5].values_mut()[k] = gx;
        fields[6].values_mut()[k] = gy;
        fields[7].values_mut()[k] = lap;
        fields[0].values_mut()[k] = phi;
        if phi == 0.0 {
            // covers exact zeros and powi underflow deep in the tail
            continue;
        }
        let c_m1 = c.powi(m as i32 - 1);
        let c_m2 = c.powi(m as i32 - 2);
        fields[1].values_mut()[k] = mf * c_m1 * gx;
        fields[2].values_mut()[k] = mf * c_m1 * gy;
        fields[3].values_mut()[k] = mf * (mf - 1.0) * c_m2 * (gx * gx + gy * gy) + mf * c_m1 * lap;
    }
    let [phi, grad_x, grad_y, lap, chi, chi_gx, chi_gy, chi_lap] = fields;
    let mut out =
        CutoffField { spec: *spec, power: m, phi, grad_x, grad_y, lap, c_phi: f64::NAN, chi, chi_gx, chi_gy, chi_lap };
    out.c_phi = verify_fractional_bounds(&out)?;
    Ok(out)
}

/// Smallest `C` with `|grad phi| <= C phi^(1-eta)` and `|lap phi| <= C phi^(1-2 eta)`
/// at every cell center, both checked in floating point with the returned value.
pub fn verify_fractional_bounds(c: &CutoffField) -> Result<f64, CutoffError> {
    let eta = c.spec.eta;
    let grid = *c.phi.grid();
    let mut best = 0.0f64;
    for (i, j) in grid.cells() {
        let phi = c.phi[(i, j)];
        let g = c.grad_x[(i, j)].hypot(c.grad_y[(i, j)]);
        let l = c.lap[(i, j)].abs();
        if phi == 0.0 {
            if g != 0.0 || l != 0.0 {
                return Err(CutoffError::NonzeroDerivativeOffSupport { i, j });
            }
            continue;
        }
        best = best.max(g / phi.powf(1.0 - eta)).max(l / phi.powf(1.0 - 2.0 * eta));
    }
    // division then multiplication can lose an ulp; step up until exact
    while !c.bounds_hold(best) {
        best = best.next_up();
    }
    Ok(best)
}

impl CutoffField {
    pub fn grid(&self) -> &Grid {
        self.phi.grid()
    }

    /// Cell-wise check of both fractional bounds with constant `c`.
    pub fn bounds_hold(&self, c: f64) -> bool {
        let eta = self.spec.eta;
        self.phi.values().iter().enumerate().all(|(k, &phi)| {
            let g = self.grad_x.values()[k].hypot(self.grad_y.values()[k]);
            let l = self.lap.values()[k].abs();
            g <= c * phi.powf(1.0 - eta) && l <= c * phi.powf(1.0 - 2.0 * eta)
        })
    }

    pub fn grad_magnitude(&self) -> Field {
        self.grad_x.zip_map(&self.grad_y, f64::hypot)
    }

    /// Largest `|lap(phi^eta)|` over the grid, from the analytic chain rule on
    /// `chi^(m eta)`; finite because `m eta >= 2`.
    pub fn root_laplacian_sup(&self) -> f64 {
        let s = self.power as f64 * self.spec.eta;
        let mut sup = 0.0f64;
        for k in 0..self.chi.values().len() {
            let c = self.chi.values()[k];
            if c == 0.0 {
                continue;
            }
            let (gx, gy) = (self.chi_gx.values()[k], self.chi_gy.values()[k]);
            let v =
                s * (s - 1.0) * c.powf(s - 2.0) * (gx * gx + gy * gy) + s * c.powf(s - 1.0) * self.chi_lap.values()[k];
            sup = sup.max(v.abs());
        }
        sup
    }

    /// Cells with center in the inner ball `A`.
    pub fn plateau_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let g = *self.grid();
        let (x0, r) = (self.spec.x0, self.spec.r_inner);
        g.cells().filter(move |&(i, j)| in_ball(g.x(i), g.y(j), x0, r))
    }

    pub fn has_support(&self) -> bool {
        self.phi.values().iter().any(|&v| v > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Grid {
        Grid::new(n, n, 1.0, 1.0).unwrap()
    }

    fn radial(x0: (f64, f64), ra: f64, rv: f64, eta: f64) -> CutoffSpec {
        CutoffSpec { x0, r_inner: ra, r_outer: rv, eta, mode: CutoffMode::Radial }
    }

    #[test]
    fn power_choice() {
        assert_eq!(radial((0.5, 0.5), 0.1, 0.2, 1.0 / 6.0).power(), 12);
        assert_eq!(radial((0.5, 0.5), 0.1, 0.2, 0.45).power(), 5);
        assert_eq!(radial((0.5, 0.5), 0.1, 0.2, 0.05).power(), 40);
        assert_eq!(radial((0.5, 0.5), 0.1, 0.2, 0.3).power(), 7);
    }

    #[test]
    fn profile_is_c2_at_the_joints() {
        let p = Profile::new(0.2, 0.5);
        let (v, d1, d2) = p.eval(0.2 + 1e-9);
        assert!((v - 1.0).abs() < 1e-12 && d1.abs() < 1e-12 && d2.abs() < 1e-5);
        let (v, d1, d2) = p.eval(0.5 - 1e-9);
        assert!(v.abs() < 1e-12 && d1.abs() < 1e-12 && d2.abs() < 1e-5);
        assert!((p.eval(0.35).0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        let g = unit(16);
        assert!(matches!(build_cutoff(&radial((0.5, 0.5), 0.3, 0.2, 0.2), &g), Err(CutoffError::Radii { .. })));
        assert!(matches!(build_cutoff(&radial((0.5, 0.5), 0.1, 0.2, 0.5), &g), Err(CutoffError::Eta(_))));
        assert!(matches!(
            build_cutoff(&radial((0.1, 0.5), 0.05, 0.2, 0.2), &g),
            Err(CutoffError::RadialLeavesDomain { .. })
        ));
        let tight = CutoffSpec { mode: CutoffMode::Tensor, ..radial((0.5, 0.5), 0.15, 0.2, 0.2) };
        assert!(matches!(build_cutoff(&tight, &g), Err(CutoffError::TensorRadii { .. })));
        let crossing = CutoffSpec { mode: CutoffMode::Tensor, ..radial((0.15, 0.5), 0.1, 0.3, 0.2) };
        assert!(matches!(build_cutoff(&crossing, &g), Err(CutoffError::TransitionCrossesFace { .. })));
        let outside = CutoffSpec { mode: CutoffMode::Tensor, ..radial((1.5, 0.5), 0.1, 0.3, 0.2) };
        assert!(matches!(build_cutoff(&outside, &g), Err(CutoffError::CenterOutside(..))));
    }

    fn check_support(c: &CutoffField) {
        let g = *c.grid();
        let s = c.spec;
        for (i, j) in g.cells() {
            let (x, y) = (g.x(i), g.y(j));
            let phi = c.phi[(i, j)];
            assert!((0.0..=1.0).contains(&phi));
            if in_ball(x, y, s.x0, s.r_inner) {
                assert_eq!(phi, 1.0);
                assert_eq!((c.grad_x[(i, j)], c.grad_y[(i, j)], c.lap[(i, j)]), (0.0, 0.0, 0.0));
            }
            if !in_ball(x, y, s.x0, s.r_outer) {
                assert_eq!(phi, 0.0);
                assert_eq!((c.grad_x[(i, j)], c.grad_y[(i, j)], c.lap[(i, j)]), (0.0, 0.0, 0.0));
            }
        }
    }

    #[test]
    fn plateau_and_support() {
        let g = unit(48);
        let r = build_cutoff(&radial((0.5, 0.4), 0.1, 0.3, 0.2), &g).unwrap();
        check_support(&r);
        assert!(r.plateau_cells().count() > 0);
        let t = CutoffSpec { mode: CutoffMode::Tensor, ..radial((0.0, 0.3), 0.1, 0.3, 0.2) };
        let t = build_cutoff(&t, &g).unwrap();
        check_support(&t);
        assert!(t.c_phi.is_finite() && t.c_phi > 0.0);
    }

    #[test]
    fn transition_midpoint_matches_closed_form() {
        // x0 at a cell center, midpoint of the band four cells to the right
        let g = unit(20);
        let x0 = (g.x(10), g.y(10));
        let (ra, rv, eta) = (0.1, 0.3, 1.0 / 6.0);
        let c = build_cutoff(&radial(x0, ra, rv, eta), &g).unwrap();
        assert_eq!(c.power, 12);
        let phi = c.phi[(14, 10)];
        assert!((phi - 0.5f64.powi(12)).abs() < 1e-9 * 0.5f64.powi(12) + 1e-15);
        assert!((phi - 2.4414e-4).abs() < 1e-8);
        // closed form: m |chi'| chi^(m-1) / chi^(m(1-eta)) with chi = 1/2,
        // chi' = -30 (1/4)(1/4) / (rv - ra)
        let m = 12.0;
        let dchi = 30.0 / 16.0 / (rv - ra);
        let expected = m * dchi * 0.5f64.powf(m - 1.0) / 0.5f64.powf(m * (1.0 - eta));
        let g_mag = c.grad_x[(14, 10)].hypot(c.grad_y[(14, 10)]);
        let ratio = g_mag / phi.powf(1.0 - eta);
        assert!((ratio - expected).abs() < 1e-6 * expected, "{ratio} vs {expected}");
        assert!(c.c_phi >= ratio);
    }

    #[test]
    fn wider_transition_never_raises_the_constant() {
        let g = unit(64);
        let narrow = build_cutoff(&radial((0.5, 0.5), 0.1, 0.2, 0.2), &g).unwrap();
        let wide = build_cutoff(&radial((0.5, 0.5), 0.1, 0.3, 0.2), &g).unwrap();
        assert!(wide.c_phi <= narrow.c_phi);
    }

    #[test]
    fn plateau_covering_domain_has_zero_constant() {
        let g = unit(16);
        let spec = CutoffSpec { x0: (0.5, 0.5), r_inner: 2.0, r_outer: 3.0, eta: 0.25, mode: CutoffMode::Tensor };
        let c = build_cutoff(&spec, &g).unwrap();
        assert!(c.phi.values().iter().all(|&v| v == 1.0));
        assert_eq!(c.c_phi, 0.0);
    }

    #[test]
    fn tensor_boundary_center_has_zero_normal_derivative_on_faces() {
        let g = unit(40);
        let spec = CutoffSpec { x0: (0.0, 1.0), r_inner: 0.1, r_outer: 0.35, eta: 0.2, mode: CutoffMode::Tensor };
        let c = build_cutoff(&spec, &g).unwrap();
        // the x-factor is even about x0 = 0: its derivative at the face x = 0 is
        // zero, and the profile is flat near its center
        let prof = Profile::new(0.1, 0.35 / SQRT_2);
        assert_eq!(prof.eval(0.0).1, 0.0);
        assert!(c.bounds_hold(c.c_phi));
        assert!(c.root_laplacian_sup().is_finite());
    }

    #[test]
    fn root_is_c2() {
        for eta in [0.05, 0.1, 0.2, 0.3, 0.45] {
            let c = build_cutoff(&radial((0.5, 0.5), 0.1, 0.3, eta), &unit(64)).unwrap();
            let s = c.root_laplacian_sup();
            assert!(s.is_finite() && s > 0.0);
        }
    }

    #[test]
    fn nested_supports() {
        let g = unit(64);
        let outer = build_cutoff(&radial((0.5, 0.5), 0.2, 0.4, 0.2), &g).unwrap();
        let inner = build_cutoff(&radial((0.5, 0.5), 0.05, 0.2, 0.2), &g).unwrap();
        for k in 0..g.len() {
            if inner.phi.values()[k] > 0.0 {
                assert_eq!(outer.phi.values()[k], 1.0);
            }
            assert!(inner.phi.values()[k] <= outer.phi.values()[k]);
        }
    }
}
