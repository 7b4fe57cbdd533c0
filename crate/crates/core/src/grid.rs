//! Cell-centered rectangular grids, Neumann finite-difference operators and
//! midpoint quadrature.
//!
//! Homogeneous Neumann conditions are imposed with mirror ghosts: the ghost
//! value beyond a face equals the adjacent interior cell. All reductions sum
//! in row-major order (`j` outer, `i` inner) so results are reproducible.

use std::ops::{Index, IndexMut};

use thiserror::Error;

use crate::expr::{EvalError, Expr};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GridError {
    #[error("grid needs at least 4 cells per direction, got {nx}x{ny}")]
    TooFewCells { nx: usize, ny: usize },
    #[error("domain side lengths must be positive and finite, got {lx} x {ly}")]
    BadExtent { lx: f64, ly: f64 },
    #[error("field has {got} values, grid needs {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("evaluating expression at ({x}, {y}): {source}")]
    Eval {
        x: f64,
        y: f64,
        #[source]
        source: EvalError,
    },
}

/// Uniform cell-centered grid on `[0, lx] x [0, ly]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    nx: usize,
    ny: usize,
    lx: f64,
    ly: f64,
}

impl Grid {
    pub fn new(nx: usize, ny: usize, lx: f64, ly: f64) -> Result<Self, GridError> {
        if nx < 4 || ny < 4 {
            return Err(GridError::TooFewCells { nx, ny });
        }
        if !(lx > 0.0 && ly > 0.0 && lx.is_finite() && ly.is_finite()) {
            return Err(GridError::BadExtent { lx, ly });
        }
        Ok(Self { nx, ny, lx, ly })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn lx(&self) -> f64 {
        self.lx
    }

    pub fn ly(&self) -> f64 {
        self.ly
    }

    pub fn hx(&self) -> f64 {
        self.lx / self.nx as f64
    }

    pub fn hy(&self) -> f64 {
        self.ly / self.ny as f64
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_area(&self) -> f64 {
        self.hx() * self.hy()
    }

    pub fn area(&self) -> f64 {
        self.lx * self.ly
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.hx()
    }

    pub fn y(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.hy()
    }

    pub fn center(&self, k: usize) -> (f64, f64) {
        (self.x(k % self.nx), self.y(k / self.nx))
    }

    /// Cell index pairs in storage order.
    pub fn cells(self) -> impl Iterator<Item = (usize, usize)> {
        let (nx, ny) = (self.nx, self.ny);
        (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j)))
    }

    pub fn refined(&self) -> Grid {
        Grid { nx: 2 * self.nx, ny: 2 * self.ny, ..*self }
    }
}

/// Cell-centered scalar field; value `(i, j)` lives at `j * nx + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        Self { grid, values: vec![c; grid.len()] }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = grid.cells().map(|(i, j)| f(grid.x(i), grid.y(j))).collect();
        Self { grid, values }
    }

    /// Samples `expr` at every cell center; the first evaluation error aborts.
    pub fn from_expr(grid: Grid, expr: &Expr) -> Result<Self, GridError> {
        let mut values = Vec::with_capacity(grid.len());
        for (i, j) in grid.cells() {
            let (x, y) = (grid.x(i), grid.y(j));
            values.push(expr.eval(x, y).map_err(|source| GridError::Eval { x, y, source })?);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.idx(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        debug_assert_eq!(self.grid, other.grid);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid, values }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest value and the flat index of its first occurrence.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.values[0]);
        for (k, &v) in self.values.iter().enumerate().skip(1) {
            if v > best.1 {
                best = (k, v);
            }
        }
        best
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Flat index of the first negative value, if any.
    pub fn first_negative(&self) -> Option<usize> {
        self.values.iter().position(|&v| v < 0.0)
    }
}

impl Index<(usize, usize)> for Field {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.values[self.grid.idx(i, j)]
    }
}

impl IndexMut<(usize, usize)> for Field {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        let k = self.grid.idx(i, j);
        &mut self.values[k]
    }
}

/// Five-point Laplacian with mirror ghosts.
pub fn laplacian(f: &Field) -> Field {
    let mut out = Field::zeros(f.grid);
    laplacian_into(f.grid(), f.values(), out.values_mut());
    out
}

/// Slice form of [`laplacian`], used by the hot loops of the time steppers.
pub fn laplacian_into(grid: &Grid, f: &[f64], out: &mut [f64]) {
    let (nx, ny) = (grid.nx(), grid.ny());
    let ix2 = 1.0 / (grid.hx() * grid.hx());
    let iy2 = 1.0 / (grid.hy() * grid.hy());
    for j in 0..ny {
        let row = j * nx;
        let south = if j == 0 { row } else { row - nx };
        let north = if j + 1 == ny { row } else { row + nx };
        for i in 0..nx {
            let c = f[row + i];
            let w = if i == 0 { c } else { f[row + i - 1] };
            let e = if i + 1 == nx { c } else { f[row + i + 1] };
            let s = f[south + i];
            let n = f[north + i];
            out[row + i] = (e - 2.0 * c + w) * ix2 + (n - 2.0 * c + s) * iy2;
        }
    }
}

/// Midpoint rule: `hx * hy * sum(values)`, evaluated as `sum * Lx Ly / (nx ny)`
/// so constant fields integrate exactly.
pub fn integrate(f: &Field) -> f64 {
    sum_values(f.values()) * f.grid.area() / f.grid.len() as f64
}

pub(crate) fn sum_values(values: &[f64]) -> f64 {
    values.iter().sum()
}

/// `(integral of |f|^p)^(1/p)` for `p >= 1`.
pub fn lp_norm(f: &Field, p: f64) -> f64 {
    assert!(p >= 1.0, "lp_norm needs p >= 1, got {p}");
    let s: f64 = if p == 1.0 {
        f.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        f.values.iter().map(|v| v * v).sum()
    } else {
        f.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    (s * f.grid.cell_area()).powf(1.0 / p)
}

/// Central differences with mirror ghosts. On a boundary column the mirrored
/// stencil gives half the one-sided difference, so the normal component is
/// damped toward zero there.
pub fn gradient_centers(f: &Field) -> (Field, Field) {
    let g = f.grid;
    let (nx, ny) = (g.nx(), g.ny());
    let (ihx, ihy) = (0.5 / g.hx(), 0.5 / g.hy());
    let mut gx = Field::zeros(g);
    let mut gy = Field::zeros(g);
    for j in 0..ny {
        for i in 0..nx {
            let e = f[(if i + 1 == nx { i } else { i + 1 }, j)];
            let w = f[(if i == 0 { 0 } else { i - 1 }, j)];
            let n = f[(i, if j + 1 == ny { j } else { j + 1 })];
            let s = f[(i, if j == 0 { 0 } else { j - 1 })];
            gx[(i, j)] = (e - w) * ihx;
            gy[(i, j)] = (n - s) * ihy;
        }
    }
    (gx, gy)
}

/// Pointwise Euclidean norm of a vector field given by components.
pub fn magnitude(gx: &Field, gy: &Field) -> Field {
    gx.zip_map(gy, f64::hypot)
}

/// Result of integrating over the cells whose centers fall inside a ball.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedIntegral {
    pub value: f64,
    pub cells: usize,
}

impl MaskedIntegral {
    pub fn is_empty(&self) -> bool {
        self.cells == 0
    }

    /// Zero or one cell: the ball is below grid resolution.
    pub fn is_degenerate(&self) -> bool {
        self.cells <= 1
    }
}

pub fn in_ball(x: f64, y: f64, center: (f64, f64), radius: f64) -> bool {
    let (dx, dy) = (x - center.0, y - center.1);
    dx * dx + dy * dy <= radius * radius
}

/// `hx * hy * sum |f|^p` over cells with center in `B_radius(center)`.
pub fn masked_integrate(f: &Field, center: (f64, f64), radius: f64, p: f64) -> MaskedIntegral {
    assert!(radius > 0.0, "masked_integrate needs a positive radius");
    let g = f.grid;
    let mut sum = 0.0;
    let mut cells = 0;
    for (i, j) in g.cells() {
        if in_ball(g.x(i), g.y(j), center, radius) {
            sum += f[(i, j)].abs().powf(p);
            cells += 1;
        }
    }
    MaskedIntegral { value: sum * g.cell_area(), cells }
}

/// Largest `|f|` over cells with center in the ball; `None` for an empty mask.
pub fn masked_sup(f: &Field, center: (f64, f64), radius: f64) -> Option<f64> {
    let g = f.grid;
    g.cells()
        .filter(|&(i, j)| in_ball(g.x(i), g.y(j), center, radius))
        .map(|(i, j)| f[(i, j)].abs())
        .fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn unit(n: usize) -> Grid {
        Grid::new(n, n, 1.0, 1.0).unwrap()
    }

    #[test]
    fn grid_invariants() {
        assert!(Grid::new(3, 8, 1.0, 1.0).is_err());
        assert!(Grid::new(8, 8, 0.0, 1.0).is_err());
        let g = Grid::new(5, 7, 2.0, 3.0).unwrap();
        for (i, j) in g.cells() {
            assert!(g.x(i) > 0.0 && g.x(i) < 2.0);
            assert!(g.y(j) > 0.0 && g.y(j) < 3.0);
        }
        assert!(Field::from_values(g, vec![0.0; 34]).is_err());
    }

    #[test]
    fn laplacian_of_constant_is_exactly_zero() {
        let f = Field::constant(Grid::new(9, 6, 1.3, 0.7).unwrap(), 3.7);
        assert!(laplacian(&f).values().iter().all(|&v| v == 0.0));
    }

    /// Dense matrix of the Neumann stencil assembled row by row, applied by
    /// plain matrix-vector multiplication.
    fn dense_apply(g: &Grid, f: &[f64]) -> Vec<f64> {
        let n = g.len();
        let mut m = vec![0.0; n * n];
        let (ix2, iy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
        for (i, j) in g.cells() {
            let r = g.idx(i, j);
            let mut add = |ii: usize, jj: usize, w: f64| m[r * n + g.idx(ii, jj)] += w;
            add(i, j, -2.0 * ix2 - 2.0 * iy2);
            add(if i > 0 { i - 1 } else { i }, j, ix2);
            add(if i + 1 < g.nx() { i + 1 } else { i }, j, ix2);
            add(i, if j > 0 { j - 1 } else { j }, iy2);
            add(i, if j + 1 < g.ny() { j + 1 } else { j }, iy2);
        }
        (0..n).map(|r| (0..n).map(|c| m[r * n + c] * f[c]).sum()).collect()
    }

    #[test]
    fn cosine_modes_are_discrete_eigenvectors() {
        let g = unit(32);
        let h = g.hx();
        for k in 1..4 {
            let f = Field::from_fn(g, |x, _| (k as f64 * PI * x).cos());
            let lam = 2.0 / (h * h) * (1.0 - (k as f64 * PI * h).cos());
            let lf = laplacian(&f);
            let oracle = dense_apply(&g, f.values());
            let dev = (0..g.len()).map(|idx| (lf.values()[idx] + lam * f.values()[idx]).abs()).fold(0.0, f64::max);
            // k = 1 at the literal 1e-12; rounding grows with lambda_k for higher modes
            assert!(dev <= if k == 1 { 1e-12 } else { 1e-11 }, "k = {k}: {dev:e}");
            for idx in 0..g.len() {
                assert!((oracle[idx] + lam * f.values()[idx]).abs() <= 1e-9);
                assert!((lf.values()[idx] - oracle[idx]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn unit_impulse_stencil_weights() {
        let g = Grid::new(8, 8, 2.0, 1.0).unwrap();
        let mut f = Field::zeros(g);
        f[(3, 4)] = 1.0;
        let l = laplacian(&f);
        let (ix2, iy2) = (1.0 / (g.hx() * g.hx()), 1.0 / (g.hy() * g.hy()));
        assert_eq!(l[(3, 4)], -2.0 * ix2 - 2.0 * iy2);
        assert_eq!(l[(2, 4)], ix2);
        assert_eq!(l[(4, 4)], ix2);
        assert_eq!(l[(3, 3)], iy2);
        assert_eq!(l[(3, 5)], iy2);
        assert_eq!(l[(5, 5)], 0.0);
    }

    #[test]
    fn quadrature() {
        let g = Grid::new(10, 15, 2.0, 3.0).unwrap();
        assert_eq!(integrate(&Field::constant(g, 1.0)), 6.0);
        assert_eq!(integrate(&Field::zeros(g)), 0.0);
        let f = Field::from_fn(unit(16), |x, _| x);
        assert!((integrate(&f) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn norms() {
        let g = Grid::new(8, 6, 2.0, 3.0).unwrap();
        let c = Field::constant(g, -1.5);
        assert!((lp_norm(&c, 3.0) - 1.5 * 6f64.powf(1.0 / 3.0)).abs() < 1e-13);
        let f = Field::from_fn(g, |x, y| x * y + 0.1);
        assert!((lp_norm(&f, 1.0) - integrate(&f)).abs() < 1e-13);
        // half the cells hold 2: direct summation gives sqrt(4 * area / 2)
        let mut half = Field::zeros(g);
        for k in 0..g.len() / 2 {
            half.values_mut()[k] = 2.0;
        }
        let direct = (half.values().iter().map(|v| v * v).sum::<f64>() * g.cell_area()).sqrt();
        assert!((lp_norm(&half, 2.0) - direct).abs() < 1e-14);
        assert!((lp_norm(&half, 2.0) - 2.0 * (6.0f64 / 2.0).sqrt()).abs() < 1e-14);
    }

    #[test]
    fn gradient_of_linear_field() {
        let g = unit(16);
        let (gx, gy) = gradient_centers(&Field::constant(g, 2.0));
        assert!(gx.values().iter().chain(gy.values()).all(|&v| v == 0.0));
        let (gx, gy) = gradient_centers(&Field::from_fn(g, |x, _| x));
        for j in 0..16 {
            for i in 1..15 {
                assert!((gx[(i, j)] - 1.0).abs() < 1e-12);
            }
            // mirrored boundary stencil: (f1 - f0) / (2h) = 1/2
            assert!((gx[(0, j)] - 0.5).abs() < 1e-12);
            assert!((gx[(15, j)] - 0.5).abs() < 1e-12);
        }
        assert!(gy.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn masked_integrals() {
        let g = unit(64);
        let f = Field::from_fn(g, |x, y| x + y * y);
        let all = masked_integrate(&f, (0.5, 0.5), 2.0, 2.0);
        let full: f64 = f.values().iter().map(|v| v * v).sum::<f64>() * g.cell_area();
        assert!((all.value - full).abs() < 1e-13 * full);
        assert_eq!(all.cells, g.len());

        let r = 0.25;
        let disk = masked_integrate(&Field::constant(g, 1.0), (0.5, 0.5), r, 1.0);
        assert!((disk.value - PI * r * r).abs() / (PI * r * r) <= 0.1);
        // area error shrinks under refinement
        let fine = masked_integrate(&Field::constant(unit(256), 1.0), (0.5, 0.5), r, 1.0);
        assert!((fine.value - PI * r * r).abs() <= (disk.value - PI * r * r).abs() + 1e-12);

        let tiny = masked_integrate(&f, (0.5, 0.5), 0.2 / 64.0, 1.0);
        assert!(tiny.is_empty() && tiny.is_degenerate() && tiny.value == 0.0);
        let one = masked_integrate(&f, (g.x(10), g.y(20)), 0.4 / 64.0, 1.0);
        assert_eq!(one.cells, 1);
        assert!(one.is_degenerate());
    }

    fn arb_field(g: Grid) -> impl Strategy<Value = Field> {
        proptest::collection::vec(-10.0f64..10.0, g.len()).prop_map(move |v| Field::from_values(g, v).unwrap())
    }

    proptest! {
        #[test]
        fn discrete_divergence_identity(f in arb_field(Grid::new(12, 9, 1.5, 0.8).unwrap())) {
            let total = integrate(&laplacian(&f));
            prop_assert!(total.abs() <= 1e-12 * f.max_abs());
        }

        #[test]
        fn laplacian_is_linear(
            f in arb_field(Grid::new(8, 8, 1.0, 1.0).unwrap()),
            g in arb_field(Grid::new(8, 8, 1.0, 1.0).unwrap()),
            a in -5.0f64..5.0, b in -5.0f64..5.0,
        ) {
            let combo = laplacian(&f.zip_map(&g, |x, y| a * x + b * y));
            let (lf, lg) = (laplacian(&f), laplacian(&g));
            for k in 0..combo.values().len() {
                let expect = a * lf.values()[k] + b * lg.values()[k];
                prop_assert!((combo.values()[k] - expect).abs() <= 1e-10 * (1.0 + expect.abs()));
            }
        }

        #[test]
        fn sub_mask_norm_is_bounded_by_full_norm(
            f in arb_field(Grid::new(10, 10, 1.0, 1.0).unwrap()),
            cx in 0.0f64..1.0, cy in 0.0f64..1.0, r in 0.01f64..1.0, p in 1.0f64..4.0,
        ) {
            let local = masked_integrate(&f, (cx, cy), r, p).value.powf(1.0 / p);
            prop_assert!(local <= lp_norm(&f, p) * (1.0 + 1e-12));
        }
    }
}
