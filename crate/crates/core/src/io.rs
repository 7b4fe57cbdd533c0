//! Field file formats.
//!
//! Text grid: a header line `FIELD nx ny Lx Ly`, then `ny` lines of `nx`
//! space-separated values, bottom row (`j = 0`) first.
//!
//! Heatmap: binary PGM (`P5`), width `nx`, height `ny`, maxval 255, linear
//! min-max scaling, top row (`j = ny - 1`) first.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

use crate::grid::{Field, Grid};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.display().to_string(), source }
}

pub fn text_grid_string(f: &Field) -> String {
    let g = f.grid();
    let mut s = String::with_capacity(g.len() * 24 + 64);
    let _ = writeln!(s, "FIELD {} {} {:e} {:e}", g.nx(), g.ny(), g.lx(), g.ly());
    for j in 0..g.ny() {
        for i in 0..g.nx() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:e}", f[(i, j)]);
        }
        s.push('\n');
    }
    s
}

pub fn write_text_grid(path: &Path, f: &Field) -> Result<(), FormatError> {
    fs::write(path, text_grid_string(f)).map_err(io_err(path))
}

pub fn parse_text_grid(text: &str) -> Result<Field, FormatError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or(FormatError::Malformed { line: 1, message: "missing header".into() })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    let bad_header =
        || FormatError::Malformed { line: 1, message: format!("expected `FIELD nx ny Lx Ly`, got `{}`", header) };
    if parts.len() != 5 || parts[0] != "FIELD" {
        return Err(bad_header());
    }
    let nx: usize = parts[1].parse().map_err(|_| bad_header())?;
    let ny: usize = parts[2].parse().map_err(|_| bad_header())?;
    let lx: f64 = parts[3].parse().map_err(|_| bad_header())?;
    let ly: f64 = parts[4].parse().map_err(|_| bad_header())?;
    let grid = Grid::new(nx, ny, lx, ly).map_err(|e| FormatError::Malformed { line: 1, message: e.to_string() })?;
    let mut values = Vec::with_capacity(grid.len());
    for row in 0..ny {
        let (n, line) = lines
            .next()
            .ok_or(FormatError::Malformed { line: row + 2, message: format!("expected {} data rows", ny) })?;
        let before = values.len();
        for tok in line.split_whitespace() {
            values.push(
                tok.parse::<f64>()
                    .map_err(|_| FormatError::Malformed { line: n + 1, message: format!("bad value `{}`", tok) })?,
            );
        }
        if values.len() - before != nx {
            return Err(FormatError::Malformed {
                line: n + 1,
                message: format!("expected {} values, got {}", nx, values.len() - before),
            });
        }
    }
    Field::from_values(grid, values).map_err(|e| FormatError::Malformed { line: 1, message: e.to_string() })
}

pub fn read_text_grid(path: &Path) -> Result<Field, FormatError> {
    parse_text_grid(&fs::read_to_string(path).map_err(io_err(path))?)
}

/// P5 bytes for `f`; a constant field maps to all zeros.
pub fn pgm_bytes(f: &Field) -> Vec<u8> {
    let g = f.grid();
    let (lo, hi) = (f.min(), f.max());
    let span = hi - lo;
    let mut out = format!("P5\n{} {}\n255\n", g.nx(), g.ny()).into_bytes();
    out.reserve(g.len());
    for j in (0..g.ny()).rev() {
        for i in 0..g.nx() {
            let level = if span > 0.0 && span.is_finite() {
                ((f[(i, j)] - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            };
            out.push(level);
        }
    }
    out
}

pub fn write_pgm(path: &Path, f: &Field) -> Result<(), FormatError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(&pgm_bytes(f)).map_err(io_err(path))
}
