//! `Δu = f` on the unit square with homogeneous Dirichlet data.

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::measures::{Field, GridGeometry};

fn spacing(axis: &[f64]) -> Result<f64> {
    if axis.len() < 3 {
        return Err(Error::InvalidParameter("need at least 3 nodes per axis".into()));
    }
    Ok(axis[1] - axis[0])
}

/// 5-point solve of `Δu = f(x, y)` with boundary nodes pinned to zero.
pub fn solve_poisson_rhs(grid: &GridGeometry, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
    let (nx, ny) = (grid.nx(), grid.ny());
    let hx = spacing(grid.xs())?;
    let hy = spacing(grid.ys())?;
    let (ix_n, iy_n) = (nx - 2, ny - 2);
    let n = ix_n * iy_n;
    let id = |ix: usize, iy: usize| (iy - 1) * ix_n + (ix - 1);
    let (cx, cy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let mut a = BandMatrix::zeros(n, ix_n, ix_n);
    let mut rhs = vec![0.0; n];
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            let r = id(ix, iy);
            a.add(r, r, -2.0 * (cx + cy));
            if ix > 1 {
                a.add(r, id(ix - 1, iy), cx);
            }
            if ix < nx - 2 {
                a.add(r, id(ix + 1, iy), cx);
            }
            if iy > 1 {
                a.add(r, id(ix, iy - 1), cy);
            }
            if iy < ny - 2 {
                a.add(r, id(ix, iy + 1), cy);
            }
            rhs[r] = f(grid.xs()[ix], grid.ys()[iy]);
        }
    }
    let u = a.factor()?.solve(&rhs)?;
    let mut values = vec![0.0; grid.len()];
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            values[iy * nx + ix] = u[id(ix, iy)];
        }
    }
    Field::new(values, grid.clone())
}

pub(crate) fn solve_gaussian_source(grid: &GridGeometry, mu: (f64, f64), sigma: f64, amplitude: f64) -> Result<Field> {
    let s2 = 2.0 * sigma * sigma;
    solve_poisson_rhs(grid, |x, y| amplitude * (-((x - mu.0).powi(2) + (y - mu.1).powi(2)) / s2).exp())
}

/// Poisson snapshot for source centre `mu` with the benchmark source
/// (`σ = 0.1`, amplitude `100 / 2σ`).
pub fn solve_poisson(mu: (f64, f64), grid: &GridGeometry) -> Result<Field> {
    solve_gaussian_source(grid, mu, 0.1, 100.0 / 0.2)
}
