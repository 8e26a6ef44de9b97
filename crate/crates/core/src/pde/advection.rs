//! Steady advection-diffusion `-α Δu + β·∇u = f`, `α = 10^-μ`, upwind
//! convection and 5-point diffusion.

use crate::error::{Error, Result};
use crate::linalg::BandMatrix;
use crate::measures::{Field, GridGeometry};

pub fn solve_advection_with(grid: &GridGeometry, mu: f64, beta: (f64, f64), forcing: f64) -> Result<Field> {
    let (nx, ny) = (grid.nx(), grid.ny());
    if nx < 3 || ny < 3 {
        return Err(Error::InvalidParameter("need at least 3 nodes per axis".into()));
    }
    let hx = grid.xs()[1] - grid.xs()[0];
    let hy = grid.ys()[1] - grid.ys()[0];
    let alpha = 10f64.powf(-mu);
    let (ix_n, iy_n) = (nx - 2, ny - 2);
    let n = ix_n * iy_n;
    let id = |ix: usize, iy: usize| (iy - 1) * ix_n + (ix - 1);
    let (dx, dy) = (alpha / (hx * hx), alpha / (hy * hy));
    // Upwind coefficients: backward differences for positive velocity.
    let (bx, by) = (beta.0 / hx, beta.1 / hy);
    let (west, east) = (-dx - bx.max(0.0), -dx + bx.min(0.0));
    let (south, north) = (-dy - by.max(0.0), -dy + by.min(0.0));
    let diag = 2.0 * dx + 2.0 * dy + bx.abs() + by.abs();
    let mut a = BandMatrix::zeros(n, ix_n, ix_n);
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            let r = id(ix, iy);
            a.add(r, r, diag);
            if ix > 1 {
                a.add(r, id(ix - 1, iy), west);
            }
            if ix < nx - 2 {
                a.add(r, id(ix + 1, iy), east);
            }
            if iy > 1 {
                a.add(r, id(ix, iy - 1), south);
            }
            if iy < ny - 2 {
                a.add(r, id(ix, iy + 1), north);
            }
        }
    }
    let u = a.factor()?.solve(&vec![forcing; n])?;
    let mut values = vec![0.0; grid.len()];
    for iy in 1..ny - 1 {
        for ix in 1..nx - 1 {
            values[iy * nx + ix] = u[id(ix, iy)];
        }
    }
    Field::new(values, grid.clone())
}

/// Benchmark configuration: `β = (1, 1)`, `f ≡ 1`.
pub fn solve_advection(mu: f64, grid: &GridGeometry) -> Result<Field> {
    solve_advection_with(grid, mu, (1.0, 1.0), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argmax(v: &[f64]) -> usize {
        (0..v.len()).max_by(|&i, &j| v[i].total_cmp(&v[j])).unwrap()
    }

    #[test]
    fn diffusive_case_is_diagonal_symmetric() {
        let g = GridGeometry::unit(32, 32).unwrap();
        let u = solve_advection(0.0, &g).unwrap();
        let v = u.values();
        for iy in 0..32 {
            for ix in 0..32 {
                assert!((v[iy * 32 + ix] - v[ix * 32 + iy]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn solutions_are_nonnegative() {
        let g = GridGeometry::unit(32, 32).unwrap();
        for mu in [0.0, 2.5, 5.0, 7.5, 10.0] {
            let u = solve_advection(mu, &g).unwrap();
            assert!(u.values().iter().all(|x| *x >= 0.0), "mu = {mu}");
        }
    }

    #[test]
    fn peak_moves_towards_the_outflow_corner() {
        let g = GridGeometry::unit(32, 32).unwrap();
        let mut last = f64::INFINITY;
        for mu in [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0] {
            let u = solve_advection(mu, &g).unwrap();
            let k = argmax(u.values());
            let p = g.point(k);
            let d = ((1.0 - p[0]).powi(2) + (1.0 - p[1]).powi(2)).sqrt();
            assert!(d <= last + 1e-12, "mu = {mu}: {d} > {last}");
            last = d;
        }
        assert!(last < 0.1);
    }
}
