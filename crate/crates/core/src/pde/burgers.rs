//! Viscous Burgers `u_t + u u_x = ν u_xx` on `[0, 1]`, zero Dirichlet data,
//! Heaviside pulse initial condition. Method of lines with an
//! Engquist-Osher flux and adaptive Bogacki-Shampine RK23 in time.

use crate::error::{Error, Result};
use crate::measures::{Field, GridGeometry};

const RTOL: f64 = 1e-6;
const ATOL: f64 = 1e-9;
const MIN_STEP: f64 = 1e-12;

/// Space-time solution sampled at equispaced output times.
#[derive(Debug, Clone)]
pub struct BurgersHistory {
    /// Spatial nodes.
    pub xs: Vec<f64>,
    /// Output times, `times[0] = 0`.
    pub times: Vec<f64>,
    /// Row-major `times.len() × xs.len()` values.
    pub values: Vec<f64>,
}

impl BurgersHistory {
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.xs.len();
        &self.values[k * n..(k + 1) * n]
    }

    /// Subsamples both axes on equispaced indices to `image × image`;
    /// geometry is `(x, t / T)`.
    pub fn subsample(&self, image: usize) -> Result<Field> {
        let ix = subsample_indices(self.xs.len(), image);
        let it = subsample_indices(self.times.len(), image);
        let t_end = *self.times.last().expect("non-empty history");
        let xs: Vec<f64> = ix.iter().map(|&i| self.xs[i]).collect();
        let ts: Vec<f64> = it.iter().map(|&k| self.times[k] / t_end).collect();
        let mut values = Vec::with_capacity(image * image);
        for &k in &it {
            let row = self.slice(k);
            values.extend(ix.iter().map(|&i| row[i]));
        }
        Field::new(values, GridGeometry::from_axes(xs, ts)?)
    }
}

pub(crate) fn subsample_indices(n: usize, m: usize) -> Vec<usize> {
    (0..m).map(|k| ((k * (n - 1)) as f64 / (m - 1) as f64).round() as usize).collect()
}

fn initial(mu: f64, x: f64) -> f64 {
    if x >= mu && x < mu + 0.2 {
        1.0
    } else {
        0.0
    }
}

#[inline]
fn eo_flux(ul: f64, ur: f64) -> f64 {
    0.5 * ul.max(0.0).powi(2) + 0.5 * ur.min(0.0).powi(2)
}

/// Right-hand side on the interior nodes; `u` holds all nodes with the
/// boundary entries zero.
fn rhs(u: &[f64], nu: f64, h: f64, out: &mut [f64]) {
    let n = u.len();
    out[0] = 0.0;
    out[n - 1] = 0.0;
    let mut left = eo_flux(u[0], u[1]);
    for i in 1..n - 1 {
        let right = eo_flux(u[i], u[i + 1]);
        out[i] = -(right - left) / h + nu * (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
        left = right;
    }
}

fn solve_from(u0: Vec<f64>, nu: f64, final_time: f64) -> Result<BurgersHistory> {
    let nodes = u0.len();
    let h = 1.0 / (nodes - 1) as f64;
    let xs: Vec<f64> = (0..nodes).map(|i| i as f64 * h).collect();
    let outputs = nodes;
    let times: Vec<f64> = (0..outputs).map(|k| final_time * k as f64 / (outputs - 1) as f64).collect();
    let mut values = Vec::with_capacity(outputs * nodes);
    let mut y = u0;
    values.extend_from_slice(&y);

    let mut k1 = vec![0.0; nodes];
    let mut k2 = vec![0.0; nodes];
    let mut k3 = vec![0.0; nodes];
    let mut k4 = vec![0.0; nodes];
    let mut stage = vec![0.0; nodes];
    let mut y_new = vec![0.0; nodes];
    rhs(&y, nu, h, &mut k1);
    let mut t = 0.0;
    let mut dt = 1e-4_f64.min(final_time / 16.0);
    for &target in &times[1..] {
        while t < target {
            let step = dt.min(target - t);
            let last = step >= target - t;
            for i in 0..nodes {
                stage[i] = y[i] + 0.5 * step * k1[i];
            }
            rhs(&stage, nu, h, &mut k2);
            for i in 0..nodes {
                stage[i] = y[i] + 0.75 * step * k2[i];
            }
            rhs(&stage, nu, h, &mut k3);
            for i in 0..nodes {
                y_new[i] = y[i] + step * (2.0 / 9.0 * k1[i] + 1.0 / 3.0 * k2[i] + 4.0 / 9.0 * k3[i]);
            }
            rhs(&y_new, nu, h, &mut k4);
            let mut err2 = 0.0;
            for i in 0..nodes {
                let e = step * (-5.0 / 72.0 * k1[i] + 1.0 / 12.0 * k2[i] + 1.0 / 9.0 * k3[i] - 0.125 * k4[i]);
                let sc = ATOL + RTOL * y[i].abs().max(y_new[i].abs());
                err2 += (e / sc).powi(2);
            }
            let err = (err2 / nodes as f64).sqrt();
            let err = if err.is_finite() { err } else { f64::INFINITY };
            if err <= 1.0 {
                t = if last { target } else { t + step };
                std::mem::swap(&mut y, &mut y_new);
                std::mem::swap(&mut k1, &mut k4);
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-1.0 / 3.0)).clamp(0.2, 5.0) };
            // Keep the controller based on the attempted step, not the clipped one.
            dt = if last && err <= 1.0 { dt.max(step * factor) } else { step * factor };
            if dt < MIN_STEP {
                return Err(Error::StepUnderflow { t });
            }
        }
        values.extend_from_slice(&y);
    }
    Ok(BurgersHistory { xs, times, values })
}

/// Integrates from the Heaviside pulse located at `mu` to `final_time`,
/// recording `nodes` equispaced time levels.
pub fn solve_burgers(mu: f64, viscosity: f64, final_time: f64, nodes: usize) -> Result<BurgersHistory> {
    if nodes < 3 {
        return Err(Error::InvalidParameter("need at least 3 nodes".into()));
    }
    if !(viscosity > 0.0) || !(final_time > 0.0) {
        return Err(Error::InvalidParameter("viscosity and final time must be positive".into()));
    }
    let h = 1.0 / (nodes - 1) as f64;
    let mut u0: Vec<f64> = (0..nodes).map(|i| initial(mu, i as f64 * h)).collect();
    u0[0] = 0.0;
    u0[nodes - 1] = 0.0;
    solve_from(u0, viscosity, final_time)
}
