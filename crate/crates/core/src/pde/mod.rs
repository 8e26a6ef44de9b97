//! Full-order snapshot generators for the three benchmark problems.

mod advection;
mod burgers;
mod poisson;

pub use advection::{solve_advection, solve_advection_with};
pub use burgers::{solve_burgers, BurgersHistory};
pub use poisson::{solve_poisson, solve_poisson_rhs};

use crate::error::{Error, Result};
use crate::kpod::SnapshotMatrix;
use crate::measures::{Field, GridGeometry};
use crate::parallel::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    Poisson,
    Advection,
    Burgers,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Poisson => "poisson",
            ProblemKind::Advection => "advection",
            ProblemKind::Burgers => "burgers",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "poisson" => Ok(Self::Poisson),
            "advection" => Ok(Self::Advection),
            "burgers" => Ok(Self::Burgers),
            other => Err(Error::InvalidParameter(format!("unknown problem `{other}`"))),
        }
    }
}

/// Physical constants of each benchmark.
#[derive(Debug, Clone, PartialEq)]
pub enum Physics {
    /// `Δu = f`, `f = amplitude * exp(-|x - μ|² / (2σ²))`.
    Poisson { sigma: f64, amplitude: f64 },
    /// `-α(μ)Δu + β·∇u = forcing`, `α(μ) = 10^-μ`.
    Advection { beta: (f64, f64), forcing: f64 },
    /// `u_t + u u_x = ν u_xx` on `nodes` points up to `final_time`, sampled
    /// to an `image × image` space-time field.
    Burgers { viscosity: f64, final_time: f64, nodes: usize, image: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    /// Output grid (the image the models see).
    pub grid: GridGeometry,
    pub physics: Physics,
    /// Per-component parameter bounds.
    pub parameter_domain: Vec<(f64, f64)>,
}

impl ProblemSpec {
    pub fn poisson() -> Self {
        let sigma = 0.1;
        Self {
            kind: ProblemKind::Poisson,
            grid: GridGeometry::unit(32, 32).expect("static grid"),
            physics: Physics::Poisson { sigma, amplitude: 100.0 / (2.0 * sigma) },
            parameter_domain: vec![(0.2, 0.8), (0.2, 0.8)],
        }
    }

    pub fn advection() -> Self {
        Self {
            kind: ProblemKind::Advection,
            grid: GridGeometry::unit(32, 32).expect("static grid"),
            physics: Physics::Advection { beta: (1.0, 1.0), forcing: 1.0 },
            parameter_domain: vec![(0.0, 10.0)],
        }
    }

    pub fn burgers() -> Self {
        Self::burgers_with(0.005, 0.5)
    }

    pub fn burgers_with(viscosity: f64, final_time: f64) -> Self {
        let nodes = 129;
        let image = 32;
        let idx = burgers::subsample_indices(nodes, image);
        let axis: Vec<f64> = idx.iter().map(|&i| i as f64 / (nodes - 1) as f64).collect();
        Self {
            kind: ProblemKind::Burgers,
            grid: GridGeometry::from_axes(axis.clone(), axis).expect("unit axes"),
            physics: Physics::Burgers { viscosity, final_time, nodes, image },
            parameter_domain: vec![(0.2, 0.4)],
        }
    }

    pub fn for_kind(kind: ProblemKind) -> Self {
        match kind {
            ProblemKind::Poisson => Self::poisson(),
            ProblemKind::Advection => Self::advection(),
            ProblemKind::Burgers => Self::burgers(),
        }
    }

    pub fn param_dim(&self) -> usize {
        self.parameter_domain.len()
    }

    /// Full-order solve for one parameter vector.
    pub fn solve(&self, mu: &[f64]) -> Result<Field> {
        if mu.len() != self.param_dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} expects {} parameters, got {}",
                self.kind.name(),
                self.param_dim(),
                mu.len()
            )));
        }
        match &self.physics {
            Physics::Poisson { sigma, amplitude } => {
                poisson::solve_gaussian_source(&self.grid, (mu[0], mu[1]), *sigma, *amplitude)
            }
            Physics::Advection { beta, forcing } => solve_advection_with(&self.grid, mu[0], *beta, *forcing),
            Physics::Burgers { viscosity, final_time, nodes, image } => {
                let hist = solve_burgers(mu[0], *viscosity, *final_time, *nodes)?;
                hist.subsample(*image)
            }
        }
    }

    /// Solves every parameter vector and stacks the fields column-wise.
    pub fn generate(&self, params: &[Vec<f64>], exec: Exec) -> Result<SnapshotMatrix> {
        let fields = exec.try_map(params.len(), |j| {
            self.solve(&params[j]).map_err(|e| Error::Stage {
                stage: "snapshot generation",
                source: Box::new(Error::InvalidParameter(format!("parameter index {j}: {e}"))),
            })
        })?;
        let n_h = self.grid.len();
        let mut data = Vec::with_capacity(n_h * params.len());
        for f in &fields {
            data.extend_from_slice(f.values());
        }
        SnapshotMatrix::new(data, n_h, params.to_vec(), self.grid.clone())
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Uniform tensor grid of `n_s` parameter vectors over the problem's box.
pub fn sample_parameters(spec: &ProblemSpec, n_s: usize) -> Result<Vec<Vec<f64>>> {
    if n_s < 2 {
        return Err(Error::InvalidParameter("need at least 2 parameter samples".into()));
    }
    match spec.parameter_domain.as_slice() {
        [(lo, hi)] => Ok(linspace(*lo, *hi, n_s).into_iter().map(|m| vec![m]).collect()),
        [(lo1, hi1), (lo2, hi2)] => {
            let q = (n_s as f64).sqrt().round() as usize;
            if q * q != n_s {
                return Err(Error::InvalidParameter(format!("{n_s} is not a perfect square")));
            }
            let a = linspace(*lo1, *hi1, q);
            let b = linspace(*lo2, *hi2, q);
            Ok(a.iter().flat_map(|x| b.iter().map(move |y| vec![*x, *y])).collect())
        }
        _ => Err(Error::InvalidParameter("unsupported parameter dimension".into())),
    }
}
