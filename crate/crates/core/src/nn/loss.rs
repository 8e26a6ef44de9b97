//! Batch losses returning the value and the gradient with respect to the
//! network output.

use super::network::Batch;
use crate::error::{Error, Result};
use crate::measures::CostMatrix;
use crate::sinkhorn::{sinkhorn_plan, sinkhorn_self_plan, Domain, Epsilon, SinkhornParams, SinkhornSolution};

fn same_shape(y: &Batch, y_nn: &Batch) -> Result<()> {
    if y.n != y_nn.n || y.width != y_nn.width {
        return Err(Error::Shape(format!("target batch {}x{} vs output {}x{}", y.n, y.width, y_nn.n, y_nn.width)));
    }
    if y.n == 0 {
        return Err(Error::Shape("empty batch".into()));
    }
    Ok(())
}

/// `(1/N) Σ_i |y_i - y_nn_i|^2` and its gradient `2 (y_nn - y) / N`.
pub fn mse_loss(y: &Batch, y_nn: &Batch) -> Result<(f64, Batch)> {
    same_shape(y, y_nn)?;
    let n = y.n as f64;
    let mut loss = 0.0;
    let grad = y
        .data
        .iter()
        .zip(&y_nn.data)
        .map(|(a, b)| {
            loss += (b - a) * (b - a);
            2.0 * (b - a) / n
        })
        .collect();
    Ok((loss / n, Batch { n: y.n, width: y.width, data: grad }))
}

/// Settings of the point-cloud Sinkhorn loss.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSinkhorn {
    /// Regularization relative to the largest squared distance within the
    /// target batch (the cross distances when all targets coincide).
    pub eps_rel: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for BatchSinkhorn {
    fn default() -> Self {
        Self { eps_rel: 1e-4, max_iter: 20_000, tol: 1e-12 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn cloud_cost(x: &Batch, y: &Batch) -> Vec<f64> {
    let mut c = Vec::with_capacity(x.n * y.n);
    for i in 0..x.n {
        for j in 0..y.n {
            c.push(sq_dist(x.row(i), y.row(j)));
        }
    }
    c
}

fn entropic(c: Vec<f64>, w: &[f64], params: &SinkhornParams, symmetric: bool) -> Result<SinkhornSolution> {
    let n = w.len();
    let cost = CostMatrix::from_entries(n, n, c)?;
    if symmetric {
        sinkhorn_self_plan(w, &cost, params)
    } else {
        sinkhorn_plan(w, w, &cost, params)
    }
}

/// Debiased entropic transport between the uniform point clouds of the
/// targets and the outputs, with squared Euclidean ground cost.
///
/// The gradient differentiates the cost matrices with the converged plans
/// held fixed.
pub fn sinkhorn_batch_loss(y: &Batch, y_nn: &Batch, cfg: &BatchSinkhorn) -> Result<(f64, Batch)> {
    same_shape(y, y_nn)?;
    let n = y.n;
    let w = vec![1.0 / n as f64; n];
    let c_xx = cloud_cost(y, y);
    let c_xy = cloud_cost(y, y_nn);
    let c_yy = cloud_cost(y_nn, y_nn);
    let own = c_xx.iter().cloned().fold(0.0, f64::max);
    let scale = if own > 0.0 { own } else { c_xy.iter().cloned().fold(0.0, f64::max) };
    if scale == 0.0 {
        return Ok((0.0, Batch::zeros(n, y.width)));
    }
    let eps = cfg.eps_rel * scale;
    if !eps.is_finite() || cfg.eps_rel <= 0.0 {
        return Err(Error::InvalidParameter(format!("batch Sinkhorn regularization {eps}")));
    }
    let params = SinkhornParams {
        epsilon: Epsilon::Absolute(eps),
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        domain: Domain::Log,
        eps_scaling: None,
        overrelax: true,
        record_trace: false,
    };
    let p_xx = entropic(c_xx, &w, &params, true)?;
    let p_xy = entropic(c_xy, &w, &params, false)?;
    let p_yy = entropic(c_yy, &w, &params, true)?;
    let loss = p_xy.entropic_cost(&w, &w) - 0.5 * p_xx.entropic_cost(&w, &w) - 0.5 * p_yy.entropic_cost(&w, &w);
    let d = y.width;
    let mut grad = vec![0.0; n * d];
    for j in 0..n {
        let g = &mut grad[j * d..(j + 1) * d];
        let yj = y_nn.row(j);
        for i in 0..n {
            let p = p_xy.plan_at(i, j);
            let q = p_yy.plan_at(j, i);
            let xi = y.row(i);
            let yi = y_nn.row(i);
            for k in 0..d {
                g[k] += 2.0 * p * (yj[k] - xi[k]) - 2.0 * q * (yj[k] - yi[k]);
            }
        }
    }
    Ok((loss, Batch { n, width: d, data: grad }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(seed: u64, n: usize, w: usize) -> Batch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Batch::new(n, w, (0..n * w).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()).unwrap()
    }

    #[test]
    fn mse_examples() {
        let y = Batch::new(1, 1, vec![0.0]).unwrap();
        let p = Batch::new(1, 1, vec![2.0]).unwrap();
        let (l, g) = mse_loss(&y, &p).unwrap();
        assert_eq!(l, 4.0);
        assert_eq!(g.data, vec![4.0]);
        let (l, g) = mse_loss(&p, &p).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data.iter().all(|v| *v == 0.0));
        assert!(mse_loss(&y, &random(0, 2, 1)).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let y = random(1, 4, 3);
        let p = random(2, 4, 3);
        let (_, g) = mse_loss(&y, &p).unwrap();
        let h = 1e-6;
        for i in 0..p.data.len() {
            let mut a = p.clone();
            a.data[i] += h;
            let mut b = p.clone();
            b.data[i] -= h;
            let fd = (mse_loss(&y, &a).unwrap().0 - mse_loss(&y, &b).unwrap().0) / (2.0 * h);
            assert!((fd - g.data[i]).abs() <= 1e-8 * g.data[i].abs().max(1.0));
        }
    }

    #[test]
    fn sinkhorn_loss_vanishes_on_equal_batches() {
        let y = random(3, 5, 6);
        let (l, g) = sinkhorn_batch_loss(&y, &y, &BatchSinkhorn::default()).unwrap();
        assert!(l.abs() < 1e-8);
        assert!(g.data.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-6);
    }

    #[test]
    fn single_sample_is_squared_distance() {
        let y = Batch::new(1, 1, vec![0.0]).unwrap();
        let p = Batch::new(1, 1, vec![1.0]).unwrap();
        let (l, g) = sinkhorn_batch_loss(&y, &p, &BatchSinkhorn { eps_rel: 1e-3, ..Default::default() }).unwrap();
        assert!((l - 1.0).abs() < 1e-9);
        assert!((g.data[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_gradient_matches_finite_differences() {
        let y = random(4, 4, 8);
        let p = random(5, 4, 8);
        let cfg = BatchSinkhorn { eps_rel: 0.05, ..Default::default() };
        let (_, g) = sinkhorn_batch_loss(&y, &p, &cfg).unwrap();
        let h = 1e-5;
        let mut num = Vec::new();
        for i in 0..p.data.len() {
            let mut a = p.clone();
            a.data[i] += h;
            let mut b = p.clone();
            b.data[i] -= h;
            num.push((sinkhorn_batch_loss(&y, &a, &cfg).unwrap().0 - sinkhorn_batch_loss(&y, &b, &cfg).unwrap().0) / (2.0 * h));
        }
        let err: f64 = num.iter().zip(&g.data).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let norm: f64 = num.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err / norm < 1e-3, "relative error {}", err / norm);
    }

    #[test]
    fn sinkhorn_loss_is_nonnegative_on_random_batches() {
        for s in 0..5 {
            let (l, _) = sinkhorn_batch_loss(&random(10 + s, 6, 4), &random(20 + s, 6, 4), &BatchSinkhorn::default()).unwrap();
            assert!(l > 0.0);
        }
    }
}
