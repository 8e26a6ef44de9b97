//! Fixed-support entropic barycenters by iterative Bregman projections,
//! with the debiasing correction so that a single measure is its own
//! barycenter.

use super::kernel::{DenseKernel, GridKernel, KernelOp};
use super::{safe_ln, Domain, SinkhornParams};
use crate::error::{Error, Result};
use crate::measures::{point_cost_matrix, DiscreteMeasure, GridGeometry};

fn check_alphas(alphas: &[f64], count: usize) -> Result<()> {
    if alphas.len() != count {
        return Err(Error::InvalidParameter(format!("{} weights for {count} measures", alphas.len())));
    }
    let s: f64 = alphas.iter().sum();
    if alphas.iter().any(|a| !(*a >= 0.0)) || (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidParameter("barycentric weights must be convex".into()));
    }
    Ok(())
}

/// Entropic barycenter of measures sharing one support, weighted by `alphas`.
pub fn entropic_barycenter(measures: &[DiscreteMeasure], alphas: &[f64], params: &SinkhornParams) -> Result<DiscreteMeasure> {
    if measures.is_empty() {
        return Err(Error::InvalidParameter("no measures".into()));
    }
    check_alphas(alphas, measures.len())?;
    let support = measures[0].support();
    if measures.iter().any(|m| m.support() != support) {
        return Err(Error::DimensionMismatch("measures must share one support".into()));
    }
    params.validate()?;
    let cost = point_cost_matrix(support, support, 2.0)?;
    let eps = params.epsilon.resolve(cost.max());
    let mut op = DenseKernel::new(&cost, eps.max(f64::MIN_POSITIVE));
    let weights: Vec<&[f64]> = measures.iter().map(|m| m.weights()).collect();
    let b = bregman(&mut op, &weights, alphas, params)?;
    DiscreteMeasure::new(support.clone(), b)
}

/// [`entropic_barycenter`] for nodal weight vectors on a tensor grid, using
/// the separable kernel.
pub fn entropic_barycenter_grid(
    geometry: &GridGeometry,
    weights: &[&[f64]],
    alphas: &[f64],
    params: &SinkhornParams,
) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidParameter("no measures".into()));
    }
    check_alphas(alphas, weights.len())?;
    if weights.iter().any(|w| w.len() != geometry.len()) {
        return Err(Error::DimensionMismatch("weights do not match the grid".into()));
    }
    params.validate()?;
    let mut op = GridKernel::new(geometry, geometry, 1.0);
    let eps = params.epsilon.resolve(op.max_cost());
    op.set_epsilon(eps.max(f64::MIN_POSITIVE));
    bregman(&mut op, weights, alphas, params)
}

fn bregman<K: KernelOp>(op: &mut K, weights: &[&[f64]], alphas: &[f64], params: &SinkhornParams) -> Result<Vec<f64>> {
    if params.domain == Domain::Direct {
        return Err(Error::InvalidParameter("barycenters are computed in the log domain only".into()));
    }
    let n = op.rows();
    if let [k] = active_set(alphas)[..] {
        // The debiased barycenter of one measure is the measure itself.
        return Ok(weights[k].to_vec());
    }
    let log_a: Vec<Vec<f64>> = weights.iter().map(|w| w.iter().map(|x| safe_ln(*x)).collect()).collect();
    let active = active_set(alphas);
    let mut log_v = vec![vec![0.0; n]; weights.len()];
    let mut log_u = vec![vec![0.0; n]; weights.len()];
    let mut phi = vec![vec![0.0; n]; weights.len()];
    let mut log_d = vec![0.0; n];
    let mut log_b = vec![0.0_f64; n];
    let mut tmp = vec![0.0; n];
    let mut kd = vec![0.0; n];
    op.log_apply(&log_d, &mut kd);
    for it in 1..=params.max_iter {
        // Violation of the fixed-support marginals left by the last sweep.
        let mut err = 0.0;
        for &k in &active {
            op.log_apply(&log_v[k], &mut tmp);
            if it > 1 {
                err += (0..n).map(|i| ((log_u[k][i] + tmp[i]).exp() - weights[k][i]).abs()).sum::<f64>();
            }
            for i in 0..n {
                log_u[k][i] = log_a[k][i] - tmp[i];
            }
            op.log_apply_t(&log_u[k], &mut phi[k]);
        }
        if it > 1 {
            err += (0..n).map(|i| ((log_d[i] + kd[i]).exp() - log_b[i].exp()).abs()).sum::<f64>();
            if err <= params.tol {
                return Ok(normalized(&log_b));
            }
        }
        for i in 0..n {
            log_b[i] = log_d[i] + active.iter().map(|&k| alphas[k] * phi[k][i]).sum::<f64>();
        }
        for &k in &active {
            for i in 0..n {
                log_v[k][i] = log_b[i] - phi[k][i];
            }
        }
        for i in 0..n {
            log_d[i] = 0.5 * (log_d[i] + log_b[i] - kd[i]);
        }
        op.log_apply(&log_d, &mut kd);
        if log_b.iter().any(|x| x.is_nan()) {
            return Err(Error::Diverged { iteration: it });
        }
    }
    Ok(normalized(&log_b))
}

fn active_set(alphas: &[f64]) -> Vec<usize> {
    (0..alphas.len()).filter(|&k| alphas[k] > 0.0).collect()
}

fn normalized(log_b: &[f64]) -> Vec<f64> {
    let m = log_b.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = log_b.iter().map(|x| if *x == f64::NEG_INFINITY { 0.0 } else { (x - m).exp() }).collect();
    let s: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / s).collect();
    let residue = 1.0 - w.iter().sum::<f64>();
    if let Some((k, _)) = w.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)) {
        w[k] += residue;
    }
    w
}
