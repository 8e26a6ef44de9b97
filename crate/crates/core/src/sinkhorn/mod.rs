//! Entropic optimal transport by Sinkhorn-Knopp matrix scaling.
//!
//! The solver alternates `u <- a / (K v)`, `v <- b / (K^T u)` with
//! `K_ij = exp(-C_ij / eps)`, either on the scalings directly or, for small
//! `eps`, on log-potentials `f = eps log u`, `g = eps log v`. Convergence is
//! certified by the L1 violation of the row marginal (the column marginal is
//! exact after each `v` update).

mod barycenter;
pub mod exact;
mod kernel;

pub use barycenter::{entropic_barycenter, entropic_barycenter_grid};
pub use exact::{exact_ot_1d, exact_ot_bruteforce};

use crate::error::{Error, Result};
use crate::measures::{cost_matrix, CostMatrix, DiscreteMeasure, GridGeometry};
use kernel::{DenseKernel, GridKernel, KernelOp};

/// Regularization strength, absolute or scaled by the largest cost entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    RelativeToMax(f64),
}

impl Epsilon {
    pub fn resolve(self, max_cost: f64) -> f64 {
        match self {
            Epsilon::Absolute(e) => e,
            Epsilon::RelativeToMax(r) => r * max_cost,
        }
    }

    fn raw(self) -> f64 {
        match self {
            Epsilon::Absolute(e) | Epsilon::RelativeToMax(e) => e,
        }
    }
}

/// Which iteration is run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Log-domain whenever `eps < 1e-2 * max(C)`.
    Auto,
    Direct,
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornParams {
    pub epsilon: Epsilon,
    pub max_iter: usize,
    /// Tolerance on the L1 marginal violation.
    pub tol: f64,
    pub domain: Domain,
    /// Geometric eps-annealing factor in (0, 1) for the log-domain solver;
    /// `None` iterates at the target eps from the start.
    pub eps_scaling: Option<f64>,
    /// Over-relaxed potential updates in the final log-domain stage, with
    /// the factor estimated from the observed contraction rate. The fixed
    /// point is unchanged.
    pub overrelax: bool,
    /// Record the dual objective `<f, a> + <g, b>` after every iteration.
    /// It increases monotonically towards the entropic transport cost for
    /// plain (not over-relaxed) iterations.
    pub record_trace: bool,
}

impl Default for SinkhornParams {
    fn default() -> Self {
        Self {
            epsilon: Epsilon::RelativeToMax(1e-3),
            max_iter: 100_000,
            tol: 1e-9,
            domain: Domain::Auto,
            eps_scaling: None,
            overrelax: true,
            record_trace: false,
        }
    }
}

impl SinkhornParams {
    pub fn with_epsilon(mut self, epsilon: Epsilon) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.raw() > 0.0) {
            return Err(Error::InvalidParameter("epsilon must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter("max_iter must be at least 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter("tol must be positive".into()));
        }
        if let Some(s) = self.eps_scaling {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::InvalidParameter("eps_scaling must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    fn use_log(&self, eps: f64, max_cost: f64) -> bool {
        match self.domain {
            Domain::Direct => false,
            Domain::Log => true,
            Domain::Auto => eps < 1e-2 * max_cost,
        }
    }
}

/// Dual variables in the representation the solver iterated on.
#[derive(Debug, Clone, PartialEq)]
pub enum Duals {
    /// Scalings `u`, `v` with `P = diag(u) K diag(v)`.
    Scaling { u: Vec<f64>, v: Vec<f64> },
    /// Potentials `f`, `g` (cost units) with `P_ij = exp((f_i + g_j - C_ij) / eps)`.
    Potentials { f: Vec<f64>, g: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkhornSolution {
    /// Row-major `n x m` coupling.
    pub plan: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
    pub duals: Duals,
    /// Resolved regularization.
    pub epsilon: f64,
    /// `<P, C>`.
    pub reg_cost: f64,
    pub iterations: usize,
    /// Larger of the row and column L1 marginal violations of `plan`.
    pub marginal_err: f64,
    /// Dual objective per iteration of the final eps stage, when requested.
    pub trace: Vec<f64>,
}

impl SinkhornSolution {
    pub fn plan_at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.cols + j]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        self.plan.chunks(self.cols).map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.cols];
        for row in self.plan.chunks(self.cols) {
            for (sj, p) in s.iter_mut().zip(row) {
                *sj += p;
            }
        }
        s
    }

    /// Entropic objective `<P, C> + eps KL(P | a ⊗ b)`.
    pub fn entropic_cost(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut kl = 0.0;
        for i in 0..self.rows {
            for j in 0..self.cols {
                let p = self.plan_at(i, j);
                if p > 0.0 {
                    kl += p * (p / (a[i] * b[j])).ln();
                }
            }
        }
        self.reg_cost + self.epsilon * kl
    }
}

/// Result of the operator-level solver before any dense plan is formed.
pub(crate) struct Scaled {
    pub duals: Duals,
    pub iterations: usize,
    pub trace: Vec<f64>,
}

fn check_probability(w: &[f64], name: &str) -> Result<()> {
    if w.is_empty() || w.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidMeasure(format!("{name} must be a nonnegative vector")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidMeasure(format!("{name} sums to {s}")));
    }
    Ok(())
}

fn l1_gap(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(p, q)| (p - q).abs()).sum()
}

/// Dual value of potentials whose plan has unit mass, relative to the
/// product reference measure `a ⊗ b`.
fn dual_objective(f: &[f64], g: &[f64], a: &[f64], b: &[f64], eps: f64) -> f64 {
    let side = |p: &[f64], w: &[f64]| -> f64 {
        p.iter().zip(w).filter(|(_, w)| **w > 0.0).map(|(p, w)| w * (p - eps * w.ln())).sum()
    };
    side(f, a) + side(g, b)
}

pub(crate) fn safe_ln(x: f64) -> f64 {
    if x > 0.0 {
        x.ln()
    } else {
        f64::NEG_INFINITY
    }
}

/// Runs Sinkhorn on an abstract kernel operator.
pub(crate) fn solve<K: KernelOp>(op: &mut K, a: &[f64], b: &[f64], params: &SinkhornParams) -> Result<Scaled> {
    params.validate()?;
    let max_cost = op.max_cost();
    let eps = params.epsilon.resolve(max_cost);
    if !(eps > 0.0) {
        // Zero cost matrix with a relative epsilon: any positive value is exact.
        return solve(op, a, b, &SinkhornParams { epsilon: Epsilon::Absolute(1.0), ..params.clone() });
    }
    if params.use_log(eps, max_cost) {
        solve_log(op, a, b, eps, params)
    } else {
        op.set_epsilon(eps);
        solve_direct(op, a, b, params)
    }
}

fn solve_direct<K: KernelOp>(op: &K, a: &[f64], b: &[f64], params: &SinkhornParams) -> Result<Scaled> {
    let (n, m) = (op.rows(), op.cols());
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; m];
    let mut kv = vec![0.0; n];
    let mut ktu = vec![0.0; m];
    let mut trace = Vec::new();
    op.apply(&v, &mut kv);
    let mut iterations = 0;
    for it in 1..=params.max_iter {
        iterations = it;
        for i in 0..n {
            u[i] = if a[i] == 0.0 { 0.0 } else { a[i] / kv[i] };
        }
        op.apply_t(&u, &mut ktu);
        for j in 0..m {
            v[j] = if b[j] == 0.0 { 0.0 } else { b[j] / ktu[j] };
        }
        if u.iter().chain(&v).any(|x| x.is_nan()) {
            return Err(Error::Diverged { iteration: it });
        }
        if u.iter().chain(&v).any(|x| x.is_infinite()) {
            return Err(Error::StabilizationRequired { iteration: it });
        }
        op.apply(&v, &mut kv);
        if kv.iter().zip(a).any(|(k, ai)| *ai > 0.0 && *k == 0.0) {
            return Err(Error::StabilizationRequired { iteration: it });
        }
        if params.record_trace {
            let eps = op.epsilon();
            let alpha: Vec<f64> = u.iter().map(|x| eps * safe_ln(*x)).collect();
            let beta: Vec<f64> = v.iter().map(|x| eps * safe_ln(*x)).collect();
            trace.push(dual_objective(&alpha, &beta, a, b, eps));
        }
        let err: f64 = (0..n).map(|i| (u[i] * kv[i] - a[i]).abs()).sum();
        if err.is_nan() {
            return Err(Error::Diverged { iteration: it });
        }
        if err <= params.tol {
            break;
        }
    }
    Ok(Scaled { duals: Duals::Scaling { u, v }, iterations, trace })
}

/// Annealing factor used when a plain log-domain run stalls.
const FALLBACK_SCALING: f64 = 0.8;

fn solve_log<K: KernelOp>(op: &mut K, a: &[f64], b: &[f64], eps: f64, params: &SinkhornParams) -> Result<Scaled> {
    if params.eps_scaling.is_some() {
        return Ok(solve_log_schedule(op, a, b, eps, params, params.eps_scaling, params.max_iter)?.0);
    }
    // Near-degenerate instances can stall for tens of thousands of plain
    // iterations at small eps; annealing from a large eps escapes quickly.
    let first = (params.max_iter / 4).max(1);
    let (run, converged) = solve_log_schedule(op, a, b, eps, params, None, first)?;
    if converged || first >= params.max_iter {
        return Ok(run);
    }
    let (mut retry, _) = solve_log_schedule(op, a, b, eps, params, Some(FALLBACK_SCALING), params.max_iter - first)?;
    retry.iterations += run.iterations;
    Ok(retry)
}

fn solve_log_schedule<K: KernelOp>(
    op: &mut K,
    a: &[f64],
    b: &[f64],
    eps: f64,
    params: &SinkhornParams,
    scaling: Option<f64>,
    max_iter: usize,
) -> Result<(Scaled, bool)> {
    let (n, m) = (op.rows(), op.cols());
    let log_a: Vec<f64> = a.iter().map(|x| safe_ln(*x)).collect();
    let log_b: Vec<f64> = b.iter().map(|x| safe_ln(*x)).collect();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let mut h = vec![0.0; m.max(n)];
    let mut lse_row = vec![0.0; n];
    let mut lse_col = vec![0.0; m];
    let mut iterations = 0;

    // Annealing schedule ending at the target eps.
    let mut schedule = Vec::new();
    if let Some(theta) = scaling {
        let mut e = op.max_cost().max(eps);
        while e > eps {
            schedule.push(e);
            e *= theta;
        }
    }
    schedule.push(eps);
    let last = schedule.len() - 1;

    let mut trace = Vec::new();
    let mut converged = false;
    for (stage, &e) in schedule.iter().enumerate() {
        op.set_epsilon(e);
        let final_stage = stage == last;
        let (stage_tol, stage_cap) = if final_stage {
            (params.tol, max_iter.saturating_sub(iterations).max(1))
        } else {
            (params.tol.max(1e-3), 50)
        };
        // Row log-sums for the current g.
        for (hj, gj) in h[..m].iter_mut().zip(&g) {
            *hj = gj / e;
        }
        op.log_apply(&h[..m], &mut lse_row);
        let mut relax = Relaxation::new(final_stage && params.overrelax);
        for _ in 0..stage_cap {
            iterations += 1;
            let w = relax.omega;
            for i in 0..n {
                f[i] = if log_a[i] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (1.0 - w) * f[i] + w * e * (log_a[i] - lse_row[i])
                };
            }
            for (hi, fi) in h[..n].iter_mut().zip(&f) {
                *hi = fi / e;
            }
            op.log_apply_t(&h[..n], &mut lse_col);
            for j in 0..m {
                g[j] = if log_b[j] == f64::NEG_INFINITY {
                    f64::NEG_INFINITY
                } else {
                    (1.0 - w) * g[j] + w * e * (log_b[j] - lse_col[j])
                };
            }
            if f.iter().chain(&g).any(|x| x.is_nan()) {
                return Err(Error::Diverged { iteration: iterations });
            }
            for (hj, gj) in h[..m].iter_mut().zip(&g) {
                *hj = gj / e;
            }
            op.log_apply(&h[..m], &mut lse_row);
            if final_stage && params.record_trace {
                trace.push(dual_objective(&f, &g, a, b, e));
            }
            let mut err = 0.0;
            for i in 0..n {
                let r = if f[i] == f64::NEG_INFINITY { 0.0 } else { (f[i] / e + lse_row[i]).exp() };
                err += (r - a[i]).abs();
            }
            if err.is_nan() {
                return Err(Error::Diverged { iteration: iterations });
            }
            // Over-relaxed steps leave the column marginal inexact too.
            if w != 1.0 && err <= stage_tol {
                let mut col = 0.0;
                for (hi, fi) in h[..n].iter_mut().zip(&f) {
                    *hi = fi / e;
                }
                op.log_apply_t(&h[..n], &mut lse_col);
                for j in 0..m {
                    let c = if g[j] == f64::NEG_INFINITY { 0.0 } else { (g[j] / e + lse_col[j]).exp() };
                    col += (c - b[j]).abs();
                }
                err = err.max(col);
            }
            if err <= stage_tol {
                converged = final_stage;
                break;
            }
            relax.observe(err);
        }
    }
    Ok((Scaled { duals: Duals::Potentials { f, g }, iterations, trace }, converged))
}

/// Adaptive over-relaxation: plain steps until the linear contraction rate
/// `r` is measurable, then `ω = 2 / (1 + sqrt(1 - r))`, the optimal SOR
/// factor for that rate. Falls back to `ω = 1` for good if the error grows.
struct Relaxation {
    enabled: bool,
    omega: f64,
    history: Vec<f64>,
    best: f64,
}

const RELAX_WARMUP: usize = 30;
const RELAX_SPAN: usize = 10;

impl Relaxation {
    fn new(enabled: bool) -> Self {
        Self { enabled, omega: 1.0, history: Vec::new(), best: f64::INFINITY }
    }

    fn observe(&mut self, err: f64) {
        if !self.enabled {
            return;
        }
        self.best = self.best.min(err);
        if self.omega > 1.0 {
            if err > 10.0 * self.best {
                self.omega = 1.0;
                self.enabled = false;
            }
            return;
        }
        self.history.push(err);
        let k = self.history.len();
        if k >= RELAX_WARMUP {
            let r = (self.history[k - 1] / self.history[k - 1 - RELAX_SPAN]).powf(1.0 / RELAX_SPAN as f64);
            if r.is_finite() && r > 0.0 && r < 1.0 {
                self.omega = (2.0 / (1.0 + (1.0 - r).sqrt())).clamp(1.0, 1.95);
            } else {
                self.enabled = false;
            }
        }
    }
}

fn log_scalings(duals: &Duals, eps: f64) -> (Vec<f64>, Vec<f64>) {
    match duals {
        Duals::Scaling { u, v } => (u.iter().map(|x| safe_ln(*x)).collect(), v.iter().map(|x| safe_ln(*x)).collect()),
        Duals::Potentials { f, g } => (f.iter().map(|x| x / eps).collect(), g.iter().map(|x| x / eps).collect()),
    }
}

/// Entropic transport plan between weight vectors `a`, `b` for cost `cost`.
pub fn sinkhorn_plan(a: &[f64], b: &[f64], cost: &CostMatrix, params: &SinkhornParams) -> Result<SinkhornSolution> {
    check_probability(a, "a")?;
    check_probability(b, "b")?;
    if cost.rows() != a.len() || cost.cols() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "cost is {}x{} but marginals have lengths {} and {}",
            cost.rows(),
            cost.cols(),
            a.len(),
            b.len()
        )));
    }
    let mut op = DenseKernel::new(cost, 1.0);
    let scaled = solve(&mut op, a, b, params)?;
    let eps = op.epsilon();
    let (alpha, beta) = log_scalings(&scaled.duals, eps);
    let plan = match &scaled.duals {
        Duals::Scaling { u, v } => {
            let m = b.len();
            let k = op.gibbs();
            let mut p = Vec::with_capacity(a.len() * m);
            for (i, ui) in u.iter().enumerate() {
                for (j, vj) in v.iter().enumerate() {
                    p.push(ui * k[i * m + j] * vj);
                }
            }
            p
        }
        Duals::Potentials { .. } => op.log_plan(&alpha, &beta),
    };
    let reg_cost = plan.iter().zip(cost.entries()).map(|(p, c)| p * c).sum();
    let mut sol = SinkhornSolution {
        plan,
        rows: a.len(),
        cols: b.len(),
        duals: scaled.duals,
        epsilon: eps,
        reg_cost,
        iterations: scaled.iterations,
        marginal_err: 0.0,
        trace: scaled.trace,
    };
    sol.marginal_err = l1_gap(&sol.row_sums(), a).max(l1_gap(&sol.col_sums(), b));
    Ok(sol)
}

/// Entropic plan from `a` onto itself for a symmetric cost.
///
/// Iterates the averaged update `f <- (f + T(f)) / 2` on a single potential;
/// the alternating scheme converges very slowly on self-transport. The plan
/// is `P_ij = exp((f_i + f_j - C_ij) / eps)`.
pub fn sinkhorn_self_plan(a: &[f64], cost: &CostMatrix, params: &SinkhornParams) -> Result<SinkhornSolution> {
    check_probability(a, "a")?;
    params.validate()?;
    let n = a.len();
    if cost.rows() != n || cost.cols() != n {
        return Err(Error::DimensionMismatch(format!("cost is {}x{} for {n} atoms", cost.rows(), cost.cols())));
    }
    let eps = params.epsilon.resolve(cost.max());
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidParameter(format!("resolved epsilon {eps}")));
    }
    let log_a: Vec<f64> = a.iter().map(|&w| eps * safe_ln(w)).collect();
    // Row log-sums `lse_j (f_j - C_ij) / eps`.
    let row_lse = |f: &[f64], out: &mut [f64]| {
        for (i, o) in out.iter_mut().enumerate() {
            let row = cost.row(i);
            let m = f.iter().zip(row).map(|(fj, c)| (fj - c) / eps).fold(f64::NEG_INFINITY, f64::max);
            *o = if m == f64::NEG_INFINITY {
                m
            } else {
                m + f.iter().zip(row).map(|(fj, c)| ((fj - c) / eps - m).exp()).sum::<f64>().ln()
            };
        }
    };
    let mut f = vec![0.0; n];
    let mut lse = vec![0.0; n];
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut err = f64::INFINITY;
    while iterations < params.max_iter {
        row_lse(&f, &mut lse);
        for i in 0..n {
            let t = log_a[i] - eps * lse[i];
            f[i] = if t == f64::NEG_INFINITY { t } else { 0.5 * (f[i] + t) };
        }
        iterations += 1;
        row_lse(&f, &mut lse);
        err = (0..n).map(|i| (if f[i] == f64::NEG_INFINITY { 0.0 } else { (f[i] / eps + lse[i]).exp() } - a[i]).abs()).sum();
        if err.is_nan() {
            return Err(Error::Diverged { iteration: iterations });
        }
        if params.record_trace {
            trace.push(dual_objective(&f, &f, a, a, eps));
        }
        if err <= params.tol {
            break;
        }
    }
    let mut plan = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let e = (f[i] + f[j] - cost.get(i, j)) / eps;
            plan.push(if e == f64::NEG_INFINITY { 0.0 } else { e.exp() });
        }
    }
    let reg_cost = plan.iter().zip(cost.entries()).map(|(p, c)| p * c).sum();
    let mut sol = SinkhornSolution {
        plan,
        rows: n,
        cols: n,
        duals: Duals::Potentials { f: f.clone(), g: f },
        epsilon: eps,
        reg_cost,
        iterations,
        marginal_err: err,
        trace,
    };
    sol.marginal_err = l1_gap(&sol.row_sums(), a).max(l1_gap(&sol.col_sums(), a));
    Ok(sol)
}

/// Sinkhorn distance `<P_eps, C>` with ground cost `|x - y|^p`.
///
/// The pair is put in a canonical order first so the result is exactly
/// symmetric in its arguments.
pub fn sinkhorn_distance(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, params: &SinkhornParams) -> Result<f64> {
    let (mu, nu) = if canonical_lt(nu.weights(), nu.support().as_flat(), mu.weights(), mu.support().as_flat()) {
        (nu, mu)
    } else {
        (mu, nu)
    };
    let c = cost_matrix(mu, nu, p)?;
    Ok(sinkhorn_plan(mu.weights(), nu.weights(), &c, params)?.reg_cost)
}

fn lex_cmp(x: &[f64], y: &[f64]) -> std::cmp::Ordering {
    for (p, q) in x.iter().zip(y) {
        match p.total_cmp(q) {
            std::cmp::Ordering::Equal => {}
            o => return o,
        }
    }
    x.len().cmp(&y.len())
}

fn canonical_lt(wa: &[f64], xa: &[f64], wb: &[f64], xb: &[f64]) -> bool {
    lex_cmp(wa, wb).then_with(|| lex_cmp(xa, xb)) == std::cmp::Ordering::Less
}

/// Debiased divergence `W(mu,nu) - W(mu,mu)/2 - W(nu,nu)/2`.
pub fn sinkhorn_divergence(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64, params: &SinkhornParams) -> Result<f64> {
    let w_xy = sinkhorn_distance(mu, nu, p, params)?;
    let w_xx = sinkhorn_distance(mu, mu, p, params)?;
    let w_yy = sinkhorn_distance(nu, nu, p, params)?;
    Ok(w_xy - 0.5 * w_xx - 0.5 * w_yy)
}

/// Sinkhorn solver specialized to measures on one tensor grid with the
/// squared Euclidean cost.
///
/// Self-terms are cached per call site by the caller; see
/// [`GridSinkhorn::distance`].
#[derive(Debug, Clone)]
pub struct GridSinkhorn {
    geometry: GridGeometry,
    params: SinkhornParams,
}

/// Converged grid transport without a materialized plan.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTransport {
    pub reg_cost: f64,
    pub iterations: usize,
    pub marginal_err: f64,
    pub epsilon: f64,
}

impl GridSinkhorn {
    pub fn new(geometry: GridGeometry, params: SinkhornParams) -> Self {
        Self { geometry, params }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &SinkhornParams {
        &self.params
    }

    /// Transport between nodal weight vectors `a` and `b`.
    pub fn transport(&self, a: &[f64], b: &[f64]) -> Result<GridTransport> {
        let n = self.geometry.len();
        if a.len() != n || b.len() != n {
            return Err(Error::DimensionMismatch(format!("weights must have {n} entries")));
        }
        check_probability(a, "a")?;
        check_probability(b, "b")?;
        let mut op = GridKernel::new(&self.geometry, &self.geometry, 1.0);
        let scaled = solve(&mut op, a, b, &self.params)?;
        let eps = op.epsilon();
        let (alpha, beta) = log_scalings(&scaled.duals, eps);
        let reg_cost = op.log_transport_cost(&alpha, &beta);
        // Marginals from the separable operator.
        let mut lse_row = vec![0.0; n];
        let mut lse_col = vec![0.0; n];
        op.log_apply(&beta, &mut lse_row);
        op.log_apply_t(&alpha, &mut lse_col);
        let marg = |lg: &[f64], lse: &[f64], w: &[f64]| -> f64 {
            (0..n)
                .map(|i| {
                    let r = if lg[i] == f64::NEG_INFINITY { 0.0 } else { (lg[i] + lse[i]).exp() };
                    (r - w[i]).abs()
                })
                .sum()
        };
        let marginal_err = marg(&alpha, &lse_row, a).max(marg(&beta, &lse_col, b));
        Ok(GridTransport { reg_cost, iterations: scaled.iterations, marginal_err, epsilon: eps })
    }

    /// `<P_eps, C>` between two nodal weight vectors.
    pub fn distance(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let (a, b) = if lex_cmp(b, a) == std::cmp::Ordering::Less { (b, a) } else { (a, b) };
        Ok(self.transport(a, b)?.reg_cost)
    }

    /// Debiased divergence between two nodal weight vectors.
    pub fn divergence(&self, a: &[f64], b: &[f64]) -> Result<f64> {
        let xy = self.distance(a, b)?;
        Ok(xy - 0.5 * self.distance(a, a)? - 0.5 * self.distance(b, b)?)
    }

    /// Debiased divergence reusing precomputed self-terms `W(a,a)`, `W(b,b)`.
    pub fn divergence_with_self(&self, a: &[f64], b: &[f64], self_a: f64, self_b: f64) -> Result<f64> {
        Ok(self.distance(a, b)? - 0.5 * self_a - 0.5 * self_b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{point_cost_matrix, Points};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_by_two() -> CostMatrix {
        CostMatrix::from_entries(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    fn abs_eps(e: f64) -> SinkhornParams {
        SinkhornParams::default().with_epsilon(Epsilon::Absolute(e))
    }

    fn random_measure(rng: &mut ChaCha8Rng, n: usize) -> DiscreteMeasure {
        let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let ws: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.05).collect();
        DiscreteMeasure::from_masses(Points::line(&xs), &ws).unwrap()
    }

    #[test]
    fn single_atoms() {
        let c = CostMatrix::from_entries(1, 1, vec![0.0]).unwrap();
        let s = sinkhorn_plan(&[1.0], &[1.0], &c, &SinkhornParams::default()).unwrap();
        assert!((s.plan[0] - 1.0).abs() < 1e-15);
        assert_eq!(s.iterations, 1);
    }

    #[test]
    fn large_epsilon_gives_independent_coupling() {
        let s = sinkhorn_plan(&[0.5, 0.5], &[0.5, 0.5], &two_by_two(), &abs_eps(100.0)).unwrap();
        for p in &s.plan {
            assert!((p - 0.25).abs() < 1e-2);
        }
    }

    #[test]
    fn small_epsilon_approaches_exact_plan() {
        let c = two_by_two();
        let s = sinkhorn_plan(&[0.5, 0.5], &[0.5, 0.5], &c, &abs_eps(0.01)).unwrap();
        let expected = [0.5, 0.0, 0.0, 0.5];
        for (p, e) in s.plan.iter().zip(expected) {
            assert!((p - e).abs() < 1e-6, "{p} vs {e}");
        }
        let exact = exact_ot_bruteforce(&[0.5, 0.5], &[0.5, 0.5], &c).unwrap();
        assert!((s.reg_cost - exact).abs() < 1e-6);
    }

    #[test]
    fn kkt_form_holds() {
        let c = CostMatrix::from_entries(2, 3, vec![0.0, 0.3, 1.0, 0.7, 0.1, 0.4]).unwrap();
        let s = sinkhorn_plan(&[0.4, 0.6], &[0.2, 0.3, 0.5], &c, &abs_eps(0.5).with_domain(Domain::Direct)).unwrap();
        let Duals::Scaling { u, v } = &s.duals else { panic!("expected scalings") };
        for i in 0..2 {
            for j in 0..3 {
                let k = (-c.get(i, j) / 0.5).exp();
                assert!((s.plan_at(i, j) - u[i] * k * v[j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn dirac_distance() {
        let mu = DiscreteMeasure::dirac(&[0.0]);
        let nu = DiscreteMeasure::dirac(&[3.0]);
        let d = sinkhorn_distance(&mu, &nu, 2.0, &abs_eps(9e-3)).unwrap();
        assert!((d - 9.0).abs() < 0.09);
        assert_eq!(sinkhorn_distance(&mu, &mu, 2.0, &SinkhornParams::default()).unwrap(), 0.0);
        let s = sinkhorn_divergence(&mu, &nu, 2.0, &abs_eps(9e-3)).unwrap();
        assert!((s - 9.0).abs() < 0.18);
    }

    #[test]
    fn two_atom_uniform_distance_is_small() {
        let m = DiscreteMeasure::uniform(Points::line(&[0.0, 1.0])).unwrap();
        let d = sinkhorn_distance(&m, &m, 2.0, &abs_eps(0.01)).unwrap();
        assert!(d.abs() < 0.01);
    }

    #[test]
    fn divergence_of_self_is_zero_and_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 5);
            let nu = random_measure(&mut rng, 5);
            let p = SinkhornParams::default();
            assert!(sinkhorn_divergence(&mu, &mu, 2.0, &p).unwrap().abs() < 1e-9);
            let a = sinkhorn_divergence(&mu, &nu, 2.0, &p).unwrap();
            let b = sinkhorn_divergence(&nu, &mu, 2.0, &p).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn log_and_direct_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 6);
            let nu = random_measure(&mut rng, 4);
            let c = cost_matrix(&mu, &nu, 2.0).unwrap();
            let p = abs_eps(0.05);
            let d = sinkhorn_plan(mu.weights(), nu.weights(), &c, &p.clone().with_domain(Domain::Direct)).unwrap();
            let l = sinkhorn_plan(mu.weights(), nu.weights(), &c, &p.with_domain(Domain::Log)).unwrap();
            for (x, y) in d.plan.iter().zip(&l.plan) {
                assert!((x - y).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn direct_mode_reports_underflow() {
        let c = CostMatrix::from_entries(2, 2, vec![0.0, 1e4, 1e4, 0.0]).unwrap();
        let err = sinkhorn_plan(&[1.0, 0.0], &[0.0, 1.0], &c, &abs_eps(1.0).with_domain(Domain::Direct));
        assert!(matches!(err, Err(Error::StabilizationRequired { .. })));
        // The log domain handles the same instance.
        let ok = sinkhorn_plan(&[1.0, 0.0], &[0.0, 1.0], &c, &abs_eps(1.0).with_domain(Domain::Log)).unwrap();
        assert!((ok.reg_cost - 1e4).abs() < 1e-6);
    }

    #[test]
    fn invalid_params_rejected() {
        let c = two_by_two();
        let bad = abs_eps(0.0);
        assert!(sinkhorn_plan(&[0.5, 0.5], &[0.5, 0.5], &c, &bad).is_err());
        assert!(sinkhorn_plan(&[0.5, 0.5, 0.0], &[0.5, 0.5], &c, &SinkhornParams::default()).is_err());
        assert!(sinkhorn_plan(&[0.7, 0.5], &[0.5, 0.5], &c, &SinkhornParams::default()).is_err());
    }

    #[test]
    fn marginals_within_tolerance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 5);
            let nu = random_measure(&mut rng, 3);
            let c = cost_matrix(&mu, &nu, 2.0).unwrap();
            let s = sinkhorn_plan(mu.weights(), nu.weights(), &c, &SinkhornParams::default()).unwrap();
            assert!(s.marginal_err <= 1e-9, "{}", s.marginal_err);
            assert!(s.plan.iter().all(|p| *p >= 0.0));
        }
    }

    #[test]
    fn distance_dominates_exact_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 4);
            let nu = random_measure(&mut rng, 4);
            let exact = exact_ot_1d(&mu, &nu, 2.0).unwrap();
            let c = cost_matrix(&mu, &nu, 2.0).unwrap();
            let s = sinkhorn_plan(mu.weights(), nu.weights(), &c, &SinkhornParams::default()).unwrap();
            // A plan that is off its marginals by `marginal_err` can undercut
            // the optimum by at most that mass times the largest cost.
            let slack = s.marginal_err * c.max() + 1e-12;
            assert!(s.reg_cost >= exact - slack, "{} < {exact}", s.reg_cost);
        }
    }

    #[test]
    fn error_shrinks_with_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..10 {
            let mu = random_measure(&mut rng, 4);
            let nu = random_measure(&mut rng, 4);
            let exact = exact_ot_1d(&mu, &nu, 2.0).unwrap();
            let c = cost_matrix(&mu, &nu, 2.0).unwrap();
            let mean = c.mean();
            let gaps: Vec<f64> = [1.0, 0.1, 0.01]
                .iter()
                .map(|r| {
                    let s = sinkhorn_plan(mu.weights(), nu.weights(), &c, &abs_eps(r * mean)).unwrap();
                    (s.reg_cost - exact).abs()
                })
                .collect();
            assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
        }
    }

    #[test]
    fn dual_trace_is_non_decreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mu = random_measure(&mut rng, 5);
            let nu = random_measure(&mut rng, 5);
            let c = cost_matrix(&mu, &nu, 2.0).unwrap();
            let mut p = abs_eps(0.01);
            p.record_trace = true;
            p.eps_scaling = None;
            p.overrelax = false;
            let s = sinkhorn_plan(mu.weights(), nu.weights(), &c, &p).unwrap();
            for w in s.trace.windows(2) {
                assert!(w[1] >= w[0] - 1e-12, "{:?}", &s.trace[..s.trace.len().min(8)]);
            }
            let entropic = s.entropic_cost(mu.weights(), nu.weights());
            assert!((s.trace.last().unwrap() - entropic).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_solver_matches_dense() {
        let g = GridGeometry::unit(4, 3).unwrap();
        let pts = g.coords();
        let c = point_cost_matrix(&pts, &pts, 2.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = |rng: &mut ChaCha8Rng| {
            let raw: Vec<f64> = (0..12).map(|_| rng.random::<f64>()).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let a = w(&mut rng);
        let b = w(&mut rng);
        for params in [SinkhornParams::default(), abs_eps(0.3).with_domain(Domain::Direct)] {
            let dense = sinkhorn_plan(&a, &b, &c, &params).unwrap();
            let grid = GridSinkhorn::new(g.clone(), params).transport(&a, &b).unwrap();
            assert!((dense.reg_cost - grid.reg_cost).abs() < 1e-10, "{} vs {}", dense.reg_cost, grid.reg_cost);
            assert!(grid.marginal_err <= 1e-9);
        }
    }

    #[test]
    fn self_plan_matches_the_alternating_solver() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let pts: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let xs = Points::line(&pts);
        let c = point_cost_matrix(&xs, &xs, 2.0).unwrap();
        let a = vec![1.0 / 6.0; 6];
        let params = SinkhornParams { epsilon: Epsilon::RelativeToMax(0.1), tol: 1e-13, ..Default::default() };
        let s = sinkhorn_self_plan(&a, &c, &params).unwrap();
        let r = sinkhorn_plan(&a, &a, &c, &params).unwrap();
        assert!(s.marginal_err <= 1e-12);
        for (p, q) in s.plan.iter().zip(&r.plan) {
            assert!((p - q).abs() < 1e-9);
        }
        for i in 0..6 {
            for j in 0..6 {
                assert_eq!(s.plan_at(i, j), s.plan_at(j, i));
            }
        }
        assert!((s.entropic_cost(&a, &a) - r.entropic_cost(&a, &a)).abs() < 1e-9);
    }
}