//! Gibbs-kernel operators `K_ij = exp(-C_ij / eps)` in direct and log form.
//!
//! Two backends share one interface: a dense operator over an explicit
//! cost matrix, and a separable operator for the squared Euclidean cost on
//! tensor grids, where `K = Kx ⊗ Ky` and one application costs
//! `O(nx·ny·(nx+ny))` instead of `O((nx·ny)^2)`.

use crate::measures::{CostMatrix, GridGeometry};

/// Values below this are treated as underflowed in shifted sums.
/// Shifted sums above this are accurate: every term dropped by underflow
/// is below `1e-300`.
const TRUSTED: f64 = 1e-200;

pub(crate) trait KernelOp {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn epsilon(&self) -> f64;
    fn set_epsilon(&mut self, eps: f64);
    fn max_cost(&self) -> f64;

    /// `out_i = log sum_j exp(h_j) K_ij`.
    fn log_apply(&self, h: &[f64], out: &mut [f64]);
    /// `out_j = log sum_i exp(h_i) K_ij`.
    fn log_apply_t(&self, h: &[f64], out: &mut [f64]);
    /// `out_i = sum_j K_ij v_j`.
    fn apply(&self, v: &[f64], out: &mut [f64]);
    /// `out_j = sum_i K_ij u_i`.
    fn apply_t(&self, u: &[f64], out: &mut [f64]);
    /// `<P, C>` for `P_ij = exp(alpha_i + beta_j) K_ij`.
    fn log_transport_cost(&self, alpha: &[f64], beta: &[f64]) -> f64;
    /// Dense plan `exp(alpha_i + beta_j) K_ij`, row-major.
    fn log_plan(&self, alpha: &[f64], beta: &[f64]) -> Vec<f64>;
}

/// Log-sum-exp of `h_j + l_j` over `j`, ignoring `-inf` terms.
#[inline]
fn lse2(h: &[f64], l: impl Fn(usize) -> f64) -> f64 {
    let mut m = f64::NEG_INFINITY;
    for (j, hj) in h.iter().enumerate() {
        let v = hj + l(j);
        if v > m {
            m = v;
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for (j, hj) in h.iter().enumerate() {
        let v = hj + l(j);
        if v > f64::NEG_INFINITY {
            s += (v - m).exp();
        }
    }
    m + s.ln()
}

pub(crate) struct DenseKernel<'a> {
    cost: &'a CostMatrix,
    eps: f64,
    gibbs: Vec<f64>,
}

impl<'a> DenseKernel<'a> {
    pub fn new(cost: &'a CostMatrix, eps: f64) -> Self {
        let mut k = Self { cost, eps, gibbs: Vec::new() };
        k.set_epsilon(eps);
        k
    }

    pub fn gibbs(&self) -> &[f64] {
        &self.gibbs
    }
}

impl KernelOp for DenseKernel<'_> {
    fn rows(&self) -> usize {
        self.cost.rows()
    }

    fn cols(&self) -> usize {
        self.cost.cols()
    }

    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn set_epsilon(&mut self, eps: f64) {
        self.eps = eps;
        self.gibbs = self.cost.entries().iter().map(|c| (-c / eps).exp()).collect();
    }

    fn max_cost(&self) -> f64 {
        self.cost.max()
    }

    fn log_apply(&self, h: &[f64], out: &mut [f64]) {
        let eps = self.eps;
        for (i, o) in out.iter_mut().enumerate() {
            let row = self.cost.row(i);
            *o = lse2(h, |j| -row[j] / eps);
        }
    }

    fn log_apply_t(&self, h: &[f64], out: &mut [f64]) {
        let eps = self.eps;
        let c = self.cost;
        for (j, o) in out.iter_mut().enumerate() {
            *o = lse2(h, |i| -c.get(i, j) / eps);
        }
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        let m = self.cols();
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.gibbs[i * m..(i + 1) * m];
            *o = row.iter().zip(v).map(|(k, v)| k * v).sum();
        }
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        let m = self.cols();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, ui) in u.iter().enumerate() {
            let row = &self.gibbs[i * m..(i + 1) * m];
            for (o, k) in out.iter_mut().zip(row) {
                *o += k * ui;
            }
        }
    }

    fn log_transport_cost(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        let plan = self.log_plan(alpha, beta);
        plan.iter().zip(self.cost.entries()).map(|(p, c)| p * c).sum()
    }

    fn log_plan(&self, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
        let (n, m) = (self.rows(), self.cols());
        let mut plan = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                let e = alpha[i] + beta[j] - self.cost.get(i, j) / self.eps;
                plan.push(if e == f64::NEG_INFINITY { 0.0 } else { e.exp() });
            }
        }
        plan
    }
}

/// One axis factor of a separable kernel: `n_out x n_in` matrix, its entrywise
/// log, and the transposed copies.
struct Axis {
    n_out: usize,
    n_in: usize,
    mat: Vec<f64>,
    log: Vec<f64>,
    mat_t: Vec<f64>,
    log_t: Vec<f64>,
}

impl Axis {
    fn build(out: &[f64], inp: &[f64], f: impl Fn(f64) -> (f64, f64)) -> Self {
        let (n_out, n_in) = (out.len(), inp.len());
        let mut mat = vec![0.0; n_out * n_in];
        let mut log = vec![0.0; n_out * n_in];
        let mut mat_t = vec![0.0; n_out * n_in];
        let mut log_t = vec![0.0; n_out * n_in];
        for (a, xa) in out.iter().enumerate() {
            for (b, xb) in inp.iter().enumerate() {
                let d = xa - xb;
                let (m, l) = f(d * d);
                mat[a * n_in + b] = m;
                log[a * n_in + b] = l;
                mat_t[b * n_out + a] = m;
                log_t[b * n_out + a] = l;
            }
        }
        Self { n_out, n_in, mat, log, mat_t, log_t }
    }

    fn view(&self, transposed: bool) -> AxisView<'_> {
        if transposed {
            AxisView { n_out: self.n_in, n_in: self.n_out, mat: &self.mat_t, log: &self.log_t }
        } else {
            AxisView { n_out: self.n_out, n_in: self.n_in, mat: &self.mat, log: &self.log }
        }
    }
}

#[derive(Clone, Copy)]
struct AxisView<'a> {
    n_out: usize,
    n_in: usize,
    mat: &'a [f64],
    log: &'a [f64],
}

/// Exact `log sum_{j1,j2} exp(h[j2][j1]) X[i1][j1] Y[i2][j2]`.
fn exact_entry(x: AxisView<'_>, y: AxisView<'_>, h: &[f64], i1: usize, i2: usize) -> f64 {
    let (nxi, nyi) = (x.n_in, y.n_in);
    let lx = &x.log[i1 * nxi..(i1 + 1) * nxi];
    let ly = &y.log[i2 * nyi..(i2 + 1) * nyi];
    let mut m = f64::NEG_INFINITY;
    for j2 in 0..nyi {
        for j1 in 0..nxi {
            m = m.max(h[j2 * nxi + j1] + lx[j1] + ly[j2]);
        }
    }
    if m == f64::NEG_INFINITY {
        return m;
    }
    let mut s = 0.0;
    for j2 in 0..nyi {
        for j1 in 0..nxi {
            let v = h[j2 * nxi + j1] + lx[j1] + ly[j2];
            if v > f64::NEG_INFINITY {
                s += (v - m).exp();
            }
        }
    }
    m + s.ln()
}

/// Squared-Euclidean Gibbs kernel between two tensor grids.
pub(crate) struct GridKernel {
    src_x: Vec<f64>,
    src_y: Vec<f64>,
    dst_x: Vec<f64>,
    dst_y: Vec<f64>,
    eps: f64,
    kx: Axis,
    ky: Axis,
    ckx: Axis,
    cky: Axis,
}

impl GridKernel {
    pub fn new(source: &GridGeometry, target: &GridGeometry, eps: f64) -> Self {
        let mut k = Self {
            src_x: source.xs().to_vec(),
            src_y: source.ys().to_vec(),
            dst_x: target.xs().to_vec(),
            dst_y: target.ys().to_vec(),
            eps,
            kx: Axis::build(&[], &[], |_| (0.0, 0.0)),
            ky: Axis::build(&[], &[], |_| (0.0, 0.0)),
            ckx: Axis::build(&[], &[], |_| (0.0, 0.0)),
            cky: Axis::build(&[], &[], |_| (0.0, 0.0)),
        };
        k.set_epsilon(eps);
        k
    }

    /// `out[i] = log sum_j exp(h_j) X[i1,j1] Y[i2,j2]` on row-major grids.
    ///
    /// Both contractions run as matrix products on exponentials shifted by
    /// one maximum per input line (x pass) and one global maximum (y pass).
    /// Outputs whose shifted sum is too small to trust are recomputed by an
    /// exact log-sum-exp over the full input.
    fn separable_log(&self, x: AxisView<'_>, y: AxisView<'_>, h: &[f64], out: &mut [f64]) {
        let (nxi, nyi, nxo, nyo) = (x.n_in, y.n_in, x.n_out, y.n_out);
        debug_assert_eq!(h.len(), nxi * nyi);
        debug_assert_eq!(out.len(), nxo * nyo);
        let mut shift = vec![f64::NEG_INFINITY; nyi];
        let mut w = vec![0.0; nyi * nxi];
        for j2 in 0..nyi {
            let line = &h[j2 * nxi..(j2 + 1) * nxi];
            let m = line.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            shift[j2] = m;
            if m > f64::NEG_INFINITY {
                for (wb, hb) in w[j2 * nxi..(j2 + 1) * nxi].iter_mut().zip(line) {
                    *wb = (hb - m).exp();
                }
            }
        }
        let big = shift.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if big == f64::NEG_INFINITY {
            out.iter_mut().for_each(|o| *o = f64::NEG_INFINITY);
            return;
        }
        // t[j2][i1] = sum_j1 w[j2][j1] X[i1][j1]
        let mut t = vec![0.0; nyi * nxo];
        unsafe {
            matrixmultiply::dgemm(
                nyi, nxi, nxo, 1.0,
                w.as_ptr(), nxi as isize, 1,
                x.mat.as_ptr(), 1, nxi as isize,
                0.0, t.as_mut_ptr(), nxo as isize, 1,
            );
        }
        for j2 in 0..nyi {
            let d = (shift[j2] - big).exp();
            t[j2 * nxo..(j2 + 1) * nxo].iter_mut().for_each(|v| *v *= d);
        }
        // out[i2][i1] = sum_j2 Y[i2][j2] t[j2][i1]
        unsafe {
            matrixmultiply::dgemm(
                nyo, nyi, nxo, 1.0,
                y.mat.as_ptr(), nyi as isize, 1,
                t.as_ptr(), nxo as isize, 1,
                0.0, out.as_mut_ptr(), nxo as isize, 1,
            );
        }
        for i2 in 0..nyo {
            for i1 in 0..nxo {
                let o = &mut out[i2 * nxo + i1];
                *o = if *o > TRUSTED {
                    big + o.ln()
                } else {
                    exact_entry(x, y, h, i1, i2)
                };
            }
        }
    }

    fn separable(&self, x: AxisView<'_>, y: AxisView<'_>, v: &[f64], out: &mut [f64]) {
        let (nxi, nyi, nxo, nyo) = (x.n_in, y.n_in, x.n_out, y.n_out);
        let mut t = vec![0.0; nyi * nxo];
        for j2 in 0..nyi {
            let line = &v[j2 * nxi..(j2 + 1) * nxi];
            for i1 in 0..nxo {
                let row = &x.mat[i1 * nxi..(i1 + 1) * nxi];
                t[j2 * nxo + i1] = row.iter().zip(line).map(|(k, v)| k * v).sum();
            }
        }
        for i2 in 0..nyo {
            let row = &y.mat[i2 * nyi..(i2 + 1) * nyi];
            for i1 in 0..nxo {
                out[i2 * nxo + i1] = (0..nyi).map(|j2| row[j2] * t[j2 * nxo + i1]).sum();
            }
        }
    }
}

fn gibbs_pair(eps: f64) -> impl Fn(f64) -> (f64, f64) {
    move |c| (((-c) / eps).exp(), -c / eps)
}

fn cost_gibbs_pair(eps: f64) -> impl Fn(f64) -> (f64, f64) {
    move |c| (c * (-c / eps).exp(), if c > 0.0 { c.ln() - c / eps } else { f64::NEG_INFINITY })
}

impl KernelOp for GridKernel {
    fn rows(&self) -> usize {
        self.src_x.len() * self.src_y.len()
    }

    fn cols(&self) -> usize {
        self.dst_x.len() * self.dst_y.len()
    }

    fn epsilon(&self) -> f64 {
        self.eps
    }

    fn set_epsilon(&mut self, eps: f64) {
        // Rows index the source grid, columns the target grid.
        self.eps = eps;
        self.kx = Axis::build(&self.src_x, &self.dst_x, gibbs_pair(eps));
        self.ky = Axis::build(&self.src_y, &self.dst_y, gibbs_pair(eps));
        self.ckx = Axis::build(&self.src_x, &self.dst_x, cost_gibbs_pair(eps));
        self.cky = Axis::build(&self.src_y, &self.dst_y, cost_gibbs_pair(eps));
    }

    fn max_cost(&self) -> f64 {
        let span = |a: &[f64], b: &[f64]| {
            let mut m: f64 = 0.0;
            for x in a {
                for y in b {
                    m = m.max((x - y) * (x - y));
                }
            }
            m
        };
        span(&self.dst_x, &self.src_x) + span(&self.dst_y, &self.src_y)
    }

    fn log_apply(&self, h: &[f64], out: &mut [f64]) {
        self.separable_log(self.kx.view(false), self.ky.view(false), h, out);
    }

    fn log_apply_t(&self, h: &[f64], out: &mut [f64]) {
        self.separable_log(self.kx.view(true), self.ky.view(true), h, out);
    }

    fn apply(&self, v: &[f64], out: &mut [f64]) {
        self.separable(self.kx.view(false), self.ky.view(false), v, out);
    }

    fn apply_t(&self, u: &[f64], out: &mut [f64]) {
        self.separable(self.kx.view(true), self.ky.view(true), u, out);
    }

    fn log_transport_cost(&self, alpha: &[f64], beta: &[f64]) -> f64 {
        let n = self.rows();
        let mut t1 = vec![0.0; n];
        let mut t2 = vec![0.0; n];
        self.separable_log(self.ckx.view(false), self.ky.view(false), beta, &mut t1);
        self.separable_log(self.kx.view(false), self.cky.view(false), beta, &mut t2);
        let term = |a: f64, t: f64| {
            let e = a + t;
            if e == f64::NEG_INFINITY {
                0.0
            } else {
                e.exp()
            }
        };
        (0..n).map(|i| term(alpha[i], t1[i]) + term(alpha[i], t2[i])).sum()
    }

    fn log_plan(&self, alpha: &[f64], beta: &[f64]) -> Vec<f64> {
        let (n, m) = (self.rows(), self.cols());
        let (nxo, nxi) = (self.src_x.len(), self.dst_x.len());
        let mut plan = Vec::with_capacity(n * m);
        for i in 0..n {
            let (i1, i2) = (i % nxo, i / nxo);
            for j in 0..m {
                let (j1, j2) = (j % nxi, j / nxi);
                let e = alpha[i]
                    + beta[j]
                    + self.kx.log[i1 * nxi + j1]
                    + self.ky.log[i2 * self.dst_y.len() + j2];
                plan.push(if e == f64::NEG_INFINITY { 0.0 } else { e.exp() });
            }
        }
        plan
    }
}
