//! Exact optimal-transport oracles for small or one-dimensional instances.

use crate::error::{Error, Result};
use crate::measures::{CostMatrix, DiscreteMeasure};

/// Exact `W_p^p` between 1D measures by monotone rearrangement.
pub fn exact_ot_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure, p: f64) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::DimensionMismatch("exact_ot_1d needs 1D supports".into()));
    }
    let sorted = |m: &DiscreteMeasure| {
        let mut atoms: Vec<(f64, f64)> = (0..m.len()).map(|i| (m.support().get(i)[0], m.weights()[i])).collect();
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        atoms
    };
    let xs = sorted(mu);
    let ys = sorted(nu);
    let (mut i, mut j) = (0, 0);
    let (mut ra, mut rb) = (xs[0].1, ys[0].1);
    let mut cost = 0.0;
    while i < xs.len() && j < ys.len() {
        let flow = ra.min(rb);
        cost += flow * (xs[i].0 - ys[j].0).abs().powf(p);
        ra -= flow;
        rb -= flow;
        if ra <= rb {
            i += 1;
            if i < xs.len() {
                ra = xs[i].1;
            }
        } else {
            j += 1;
            if j < ys.len() {
                rb = ys[j].1;
            }
        }
    }
    Ok(cost)
}

const MAX_ATOMS: usize = 6;

/// Exact minimum of `<P, C>` over the transport polytope of `a` and `b`.
///
/// Uniform equal-size marginals are solved by enumerating permutations;
/// everything else by enumerating the polytope's vertices, i.e. the
/// spanning trees of the bipartite support graph with nonnegative flows.
pub fn exact_ot_bruteforce(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<f64> {
    let (n, m) = (a.len(), b.len());
    if n == 0 || m == 0 {
        return Err(Error::InvalidMeasure("empty marginal".into()));
    }
    if n > MAX_ATOMS || m > MAX_ATOMS {
        return Err(Error::SizeLimit(format!("{n}x{m} exceeds {MAX_ATOMS}x{MAX_ATOMS}")));
    }
    if cost.rows() != n || cost.cols() != m {
        return Err(Error::DimensionMismatch("cost matrix does not match marginals".into()));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if (sa - sb).abs() > 1e-9 || a.iter().chain(b).any(|w| *w < 0.0) {
        return Err(Error::InvalidMeasure("marginals must be nonnegative with equal mass".into()));
    }
    let uniform = |w: &[f64]| w.iter().all(|x| (x - w[0]).abs() < 1e-15);
    if n == m && uniform(a) && uniform(b) {
        return Ok(best_permutation(cost) * a[0]);
    }
    let mut search = TreeSearch {
        n,
        m,
        a,
        b,
        cost,
        chosen: Vec::with_capacity(n + m - 1),
        best: f64::INFINITY,
    };
    let parent: Vec<usize> = (0..n + m).collect();
    search.recurse(0, parent);
    Ok(search.best)
}

fn best_permutation(cost: &CostMatrix) -> f64 {
    fn go(cost: &CostMatrix, row: usize, used: &mut [bool], acc: f64, best: &mut f64) {
        let n = used.len();
        if row == n {
            *best = best.min(acc);
            return;
        }
        for j in 0..n {
            if !used[j] {
                used[j] = true;
                go(cost, row + 1, used, acc + cost.get(row, j), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(cost, 0, &mut vec![false; cost.rows()], 0.0, &mut best);
    best
}

struct TreeSearch<'a> {
    n: usize,
    m: usize,
    a: &'a [f64],
    b: &'a [f64],
    cost: &'a CostMatrix,
    chosen: Vec<(usize, usize)>,
    best: f64,
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

impl TreeSearch<'_> {
    fn recurse(&mut self, start: usize, parent: Vec<usize>) {
        let need = self.n + self.m - 1;
        if self.chosen.len() == need {
            if let Some(c) = self.tree_cost() {
                self.best = self.best.min(c);
            }
            return;
        }
        let cells = self.n * self.m;
        let remaining = need - self.chosen.len();
        for cell in start..cells {
            if cells - cell < remaining {
                break;
            }
            let (i, j) = (cell / self.m, cell % self.m);
            let mut p = parent.clone();
            let (ri, rj) = (find(&mut p, i), find(&mut p, self.n + j));
            if ri == rj {
                continue;
            }
            p[ri] = rj;
            self.chosen.push((i, j));
            self.recurse(cell + 1, p);
            self.chosen.pop();
        }
    }

    /// Flows on a spanning tree by leaf peeling; `None` if any flow is negative.
    fn tree_cost(&self) -> Option<f64> {
        let nodes = self.n + self.m;
        let mut rest: Vec<f64> = self.a.iter().chain(self.b).copied().collect();
        let mut degree = vec![0usize; nodes];
        for &(i, j) in &self.chosen {
            degree[i] += 1;
            degree[self.n + j] += 1;
        }
        let mut alive = vec![true; self.chosen.len()];
        let mut total = 0.0;
        for _ in 0..self.chosen.len() {
            let (e, leaf) = self.chosen.iter().enumerate().find_map(|(e, &(i, j))| {
                if !alive[e] {
                    return None;
                }
                if degree[i] == 1 {
                    Some((e, i))
                } else if degree[self.n + j] == 1 {
                    Some((e, self.n + j))
                } else {
                    None
                }
            })?;
            let (i, j) = self.chosen[e];
            let other = if leaf == i { self.n + j } else { i };
            let flow = rest[leaf];
            if flow < -1e-14 {
                return None;
            }
            rest[leaf] = 0.0;
            rest[other] -= flow;
            degree[i] -= 1;
            degree[self.n + j] -= 1;
            alive[e] = false;
            total += flow.max(0.0) * self.cost.get(i, j);
        }
        Some(total)
    }
}
