//! Small dense and banded linear-algebra helpers.

use crate::error::{Error, Result};

/// Square banded matrix with `lower` sub- and `upper` super-diagonals,
/// stored row by row.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    band: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        Self { n, lower, upper, band: vec![0.0; n * (lower + upper + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.lower >= i && j <= i + self.upper);
        i * (self.lower + self.upper + 1) + (j + self.lower - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.lower < i || j > i + self.upper {
            0.0
        } else {
            self.band[self.idx(i, j)]
        }
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.band[k] += v;
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.lower);
                let hi = (i + self.upper).min(self.n - 1);
                (lo..=hi).map(|j| self.band[self.idx(i, j)] * x[j]).sum()
            })
            .collect()
    }

    /// In-place LU factorization without pivoting. Suitable for the
    /// diagonally dominant M-matrices produced by the stencils here.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        for k in 0..n {
            let pivot = self.band[self.idx(k, k)];
            if pivot.abs() < 1e-300 || !pivot.is_finite() {
                return Err(Error::LinearSolve(format!("zero pivot at row {k}")));
            }
            let last = (k + self.lower).min(n - 1);
            let right = (k + self.upper).min(n - 1);
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let factor = self.band[ik] / pivot;
                self.band[ik] = factor;
                if factor == 0.0 {
                    continue;
                }
                for j in k + 1..=right {
                    let kj = self.band[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.band[ij] -= factor * kj;
                }
            }
        }
        Ok(BandLu { m: self })
    }
}

/// Factored band matrix.
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let m = &self.m;
        let n = m.n;
        if rhs.len() != n {
            return Err(Error::DimensionMismatch(format!("rhs has {} entries, expected {n}", rhs.len())));
        }
        let mut x = rhs.to_vec();
        for i in 0..n {
            let lo = i.saturating_sub(m.lower);
            let s: f64 = (lo..i).map(|j| m.band[m.idx(i, j)] * x[j]).sum();
            x[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + m.upper).min(n - 1);
            let s: f64 = (i + 1..=hi).map(|j| m.band[m.idx(i, j)] * x[j]).sum();
            x[i] = (x[i] - s) / m.band[m.idx(i, i)];
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::LinearSolve("non-finite solution".into()));
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tridiagonal_solve() {
        let n = 6;
        let mut a = BandMatrix::zeros(n, 1, 1);
        for i in 0..n {
            a.add(i, i, 2.0);
            if i > 0 {
                a.add(i, i - 1, -1.0);
            }
            if i + 1 < n {
                a.add(i, i + 1, -1.0);
            }
        }
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let b = a.mul_vec(&x_true);
        let x = a.factor().unwrap().solve(&b).unwrap();
        for (p, q) in x.iter().zip(&x_true) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let a = BandMatrix::zeros(3, 1, 1);
        assert!(a.factor().is_err());
    }
}
