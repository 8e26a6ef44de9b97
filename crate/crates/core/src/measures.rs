//! Discretized fields as probability measures on structured grids, and the
//! ground-cost matrices between them.

use crate::error::{Error, Result};

/// Node layout of a structured grid on the unit interval or unit square.
///
/// Nodes are stored row-major: node `iy * nx + ix` sits at
/// `(xs[ix], ys[iy])`. A grid with `ny == 1` is one-dimensional and its
/// points carry a single coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridGeometry {
    nx: usize,
    ny: usize,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl GridGeometry {
    /// Equispaced grid over `[0,1]` (1D when `ny == 1`) or `[0,1]^2`.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::InvalidParameter("grid needs at least one node per axis".into()));
        }
        Ok(Self {
            nx,
            ny,
            xs: linspace01(nx),
            ys: if ny == 1 { vec![0.0] } else { linspace01(ny) },
        })
    }

    /// Grid from explicit per-axis coordinates, all of which must lie in `[0,1]`.
    pub fn from_axes(xs: Vec<f64>, ys: Vec<f64>) -> Result<Self> {
        if xs.is_empty() || ys.is_empty() {
            return Err(Error::InvalidParameter("empty axis".into()));
        }
        if xs.iter().chain(&ys).any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidParameter("coordinates must lie in [0,1]".into()));
        }
        Ok(Self { nx: xs.len(), ny: ys.len(), xs, ys })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Spatial dimension of the node coordinates (1 or 2).
    pub fn dim(&self) -> usize {
        if self.ny == 1 {
            1
        } else {
            2
        }
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    /// Coordinates of node `k` (length [`dim`](Self::dim)).
    pub fn point(&self, k: usize) -> Vec<f64> {
        let (ix, iy) = (k % self.nx, k / self.nx);
        if self.dim() == 1 {
            vec![self.xs[ix]]
        } else {
            vec![self.xs[ix], self.ys[iy]]
        }
    }

    /// All node coordinates, flattened row-major with stride `dim`.
    pub fn coords(&self) -> Points {
        let dim = self.dim();
        let mut data = Vec::with_capacity(self.len() * dim);
        for k in 0..self.len() {
            data.extend(self.point(k));
        }
        Points { dim, data }
    }

    /// Uniform cell area (or length) used to scale discrete L2 norms.
    pub fn cell_measure(&self) -> f64 {
        let hx = if self.nx > 1 { 1.0 / (self.nx - 1) as f64 } else { 1.0 };
        let hy = if self.ny > 1 { 1.0 / (self.ny - 1) as f64 } else { 1.0 };
        hx * hy
    }
}

fn linspace01(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| i as f64 / (n - 1) as f64).collect()
}

/// A flat list of `d`-dimensional points.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || data.len() % dim != 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} coordinates do not split into points of dimension {dim}",
                data.len()
            )));
        }
        Ok(Self { dim, data })
    }

    /// One-dimensional points.
    pub fn line(xs: &[f64]) -> Self {
        Self { dim: 1, data: xs.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }
}

/// Nodal values of a solution on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    values: Vec<f64>,
    geometry: GridGeometry,
}

impl Field {
    pub fn new(values: Vec<f64>, geometry: GridGeometry) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::InvalidField(format!(
                "{} values on a grid of {} nodes",
                values.len(),
                geometry.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidField("non-finite value".into()));
        }
        Ok(Self { values, geometry })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Weighted point cloud with unit total mass.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteMeasure {
    support: Points,
    weights: Vec<f64>,
    /// Amount added to every nodal value before mass normalization.
    shift: f64,
}

impl DiscreteMeasure {
    /// Builds a measure; weights must be nonnegative and sum to one within 1e-12.
    pub fn new(support: Points, weights: Vec<f64>) -> Result<Self> {
        if support.len() != weights.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} support points but {} weights",
                support.len(),
                weights.len()
            )));
        }
        if weights.is_empty() {
            return Err(Error::InvalidMeasure("empty support".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidMeasure("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!("weights sum to {total}, not 1")));
        }
        Ok(Self { support, weights, shift: 0.0 })
    }

    /// Normalizes arbitrary nonnegative masses to a probability measure.
    pub fn from_masses(support: Points, masses: &[f64]) -> Result<Self> {
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidMeasure("total mass must be positive".into()));
        }
        Self::new(support, masses.iter().map(|m| m / total).collect())
    }

    /// Uniform weights on the given points.
    pub fn uniform(support: Points) -> Result<Self> {
        let n = support.len();
        Self::new(support, vec![1.0 / n as f64; n])
    }

    /// Single unit atom.
    pub fn dirac(point: &[f64]) -> Self {
        Self {
            support: Points { dim: point.len(), data: point.to_vec() },
            weights: vec![1.0],
            shift: 0.0,
        }
    }

    pub fn support(&self) -> &Points {
        &self.support
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.support.dim()
    }

    /// Value shift applied by [`normalize_field`] (0 for nonnegative fields).
    pub fn shift(&self) -> f64 {
        self.shift
    }
}

/// Mass-normalizes a field into a probability measure on its grid nodes.
///
/// Signed fields are first shifted by their minimum so all masses are
/// nonnegative; a field with zero total mass after the shift maps to the
/// uniform measure.
pub fn normalize_field(field: &Field) -> Result<DiscreteMeasure> {
    let values = field.values();
    if values.is_empty() {
        return Err(Error::InvalidField("field has no nodes".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidField("non-finite value".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shift = if min < 0.0 { -min } else { 0.0 };
    let shifted: Vec<f64> = values.iter().map(|v| v + shift).collect();
    let total: f64 = shifted.iter().sum();
    let support = field.geometry().coords();
    let n = shifted.len();
    let weights = if total > 0.0 {
        let mut w: Vec<f64> = shifted.iter().map(|v| v / total).collect();
        // Absorb the rounding residue so the unit-mass invariant holds tightly.
        let residue = 1.0 - w.iter().sum::<f64>();
        if let Some(k) = argmax(&w) {
            w[k] += residue;
        }
        w
    } else {
        vec![1.0 / n as f64; n]
    };
    let mut m = DiscreteMeasure::new(support, weights)?;
    m.shift = shift;
    Ok(m)
}

fn argmax(xs: &[f64]) -> Option<usize> {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
}

/// Dense `n x m` matrix of ground costs `|x_i - y_j|^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
    order: f64,
}

impl CostMatrix {
    /// Wraps explicit entries (row-major); all must be finite and nonnegative.
    pub fn from_entries(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "{} entries for a {rows}x{cols} cost matrix",
                entries.len()
            )));
        }
        if entries.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::InvalidParameter("cost entries must be finite and nonnegative".into()));
        }
        Ok(Self { rows, cols, entries, order: f64::NAN })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.cols..(i + 1) * self.cols]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Exponent of the ground metric (NaN for hand-built matrices).
    pub fn order(&self) -> f64 {
        self.order
    }

    pub fn max(&self) -> f64 {
        self.entries.iter().copied().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.entries.iter().sum::<f64>() / self.entries.len() as f64
    }
}

/// Ground-cost matrix `C_ij = |x_i - y_j|^p` with Euclidean distance.
pub fn cost_matrix(source: &DiscreteMeasure, target: &DiscreteMeasure, p: f64) -> Result<CostMatrix> {
    point_cost_matrix(source.support(), target.support(), p)
}

/// [`cost_matrix`] on raw point sets.
pub fn point_cost_matrix(xs: &Points, ys: &Points, p: f64) -> Result<CostMatrix> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("cost exponent must be >= 1, got {p}")));
    }
    if xs.dim() != ys.dim() {
        return Err(Error::DimensionMismatch(format!(
            "support dimensions {} and {} differ",
            xs.dim(),
            ys.dim()
        )));
    }
    let (n, m) = (xs.len(), ys.len());
    let mut entries = Vec::with_capacity(n * m);
    for i in 0..n {
        let x = xs.get(i);
        for j in 0..m {
            let sq: f64 = x.iter().zip(ys.get(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            entries.push(if p == 2.0 { sq } else { sq.sqrt().powf(p) });
        }
    }
    Ok(CostMatrix { rows: n, cols: m, entries, order: p })
}

/// `sum_i |x_i|^2 w_i`.
pub fn second_moment(m: &DiscreteMeasure) -> f64 {
    (0..m.len())
        .map(|i| {
            let x = m.support().get(i);
            x.iter().map(|c| c * c).sum::<f64>() * m.weights()[i]
        })
        .sum()
}
