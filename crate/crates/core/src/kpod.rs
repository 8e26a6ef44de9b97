//! Kernel POD with optimal-transport kernels, plus the classical POD
//! baseline.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::measures::{normalize_field, Field, GridGeometry};
use crate::parallel::Exec;
use crate::sinkhorn::{Epsilon, GridSinkhorn, SinkhornParams};

/// Snapshots stored column-wise, `N_h × N_s`, column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Vec<f64>,
    n_h: usize,
    params: Vec<Vec<f64>>,
    geometry: GridGeometry,
}

impl SnapshotMatrix {
    pub fn new(data: Vec<f64>, n_h: usize, params: Vec<Vec<f64>>, geometry: GridGeometry) -> Result<Self> {
        if n_h != geometry.len() {
            return Err(Error::DimensionMismatch(format!("{n_h} rows on a {}-node grid", geometry.len())));
        }
        if data.len() != n_h * params.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} columns of height {n_h}",
                data.len(),
                params.len()
            )));
        }
        if let Some(k) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::InvalidField(format!("non-finite entry at column {}", k / n_h.max(1))));
        }
        Ok(Self { data, n_h, params, geometry })
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_s(&self) -> usize {
        self.params.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn params(&self) -> &[Vec<f64>] {
        &self.params
    }

    pub fn param_dim(&self) -> usize {
        self.params.first().map_or(0, Vec::len)
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_h..(j + 1) * self.n_h]
    }

    pub fn field(&self, j: usize) -> Field {
        Field::new(self.column(j).to_vec(), self.geometry.clone()).expect("validated on construction")
    }

    /// Columns at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> SnapshotMatrix {
        let mut data = Vec::with_capacity(indices.len() * self.n_h);
        for &j in indices {
            data.extend_from_slice(self.column(j));
        }
        let params = indices.iter().map(|&j| self.params[j].clone()).collect();
        SnapshotMatrix { data, n_h: self.n_h, params, geometry: self.geometry.clone() }
    }

    /// Multiplies every entry by `s`.
    pub fn scaled(&self, s: f64) -> SnapshotMatrix {
        SnapshotMatrix { data: self.data.iter().map(|x| x * s).collect(), ..self.clone() }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.n_h, self.n_s(), &self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    /// `u_i · u_j`, classical POD.
    InnerProduct,
    /// `½ M2(μ_i) + ½ M2(μ_j) - S_ε(μ_i, μ_j)`.
    SinkhornKernel,
    /// `exp(-S_ε(μ_i, μ_j)² / σ)`.
    WassersteinExponential,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::InnerProduct => "inner_product",
            KernelKind::SinkhornKernel => "sinkhorn_kernel",
            KernelKind::WassersteinExponential => "wasserstein_exponential",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "inner_product" => Ok(Self::InnerProduct),
            "sinkhorn_kernel" => Ok(Self::SinkhornKernel),
            "wasserstein_exponential" => Ok(Self::WassersteinExponential),
            other => Err(Error::InvalidParameter(format!("unknown kernel `{other}`"))),
        }
    }

    fn uses_transport(self) -> bool {
        self != KernelKind::InnerProduct
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Regularization of the OT kernels; overrides the solver's own epsilon.
    pub epsilon: Epsilon,
    /// Bandwidth of the exponential kernel.
    pub sigma: f64,
}

impl KernelSpec {
    pub fn inner_product() -> Self {
        Self { kind: KernelKind::InnerProduct, epsilon: Epsilon::RelativeToMax(1e-3), sigma: 1.0 }
    }

    pub fn sinkhorn(epsilon: Epsilon) -> Self {
        Self { kind: KernelKind::SinkhornKernel, epsilon, sigma: 1.0 }
    }

    pub fn exponential(epsilon: Epsilon, sigma: f64) -> Self {
        Self { kind: KernelKind::WassersteinExponential, epsilon, sigma }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.uses_transport() {
            let e = match self.epsilon {
                Epsilon::Absolute(e) | Epsilon::RelativeToMax(e) => e,
            };
            if !(e > 0.0) {
                return Err(Error::InvalidParameter("kernel epsilon must be positive".into()));
            }
        }
        if self.kind == KernelKind::WassersteinExponential && !(self.sigma > 0.0) {
            return Err(Error::InvalidParameter("kernel sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Training-side data needed to evaluate the kernel against new fields.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelBasis {
    pub geometry: GridGeometry,
    /// Raw snapshot columns for the inner product, normalized nodal weights
    /// for the OT kernels.
    pub columns: Vec<Vec<f64>>,
    /// `W_ε(μ_i, μ_i)` (OT kernels only).
    pub self_terms: Vec<f64>,
    /// Second moments (OT kernels only).
    pub moments: Vec<f64>,
    /// Solver settings with the kernel epsilon applied.
    pub params: SinkhornParams,
}

/// Symmetric `N_s × N_s` Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub basis: KernelBasis,
}

impl GramMatrix {
    pub fn n(&self) -> usize {
        self.entries.nrows()
    }
}

fn grid_moment(geometry: &GridGeometry, w: &[f64]) -> f64 {
    let (xs, ys, nx) = (geometry.xs(), geometry.ys(), geometry.nx());
    w.iter()
        .enumerate()
        .map(|(k, wk)| {
            let (x, y) = (xs[k % nx], ys[k / nx]);
            let r2 = if geometry.dim() == 1 { x * x } else { x * x + y * y };
            wk * r2
        })
        .sum()
}

fn kernel_value(kind: KernelKind, sigma: f64, m_i: f64, m_j: f64, div: f64) -> f64 {
    match kind {
        KernelKind::SinkhornKernel => 0.5 * m_i + 0.5 * m_j - div,
        KernelKind::WassersteinExponential => (-div * div / sigma).exp(),
        KernelKind::InnerProduct => unreachable!("inner product has no divergence"),
    }
}

/// Training-side kernel data: normalized measures, self-transport costs and
/// second moments for the OT kernels, raw columns for the inner product.
pub fn kernel_basis(s: &SnapshotMatrix, kernel: &KernelSpec, params: &SinkhornParams, exec: Exec) -> Result<KernelBasis> {
    let params = SinkhornParams { epsilon: kernel.epsilon, ..params.clone() };
    let geometry = s.geometry().clone();
    if !kernel.kind.uses_transport() {
        let columns = (0..s.n_s()).map(|j| s.column(j).to_vec()).collect();
        return Ok(KernelBasis { geometry, columns, self_terms: vec![], moments: vec![], params });
    }
    let columns: Vec<Vec<f64>> = (0..s.n_s())
        .map(|j| normalize_field(&s.field(j)).map(|m| m.weights().to_vec()))
        .collect::<Result<_>>()?;
    let solver = GridSinkhorn::new(geometry.clone(), params.clone());
    let self_terms = exec.try_map(columns.len(), |i| {
        solver
            .distance(&columns[i], &columns[i])
            .map_err(|e| Error::GramPair { i, j: i, source: Box::new(e) })
    })?;
    let moments = columns.iter().map(|w| grid_moment(&geometry, w)).collect();
    Ok(KernelBasis { geometry, columns, self_terms, moments, params })
}

/// [`compute_gram_with`] using the default execution policy.
pub fn compute_gram(s: &SnapshotMatrix, kernel: &KernelSpec, params: &SinkhornParams) -> Result<GramMatrix> {
    compute_gram_with(s, kernel, params, Exec::default())
}

/// Gram matrix of the snapshots under `kernel`. Only pairs `i <= j` are
/// evaluated; the lower triangle is mirrored.
pub fn compute_gram_with(s: &SnapshotMatrix, kernel: &KernelSpec, params: &SinkhornParams, exec: Exec) -> Result<GramMatrix> {
    let n = s.n_s();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least 2 snapshots".into()));
    }
    kernel.validate()?;
    params.validate()?;
    let basis = kernel_basis(s, kernel, params, exec)?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let values = match kernel.kind {
        KernelKind::InnerProduct => exec.map(pairs.len(), |p| {
            let (i, j) = pairs[p];
            dot(s.column(i), s.column(j))
        }),
        kind => {
            let solver = GridSinkhorn::new(basis.geometry.clone(), basis.params.clone());
            exec.try_map(pairs.len(), |p| {
                let (i, j) = pairs[p];
                let div = if i == j {
                    0.0
                } else {
                    solver
                        .divergence_with_self(&basis.columns[i], &basis.columns[j], basis.self_terms[i], basis.self_terms[j])
                        .map_err(|e| Error::GramPair { i, j, source: Box::new(e) })?
                };
                Ok::<_, Error>(kernel_value(kind, kernel.sigma, basis.moments[i], basis.moments[j], div))
            })?
        }
    };
    let mut entries = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(values) {
        entries[(i, j)] = v;
        entries[(j, i)] = v;
    }
    Ok(GramMatrix { entries, kernel: *kernel, basis })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Truncated eigendecomposition of a Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KpodModel {
    /// Leading eigenvalues, descending, all positive.
    pub eigvals: Vec<f64>,
    /// `N_s × k` orthonormal eigenvectors.
    pub eigvecs: DMatrix<f64>,
    pub kernel: KernelSpec,
    pub basis: KernelBasis,
    pub k: usize,
    /// Eigenvalues below `-1e-10 max|λ|` in the full spectrum.
    pub negative_eigvals: Vec<f64>,
}

/// Symmetric eigenpairs sorted descending; each vector's largest-magnitude
/// entry is made positive so the signs are reproducible.
fn sorted_eigen(g: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = g.nrows();
    let eig = SymmetricEigen::try_new(g.clone(), 1e-15, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).clone_owned();
        fix_sign(&mut v);
        vecs.set_column(c, &v);
    }
    Ok((vals, vecs))
}

fn fix_sign(v: &mut DVector<f64>) {
    let k = v.iamax();
    if v[k] < 0.0 {
        v.neg_mut();
    }
}

pub fn eigendecompose(g: &GramMatrix, k: usize) -> Result<KpodModel> {
    let n = g.n();
    if k == 0 || k > n {
        return Err(Error::InvalidParameter(format!("latent dimension {k} not in 1..={n}")));
    }
    let (vals, vecs) = sorted_eigen(&g.entries)?;
    let scale = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let negative_eigvals: Vec<f64> = vals.iter().copied().filter(|v| *v < -1e-10 * scale).collect();
    let keep: Vec<usize> = (0..k).filter(|&i| vals[i] > 0.0).collect();
    if keep.is_empty() {
        return Err(Error::RankDeficient);
    }
    let eigvecs = DMatrix::from_fn(n, keep.len(), |r, c| vecs[(r, keep[c])]);
    Ok(KpodModel {
        eigvals: keep.iter().map(|&i| vals[i]).collect(),
        eigvecs,
        kernel: g.kernel,
        basis: g.basis.clone(),
        k: keep.len(),
        negative_eigvals,
    })
}

/// Reduced coordinates `Z = V*ᵀ G` (`k × N_s`).
pub fn reduce(model: &KpodModel, g: &GramMatrix) -> Result<DMatrix<f64>> {
    if g.n() != model.eigvecs.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "Gram is {0}x{0}, model was built on {1} snapshots",
            g.n(),
            model.eigvecs.nrows()
        )));
    }
    Ok(model.eigvecs.transpose() * &g.entries)
}

/// Kernel evaluations `[κ(u, u_i)]_i` against the training set.
pub fn kernel_vector(model: &KpodModel, u: &Field) -> Result<Vec<f64>> {
    let basis = &model.basis;
    if u.geometry() != &basis.geometry {
        return Err(Error::DimensionMismatch("field geometry differs from the training grid".into()));
    }
    if !model.kernel.kind.uses_transport() {
        return Ok(basis.columns.iter().map(|c| dot(c, u.values())).collect());
    }
    let w = normalize_field(u)?.weights().to_vec();
    let m = grid_moment(&basis.geometry, &w);
    let solver = GridSinkhorn::new(basis.geometry.clone(), basis.params.clone());
    let self_u = solver.distance(&w, &w)?;
    basis
        .columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let div = if c == &w {
                0.0
            } else {
                solver
                    .divergence_with_self(&w, c, self_u, basis.self_terms[i])
                    .map_err(|e| Error::GramPair { i, j: i, source: Box::new(e) })?
            };
            Ok(kernel_value(model.kernel.kind, model.kernel.sigma, m, basis.moments[i], div))
        })
        .collect()
}

/// Forward map `z = V*ᵀ g(u)`.
pub fn forward_map(model: &KpodModel, u: &Field) -> Result<Vec<f64>> {
    let g = DVector::from_vec(kernel_vector(model, u)?);
    Ok((model.eigvecs.transpose() * g).iter().copied().collect())
}

/// Classical POD basis from a thin SVD.
#[derive(Debug, Clone, PartialEq)]
pub struct PodBasis {
    /// `N_h × k` orthonormal modes.
    pub modes: DMatrix<f64>,
    /// All singular values, descending.
    pub singular_values: Vec<f64>,
}

impl PodBasis {
    pub fn k(&self) -> usize {
        self.modes.ncols()
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        (self.modes.transpose() * DVector::from_column_slice(u)).iter().copied().collect()
    }

    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        (&self.modes * DVector::from_column_slice(z)).iter().copied().collect()
    }
}

/// Leading `k` left singular vectors of the snapshot matrix.
pub fn pod_svd(s: &SnapshotMatrix, k: usize) -> Result<PodBasis> {
    let r = s.n_h().min(s.n_s());
    if k == 0 || k > r {
        return Err(Error::InvalidParameter(format!("rank {k} not in 1..={r}")));
    }
    let svd = s
        .to_matrix()
        .try_svd(true, false, 1e-15, 10_000)
        .ok_or_else(|| Error::Eigen("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut modes = DMatrix::zeros(s.n_h(), k);
    for (c, &i) in order.iter().take(k).enumerate() {
        let mut v = u.column(i).clone_owned();
        fix_sign(&mut v);
        modes.set_column(c, &v);
    }
    Ok(PodBasis { modes, singular_values: order.iter().map(|&i| svd.singular_values[i]).collect() })
}

/// Sequence divided by its leading entry (all zeros stay zero).
pub fn normalized_spectrum(values: &[f64]) -> Vec<f64> {
    match values.first() {
        Some(&first) if first != 0.0 => values.iter().map(|v| v / first).collect(),
        _ => values.to_vec(),
    }
}

/// Normalized eigenvalues of a Gram matrix, descending.
pub fn gram_spectrum(g: &GramMatrix) -> Result<Vec<f64>> {
    Ok(normalized_spectrum(&sorted_eigen(&g.entries)?.0))
}

/// Normalized singular values of a snapshot matrix, descending.
pub fn pod_spectrum(s: &SnapshotMatrix) -> Result<Vec<f64>> {
    let r = s.n_h().min(s.n_s());
    Ok(normalized_spectrum(&pod_svd(s, r)?.singular_values))
}

/// Per-row affine standardization of latent coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    /// Fits mean and standard deviation of each row of `z` (`k × N`).
    pub fn fit(z: &DMatrix<f64>) -> Self {
        let n = z.ncols() as f64;
        let mut mean = Vec::with_capacity(z.nrows());
        let mut scale = Vec::with_capacity(z.nrows());
        for r in 0..z.nrows() {
            let row = z.row(r);
            let m = row.sum() / n;
            let var = row.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            mean.push(m);
            scale.push(if var > 0.0 { var.sqrt() } else { 1.0 });
        }
        Self { mean, scale }
    }

    /// Per-row means with one shared scale, the largest row deviation, so
    /// the relative size of the coordinates is kept.
    pub fn fit_common(z: &DMatrix<f64>) -> Self {
        let n = z.ncols() as f64;
        let mean: Vec<f64> = (0..z.nrows()).map(|r| z.row(r).sum() / n).collect();
        let sd = (0..z.nrows())
            .map(|r| (z.row(r).iter().map(|x| (x - mean[r]).powi(2)).sum::<f64>() / n).sqrt())
            .fold(0.0_f64, f64::max);
        let scale = vec![if sd > 0.0 { sd } else { 1.0 }; z.nrows()];
        Self { mean, scale }
    }

    pub fn identity(k: usize) -> Self {
        Self { mean: vec![0.0; k], scale: vec![1.0; k] }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(r, v)| (v - self.mean[r]) / self.scale[r]).collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter().enumerate().map(|(r, v)| v * self.scale[r] + self.mean[r]).collect()
    }
}
