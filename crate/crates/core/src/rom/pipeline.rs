//! Offline training of a variant and its online evaluation.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{describe_problem, describe_variant, Architecture, LatentScaling, Mode, Reduction, RomConfig, Variant};
use crate::error::{Error, Result};
use crate::io::{join, Manifest};
use crate::kpod::{compute_gram_with, eigendecompose, forward_map, pod_svd, reduce, GramMatrix, KpodModel, PodBasis, SnapshotMatrix, Standardization};
use crate::measures::GridGeometry;
use crate::nn::{build_conv_autoencoder, build_ff_autoencoder, train_autoencoder, train_decoder, Autoencoder, Batch, History, Network};
use crate::pde::{sample_parameters, ProblemSpec};

/// Disjoint train/test index sets.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub rate: f64,
    pub seed: u64,
}

/// Seeded uniform split of `0..n` with `round(rate * n)` training indices.
/// Both index lists are returned sorted.
pub fn split_indices(n: usize, rate: f64, seed: u64) -> Result<Split> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidParameter(format!("training rate {rate} not in (0, 1)")));
    }
    let n_train = (rate * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::InvalidParameter(format!("rate {rate} leaves an empty train or test set for {n} samples")));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx.split_off(n_train);
    idx.sort_unstable();
    test.sort_unstable();
    Ok(Split { train: idx, test, rate, seed })
}

pub fn split_dataset(s: &SnapshotMatrix, rate: f64, seed: u64) -> Result<Split> {
    split_indices(s.n_s(), rate, seed)
}

/// How latent coordinates are obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum ReductionModel {
    Kpod(KpodModel),
    Pod(PodBasis),
    /// No latent targets; `k` is the bottleneck width.
    Unconstrained { k: usize },
}

impl ReductionModel {
    pub fn k(&self) -> usize {
        match self {
            ReductionModel::Kpod(m) => m.k,
            ReductionModel::Pod(p) => p.k(),
            ReductionModel::Unconstrained { k } => *k,
        }
    }

    /// Latent coordinates of one snapshot (before standardization).
    pub fn latent(&self, u: &crate::measures::Field) -> Result<Vec<f64>> {
        match self {
            ReductionModel::Kpod(m) => forward_map(m, u),
            ReductionModel::Pod(p) => Ok(p.project(u.values())),
            ReductionModel::Unconstrained { .. } => Err(Error::InvalidParameter("unconstrained models have no latent map".into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrainedNet {
    Decoder(Network),
    Autoencoder(Autoencoder),
}

/// A trained model with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct RomBundle {
    pub variant: Variant,
    pub geometry: GridGeometry,
    pub reduction: ReductionModel,
    pub standardization: Standardization,
    /// Snapshots are multiplied by this before entering the network.
    pub scale: f64,
    pub net: TrainedNet,
    pub history: History,
    pub split: Split,
    pub manifest: Manifest,
}

/// Snapshots plus their split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub snapshots: SnapshotMatrix,
    pub split: Split,
}

impl Dataset {
    pub fn train(&self) -> SnapshotMatrix {
        self.snapshots.select(&self.split.train)
    }

    pub fn test(&self) -> SnapshotMatrix {
        self.snapshots.select(&self.split.test)
    }
}

pub fn generate_snapshots(problem: &ProblemSpec, cfg: &RomConfig) -> Result<SnapshotMatrix> {
    let params = sample_parameters(problem, cfg.n_s)?;
    problem.generate(&params, cfg.exec)
}

pub fn build_dataset(problem: &ProblemSpec, cfg: &RomConfig) -> Result<Dataset> {
    let snapshots = generate_snapshots(problem, cfg)?;
    let split = split_dataset(&snapshots, cfg.train_rate, cfg.split_seed)?;
    Ok(Dataset { snapshots, split })
}

/// Gram matrix of the training snapshots under the configured kernel.
pub fn training_gram(train: &SnapshotMatrix, cfg: &RomConfig) -> Result<GramMatrix> {
    compute_gram_with(train, &cfg.kernel, &cfg.sinkhorn, cfg.exec).map_err(|e| e.in_stage("gram assembly"))
}

/// Reduction model and `k × N_tr` latent targets of the training set.
pub fn reduce_training(train: &SnapshotMatrix, reduction: Reduction, gram: Option<&GramMatrix>, cfg: &RomConfig) -> Result<(ReductionModel, DMatrix<f64>)> {
    match reduction {
        Reduction::Kpod => {
            let owned;
            let g = match gram {
                Some(g) => g,
                None => {
                    owned = training_gram(train, cfg)?;
                    &owned
                }
            };
            if g.n() != train.n_s() {
                return Err(Error::DimensionMismatch(format!("Gram is {0}x{0} for {1} training snapshots", g.n(), train.n_s())));
            }
            let model = eigendecompose(g, cfg.k).map_err(|e| e.in_stage("kpod eigendecomposition"))?;
            let z = reduce(&model, g)?;
            Ok((ReductionModel::Kpod(model), z))
        }
        Reduction::Pod => {
            let basis = pod_svd(train, cfg.k).map_err(|e| e.in_stage("pod"))?;
            let z = basis.modes.transpose() * train.to_matrix();
            Ok((ReductionModel::Pod(basis), z))
        }
        Reduction::Unconstrained => Ok((ReductionModel::Unconstrained { k: cfg.k }, DMatrix::zeros(cfg.k, train.n_s()))),
    }
}

fn snapshot_batch(s: &SnapshotMatrix, scale: f64) -> Batch {
    Batch { n: s.n_s(), width: s.n_h(), data: s.data().iter().map(|v| v * scale).collect() }
}

fn latent_batch(z: &DMatrix<f64>, st: &Standardization) -> Batch {
    let mut data = Vec::with_capacity(z.len());
    for c in 0..z.ncols() {
        let col: Vec<f64> = z.column(c).iter().copied().collect();
        data.extend(st.apply(&col));
    }
    Batch { n: z.ncols(), width: z.nrows(), data }
}

fn build_network(variant: &Variant, geometry: &GridGeometry, k: usize, cfg: &RomConfig) -> Result<Autoencoder> {
    let seed = cfg.train.seed;
    match variant.arch {
        Architecture::Ff => build_ff_autoencoder(geometry.len(), k, cfg.arch, seed),
        Architecture::Cae => build_conv_autoencoder(geometry.ny(), geometry.nx(), k, cfg.arch, seed),
    }
}

/// Trains `variant` on the training snapshots and their latent targets.
pub fn train_bundle(train: &SnapshotMatrix, split: &Split, reduction: ReductionModel, z: DMatrix<f64>, variant: Variant, cfg: &RomConfig) -> Result<RomBundle> {
    variant.validate()?;
    if z.ncols() != train.n_s() || z.nrows() != reduction.k() {
        return Err(Error::DimensionMismatch("latent targets do not match the training set".into()));
    }
    let k = reduction.k();
    let standardization = match (cfg.latent_scaling, variant.reduction) {
        (_, Reduction::Unconstrained) | (LatentScaling::None, _) => Standardization::identity(k),
        (LatentScaling::Common, _) => Standardization::fit_common(&z),
        (LatentScaling::PerMode, _) => Standardization::fit(&z),
    };
    let peak = train.data().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let scale = if peak > 0.0 { 1.0 / peak } else { 1.0 };
    let u = snapshot_batch(train, scale);
    let zb = latent_batch(&z, &standardization);
    let tc = cfg.train_config(&variant);
    let mut ae = build_network(&variant, train.geometry(), k, cfg).map_err(|e| e.in_stage("network construction"))?;
    let start = Instant::now();
    let (net, history) = match variant.mode {
        Mode::Decoder => {
            let h = train_decoder(&mut ae.decoder, &zb, &u, &tc).map_err(|e| e.in_stage("training"))?;
            (TrainedNet::Decoder(ae.decoder), h)
        }
        Mode::Autoencoder => {
            let h = train_autoencoder(&mut ae, &u, &zb, &tc).map_err(|e| e.in_stage("training"))?;
            (TrainedNet::Autoencoder(ae), h)
        }
    };
    let mut manifest = Manifest::new();
    cfg.describe(&mut manifest);
    describe_variant(&variant, &mut manifest);
    manifest.set("train.lambda_effective", tc.lambda);
    manifest.set("train.loss", tc.loss.name());
    manifest.set("rom.k_effective", k);
    manifest.set("rom.scale", scale);
    manifest.set("rom.latent_mean", join(&standardization.mean));
    manifest.set("rom.latent_scale", join(&standardization.scale));
    manifest.set("split.train", join(&split.train));
    manifest.set("split.test", join(&split.test));
    if let ReductionModel::Kpod(m) = &reduction {
        manifest.set("kernel.eps_resolved", m.basis.params.epsilon.resolve(max_grid_cost(train.geometry())));
        manifest.set("kpod.eigenvalues", join(&m.eigvals));
        manifest.set("kpod.negative_eigenvalues", join(&m.negative_eigvals));
    }
    manifest.set("history.epochs_run", history.train.len());
    manifest.set("history.best_epoch", history.best_epoch);
    manifest.set("history.stopped_early", history.stopped_early);
    if let Some(s) = history.switch_epoch {
        manifest.set("history.switch_epoch", s);
    }
    manifest.set("time.train_s", start.elapsed().as_secs_f64());
    Ok(RomBundle {
        variant,
        geometry: train.geometry().clone(),
        reduction,
        standardization,
        scale,
        net,
        history,
        split: split.clone(),
        manifest,
    })
}

/// Largest squared distance between two grid nodes.
pub fn max_grid_cost(g: &GridGeometry) -> f64 {
    let span = |a: &[f64]| {
        let lo = a.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (hi - lo).powi(2)
    };
    if g.dim() == 1 {
        span(g.xs())
    } else {
        span(g.xs()) + span(g.ys())
    }
}

/// Result of [`run_offline`].
#[derive(Debug, Clone)]
pub struct OfflineRun {
    pub dataset: Dataset,
    pub gram: Option<GramMatrix>,
    pub bundle: RomBundle,
}

/// Generates snapshots, splits them, computes the reduction and trains the
/// variant.
pub fn run_offline(problem: &ProblemSpec, variant: Variant, cfg: &RomConfig) -> Result<OfflineRun> {
    variant.validate()?;
    let t0 = Instant::now();
    let dataset = build_dataset(problem, cfg)?;
    let t_gen = t0.elapsed().as_secs_f64();
    let train = dataset.train();
    let t1 = Instant::now();
    let gram = match variant.reduction {
        Reduction::Kpod => Some(training_gram(&train, cfg)?),
        _ => None,
    };
    let (model, z) = reduce_training(&train, variant.reduction, gram.as_ref(), cfg)?;
    let t_red = t1.elapsed().as_secs_f64();
    let mut bundle = train_bundle(&train, &dataset.split, model, z, variant, cfg)?;
    describe_problem(problem, &mut bundle.manifest);
    bundle.manifest.set("time.generate_s", t_gen);
    bundle.manifest.set("time.reduction_s", t_red);
    Ok(OfflineRun { dataset, gram, bundle })
}

/// Convolutional autoencoder trained with MSE and no latent constraint.
pub fn dlrom_baseline(problem: &ProblemSpec, cfg: &RomConfig) -> Result<OfflineRun> {
    let v = Variant::new(Reduction::Unconstrained, Architecture::Cae, super::LossChoice::Mse, Mode::Autoencoder)?;
    run_offline(problem, v, cfg)
}

/// Per-sample errors on a test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub params: Vec<Vec<f64>>,
    pub per_sample_eps: Vec<f64>,
    pub mean_eps: f64,
    /// `|u - ũ| / ‖u‖` per sample.
    pub error_fields: Vec<Vec<f64>>,
    pub geometry: GridGeometry,
}

/// Discrete L2 norm on `g`.
pub fn l2_norm(g: &GridGeometry, v: &[f64]) -> f64 {
    (g.cell_measure() * v.iter().map(|x| x * x).sum::<f64>()).sqrt()
}

/// Relative L2 error of `approx` against `exact`.
pub fn relative_error(g: &GridGeometry, exact: &[f64], approx: &[f64]) -> f64 {
    let diff: Vec<f64> = exact.iter().zip(approx).map(|(a, b)| a - b).collect();
    l2_norm(g, &diff) / l2_norm(g, exact)
}

/// Reconstructions of every column of `s`.
pub fn reconstruct(bundle: &RomBundle, s: &SnapshotMatrix) -> Result<SnapshotMatrix> {
    if s.geometry() != &bundle.geometry {
        return Err(Error::DimensionMismatch("snapshots are not on the training grid".into()));
    }
    let out = match &bundle.net {
        TrainedNet::Autoencoder(ae) => ae.reconstruct(&snapshot_batch(s, bundle.scale))?,
        TrainedNet::Decoder(dec) => {
            let red = &bundle.reduction;
            let lat = (0..s.n_s()).map(|j| red.latent(&s.field(j))).collect::<Result<Vec<Vec<f64>>>>()?;
            let z = DMatrix::from_fn(red.k(), s.n_s(), |r, c| lat[c][r]);
            dec.predict(&latent_batch(&z, &bundle.standardization))?
        }
    };
    let data = out.data.iter().map(|v| v / bundle.scale).collect();
    SnapshotMatrix::new(data, s.n_h(), s.params().to_vec(), s.geometry().clone())
}

pub fn evaluate(bundle: &RomBundle, test: &SnapshotMatrix) -> Result<EvalReport> {
    let rec = reconstruct(bundle, test).map_err(|e| e.in_stage("evaluation"))?;
    let g = test.geometry();
    let mut per_sample_eps = Vec::with_capacity(test.n_s());
    let mut error_fields = Vec::with_capacity(test.n_s());
    for j in 0..test.n_s() {
        let (u, v) = (test.column(j), rec.column(j));
        let norm = l2_norm(g, u);
        if norm == 0.0 {
            return Err(Error::InvalidField(format!("test snapshot {j} is identically zero")));
        }
        error_fields.push(u.iter().zip(v).map(|(a, b)| (a - b).abs() / norm).collect());
        per_sample_eps.push(relative_error(g, u, v));
    }
    let mean_eps = per_sample_eps.iter().sum::<f64>() / per_sample_eps.len() as f64;
    Ok(EvalReport { params: test.params().to_vec(), per_sample_eps, mean_eps, error_fields, geometry: g.clone() })
}

/// Mean relative error of projecting the test snapshots onto the leading
/// `k` POD modes of the training snapshots, for each `k`.
pub fn pod_projection_errors(train: &SnapshotMatrix, test: &SnapshotMatrix, ks: &[usize]) -> Result<Vec<(usize, f64)>> {
    let k_max = ks.iter().copied().max().unwrap_or(0);
    if k_max == 0 {
        return Ok(vec![]);
    }
    let basis = pod_svd(train, k_max)?;
    let g = test.geometry();
    ks.iter()
        .map(|&k| {
            if k == 0 {
                return Err(Error::InvalidParameter("k must be positive".into()));
            }
            let modes = basis.modes.columns(0, k);
            let mut total = 0.0;
            for j in 0..test.n_s() {
                let u = DVector::from_column_slice(test.column(j));
                let p = &modes * (modes.transpose() * &u);
                total += relative_error(g, u.as_slice(), p.as_slice());
            }
            Ok((k, total / test.n_s() as f64))
        })
        .collect()
}

/// Coefficient of determination of the affine least-squares fit of each
/// row of `z` (`k × N`) on the two parameters. A constant row scores 0.
pub fn plane_fit_r2(z: &DMatrix<f64>, params: &[Vec<f64>]) -> Result<Vec<f64>> {
    let n = params.len();
    if n < 3 || z.ncols() != n {
        return Err(Error::InvalidParameter(format!("need at least 3 samples matching the columns, got {n}")));
    }
    if params.iter().any(|p| p.len() != 2) {
        return Err(Error::InvalidParameter("plane fit needs two-dimensional parameters".into()));
    }
    let x = DMatrix::from_fn(n, 3, |r, c| if c < 2 { params[r][c] } else { 1.0 });
    let svd = x.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if svd.singular_values.min() <= 1e-12 * smax {
        return Err(Error::RankDeficient);
    }
    let mut out = Vec::with_capacity(z.nrows());
    for r in 0..z.nrows() {
        let y = DVector::from_iterator(n, z.row(r).iter().copied());
        let coef = svd.solve(&y, 0.0).map_err(|_| Error::RankDeficient)?;
        let fit = &x * coef;
        let mean = y.mean();
        let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
        let ss_res: f64 = y.iter().zip(fit.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        out.push(if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 });
    }
    Ok(out)
}
