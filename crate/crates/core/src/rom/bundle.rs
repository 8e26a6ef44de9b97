//! Bundle directories: manifest, network checkpoints, reduction data and
//! loss history.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use super::config::{variant_from_manifest, Mode, RomConfig};
use super::pipeline::{ReductionModel, RomBundle, Split, TrainedNet};
use crate::error::{Error, Result};
use crate::io::{csv_text, network_from_container, network_to_container, parse_list, Container, Manifest};
use crate::kpod::{KernelBasis, KpodModel, PodBasis, Standardization};
use crate::measures::GridGeometry;
use crate::nn::{Autoencoder, History};
use crate::pde::ProblemKind;
use crate::sinkhorn::SinkhornParams;

const MANIFEST: &str = "manifest.txt";
const ENCODER: &str = "encoder.otrom";
const DECODER: &str = "decoder.otrom";
const REDUCTION: &str = "reduction.otrom";
const BASIS: &str = "basis.otrom";
const HISTORY: &str = "history.csv";

pub fn history_csv(h: &History) -> String {
    let rows: Vec<Vec<String>> = (0..h.train.len())
        .map(|e| vec![e.to_string(), h.train[e].to_string(), h.validation[e].to_string(), h.reconstruction[e].to_string(), h.latent[e].to_string()])
        .collect();
    csv_text(&["epoch", "train", "validation", "reconstruction", "latent"], &rows)
}

pub fn write_history_csv(h: &History, path: &Path) -> Result<()> {
    fs::write(path, history_csv(h))?;
    Ok(())
}

fn read_history(text: &str, m: &Manifest) -> Result<History> {
    let mut h = History::default();
    for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
        let v: Vec<f64> = parse_list(line)?;
        if v.len() != 5 {
            return Err(Error::Format(format!("history row `{line}`")));
        }
        h.train.push(v[1]);
        h.validation.push(v[2]);
        h.reconstruction.push(v[3]);
        h.latent.push(v[4]);
    }
    h.best_epoch = m.parse_value("history.best_epoch")?;
    h.stopped_early = m.parse_value("history.stopped_early")?;
    h.switch_epoch = match m.get("history.switch_epoch") {
        Some(_) => Some(m.parse_value("history.switch_epoch")?),
        None => None,
    };
    Ok(h)
}

fn grid_container(g: &GridGeometry, n_h: usize, n_s: usize, data: Vec<f64>, param_dim: usize, params: Vec<f64>) -> Container {
    Container { n_h, n_s, param_dim, nx: g.nx(), ny: g.ny(), data, params }
}

/// Writes the bundle into `dir` (created if needed).
pub fn save_bundle(b: &RomBundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    b.manifest.write(&dir.join(MANIFEST))?;
    match &b.net {
        TrainedNet::Decoder(d) => network_to_container(d).write(&dir.join(DECODER))?,
        TrainedNet::Autoencoder(ae) => {
            network_to_container(&ae.encoder).write(&dir.join(ENCODER))?;
            network_to_container(&ae.decoder).write(&dir.join(DECODER))?;
        }
    }
    match &b.reduction {
        ReductionModel::Kpod(m) => {
            let n = m.eigvecs.nrows();
            Container { n_h: n, n_s: m.k, param_dim: 1, nx: n, ny: 1, data: m.eigvecs.as_slice().to_vec(), params: m.eigvals.clone() }
                .write(&dir.join(REDUCTION))?;
            let basis = &m.basis;
            let n_h = b.geometry.len();
            let (param_dim, params) = if basis.self_terms.is_empty() {
                (0, vec![])
            } else {
                (2, basis.self_terms.iter().zip(&basis.moments).flat_map(|(s, mo)| [*s, *mo]).collect())
            };
            grid_container(&b.geometry, n_h, basis.columns.len(), basis.columns.concat(), param_dim, params).write(&dir.join(BASIS))?;
        }
        ReductionModel::Pod(p) => {
            let k = p.k();
            grid_container(&b.geometry, b.geometry.len(), k, p.modes.as_slice().to_vec(), 1, p.singular_values[..k].to_vec())
                .write(&dir.join(REDUCTION))?;
        }
        ReductionModel::Unconstrained { .. } => {}
    }
    write_history_csv(&b.history, &dir.join(HISTORY))
}

/// Reads a bundle written by [`save_bundle`]; `geometry` is the grid of
/// the training snapshots.
pub fn load_bundle(dir: &Path, geometry: &GridGeometry) -> Result<RomBundle> {
    let manifest = Manifest::read(&dir.join(MANIFEST))?;
    let variant = variant_from_manifest(&manifest)?;
    let kind = match manifest.get("problem.kind") {
        Some(k) => ProblemKind::parse(k)?,
        None => ProblemKind::Poisson,
    };
    let cfg = RomConfig::from_manifest(&manifest, kind)?;
    let k: usize = manifest.parse_value("rom.k_effective")?;
    let decoder = network_from_container(&Container::read(&dir.join(DECODER))?)?;
    let net = match variant.mode {
        Mode::Decoder => TrainedNet::Decoder(decoder),
        Mode::Autoencoder => TrainedNet::Autoencoder(Autoencoder { encoder: network_from_container(&Container::read(&dir.join(ENCODER))?)?, decoder }),
    };
    let reduction = match variant.reduction {
        super::Reduction::Kpod => {
            let r = Container::read(&dir.join(REDUCTION))?;
            let basis_c = Container::read(&dir.join(BASIS))?;
            let (self_terms, moments) = if basis_c.param_dim == 2 {
                (basis_c.params.iter().step_by(2).copied().collect(), basis_c.params.iter().skip(1).step_by(2).copied().collect())
            } else {
                (vec![], vec![])
            };
            let basis = KernelBasis {
                geometry: geometry.clone(),
                columns: basis_c.data.chunks(basis_c.n_h).map(<[f64]>::to_vec).collect(),
                self_terms,
                moments,
                params: SinkhornParams { epsilon: cfg.kernel.epsilon, ..cfg.sinkhorn.clone() },
            };
            ReductionModel::Kpod(KpodModel {
                eigvals: r.params.clone(),
                eigvecs: r.to_matrix(),
                kernel: cfg.kernel,
                basis,
                k: r.n_s,
                negative_eigvals: parse_list(manifest.get("kpod.negative_eigenvalues").unwrap_or(""))?,
            })
        }
        super::Reduction::Pod => {
            let r = Container::read(&dir.join(REDUCTION))?;
            ReductionModel::Pod(PodBasis { modes: DMatrix::from_column_slice(r.n_h, r.n_s, &r.data), singular_values: r.params.clone() })
        }
        super::Reduction::Unconstrained => ReductionModel::Unconstrained { k },
    };
    if reduction.k() != k {
        return Err(Error::Format("reduction data disagrees with rom.k_effective".into()));
    }
    let split = Split {
        train: parse_list(manifest.require("split.train")?)?,
        test: parse_list(manifest.require("split.test")?)?,
        rate: manifest.parse_value("split.rate")?,
        seed: manifest.parse_value("split.seed")?,
    };
    let standardization = Standardization {
        mean: parse_list(manifest.require("rom.latent_mean")?)?,
        scale: parse_list(manifest.require("rom.latent_scale")?)?,
    };
    let history = read_history(&fs::read_to_string(dir.join(HISTORY))?, &manifest)?;
    Ok(RomBundle {
        variant,
        geometry: geometry.clone(),
        reduction,
        standardization,
        scale: manifest.parse_value("rom.scale")?,
        net,
        history,
        split,
        manifest,
    })
}

