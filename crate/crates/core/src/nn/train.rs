//! Mini-batch training of the decoder-only and joint autoencoder models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::Adam;
use super::loss::{mse_loss, sinkhorn_batch_loss, BatchSinkhorn};
use super::network::{Autoencoder, Batch, Network};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum LossKind {
    Mse,
    Sinkhorn(BatchSinkhorn),
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Sinkhorn(_) => "sinkhorn",
        }
    }

    fn eval(&self, y: &Batch, y_nn: &Batch) -> Result<(f64, Batch)> {
        match self {
            LossKind::Mse => mse_loss(y, y_nn),
            LossKind::Sinkhorn(cfg) => sinkhorn_batch_loss(y, y_nn, cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub epochs: usize,
    /// MSE epochs run before switching to the Sinkhorn loss.
    pub pretrain_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Weight of the latent penalty.
    pub lambda: f64,
    pub patience: usize,
    /// Factor applied to the learning rate after `lr_patience` epochs
    /// without a validation improvement; 1 keeps it fixed.
    pub lr_decay: f64,
    pub lr_patience: usize,
    /// Share of the training set held out for early stopping.
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Mse,
            epochs: 1000,
            pretrain_epochs: 50,
            learning_rate: 1e-3,
            batch_size: 16,
            lambda: 1.0,
            patience: 50,
            lr_decay: 0.5,
            lr_patience: 25,
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be positive".into());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda = {} must be finite and nonnegative", self.lambda));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {}", self.learning_rate));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) || self.lr_patience == 0 {
            return bad(format!("lr decay {} must be in (0, 1] with positive patience", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("validation fraction {} not in [0, 1)", self.val_fraction));
        }
        if matches!(self.loss, LossKind::Sinkhorn(_)) && self.pretrain_epochs >= self.epochs {
            return bad(format!("pretrain epochs {} must be below epochs {}", self.pretrain_epochs, self.epochs));
        }
        Ok(())
    }

    /// Number of MSE epochs before the configured loss takes over.
    fn warmup(&self) -> usize {
        match self.loss {
            LossKind::Mse => 0,
            LossKind::Sinkhorn(_) => self.pretrain_epochs,
        }
    }
}

/// Per-epoch losses. `train` is the optimized objective averaged over the
/// mini-batches; `validation` is the MSE reconstruction error plus
/// `lambda` times the latent MSE, evaluated without dropout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub train: Vec<f64>,
    pub validation: Vec<f64>,
    pub reconstruction: Vec<f64>,
    pub latent: Vec<f64>,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
    /// First epoch of the Sinkhorn phase, if any. Best-epoch tracking
    /// restarts there.
    pub switch_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Seeded shuffle of `0..n` split into `(train, validation)`.
pub(crate) fn holdout(n: usize, fraction: f64, rng: &mut ChaCha8Rng) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let n_val = if n < 2 || fraction <= 0.0 { 0 } else { ((fraction * n as f64).round() as usize).clamp(1, n - 1) };
    let val = idx.split_off(n - n_val);
    (idx, val)
}

enum Model<'a> {
    Decoder(&'a mut Network),
    Auto(&'a mut Autoencoder),
}

struct Data<'a> {
    /// Network input: latent codes for the decoder, snapshots otherwise.
    input: &'a Batch,
    u: &'a Batch,
    z: &'a Batch,
}

struct Optimizers {
    enc: Option<Adam>,
    dec: Adam,
}

fn add_scaled(a: &mut Batch, b: &Batch, s: f64) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += s * y;
    }
}

impl Optimizers {
    fn set_lr(&mut self, lr: f64) {
        self.dec.lr = lr;
        if let Some(e) = self.enc.as_mut() {
            e.lr = lr;
        }
    }
}

/// Decayed learning rates stop at this fraction of the initial one.
const MIN_LR_FRACTION: f64 = 1e-3;

impl Model<'_> {
    fn optimizers(&self, lr: f64) -> Optimizers {
        match self {
            Model::Decoder(d) => Optimizers { enc: None, dec: Adam::new(d, lr) },
            Model::Auto(ae) => Optimizers { enc: Some(Adam::new(&ae.encoder, lr)), dec: Adam::new(&ae.decoder, lr) },
        }
    }

    /// One optimizer step; returns `(reconstruction, latent)` losses.
    fn step(&mut self, data: &Data, idx: &[usize], loss: &LossKind, lambda: f64, opt: &mut Optimizers, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
        let x = data.input.rows(idx);
        let u = data.u.rows(idx);
        match self {
            Model::Decoder(dec) => {
                let (out, tape) = dec.forward(&x, true, rng)?;
                let (rec, du) = loss.eval(&u, &out)?;
                let (g, _) = dec.backward(&tape, &du, false)?;
                opt.dec.step(dec, &g);
                Ok((rec, 0.0))
            }
            Model::Auto(ae) => {
                let z = data.z.rows(idx);
                let (z_hat, te) = ae.encoder.forward(&x, true, rng)?;
                let (u_hat, td) = ae.decoder.forward(&z_hat, true, rng)?;
                let (rec, du) = loss.eval(&u, &u_hat)?;
                let (lat, dzl) = mse_loss(&z, &z_hat)?;
                let (gd, mut dz) = ae.decoder.backward(&td, &du, true)?;
                if lambda > 0.0 {
                    add_scaled(&mut dz, &dzl, lambda);
                }
                let (ge, _) = ae.encoder.backward(&te, &dz, false)?;
                opt.dec.step(&mut ae.decoder, &gd);
                if let Some(e) = opt.enc.as_mut() {
                    e.step(&mut ae.encoder, &ge);
                }
                Ok((rec, lat))
            }
        }
    }

    /// MSE-form objective on the given samples without dropout.
    fn evaluate(&self, data: &Data, idx: &[usize], lambda: f64) -> Result<f64> {
        let x = data.input.rows(idx);
        let u = data.u.rows(idx);
        Ok(match self {
            Model::Decoder(dec) => mse_loss(&u, &dec.predict(&x)?)?.0,
            Model::Auto(ae) => {
                let z_hat = ae.encoder.predict(&x)?;
                let rec = mse_loss(&u, &ae.decoder.predict(&z_hat)?)?.0;
                if lambda > 0.0 {
                    rec + lambda * mse_loss(&data.z.rows(idx), &z_hat)?.0
                } else {
                    rec
                }
            }
        })
    }

    fn snapshot(&self) -> (Option<Network>, Network) {
        match self {
            Model::Decoder(d) => (None, (**d).clone()),
            Model::Auto(ae) => (Some(ae.encoder.clone()), ae.decoder.clone()),
        }
    }

    fn restore(&mut self, s: (Option<Network>, Network)) {
        match self {
            Model::Decoder(d) => **d = s.1,
            Model::Auto(ae) => {
                if let Some(e) = s.0 {
                    ae.encoder = e;
                }
                ae.decoder = s.1;
            }
        }
    }
}

fn fit(mut model: Model, data: Data, cfg: &TrainConfig) -> Result<History> {
    cfg.validate()?;
    let n = data.u.n;
    if n == 0 || data.input.n != n || data.z.n != n {
        return Err(Error::Shape(format!("{} inputs, {} targets and {} latent codes", data.input.n, n, data.z.n)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (train_idx, val_idx) = holdout(n, cfg.val_fraction, &mut rng);
    let select_on = if val_idx.is_empty() { &train_idx } else { &val_idx };
    let mut opt = model.optimizers(cfg.learning_rate);
    let warmup = cfg.warmup();
    let mut hist = History { switch_epoch: (warmup > 0).then_some(warmup), ..Default::default() };
    let mut best = f64::INFINITY;
    let mut best_state = model.snapshot();
    let mut order = train_idx.clone();
    let (mut lr, mut stale) = (cfg.learning_rate, 0usize);
    for epoch in 0..cfg.epochs {
        let loss = if epoch < warmup { &LossKind::Mse } else { &cfg.loss };
        if epoch == warmup && warmup > 0 {
            best = f64::INFINITY;
            (lr, stale) = (cfg.learning_rate, 0);
            opt.set_lr(lr);
        }
        order.shuffle(&mut rng);
        let (mut rec_sum, mut lat_sum, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let (rec, lat) = model.step(&data, chunk, loss, cfg.lambda, &mut opt, &mut rng)?;
            if !rec.is_finite() || !lat.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            rec_sum += rec;
            lat_sum += lat;
            batches += 1;
        }
        let (rec, lat) = (rec_sum / batches as f64, lat_sum / batches as f64);
        let val = model.evaluate(&data, select_on, cfg.lambda)?;
        if !val.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        hist.reconstruction.push(rec);
        hist.latent.push(lat);
        hist.train.push(rec + cfg.lambda * lat);
        hist.validation.push(val);
        if val < best {
            best = val;
            hist.best_epoch = epoch;
            best_state = model.snapshot();
            stale = 0;
            continue;
        }
        stale += 1;
        if stale >= cfg.lr_patience && cfg.lr_decay < 1.0 {
            lr = (lr * cfg.lr_decay).max(cfg.learning_rate * MIN_LR_FRACTION);
            opt.set_lr(lr);
            stale = 0;
        }
        if epoch >= warmup && epoch - hist.best_epoch.max(warmup) >= cfg.patience {
            hist.stopped_early = true;
            break;
        }
    }
    model.restore(best_state);
    Ok(hist)
}

fn check_columns(a: &Batch, b: &Batch) -> Result<()> {
    if a.n != b.n {
        return Err(Error::Shape(format!("{} inputs for {} targets", a.n, b.n)));
    }
    Ok(())
}

/// Fits `net` to map latent codes `z` (one sample per row) to snapshots `u`.
pub fn train_decoder(net: &mut Network, z: &Batch, u: &Batch, cfg: &TrainConfig) -> Result<History> {
    check_columns(z, u)?;
    cfg.validate()?;
    let cfg = TrainConfig { lambda: 0.0, ..cfg.clone() };
    fit(Model::Decoder(net), Data { input: z, u, z }, &cfg)
}

/// Jointly fits encoder and decoder to reconstruct `u` while pulling the
/// latent codes towards `z`.
pub fn train_autoencoder(ae: &mut Autoencoder, u: &Batch, z: &Batch, cfg: &TrainConfig) -> Result<History> {
    check_columns(u, z)?;
    if z.width != ae.encoder.output_len() {
        return Err(Error::Shape(format!("latent targets have width {} but the bottleneck is {}", z.width, ae.encoder.output_len())));
    }
    fit(Model::Auto(ae), Data { input: u, u, z }, cfg)
}
