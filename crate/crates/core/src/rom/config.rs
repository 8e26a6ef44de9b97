//! Model variants and the flat key=value run configuration.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::io::Manifest;
use crate::kpod::{KernelKind, KernelSpec};
use crate::nn::{ArchOptions, BatchSinkhorn, LossKind, TrainConfig};
use crate::parallel::Exec;
use crate::pde::{ProblemKind, ProblemSpec};
use crate::sinkhorn::{Domain, Epsilon, SinkhornParams};

macro_rules! named_enum {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($var),+ }

        impl $name {
            pub fn name(self) -> &'static str {
                match self { $($name::$var => $s),+ }
            }

            pub fn parse(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($name::$var),)+
                    other => Err(Error::InvalidParameter(format!(concat!("unknown ", stringify!($name), " `{}`"), other))),
                }
            }
        }
    };
}

named_enum!(
    /// Source of the latent targets.
    Reduction { Kpod => "kpod", Pod => "pod", Unconstrained => "none" }
);
named_enum!(Architecture { Ff => "ff", Cae => "cae" });
named_enum!(LossChoice { Mse => "mse", Sinkhorn => "sinkhorn" });
named_enum!(Mode { Decoder => "decoder", Autoencoder => "autoencoder" });
named_enum!(
    /// How latent targets are rescaled before training.
    LatentScaling { None => "none", Common => "common", PerMode => "per_mode" }
);

/// One cell of the model comparison grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub reduction: Reduction,
    pub arch: Architecture,
    pub loss: LossChoice,
    pub mode: Mode,
}

impl Variant {
    pub fn new(reduction: Reduction, arch: Architecture, loss: LossChoice, mode: Mode) -> Result<Self> {
        let v = Self { reduction, arch, loss, mode };
        v.validate()?;
        Ok(v)
    }

    pub fn validate(&self) -> Result<()> {
        if self.reduction == Reduction::Unconstrained && self.mode == Mode::Decoder {
            return Err(Error::InvalidParameter("a decoder-only model needs latent targets (kpod or pod)".into()));
        }
        Ok(())
    }

    /// `reduction-arch-loss-mode`, e.g. `kpod-cae-sinkhorn-autoencoder`.
    pub fn tag(&self) -> String {
        format!("{}-{}-{}-{}", self.reduction.name(), self.arch.name(), self.loss.name(), self.mode.name())
    }

    pub fn parse_tag(s: &str) -> Result<Self> {
        let p: Vec<&str> = s.split('-').collect();
        if p.len() != 4 {
            return Err(Error::InvalidParameter(format!("variant tag `{s}` needs four parts")));
        }
        Self::new(Reduction::parse(p[0])?, Architecture::parse(p[1])?, LossChoice::parse(p[2])?, Mode::parse(p[3])?)
    }

    /// The eight autoencoder and eight decoder cells over kPOD/POD, FF/CAE
    /// and MSE/Sinkhorn.
    pub fn grid() -> Vec<Variant> {
        let mut out = Vec::new();
        for mode in [Mode::Autoencoder, Mode::Decoder] {
            for loss in [LossChoice::Sinkhorn, LossChoice::Mse] {
                for reduction in [Reduction::Kpod, Reduction::Pod] {
                    for arch in [Architecture::Ff, Architecture::Cae] {
                        out.push(Variant { reduction, arch, loss, mode });
                    }
                }
            }
        }
        out
    }
}

/// Everything the offline stage needs besides the problem.
#[derive(Debug, Clone, PartialEq)]
pub struct RomConfig {
    pub n_s: usize,
    pub train_rate: f64,
    pub split_seed: u64,
    pub k: usize,
    pub kernel: KernelSpec,
    pub sinkhorn: SinkhornParams,
    pub latent_scaling: LatentScaling,
    pub train: TrainConfig,
    pub batch_sinkhorn: BatchSinkhorn,
    pub arch: ArchOptions,
    pub exec: Exec,
}

/// Training rate used for each benchmark.
pub fn default_train_rate(kind: ProblemKind) -> f64 {
    match kind {
        ProblemKind::Poisson | ProblemKind::Advection => 0.7,
        ProblemKind::Burgers => 0.5,
    }
}

impl RomConfig {
    pub fn for_problem(kind: ProblemKind) -> Self {
        Self {
            n_s: 100,
            train_rate: default_train_rate(kind),
            split_seed: 0,
            k: 5,
            kernel: KernelSpec::sinkhorn(Epsilon::RelativeToMax(1e-3)),
            sinkhorn: SinkhornParams::default(),
            latent_scaling: LatentScaling::Common,
            train: TrainConfig::default(),
            batch_sinkhorn: BatchSinkhorn::default(),
            arch: ArchOptions::default(),
            exec: Exec::default(),
        }
    }

    /// Training settings for `variant`.
    pub fn train_config(&self, variant: &Variant) -> TrainConfig {
        let mut t = self.train.clone();
        t.loss = match variant.loss {
            LossChoice::Mse => LossKind::Mse,
            LossChoice::Sinkhorn => LossKind::Sinkhorn(self.batch_sinkhorn.clone()),
        };
        if variant.reduction == Reduction::Unconstrained {
            t.lambda = 0.0;
        }
        t
    }

    /// Writes every setting, defaults included, under its config key.
    pub fn describe(&self, m: &mut Manifest) {
        m.set("problem.n_s", self.n_s);
        m.set("split.rate", self.train_rate);
        m.set("split.seed", self.split_seed);
        m.set("rom.k", self.k);
        m.set("rom.latent_scaling", self.latent_scaling.name());
        m.set("kernel.kind", self.kernel.kind.name());
        match self.kernel.epsilon {
            Epsilon::RelativeToMax(e) => m.set("kernel.eps_rel", e),
            Epsilon::Absolute(e) => m.set("kernel.eps_abs", e),
        }
        m.set("kernel.sigma", self.kernel.sigma);
        m.set("sinkhorn.max_iter", self.sinkhorn.max_iter);
        m.set("sinkhorn.tol", self.sinkhorn.tol);
        m.set("sinkhorn.domain", domain_name(self.sinkhorn.domain));
        m.set("sinkhorn.eps_scaling", self.sinkhorn.eps_scaling.map_or("none".to_string(), |f| f.to_string()));
        m.set("sinkhorn.overrelax", self.sinkhorn.overrelax);
        let t = &self.train;
        m.set("train.epochs", t.epochs);
        m.set("train.pretrain_epochs", t.pretrain_epochs);
        m.set("train.lr", t.learning_rate);
        m.set("train.batch_size", t.batch_size);
        m.set("train.lambda", t.lambda);
        m.set("train.patience", t.patience);
        m.set("train.lr_decay", t.lr_decay);
        m.set("train.lr_patience", t.lr_patience);
        m.set("train.val_fraction", t.val_fraction);
        m.set("train.seed", t.seed);
        m.set("train.optimizer", "adam(beta1=0.9,beta2=0.999,eps=1e-8)");
        m.set("train.sinkhorn_eps_rel", self.batch_sinkhorn.eps_rel);
        m.set("train.sinkhorn_max_iter", self.batch_sinkhorn.max_iter);
        m.set("train.sinkhorn_tol", self.batch_sinkhorn.tol);
        m.set("arch.activation", "elu");
        m.set("arch.dropout_keep", self.arch.keep);
    }

    /// Reads settings from config keys, falling back to the defaults for
    /// `kind`.
    pub fn from_manifest(m: &Manifest, kind: ProblemKind) -> Result<Self> {
        let d = Self::for_problem(kind);
        let kernel_kind = match m.get("kernel.kind") {
            Some(s) => KernelKind::parse(s)?,
            None => d.kernel.kind,
        };
        let epsilon = match (m.get("kernel.eps_abs"), m.get("kernel.eps_rel")) {
            (Some(_), Some(_)) => return Err(Error::InvalidParameter("set only one of kernel.eps_abs and kernel.eps_rel".into())),
            (Some(_), None) => Epsilon::Absolute(m.parse_value("kernel.eps_abs")?),
            (None, Some(_)) => Epsilon::RelativeToMax(m.parse_value("kernel.eps_rel")?),
            (None, None) => d.kernel.epsilon,
        };
        let kernel = KernelSpec { kind: kernel_kind, epsilon, sigma: or(m, "kernel.sigma", d.kernel.sigma)? };
        let eps_scaling = match m.get("sinkhorn.eps_scaling") {
            None | Some("none") => None,
            Some(_) => Some(m.parse_value("sinkhorn.eps_scaling")?),
        };
        let domain = match m.get("sinkhorn.domain") {
            None => d.sinkhorn.domain,
            Some(s) => parse_domain(s)?,
        };
        let sinkhorn = SinkhornParams {
            max_iter: or(m, "sinkhorn.max_iter", d.sinkhorn.max_iter)?,
            tol: or(m, "sinkhorn.tol", d.sinkhorn.tol)?,
            domain,
            eps_scaling,
            overrelax: or(m, "sinkhorn.overrelax", d.sinkhorn.overrelax)?,
            ..d.sinkhorn.clone()
        };
        let t = &d.train;
        let train = TrainConfig {
            loss: LossKind::Mse,
            epochs: or(m, "train.epochs", t.epochs)?,
            pretrain_epochs: or(m, "train.pretrain_epochs", t.pretrain_epochs)?,
            learning_rate: or(m, "train.lr", t.learning_rate)?,
            batch_size: or(m, "train.batch_size", t.batch_size)?,
            lambda: or(m, "train.lambda", t.lambda)?,
            patience: or(m, "train.patience", t.patience)?,
            lr_decay: or(m, "train.lr_decay", t.lr_decay)?,
            lr_patience: or(m, "train.lr_patience", t.lr_patience)?,
            val_fraction: or(m, "train.val_fraction", t.val_fraction)?,
            seed: or(m, "train.seed", t.seed)?,
        };
        let batch_sinkhorn = BatchSinkhorn {
            eps_rel: or(m, "train.sinkhorn_eps_rel", d.batch_sinkhorn.eps_rel)?,
            max_iter: or(m, "train.sinkhorn_max_iter", d.batch_sinkhorn.max_iter)?,
            tol: or(m, "train.sinkhorn_tol", d.batch_sinkhorn.tol)?,
        };
        if let Some(a) = m.get("arch.activation") {
            if a != "elu" {
                return Err(Error::InvalidParameter(format!("unsupported activation `{a}`")));
            }
        }
        let cfg = Self {
            n_s: or(m, "problem.n_s", d.n_s)?,
            train_rate: or(m, "split.rate", d.train_rate)?,
            split_seed: or(m, "split.seed", d.split_seed)?,
            k: or(m, "rom.k", d.k)?,
            kernel,
            sinkhorn,
            latent_scaling: match m.get("rom.latent_scaling") {
                Some(s) => LatentScaling::parse(s)?,
                None => d.latent_scaling,
            },
            train,
            batch_sinkhorn,
            arch: ArchOptions { keep: or(m, "arch.dropout_keep", d.arch.keep)?, ..d.arch },
            exec: d.exec,
        };
        cfg.kernel.validate()?;
        cfg.sinkhorn.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }
}

/// Keys understood by [`RomConfig::from_manifest`] and [`problem_from_manifest`].
pub const CONFIG_KEYS: &[&str] = &[
    "problem.kind",
    "problem.n_s",
    "problem.burgers_viscosity",
    "problem.burgers_final_time",
    "split.rate",
    "split.seed",
    "rom.k",
    "rom.latent_scaling",
    "kernel.kind",
    "kernel.eps_rel",
    "kernel.eps_abs",
    "kernel.sigma",
    "sinkhorn.max_iter",
    "sinkhorn.tol",
    "sinkhorn.domain",
    "sinkhorn.eps_scaling",
    "sinkhorn.overrelax",
    "train.epochs",
    "train.pretrain_epochs",
    "train.lr",
    "train.batch_size",
    "train.lambda",
    "train.patience",
    "train.lr_decay",
    "train.lr_patience",
    "train.val_fraction",
    "train.seed",
    "train.optimizer",
    "train.sinkhorn_eps_rel",
    "train.sinkhorn_max_iter",
    "train.sinkhorn_tol",
    "arch.activation",
    "arch.dropout_keep",
    "variant.reduction",
    "variant.arch",
    "variant.loss",
    "variant.mode",
];

fn or<T: FromStr>(m: &Manifest, key: &str, default: T) -> Result<T> {
    match m.get(key) {
        Some(_) => m.parse_value(key),
        None => Ok(default),
    }
}

fn domain_name(d: Domain) -> &'static str {
    match d {
        Domain::Auto => "auto",
        Domain::Direct => "direct",
        Domain::Log => "log",
    }
}

fn parse_domain(s: &str) -> Result<Domain> {
    match s {
        "auto" => Ok(Domain::Auto),
        "direct" => Ok(Domain::Direct),
        "log" => Ok(Domain::Log),
        o => Err(Error::InvalidParameter(format!("unknown sinkhorn domain `{o}`"))),
    }
}

pub fn describe_problem(p: &ProblemSpec, m: &mut Manifest) {
    m.set("problem.kind", p.kind.name());
    if let crate::pde::Physics::Burgers { viscosity, final_time, .. } = p.physics {
        m.set("problem.burgers_viscosity", viscosity);
        m.set("problem.burgers_final_time", final_time);
    }
}

pub fn problem_from_manifest(m: &Manifest) -> Result<ProblemSpec> {
    let kind = ProblemKind::parse(m.require("problem.kind")?)?;
    Ok(match kind {
        ProblemKind::Burgers => {
            let d = ProblemSpec::burgers();
            let (nu, t) = match d.physics {
                crate::pde::Physics::Burgers { viscosity, final_time, .. } => (viscosity, final_time),
                _ => unreachable!(),
            };
            ProblemSpec::burgers_with(or(m, "problem.burgers_viscosity", nu)?, or(m, "problem.burgers_final_time", t)?)
        }
        k => ProblemSpec::for_kind(k),
    })
}

pub fn describe_variant(v: &Variant, m: &mut Manifest) {
    m.set("variant.reduction", v.reduction.name());
    m.set("variant.arch", v.arch.name());
    m.set("variant.loss", v.loss.name());
    m.set("variant.mode", v.mode.name());
}

/// Variant from config keys; defaults to the kPOD CAE Sinkhorn autoencoder.
pub fn variant_from_manifest(m: &Manifest) -> Result<Variant> {
    Variant::new(
        Reduction::parse(m.get("variant.reduction").unwrap_or("kpod"))?,
        Architecture::parse(m.get("variant.arch").unwrap_or("cae"))?,
        LossChoice::parse(m.get("variant.loss").unwrap_or("sinkhorn"))?,
        Mode::parse(m.get("variant.mode").unwrap_or("autoencoder"))?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_tags_round_trip() {
        let grid = Variant::grid();
        assert_eq!(grid.len(), 16);
        for v in grid {
            assert_eq!(Variant::parse_tag(&v.tag()).unwrap(), v);
        }
        assert!(Variant::parse_tag("none-cae-mse-decoder").is_err());
        assert!(Variant::parse_tag("kpod-cae").is_err());
    }

    #[test]
    fn config_round_trips_through_a_manifest() {
        let mut c = RomConfig::for_problem(ProblemKind::Burgers);
        c.train.lambda = 0.25;
        c.kernel.epsilon = Epsilon::Absolute(2e-3);
        c.sinkhorn.eps_scaling = Some(0.5);
        let mut m = Manifest::new();
        c.describe(&mut m);
        let back = RomConfig::from_manifest(&Manifest::parse(&m.to_text()).unwrap(), ProblemKind::Burgers).unwrap();
        assert_eq!(back, c);
        for (k, _) in m.entries() {
            assert!(CONFIG_KEYS.contains(&k.as_str()), "{k}");
        }
    }

    #[test]
    fn defaults_follow_the_problem() {
        assert_eq!(RomConfig::for_problem(ProblemKind::Poisson).train_rate, 0.7);
        assert_eq!(RomConfig::for_problem(ProblemKind::Burgers).train_rate, 0.5);
        let base = RomConfig::for_problem(ProblemKind::Poisson);
        let v = Variant::new(Reduction::Unconstrained, Architecture::Cae, LossChoice::Mse, Mode::Autoencoder).unwrap();
        assert_eq!(base.train_config(&v).lambda, 0.0);
    }
}
