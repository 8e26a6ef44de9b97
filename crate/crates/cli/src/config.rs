//! Run configuration: a flat `key=value` document plus command-line
//! overrides.

use std::path::{Path, PathBuf};

use otrom_core::io::{join, parse_list, Manifest};
use otrom_core::pde::{ProblemKind, ProblemSpec};
use otrom_core::rom::{describe_problem, describe_variant, problem_from_manifest, variant_from_manifest, RomConfig, Variant, CONFIG_KEYS};
use otrom_core::{Error, Result};

/// Keys read by the command layer, with their defaults. Path defaults are
/// derived from `paths.out` and the variant tag.
pub const CLI_KEYS: &[(&str, &str)] = &[
    ("threads", "0"),
    ("paths.out", "otrom-run"),
    ("paths.snapshots", "<out>/snapshots.otrom"),
    ("paths.gram", "<out>/gram.otrom"),
    ("paths.bundle", "<out>/bundle-<variant>"),
    ("paths.eval", "<bundle>/eval"),
    ("paths.barycenter", "<out>/barycenters.csv"),
    ("paths.report", "<out>/report.csv"),
    ("eval.fields", "worst"),
    ("eval.svg", "false"),
    ("barycenter.i", "0"),
    ("barycenter.j", "last"),
    ("barycenter.alphas", "0,0.25,0.5,0.75,1"),
    ("barycenter.eps_rel", "0.001"),
    ("report.evals", "<eval>"),
    ("report.wall_time", "false"),
];

fn known(key: &str) -> bool {
    CONFIG_KEYS.contains(&key) || CLI_KEYS.iter().any(|(k, _)| *k == key)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Gram,
    Train,
    Eval,
    Barycenter,
    Report,
}

impl Command {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "generate" => Command::Generate,
            "gram" => Command::Gram,
            "train" => Command::Train,
            "eval" => Command::Eval,
            "barycenter" => Command::Barycenter,
            "report" => Command::Report,
            other => return Err(Error::InvalidParameter(format!("unknown command `{other}`"))),
        })
    }
}

/// User-supplied settings; anything unset takes its default when read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    values: Manifest,
}

impl RunConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_manifest(m: &Manifest) -> Result<Self> {
        let mut c = Self::new();
        for (k, v) in m.entries() {
            c.set(k, v)?;
        }
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_manifest(&Manifest::read(path)?)
    }

    /// Sets a key; unknown keys are rejected so typos do not pass silently.
    pub fn set(&mut self, key: &str, value: impl std::fmt::Display) -> Result<()> {
        if !known(key) {
            return Err(Error::InvalidParameter(format!("unknown config key `{key}`")));
        }
        self.values.set(key, value);
        Ok(())
    }

    /// The explicitly set keys.
    pub fn values(&self) -> &Manifest {
        &self.values
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key)
    }

    fn value(&self, key: &str) -> String {
        match self.values.get(key) {
            Some(v) => v.to_string(),
            None => CLI_KEYS.iter().find(|(k, _)| *k == key).map(|(_, d)| d.to_string()).unwrap_or_default(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.value(key);
        v.parse().map_err(|_| Error::InvalidParameter(format!("cannot parse `{key}` = `{v}`")))
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.parse(key)
    }

    pub fn usize(&self, key: &str) -> Result<usize> {
        self.parse(key)
    }

    pub fn f64(&self, key: &str) -> Result<f64> {
        self.parse(key)
    }

    pub fn list<T: std::str::FromStr>(&self, key: &str) -> Result<Vec<T>> {
        parse_list(&self.value(key))
    }

    pub fn threads(&self) -> Result<usize> {
        self.usize("threads")
    }

    pub fn problem_kind(&self) -> Result<ProblemKind> {
        ProblemKind::parse(self.get("problem.kind").unwrap_or("poisson"))
    }

    pub fn problem(&self) -> Result<ProblemSpec> {
        let mut m = self.values.clone();
        m.set("problem.kind", self.problem_kind()?.name());
        problem_from_manifest(&m)
    }

    pub fn rom(&self) -> Result<RomConfig> {
        RomConfig::from_manifest(&self.values, self.problem_kind()?)
    }

    pub fn variant(&self) -> Result<Variant> {
        variant_from_manifest(&self.values)
    }

    /// Resolved value of a `paths.*` key.
    pub fn path(&self, key: &str) -> Result<PathBuf> {
        let out = self.value("paths.out");
        let v = self.value(key);
        if v.contains("<bundle>") {
            return Ok(PathBuf::from(v.replace("<bundle>", &self.path("paths.bundle")?.to_string_lossy())));
        }
        if v.contains("<variant>") {
            return Ok(PathBuf::from(v.replace("<out>", &out).replace("<variant>", &self.variant()?.tag())));
        }
        Ok(PathBuf::from(v.replace("<out>", &out)))
    }

    /// Evaluation directories listed for `report`.
    pub fn report_evals(&self) -> Result<Vec<PathBuf>> {
        let v = self.value("report.evals");
        if v == "<eval>" {
            return Ok(vec![self.path("paths.eval")?]);
        }
        Ok(v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(PathBuf::from).collect())
    }

    /// Every setting with defaults filled in, for run manifests.
    pub fn resolved(&self) -> Result<Manifest> {
        let mut m = Manifest::new();
        let problem = self.problem()?;
        describe_problem(&problem, &mut m);
        self.rom()?.describe(&mut m);
        describe_variant(&self.variant()?, &mut m);
        for (k, _) in CLI_KEYS {
            let v = if k.starts_with("paths.") {
                self.path(k)?.to_string_lossy().into_owned()
            } else if *k == "report.evals" {
                join(&self.report_evals()?.iter().map(|p| p.to_string_lossy().into_owned()).collect::<Vec<_>>())
            } else {
                self.value(k)
            };
            m.set(k, v);
        }
        Ok(m)
    }
}

/// Parses `<command> [--config FILE] [--threads N] [--key value | --key=value]...`.
pub fn parse_args<S: AsRef<str>>(args: &[S]) -> Result<(Command, RunConfig)> {
    let mut it = args.iter().map(AsRef::as_ref);
    let cmd = Command::parse(it.next().ok_or_else(|| Error::InvalidParameter(usage().into()))?)?;
    let mut overrides = Vec::new();
    let mut file = None;
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::InvalidParameter(format!("unexpected argument `{a}`")))?;
        let (key, value) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::InvalidParameter(format!("`--{key}` needs a value")))?;
                (key.to_string(), v.to_string())
            }
        };
        if key == "config" {
            file = Some(PathBuf::from(value));
        } else {
            overrides.push((key, value));
        }
    }
    let mut cfg = match file {
        Some(f) => RunConfig::from_file(&f)?,
        None => RunConfig::new(),
    };
    for (k, v) in overrides {
        cfg.set(&k, v)?;
    }
    Ok((cmd, cfg))
}

pub fn usage() -> &'static str {
    "usage: otrom generate|gram|train|eval|barycenter|report [--config FILE] [--threads N] [--key value]..."
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_the_file() {
        let dir = std::env::temp_dir().join(format!("otrom-cfg-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let f = dir.join("run.cfg");
        std::fs::write(&f, "# comment\nrom.k=4\ntrain.epochs=10\n").unwrap();
        let args = ["train", "--config", f.to_str().unwrap(), "--rom.k", "6", "--threads=1"];
        let (cmd, cfg) = parse_args(&args).unwrap();
        assert_eq!(cmd, Command::Train);
        assert_eq!(cfg.rom().unwrap().k, 6);
        assert_eq!(cfg.rom().unwrap().train.epochs, 10);
        assert_eq!(cfg.threads().unwrap(), 1);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_keys_and_commands_fail() {
        assert!(parse_args(&["train", "--train.epoch", "3"]).is_err());
        assert!(parse_args(&["fit"]).is_err());
        assert!(parse_args(&["eval", "stray"]).is_err());
        assert!(parse_args(&["eval", "--rom.k"]).is_err());
        assert!(parse_args::<&str>(&[]).is_err());
    }

    #[test]
    fn paths_follow_out_and_variant() {
        let mut c = RunConfig::new();
        c.set("paths.out", "/tmp/x").unwrap();
        c.set("variant.arch", "ff").unwrap();
        assert_eq!(c.path("paths.snapshots").unwrap(), PathBuf::from("/tmp/x/snapshots.otrom"));
        assert_eq!(c.path("paths.bundle").unwrap(), PathBuf::from("/tmp/x/bundle-kpod-ff-sinkhorn-autoencoder"));
        assert_eq!(c.path("paths.eval").unwrap(), PathBuf::from("/tmp/x/bundle-kpod-ff-sinkhorn-autoencoder/eval"));
        assert_eq!(c.report_evals().unwrap(), vec![c.path("paths.eval").unwrap()]);
    }

    #[test]
    fn resolved_config_lists_every_default() {
        let m = RunConfig::new().resolved().unwrap();
        for k in ["problem.kind", "train.epochs", "train.pretrain_epochs", "kernel.eps_rel", "paths.gram", "eval.svg"] {
            assert!(m.get(k).is_some(), "{k}");
        }
        assert_eq!(m.get("train.epochs"), Some("1000"));
        let back = RunConfig::from_manifest(&m).unwrap();
        assert_eq!(back.rom().unwrap().train, RunConfig::new().rom().unwrap().train);
    }
}
