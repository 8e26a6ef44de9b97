//! The six pipeline commands. Each returns a short human-readable summary.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use otrom_core::io::{grid_csv, join, write_csv, Container, Manifest};
use otrom_core::kpod::{gram_spectrum, kernel_basis, pod_spectrum, GramMatrix, SnapshotMatrix};
use otrom_core::measures::normalize_field;
use otrom_core::pde::ProblemSpec;
use otrom_core::rom::{
    describe_problem, evaluate, generate_snapshots, load_bundle, max_grid_cost, problem_from_manifest, reduce_training,
    save_bundle, split_dataset, train_bundle, training_gram, Architecture, LossChoice, Mode, Reduction, Split, Variant,
};
use otrom_core::sinkhorn::{entropic_barycenter_grid, Epsilon};
use otrom_core::{Error, Result};

use crate::config::{Command, RunConfig};
use crate::svg;

/// Runs `cmd`, inside a pool of `threads` workers when that key is nonzero.
pub fn run(cmd: Command, cfg: &RunConfig) -> Result<String> {
    let threads = cfg.threads()?;
    let go = || match cmd {
        Command::Generate => generate(cfg),
        Command::Gram => gram(cfg),
        Command::Train => train(cfg),
        Command::Eval => eval(cfg),
        Command::Barycenter => barycenter(cfg),
        Command::Report => report(cfg),
    };
    if threads > 0 {
        otrom_core::parallel::with_threads(threads, go)
    } else {
        go()
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p)?;
    }
    Ok(())
}

fn manifest_path(file: &Path) -> PathBuf {
    file.with_extension("manifest.txt")
}

fn spectrum_path(gram: &Path, which: &str) -> PathBuf {
    gram.with_file_name(format!("spectrum_{which}.csv"))
}

fn read_snapshots(path: &Path, problem: &ProblemSpec) -> Result<SnapshotMatrix> {
    let c = Container::read(path).map_err(|e| e.in_stage("reading snapshots"))?;
    c.to_snapshots(&problem.grid)
}

fn split_of(s: &SnapshotMatrix, cfg: &RunConfig) -> Result<Split> {
    let rom = cfg.rom()?;
    split_dataset(s, rom.train_rate, rom.split_seed)
}

fn split_keys(m: &mut Manifest, split: &Split) {
    m.set("split.train", join(&split.train));
    m.set("split.test", join(&split.test));
}

pub fn generate(cfg: &RunConfig) -> Result<String> {
    let problem = cfg.problem()?;
    let rom = cfg.rom()?;
    let t0 = Instant::now();
    let s = generate_snapshots(&problem, &rom)?;
    let dt = t0.elapsed().as_secs_f64();
    let path = cfg.path("paths.snapshots")?;
    ensure_parent(&path)?;
    Container::from_snapshots(&s).write(&path)?;
    let mut m = cfg.resolved()?;
    m.set("snapshots.n_h", s.n_h());
    m.set("snapshots.n_s", s.n_s());
    m.set("time.generate_s", dt);
    m.write(&manifest_path(&path))?;
    Ok(format!("generated {}: N_h={} N_s={} in {dt:.2}s", path.display(), s.n_h(), s.n_s()))
}

pub fn gram(cfg: &RunConfig) -> Result<String> {
    let problem = cfg.problem()?;
    let rom = cfg.rom()?;
    let s = read_snapshots(&cfg.path("paths.snapshots")?, &problem)?;
    let split = split_of(&s, cfg)?;
    let train = s.select(&split.train);
    let t0 = Instant::now();
    let g = training_gram(&train, &rom)?;
    let dt = t0.elapsed().as_secs_f64();
    let path = cfg.path("paths.gram")?;
    ensure_parent(&path)?;
    Container::from_matrix(&g.entries).write(&path)?;
    let spectra = [("kpod", gram_spectrum(&g)?), ("pod", pod_spectrum(&train)?)];
    for (name, values) in &spectra {
        let rows: Vec<Vec<String>> = values.iter().enumerate().map(|(i, v)| vec![(i + 1).to_string(), v.to_string()]).collect();
        write_csv(&spectrum_path(&path, name), &["index", "value"], &rows)?;
    }
    let mut m = cfg.resolved()?;
    split_keys(&mut m, &split);
    m.set("kernel.eps_resolved", rom.kernel.epsilon.resolve(max_grid_cost(&problem.grid)));
    m.set("gram.n", g.n());
    m.set("time.gram_s", dt);
    m.write(&manifest_path(&path))?;
    Ok(format!("gram {}: {}x{} in {dt:.2}s", path.display(), g.n(), g.n()))
}

/// Reads the Gram file written by `gram`, checking it matches the current
/// split and kernel.
fn load_gram(cfg: &RunConfig, train: &SnapshotMatrix, split: &Split) -> Result<GramMatrix> {
    let rom = cfg.rom()?;
    let path = cfg.path("paths.gram")?;
    if !path.exists() {
        return Err(Error::InvalidParameter(format!("no Gram matrix at {}; run `otrom gram` first", path.display())).in_stage("train"));
    }
    let m = Manifest::read(&manifest_path(&path))?;
    let mut expect = cfg.resolved()?;
    split_keys(&mut expect, split);
    for key in ["problem.kind", "split.train", "kernel.kind", "kernel.eps_rel", "kernel.eps_abs", "kernel.sigma", "sinkhorn.tol", "sinkhorn.max_iter"] {
        if m.get(key) != expect.get(key) {
            return Err(Error::InvalidParameter(format!("{} was computed with a different `{key}`; rerun `otrom gram`", path.display())));
        }
    }
    let c = Container::read(&path)?;
    if c.n_h != train.n_s() || c.n_s != train.n_s() {
        return Err(Error::DimensionMismatch(format!("Gram is {}x{} for {} training snapshots", c.n_h, c.n_s, train.n_s())));
    }
    let basis = kernel_basis(train, &rom.kernel, &rom.sinkhorn, rom.exec)?;
    Ok(GramMatrix { entries: c.to_matrix(), kernel: rom.kernel, basis })
}

pub fn train(cfg: &RunConfig) -> Result<String> {
    let problem = cfg.problem()?;
    let rom = cfg.rom()?;
    let variant = cfg.variant()?;
    let s = read_snapshots(&cfg.path("paths.snapshots")?, &problem)?;
    let split = split_of(&s, cfg)?;
    let train = s.select(&split.train);
    let gram = match variant.reduction {
        Reduction::Kpod => Some(load_gram(cfg, &train, &split)?),
        _ => None,
    };
    let t0 = Instant::now();
    let (model, z) = reduce_training(&train, variant.reduction, gram.as_ref(), &rom)?;
    let t_red = t0.elapsed().as_secs_f64();
    let mut b = train_bundle(&train, &split, model, z, variant, &rom)?;
    describe_problem(&problem, &mut b.manifest);
    b.manifest.extend(&cfg.resolved()?);
    b.manifest.set("time.reduction_s", t_red);
    let dir = cfg.path("paths.bundle")?;
    save_bundle(&b, &dir)?;
    let h = &b.history;
    Ok(format!(
        "trained {} into {}: {} epochs, best epoch {} (validation {:.4e}){}",
        variant.tag(),
        dir.display(),
        h.train.len(),
        h.best_epoch,
        h.validation.get(h.best_epoch).copied().unwrap_or(f64::NAN),
        if h.stopped_early { ", stopped early" } else { "" }
    ))
}

pub fn eval(cfg: &RunConfig) -> Result<String> {
    let dir = cfg.path("paths.bundle")?;
    let bm = Manifest::read(&dir.join("manifest.txt")).map_err(|e| e.in_stage("reading bundle"))?;
    let problem = problem_from_manifest(&bm)?;
    let bundle = load_bundle(&dir, &problem.grid)?;
    let s = read_snapshots(&cfg.path("paths.snapshots")?, &problem)?;
    if bundle.split.test.iter().chain(&bundle.split.train).any(|&j| j >= s.n_s()) {
        return Err(Error::DimensionMismatch("bundle split does not fit the snapshot container".into()));
    }
    let test = s.select(&bundle.split.test);
    let r = evaluate(&bundle, &test)?;
    let out = cfg.path("paths.eval")?;
    fs::create_dir_all(&out)?;

    let pd = s.param_dim();
    let mut header: Vec<String> = vec!["index".into()];
    header.extend((1..=pd).map(|d| format!("mu_{d}")));
    header.push("eps".into());
    let rows: Vec<Vec<String>> = bundle
        .split
        .test
        .iter()
        .zip(&r.params)
        .zip(&r.per_sample_eps)
        .map(|((j, mu), e)| {
            let mut row = vec![j.to_string()];
            row.extend(mu.iter().map(f64::to_string));
            row.push(e.to_string());
            row
        })
        .collect();
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&out.join("eps.csv"), &header_refs, &rows)?;

    let (worst_pos, worst) = r
        .per_sample_eps
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, e)| if *e > acc.1 { (i, *e) } else { acc });
    let mut summary = Manifest::new();
    summary.set("bundle", dir.display());
    summary.set("problem.kind", problem.kind.name());
    summary.set("variant.reduction", bundle.variant.reduction.name());
    summary.set("variant.arch", bundle.variant.arch.name());
    summary.set("variant.loss", bundle.variant.loss.name());
    summary.set("variant.mode", bundle.variant.mode.name());
    summary.set("rom.k", bundle.reduction.k());
    summary.set("n_test", test.n_s());
    summary.set("mean_eps", r.mean_eps);
    summary.set("max_eps", worst);
    summary.set("max_eps_index", bundle.split.test[worst_pos]);
    summary.write(&out.join("summary.txt"))?;

    let fields = match cfg.get("eval.fields").unwrap_or("worst") {
        "worst" => vec![worst_pos],
        "all" => (0..test.n_s()).collect(),
        "none" => vec![],
        list => otrom_core::io::parse_list::<usize>(list)?
            .into_iter()
            .map(|j| {
                bundle.split.test.iter().position(|t| *t == j).ok_or_else(|| {
                    Error::InvalidParameter(format!("eval.fields: snapshot {j} is not in the test set"))
                })
            })
            .collect::<Result<_>>()?,
    };
    let svg_on = cfg.flag("eval.svg")?;
    if !fields.is_empty() {
        fs::create_dir_all(out.join("fields"))?;
    }
    let nx = problem.grid.nx();
    for pos in fields {
        let j = bundle.split.test[pos];
        let f = &r.error_fields[pos];
        fs::write(out.join("fields").join(format!("delta_{j}.csv")), grid_csv(f, nx))?;
        if svg_on {
            let title = format!("relative error, snapshot {j}, eps = {:.4e}", r.per_sample_eps[pos]);
            fs::write(out.join("fields").join(format!("delta_{j}.svg")), svg::heatmap(f, nx, &title))?;
        }
    }
    Ok(format!("evaluated {} on {} test snapshots: mean eps {:.4e}, max {:.4e} (snapshot {})", bundle.variant.tag(), test.n_s(), r.mean_eps, worst, bundle.split.test[worst_pos]))
}

pub fn barycenter(cfg: &RunConfig) -> Result<String> {
    let problem = cfg.problem()?;
    let rom = cfg.rom()?;
    let s = read_snapshots(&cfg.path("paths.snapshots")?, &problem)?;
    let n = s.n_s();
    let i = cfg.usize("barycenter.i")?;
    let j = match cfg.get("barycenter.j").unwrap_or("last") {
        "last" => n.checked_sub(1).ok_or_else(|| Error::InvalidParameter("empty container".into()))?,
        _ => cfg.usize("barycenter.j")?,
    };
    if i >= n || j >= n {
        return Err(Error::InvalidParameter(format!("barycenter indices ({i}, {j}) out of range for {n} snapshots")));
    }
    let alphas: Vec<f64> = cfg.list("barycenter.alphas")?;
    if alphas.is_empty() || alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidParameter("barycenter.alphas must be values in [0, 1]".into()));
    }
    let wi = normalize_field(&s.field(i))?.weights().to_vec();
    let wj = normalize_field(&s.field(j))?.weights().to_vec();
    let params = rom.sinkhorn.clone().with_epsilon(Epsilon::RelativeToMax(cfg.f64("barycenter.eps_rel")?));
    let g = s.geometry();
    let bars = alphas
        .iter()
        .map(|a| entropic_barycenter_grid(g, &[&wi, &wj], &[1.0 - a, *a], &params))
        .collect::<Result<Vec<_>>>()?;
    let mut header = vec!["node".to_string(), "x".into(), "y".into()];
    header.extend(alphas.iter().map(|a| format!("alpha_{a}")));
    let nx = g.nx();
    let rows: Vec<Vec<String>> = (0..g.len())
        .map(|k| {
            let mut row = vec![k.to_string(), g.xs()[k % nx].to_string(), g.ys()[k / nx].to_string()];
            row.extend(bars.iter().map(|b| b[k].to_string()));
            row
        })
        .collect();
    let path = cfg.path("paths.barycenter")?;
    ensure_parent(&path)?;
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(&path, &header_refs, &rows)?;
    Ok(format!("barycenters of snapshots {i} and {j} at {} weights written to {}", alphas.len(), path.display()))
}

fn variant_rank(v: &Variant) -> (usize, usize, usize, usize) {
    let mode = [Mode::Autoencoder, Mode::Decoder].iter().position(|m| *m == v.mode).unwrap_or(9);
    let arch = [Architecture::Cae, Architecture::Ff].iter().position(|a| *a == v.arch).unwrap_or(9);
    let loss = [LossChoice::Sinkhorn, LossChoice::Mse].iter().position(|l| *l == v.loss).unwrap_or(9);
    let red = [Reduction::Kpod, Reduction::Pod, Reduction::Unconstrained].iter().position(|r| *r == v.reduction).unwrap_or(9);
    (mode, arch, loss, red)
}

pub fn report(cfg: &RunConfig) -> Result<String> {
    let dirs = cfg.report_evals()?;
    if dirs.is_empty() {
        return Err(Error::InvalidParameter("report.evals lists no evaluation directories".into()));
    }
    let wall = cfg.flag("report.wall_time")?;
    let mut rows = Vec::new();
    for d in &dirs {
        let p = d.join("summary.txt");
        if !p.exists() {
            return Err(Error::InvalidParameter(format!("missing bundle evaluation {}; run `otrom eval` first", p.display())));
        }
        let m = Manifest::read(&p)?;
        let v = Variant::new(
            Reduction::parse(m.require("variant.reduction")?)?,
            Architecture::parse(m.require("variant.arch")?)?,
            LossChoice::parse(m.require("variant.loss")?)?,
            Mode::parse(m.require("variant.mode")?)?,
        )?;
        let mut row = vec![
            m.require("problem.kind")?.to_string(),
            v.mode.name().to_string(),
            v.arch.name().to_string(),
            v.loss.name().to_string(),
            v.reduction.name().to_string(),
            m.require("rom.k")?.to_string(),
            m.require("n_test")?.to_string(),
            m.require("mean_eps")?.to_string(),
        ];
        if wall {
            let bm = Manifest::read(&Path::new(m.require("bundle")?).join("manifest.txt"))?;
            row.push(bm.get("time.train_s").unwrap_or("nan").to_string());
        }
        rows.push((m.require("problem.kind")?.to_string(), variant_rank(&v), row));
    }
    rows.sort_by(|a, b| (&a.0, a.1).cmp(&(&b.0, b.1)));
    let mut header = vec!["problem", "mode", "architecture", "loss", "reduction", "k", "n_test", "mean_eps"];
    if wall {
        header.push("train_time_s");
    }
    let path = cfg.path("paths.report")?;
    ensure_parent(&path)?;
    let n = rows.len();
    write_csv(&path, &header, &rows.into_iter().map(|r| r.2).collect::<Vec<_>>())?;
    Ok(format!("report with {n} rows written to {}", path.display()))
}
