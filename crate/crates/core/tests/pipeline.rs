use otrom_core::measures::GridGeometry;
use otrom_core::pde::{ProblemKind, ProblemSpec};
use otrom_core::rom::{
    dlrom_baseline, evaluate, load_bundle, run_offline, save_bundle, Architecture, LossChoice, Mode, Reduction,
    RomConfig, Variant,
};

fn small_poisson() -> ProblemSpec {
    let mut p = ProblemSpec::poisson();
    p.grid = GridGeometry::unit(16, 16).unwrap();
    p
}

fn small_config() -> RomConfig {
    let mut cfg = RomConfig::for_problem(ProblemKind::Poisson);
    cfg.n_s = 16;
    cfg.k = 3;
    cfg.train.epochs = 4;
    cfg.train.pretrain_epochs = 2;
    cfg.train.batch_size = 4;
    cfg
}

fn temp_dir(name: &str) -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("otrom-pipeline-{}-{name}", std::process::id()));
    let _ = std::fs::remove_dir_all(&d);
    d
}

#[test]
fn bundles_survive_a_save_load_cycle() {
    let p = small_poisson();
    let cfg = small_config();
    for tag in ["kpod-cae-sinkhorn-autoencoder", "pod-ff-mse-decoder", "kpod-ff-mse-decoder"] {
        let v = Variant::parse_tag(tag).unwrap();
        let run = run_offline(&p, v, &cfg).unwrap();
        let dir = temp_dir(tag);
        save_bundle(&run.bundle, &dir).unwrap();
        let back = load_bundle(&dir, &p.grid).unwrap();
        assert_eq!(back.manifest, run.bundle.manifest, "{tag}");
        assert_eq!(back.variant, run.bundle.variant);
        assert_eq!(back.split, run.bundle.split);
        assert_eq!(back.history.train, run.bundle.history.train);
        let test = run.dataset.test();
        let a = evaluate(&run.bundle, &test).unwrap();
        let b = evaluate(&back, &test).unwrap();
        assert_eq!(a.per_sample_eps, b.per_sample_eps, "{tag}");
        save_bundle(&back, &dir.join("again")).unwrap();
        for f in ["manifest.txt", "decoder.otrom", "history.csv"] {
            assert_eq!(std::fs::read(dir.join(f)).unwrap(), std::fs::read(dir.join("again").join(f)).unwrap(), "{f}");
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}

#[test]
fn offline_runs_are_reproducible() {
    let p = small_poisson();
    let cfg = small_config();
    let v = Variant::new(Reduction::Kpod, Architecture::Ff, LossChoice::Sinkhorn, Mode::Autoencoder).unwrap();
    let a = run_offline(&p, v, &cfg).unwrap();
    let b = run_offline(&p, v, &cfg).unwrap();
    assert_eq!(a.bundle.history.train, b.bundle.history.train);
    assert_eq!(a.gram.unwrap().entries, b.gram.unwrap().entries);
    let ea = evaluate(&a.bundle, &a.dataset.test()).unwrap();
    let eb = evaluate(&b.bundle, &b.dataset.test()).unwrap();
    assert_eq!(ea, eb);
}

#[test]
fn baseline_records_a_disabled_latent_penalty() {
    let p = small_poisson();
    let run = dlrom_baseline(&p, &small_config()).unwrap();
    assert_eq!(run.bundle.manifest.get("variant.reduction"), Some("none"));
    assert_eq!(run.bundle.manifest.parse_value::<f64>("train.lambda_effective").unwrap(), 0.0);
    assert!(run.gram.is_none());
    assert_eq!(run.bundle.history.train, run.bundle.history.reconstruction);
}

#[test]
fn overfit_bundle_error_is_bounded_by_its_training_loss() {
    let p = small_poisson();
    let mut cfg = small_config();
    cfg.n_s = 9;
    cfg.train.epochs = 300;
    cfg.train.patience = 300;
    cfg.train.val_fraction = 0.0;
    cfg.arch.keep = 1.0;
    let v = Variant::parse_tag("pod-ff-mse-decoder").unwrap();
    let run = run_offline(&p, v, &cfg).unwrap();
    let train = run.dataset.train();
    let r = evaluate(&run.bundle, &train).unwrap();
    // Without a holdout the validation loss is the eval-mode MSE over the
    // training set at the restored weights.
    let h = &run.bundle.history;
    let loss = h.validation[h.best_epoch];
    let min_norm = (0..train.n_s())
        .map(|j| train.column(j).iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(f64::INFINITY, f64::min);
    let bound = loss.sqrt() / run.bundle.scale / min_norm;
    assert!(r.mean_eps <= bound * (1.0 + 1e-9), "{} > {bound}", r.mean_eps);
    assert!(r.mean_eps < 0.5);
}
