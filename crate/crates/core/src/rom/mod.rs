//! Reduced-order pipeline: dataset splits, the variant grid, offline
//! training, evaluation and baselines.

mod bundle;
mod config;
mod pipeline;

pub use bundle::{load_bundle, save_bundle, write_history_csv};
pub use config::{
    default_train_rate, describe_problem, describe_variant, problem_from_manifest, variant_from_manifest, Architecture, LatentScaling, LossChoice, Mode,
    Reduction, RomConfig, Variant, CONFIG_KEYS,
};
pub use pipeline::{
    build_dataset, dlrom_baseline, evaluate, generate_snapshots, l2_norm, max_grid_cost, plane_fit_r2, pod_projection_errors, reconstruct,
    reduce_training, relative_error, run_offline, split_dataset, split_indices, train_bundle, training_gram, Dataset, EvalReport, OfflineRun,
    ReductionModel, RomBundle, Split, TrainedNet,
};
