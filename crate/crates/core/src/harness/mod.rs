//! Experiment orchestration: configuration, training runs, sweeps and CSV reports.

pub mod config;
pub mod eval;
pub mod report;
pub mod run;

pub use config::{load_dataset, prepare, DatasetConfig, DatasetSource, ExperimentConfig, Prepared, SweepConfig};
pub use eval::{
    attack_eval, run_baseline_raw_features, run_channel_generalization, run_epsilon_sweep, run_snr_sweep,
    symbols_per_image, EvalRecord, EvalReport, EvalSet, PointScore, ReportKind,
};
pub use report::{emit_overhead, emit_report, emit_ser, overhead_rows, OverheadRow};
pub use run::{finetune, pretrain, train_classifier, train_variants, Trained};
