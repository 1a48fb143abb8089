//! Training with the detached loss schedule, evaluation, stream fusion,
//! reports and the synthetic dataset generator.

mod config;
mod data;
mod eval;
mod synth;
mod trainer;

pub use config::{
    AugmentSection, BackboneSection, DataSection, EvalSection, KeyInfo, LossSection,
    MixupSection, OptimSection, ReverseSection, RunSection, ScheduleSection, TrainConfig,
};
pub use data::Dataset;
pub use eval::{
    ensemble, evaluate, evaluate_checkpoint, evaluate_with, metrics, read_report, report_csv,
    report_json, write_reports, EnsemblePreset, Evaluation, GroupAccuracy, MetricsReport,
};
pub use synth::{generate_synthetic, synthesize, SyntheticData, SyntheticPaths, SyntheticSpec};
pub use trainer::{fit, train, EpochLog, InputNorm, Model, TrainArtifacts, Weights};
