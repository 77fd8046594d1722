//! Baselines, evaluation under attack and parameter sweeps.

pub mod baseline;
pub mod evaluate;
pub mod sweep;

pub use baseline::{fair_fit_unrobust, ols_fit};
pub use evaluate::{
    evaluate_under_attack, fit_model, metrics, AttackCertificate, AttackScheme, Evaluation, Metrics, ModelKind,
};
pub use sweep::{load_dataset, run_sweep, DatasetSource, EtaMode, ExperimentConfig, Report, ReportRow};
