//! Fitted models and the diagnostics each solver attaches to them.

use nalgebra::DVector;
use serde::Serialize;

use crate::point_defense::QcqpDiagnostics;
use crate::rankone_defense::SaddleDiagnostics;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    PointDefense,
    RankoneDefense,
    Baseline,
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Qcqp(QcqpDiagnostics),
    Saddle(SaddleDiagnostics),
    None,
}

#[derive(Clone, Debug, Serialize)]
pub struct RobustModel {
    #[serde(with = "crate::serde_vec")]
    pub beta: DVector<f64>,
    /// Worst-case loss at `beta` for robust models; the clean loss for baselines.
    #[serde(rename = "value")]
    pub minimax_value: f64,
    pub source: ModelSource,
    pub diagnostics: Diagnostics,
}

impl RobustModel {
    pub fn qcqp(&self) -> Option<&QcqpDiagnostics> {
        match &self.diagnostics {
            Diagnostics::Qcqp(d) => Some(d),
            _ => None,
        }
    }

    pub fn saddle(&self) -> Option<&SaddleDiagnostics> {
        match &self.diagnostics {
            Diagnostics::Saddle(d) => Some(d),
            _ => None,
        }
    }
}
