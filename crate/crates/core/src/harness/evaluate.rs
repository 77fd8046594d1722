//! Fitting the compared models and scoring them against the attack optimized for each.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model::{Diagnostics, ModelSource, RobustModel};
use crate::objective::{fairness_gap, mse, objective_l, r_squared, TradeoffConfig};
use crate::point_attack::{apply_point, best_point, PointMode};
use crate::point_defense::robust_fit_point;
use crate::rankone_attack::{apply_rankone, best_rankone};
use crate::rankone_defense::{robust_fit_rankone, RankOneOptions};

use super::baseline::{fair_fit_unrobust, ols_fit};

/// Relative tolerance for an attack's value to count as reproduced on the poisoned data.
pub const CERTIFICATE_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackScheme {
    Point,
    Rankone,
}

impl fmt::Display for AttackScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackScheme::Point => "point",
            AttackScheme::Rankone => "rankone",
        })
    }
}

impl FromStr for AttackScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(AttackScheme::Point),
            "rankone" => Ok(AttackScheme::Rankone),
            _ => Err(Error::validation(format!("unknown attack scheme `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Ols,
    FairUnrobust,
    RobustPoint,
    RobustRankone,
}

impl ModelKind {
    /// Robust model defending against `scheme`.
    pub fn robust_for(scheme: AttackScheme) -> Self {
        match scheme {
            AttackScheme::Point => ModelKind::RobustPoint,
            AttackScheme::Rankone => ModelKind::RobustRankone,
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Ols => "ols",
            ModelKind::FairUnrobust => "fair_unrobust",
            ModelKind::RobustPoint => "robust_point",
            ModelKind::RobustRankone => "robust_rankone",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ols" => Ok(ModelKind::Ols),
            "fair_unrobust" => Ok(ModelKind::FairUnrobust),
            "robust_point" => Ok(ModelKind::RobustPoint),
            "robust_rankone" => Ok(ModelKind::RobustRankone),
            _ => Err(Error::validation(format!("unknown model `{s}`"))),
        }
    }
}

/// Fits one model. Baselines report their clean loss as `minimax_value`.
pub fn fit_model(kind: ModelKind, ds: &Dataset, cfg: &TradeoffConfig, opts: &RankOneOptions) -> Result<RobustModel> {
    cfg.validate()?;
    let baseline = |beta: DVector<f64>| -> Result<RobustModel> {
        Ok(RobustModel {
            minimax_value: objective_l(&beta, ds, cfg)?,
            beta,
            source: ModelSource::Baseline,
            diagnostics: Diagnostics::None,
        })
    };
    match kind {
        ModelKind::Ols => baseline(ols_fit(ds)),
        ModelKind::FairUnrobust => baseline(fair_fit_unrobust(ds, cfg.lambda)?),
        ModelKind::RobustPoint => robust_fit_point(ds, cfg),
        ModelKind::RobustRankone => robust_fit_rankone(ds, cfg, opts),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mse: f64,
    pub gap: f64,
    pub r2: f64,
}

pub fn metrics(beta: &DVector<f64>, ds: &Dataset) -> Result<Metrics> {
    Ok(Metrics {
        mse: mse(beta, ds)?,
        gap: fairness_gap(beta, ds)?,
        r2: r_squared(beta, ds)?,
    })
}

/// Attack summary attached to every poisoned metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackCertificate {
    pub scheme: AttackScheme,
    /// `point:<surrogate>:<mode>` or `rankone:<branch>`.
    pub attack_id: String,
    /// Worst-case value the attack module claims.
    pub claimed_value: f64,
    /// Loss of the model on the poisoned data.
    pub poisoned_value: f64,
    pub reproduced: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub clean: Metrics,
    pub poisoned: Metrics,
    pub certificate: AttackCertificate,
}

/// Builds the optimal attack against `beta`, applies it and scores both datasets.
pub fn evaluate_under_attack(
    beta: &DVector<f64>,
    ds: &Dataset,
    cfg: &TradeoffConfig,
    scheme: AttackScheme,
) -> Result<Evaluation> {
    let (poisoned, attack_id, claimed) = match scheme {
        AttackScheme::Point => {
            let pt = best_point(beta, ds, cfg)?;
            let mode = match pt.mode {
                PointMode::Aligned => "aligned",
                PointMode::Orthogonal => "orthogonal",
            };
            (apply_point(ds, &pt)?, format!("point:{}:{mode}", pt.branch), pt.achieved_value)
        }
        AttackScheme::Rankone => {
            let atk = best_rankone(beta, ds, cfg)?;
            (apply_rankone(ds, &atk)?, format!("rankone:{}", atk.branch), atk.profile_value)
        }
    };
    let poisoned_value = objective_l(beta, &poisoned, cfg)?;
    let reproduced = (poisoned_value - claimed).abs() <= CERTIFICATE_TOL * (1.0 + claimed.abs());
    Ok(Evaluation {
        clean: metrics(beta, ds)?,
        poisoned: metrics(beta, &poisoned)?,
        certificate: AttackCertificate {
            scheme,
            attack_id,
            claimed_value: claimed,
            poisoned_value,
            reproduced,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthParams};

    fn desk(seed: u64) -> Dataset {
        synth_generate(&SynthParams {
            m: 6,
            n2: 6,
            p: 3,
            beta01: vec![1.0, -0.5, 0.8],
            beta02: vec![0.6, 0.2, -0.4],
            group1_offset: vec![0.5],
            noise_std: 0.3,
            feature_low: -1.0,
            feature_high: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn vanishing_budget_leaves_metrics_nearly_unchanged() {
        let ds = desk(1);
        let beta = ols_fit(&ds);
        let cfg = TradeoffConfig::new(0.5, 1e-9).unwrap();
        let ev = evaluate_under_attack(&beta, &ds, &cfg, AttackScheme::Rankone).unwrap();
        assert!((ev.clean.mse - ev.poisoned.mse).abs() < 1e-8);
        assert!((ev.clean.gap - ev.poisoned.gap).abs() < 1e-8);
        // the inserted point only reweights: n·MSE/(n+1) up to O(η²)
        let ev = evaluate_under_attack(&beta, &ds, &cfg, AttackScheme::Point).unwrap();
        let n = ds.n() as f64;
        assert!((ev.poisoned.mse - ev.clean.mse * n / (n + 1.0)).abs() < 1e-8);
        assert!(ev.certificate.reproduced);
    }

    #[test]
    fn certificates_reproduce() {
        for seed in 0..5 {
            let ds = desk(seed);
            let cfg = TradeoffConfig::new(0.3 * seed as f64, 0.8).unwrap();
            let beta = fair_fit_unrobust(&ds, cfg.lambda).unwrap();
            for scheme in [AttackScheme::Point, AttackScheme::Rankone] {
                let ev = evaluate_under_attack(&beta, &ds, &cfg, scheme).unwrap();
                assert!(ev.certificate.reproduced, "{scheme} {:?}", ev.certificate);
                assert!(ev.poisoned.r2 <= 1.0 && ev.clean.r2 <= 1.0);
            }
        }
    }

    #[test]
    fn perfect_fit_has_unit_r2() {
        let ds = desk(2);
        let beta = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let y = ds.features() * &beta;
        let exact = Dataset::new(ds.features().clone(), y, ds.m()).unwrap();
        assert_eq!(metrics(&beta, &exact).unwrap().r2, 1.0);
    }

    #[test]
    fn names_round_trip() {
        for k in [ModelKind::Ols, ModelKind::FairUnrobust, ModelKind::RobustPoint, ModelKind::RobustRankone] {
            assert_eq!(k.to_string().parse::<ModelKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{k}\""));
        }
        assert!("lasso".parse::<ModelKind>().unwrap_err().is_validation());
        assert_eq!("rankone".parse::<AttackScheme>().unwrap(), AttackScheme::Rankone);
    }

    #[test]
    fn fit_model_dispatches() {
        let ds = desk(3);
        let cfg = TradeoffConfig::new(0.2, 0.5).unwrap();
        let opts = RankOneOptions::default();
        assert_eq!(fit_model(ModelKind::Ols, &ds, &cfg, &opts).unwrap().beta, ols_fit(&ds));
        let m = fit_model(ModelKind::RobustPoint, &ds, &cfg, &opts).unwrap();
        assert!(m.qcqp().is_some());
        let m = fit_model(ModelKind::RobustRankone, &ds, &cfg, &opts).unwrap();
        assert!(m.saddle().is_some());
    }
}
