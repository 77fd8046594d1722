//! Robust fit against the worst-case inserted point.
//!
//! The worst-case loss at β is the envelope `max{g₁, h₁, g₂, h₂}(β)` of four
//! quadratics. Minimizing it splits into four sub-problems, one per surrogate
//! being the maximum; each is a nonconvex QCQP with three quadratic
//! constraints, handled by the case analysis in [`qcqp`].

pub mod psd;
pub mod qcqp;

use std::fmt;

use log::{debug, warn};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};

use crate::dataset::{compute_stats, Dataset};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Diagnostics, ModelSource, RobustModel};
use crate::objective::{surrogate_matrices, Surrogate, SurrogateMatrices, TradeoffConfig};

pub use psd::{psd_interval, PsdInterval};
pub use qcqp::{
    certify, check_certificate, solve_case1, solve_case2, solve_case3, solve_case4, Candidate,
    CaseOutcome, CertificateCheck, TOLERANCES,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CaseLabel {
    Case1,
    Case2 { binding: Surrogate },
    Case3 { binding: (Surrogate, Surrogate) },
    Case4,
    Fallback,
}

impl fmt::Display for CaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CaseLabel::Case1 => write!(f, "case1"),
            CaseLabel::Case2 { binding } => write!(f, "case2({binding})"),
            CaseLabel::Case3 { binding: (a, b) } => write!(f, "case3({a},{b})"),
            CaseLabel::Case4 => write!(f, "case4"),
            CaseLabel::Fallback => write!(f, "fallback"),
        }
    }
}

impl Serialize for CaseLabel {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct QcqpDiagnostics {
    pub case_label: CaseLabel,
    /// Sub-problem whose certificate holds; `None` for the fallback.
    pub target: Option<Surrogate>,
    /// Multipliers of the three constraints, in priority order of the other surrogates.
    pub multipliers: [f64; 3],
    pub lagrange_gammas: Vec<f64>,
    pub psd_margin: f64,
    /// `S_T − S_k` for the three other surrogates.
    pub constraint_values: [f64; 3],
    pub stationarity_residual: f64,
    pub certified: bool,
    pub notes: Vec<String>,
}

/// All candidates produced for one dataset and configuration.
#[derive(Clone, Debug)]
pub struct PointDefenseRun {
    pub mats: SurrogateMatrices,
    pub certified: Vec<Candidate>,
    pub fallback: Candidate,
    pub notes: Vec<String>,
}

impl PointDefenseRun {
    /// Smallest envelope value; certified candidates win ties against the fallback.
    pub fn best(&self) -> &Candidate {
        let mut best = &self.fallback;
        for c in &self.certified {
            if c.value <= best.value + 1e-12 * (1.0 + best.value.abs()) && (c.value < best.value || !best.diagnostics.certified) {
                best = c;
            }
        }
        best
    }

    pub fn best_certified(&self) -> Option<&Candidate> {
        self.certified.iter().min_by(|a, b| a.value.total_cmp(&b.value))
    }
}

pub const FALLBACK_STARTS: usize = 20;
pub const FALLBACK_ITERS: usize = 5000;

fn fallback_starts(mats: &SurrogateMatrices, seed: u64) -> Vec<DVector<f64>> {
    let p = mats.p();
    let mut starts = vec![DVector::zeros(p)];
    // (g₁ + h₁)/2 always has a positive definite Hessian
    let avg_m = (&mats.m[0] + &mats.m[1]) * 0.5;
    let avg_e = (&mats.e[0] + &mats.e[1]) * 0.5;
    let center = linalg::sym_solve(&avg_m, &avg_e).unwrap_or_else(|| DVector::zeros(p));
    starts.push(center.clone());
    for s in Surrogate::ALL {
        if let Some(b) = linalg::sym_solve(&mats.m[s.index()], &mats.e[s.index()]) {
            if b.iter().all(|v| v.is_finite()) {
                starts.push(b);
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spread = 1.0 + center.norm();
    while starts.len() < FALLBACK_STARTS {
        let dir = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        starts.push(&center + dir * spread);
    }
    starts.truncate(FALLBACK_STARTS);
    starts
}

/// Multi-start normalized subgradient descent on the envelope.
///
/// The step `s₀/√(t+1)` restarts from the best point with a halved `s₀` after
/// 250 iterations without improvement.
pub fn fallback_descent(mats: &SurrogateMatrices, seed: u64) -> (DVector<f64>, f64) {
    let mut best_beta = DVector::zeros(mats.p());
    let mut best_val = mats.envelope_value(&best_beta);
    for start in fallback_starts(mats, seed) {
        let mut beta = start;
        let mut s0 = 0.1 * (1.0 + beta.norm());
        let mut local_best = (beta.clone(), mats.envelope_value(&beta));
        let mut stall = 0;
        let mut t = 0usize;
        for _ in 0..FALLBACK_ITERS {
            let (v, active) = mats.envelope(&beta);
            if v < local_best.1 {
                local_best = (beta.clone(), v);
                stall = 0;
            } else {
                stall += 1;
            }
            if stall >= 250 {
                s0 *= 0.5;
                beta = local_best.0.clone();
                stall = 0;
                t = 0;
                continue;
            }
            let g = mats.gradient(active, &beta);
            let gn = g.norm();
            if gn == 0.0 {
                break;
            }
            beta -= g * (s0 / ((t + 1) as f64).sqrt() / gn);
            t += 1;
        }
        if local_best.1 < best_val {
            best_val = local_best.1;
            best_beta = local_best.0;
        }
    }
    (best_beta, best_val)
}

fn solve_target(target: Surrogate, mats: &SurrogateMatrices, ds: &Dataset, cfg: &TradeoffConfig) -> CaseOutcome {
    let mut out = solve_case1(target, mats);
    let others = target.others();
    for j in others {
        let o = solve_case2(target, j, mats);
        out.candidates.extend(o.candidates);
        out.notes.extend(o.notes);
    }
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let o = solve_case3(target, (others[a], others[b]), mats);
        out.candidates.extend(o.candidates);
        out.notes.extend(o.notes);
    }
    let o = solve_case4(target, mats, ds, cfg);
    out.candidates.extend(o.candidates);
    out.notes.extend(o.notes);
    out
}

/// Runs every case for every target plus the fallback descent.
pub fn solve_point_defense(ds: &Dataset, cfg: &TradeoffConfig) -> Result<PointDefenseRun> {
    cfg.validate()?;
    let stats = compute_stats(ds);
    if cfg.eta < stats.eta_min {
        warn!(
            "eta = {} is below eta_min = {}; PSD intervals may be empty",
            cfg.eta, stats.eta_min
        );
    }
    let mats = surrogate_matrices(ds, cfg)?;
    let outcomes: Vec<CaseOutcome> = Surrogate::ALL
        .par_iter()
        .map(|&t| solve_target(t, &mats, ds, cfg))
        .collect();
    let mut certified = Vec::new();
    let mut notes = Vec::new();
    for o in outcomes {
        certified.extend(o.candidates);
        notes.extend(o.notes);
    }
    for n in &notes {
        debug!("{n}");
    }
    let (fb_beta, fb_val) = fallback_descent(&mats, 0x5EED);
    let fallback = Candidate {
        beta: fb_beta,
        value: fb_val,
        diagnostics: QcqpDiagnostics {
            case_label: CaseLabel::Fallback,
            target: None,
            multipliers: [0.0; 3],
            lagrange_gammas: Vec::new(),
            psd_margin: f64::NAN,
            constraint_values: [f64::NAN; 3],
            stationarity_residual: f64::NAN,
            certified: false,
            notes: Vec::new(),
        },
    };
    Ok(PointDefenseRun {
        mats,
        certified,
        fallback,
        notes,
    })
}

pub fn robust_fit_point(ds: &Dataset, cfg: &TradeoffConfig) -> Result<RobustModel> {
    let run = solve_point_defense(ds, cfg)?;
    let best = run.best();
    if !best.value.is_finite() {
        return Err(Error::Solver("no finite candidate".into()));
    }
    let mut diagnostics = best.diagnostics.clone();
    diagnostics.notes = run.notes.clone();
    Ok(RobustModel {
        beta: best.beta.clone(),
        minimax_value: run.mats.envelope_value(&best.beta),
        source: ModelSource::PointDefense,
        diagnostics: Diagnostics::Qcqp(diagnostics),
    })
}
