//! Robust fit against the worst-case rank-one feature perturbation.
//!
//! The outer problem `min_β max_{η_c1} max(g-profile, h-profile)` is split by
//! the signs of `D_g` and `C_h` into pieces. Closed pieces have a pinned inner
//! maximizer; the others are weakly-convex-weakly-concave saddle problems
//! solved by the inexact proximal point method in [`ipp`]. Every candidate is
//! certified by the exact inner maximization of the attack module, and a
//! subgradient descent on the certified envelope is always run alongside.

pub mod constants;
pub mod ipp;
pub mod subproblem;

use log::{info, warn};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::harness::baseline::{fair_fit_unrobust, ols_fit};
use crate::model::{Diagnostics, ModelSource, RobustModel};
use crate::objective::{rankone_coeffs, RankOneCoeffs, TradeoffConfig};
use crate::rankone_attack::{
    best_rankone, g_branch_at, h_branch_at, profile_maxima, worst_case_value, ProfileInputs, RankOneBranch,
};

pub use constants::{weak_convexity_constants, WeakConvexityConstants};
pub use ipp::{ipp_solve_saddle, write_trace_csv, IppConfig, Saddle, SaddleState, TraceRow};
pub use subproblem::{
    closed_inner_max, piece_max, solve_sp_closed, split_subproblems, ClosedCandidate, InnerMax, PieceSaddle,
    RegionConstraint, SubproblemDescriptor,
};

use subproblem::{piece_gradient, project_ball, NormParts};

/// Relative slack of the a-posteriori region and dominance checks.
pub const CONSTRAINT_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RankOneOptions {
    /// Radius of the coefficient ball; `10‖β_OLS‖` when absent.
    pub b_beta: Option<f64>,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub outer_cap: usize,
    pub seed: u64,
}

impl Default for RankOneOptions {
    fn default() -> Self {
        Self {
            b_beta: None,
            inner_tol: 1e-6,
            outer_tol: 1e-4,
            outer_cap: 500,
            seed: 0x5EED,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateMethod {
    Closed,
    Ipp,
    Descent,
}

#[derive(Clone, Debug, Serialize)]
pub struct SaddleDiagnostics {
    /// Piece whose sub-problem produced the model; `None` for the envelope descent.
    pub piece: Option<RankOneBranch>,
    pub method: CandidateMethod,
    pub eta_c1: f64,
    pub residual: f64,
    pub outer_iterations: usize,
    pub converged: bool,
    /// Value the sub-problem reports for its own inner model.
    pub claimed_value: f64,
    /// Exact worst case at the returned β.
    pub certified_value: f64,
    pub constraints_ok: bool,
    pub rho1: f64,
    pub rho2: f64,
    pub rho: f64,
    pub b_beta: f64,
    pub notes: Vec<String>,
    pub trace: Vec<TraceRow>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RankOneCandidate {
    #[serde(with = "crate::serde_vec")]
    pub beta: DVector<f64>,
    pub diagnostics: SaddleDiagnostics,
}

/// All candidates of one defense run.
#[derive(Clone, Debug)]
pub struct RankOneDefenseRun {
    pub constants: WeakConvexityConstants,
    pub descriptors: Vec<SubproblemDescriptor>,
    /// Sub-problem candidates that passed the region and dominance checks.
    pub accepted: Vec<RankOneCandidate>,
    /// Sub-problem candidates that failed them.
    pub discarded: Vec<RankOneCandidate>,
    pub descent: RankOneCandidate,
    pub notes: Vec<String>,
}

impl RankOneDefenseRun {
    /// Smallest certified worst case among accepted candidates and the descent.
    pub fn best(&self) -> &RankOneCandidate {
        self.accepted
            .iter()
            .chain(std::iter::once(&self.descent))
            .min_by(|a, b| a.diagnostics.certified_value.total_cmp(&b.diagnostics.certified_value))
            .expect("descent candidate always present")
    }
}

/// `10‖β_OLS‖`, or 1 when the OLS fit vanishes.
pub fn default_b_beta(ds: &Dataset) -> f64 {
    let r = 10.0 * ols_fit(ds).norm();
    if r > 0.0 && r.is_finite() {
        r
    } else {
        1.0
    }
}

/// Exact worst case at β, through the reconstructed attack when possible.
fn certify(beta: &DVector<f64>, ds: &Dataset, cfg: &TradeoffConfig, notes: &mut Vec<String>) -> Result<f64> {
    match best_rankone(beta, ds, cfg) {
        Ok(atk) => Ok(atk.value),
        Err(Error::Reconstruction(msg)) => {
            notes.push(format!("reconstruction failed ({msg}); using profile maximum"));
            worst_case_value(beta, ds, cfg)
        }
        Err(e) => Err(e),
    }
}

/// Active piece and split of the exact worst case at β.
fn active_piece(x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> (RankOneBranch, f64) {
    let ((sg, g), (sh, h)) = profile_maxima(x, k, eta);
    if g >= h {
        (g_branch_at(sg, x, k, eta), sg)
    } else {
        (h_branch_at(sh, x, k, eta), sh)
    }
}

pub const DESCENT_ITERS: usize = 3000;

/// Projected normalized subgradient descent on the certified envelope, using
/// the gradient of the active piece at its maximizing split.
pub fn envelope_descent(
    ds: &Dataset,
    cfg: &TradeoffConfig,
    b_beta: f64,
    starts: &[DVector<f64>],
) -> Result<(DVector<f64>, f64)> {
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let eta = cfg.eta;
    let value = |b: &DVector<f64>| worst_case_value(b, ds, cfg).unwrap_or(f64::INFINITY);
    let mut best: Option<(DVector<f64>, f64)> = None;
    for start in starts {
        let mut beta = start.clone();
        project_ball(&mut beta, b_beta);
        let mut local = (beta.clone(), value(&beta));
        let mut s0 = 0.05 * (1.0 + beta.norm());
        let mut stall = 0;
        let mut t = 0usize;
        for _ in 0..DESCENT_ITERS {
            let np = NormParts::new(&beta, ds)?;
            let (piece, s) = active_piece(&np.inputs, &k, eta);
            let g = piece_gradient(piece, s, &np, &k, eta);
            let gn = g.norm();
            if gn == 0.0 || !gn.is_finite() {
                break;
            }
            beta -= g * (s0 / ((t + 1) as f64).sqrt() / gn);
            project_ball(&mut beta, b_beta);
            t += 1;
            let v = value(&beta);
            if v < local.1 {
                local = (beta.clone(), v);
                stall = 0;
            } else {
                stall += 1;
            }
            if stall >= 200 {
                s0 *= 0.5;
                beta = local.0.clone();
                stall = 0;
                t = 0;
                if s0 < 1e-12 * (1.0 + beta.norm()) {
                    break;
                }
            }
        }
        if best.as_ref().is_none_or(|b| local.1 < b.1) {
            best = Some(local);
        }
    }
    best.ok_or_else(|| Error::Solver("envelope descent needs at least one start".into()))
}

/// Runs one saddle descriptor through the proximal point solver from `x0`.
pub fn ipp_solve(
    desc: &SubproblemDescriptor,
    ds: &Dataset,
    cfg: &TradeoffConfig,
    constants: &WeakConvexityConstants,
    ipp_cfg: &IppConfig,
    x0: &DVector<f64>,
) -> Result<(SaddleState, f64)> {
    if !(ipp_cfg.rho > constants.rho1.max(constants.rho2)) {
        return Err(Error::validation(format!(
            "rho = {} must exceed max(rho1, rho2) = {}",
            ipp_cfg.rho,
            constants.rho1.max(constants.rho2)
        )));
    }
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let prob = PieceSaddle {
        piece: desc.piece,
        ds,
        coeffs: k,
        eta: cfg.eta,
        b_beta: constants.b_beta,
    };
    let mut x = x0.clone();
    project_ball(&mut x, constants.b_beta);
    let (y0, _) = piece_max(desc.piece, &ProfileInputs::new(&x, ds)?, &k, cfg.eta);
    let state = ipp_solve_saddle(&prob, &x, y0, ipp_cfg);
    let (_, claimed) = piece_max(desc.piece, &ProfileInputs::new(&state.x, ds)?, &k, cfg.eta);
    Ok((state, claimed))
}

fn warm_starts(ds: &Dataset, cfg: &TradeoffConfig, b_beta: f64) -> Result<Vec<DVector<f64>>> {
    let mut starts = vec![fair_fit_unrobust(ds, cfg.lambda)?, ols_fit(ds), DVector::zeros(ds.p())];
    for s in &mut starts {
        project_ball(s, b_beta);
    }
    Ok(starts)
}

fn solve_descriptor(
    desc: &SubproblemDescriptor,
    ds: &Dataset,
    cfg: &TradeoffConfig,
    constants: &WeakConvexityConstants,
    ipp_cfg: &IppConfig,
    starts: &[DVector<f64>],
    seed: u64,
) -> Result<Option<RankOneCandidate>> {
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let mut notes = Vec::new();
    let (beta, eta_c1, claimed, residual, outer, converged, trace) = match desc.inner {
        InnerMax::Closed => {
            let Some(c) = solve_sp_closed(desc, ds, cfg, constants.b_beta, starts, seed)? else {
                info!("{}: no start reaches the region", desc.piece);
                return Ok(None);
            };
            notes.push(format!("{} of {} starts reached the region", c.feasible_starts, c.starts_tried));
            (c.beta, c.eta_c1, c.value, 0.0, 0, true, Vec::new())
        }
        InnerMax::Saddle => {
            let x0 = starts
                .iter()
                .min_by(|a, b| {
                    let va = worst_case_value(a, ds, cfg).unwrap_or(f64::INFINITY);
                    let vb = worst_case_value(b, ds, cfg).unwrap_or(f64::INFINITY);
                    va.total_cmp(&vb)
                })
                .expect("warm starts are nonempty");
            let (st, claimed) = ipp_solve(desc, ds, cfg, constants, ipp_cfg, x0)?;
            if !st.converged {
                notes.push(format!(
                    "outer cap {} reached with residual {:.3e}",
                    ipp_cfg.outer_cap, st.residual
                ));
            }
            (st.x, st.y, claimed, st.residual, st.outer_iterations, st.converged, st.trace)
        }
    };
    let x = ProfileInputs::new(&beta, ds)?;
    let region = desc.region_holds(&x, eta_c1, cfg.eta, CONSTRAINT_TOL);
    let dominant = desc.dominates(&x, &k, cfg.eta, CONSTRAINT_TOL);
    if !region {
        notes.push("region constraint violated".into());
    }
    if !dominant {
        notes.push("other side dominates".into());
    }
    let certified = certify(&beta, ds, cfg, &mut notes)?;
    Ok(Some(RankOneCandidate {
        beta,
        diagnostics: SaddleDiagnostics {
            piece: Some(desc.piece),
            method: match desc.inner {
                InnerMax::Closed => CandidateMethod::Closed,
                InnerMax::Saddle => CandidateMethod::Ipp,
            },
            eta_c1,
            residual,
            outer_iterations: outer,
            converged,
            claimed_value: claimed,
            certified_value: certified,
            constraints_ok: region && dominant,
            rho1: constants.rho1,
            rho2: constants.rho2,
            rho: ipp_cfg.rho,
            b_beta: constants.b_beta,
            notes,
            trace,
        },
    }))
}

pub fn solve_rankone_defense(ds: &Dataset, cfg: &TradeoffConfig, opts: &RankOneOptions) -> Result<RankOneDefenseRun> {
    cfg.validate()?;
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let b_beta = match opts.b_beta {
        Some(b) => b,
        None => {
            let b = default_b_beta(ds);
            warn!("no coefficient radius given; using 10‖β_OLS‖ = {b}");
            b
        }
    };
    let constants = weak_convexity_constants(ds, cfg, b_beta)?;
    let ipp_cfg = IppConfig {
        rho: constants.rho(),
        inner_tol: opts.inner_tol,
        outer_tol: opts.outer_tol,
        outer_cap: opts.outer_cap,
        inner_cap: 5000,
    };
    let starts = warm_starts(ds, cfg, b_beta)?;
    let descriptors = split_subproblems(&k);
    let results: Vec<Result<Option<RankOneCandidate>>> = descriptors
        .par_iter()
        .enumerate()
        .map(|(i, d)| solve_descriptor(d, ds, cfg, &constants, &ipp_cfg, &starts, opts.seed.wrapping_add(i as u64)))
        .collect();
    let mut accepted = Vec::new();
    let mut discarded = Vec::new();
    let mut notes = Vec::new();
    for (d, r) in descriptors.iter().zip(results) {
        match r? {
            Some(c) if c.diagnostics.constraints_ok => accepted.push(c),
            Some(c) => {
                info!("discarding {} candidate: {}", d.piece, c.diagnostics.notes.join("; "));
                notes.push(format!("{} discarded: {}", d.piece, c.diagnostics.notes.join("; ")));
                discarded.push(c);
            }
            None => notes.push(format!("{}: empty region", d.piece)),
        }
    }

    let mut descent_starts: Vec<DVector<f64>> = starts.clone();
    descent_starts.extend(accepted.iter().chain(discarded.iter()).map(|c| c.beta.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let spread = 1.0 + starts[0].norm();
    for _ in 0..2 {
        let dir = DVector::from_fn(ds.p(), |_, _| rng.random_range(-1.0..1.0));
        descent_starts.push(&starts[0] + dir * (0.5 * spread));
    }
    let (beta, _) = envelope_descent(ds, cfg, b_beta, &descent_starts)?;
    let mut dnotes = Vec::new();
    let certified = certify(&beta, ds, cfg, &mut dnotes)?;
    let (piece, s) = active_piece(&ProfileInputs::new(&beta, ds)?, &k, cfg.eta);
    let descent = RankOneCandidate {
        beta,
        diagnostics: SaddleDiagnostics {
            piece: None,
            method: CandidateMethod::Descent,
            eta_c1: s,
            residual: f64::NAN,
            outer_iterations: 0,
            converged: false,
            claimed_value: certified,
            certified_value: certified,
            constraints_ok: true,
            rho1: constants.rho1,
            rho2: constants.rho2,
            rho: ipp_cfg.rho,
            b_beta,
            notes: {
                dnotes.push(format!("active piece {piece}"));
                dnotes
            },
            trace: Vec::new(),
        },
    };
    Ok(RankOneDefenseRun {
        constants,
        descriptors,
        accepted,
        discarded,
        descent,
        notes,
    })
}

pub fn robust_fit_rankone(ds: &Dataset, cfg: &TradeoffConfig, opts: &RankOneOptions) -> Result<RobustModel> {
    let run = solve_rankone_defense(ds, cfg, opts)?;
    let best = run.best();
    let mut diagnostics = best.diagnostics.clone();
    diagnostics.notes.extend(run.notes.iter().cloned());
    Ok(RobustModel {
        beta: best.beta.clone(),
        minimax_value: best.diagnostics.certified_value,
        source: ModelSource::RankoneDefense,
        diagnostics: Diagnostics::Saddle(diagnostics),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthParams};
    use crate::linalg;
    use crate::search::golden_max;
    use nalgebra::DMatrix;

    fn desk(seed: u64) -> Dataset {
        synth_generate(&SynthParams {
            m: 6,
            n2: 6,
            p: 3,
            beta01: vec![1.0, -0.5, 0.8],
            beta02: vec![0.6, 0.2, -0.4],
            group1_offset: vec![0.3],
            noise_std: 0.4,
            feature_low: -1.0,
            feature_high: 1.0,
            seed,
        })
        .unwrap()
    }

    /// `min_β (‖y − Xβ‖ + η‖β‖)²/n` along the ridge path `β(μ) = (XᵀX + μI)⁻¹Xᵀy`.
    fn ridge_path_oracle(ds: &Dataset, eta: f64) -> f64 {
        let x = ds.features();
        let gram = x.transpose() * x;
        let xty = x.transpose() * ds.targets();
        let p = ds.p();
        let obj = |log_mu: f64| {
            let mu = log_mu.exp();
            let b = linalg::sym_solve(&(&gram + DMatrix::identity(p, p) * mu), &xty).unwrap();
            let r = (ds.targets() - x * &b).norm();
            -(r + eta * b.norm()).powi(2) / ds.n() as f64
        };
        let mut best = f64::INFINITY;
        let grid: Vec<f64> = (0..=200).map(|i| -20.0 + 40.0 * i as f64 / 200.0).collect();
        for w in grid.windows(2) {
            let (_, v) = golden_max(obj, w[0], w[1], 1e-12);
            best = best.min(-v);
        }
        let ols = ols_fit(ds);
        best.min(((ds.targets() - x * &ols).norm() + eta * ols.norm()).powi(2) / ds.n() as f64)
            .min(ds.targets().norm_squared() / ds.n() as f64)
    }

    #[test]
    fn lambda_zero_worst_case_closed_form() {
        let ds = desk(1);
        let cfg = TradeoffConfig::new(0.0, 0.8).unwrap();
        let beta = DVector::from_vec(vec![0.5, 0.1, -0.3]);
        let r = (ds.targets() - ds.features() * &beta).norm();
        let expect = (r + 0.8 * beta.norm()).powi(2) / 12.0;
        let got = worst_case_value(&beta, &ds, &cfg).unwrap();
        assert!((got - expect).abs() <= 1e-10 * expect);
    }

    #[test]
    fn lambda_zero_ipp_matches_ridge_oracle() {
        let ds = desk(2);
        let cfg = TradeoffConfig::new(0.0, 0.8).unwrap();
        let k = rankone_coeffs(12, 6, 0.0).unwrap();
        let desc = split_subproblems(&k)[0];
        let consts = weak_convexity_constants(&ds, &cfg, default_b_beta(&ds)).unwrap();
        let ipp_cfg = IppConfig::with_rho(consts.rho());
        let (st, claimed) = ipp_solve(&desc, &ds, &cfg, &consts, &ipp_cfg, &ols_fit(&ds)).unwrap();
        let oracle = ridge_path_oracle(&ds, 0.8);
        assert!((claimed - oracle).abs() <= 1e-4, "ipp {claimed} vs oracle {oracle}");
        // returned split agrees with the exact inner maximizer at the returned β
        let atk = best_rankone(&st.x, &ds, &cfg).unwrap();
        assert!((st.y - atk.eta_c1).abs() <= 1e-4, "{} vs {}", st.y, atk.eta_c1);
    }

    #[test]
    fn lambda_zero_fit_matches_ridge_oracle() {
        for seed in 0..3 {
            let ds = desk(10 + seed);
            let cfg = TradeoffConfig::new(0.0, 0.6).unwrap();
            let model = robust_fit_rankone(&ds, &cfg, &RankOneOptions::default()).unwrap();
            let oracle = ridge_path_oracle(&ds, 0.6);
            assert!((model.minimax_value - oracle).abs() <= 1e-3 * oracle);
        }
    }

    #[test]
    fn certified_never_below_claimed() {
        for (seed, lambda) in [(3, 0.2), (4, 1.0), (5, 3.0)] {
            let ds = desk(seed);
            let cfg = TradeoffConfig::new(lambda, 0.7).unwrap();
            let run = solve_rankone_defense(&ds, &cfg, &RankOneOptions::default()).unwrap();
            for c in run.accepted.iter().chain(&run.discarded).chain(std::iter::once(&run.descent)) {
                let d = &c.diagnostics;
                assert!(d.certified_value >= d.claimed_value - 1e-6, "{:?}", d.piece);
                assert!(c.beta.norm() <= d.b_beta * (1.0 + 1e-12));
            }
            let best = run.best().diagnostics.certified_value;
            for s in warm_starts(&ds, &cfg, run.constants.b_beta).unwrap() {
                assert!(best <= worst_case_value(&s, &ds, &cfg).unwrap() + 1e-12);
            }
        }
    }

    #[test]
    fn regularized_objective_decreases_every_outer_step() {
        let ds = desk(6);
        let cfg = TradeoffConfig::new(0.4, 0.5).unwrap();
        let k = rankone_coeffs(12, 6, 0.4).unwrap();
        let consts = weak_convexity_constants(&ds, &cfg, default_b_beta(&ds)).unwrap();
        let ipp_cfg = IppConfig::with_rho(consts.rho());
        let prob_rho = ipp_cfg.rho;
        for desc in split_subproblems(&k).into_iter().filter(|d| d.inner == InnerMax::Saddle) {
            let (st, _) = ipp_solve(&desc, &ds, &cfg, &consts, &ipp_cfg, &DVector::zeros(3)).unwrap();
            assert!(st.x.norm() <= consts.b_beta * (1.0 + 1e-12));
            assert!((0.0..=cfg.eta).contains(&st.y));
            assert!(st.rho == prob_rho && st.rho > consts.rho1.max(consts.rho2));
            for row in &st.trace {
                let slack = 10.0 * ipp_cfg.inner_tol * (1.0 + row.value.abs());
                assert!(row.prox_decrease >= -slack, "{}: {:?}", desc.piece, row);
            }
        }
    }

    #[test]
    fn rho_must_exceed_constants() {
        let ds = desk(7);
        let cfg = TradeoffConfig::new(0.4, 0.5).unwrap();
        let k = rankone_coeffs(12, 6, 0.4).unwrap();
        let consts = weak_convexity_constants(&ds, &cfg, 5.0).unwrap();
        let bad = IppConfig::with_rho(consts.rho1.max(consts.rho2));
        assert!(ipp_solve(&split_subproblems(&k)[0], &ds, &cfg, &consts, &bad, &DVector::zeros(3)).is_err());
    }
}
