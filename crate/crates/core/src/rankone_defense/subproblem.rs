//! Sign-regime sub-problems of the rank-one minimax fit.
//!
//! The g-side contributes `g_a` when `D_g ≥ 0` and the pair `g_b1`, `g_b2`
//! otherwise; the h-side mirrors this with `C_h`. Pieces whose inner maximum
//! over `η_c1` sits at a known point are solved in closed form over `η_c1`;
//! the rest are genuine saddle problems.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::Result;
use crate::objective::{rankone_coeffs, RankOneCoeffs, TradeoffConfig};
use crate::rankone_attack::{g_branch_at, h_branch_at, maximize_profile, piece_value, profile_maxima, ProfileInputs, RankOneBranch};

use super::ipp::Saddle;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerMax {
    /// Maximizer over `η_c1` known in closed form.
    Closed,
    /// Maximizer found jointly by the saddle solver.
    Saddle,
}

/// Region on which a piece is the active branch of its side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionConstraint {
    None,
    /// `‖y₂ − X₂β‖ ≤ η‖β‖`, the group-2 residual can be cancelled.
    Group2Cancellable,
    /// `‖y₂ − X₂β‖ ≥ √(η² − η_c1²)·‖β‖`
    Group2Exceeds,
    /// `‖y₁ − X₁β‖ ≤ η‖β‖`, the group-1 residual can be cancelled.
    Group1Cancellable,
    /// `‖y₁ − X₁β‖ ≥ η_c1·‖β‖`
    Group1Exceeds,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SubproblemDescriptor {
    pub piece: RankOneBranch,
    pub inner: InnerMax,
    pub region: RegionConstraint,
}

impl SubproblemDescriptor {
    fn new(piece: RankOneBranch) -> Self {
        let (inner, region) = match piece {
            RankOneBranch::GA | RankOneBranch::HA => (InnerMax::Saddle, RegionConstraint::None),
            RankOneBranch::GB1 => (InnerMax::Closed, RegionConstraint::Group2Cancellable),
            RankOneBranch::GB2 => (InnerMax::Saddle, RegionConstraint::Group2Exceeds),
            RankOneBranch::HB1 => (InnerMax::Closed, RegionConstraint::Group1Cancellable),
            RankOneBranch::HB2 => (InnerMax::Saddle, RegionConstraint::Group1Exceeds),
        };
        Self { piece, inner, region }
    }

    /// Whether the region constraint holds at split `s`, with relative slack `tol`.
    pub fn region_holds(&self, x: &ProfileInputs, s: f64, eta: f64, tol: f64) -> bool {
        let q = (eta * eta - s * s).max(0.0).sqrt();
        let slack = tol * (1.0 + x.a + x.c + eta * x.b);
        match self.region {
            RegionConstraint::None => true,
            RegionConstraint::Group2Cancellable => x.c <= eta * x.b + slack,
            RegionConstraint::Group2Exceeds => x.c >= q * x.b - slack,
            RegionConstraint::Group1Cancellable => x.a <= eta * x.b + slack,
            RegionConstraint::Group1Exceeds => x.a >= s * x.b - slack,
        }
    }

    /// Whether this piece's side carries the overall worst case.
    pub fn dominates(&self, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64, tol: f64) -> bool {
        let ((_, g), (_, h)) = profile_maxima(x, k, eta);
        let slack = tol * (1.0 + g.abs().max(h.abs()));
        if self.piece.is_g() {
            g >= h - slack
        } else {
            h >= g - slack
        }
    }

    /// Whether the piece is the active branch of its side at `s`.
    pub fn active_at(&self, x: &ProfileInputs, k: &RankOneCoeffs, s: f64, eta: f64) -> bool {
        let active = if self.piece.is_g() {
            g_branch_at(s, x, k, eta)
        } else {
            h_branch_at(s, x, k, eta)
        };
        active == self.piece
    }
}

/// Sub-problems for the sign pattern of `(D_g, C_h)`.
///
/// At `λ = 0` both sides coincide and a single descriptor is returned.
pub fn split_subproblems(coeffs: &RankOneCoeffs) -> Vec<SubproblemDescriptor> {
    let mut out = Vec::new();
    if coeffs.d_g >= 0.0 {
        out.push(SubproblemDescriptor::new(RankOneBranch::GA));
    } else {
        out.push(SubproblemDescriptor::new(RankOneBranch::GB1));
        out.push(SubproblemDescriptor::new(RankOneBranch::GB2));
    }
    let same_sides = coeffs.c_g == coeffs.c_h && coeffs.d_g == coeffs.d_h;
    if !same_sides {
        if coeffs.c_h >= 0.0 {
            out.push(SubproblemDescriptor::new(RankOneBranch::HA));
        } else {
            out.push(SubproblemDescriptor::new(RankOneBranch::HB1));
            out.push(SubproblemDescriptor::new(RankOneBranch::HB2));
        }
    }
    out
}

/// Residual norms at β together with their gradients.
pub(crate) struct NormParts {
    pub inputs: ProfileInputs,
    pub grad_a: DVector<f64>,
    pub grad_b: DVector<f64>,
    pub grad_c: DVector<f64>,
}

fn unit_or_zero(v: DVector<f64>, norm: f64) -> DVector<f64> {
    if norm > 0.0 {
        v / norm
    } else {
        v * 0.0
    }
}

impl NormParts {
    pub fn new(beta: &DVector<f64>, ds: &Dataset) -> Result<Self> {
        let (r1, r2) = ds.residuals(beta)?;
        let inputs = ProfileInputs {
            a: r1.norm(),
            b: beta.norm(),
            c: r2.norm(),
        };
        let grad_a = unit_or_zero(-(ds.x1().transpose() * &r1), inputs.a);
        let grad_c = unit_or_zero(-(ds.x2().transpose() * &r2), inputs.c);
        let grad_b = unit_or_zero(beta.clone(), inputs.b);
        Ok(Self {
            inputs,
            grad_a,
            grad_b,
            grad_c,
        })
    }
}

/// Gradient in β of a piece at fixed split `s`, using the zero subgradient at kinks.
pub(crate) fn piece_gradient(piece: RankOneBranch, s: f64, np: &NormParts, k: &RankOneCoeffs, eta: f64) -> DVector<f64> {
    let q = (eta * eta - s * s).max(0.0).sqrt();
    let ProfileInputs { a, b, c } = np.inputs;
    let term = |w: f64, base: f64, sign: f64, budget: f64, grad_r: &DVector<f64>| -> DVector<f64> {
        (grad_r + &np.grad_b * (sign * budget)) * (2.0 * w * (base + sign * budget * b))
    };
    match piece {
        RankOneBranch::GA => term(k.c_g, a, 1.0, s, &np.grad_a) + term(k.d_g, c, 1.0, q, &np.grad_c),
        RankOneBranch::GB1 => term(k.c_g, a, 1.0, s, &np.grad_a),
        RankOneBranch::GB2 => term(k.c_g, a, 1.0, s, &np.grad_a) + term(k.d_g, c, -1.0, q, &np.grad_c),
        RankOneBranch::HA => term(k.c_h, a, 1.0, s, &np.grad_a) + term(k.d_h, c, 1.0, q, &np.grad_c),
        RankOneBranch::HB1 => term(k.d_h, c, 1.0, q, &np.grad_c),
        RankOneBranch::HB2 => term(k.c_h, a, -1.0, s, &np.grad_a) + term(k.d_h, c, 1.0, q, &np.grad_c),
    }
}

pub fn project_ball(x: &mut DVector<f64>, radius: f64) {
    let n = x.norm();
    if n > radius {
        *x *= radius / n;
    }
}

/// One saddle piece as `f(β, η_c1)` on `‖β‖ ≤ B_β`, `η_c1 ∈ [0, η]`.
pub struct PieceSaddle<'a> {
    pub piece: RankOneBranch,
    pub ds: &'a Dataset,
    pub coeffs: RankOneCoeffs,
    pub eta: f64,
    pub b_beta: f64,
}

impl Saddle for PieceSaddle<'_> {
    fn dim(&self) -> usize {
        self.ds.p()
    }

    fn value(&self, x: &DVector<f64>, y: f64) -> f64 {
        match ProfileInputs::new(x, self.ds) {
            Ok(inp) => piece_value(self.piece, y, &inp, &self.coeffs, self.eta),
            Err(_) => f64::NAN,
        }
    }

    fn grad_x(&self, x: &DVector<f64>, y: f64) -> DVector<f64> {
        match NormParts::new(x, self.ds) {
            Ok(np) => piece_gradient(self.piece, y, &np, &self.coeffs, self.eta),
            Err(_) => DVector::from_element(x.len(), f64::NAN),
        }
    }

    fn project_x(&self, x: &mut DVector<f64>) {
        project_ball(x, self.b_beta);
    }

    fn y_bounds(&self) -> (f64, f64) {
        (0.0, self.eta)
    }
}

/// Maximum of the piece formula alone over `η_c1 ∈ [0, η]`: `(s*, value)`.
pub fn piece_max(piece: RankOneBranch, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> (f64, f64) {
    maximize_profile(|s| piece_value(piece, s, x, k, eta), &[], eta)
}

/// Pinned inner maximum of a closed piece over the split range where it is
/// active: `g_b1` at the largest split keeping group 2 cancellable,
/// `h_b1` at the smallest split cancelling group 1. `None` outside the region.
pub fn closed_inner_max(piece: RankOneBranch, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> Option<(f64, f64)> {
    if x.b <= 0.0 {
        return None;
    }
    match piece {
        RankOneBranch::GB1 if x.c <= eta * x.b => {
            let s = (eta * eta - (x.c / x.b).powi(2)).max(0.0).sqrt();
            Some((s, piece_value(piece, s, x, k, eta)))
        }
        RankOneBranch::HB1 if x.a <= eta * x.b => {
            let s = x.a / x.b;
            Some((s, piece_value(piece, s, x, k, eta)))
        }
        _ => None,
    }
}

/// Gradient of the pinned closed value; `None` at the region boundary.
fn closed_gradient(piece: RankOneBranch, np: &NormParts, k: &RankOneCoeffs, eta: f64) -> Option<DVector<f64>> {
    let ProfileInputs { a, b, c } = np.inputs;
    // value = w (base + u)² with u = √(η²b² − other²)
    let (w, base, grad_base, other, grad_other) = match piece {
        RankOneBranch::GB1 => (k.c_g, a, &np.grad_a, c, &np.grad_c),
        RankOneBranch::HB1 => (k.d_h, c, &np.grad_c, a, &np.grad_a),
        _ => return None,
    };
    let u2 = eta * eta * b * b - other * other;
    if u2 <= 0.0 {
        return None;
    }
    let u = u2.sqrt();
    let grad_u = (&np.grad_b * (eta * eta * b) - grad_other * other) / u;
    Some((grad_base + grad_u) * (2.0 * w * (base + u)))
}

/// Closed sub-problem outcome.
#[derive(Clone, Debug)]
pub struct ClosedCandidate {
    pub beta: DVector<f64>,
    pub eta_c1: f64,
    pub value: f64,
    pub starts_tried: usize,
    pub feasible_starts: usize,
}

const CLOSED_ITERS: usize = 2000;

fn closed_value(piece: RankOneBranch, beta: &DVector<f64>, ds: &Dataset, k: &RankOneCoeffs, eta: f64) -> Option<(f64, f64)> {
    let x = ProfileInputs::new(beta, ds).ok()?;
    closed_inner_max(piece, &x, k, eta)
}

/// First point along the ray through `dir` that lies in the region, scanning
/// radii geometrically up to `b_beta`.
fn feasible_on_ray(
    piece: RankOneBranch,
    dir: &DVector<f64>,
    ds: &Dataset,
    k: &RankOneCoeffs,
    eta: f64,
    b_beta: f64,
) -> Option<DVector<f64>> {
    let n = dir.norm();
    if n == 0.0 {
        return None;
    }
    let unit = dir / n;
    let mut radius = n.min(b_beta);
    for _ in 0..80 {
        let cand = &unit * radius;
        if closed_value(piece, &cand, ds, k, eta).is_some() {
            return Some(cand);
        }
        if radius >= b_beta {
            break;
        }
        radius = (radius * 1.25).min(b_beta);
    }
    None
}

/// Minimizes the pinned closed value over β by projected multi-start descent.
///
/// Returns `None` when no start reaches the region.
pub fn solve_sp_closed(
    desc: &SubproblemDescriptor,
    ds: &Dataset,
    cfg: &TradeoffConfig,
    b_beta: f64,
    warm_starts: &[DVector<f64>],
    seed: u64,
) -> Result<Option<ClosedCandidate>> {
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let eta = cfg.eta;
    let piece = desc.piece;
    let p = ds.p();
    let mut dirs: Vec<DVector<f64>> = warm_starts.iter().filter(|b| b.norm() > 0.0).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while dirs.len() < warm_starts.len() + 8 {
        dirs.push(DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0)));
    }
    let mut best: Option<ClosedCandidate> = None;
    let mut feasible = 0;
    for dir in &dirs {
        let Some(mut beta) = feasible_on_ray(piece, dir, ds, &k, eta, b_beta) else {
            continue;
        };
        feasible += 1;
        let Some((_, mut val)) = closed_value(piece, &beta, ds, &k, eta) else {
            continue;
        };
        let mut step = 1.0 / (1.0 + beta.norm());
        for _ in 0..CLOSED_ITERS {
            let Ok(np) = NormParts::new(&beta, ds) else { break };
            let Some(g) = closed_gradient(piece, &np, &k, eta) else { break };
            let gn = g.norm();
            if gn == 0.0 || !gn.is_finite() {
                break;
            }
            let mut moved = false;
            for _ in 0..50 {
                let mut trial = &beta - &g * (step / gn);
                project_ball(&mut trial, b_beta);
                if let Some((_, tv)) = closed_value(piece, &trial, ds, &k, eta) {
                    let decrease = (&trial - &beta).norm();
                    if tv < val - 1e-4 * gn * decrease {
                        beta = trial;
                        val = tv;
                        moved = true;
                        step *= 1.5;
                        break;
                    }
                }
                step *= 0.5;
            }
            if !moved || step < 1e-14 * (1.0 + beta.norm()) {
                break;
            }
        }
        let (s, v) = closed_value(piece, &beta, ds, &k, eta).expect("iterate stays in region");
        if best.as_ref().is_none_or(|b| v < b.value) {
            best = Some(ClosedCandidate {
                beta: beta.clone(),
                eta_c1: s,
                value: v,
                starts_tried: 0,
                feasible_starts: 0,
            });
        }
    }
    Ok(best.map(|mut b| {
        b.starts_tried = dirs.len();
        b.feasible_starts = feasible;
        b
    }))
}
