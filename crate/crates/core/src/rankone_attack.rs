//! Worst-case rank-one feature perturbation `Δ = c dᵀ`, `‖Δ‖_F ≤ η`.
//!
//! With `d = β/‖β‖`, `‖c₁‖ = s` and `‖c₂‖ ≤ q = √(η² − s²)`, the perturbed
//! group residual norms range over `[max(0, ‖r_g‖ − budget·‖β‖), ‖r_g‖ + budget·‖β‖]`.
//! Each loss branch therefore reduces to a one-dimensional profile in the
//! group-1 share `s = η_c1`:
//!
//! * `g_a  = C_g(a + sb)² + D_g(c + qb)²`                (`D_g ≥ 0`)
//! * `g_b  = C_g(a + sb)² + D_g·max(0, c − qb)²`         (`D_g < 0`)
//! * `h_a  = C_h(a + sb)² + D_h(c + qb)²`                (`C_h ≥ 0`)
//! * `h_b  = C_h·max(0, a − sb)² + D_h(c + qb)²`         (`C_h < 0`)
//!
//! where `a = ‖y₁ − X₁β‖`, `c = ‖y₂ − X₂β‖` and `b = ‖β‖`. The `b1` pieces are
//! the regions where the deflated residual reaches zero.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::objective::{objective_l, rankone_coeffs, RankOneCoeffs, TradeoffConfig};
use crate::search::golden_max;

/// Golden-section tolerance on `η_c1`.
pub const SPLIT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RankOneBranch {
    #[serde(rename = "g_a")]
    GA,
    #[serde(rename = "g_b1")]
    GB1,
    #[serde(rename = "g_b2")]
    GB2,
    #[serde(rename = "h_a")]
    HA,
    #[serde(rename = "h_b1")]
    HB1,
    #[serde(rename = "h_b2")]
    HB2,
}

impl RankOneBranch {
    pub const ALL: [RankOneBranch; 6] = [Self::GA, Self::GB1, Self::GB2, Self::HA, Self::HB1, Self::HB2];

    pub fn is_g(self) -> bool {
        matches!(self, Self::GA | Self::GB1 | Self::GB2)
    }
}

impl fmt::Display for RankOneBranch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::GA => "g_a",
            Self::GB1 => "g_b1",
            Self::GB2 => "g_b2",
            Self::HA => "h_a",
            Self::HB1 => "h_b1",
            Self::HB2 => "h_b2",
        };
        f.write_str(s)
    }
}

/// Residual norms entering the profiles.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileInputs {
    /// `‖y₁ − X₁β‖`
    pub a: f64,
    /// `‖β‖`
    pub b: f64,
    /// `‖y₂ − X₂β‖`
    pub c: f64,
}

impl ProfileInputs {
    pub fn new(beta: &DVector<f64>, ds: &Dataset) -> Result<Self> {
        let (r1, r2) = ds.residuals(beta)?;
        Ok(Self {
            a: r1.norm(),
            b: beta.norm(),
            c: r2.norm(),
        })
    }
}

fn remaining(eta: f64, s: f64) -> f64 {
    (eta * eta - s * s).max(0.0).sqrt()
}

/// A single profile piece as a closed-form function of `s = η_c1`.
///
/// `b1` and `b2` pieces are evaluated by their own formula everywhere on
/// `[0, η]`, regardless of which one is active.
pub fn piece_value(piece: RankOneBranch, s: f64, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> f64 {
    let q = remaining(eta, s);
    let (a, b, c) = (x.a, x.b, x.c);
    match piece {
        RankOneBranch::GA => k.c_g * (a + s * b).powi(2) + k.d_g * (c + q * b).powi(2),
        RankOneBranch::GB1 => k.c_g * (a + s * b).powi(2),
        RankOneBranch::GB2 => k.c_g * (a + s * b).powi(2) + k.d_g * (c - q * b).powi(2),
        RankOneBranch::HA => k.c_h * (a + s * b).powi(2) + k.d_h * (c + q * b).powi(2),
        RankOneBranch::HB1 => k.d_h * (c + q * b).powi(2),
        RankOneBranch::HB2 => k.c_h * (a - s * b).powi(2) + k.d_h * (c + q * b).powi(2),
    }
}

/// Active g-side piece at split `s`.
pub fn g_branch_at(s: f64, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> RankOneBranch {
    if k.d_g >= 0.0 {
        RankOneBranch::GA
    } else if x.c <= remaining(eta, s) * x.b {
        RankOneBranch::GB1
    } else {
        RankOneBranch::GB2
    }
}

/// Active h-side piece at split `s`.
pub fn h_branch_at(s: f64, x: &ProfileInputs, k: &RankOneCoeffs, _eta: f64) -> RankOneBranch {
    if k.c_h >= 0.0 {
        RankOneBranch::HA
    } else if x.a <= s * x.b {
        RankOneBranch::HB1
    } else {
        RankOneBranch::HB2
    }
}

pub fn g_profile_at(s: f64, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> f64 {
    piece_value(g_branch_at(s, x, k, eta), s, x, k, eta)
}

pub fn h_profile_at(s: f64, x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> f64 {
    piece_value(h_branch_at(s, x, k, eta), s, x, k, eta)
}

/// Largest g-branch loss over rank-one attacks whose group-1 block has norm `eta_c1`.
pub fn g_profile(eta_c1: f64, beta: &DVector<f64>, ds: &Dataset, coeffs: &RankOneCoeffs, eta: f64) -> Result<f64> {
    Ok(g_profile_at(eta_c1, &ProfileInputs::new(beta, ds)?, coeffs, eta))
}

/// Largest h-branch loss over rank-one attacks whose group-1 block has norm `eta_c1`.
pub fn h_profile(eta_c1: f64, beta: &DVector<f64>, ds: &Dataset, coeffs: &RankOneCoeffs, eta: f64) -> Result<f64> {
    Ok(h_profile_at(eta_c1, &ProfileInputs::new(beta, ds)?, coeffs, eta))
}

/// Points where the active piece of either profile switches.
pub fn kink_points(x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> Vec<f64> {
    let mut pts = Vec::new();
    if x.b > 0.0 {
        if k.d_g < 0.0 && x.c <= eta * x.b {
            pts.push(remaining(eta, x.c / x.b));
        }
        if k.c_h < 0.0 && x.a <= eta * x.b {
            pts.push(x.a / x.b);
        }
    }
    pts
}

/// Maximizes a profile over `[0, η]`: golden section on each segment between
/// kinks, plus every segment end.
pub fn maximize_profile(f: impl Fn(f64) -> f64, kinks: &[f64], eta: f64) -> (f64, f64) {
    let mut cuts = vec![0.0, eta];
    cuts.extend(kinks.iter().copied().filter(|&k| k > 0.0 && k < eta));
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut best = (0.0, f(0.0));
    for &pt in &cuts {
        let v = f(pt);
        if v > best.1 {
            best = (pt, v);
        }
    }
    for w in cuts.windows(2) {
        let (x, v) = golden_max(&f, w[0], w[1], SPLIT_TOL * (1.0 + eta));
        if v > best.1 {
            best = (x, v);
        }
    }
    best
}

/// Intermediate quantities of the inner maximization for a unit direction `d`
/// with `t = dᵀβ`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProfileIntermediates {
    /// `r₁ / t`
    pub f1: DVector<f64>,
    /// `r₂ / t`
    pub f2: DVector<f64>,
    /// `f₁ − c₁`
    pub e1: DVector<f64>,
    /// `f₂ − c₂`
    pub e2: DVector<f64>,
    /// The branch loss equals `A t² + B t + C`.
    pub quad_a: f64,
    pub quad_b: f64,
    pub quad_c: f64,
    /// Multiplier of the sphere constraint on `e₁`.
    pub gamma_e1: f64,
    /// Multiplier of the ball constraint on `e₂` (zero when the ball is inactive).
    pub gamma_e2: f64,
}

fn unit_or_axis(v: &DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 0.0 {
        v / n
    } else {
        let mut e = DVector::zeros(v.len());
        if !e.is_empty() {
            e[0] = 1.0;
        }
        e
    }
}

/// Signed `(c₁, c₂)` blocks for a branch, split `s`, remaining `q`, and direction with `dᵀβ = t`.
fn blocks(
    branch: RankOneBranch,
    s: f64,
    q: f64,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
    t: f64,
) -> (DVector<f64>, DVector<f64>) {
    let u1 = unit_or_axis(r1);
    let u2 = unit_or_axis(r2);
    // inflating blocks point against the residual, deflating blocks along it
    let c1 = match branch {
        RankOneBranch::HB1 => r1 / t,
        RankOneBranch::HB2 => &u1 * s,
        _ => &u1 * (-s),
    };
    let c2 = match branch {
        RankOneBranch::GB1 => r2 / t,
        RankOneBranch::GB2 => &u2 * q,
        _ => &u2 * (-q),
    };
    (c1, c2)
}

/// Quadratic-in-`t` form of the branch loss for direction `d`, split `s` and total norm `η_c`.
pub fn profile_intermediates(
    branch: RankOneBranch,
    eta_c1: f64,
    eta_c: f64,
    beta: &DVector<f64>,
    d: &DVector<f64>,
    ds: &Dataset,
    coeffs: &RankOneCoeffs,
) -> Result<ProfileIntermediates> {
    let t = d.dot(beta);
    if t == 0.0 {
        return Err(Error::Reconstruction("dᵀβ = 0".into()));
    }
    let (r1, r2) = ds.residuals(beta)?;
    let (a, c) = (r1.norm(), r2.norm());
    let s = eta_c1;
    let q = remaining(eta_c, s);
    let (c1, c2) = blocks(branch, s, q, &r1, &r2, t);
    let f1 = &r1 / t;
    let f2 = &r2 / t;
    let e1 = &f1 - &c1;
    let e2 = &f2 - &c2;
    let (wg1, wg2) = if branch.is_g() {
        (coeffs.c_g, coeffs.d_g)
    } else {
        (coeffs.c_h, coeffs.d_h)
    };
    // signed residual-norm slopes: ‖r̂_g‖ = ‖r_g‖ + σ_g·budget·t
    let sig1 = match branch {
        RankOneBranch::HB2 => -1.0,
        RankOneBranch::HB1 => 0.0,
        _ => 1.0,
    };
    let sig2 = match branch {
        RankOneBranch::GB2 => -1.0,
        RankOneBranch::GB1 => 0.0,
        _ => 1.0,
    };
    let (quad_a, quad_b, quad_c) = match branch {
        RankOneBranch::GB1 => (wg1 * s * s, 2.0 * wg1 * s * a, wg1 * a * a),
        RankOneBranch::HB1 => (wg2 * q * q, 2.0 * wg2 * q * c, wg2 * c * c),
        _ => (
            wg1 * s * s + wg2 * q * q,
            2.0 * (sig1 * wg1 * s * a + sig2 * wg2 * q * c),
            wg1 * a * a + wg2 * c * c,
        ),
    };
    let f1n = f1.norm();
    let f2n = f2.norm();
    let gamma_e1 = if s > 0.0 { (f1n + s) / s } else { 0.0 };
    let gamma_e2 = if sig2 < 0.0 && q > 0.0 { (f2n / q - 1.0).max(0.0) } else { 0.0 };
    Ok(ProfileIntermediates {
        f1,
        f2,
        e1,
        e2,
        quad_a,
        quad_b,
        quad_c,
        gamma_e1,
        gamma_e2,
    })
}

/// Concrete optimal rank-one attack.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneAttack {
    #[serde(with = "crate::serde_vec")]
    pub c: DVector<f64>,
    #[serde(with = "crate::serde_vec")]
    pub d: DVector<f64>,
    pub eta_c: f64,
    pub eta_c1: f64,
    pub eta_c2: f64,
    pub branch: RankOneBranch,
    /// Loss at the perturbed data, re-evaluated from `X + c dᵀ`.
    pub value: f64,
    /// Closed-form profile maximum the attack realizes.
    pub profile_value: f64,
}

/// Builds `(c, d)` realizing the given branch at split `eta_c1`.
pub fn reconstruct_cd(
    eta_c1: f64,
    beta: &DVector<f64>,
    ds: &Dataset,
    branch: RankOneBranch,
    eta: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let b = beta.norm();
    if b == 0.0 {
        return Err(Error::Reconstruction("β = 0 admits no rank-one attack".into()));
    }
    if !(0.0..=eta).contains(&eta_c1) {
        return Err(Error::Reconstruction(format!("eta_c1 = {eta_c1} outside [0, {eta}]")));
    }
    let d = beta / b;
    let (r1, r2) = ds.residuals(beta)?;
    let q = remaining(eta, eta_c1);
    let slack = 1e-10 * (1.0 + eta);
    match branch {
        RankOneBranch::GB1 if r2.norm() / b > q + slack => {
            return Err(Error::Reconstruction(format!(
                "g_b1 needs ‖f₂‖ = {} ≤ {q}",
                r2.norm() / b
            )));
        }
        RankOneBranch::HB1 if r1.norm() / b > eta_c1 + slack => {
            return Err(Error::Reconstruction(format!(
                "h_b1 needs ‖f₁‖ = {} ≤ {eta_c1}",
                r1.norm() / b
            )));
        }
        _ => {}
    }
    let (c1, c2) = blocks(branch, eta_c1, q, &r1, &r2, b);
    let mut c = DVector::zeros(ds.n());
    c.rows_mut(0, ds.m()).copy_from(&c1);
    c.rows_mut(ds.m(), ds.n2()).copy_from(&c2);
    Ok((c, d))
}

/// `X + c dᵀ` with targets and groups unchanged.
pub fn apply_rankone(ds: &Dataset, atk: &RankOneAttack) -> Result<Dataset> {
    if atk.c.len() != ds.n() {
        return Err(Error::Dimension {
            expected: ds.n(),
            got: atk.c.len(),
        });
    }
    if atk.d.len() != ds.p() {
        return Err(Error::Dimension {
            expected: ds.p(),
            got: atk.d.len(),
        });
    }
    let delta: DMatrix<f64> = &atk.c * atk.d.transpose();
    ds.with_features(ds.features() + delta)
}

/// Maxima of both profiles: `((s_g, g*), (s_h, h*))`.
pub fn profile_maxima(x: &ProfileInputs, k: &RankOneCoeffs, eta: f64) -> ((f64, f64), (f64, f64)) {
    let kinks = kink_points(x, k, eta);
    let g = maximize_profile(|s| g_profile_at(s, x, k, eta), &kinks, eta);
    let h = maximize_profile(|s| h_profile_at(s, x, k, eta), &kinks, eta);
    (g, h)
}

/// Worst-case loss over rank-one attacks at β, i.e. `max(max_s g, max_s h)`.
pub fn worst_case_value(beta: &DVector<f64>, ds: &Dataset, cfg: &TradeoffConfig) -> Result<f64> {
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let x = ProfileInputs::new(beta, ds)?;
    let ((_, g), (_, h)) = profile_maxima(&x, &k, cfg.eta);
    Ok(g.max(h))
}

pub fn best_rankone(beta: &DVector<f64>, ds: &Dataset, cfg: &TradeoffConfig) -> Result<RankOneAttack> {
    cfg.validate()?;
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let x = ProfileInputs::new(beta, ds)?;
    let eta = cfg.eta;
    if x.b == 0.0 {
        let value = objective_l(beta, ds, cfg)?;
        let (g, h) = (k.g(x.a * x.a, x.c * x.c), k.h(x.a * x.a, x.c * x.c));
        let branch = if g >= h {
            g_branch_at(0.0, &x, &k, eta)
        } else {
            h_branch_at(0.0, &x, &k, eta)
        };
        return Ok(RankOneAttack {
            c: DVector::zeros(ds.n()),
            d: DVector::zeros(ds.p()),
            eta_c: 0.0,
            eta_c1: 0.0,
            eta_c2: 0.0,
            branch,
            value,
            profile_value: value,
        });
    }
    let ((sg, gv), (sh, hv)) = profile_maxima(&x, &k, eta);
    let (s, profile_value, branch) = if gv >= hv {
        (sg, gv, g_branch_at(sg, &x, &k, eta))
    } else {
        (sh, hv, h_branch_at(sh, &x, &k, eta))
    };
    let (c, d) = reconstruct_cd(s, beta, ds, branch, eta)?;
    let eta_c1 = c.rows(0, ds.m()).norm();
    let eta_c2 = c.rows(ds.m(), ds.n2()).norm();
    let mut atk = RankOneAttack {
        eta_c: c.norm(),
        c,
        d,
        eta_c1,
        eta_c2,
        branch,
        value: f64::NAN,
        profile_value,
    };
    let value = objective_l(beta, &apply_rankone(ds, &atk)?, cfg)?;
    if (value - profile_value).abs() > 1e-8 * (1.0 + profile_value.abs()) {
        return Err(Error::Reconstruction(format!(
            "perturbed loss {value} does not reproduce profile maximum {profile_value}"
        )));
    }
    atk.value = value;
    Ok(atk)
}
