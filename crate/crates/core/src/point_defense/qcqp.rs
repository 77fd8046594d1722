//! Case analysis for `min S_T(β)` subject to `S_T(β) ≥ S_k(β)` for the three other surrogates.
//!
//! Every case produces a stationary point of the weighted Lagrangian
//! `Σ_k w_k S_k` with `Σ_k w_k = 1`. Such a point is a global minimizer of the
//! sub-problem for `T` when `w_k ≥ 0` for `k ≠ T`, the weighted Hessian is PSD,
//! every surrogate with nonzero weight ties with `S_T`, and `S_T` is the largest
//! surrogate. [`certify`] checks exactly these conditions.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::psd::{psd_interval, PsdInterval};
use super::{CaseLabel, QcqpDiagnostics};
use crate::dataset::Dataset;
use crate::linalg;
use crate::objective::{Surrogate, SurrogateMatrices, TradeoffConfig};
use crate::search::bisect;

/// Numerical thresholds of the optimality certificate.
#[derive(Clone, Copy, Debug)]
pub struct CertificateTolerances {
    /// Weighted Hessian: `λ_min ≥ −psd · (1 + |tr H|)`.
    pub psd: f64,
    /// `‖Σ w_k(M_kβ − E_k)‖ ≤ stationarity · (1 + Σ |w_k|(‖M_kβ‖ + ‖E_k‖))`.
    pub stationarity: f64,
    /// `|w_k · C_k| ≤ slackness · (1 + |S_T|)`.
    pub slackness: f64,
    /// `C_k ≥ −constraint · (1 + |S_T|)`.
    pub constraint: f64,
    /// Multipliers may dip to `−weight` before they count as negative.
    pub weight: f64,
}

pub const TOLERANCES: CertificateTolerances = CertificateTolerances {
    psd: 1e-8,
    stationarity: 1e-7,
    slackness: 1e-8,
    constraint: 1e-9,
    weight: 1e-12,
};

/// Measured certificate quantities for one target and weight vector.
#[derive(Clone, Debug)]
pub struct CertificateCheck {
    pub target: Surrogate,
    pub multipliers: [f64; 3],
    pub constraint_values: [f64; 3],
    pub psd_margin: f64,
    pub stationarity: f64,
    pub slackness: f64,
    pub passes: bool,
}

pub fn check_certificate(
    mats: &SurrogateMatrices,
    target: Surrogate,
    beta: &DVector<f64>,
    weights: &[f64; 4],
) -> CertificateCheck {
    let tol = TOLERANCES;
    let vals = mats.values(beta);
    let st = vals[target.index()];
    let scale = 1.0 + st.abs();
    let others = target.others();
    let mut multipliers = [0.0; 3];
    let mut constraint_values = [0.0; 3];
    let mut slackness: f64 = 0.0;
    let mut weights_ok = (weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9;
    for (i, k) in others.iter().enumerate() {
        let w = weights[k.index()];
        weights_ok &= w >= -tol.weight;
        multipliers[i] = w.max(0.0);
        constraint_values[i] = st - vals[k.index()];
        slackness = slackness.max((w * constraint_values[i]).abs());
    }
    let mut grad = DVector::zeros(mats.p());
    let mut grad_scale = 1.0;
    let mut hess = DMatrix::zeros(mats.p(), mats.p());
    for s in Surrogate::ALL {
        let w = weights[s.index()];
        if w == 0.0 {
            continue;
        }
        let mb = &mats.m[s.index()] * beta;
        grad_scale += w.abs() * (mb.norm() + mats.e[s.index()].norm());
        grad += (mb - &mats.e[s.index()]) * w;
        hess += &mats.m[s.index()] * w;
    }
    let stationarity = grad.norm() / grad_scale;
    let psd_margin = linalg::min_eigenvalue(&hess);
    let min_constraint = constraint_values.iter().copied().fold(f64::INFINITY, f64::min);
    let passes = weights_ok
        && psd_margin >= -tol.psd * linalg::psd_scale(&hess)
        && stationarity <= tol.stationarity
        && slackness <= tol.slackness * scale
        && min_constraint >= -tol.constraint * scale;
    CertificateCheck {
        target,
        multipliers,
        constraint_values,
        psd_margin,
        stationarity,
        slackness,
        passes,
    }
}

/// Tries each involved surrogate as the target and returns the first passing check.
pub fn certify(
    mats: &SurrogateMatrices,
    beta: &DVector<f64>,
    weights: &[f64; 4],
    involved: &[Surrogate],
) -> Option<CertificateCheck> {
    involved
        .iter()
        .map(|&t| check_certificate(mats, t, beta, weights))
        .find(|c| c.passes)
}

/// Sub-problem result: the point, its envelope value and the diagnostics.
#[derive(Clone, Debug)]
pub struct Candidate {
    pub beta: DVector<f64>,
    pub value: f64,
    pub diagnostics: QcqpDiagnostics,
}

fn certified_candidate(
    mats: &SurrogateMatrices,
    beta: DVector<f64>,
    check: CertificateCheck,
    case_label: CaseLabel,
    gammas: Vec<f64>,
) -> Candidate {
    let value = mats.envelope_value(&beta);
    Candidate {
        beta,
        value,
        diagnostics: QcqpDiagnostics {
            case_label,
            target: Some(check.target),
            multipliers: check.multipliers,
            lagrange_gammas: gammas,
            psd_margin: check.psd_margin,
            constraint_values: check.constraint_values,
            stationarity_residual: check.stationarity,
            certified: true,
            notes: Vec::new(),
        },
    }
}

/// Outcome of a case solver: certified candidates plus notes on why others were dropped.
#[derive(Clone, Debug, Default)]
pub struct CaseOutcome {
    pub candidates: Vec<Candidate>,
    pub notes: Vec<String>,
}

/// Solves `Σ w_k M_k β = Σ w_k E_k` when the weighted matrix is positive definite.
pub(crate) fn weighted_stationary(mats: &SurrogateMatrices, weights: &[f64; 4]) -> Option<DVector<f64>> {
    let p = mats.p();
    let mut h = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for s in Surrogate::ALL {
        let w = weights[s.index()];
        if w != 0.0 {
            h += &mats.m[s.index()] * w;
            rhs += &mats.e[s.index()] * w;
        }
    }
    let chol = h.cholesky()?;
    let beta = chol.solve(&rhs);
    beta.iter().all(|v| v.is_finite()).then_some(beta)
}

pub(crate) fn identical(mats: &SurrogateMatrices, a: Surrogate, b: Surrogate) -> bool {
    let (i, j) = (a.index(), b.index());
    let scale = 1.0 + mats.m[i].amax() + mats.e[i].amax() + mats.constant[i].abs();
    let tol = 1e-14 * scale;
    (&mats.m[i] - &mats.m[j]).amax() <= tol
        && (&mats.e[i] - &mats.e[j]).amax() <= tol
        && (mats.constant[i] - mats.constant[j]).abs() <= tol
}

/// Case 1: no constraint binds, `β̃ = M_T⁻¹E_T`.
pub fn solve_case1(target: Surrogate, mats: &SurrogateMatrices) -> CaseOutcome {
    let mut out = CaseOutcome::default();
    let k = target.index();
    if !linalg::is_psd(&mats.m[k]) {
        out.notes.push(format!("case1({target}): M not PSD"));
        return out;
    }
    let Some(beta) = linalg::sym_solve(&mats.m[k], &mats.e[k]) else {
        out.notes.push(format!("case1({target}): singular"));
        return out;
    };
    let mut w = [0.0; 4];
    w[k] = 1.0;
    let check = check_certificate(mats, target, &beta, &w);
    if check.passes {
        out.candidates.push(certified_candidate(mats, beta, check, CaseLabel::Case1, Vec::new()));
    } else {
        out.notes.push(format!("case1({target}): constraints violated"));
    }
    out
}

/// Scan points clustered toward the ends of the interval.
fn scan_points(iv: &PsdInterval) -> Vec<f64> {
    const PER_SIDE: usize = 32;
    let Some(c) = iv.center() else {
        return Vec::new();
    };
    let mut pts = vec![c];
    for (end, sign) in [(iv.lower, -1.0), (iv.upper, 1.0)] {
        for k in 0..PER_SIDE {
            let t = k as f64 / (PER_SIDE - 1) as f64;
            let x = if end.is_finite() {
                // distance to the end shrinks from half-width to 1e−9·half-width
                let half = (end - c).abs();
                end - sign * half * 10f64.powf(-9.0 * t)
            } else {
                c + sign * (1.0 + c.abs()) * 10f64.powf(-4.0 + 10.0 * t)
            };
            pts.push(x);
        }
    }
    pts.retain(|x| iv.contains(*x));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn pair_weights(t: Surrogate, j: Surrogate, a: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    w[t.index()] = 1.0 - a;
    w[j.index()] = a;
    w
}

/// Case 2: the constraint `S_T ≥ S_j` binds.
///
/// With weight `a` on `S_j`, the stationary point `β(a)` solves
/// `[(1−a)M_T + aM_j]β = (1−a)E_T + aE_j`; roots of `K(a) = S_T − S_j` at
/// `β(a)` are located by a log-clustered scan of the positive definite
/// interval followed by bisection. A root with `a < 0` certifies the `j`
/// sub-problem instead.
pub fn solve_case2(target: Surrogate, binding: Surrogate, mats: &SurrogateMatrices) -> CaseOutcome {
    let mut out = CaseOutcome::default();
    let label = CaseLabel::Case2 { binding };
    if identical(mats, target, binding) {
        out.notes.push(format!("{label}({target}): duplicate constraint, deferred to case1"));
        return out;
    }
    let (ti, ji) = (target.index(), binding.index());
    let iv = match psd_interval(&mats.m[ti], &mats.m[ji]) {
        Ok(iv) if !iv.is_empty() => iv,
        _ => {
            out.notes.push(format!("{label}({target}): empty PSD interval"));
            return out;
        }
    };
    let alpha_star = iv.center().unwrap_or(0.0);
    let k_of = |a: f64| -> f64 {
        match weighted_stationary(mats, &pair_weights(target, binding, a)) {
            Some(b) => mats.value(target, &b) - mats.value(binding, &b),
            None => f64::NAN,
        }
    };
    let pts = scan_points(&iv);
    let vals: Vec<f64> = pts.iter().map(|&a| k_of(a)).collect();
    let mut roots = Vec::new();
    for i in 0..pts.len() {
        if vals[i] == 0.0 {
            roots.push(pts[i]);
        }
        if i + 1 < pts.len()
            && vals[i].is_finite()
            && vals[i + 1].is_finite()
            && vals[i] * vals[i + 1] < 0.0
        {
            if let Some(r) = bisect(k_of, pts[i], pts[i + 1], 0.0) {
                roots.push(r);
            }
        }
    }
    if roots.is_empty() {
        out.notes.push(format!("{label}({target}): no root of K in the scanned interval"));
    }
    for a in roots {
        let w = pair_weights(target, binding, a);
        let Some(beta) = weighted_stationary(mats, &w) else {
            continue;
        };
        let involved = if a >= 0.0 { [target, binding] } else { [binding, target] };
        match certify(mats, &beta, &w, &involved) {
            Some(check) => out.candidates.push(certified_candidate(
                mats,
                beta,
                check,
                label,
                vec![a - alpha_star],
            )),
            None => out.notes.push(format!("{label}({target}): root a={a:.6e} failed certificate")),
        }
    }
    out
}

fn triple_weights(t: Surrogate, i: Surrogate, j: Surrogate, a: f64, b: f64) -> [f64; 4] {
    let mut w = [0.0; 4];
    w[t.index()] = 1.0 - a - b;
    w[i.index()] = a;
    w[j.index()] = b;
    w
}

/// Case 3: the two constraints for `i` and `j` bind.
///
/// Damped Newton on `(S_T − S_i, S_T − S_j)(β(a, b)) = 0` with a
/// finite-difference Jacobian, started from a 5×5 grid.
pub fn solve_case3(
    target: Surrogate,
    binding: (Surrogate, Surrogate),
    mats: &SurrogateMatrices,
) -> CaseOutcome {
    let mut out = CaseOutcome::default();
    let (si, sj) = binding;
    let label = CaseLabel::Case3 { binding };
    if identical(mats, target, si) || identical(mats, target, sj) || identical(mats, si, sj) {
        out.notes.push(format!("{label}({target}): rank deficient, deferred to case2"));
        return out;
    }
    let (ti, ii, ji) = (target.index(), si.index(), sj.index());
    let (Ok(iv_a), Ok(iv_b)) = (psd_interval(&mats.m[ti], &mats.m[ii]), psd_interval(&mats.m[ti], &mats.m[ji]))
    else {
        return out;
    };
    let (Some((alo, ahi)), Some((blo, bhi))) = (iv_a.finite_window(10.0), iv_b.finite_window(10.0)) else {
        out.notes.push(format!("{label}({target}): empty PSD interval"));
        return out;
    };

    let residual = |a: f64, b: f64| -> Option<(Vector2<f64>, DVector<f64>)> {
        let beta = weighted_stationary(mats, &triple_weights(target, si, sj, a, b))?;
        let st = mats.value(target, &beta);
        Some((Vector2::new(st - mats.value(si, &beta), st - mats.value(sj, &beta)), beta))
    };

    let mut roots: Vec<(f64, f64, DVector<f64>)> = Vec::new();
    let mut last_residual = f64::INFINITY;
    for gi in 0..5 {
        for gj in 0..5 {
            let mut a = alo + (ahi - alo) * (gi as f64 + 0.5) / 5.0;
            let mut b = blo + (bhi - blo) * (gj as f64 + 0.5) / 5.0;
            let Some((mut f, mut beta)) = residual(a, b) else {
                continue;
            };
            let scale = 1.0 + mats.value(target, &beta).abs();
            let mut converged = false;
            for _ in 0..100 {
                if f.norm() <= 1e-12 * scale {
                    converged = true;
                    break;
                }
                let ha = 1e-6 * (1.0 + a.abs());
                let hb = 1e-6 * (1.0 + b.abs());
                let jac = match (residual(a + ha, b), residual(a - ha, b), residual(a, b + hb), residual(a, b - hb)) {
                    (Some(pa), Some(ma), Some(pb), Some(mb)) => {
                        Matrix2::from_columns(&[(pa.0 - ma.0) / (2.0 * ha), (pb.0 - mb.0) / (2.0 * hb)])
                    }
                    _ => break,
                };
                let Some(step) = jac.lu().solve(&(-f)) else {
                    break;
                };
                let mut t = 1.0;
                let mut moved = false;
                while t > 1e-12 {
                    if let Some((fn_, bn)) = residual(a + t * step[0], b + t * step[1]) {
                        if fn_.norm() < (1.0 - 1e-4 * t) * f.norm() {
                            a += t * step[0];
                            b += t * step[1];
                            f = fn_;
                            beta = bn;
                            moved = true;
                            break;
                        }
                    }
                    t *= 0.5;
                }
                if !moved {
                    converged = f.norm() <= 1e-9 * scale;
                    break;
                }
            }
            last_residual = last_residual.min(f.norm());
            if converged && !roots.iter().any(|r| (&r.2 - &beta).norm() <= 1e-8 * (1.0 + beta.norm())) {
                roots.push((a, b, beta));
            }
        }
    }
    if roots.is_empty() {
        out.notes.push(format!(
            "{label}({target}): Newton did not converge (best residual {last_residual:.3e})"
        ));
    }
    let alpha_star = iv_a.center().unwrap_or(0.0);
    for (a, b, beta) in roots {
        let w = triple_weights(target, si, sj, a, b);
        match certify(mats, &beta, &w, &[target, si, sj]) {
            Some(check) => out.candidates.push(certified_candidate(
                mats,
                beta,
                check,
                label,
                vec![a - alpha_star, b],
            )),
            None => out.notes.push(format!("{label}({target}): root ({a:.4e}, {b:.4e}) failed certificate")),
        }
    }
    out
}

/// Scalar targets `(‖β‖², R₁, R₂)` at which all four surrogates tie.
pub fn case4_targets(mats: &SurrogateMatrices, eta: f64) -> Option<Vector3<f64>> {
    let eta2 = eta * eta;
    let t = Surrogate::G1;
    let (at, ct, dt) = mats.coeffs.terms(t);
    let mut a = Matrix3::zeros();
    let mut rhs = Vector3::zeros();
    for (row, k) in t.others().iter().enumerate() {
        let (ak, ck, dk) = mats.coeffs.terms(*k);
        a[(row, 0)] = (at - ak) * eta2;
        a[(row, 1)] = ct - ck;
        a[(row, 2)] = dt - dk;
        rhs[row] = -(at - ak) * eta2;
    }
    let scale = a.amax();
    if scale == 0.0 || a.determinant().abs() <= 1e-12 * scale.powi(3) {
        return None;
    }
    a.lu().solve(&rhs)
}

/// Levenberg–Marquardt search for β with `(‖β‖², R₁, R₂)` equal to `u`.
pub fn recover_case4_beta(ds: &Dataset, u: &Vector3<f64>) -> Option<DVector<f64>> {
    let p = ds.p();
    let (x1, x2, y1, y2) = (ds.x1(), ds.x2(), ds.y1(), ds.y2());
    let s = Vector3::new(1.0 + u[0], 1.0 + u[1], 1.0 + u[2]);
    let resid = |beta: &DVector<f64>| {
        let r1 = y1 - x1 * beta;
        let r2 = y2 - x2 * beta;
        let f = Vector3::new(
            (beta.norm_squared() - u[0]) / s[0],
            (r1.norm_squared() - u[1]) / s[1],
            (r2.norm_squared() - u[2]) / s[2],
        );
        (f, r1, r2)
    };
    let accept = 1e-6 * (1.0 + u.amax());
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA5E4);
    for start in 0..16 {
        let mut beta = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
        let n = beta.norm();
        if n > 0.0 {
            beta *= u[0].sqrt() / n * if start == 0 { 1.0 } else { rng.random_range(0.5..1.5) };
        }
        let mut mu = 1e-3;
        let (mut f, mut r1, mut r2) = resid(&beta);
        for _ in 0..300 {
            let mut jac = DMatrix::zeros(3, p);
            jac.row_mut(0).copy_from(&(beta.transpose() * (2.0 / s[0])));
            jac.row_mut(1).copy_from(&((x1.transpose() * &r1).transpose() * (-2.0 / s[1])));
            jac.row_mut(2).copy_from(&((x2.transpose() * &r2).transpose() * (-2.0 / s[2])));
            let fd = DVector::from_column_slice(f.as_slice());
            let jtj = jac.transpose() * &jac;
            let g = jac.transpose() * &fd;
            let mut improved = false;
            for _ in 0..30 {
                let mut a = jtj.clone();
                for i in 0..p {
                    a[(i, i)] += mu * (1.0 + jtj[(i, i)]);
                }
                let Some(step) = a.cholesky().map(|c| c.solve(&(-&g))) else {
                    mu *= 10.0;
                    continue;
                };
                let cand = &beta + step;
                let (fc, r1c, r2c) = resid(&cand);
                if fc.norm_squared() < f.norm_squared() {
                    beta = cand;
                    f = fc;
                    r1 = r1c;
                    r2 = r2c;
                    mu = (mu * 0.3).max(1e-15);
                    improved = true;
                    break;
                }
                mu *= 10.0;
            }
            if !improved {
                break;
            }
        }
        let dev = Vector3::new(f[0] * s[0], f[1] * s[1], f[2] * s[2]).amax();
        if dev <= accept {
            return Some(beta);
        }
    }
    None
}

/// Least-squares multipliers `w` (sum one, `w_k ≥ 0` for `k ≠ T`) minimizing
/// `‖Σ w_k ∇S_k(β)‖`, by enumerating which of the three are zero.
fn fit_multipliers(mats: &SurrogateMatrices, target: Surrogate, beta: &DVector<f64>) -> Option<[f64; 4]> {
    let grads: Vec<DVector<f64>> = Surrogate::ALL.iter().map(|&s| &mats.m[s.index()] * beta - &mats.e[s.index()]).collect();
    let gt = &grads[target.index()];
    let others = target.others();
    let mut best: Option<(f64, [f64; 4])> = None;
    for mask in 0u8..8 {
        let free: Vec<Surrogate> = (0..3).filter(|i| mask & (1 << i) != 0).map(|i| others[i]).collect();
        let mut w = [0.0; 4];
        if !free.is_empty() {
            let a = DMatrix::from_fn(mats.p(), free.len(), |r, c| grads[free[c].index()][r] - gt[r]);
            let sol = linalg::lstsq(&a, &(-gt));
            if sol.iter().any(|&v| v < 0.0) {
                continue;
            }
            for (c, s) in free.iter().enumerate() {
                w[s.index()] = sol[c];
            }
        }
        w[target.index()] = 1.0 - others.iter().map(|s| w[s.index()]).sum::<f64>();
        let mut r = DVector::zeros(mats.p());
        for s in Surrogate::ALL {
            r += &grads[s.index()] * w[s.index()];
        }
        let res = r.norm();
        if best.as_ref().is_none_or(|b| res < b.0) {
            best = Some((res, w));
        }
    }
    best.map(|b| b.1)
}

/// Case 4: all three constraints bind.
pub fn solve_case4(target: Surrogate, mats: &SurrogateMatrices, ds: &Dataset, cfg: &TradeoffConfig) -> CaseOutcome {
    let mut out = CaseOutcome::default();
    let Some(u) = case4_targets(mats, cfg.eta) else {
        out.notes.push(format!("case4({target}): tie system singular"));
        return out;
    };
    if u.iter().any(|&v| v < 0.0) {
        out.notes.push(format!("case4({target}): negative scalar solution"));
        return out;
    }
    let Some(beta) = recover_case4_beta(ds, &u) else {
        out.notes.push(format!("case4({target}): no β attains the scalar targets"));
        return out;
    };
    let Some(w) = fit_multipliers(mats, target, &beta) else {
        return out;
    };
    let check = check_certificate(mats, target, &beta, &w);
    if check.passes {
        out.candidates.push(certified_candidate(mats, beta, check, CaseLabel::Case4, Vec::new()));
    } else {
        out.notes.push(format!("case4({target}): multipliers fail certificate"));
    }
    out
}
