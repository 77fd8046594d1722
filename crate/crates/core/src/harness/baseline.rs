//! Non-robust reference models.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::objective::{objective_l, TradeoffConfig};
use crate::search::bisect;

/// Ordinary least squares; the minimum-norm solution when `XᵀX` is singular.
pub fn ols_fit(ds: &Dataset) -> DVector<f64> {
    linalg::lstsq(ds.features(), ds.targets())
}

/// `(H, e)` with `w₁R₁ + w₂R₂ = βᵀHβ − 2eᵀβ + const`.
fn weighted_quadratic(ds: &Dataset, w1: f64, w2: f64) -> (DMatrix<f64>, DVector<f64>) {
    let (x1, x2) = (ds.x1(), ds.x2());
    let h = x1.transpose() * x1 * w1 + x2.transpose() * x2 * w2;
    let e = x1.transpose() * ds.y1() * w1 + x2.transpose() * ds.y2() * w2;
    (h, e)
}

/// Stationary point of `(1/n)(R₁ + R₂) + λt(R₁/m − R₂/(n−m))` when its Hessian is positive definite.
fn mixture_solution(ds: &Dataset, lambda: f64, t: f64) -> Option<DVector<f64>> {
    let (n, m) = (ds.n() as f64, ds.m() as f64);
    let (h, e) = weighted_quadratic(ds, 1.0 / n + lambda * t / m, 1.0 / n - lambda * t / (n - m));
    if !linalg::is_pd(&h) {
        return None;
    }
    linalg::sym_solve(&h, &e)
}

/// `R₁/m − R₂/(n−m)` at β.
fn signed_gap(beta: &DVector<f64>, ds: &Dataset) -> f64 {
    let (r1, r2) = ds.group_rss(beta).expect("dimension checked by caller");
    r1 / ds.m() as f64 - r2 / ds.n2() as f64
}

const SUBGRADIENT_ITERS: usize = 4000;

/// Normalized subgradient descent on the clean loss from `start`.
fn subgradient_polish(ds: &Dataset, cfg: &TradeoffConfig, start: DVector<f64>) -> (DVector<f64>, f64) {
    let (n, m) = (ds.n() as f64, ds.m() as f64);
    let loss = |b: &DVector<f64>| objective_l(b, ds, cfg).unwrap_or(f64::INFINITY);
    let mut beta = start;
    let mut best = (beta.clone(), loss(&beta));
    let mut s0 = 0.05 * (1.0 + beta.norm());
    let mut stall = 0;
    let mut t = 0usize;
    for _ in 0..SUBGRADIENT_ITERS {
        let sign = if signed_gap(&beta, ds) >= 0.0 { 1.0 } else { -1.0 };
        let (w1, w2) = (1.0 / n + cfg.lambda * sign / m, 1.0 / n - cfg.lambda * sign / (n - m));
        let (h, e) = weighted_quadratic(ds, w1, w2);
        let g = (&h * &beta - e) * 2.0;
        let gn = g.norm();
        if gn == 0.0 {
            break;
        }
        beta -= g * (s0 / ((t + 1) as f64).sqrt() / gn);
        t += 1;
        let v = loss(&beta);
        if v < best.1 {
            best = (beta.clone(), v);
            stall = 0;
        } else {
            stall += 1;
        }
        if stall >= 200 {
            s0 *= 0.5;
            beta = best.0.clone();
            stall = 0;
            t = 0;
        }
    }
    best
}

/// Minimizer of the clean fairness-penalized loss, ignoring any adversary.
///
/// Candidates are the stationary points of each sign branch, the point on the
/// zero-gap surface found by bisecting the branch mixture, and a subgradient
/// polish of the best of these.
pub fn fair_fit_unrobust(ds: &Dataset, lambda: f64) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    let ols = ols_fit(ds);
    if lambda == 0.0 {
        return Ok(ols);
    }
    let cfg = TradeoffConfig { lambda, eta: 1.0 };
    let mut cands = vec![ols.clone()];
    const GRID: usize = 200;
    let ts: Vec<f64> = (0..=GRID).map(|i| -1.0 + 2.0 * i as f64 / GRID as f64).collect();
    let sols: Vec<Option<DVector<f64>>> = ts.iter().map(|&t| mixture_solution(ds, lambda, t)).collect();
    for (i, sol) in sols.iter().enumerate() {
        if let Some(b) = sol {
            if i == 0 || i == GRID {
                cands.push(b.clone());
            }
        }
    }
    for i in 0..GRID {
        let (Some(a), Some(b)) = (&sols[i], &sols[i + 1]) else {
            continue;
        };
        let (fa, fb) = (signed_gap(a, ds), signed_gap(b, ds));
        if fa == 0.0 {
            cands.push(a.clone());
        } else if fa * fb < 0.0 {
            let phi = |t: f64| {
                mixture_solution(ds, lambda, t)
                    .map(|b| signed_gap(&b, ds))
                    .unwrap_or(f64::NAN)
            };
            if let Some(t) = bisect(phi, ts[i], ts[i + 1], 0.0) {
                if let Some(b) = mixture_solution(ds, lambda, t) {
                    cands.push(b);
                }
            }
        }
    }
    let loss = |b: &DVector<f64>| objective_l(b, ds, &cfg).unwrap_or(f64::INFINITY);
    let best = cands
        .into_iter()
        .min_by(|a, b| loss(a).total_cmp(&loss(b)))
        .expect("OLS is always a candidate");
    let (polished, pv) = subgradient_polish(ds, &cfg, best.clone());
    Ok(if pv < loss(&best) { polished } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthParams};
    use crate::objective::fairness_gap;

    fn desk(seed: u64, offset: f64) -> Dataset {
        synth_generate(&SynthParams {
            m: 8,
            n2: 10,
            p: 3,
            beta01: vec![1.0, -0.5, 0.8],
            beta02: vec![0.6, 0.2, -0.4],
            group1_offset: vec![offset],
            noise_std: 0.3,
            feature_low: -1.0,
            feature_high: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn ols_recovers_noiseless_generator() {
        let mut p = SynthParams::reference(3);
        p.group1_offset = vec![0.0];
        p.beta02 = p.beta01.clone();
        p.noise_std = 0.0;
        let ds = synth_generate(&p).unwrap();
        let b = ols_fit(&ds);
        for v in b.iter() {
            assert!((v - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn ols_normal_equations_and_pinv() {
        let ds = desk(1, 0.5);
        let b = ols_fit(&ds);
        let resid = ds.targets() - ds.features() * &b;
        assert!((ds.features().transpose() * resid).norm() <= 1e-8);
        let pinv = ds.features().clone().pseudo_inverse(1e-14).unwrap();
        assert!((pinv * ds.targets() - &b).norm() <= 1e-10);
    }

    #[test]
    fn lambda_zero_is_ols() {
        let ds = desk(2, 0.5);
        assert_eq!(fair_fit_unrobust(&ds, 0.0).unwrap(), ols_fit(&ds));
    }

    #[test]
    fn never_worse_than_ols() {
        for seed in 0..10 {
            let ds = desk(seed, 1.0);
            for lambda in [0.1, 0.5, 2.0, 10.0] {
                let cfg = TradeoffConfig { lambda, eta: 1.0 };
                let fair = fair_fit_unrobust(&ds, lambda).unwrap();
                let l_fair = objective_l(&fair, &ds, &cfg).unwrap();
                let l_ols = objective_l(&ols_fit(&ds), &ds, &cfg).unwrap();
                assert!(l_fair <= l_ols + 1e-12);
            }
        }
    }

    #[test]
    fn mirrored_groups_have_zero_gap() {
        let half = desk(4, 0.0);
        let x = DMatrix::from_fn(16, 3, |i, j| half.features()[(i % 8, j)]);
        let y = DVector::from_fn(16, |i, _| half.targets()[i % 8]);
        let ds = Dataset::new(x, y, 8).unwrap();
        let beta = fair_fit_unrobust(&ds, 1.0).unwrap();
        assert!(fairness_gap(&beta, &ds).unwrap() <= 1e-10);
    }

    #[test]
    fn large_lambda_closes_the_gap() {
        let ds = desk(5, 2.0);
        let beta = fair_fit_unrobust(&ds, 50.0).unwrap();
        let ols = ols_fit(&ds);
        assert!(fairness_gap(&beta, &ds).unwrap() < 1e-3 * fairness_gap(&ols, &ds).unwrap());
    }
}
