//! Worst-case single inserted point against a fixed model.
//!
//! For a point `x̃₀ = [x₀; y₀]` with `‖x̃₀‖ ≤ η` the poisoned loss depends on the
//! point only through `(x̃₀ᵀb)²` with `b = [β; −1]`, and is convex in that
//! quantity. Its maximum is therefore either the aligned point `η·b/‖b‖` or any
//! point orthogonal to `b`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Group};
use crate::error::Result;
use crate::linalg;
use crate::objective::{point_coeffs, Surrogate, TradeoffConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PointMode {
    Aligned,
    Orthogonal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdversarialPoint {
    #[serde(with = "crate::serde_vec")]
    pub x0: DVector<f64>,
    pub y0: f64,
    pub g0: Group,
    #[serde(rename = "value")]
    pub achieved_value: f64,
    pub branch: Surrogate,
    pub mode: PointMode,
}

impl AdversarialPoint {
    /// `[x₀; y₀]`.
    pub fn stacked(&self) -> DVector<f64> {
        let p = self.x0.len();
        DVector::from_fn(p + 1, |i, _| if i < p { self.x0[i] } else { self.y0 })
    }
}

/// `[β; −1]`.
pub fn augmented(beta: &DVector<f64>) -> DVector<f64> {
    let p = beta.len();
    DVector::from_fn(p + 1, |i, _| if i < p { beta[i] } else { -1.0 })
}

/// Unit vector orthogonal to `b` (first Householder complement column).
pub fn orthogonal_to(b: &DVector<f64>) -> DVector<f64> {
    linalg::orthogonal_complement_vector(b, 0)
}

pub fn best_point(beta: &DVector<f64>, ds: &Dataset, cfg: &TradeoffConfig) -> Result<AdversarialPoint> {
    best_point_with(beta, ds, cfg, 0)
}

/// As [`best_point`], choosing the `complement_index`-th orthogonal direction
/// when an orthogonal point is needed.
pub fn best_point_with(
    beta: &DVector<f64>,
    ds: &Dataset,
    cfg: &TradeoffConfig,
    complement_index: usize,
) -> Result<AdversarialPoint> {
    cfg.validate()?;
    let coeffs = point_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let (r1, r2) = ds.group_rss(beta)?;
    let energy = cfg.eta * cfg.eta * (1.0 + beta.norm_squared());

    let mut branch = Surrogate::G1;
    let mut value = f64::NEG_INFINITY;
    for s in Surrogate::ALL {
        let (a, c, d) = coeffs.terms(s);
        let v = a * energy + c * r1 + d * r2;
        if v > value {
            value = v;
            branch = s;
        }
    }

    let orthogonal = match branch {
        Surrogate::H1 => coeffs.c_h1 < 0.0,
        Surrogate::G2 => coeffs.d_g2 < 0.0,
        _ => false,
    };
    let b = augmented(beta);
    let (dir, mode) = if orthogonal {
        (
            linalg::orthogonal_complement_vector(&b, complement_index),
            PointMode::Orthogonal,
        )
    } else {
        (b.unscale(b.norm()), PointMode::Aligned)
    };
    let point = dir * cfg.eta;
    let p = beta.len();
    Ok(AdversarialPoint {
        x0: point.rows(0, p).into_owned(),
        y0: point[p],
        g0: branch.group(),
        achieved_value: value,
        branch,
        mode,
    })
}

/// Inserts the point into its group.
pub fn apply_point(ds: &Dataset, pt: &AdversarialPoint) -> Result<Dataset> {
    ds.insert_row(&pt.x0, pt.y0, pt.g0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthParams};
    use crate::objective::{objective_l, surrogate_value};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn desk(seed: u64) -> Dataset {
        synth_generate(&SynthParams {
            m: 6,
            n2: 6,
            p: 3,
            beta01: vec![1.0, 0.5, -1.0],
            beta02: vec![0.8, 0.2, -0.5],
            group1_offset: vec![0.5],
            noise_std: 0.3,
            feature_low: -1.0,
            feature_high: 1.0,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn axis_complement() {
        let b = DVector::from_vec(vec![0.0, 0.0, 0.0, -1.0]);
        let u = orthogonal_to(&b);
        assert_eq!(u, DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]));
        assert_eq!(orthogonal_to(&b), u);
    }

    #[test]
    fn lambda_zero_is_aligned_group_one() {
        let ds = desk(1);
        let cfg = TradeoffConfig::new(0.0, 1.5).unwrap();
        let beta = DVector::from_vec(vec![0.3, 0.1, -0.2]);
        let pt = best_point(&beta, &ds, &cfg).unwrap();
        assert_eq!(pt.mode, PointMode::Aligned);
        assert_eq!(pt.g0, Group::One);
        let (r1, r2) = ds.group_rss(&beta).unwrap();
        let expect = (2.25 * (1.0 + beta.norm_squared()) + r1 + r2) / 13.0;
        assert!((pt.achieved_value - expect).abs() < 1e-12);
    }

    #[test]
    fn value_reproduced_on_poisoned_data() {
        for seed in 0..40 {
            let ds = desk(seed);
            let lambda = [0.0, 0.1, 0.5, 0.9, 1.5, 3.0][seed as usize % 6];
            let cfg = TradeoffConfig::new(lambda, 0.5 + seed as f64 * 0.1).unwrap();
            let beta = DVector::from_fn(3, |i, _| ((seed * 3 + i as u64) as f64 * 0.71).cos());
            let pt = best_point(&beta, &ds, &cfg).unwrap();
            assert!(pt.stacked().norm() <= cfg.eta * (1.0 + 1e-12));
            let poisoned = apply_point(&ds, &pt).unwrap();
            let l = objective_l(&beta, &poisoned, &cfg).unwrap();
            assert!((l - pt.achieved_value).abs() <= 1e-9, "seed {seed}: {l} vs {}", pt.achieved_value);
            let b = augmented(&beta);
            if pt.mode == PointMode::Orthogonal {
                assert!(pt.stacked().dot(&b).abs() <= 1e-10 * cfg.eta * b.norm());
            }
            let direct = surrogate_value(pt.branch, &beta, &ds, &cfg).unwrap();
            assert!((direct - pt.achieved_value).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }

    #[test]
    fn orthogonal_choice_does_not_change_value() {
        // group-2 targets pushed far off so the h-branches dominate
        let base = desk(5);
        let mut y = base.targets().clone();
        for i in base.m()..base.n() {
            y[i] += 6.0;
        }
        let ds = Dataset::new(base.features().clone(), y, base.m()).unwrap();
        // λ large makes c_h1 and d_g2 negative
        let cfg = TradeoffConfig::new(3.0, 0.2).unwrap();
        let mut seen_orth = false;
        for k in 0..30 {
            let beta = DVector::from_fn(3, |i, _| [1.0, 0.5, -1.0][i] + 0.05 * ((k * 3 + i) as f64).sin());
            let a = best_point_with(&beta, &ds, &cfg, 0).unwrap();
            let b = best_point_with(&beta, &ds, &cfg, 2).unwrap();
            if a.mode == PointMode::Orthogonal {
                seen_orth = true;
                let la = objective_l(&beta, &apply_point(&ds, &a).unwrap(), &cfg).unwrap();
                let lb = objective_l(&beta, &apply_point(&ds, &b).unwrap(), &cfg).unwrap();
                assert!((la - lb).abs() <= 1e-10);
            }
        }
        assert!(seen_orth);
    }

    #[test]
    fn monte_carlo_never_beats_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for seed in 0..5 {
            let ds = desk(100 + seed);
            let cfg = TradeoffConfig::new(0.9, 1.0).unwrap();
            let beta = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let pt = best_point(&beta, &ds, &cfg).unwrap();
            for _ in 0..2000 {
                let v = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                let r = rng.random::<f64>().sqrt() * cfg.eta;
                let v = v.unscale(v.norm()) * r;
                let g = if rng.random::<bool>() { Group::One } else { Group::Two };
                let poisoned = ds.insert_row(&v.rows(0, 3).into_owned(), v[3], g).unwrap();
                let l = objective_l(&beta, &poisoned, &cfg).unwrap();
                assert!(l <= pt.achieved_value + 1e-9);
            }
        }
    }

    #[test]
    fn aligned_value_grows_with_eta() {
        let ds = desk(9);
        let beta = DVector::from_vec(vec![0.5, 0.5, 0.5]);
        let mut last = f64::NEG_INFINITY;
        for k in 1..20 {
            let cfg = TradeoffConfig::new(0.2, 0.25 * k as f64).unwrap();
            let pt = best_point(&beta, &ds, &cfg).unwrap();
            assert_eq!(pt.mode, PointMode::Aligned);
            assert!(pt.achieved_value >= last);
            last = pt.achieved_value;
        }
    }
}
