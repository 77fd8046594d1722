//! Fairness-penalized squared loss and the coefficient tables of both attack models.
//!
//! The loss is `L(β) = (1/n)‖y − Xβ‖² + λ·|R₁/m − R₂/(n−m)|` where `R_g` is the
//! residual sum of squares of group `g`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

/// Fairness weight and attack energy budget.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffConfig {
    pub lambda: f64,
    pub eta: f64,
}

impl TradeoffConfig {
    pub fn new(lambda: f64, eta: f64) -> Result<Self> {
        let cfg = Self { lambda, eta };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::validation(format!("eta must be > 0, got {}", self.eta)));
        }
        Ok(())
    }
}

pub fn mse(beta: &DVector<f64>, ds: &Dataset) -> Result<f64> {
    let (r1, r2) = ds.group_rss(beta)?;
    Ok((r1 + r2) / ds.n() as f64)
}

/// `|R₁/m − R₂/(n−m)|`.
pub fn fairness_gap(beta: &DVector<f64>, ds: &Dataset) -> Result<f64> {
    let (r1, r2) = ds.group_rss(beta)?;
    Ok((r1 / ds.m() as f64 - r2 / ds.n2() as f64).abs())
}

pub fn objective_l(beta: &DVector<f64>, ds: &Dataset, cfg: &TradeoffConfig) -> Result<f64> {
    let (r1, r2) = ds.group_rss(beta)?;
    Ok(loss_from_rss(r1, r2, ds.n(), ds.m(), cfg.lambda))
}

pub(crate) fn loss_from_rss(r1: f64, r2: f64, n: usize, m: usize, lambda: f64) -> f64 {
    let (nf, mf) = (n as f64, m as f64);
    (r1 + r2) / nf + lambda * (r1 / mf - r2 / (nf - mf)).abs()
}

/// Coefficient of determination with a group-blind, centered total sum of squares.
pub fn r_squared(beta: &DVector<f64>, ds: &Dataset) -> Result<f64> {
    let (r1, r2) = ds.group_rss(beta)?;
    let y = ds.targets();
    let mean = y.mean();
    let tss: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    if tss == 0.0 {
        return Ok(if r1 + r2 == 0.0 { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - (r1 + r2) / tss)
}

fn check_sizes(n: usize, m: usize, lambda: f64) -> Result<()> {
    if m == 0 || m >= n {
        return Err(Error::validation(format!("need n > m >= 1, got n={n}, m={m}")));
    }
    if !(lambda >= 0.0) {
        return Err(Error::validation(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(())
}

/// Weights of the four single-point surrogates.
///
/// Group-1 insertion uses `(m+1, n−m)` group sizes, group-2 insertion uses
/// `(m, n−m+1)`; all four share the `1/(n+1)` accuracy weight.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointAttackCoeffs {
    pub c_g1: f64,
    pub d_g1: f64,
    pub c_h1: f64,
    pub d_h1: f64,
    pub c_g2: f64,
    pub d_g2: f64,
    pub c_h2: f64,
    pub d_h2: f64,
}

pub fn point_coeffs(n: usize, m: usize, lambda: f64) -> Result<PointAttackCoeffs> {
    check_sizes(n, m, lambda)?;
    let (nf, mf) = (n as f64, m as f64);
    let base = 1.0 / (nf + 1.0);
    Ok(PointAttackCoeffs {
        c_g1: base + lambda / (mf + 1.0),
        d_g1: base - lambda / (nf - mf),
        c_h1: base - lambda / (mf + 1.0),
        d_h1: base + lambda / (nf - mf),
        c_g2: base + lambda / mf,
        d_g2: base - lambda / (nf - mf + 1.0),
        c_h2: base - lambda / mf,
        d_h2: base + lambda / (nf - mf + 1.0),
    })
}

impl PointAttackCoeffs {
    /// `(a, c, d)` such that the surrogate is `a·η²(1+‖β‖²) + c·R₁ + d·R₂`.
    pub fn terms(&self, which: Surrogate) -> (f64, f64, f64) {
        match which {
            Surrogate::G1 => (self.c_g1, self.c_g1, self.d_g1),
            Surrogate::H1 => (self.c_h1.max(0.0), self.c_h1, self.d_h1),
            Surrogate::G2 => (self.d_g2.max(0.0), self.c_g2, self.d_g2),
            Surrogate::H2 => (self.d_h2, self.c_h2, self.d_h2),
        }
    }
}

/// Weights of the two rank-one branches `g = C_g R₁ + D_g R₂`, `h = C_h R₁ + D_h R₂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankOneCoeffs {
    pub c_g: f64,
    pub d_g: f64,
    pub c_h: f64,
    pub d_h: f64,
}

pub fn rankone_coeffs(n: usize, m: usize, lambda: f64) -> Result<RankOneCoeffs> {
    check_sizes(n, m, lambda)?;
    let (nf, mf) = (n as f64, m as f64);
    Ok(RankOneCoeffs {
        c_g: 1.0 / nf + lambda / mf,
        d_g: 1.0 / nf - lambda / (nf - mf),
        c_h: 1.0 / nf - lambda / mf,
        d_h: 1.0 / nf + lambda / (nf - mf),
    })
}

impl RankOneCoeffs {
    pub fn g(&self, r1: f64, r2: f64) -> f64 {
        self.c_g * r1 + self.d_g * r2
    }

    pub fn h(&self, r1: f64, r2: f64) -> f64 {
        self.c_h * r1 + self.d_h * r2
    }
}

/// The two sign branches of the clean loss, `(g, h)`; `L = max(g, h)`.
pub fn branch_values(beta: &DVector<f64>, ds: &Dataset, lambda: f64) -> Result<(f64, f64)> {
    let k = rankone_coeffs(ds.n(), ds.m(), lambda)?;
    let (r1, r2) = ds.group_rss(beta)?;
    Ok((k.g(r1, r2), k.h(r1, r2)))
}

/// Single-point surrogate label; declaration order is the tie-break priority.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Surrogate {
    G1,
    H1,
    G2,
    H2,
}

impl Surrogate {
    pub const ALL: [Surrogate; 4] = [Surrogate::G1, Surrogate::H1, Surrogate::G2, Surrogate::H2];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Group receiving the inserted point.
    pub fn group(self) -> crate::dataset::Group {
        match self {
            Surrogate::G1 | Surrogate::H1 => crate::dataset::Group::One,
            Surrogate::G2 | Surrogate::H2 => crate::dataset::Group::Two,
        }
    }

    /// The other three surrogates, in priority order.
    pub fn others(self) -> [Surrogate; 3] {
        let mut out = [Surrogate::G1; 3];
        let mut k = 0;
        for s in Self::ALL {
            if s != self {
                out[k] = s;
                k += 1;
            }
        }
        out
    }
}

impl fmt::Display for Surrogate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Surrogate::G1 => "g1",
            Surrogate::H1 => "h1",
            Surrogate::G2 => "g2",
            Surrogate::H2 => "h2",
        };
        f.write_str(s)
    }
}

/// Evaluates a surrogate from residual sums directly.
pub fn surrogate_value(
    which: Surrogate,
    beta: &DVector<f64>,
    ds: &Dataset,
    cfg: &TradeoffConfig,
) -> Result<f64> {
    let coeffs = point_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let (r1, r2) = ds.group_rss(beta)?;
    let (a, c, d) = coeffs.terms(which);
    Ok(a * cfg.eta * cfg.eta * (1.0 + beta.norm_squared()) + c * r1 + d * r2)
}

/// Quadratic forms `S_k(β) = βᵀM_kβ − 2E_kᵀβ + s_k` of the four surrogates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateMatrices {
    pub m: [DMatrix<f64>; 4],
    pub e: [DVector<f64>; 4],
    pub constant: [f64; 4],
    pub coeffs: PointAttackCoeffs,
}

pub fn surrogate_matrices(ds: &Dataset, cfg: &TradeoffConfig) -> Result<SurrogateMatrices> {
    let coeffs = point_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let (x1, x2, y1, y2) = (ds.x1(), ds.x2(), ds.y1(), ds.y2());
    let g1 = x1.transpose() * x1;
    let g2 = x2.transpose() * x2;
    let b1 = x1.transpose() * y1;
    let b2 = x2.transpose() * y2;
    let (yy1, yy2) = (y1.norm_squared(), y2.norm_squared());
    let p = ds.p();
    let eta2 = cfg.eta * cfg.eta;
    let build = |which: Surrogate| {
        let (a, c, d) = coeffs.terms(which);
        let mut m = &g1 * c + &g2 * d;
        for i in 0..p {
            m[(i, i)] += a * eta2;
        }
        let e = &b1 * c + &b2 * d;
        (m, e, a * eta2 + c * yy1 + d * yy2)
    };
    let [s0, s1, s2, s3] = Surrogate::ALL.map(build);
    Ok(SurrogateMatrices {
        m: [s0.0, s1.0, s2.0, s3.0],
        e: [s0.1, s1.1, s2.1, s3.1],
        constant: [s0.2, s1.2, s2.2, s3.2],
        coeffs,
    })
}

impl SurrogateMatrices {
    pub fn p(&self) -> usize {
        self.e[0].len()
    }

    pub fn value(&self, which: Surrogate, beta: &DVector<f64>) -> f64 {
        let k = which.index();
        beta.dot(&(&self.m[k] * beta)) - 2.0 * self.e[k].dot(beta) + self.constant[k]
    }

    pub fn gradient(&self, which: Surrogate, beta: &DVector<f64>) -> DVector<f64> {
        let k = which.index();
        (&self.m[k] * beta - &self.e[k]) * 2.0
    }

    pub fn values(&self, beta: &DVector<f64>) -> [f64; 4] {
        Surrogate::ALL.map(|s| self.value(s, beta))
    }

    /// `max_k S_k(β)` and the first surrogate (in priority order) attaining it.
    pub fn envelope(&self, beta: &DVector<f64>) -> (f64, Surrogate) {
        let vals = self.values(beta);
        let mut best = (vals[0], Surrogate::G1);
        for s in Surrogate::ALL.into_iter().skip(1) {
            if vals[s.index()] > best.0 {
                best = (vals[s.index()], s);
            }
        }
        best
    }

    pub fn envelope_value(&self, beta: &DVector<f64>) -> f64 {
        self.envelope(beta).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthParams};

    fn small(seed: u64) -> Dataset {
        let p = SynthParams {
            m: 5,
            n2: 3,
            p: 3,
            beta01: vec![1.0, -0.5, 0.2],
            beta02: vec![0.7, 0.1, -0.3],
            group1_offset: vec![0.4],
            noise_std: 0.5,
            feature_low: -2.0,
            feature_high: 2.0,
            seed,
        };
        synth_generate(&p).unwrap()
    }

    #[test]
    fn hand_mse_and_gap() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 1.0]);
        let y = DVector::from_vec(vec![1.0, 2.0, 0.0]);
        let ds = Dataset::new(x, y, 2).unwrap();
        let zero = DVector::zeros(1);
        // residual SS: group 1 = 5, group 2 = 0
        assert_eq!(mse(&zero, &ds).unwrap(), 5.0 / 3.0);
        assert_eq!(fairness_gap(&zero, &ds).unwrap(), 2.5);

        let x = DMatrix::from_column_slice(2, 1, &[1.0, 2.0]);
        let y = DVector::from_vec(vec![1.0, 2.0]);
        let ds = Dataset::new(x, y, 1).unwrap();
        assert_eq!(mse(&zero, &ds).unwrap(), 2.5);
    }

    #[test]
    fn gap_example_two_vs_one() {
        // group-1 residuals (1, 1) → SS 2 over m = 2; group 2 residual √3 over 1
        let x = DMatrix::zeros(3, 1);
        let y = DVector::from_vec(vec![1.0, -1.0, 3f64.sqrt()]);
        let ds = Dataset::new(x, y, 2).unwrap();
        let b = DVector::zeros(1);
        assert!((fairness_gap(&b, &ds).unwrap() - 2.0).abs() < 1e-15);
        let cfg = TradeoffConfig::new(1.0, 1.0).unwrap();
        let l = objective_l(&b, &ds, &cfg).unwrap();
        assert!((l - (5.0 / 3.0 + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn coefficient_table() {
        let c = point_coeffs(200, 100, 0.2).unwrap();
        assert!((c.c_g1 - 0.0069553).abs() < 5e-8);
        assert!((c.d_g1 - 0.0029751).abs() < 5e-8);
        assert!((c.c_h1 - 0.0029949).abs() < 5e-8);
        assert!(c.c_h1 > 0.0 && c.d_g2 > 0.0);
        let two = 2.0 / 201.0;
        assert!((c.c_g1 + c.c_h1 - two).abs() < 1e-18);
        assert!((c.d_g1 + c.d_h1 - two).abs() < 1e-18);
        assert!((c.c_g2 + c.c_h2 - two).abs() < 1e-18);
        assert!((c.d_g2 + c.d_h2 - two).abs() < 1e-18);

        let r = rankone_coeffs(200, 100, 0.2).unwrap();
        assert!((r.c_g - 0.007).abs() < 1e-15);
        assert!((r.d_g - 0.003).abs() < 1e-15);
        assert!(point_coeffs(5, 5, 0.1).is_err());
        assert!(rankone_coeffs(5, 0, 0.1).is_err());
    }

    #[test]
    fn loss_is_max_of_branches() {
        for seed in 0..50 {
            let ds = small(seed);
            let beta = DVector::from_fn(3, |i, _| (seed as f64 * 0.37 + i as f64).sin());
            let lambda = 0.05 * seed as f64;
            let cfg = TradeoffConfig::new(lambda, 1.0).unwrap();
            let (g, h) = branch_values(&beta, &ds, lambda).unwrap();
            let l = objective_l(&beta, &ds, &cfg).unwrap();
            assert!((l - g.max(h)).abs() <= 1e-10 * (1.0 + l));
        }
    }

    #[test]
    fn lambda_zero_collapses_surrogates() {
        let ds = small(3);
        let cfg = TradeoffConfig::new(0.0, 1.3).unwrap();
        let beta = DVector::from_vec(vec![0.2, -0.4, 0.9]);
        let (r1, r2) = ds.group_rss(&beta).unwrap();
        let expect = (1.69 * (1.0 + beta.norm_squared()) + r1 + r2) / 9.0;
        for s in Surrogate::ALL {
            let v = surrogate_value(s, &beta, &ds, &cfg).unwrap();
            assert!((v - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn matrix_form_matches_direct_and_finite_differences() {
        let ds = small(8);
        let cfg = TradeoffConfig::new(0.9, 0.7).unwrap();
        let mats = surrogate_matrices(&ds, &cfg).unwrap();
        let beta = DVector::from_vec(vec![0.3, 1.1, -0.6]);
        for s in Surrogate::ALL {
            let direct = surrogate_value(s, &beta, &ds, &cfg).unwrap();
            let quad = mats.value(s, &beta);
            assert!((direct - quad).abs() <= 1e-10 * (1.0 + direct.abs()));

            let h = 1e-5;
            let grad = mats.gradient(s, &beta);
            for i in 0..3 {
                let mut bp = beta.clone();
                let mut bm = beta.clone();
                bp[i] += h;
                bm[i] -= h;
                let fd = (surrogate_value(s, &bp, &ds, &cfg).unwrap()
                    - surrogate_value(s, &bm, &ds, &cfg).unwrap())
                    / (2.0 * h);
                assert!((fd - grad[i]).abs() <= 1e-6 * (1.0 + grad[i].abs()));
            }
        }
    }

    #[test]
    fn r_squared_perfect_fit() {
        let x = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![2.0, 4.0, 6.0]);
        let ds = Dataset::new(x, y, 1).unwrap();
        assert_eq!(r_squared(&DVector::from_vec(vec![2.0]), &ds).unwrap(), 1.0);
    }
}
