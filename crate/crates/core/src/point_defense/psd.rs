//! Mixing weights that keep a two-matrix pencil positive definite.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::search::golden_max;

/// Open interval `{α : (1−α)M_a + αM_b ≻ 0}`; either bound may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsdInterval {
    pub lower: f64,
    pub upper: f64,
}

/// Half-width of the window searched for a positive definite starting weight.
const SEARCH_WINDOW: f64 = 1e6;

impl PsdInterval {
    pub fn empty() -> Self {
        Self {
            lower: f64::NAN,
            upper: f64::NAN,
        }
    }

    pub fn is_empty(&self) -> bool {
        !(self.lower < self.upper)
    }

    pub fn contains(&self, alpha: f64) -> bool {
        !self.is_empty() && self.lower < alpha && alpha < self.upper
    }

    /// A finite representative point: the midpoint when both ends are finite,
    /// otherwise a point at distance `1 + |end|` inside the finite end (or 0).
    pub fn center(&self) -> Option<f64> {
        if self.is_empty() {
            return None;
        }
        Some(match (self.lower.is_finite(), self.upper.is_finite()) {
            (true, true) => 0.5 * (self.lower + self.upper),
            (true, false) => self.lower + 1.0 + self.lower.abs(),
            (false, true) => self.upper - 1.0 - self.upper.abs(),
            (false, false) => 0.0,
        })
    }

    /// Finite sub-window, replacing an infinite end by `center ± span·(1+|center|)`.
    pub fn finite_window(&self, span: f64) -> Option<(f64, f64)> {
        let c = self.center()?;
        let reach = span * (1.0 + c.abs());
        let lo = if self.lower.is_finite() { self.lower } else { c - reach };
        let hi = if self.upper.is_finite() { self.upper } else { c + reach };
        Some((lo, hi))
    }
}

fn pencil(m_a: &DMatrix<f64>, d: &DMatrix<f64>, alpha: f64) -> DMatrix<f64> {
    m_a - d * alpha
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::validation("matrix is not square"));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * (1.0 + m.amax()) {
        return Err(Error::validation(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    Ok(())
}

/// Computes the interval from the eigenvalues of the pencil `(M₀, M_a − M_b)`
/// at a positive definite reference weight `α₀`.
pub fn psd_interval(m_a: &DMatrix<f64>, m_b: &DMatrix<f64>) -> Result<PsdInterval> {
    check_symmetric(m_a)?;
    check_symmetric(m_b)?;
    if m_a.shape() != m_b.shape() {
        return Err(Error::Dimension {
            expected: m_a.nrows(),
            got: m_b.nrows(),
        });
    }
    let d = m_a - m_b;

    // λ_min of the pencil is concave in α, so a PD point exists iff its maximum is positive.
    let alpha0 = if linalg::is_pd(m_a) {
        0.0
    } else {
        let (a, best) = golden_max(
            |a| linalg::min_eigenvalue(&pencil(m_a, &d, a)),
            -SEARCH_WINDOW,
            SEARCH_WINDOW,
            1e-9,
        );
        if !(best > linalg::PSD_REL * linalg::psd_scale(&pencil(m_a, &d, a))) {
            return Ok(PsdInterval::empty());
        }
        a
    };

    let m0 = pencil(m_a, &d, alpha0);
    let chol = match m0.clone().cholesky() {
        Some(c) => c,
        None => return Ok(PsdInterval::empty()),
    };
    let l = chol.l();
    let linv = match l.clone().try_inverse() {
        Some(v) => v,
        None => return Ok(PsdInterval::empty()),
    };
    let mut s = &linv * &d * linv.transpose();
    s = (&s + s.transpose()) * 0.5;
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    // M₀ − tD ≻ 0  ⇔  1 − tμ > 0 for every eigenvalue μ of L⁻¹DL⁻ᵀ
    for mu in linalg::sym_eigenvalues(&s) {
        if mu > 0.0 {
            hi = hi.min(1.0 / mu);
        } else if mu < 0.0 {
            lo = lo.max(1.0 / mu);
        }
    }
    Ok(PsdInterval {
        lower: alpha0 + lo,
        upper: alpha0 + hi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_pd_is_whole_line() {
        let i = DMatrix::<f64>::identity(3, 3);
        let iv = psd_interval(&i, &i).unwrap();
        assert_eq!(iv.lower, f64::NEG_INFINITY);
        assert_eq!(iv.upper, f64::INFINITY);
    }

    #[test]
    fn hand_two_by_two() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 3.0]));
        let iv = psd_interval(&a, &b).unwrap();
        assert!((iv.lower + 0.5).abs() < 1e-14);
        assert!((iv.upper - 0.5).abs() < 1e-14);
    }

    #[test]
    fn indefinite_start_is_shifted() {
        // M_a indefinite, M_b PD: the interval must not contain 0
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-1.0, 1.0]));
        let b = DMatrix::<f64>::identity(2, 2);
        let iv = psd_interval(&a, &b).unwrap();
        // (1−α)(−1) + α > 0 ⇔ α > 1/2
        assert!((iv.lower - 0.5).abs() < 1e-9);
        assert_eq!(iv.upper, f64::INFINITY);
    }

    #[test]
    fn empty_when_both_negative() {
        let a = -DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, -0.5]));
        assert!(psd_interval(&a, &b).unwrap().is_empty());
    }

    #[test]
    fn rejects_asymmetric() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(psd_interval(&a, &a).is_err());
    }
}
