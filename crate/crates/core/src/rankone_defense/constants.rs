//! Curvature bounds that make the proximal sub-problems strongly convex-concave.

use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::objective::{rankone_coeffs, TradeoffConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeakConvexityConstants {
    /// Upper bound on `∂²f/∂η_c1²` over every profile piece.
    pub rho1: f64,
    /// `∇²_β f ⪰ −rho2·I` over every profile piece.
    pub rho2: f64,
    /// Radius of the ball the model is restricted to.
    pub b_beta: f64,
}

impl WeakConvexityConstants {
    /// Proximal weight `2·max(rho1, rho2) + 1`.
    pub fn rho(&self) -> f64 {
        2.0 * self.rho1.max(self.rho2) + 1.0
    }
}

fn spectral_norm(x: nalgebra::DMatrixView<'_, f64>) -> f64 {
    x.singular_values().iter().copied().fold(0.0, f64::max)
}

/// Bounds for every piece on `‖β‖ ≤ b_beta`, `η_c1 ∈ [0, η]`.
///
/// In `η_c1`, every g-piece has second derivative at most
/// `2(C_g − D_g)‖β‖² = 2(λ/m + λ/(n−m))‖β‖²` and every h-piece at most 0.
/// In β, the only nonconvex terms are the deflated ones with a negative weight;
/// for `D_g < 0` the term `D_g(‖r₂‖ − q‖β‖)²` has Hessian at least
/// `−2|D_g|[(‖X₂‖ + η)² + max(‖X₂‖, η)²]`, and symmetrically for `C_h < 0`.
pub fn weak_convexity_constants(ds: &Dataset, cfg: &TradeoffConfig, b_beta: f64) -> Result<WeakConvexityConstants> {
    if !(b_beta > 0.0) || !b_beta.is_finite() {
        return Err(Error::validation(format!("b_beta must be > 0, got {b_beta}")));
    }
    let k = rankone_coeffs(ds.n(), ds.m(), cfg.lambda)?;
    let (n, m) = (ds.n() as f64, ds.m() as f64);
    let rho1 = 2.0 * (cfg.lambda / m + cfg.lambda / (n - m)) * b_beta * b_beta;
    let eta = cfg.eta;
    let bound = |w: f64, xn: f64| 2.0 * w.abs() * ((xn + eta).powi(2) + xn.max(eta).powi(2));
    let mut rho2: f64 = 0.0;
    if k.d_g < 0.0 {
        rho2 = rho2.max(bound(k.d_g, spectral_norm(ds.x2())));
    }
    if k.c_h < 0.0 {
        rho2 = rho2.max(bound(k.c_h, spectral_norm(ds.x1())));
    }
    Ok(WeakConvexityConstants { rho1, rho2, b_beta })
}
