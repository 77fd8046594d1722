//! Inexact proximal point method for `min_x max_y f(x, y)` on a ball × interval.
//!
//! Each outer step approximately solves the regularized saddle problem
//! `f(x, y) + (ρ/2)‖x − x̄‖² − (ρ/2)(y − ȳ)²` around the current center, which
//! is strongly convex-strongly concave once ρ exceeds the weak-convexity
//! constants of `f`. The scalar `y` block is maximized exactly by golden
//! section; the `x` block runs projected gradient descent on the resulting
//! max-function with a backtracking safeguard.

use std::io::Write;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::search::golden_max;

/// Smooth-enough saddle objective with a vector minimizer and a scalar maximizer.
pub trait Saddle {
    fn dim(&self) -> usize;
    fn value(&self, x: &DVector<f64>, y: f64) -> f64;
    fn grad_x(&self, x: &DVector<f64>, y: f64) -> DVector<f64>;
    /// Euclidean projection onto the feasible set of `x`.
    fn project_x(&self, x: &mut DVector<f64>);
    fn y_bounds(&self) -> (f64, f64);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct IppConfig {
    pub rho: f64,
    pub inner_tol: f64,
    pub outer_tol: f64,
    pub outer_cap: usize,
    pub inner_cap: usize,
}

impl IppConfig {
    pub fn with_rho(rho: f64) -> Self {
        Self {
            rho,
            inner_tol: 1e-6,
            outer_tol: 1e-4,
            outer_cap: 500,
            inner_cap: 5000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub residual: f64,
    /// `max_y f(x, y)` at the new iterate.
    pub value: f64,
    /// Decrease of the regularized objective over the outer step.
    pub prox_decrease: f64,
}

/// Iterate and bookkeeping of a proximal point run.
#[derive(Clone, Debug, Serialize)]
pub struct SaddleState {
    #[serde(with = "crate::serde_vec")]
    pub x: DVector<f64>,
    pub y: f64,
    #[serde(with = "crate::serde_vec")]
    pub center_x: DVector<f64>,
    pub center_y: f64,
    pub rho: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    /// Last `‖ẑ − z̄‖ / (1 + ‖z̄‖)`.
    pub residual: f64,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

pub fn write_trace_csv(trace: &[TraceRow], writer: impl Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["iteration", "residual", "value", "prox_decrease"])?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush().map_err(|source| Error::Io {
        path: "<trace writer>".into(),
        source,
    })?;
    Ok(())
}

/// `argmax_y f(x, y) − (ρ/2)(y − ȳ)²` over the interval.
fn best_y<S: Saddle>(prob: &S, x: &DVector<f64>, cy: f64, rho: f64) -> (f64, f64) {
    let (lo, hi) = prob.y_bounds();
    golden_max(
        |y| prob.value(x, y) - 0.5 * rho * (y - cy).powi(2),
        lo,
        hi,
        1e-12 * (1.0 + hi - lo),
    )
}

/// Largest curvature of `x ↦ f(x, y)` at `x` by power iteration on
/// finite-difference Hessian-vector products.
pub fn smoothness_estimate<S: Saddle>(prob: &S, x: &DVector<f64>, y: f64) -> f64 {
    let p = prob.dim();
    if p == 0 {
        return 0.0;
    }
    let h = 1e-5 * (1.0 + x.norm());
    let mut v = DVector::from_fn(p, |i, _| 1.0 + 0.1 * i as f64);
    v /= v.norm();
    let mut lambda: f64 = 0.0;
    for _ in 0..30 {
        let hv = (prob.grad_x(&(x + &v * h), y) - prob.grad_x(&(x - &v * h), y)) / (2.0 * h);
        let nrm = hv.norm();
        if !(nrm > 0.0) || !nrm.is_finite() {
            break;
        }
        lambda = nrm;
        v = hv / nrm;
    }
    lambda
}

/// Approximately solves the regularized problem around `(cx, cy)` starting at `x`.
fn solve_regularized<S: Saddle>(
    prob: &S,
    cx: &DVector<f64>,
    cy: f64,
    mut x: DVector<f64>,
    cfg: &IppConfig,
) -> (DVector<f64>, f64, usize, f64) {
    let rho = cfg.rho;
    let psi = |x: &DVector<f64>| -> (f64, f64) {
        let (y, v) = best_y(prob, x, cy, rho);
        (v + 0.5 * rho * (x - cx).norm_squared(), y)
    };
    let (_, y_c) = best_y(prob, cx, cy, rho);
    let l_hat = smoothness_estimate(prob, cx, y_c);
    let mut step = 1.0 / (2.0 * rho + l_hat);
    let (mut fx, mut y) = psi(&x);
    let f_start = fx;
    let mut iters = 0;
    while iters < cfg.inner_cap {
        iters += 1;
        let g = prob.grad_x(&x, y) + (&x - cx) * rho;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = &x - &g * step;
            prob.project_x(&mut xn);
            let d = &xn - &x;
            let (fn_, yn) = psi(&xn);
            if fn_ <= fx + g.dot(&d) + 0.5 / step * d.norm_squared() + 1e-14 * (1.0 + fx.abs()) {
                accepted = Some((xn, fn_, yn, d.norm()));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fn_, yn, moved)) = accepted else {
            break;
        };
        x = xn;
        fx = fn_;
        y = yn;
        if moved <= cfg.inner_tol * (1.0 + x.norm()) {
            break;
        }
    }
    (x, y, iters, f_start - fx)
}

/// `max_y f(x, y)` over the interval.
pub fn envelope_value<S: Saddle>(prob: &S, x: &DVector<f64>) -> f64 {
    let (lo, hi) = prob.y_bounds();
    golden_max(|y| prob.value(x, y), lo, hi, 1e-12 * (1.0 + hi - lo)).1
}

/// Runs the outer proximal point loop from `(x0, y0)`.
pub fn ipp_solve_saddle<S: Saddle>(prob: &S, x0: &DVector<f64>, y0: f64, cfg: &IppConfig) -> SaddleState {
    let mut cx = x0.clone();
    prob.project_x(&mut cx);
    let (lo, hi) = prob.y_bounds();
    let mut cy = y0.clamp(lo, hi);
    let mut state = SaddleState {
        x: cx.clone(),
        y: cy,
        center_x: cx.clone(),
        center_y: cy,
        rho: cfg.rho,
        outer_iterations: 0,
        inner_iterations: 0,
        residual: f64::INFINITY,
        converged: false,
        trace: Vec::new(),
    };
    for k in 0..cfg.outer_cap {
        let (x, y, inner, prox_decrease) = solve_regularized(prob, &cx, cy, cx.clone(), cfg);
        let dz = ((&x - &cx).norm_squared() + (y - cy).powi(2)).sqrt();
        let scale = 1.0 + (cx.norm_squared() + cy * cy).sqrt();
        let residual = dz / scale;
        state.trace.push(TraceRow {
            iteration: k + 1,
            residual,
            value: envelope_value(prob, &x),
            prox_decrease,
        });
        state.outer_iterations = k + 1;
        state.inner_iterations += inner;
        state.center_x = cx.clone();
        state.center_y = cy;
        state.x = x.clone();
        state.y = y;
        state.residual = residual;
        cx = x;
        cy = y;
        if residual <= cfg.outer_tol {
            state.converged = true;
            break;
        }
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `x² − y² + xy` on `[−1, 1]²`.
    struct Quadratic;

    impl Saddle for Quadratic {
        fn dim(&self) -> usize {
            1
        }
        fn value(&self, x: &DVector<f64>, y: f64) -> f64 {
            x[0] * x[0] - y * y + x[0] * y
        }
        fn grad_x(&self, x: &DVector<f64>, y: f64) -> DVector<f64> {
            DVector::from_element(1, 2.0 * x[0] + y)
        }
        fn project_x(&self, x: &mut DVector<f64>) {
            x[0] = x[0].clamp(-1.0, 1.0);
        }
        fn y_bounds(&self) -> (f64, f64) {
            (-1.0, 1.0)
        }
    }

    #[test]
    fn quadratic_saddle_reaches_origin() {
        let mut cfg = IppConfig::with_rho(1.0);
        cfg.outer_tol = 1e-12;
        cfg.inner_tol = 1e-14;
        let st = ipp_solve_saddle(&Quadratic, &DVector::from_element(1, 0.8), -0.6, &cfg);
        assert!(st.converged);
        assert!(st.x[0].abs() <= 1e-8 && st.y.abs() <= 1e-8, "{:?} {}", st.x, st.y);
        // residuals of a monotone problem shrink
        for w in st.trace.windows(2) {
            assert!(w[1].residual <= w[0].residual * (1.0 + 1e-6) + 1e-12);
        }
    }

    #[test]
    fn smoothness_of_quadratic() {
        let l = smoothness_estimate(&Quadratic, &DVector::from_element(1, 0.3), 0.1);
        assert!((l - 2.0).abs() < 1e-6);
    }

    #[test]
    fn trace_csv_has_header() {
        let mut buf = Vec::new();
        let rows = [TraceRow {
            iteration: 1,
            residual: 0.5,
            value: 2.0,
            prox_decrease: 0.25,
        }];
        write_trace_csv(&rows, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iteration,residual,value,prox_decrease\n1,0.5,2.0,0.25"), "{s}");
    }
}
