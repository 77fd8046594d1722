//! C ABI over the `robustfair` library.
//!
//! Datasets and fitted models are opaque heap handles released with their
//! `*_free` function. Every fallible call returns an [`RfStatus`]; on failure
//! the message is available from [`rf_last_error_message`] until the next
//! failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::{DMatrix, DVector};
use robustfair::dataset::{compute_stats, load_csv, CsvSchema, Dataset, Group};
use robustfair::harness::{fit_model, ModelKind};
use robustfair::model::RobustModel;
use robustfair::objective::TradeoffConfig;
use robustfair::point_attack::best_point;
use robustfair::rankone_attack::worst_case_value;
use robustfair::rankone_defense::RankOneOptions;
use robustfair::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Solver = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RfModelKind {
    Ols = 0,
    FairUnrobust = 1,
    RobustPoint = 2,
    RobustRankone = 3,
}

impl From<RfModelKind> for ModelKind {
    fn from(k: RfModelKind) -> Self {
        match k {
            RfModelKind::Ols => ModelKind::Ols,
            RfModelKind::FairUnrobust => ModelKind::FairUnrobust,
            RfModelKind::RobustPoint => ModelKind::RobustPoint,
            RfModelKind::RobustRankone => ModelKind::RobustRankone,
        }
    }
}

/// Opaque dataset handle.
pub struct RfDataset(Dataset);

/// Opaque fitted-model handle.
pub struct RfModel(RobustModel);

/// Spectral summary of a dataset.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RfStats {
    pub v_x1_max: f64,
    pub v_x2_max: f64,
    pub eta_min: f64,
    pub eta_d: f64,
    pub sigma_min: f64,
}

/// Worst-case inserted point.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct RfPointAttack {
    pub y0: f64,
    /// 1 or 2.
    pub group: u8,
    pub value: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RfStatus {
    match e {
        Error::Io { .. } => RfStatus::Io,
        Error::Parse { .. } | Error::Csv(_) | Error::Json(_) => RfStatus::Parse,
        Error::Validation(_) => RfStatus::Validation,
        Error::Dimension { .. } => RfStatus::Dimension,
        Error::Reconstruction(_) | Error::Solver(_) => RfStatus::Solver,
    }
}

enum Failure {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RfStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RfStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RfStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn tradeoff(lambda: f64, eta: f64) -> Result<TradeoffConfig, Failure> {
    Ok(TradeoffConfig::new(lambda, eta)?)
}

fn beta_for(ds: &Dataset, beta: &[f64]) -> Result<DVector<f64>, Failure> {
    if beta.len() != ds.p() {
        return Err(Error::Dimension {
            expected: ds.p(),
            got: beta.len(),
        }
        .into());
    }
    Ok(DVector::from_column_slice(beta))
}

/// Message of the last failing call on this thread, or NULL. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn rf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a dataset from row-major `features` (`n × p`), `targets` and group codes (1 or 2).
/// Rows are reordered group-1 first, keeping their relative order.
///
/// # Safety
/// `features` must hold `n·p` values, `targets` and `groups` `n` values, and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_new(
    features: *const f64,
    targets: *const f64,
    groups: *const u8,
    n: usize,
    p: usize,
    out: *mut *mut RfDataset,
) -> RfStatus {
    guard(|| {
        let x = slice(features, n * p, "features")?;
        let y = slice(targets, n, "targets")?;
        let g = slice(groups, n, "groups")?;
        let mut order: Vec<usize> = Vec::with_capacity(n);
        for code in [Group::One, Group::Two] {
            order.extend((0..n).filter(|&i| g[i] == code.code()));
        }
        if let Some(i) = (0..n).find(|&i| Group::from_code(g[i]).is_none()) {
            return Err(Error::Validation(format!("row {i}: group must be 1 or 2, got {}", g[i])).into());
        }
        let m = g.iter().filter(|&&c| c == Group::One.code()).count();
        let feats = DMatrix::from_fn(n, p, |r, c| x[order[r] * p + c]);
        let targ = DVector::from_fn(n, |r, _| y[order[r]]);
        let ds = Dataset::new(feats, targ, m)?;
        write_out(out, Box::into_raw(Box::new(RfDataset(ds))), "out")
    })
}

/// Loads a CSV with `target` and `group` columns; every other column is a feature.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_load_csv(path: *const c_char, out: *mut *mut RfDataset) -> RfStatus {
    guard(|| {
        if path.is_null() {
            return Err(Failure::Null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Error::Validation("path is not UTF-8".into()))?;
        let ds = load_csv(path, &CsvSchema::default())?;
        write_out(out, Box::into_raw(Box::new(RfDataset(ds))), "out")
    })
}

/// # Safety
/// `ds` must come from this library and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_free(ds: *mut RfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes the row count, group-1 size and feature count.
///
/// # Safety
/// `ds` must be a live handle and the outputs writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_dims(ds: *const RfDataset, n: *mut usize, m: *mut usize, p: *mut usize) -> RfStatus {
    guard(|| {
        let ds = &deref(ds, "ds")?.0;
        write_out(n, ds.n(), "n")?;
        write_out(m, ds.m(), "m")?;
        write_out(p, ds.p(), "p")
    })
}

/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_dataset_stats(ds: *const RfDataset, out: *mut RfStats) -> RfStatus {
    guard(|| {
        let s = compute_stats(&deref(ds, "ds")?.0);
        write_out(
            out,
            RfStats {
                v_x1_max: s.v_x1_max,
                v_x2_max: s.v_x2_max,
                eta_min: s.eta_min,
                eta_d: s.eta_d,
                sigma_min: s.sigma_min,
            },
            "out",
        )
    })
}

/// Fits a model. `b_beta ≤ 0` selects the default coefficient radius of the rank-one defense.
///
/// # Safety
/// `ds` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_fit(
    ds: *const RfDataset,
    kind: RfModelKind,
    lambda: f64,
    eta: f64,
    b_beta: f64,
    out: *mut *mut RfModel,
) -> RfStatus {
    guard(|| {
        let ds = &deref(ds, "ds")?.0;
        let cfg = tradeoff(lambda, eta)?;
        let opts = RankOneOptions {
            b_beta: (b_beta > 0.0).then_some(b_beta),
            ..RankOneOptions::default()
        };
        let model = fit_model(kind.into(), ds, &cfg, &opts)?;
        write_out(out, Box::into_raw(Box::new(RfModel(model))), "out")
    })
}

/// # Safety
/// `model` must come from this library and not be used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn rf_model_free(model: *mut RfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Copies the coefficients into `buf`, which must hold exactly `len = p` values.
///
/// # Safety
/// `model` must be a live handle and `buf` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn rf_model_beta(model: *const RfModel, buf: *mut f64, len: usize) -> RfStatus {
    guard(|| {
        let beta = &deref(model, "model")?.0.beta;
        if len != beta.len() {
            return Err(Error::Dimension {
                expected: beta.len(),
                got: len,
            }
            .into());
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(beta.as_slice());
        Ok(())
    })
}

/// Worst-case loss for robust models, clean loss for baselines.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_model_value(model: *const RfModel, out: *mut f64) -> RfStatus {
    guard(|| write_out(out, deref(model, "model")?.0.minimax_value, "out"))
}

/// Worst-case inserted point against `beta`; its features go to `x0` (length `p`).
///
/// # Safety
/// `ds` must be a live handle, `beta` and `x0` must hold `p` values, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rf_point_attack(
    ds: *const RfDataset,
    beta: *const f64,
    p: usize,
    lambda: f64,
    eta: f64,
    x0: *mut f64,
    out: *mut RfPointAttack,
) -> RfStatus {
    guard(|| {
        let ds = &deref(ds, "ds")?.0;
        let beta = beta_for(ds, slice(beta, p, "beta")?)?;
        let pt = best_point(&beta, ds, &tradeoff(lambda, eta)?)?;
        slice_mut(x0, p, "x0")?.copy_from_slice(pt.x0.as_slice());
        write_out(
            out,
            RfPointAttack {
                y0: pt.y0,
                group: pt.g0.code(),
                value: pt.achieved_value,
            },
            "out",
        )
    })
}

/// Worst-case loss over rank-one perturbations of Frobenius norm at most `eta`.
///
/// # Safety
/// `ds` must be a live handle, `beta` must hold `p` values and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn rf_rankone_worst_case(
    ds: *const RfDataset,
    beta: *const f64,
    p: usize,
    lambda: f64,
    eta: f64,
    out: *mut f64,
) -> RfStatus {
    guard(|| {
        let ds = &deref(ds, "ds")?.0;
        let beta = beta_for(ds, slice(beta, p, "beta")?)?;
        let v = worst_case_value(&beta, ds, &tradeoff(lambda, eta)?)?;
        write_out(out, v, "out")
    })
}
