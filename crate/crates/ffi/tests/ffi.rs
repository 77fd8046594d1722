use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use robustfair_ffi::*;

fn dataset() -> *mut RfDataset {
    // 8 rows, 2 features, groups interleaved
    let x: Vec<f64> = (0..16).map(|i| ((i * 7 % 11) as f64) / 3.0 - 1.0).collect();
    let y: Vec<f64> = (0..8).map(|i| x[2 * i] - 0.5 * x[2 * i + 1] + 0.1 * i as f64).collect();
    let g: Vec<u8> = (0..8).map(|i| if i % 2 == 0 { 1 } else { 2 }).collect();
    let mut ds = ptr::null_mut();
    let st = unsafe { rf_dataset_new(x.as_ptr(), y.as_ptr(), g.as_ptr(), 8, 2, &mut ds) };
    assert_eq!(st, RfStatus::Ok);
    ds
}

fn last_error() -> String {
    let p = rf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn dataset_round_trip_and_dims() {
    let ds = dataset();
    let (mut n, mut m, mut p) = (0, 0, 0);
    assert_eq!(unsafe { rf_dataset_dims(ds, &mut n, &mut m, &mut p) }, RfStatus::Ok);
    assert_eq!((n, m, p), (8, 4, 2));
    let mut stats = RfStats::default();
    assert_eq!(unsafe { rf_dataset_stats(ds, &mut stats) }, RfStatus::Ok);
    assert!(stats.eta_d > 0.0 && stats.eta_min >= 0.0);
    unsafe { rf_dataset_free(ds) };
}

#[test]
fn bad_group_code_is_validation_error() {
    let x = [0.0, 1.0, 2.0];
    let y = [0.0, 1.0, 2.0];
    let g = [1u8, 3, 2];
    let mut ds = ptr::null_mut();
    let st = unsafe { rf_dataset_new(x.as_ptr(), y.as_ptr(), g.as_ptr(), 3, 1, &mut ds) };
    assert_eq!(st, RfStatus::Validation);
    assert!(ds.is_null());
    assert!(last_error().contains("group must be 1 or 2"));
}

#[test]
fn null_pointers_are_reported() {
    let mut ds = ptr::null_mut();
    let st = unsafe { rf_dataset_new(ptr::null(), ptr::null(), ptr::null(), 4, 2, &mut ds) };
    assert_eq!(st, RfStatus::NullPointer);
    assert!(last_error().contains("features"));
    let st = unsafe { rf_dataset_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, RfStatus::NullPointer);
    unsafe { rf_dataset_free(ptr::null_mut()) };
    unsafe { rf_model_free(ptr::null_mut()) };
}

#[test]
fn fit_and_query_model() {
    let ds = dataset();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rf_fit(ds, RfModelKind::RobustPoint, 0.3, 1.0, 0.0, &mut model) }, RfStatus::Ok);
    let mut beta = [0.0; 2];
    assert_eq!(unsafe { rf_model_beta(model, beta.as_mut_ptr(), 2) }, RfStatus::Ok);
    assert_eq!(unsafe { rf_model_beta(model, beta.as_mut_ptr(), 3) }, RfStatus::Dimension);
    let mut value = 0.0;
    assert_eq!(unsafe { rf_model_value(model, &mut value) }, RfStatus::Ok);

    // the robust value is the worst-case point loss at the returned coefficients
    let mut x0 = [0.0; 2];
    let mut atk = RfPointAttack::default();
    assert_eq!(unsafe { rf_point_attack(ds, beta.as_ptr(), 2, 0.3, 1.0, x0.as_mut_ptr(), &mut atk) }, RfStatus::Ok);
    assert!((atk.value - value).abs() <= 1e-9 * (1.0 + value));
    assert!(atk.group == 1 || atk.group == 2);
    assert!((x0[0] * x0[0] + x0[1] * x0[1] + atk.y0 * atk.y0).sqrt() <= 1.0 + 1e-12);

    let mut wc = 0.0;
    assert_eq!(unsafe { rf_rankone_worst_case(ds, beta.as_ptr(), 2, 0.3, 1.0, &mut wc) }, RfStatus::Ok);
    assert!(wc.is_finite());
    unsafe { rf_model_free(model) };
    unsafe { rf_dataset_free(ds) };
}

#[test]
fn invalid_tradeoff_is_validation_error() {
    let ds = dataset();
    let mut model = ptr::null_mut();
    assert_eq!(unsafe { rf_fit(ds, RfModelKind::Ols, -1.0, 1.0, 0.0, &mut model) }, RfStatus::Validation);
    assert!(last_error().contains("lambda"));
    unsafe { rf_dataset_free(ds) };
}

#[test]
fn missing_csv_is_io_error() {
    let path = CString::new("/nonexistent/data.csv").unwrap();
    let mut ds = ptr::null_mut();
    assert_eq!(unsafe { rf_dataset_load_csv(path.as_ptr(), &mut ds) }, RfStatus::Io);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(rf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export_and_compiles() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/robustfair.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for f in [
        "rf_last_error_message",
        "rf_version",
        "rf_dataset_new",
        "rf_dataset_load_csv",
        "rf_dataset_free",
        "rf_dataset_dims",
        "rf_dataset_stats",
        "rf_fit",
        "rf_model_free",
        "rf_model_beta",
        "rf_model_value",
        "rf_point_attack",
        "rf_rankone_worst_case",
    ] {
        assert!(text.contains(&format!("{f}(")), "{f} missing from header");
    }
    let dir = tempfile_dir();
    let src = dir.join("use_header.c");
    std::fs::write(&src, "#include \"robustfair.h\"\nint main(void) { return rf_version() == 0; }\n").unwrap();
    match Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(_) => eprintln!("no C compiler found; header syntax check skipped"),
    }
}

fn tempfile_dir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("robustfair-ffi-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}
