//! The C ABI exercised from Rust, plus a C compile of the generated header.

use std::ffi::CString;
use std::path::Path;
use std::process::Command;
use std::ptr;

use fnar_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as libc::c_char; 512];
    let len = unsafe { fnar_last_error(buf.as_mut_ptr(), buf.len()) };
    let bytes: Vec<u8> = buf[..len.min(511)].iter().map(|&c| c as u8).collect();
    String::from_utf8(bytes).unwrap()
}

#[test]
fn simulate_fit_and_query() {
    unsafe {
        let mut panel = ptr::null_mut();
        let mut net = ptr::null_mut();
        assert_eq!(fnar_simulate(40, 5, 1.0, 4, &mut panel, &mut net), FnarStatus::Ok);
        let (mut n, mut t, mut dx, mut g) = (0, 0, 0, 0);
        assert_eq!(fnar_panel_dims(panel, &mut n, &mut t, &mut dx, &mut g), FnarStatus::Ok);
        assert_eq!((n, t, dx, g), (40, 5, 1, 99));

        let op = CString::new("epanechnikov").unwrap();
        let mut fit = ptr::null_mut();
        let st = fnar_fit(panel, net, op.as_ptr(), 2, 3, 10, FnarEstimator::Gmm1, &mut fit);
        assert_eq!(st, FnarStatus::Ok, "{}", last_error());

        let mut count = 0;
        assert_eq!(fnar_fit_theta(fit, ptr::null_mut(), 0, &mut count), FnarStatus::Ok);
        assert_eq!(count, 12);
        let mut theta = vec![0.0; count];
        assert_eq!(fnar_fit_theta(fit, theta.as_mut_ptr(), theta.len(), &mut count), FnarStatus::Ok);
        assert!(theta.iter().all(|v| v.is_finite()));
        let mut short = [0.0; 3];
        assert_eq!(fnar_fit_theta(fit, short.as_mut_ptr(), 3, &mut count), FnarStatus::InvalidArgument);

        let mut conv = 0;
        assert_eq!(fnar_fit_converged(fit, &mut conv), FnarStatus::Ok);
        assert_eq!(conv, 1);
        let (mut a, mut b, mut se) = (f64::NAN, f64::NAN, f64::NAN);
        assert_eq!(fnar_fit_alpha_at(fit, 0.5, &mut a), FnarStatus::Ok);
        assert_eq!(fnar_fit_beta_at(fit, 0, 0.5, &mut b), FnarStatus::Ok);
        assert_eq!(fnar_fit_alpha_se_at(fit, 0.5, &mut se), FnarStatus::Ok);
        // Truth at 0.5: alpha0 ~ 0.78, beta0 = sqrt(1.5) + 0.25 ~ 1.47.
        assert!((a - 0.78).abs() < 0.3, "alpha(0.5) = {a}");
        assert!((b - 1.47).abs() < 0.3, "beta(0.5) = {b}");
        assert!(se > 0.0 && se.is_finite());

        assert_eq!(fnar_fit_alpha_at(fit, 1.5, &mut a), FnarStatus::Domain);
        assert!(last_error().contains("outside [0, 1]"));
        assert_eq!(fnar_fit_beta_at(fit, 3, 0.5, &mut b), FnarStatus::InvalidArgument);

        fnar_fit_free(fit);
        fnar_panel_free(panel);
        fnar_network_free(net);
    }
}

#[test]
fn error_codes_and_messages() {
    unsafe {
        let mut panel = ptr::null_mut();
        let mut net = ptr::null_mut();
        assert_eq!(fnar_simulate(40, 1, 1.0, 1, &mut panel, &mut net), FnarStatus::Ok);
        let op = CString::new("point-eval").unwrap();
        let mut fit = ptr::null_mut();
        let st = fnar_fit(panel, net, op.as_ptr(), 2, 3, 10, FnarEstimator::TwoSls, &mut fit);
        assert_eq!(st, FnarStatus::CannotDifference);
        assert!(fit.is_null());
        assert!(last_error().contains("T = 1"));

        let bad = CString::new("gaussian").unwrap();
        let st = fnar_fit(panel, net, bad.as_ptr(), 2, 3, 10, FnarEstimator::TwoSls, &mut fit);
        assert_eq!(st, FnarStatus::InvalidArgument);

        assert_eq!(
            fnar_fit(ptr::null(), net, op.as_ptr(), 2, 3, 10, FnarEstimator::Gmm1, &mut fit),
            FnarStatus::NullPointer
        );
        assert_eq!(fnar_panel_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), FnarStatus::NullPointer);
        assert!(last_error().contains("null pointer"));

        let (mut p2, mut n2) = (ptr::null_mut(), ptr::null_mut());
        let mut cfg_n = 0;
        assert_eq!(fnar_simulate(10, 2, 1.0, 1, &mut p2, &mut n2), FnarStatus::Ok);
        assert_eq!(fnar_network_units(n2, &mut cfg_n), FnarStatus::Ok);
        assert_eq!(cfg_n, 10);
        assert_eq!(fnar_last_error(ptr::null_mut(), 0), 0);

        fnar_panel_free(panel);
        fnar_network_free(net);
        fnar_panel_free(p2);
        fnar_network_free(n2);
        fnar_fit_free(ptr::null_mut());
    }
}

#[test]
fn panel_and_network_from_arrays() {
    unsafe {
        let (n, t, g) = (3usize, 3usize, 9usize);
        let y: Vec<f64> = (0..n * t * g).map(|k| ((k * 7919) % 23) as f64 / 23.0).collect();
        let x: Vec<f64> = (0..n * t).map(|k| ((k * 31) % 11) as f64 - 5.0).collect();
        let mut panel = ptr::null_mut();
        assert_eq!(fnar_panel_new(n, t, 1, g, y.as_ptr(), x.as_ptr(), &mut panel), FnarStatus::Ok);
        let mut nn = 0;
        assert_eq!(fnar_panel_dims(panel, &mut nn, ptr::null_mut(), ptr::null_mut(), ptr::null_mut()), FnarStatus::Ok);
        assert_eq!(nn, 3);

        let (from, to, w) = ([0usize, 1, 2, 2], [1usize, 0, 0, 1], [1.0, 1.0, 2.0, 2.0]);
        let mut net = ptr::null_mut();
        assert_eq!(fnar_network_from_edges(3, 4, from.as_ptr(), to.as_ptr(), w.as_ptr(), &mut net), FnarStatus::Ok);
        let bad_to = [5usize, 0, 0, 1];
        let mut other = ptr::null_mut();
        assert_eq!(
            fnar_network_from_edges(3, 4, from.as_ptr(), bad_to.as_ptr(), w.as_ptr(), &mut other),
            FnarStatus::InvalidArgument
        );

        let nan = vec![f64::NAN; n * t * g];
        let mut p2 = ptr::null_mut();
        assert_eq!(fnar_panel_new(n, t, 1, g, nan.as_ptr(), x.as_ptr(), &mut p2), FnarStatus::InvalidArgument);
        assert_eq!(fnar_panel_new(n, t, 1, g, ptr::null(), x.as_ptr(), &mut p2), FnarStatus::NullPointer);

        fnar_panel_free(panel);
        fnar_network_free(net);
    }
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { std::ffi::CStr::from_ptr(fnar_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("fnar.h");
    let text = std::fs::read_to_string(&header).expect("generated header");
    for name in ["fnar_simulate", "fnar_fit", "fnar_fit_free", "FNAR_STATUS_NULL_POINTER", "typedef struct FnarFit FnarFit"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"fnar.h\"\nint main(void) { FnarFit *f = 0; fnar_fit_free(f); return FNAR_STATUS_OK; }\n",
    )
    .unwrap();
    let Ok(out) = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header.parent().unwrap())
        .arg(&src)
        .output()
    else {
        eprintln!("no C compiler found; skipping compile check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "fnar.h"

int main(void) {
    FnarPanel *panel = NULL;
    FnarNetwork *net = NULL;
    FnarFit *fit = NULL;
    if (fnar_simulate(20, 4, 1.0, 9, &panel, &net) != FNAR_STATUS_OK) return 1;
    if (fnar_fit(panel, net, "epanechnikov", 1, 2, 5, FNAR_ESTIMATOR_TWO_SLS, &fit) != FNAR_STATUS_OK) return 2;
    double a = NAN;
    if (fnar_fit_alpha_at(fit, 0.5, &a) != FNAR_STATUS_OK || !isfinite(a)) return 3;
    if (fnar_fit_alpha_at(fit, -1.0, &a) != FNAR_STATUS_DOMAIN) return 4;
    char msg[128];
    if (fnar_last_error(msg, sizeof msg) == 0) return 5;
    printf("%s\n", fnar_version());
    fnar_fit_free(fit);
    fnar_network_free(net);
    fnar_panel_free(panel);
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let exe = std::env::current_exe().unwrap();
    let Some(lib) = exe.parent().and_then(|d| d.parent()).map(|d| d.join("libfnar_ffi.a")) else {
        return;
    };
    if !lib.is_file() {
        eprintln!("static library not built; skipping link check");
        return;
    }
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let Ok(out) = Command::new("cc")
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .output()
    else {
        eprintln!("no C compiler found; skipping link check");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
