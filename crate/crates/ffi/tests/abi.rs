use std::ffi::{c_char, CStr};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use exmart_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 256];
    let n = unsafe { exmart_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn pvalue_stream_counts_ties() {
    unsafe {
        let mut s = ptr::null_mut();
        assert_eq!(exmart_pvalue_stream_new(&mut s), ExmartStatus::Ok);
        let mut p = 0.0;
        assert_eq!(
            exmart_pvalue_stream_push(s, 1.0, 0.5, &mut p),
            ExmartStatus::Ok
        );
        assert_eq!(p, 0.5);
        assert_eq!(
            exmart_pvalue_stream_push(s, 3.0, 1.0, &mut p),
            ExmartStatus::Ok
        );
        assert_eq!(p, 1.0);
        assert_eq!(
            exmart_pvalue_stream_push(s, 2.0, 0.0, &mut p),
            ExmartStatus::Ok
        );
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(exmart_pvalue_stream_len(s), 3);

        assert_eq!(
            exmart_pvalue_stream_push(s, f64::NAN, 0.5, &mut p),
            ExmartStatus::DataError
        );
        assert!(last_error().contains("non-finite"));
        assert_eq!(exmart_pvalue_stream_len(s), 3);
        exmart_pvalue_stream_free(s);
    }
}

#[test]
fn null_handles_are_rejected() {
    unsafe {
        let mut p = 0.0;
        assert_eq!(
            exmart_pvalue_stream_push(ptr::null_mut(), 1.0, 0.5, &mut p),
            ExmartStatus::NullPointer
        );
        assert!(last_error().contains("stream"));
        assert_eq!(
            exmart_jumper_new(0.01, ptr::null_mut()),
            ExmartStatus::NullPointer
        );
        assert!(exmart_jumper_log_capital(ptr::null()).is_nan());
        assert_eq!(exmart_schedule_event_count(ptr::null()), 0);
        exmart_jumper_free(ptr::null_mut());
        exmart_schedule_free(ptr::null_mut());
    }
}

#[test]
fn jumper_matches_core() {
    let ps = [0.9, 0.95, 0.01, 0.99, 0.5, 0.7];
    let path = exmart::betting::run_martingale(&ps, 0.01).unwrap();
    unsafe {
        let mut j = ptr::null_mut();
        assert_eq!(exmart_jumper_new(0.01, &mut j), ExmartStatus::Ok);
        let mut prod = 1.0;
        for &p in &ps {
            let (mut r, mut l) = (0.0, 0.0);
            assert_eq!(exmart_jumper_step(j, p, &mut r, &mut l), ExmartStatus::Ok);
            prod *= r;
            assert!((prod.ln() - l).abs() < 1e-12);
        }
        assert!(
            (exmart_jumper_log_capital(j) / std::f64::consts::LN_10 - path.final_log10()).abs()
                < 1e-12
        );
        assert_eq!(
            exmart_jumper_step(j, 1.5, ptr::null_mut(), ptr::null_mut()),
            ExmartStatus::DataError
        );
        exmart_jumper_free(j);

        assert_eq!(
            exmart_jumper_new(2.0, &mut j),
            ExmartStatus::InvalidArgument
        );
    }
}

#[test]
fn monitor_fires_on_large_pvalues() {
    unsafe {
        let mut m = ptr::null_mut();
        assert_eq!(
            exmart_monitor_new(0.01, 100.0, 100.0, f64::INFINITY, &mut m),
            ExmartStatus::Ok
        );
        let mut st = ExmartMonitorState::default();
        for _ in 0..200 {
            assert_eq!(exmart_monitor_step(m, 0.999, &mut st), ExmartStatus::Ok);
        }
        assert_eq!(st.step, 200);
        assert!(st.log10_capital > 2.0);
        assert_eq!(st.fired & EXMART_FIRED_VILLE, EXMART_FIRED_VILLE);
        assert_eq!(st.fired & EXMART_FIRED_CUSUM, EXMART_FIRED_CUSUM);
        assert_eq!(st.fired & EXMART_FIRED_SR, 0);
        assert!(st.shiryaev_roberts >= st.cusum);
        let mut again = ExmartMonitorState::default();
        assert_eq!(exmart_monitor_state(m, &mut again), ExmartStatus::Ok);
        assert_eq!(again, st);
        exmart_monitor_free(m);
    }
}

#[test]
fn schedule_raises_opening_alarm() {
    unsafe {
        let mut params = std::mem::zeroed::<ExmartScheduleParams>();
        assert_eq!(
            exmart_schedule_params_variable(1000, &mut params),
            ExmartStatus::Ok
        );
        assert_eq!(params.folds, 3);
        assert!(params.endgame_alpha.is_nan());
        params.endgame_threshold = f64::NAN;

        let mut s = ptr::null_mut();
        assert_eq!(exmart_schedule_new(&params, &mut s), ExmartStatus::Ok);
        let n = 50;
        let scores: Vec<f64> = (0..n).map(|i| ((i * 37) % n) as f64).collect();
        let ties: Vec<f64> = (0..n).map(|i| (i as f64 * 0.618_034).fract()).collect();
        for fold in 1..=3 {
            assert_eq!(
                exmart_schedule_calibrate(s, fold, scores.as_ptr(), ties.as_ptr(), n),
                ExmartStatus::Ok
            );
        }
        assert_eq!(
            exmart_schedule_calibrate(s, 4, scores.as_ptr(), ties.as_ptr(), n),
            ExmartStatus::InvalidArgument
        );
        let mut new = 99;
        assert_eq!(
            exmart_schedule_finish_calibration(s, &mut new),
            ExmartStatus::Ok
        );
        assert_eq!(new, 0);

        let big = [1e9; 3];
        let half = [0.5; 3];
        let mut steps = 0;
        while !exmart_schedule_is_terminated(s) {
            assert_eq!(
                exmart_schedule_advance(s, big.as_ptr(), half.as_ptr(), 3, &mut new),
                ExmartStatus::Ok
            );
            steps += 1;
            assert!(steps < 10_000);
        }
        assert!(exmart_schedule_event_count(s) >= 1);
        let mut ev = std::mem::zeroed::<ExmartAlarmEvent>();
        assert_eq!(exmart_schedule_event(s, 0, &mut ev), ExmartStatus::Ok);
        assert_eq!(ev.stage, ExmartStage::Opening);
        assert_eq!(ev.delay, steps);
        assert!(ev.firing_folds >= 2);
        assert_eq!(
            exmart_schedule_event(s, 99, &mut ev),
            ExmartStatus::InvalidArgument
        );
        assert_eq!(
            exmart_schedule_advance(s, big.as_ptr(), half.as_ptr(), 3, &mut new),
            ExmartStatus::RuntimeError
        );
        assert!(last_error().contains("terminated"));
        exmart_schedule_free(s);
    }
}

#[test]
fn numeric_helpers() {
    unsafe {
        let mut n = 0.0;
        assert_eq!(
            exmart_boundary_solve(100.0, 4.0, 0.00172, &mut n),
            ExmartStatus::Ok
        );
        assert!((n - 906.7).abs() < 0.1, "{n}");
        let (mut lo, mut hi) = (0.0, 0.0);
        assert_eq!(
            exmart_clopper_pearson(0, 10, 0.95, &mut lo, &mut hi),
            ExmartStatus::Ok
        );
        assert_eq!(lo, 0.0);
        assert!((hi - (1.0 - 0.025f64.powf(0.1))).abs() < 1e-9);
        assert_eq!(
            exmart_clopper_pearson(11, 10, 0.95, &mut lo, &mut hi),
            ExmartStatus::InvalidArgument
        );
        let v = CStr::from_ptr(exmart_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

fn header() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/exmart.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    let src = std::fs::read_to_string(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("src/lib.rs"))
        .unwrap();
    let exports: Vec<&str> = src
        .split("extern \"C\" fn ")
        .skip(1)
        .map(|s| s.split('(').next().unwrap())
        .collect();
    assert!(exports.len() >= 20);
    for name in exports {
        assert!(
            text.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
    for ty in [
        "typedef struct ExmartSchedule ExmartSchedule;",
        "EXMART_STATUS_NULL_POINTER = 1",
    ] {
        assert!(text.contains(ty), "{ty}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        r#"#include "exmart.h"
int use(void) {
    ExmartPValueStream *s = NULL;
    double p = 0.0;
    if (exmart_pvalue_stream_new(&s) != EXMART_STATUS_OK) return 1;
    exmart_pvalue_stream_push(s, 1.0, 0.5, &p);
    exmart_pvalue_stream_free(s);
    ExmartScheduleParams params;
    exmart_schedule_params_variable(1000, &params);
    return params.kind == EXMART_SCHEDULE_KIND_VARIABLE ? 0 : 1;
}
"#,
    )
    .unwrap();
    let out = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(header().parent().unwrap())
        .arg(&src)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
