use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use comb_ffi::*;

fn last_error() -> String {
    let p = comb_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn move_duration_matches_closed_form() {
    unsafe {
        let mut t = 0.0;
        assert_eq!(comb_move_duration(5.0, 50.0, 200.0, &mut t), CombStatus::Ok);
        assert!((t - 2.0 * (5.0f64 / 200.0).sqrt()).abs() < 1e-12);
        assert_eq!(comb_move_duration(5.0, 50.0, 200.0, ptr::null_mut()), CombStatus::NullPointer);
        assert_eq!(comb_move_duration(5.0, -1.0, 200.0, &mut t), CombStatus::InvalidArgument);
        assert!(last_error().contains("v_max"));
    }
}

#[test]
fn maw_json_round_trip() {
    unsafe {
        let params = CString::new(r#"{"L":370,"B":200,"c":10,"s":5}"#).unwrap();
        let mut out = ptr::null_mut();
        assert_eq!(comb_maw_derive(params.as_ptr(), &mut out), CombStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        comb_string_free(out);
        assert_eq!(v["aperture_radius"].as_f64().unwrap(), 90.0);

        let bad = CString::new("{not json").unwrap();
        assert_eq!(comb_maw_derive(bad.as_ptr(), &mut out), CombStatus::InvalidArgument);
        let tight = CString::new(r#"{"L":370,"B":20,"c":10,"s":5}"#).unwrap();
        assert_eq!(comb_maw_derive(tight.as_ptr(), &mut out), CombStatus::Failed);
    }
}

#[test]
fn spectrum_over_raw_samples() {
    unsafe {
        let fps = 120.0;
        let v: Vec<f64> = (0..1200).map(|i| (2.0 * std::f64::consts::PI * 27.95 * i as f64 / fps).sin()).collect();
        let mut peak = CombPeak::default();
        assert_eq!(comb_dominant_frequency(v.as_ptr(), v.len(), fps, 3.0, &mut peak), CombStatus::Ok);
        assert!((peak.freq_hz - 27.95).abs() <= 0.5 * peak.bin_width_hz);
        assert_eq!(comb_dominant_frequency(ptr::null(), 10, fps, 3.0, &mut peak), CombStatus::NullPointer);
    }
}

#[test]
fn track_errors_for_offset_path() {
    unsafe {
        let n = 50;
        let commanded: Vec<f64> = (0..n).flat_map(|i| [0.0, i as f64]).collect();
        let measured: Vec<f64> = (0..n).flat_map(|i| [0.5, i as f64]).collect();
        let mut s = CombErrorStats::default();
        let st = comb_track_errors(measured.as_ptr(), commanded.as_ptr(), n, CombMatching::Phase, &mut s);
        assert_eq!(st, CombStatus::Ok, "{}", last_error());
        assert!((s.cte_rms - 0.5).abs() < 1e-12);
        assert!(s.ate_rms.abs() < 1e-12);
        assert!((s.euclid_rms - 0.5).abs() < 1e-12);
    }
}

#[test]
fn controller_handle_lifecycle() {
    unsafe {
        let mut ctl = ptr::null_mut();
        assert_eq!(comb_controller_new(ptr::null(), &mut ctl), CombStatus::Ok);
        let mut st = CombState {
            mode: CombMode::Idle,
            motion_enabled: false,
            routine: CombRoutine::None,
            flapper_hz: 0.0,
            flapper_setpoint_hz: 0.0,
            progress: 0.0,
        };
        let key = |k: &str| CString::new(k).unwrap();
        assert_eq!(comb_controller_press(ctl, key("#").as_ptr(), &mut st), CombStatus::Rejected);
        assert_eq!(comb_controller_press(ctl, key("bogus").as_ptr(), &mut st), CombStatus::InvalidArgument);
        assert_eq!(comb_controller_press(ctl, key("MOTION_TOGGLE").as_ptr(), &mut st), CombStatus::Ok);
        assert_eq!(comb_controller_press(ctl, key("3").as_ptr(), &mut st), CombStatus::Ok);
        assert_eq!(st.mode, CombMode::Dance);
        assert_eq!(comb_controller_start_dance(ctl, ptr::null()), CombStatus::Ok);
        assert_eq!(comb_controller_state(ctl, &mut st), CombStatus::Ok);
        assert_eq!(st.routine, CombRoutine::Dance);
        for _ in 0..100 {
            comb_controller_advance(ctl, 1000, &mut st);
            if st.routine == CombRoutine::None {
                break;
            }
        }
        assert_eq!(st.routine, CombRoutine::None);
        assert_eq!(st.progress, 1.0);
        let mut pose = CombPose::default();
        assert_eq!(comb_controller_pose(ctl, &mut pose), CombStatus::Ok);
        assert!(pose.t_s > 5.0);
        comb_controller_free(ctl);
        assert_eq!(comb_controller_pose(ptr::null(), &mut pose), CombStatus::NullPointer);
    }
}

#[test]
fn dance_plan_handle() {
    unsafe {
        let params = CString::new(r#"{"cycles": 3}"#).unwrap();
        let mut plan = ptr::null_mut();
        assert_eq!(comb_dance_plan_new(params.as_ptr(), &mut plan), CombStatus::Ok);
        let mut n = 0;
        assert_eq!(comb_dance_plan_len(plan, &mut n), CombStatus::Ok);
        let mut buf = vec![CombWaypoint::default(); n + 5];
        let mut written = 0;
        assert_eq!(comb_dance_plan_waypoints(plan, buf.as_mut_ptr(), buf.len(), &mut written), CombStatus::Ok);
        assert_eq!(written, n);
        assert!(buf[..n].windows(2).all(|w| w[1].t_s > w[0].t_s));
        let mut json = ptr::null_mut();
        assert_eq!(comb_dance_plan_json(plan, &mut json), CombStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["waypoints"].as_array().unwrap().len(), n);
        comb_string_free(json);
        comb_dance_plan_free(plan);
    }
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(crate_dir().join("include/comb.h")).unwrap();
    let src = std::fs::read_to_string(crate_dir().join("src/lib.rs")).unwrap();
    let mut count = 0;
    for line in src.lines() {
        let Some(rest) = line.split("extern \"C\" fn ").nth(1) else { continue };
        let name = rest.split('(').next().unwrap();
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
        count += 1;
    }
    assert!(count >= 20, "{count} exports");
    for ty in ["CombController", "CombDancePlan", "CombStatus", "CombState"] {
        assert!(header.contains(ty), "{ty} missing");
    }
}

fn find_cdylib() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let profile_dir = exe.parent()?.parent()?;
    let name = if cfg!(target_os = "macos") { "libcomb_ffi.dylib" } else { "libcomb_ffi.so" };
    let p = profile_dir.join(name);
    p.exists().then_some(p)
}

#[test]
#[cfg(unix)]
fn c_program_links_and_runs() {
    let Some(lib) = find_cdylib() else {
        eprintln!("skipping: shared library not built");
        return;
    };
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("smoke");
    let libdir = lib.parent().unwrap();
    let status = Command::new(&cc)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(format!("-L{}", libdir.display()))
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .args(["-lcomb_ffi", "-lm", "-o"])
        .arg(&exe)
        .status();
    match status {
        Ok(s) if s.success() => {}
        Ok(s) => panic!("C compile failed: {s}"),
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    }
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("ok "));
}
