//! C interface. Every function returns a [`CombStatus`]; on failure the
//! message is available from [`comb_last_error`] on the same thread.
//! Strings returned through out-parameters are owned by the caller and must
//! be released with [`comb_string_free`].
//!
//! # Safety
//!
//! Pointer arguments must be null or valid for the access described on
//! each function; handles must come from the matching constructor and be
//! used from one thread at a time.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use comb::config::Config;
use comb::controller::{Controller, ControllerError, Mode, PayloadSchedule, Routine, RoutineKind};
use comb::dance::{self, DanceParams, TrajectoryPlan};
use comb::maw::{MawParams, MawSpec};
use comb::metrics::{decompose_errors, CommandedPath, ErrorReport, Matching, NormalizedRun};
use comb::scan::{self, GridSpec};
use comb::spectrum::{self, LineScanSignal};
use comb::stage::min_move_duration;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    /// Malformed JSON or out-of-range argument.
    InvalidArgument = 3,
    /// The controller refused the transition.
    Rejected = 4,
    /// A computation failed; see the last error message.
    Failed = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombMode {
    Idle = 0,
    Jog = 1,
    Dance = 2,
    Scan = 3,
    Flap = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombRoutine {
    None = 0,
    Dance = 1,
    Scan = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CombMatching {
    Phase = 0,
    NearestPoint = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CombPose {
    pub t_s: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CombState {
    pub mode: CombMode,
    pub motion_enabled: bool,
    pub routine: CombRoutine,
    pub flapper_hz: f64,
    pub flapper_setpoint_hz: f64,
    pub progress: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CombPeak {
    pub freq_hz: f64,
    pub magnitude: f64,
    pub bin_width_hz: f64,
    pub snr: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CombErrorStats {
    pub cte_rms: f64,
    pub cte_max: f64,
    pub ate_rms: f64,
    pub ate_max: f64,
    pub euclid_rms: f64,
    pub euclid_max: f64,
    pub excluded: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CombWaypoint {
    pub t_s: f64,
    pub x_mm: f64,
    pub y_mm: f64,
}

/// Opaque controller handle.
pub struct CombController {
    inner: Controller,
}

/// Opaque trajectory plan handle.
pub struct CombDancePlan {
    inner: TrajectoryPlan,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

struct Fail(CombStatus, String);

impl Fail {
    fn arg(msg: impl Into<String>) -> Self {
        Fail(CombStatus::InvalidArgument, msg.into())
    }
}

impl From<ControllerError> for Fail {
    fn from(e: ControllerError) -> Self {
        let status = match e {
            ControllerError::RejectedTransition { .. } => CombStatus::Rejected,
            ControllerError::UnknownKey(_) | ControllerError::UnknownMode(_) | ControllerError::InvalidParams(_) => {
                CombStatus::InvalidArgument
            }
            _ => CombStatus::Failed,
        };
        Fail(status, format!("{}: {e}", e.name()))
    }
}

macro_rules! failed_from {
    ($($t:ty),*) => {$(
        impl From<$t> for Fail {
            fn from(e: $t) -> Self {
                Fail(CombStatus::Failed, format!("{}: {e}", e.name()))
            }
        }
    )*};
}

failed_from!(
    comb::maw::MawError,
    comb::dance::DanceError,
    comb::scan::ScanError,
    comb::metrics::MetricsError,
    comb::spectrum::SpectrumError
);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CombStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CombStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CombStatus::Panic
        }
    }
}

fn out<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    // SAFETY: callers pass either null or a valid, writable pointer.
    unsafe { p.as_mut() }.ok_or(Fail(CombStatus::NullPointer, "null output pointer".into()))
}

fn str_arg<'a>(p: *const c_char) -> Result<Option<&'a str>, Fail> {
    if p.is_null() {
        return Ok(None);
    }
    // SAFETY: non-null pointers must be NUL-terminated strings.
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map(Some)
        .map_err(|_| Fail(CombStatus::InvalidUtf8, "string is not UTF-8".into()))
}

fn json_arg<T: serde::de::DeserializeOwned>(p: *const c_char) -> Result<Option<T>, Fail> {
    match str_arg(p)? {
        None => Ok(None),
        Some(s) => serde_json::from_str(s).map(Some).map_err(|e| Fail::arg(e.to_string())),
    }
}

fn slice_arg<'a, T>(p: *const T, len: usize) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail(CombStatus::NullPointer, "null array".into()));
    }
    // SAFETY: callers guarantee `len` readable elements at `p`.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

fn give_string(s: String, dst: *mut *mut c_char) -> Result<(), Fail> {
    let slot = out(dst)?;
    *slot = CString::new(s).map_err(|_| Fail::arg("interior NUL"))?.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string(v).expect("serialisable")
}

fn handle<'a, T>(p: *mut T) -> Result<&'a mut T, Fail> {
    // SAFETY: handles come from the matching constructor and are not shared
    // across threads without external locking.
    unsafe { p.as_mut() }.ok_or(Fail(CombStatus::NullPointer, "null handle".into()))
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call on the same thread.
#[no_mangle]
pub extern "C" fn comb_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Frees a string returned by this library. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn comb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn comb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Minimum rest-to-rest move time.
#[no_mangle]
pub unsafe extern "C" fn comb_move_duration(distance_mm: f64, v_max: f64, a_max: f64, out_s: *mut f64) -> CombStatus {
    guard(|| {
        if !(v_max > 0.0 && a_max > 0.0) || !distance_mm.is_finite() {
            return Err(Fail::arg(format!("distance {distance_mm}, v_max {v_max}, a_max {a_max}")));
        }
        *out(out_s)? = min_move_duration(distance_mm, v_max, a_max);
        Ok(())
    })
}

/// Derived window geometry as JSON. `params_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn comb_maw_derive(params_json: *const c_char, out_json: *mut *mut c_char) -> CombStatus {
    guard(|| {
        let params: MawParams = json_arg(params_json)?.unwrap_or_default();
        let spec = MawSpec::derive(params)?;
        give_string(to_json(&spec), out_json)
    })
}

/// Coverage of a grid as multiples of the footprint width and height.
#[no_mangle]
pub unsafe extern "C" fn comb_scan_coverage(
    rows: usize,
    cols: usize,
    row_overlap: f64,
    col_overlap: f64,
    out_w: *mut f64,
    out_h: *mut f64,
) -> CombStatus {
    guard(|| {
        let plan = scan::plan_grid(&GridSpec { rows, cols, row_overlap, col_overlap, ..GridSpec::default() })?;
        let (w, h) = plan.coverage_factors();
        *out(out_w)? = w;
        *out(out_h)? = h;
        Ok(())
    })
}

/// Dominant frequency of a uniformly sampled signal.
#[no_mangle]
pub unsafe extern "C" fn comb_dominant_frequency(
    samples: *const f64,
    len: usize,
    fps: f64,
    snr_threshold: f64,
    out_peak: *mut CombPeak,
) -> CombStatus {
    guard(|| {
        let values = slice_arg(samples, len)?.to_vec();
        let sig = LineScanSignal::new(fps, values)?;
        let p = spectrum::dominant_frequency(&sig, snr_threshold)?;
        *out(out_peak)? = CombPeak { freq_hz: p.freq, magnitude: p.magnitude, bin_width_hz: p.bin_width, snr: p.snr };
        Ok(())
    })
}

/// Cross-track and along-track statistics of one run. Both arrays hold `n`
/// interleaved `x, y` pairs on the same phase grid.
#[no_mangle]
pub unsafe extern "C" fn comb_track_errors(
    measured_xy: *const f64,
    commanded_xy: *const f64,
    n: usize,
    matching: CombMatching,
    out_stats: *mut CombErrorStats,
) -> CombStatus {
    guard(|| {
        let pairs = |p: *const f64| -> Result<Vec<[f64; 2]>, Fail> {
            Ok(slice_arg(p, 2 * n)?.chunks_exact(2).map(|c| [c[0], c[1]]).collect())
        };
        let measured = NormalizedRun { points: pairs(measured_xy)? };
        let points = pairs(commanded_xy)?;
        let end = *points.last().ok_or_else(|| Fail::arg("empty path"))?;
        let commanded = CommandedPath { points, end };
        let m = match matching {
            CombMatching::Phase => Matching::Phase,
            CombMatching::NearestPoint => Matching::NearestPoint,
        };
        let errors = decompose_errors(&measured, &commanded, m)?;
        let r = ErrorReport::pool(&[errors])?;
        *out(out_stats)? = CombErrorStats {
            cte_rms: r.cte_rms,
            cte_max: r.cte_max,
            ate_rms: r.ate_rms,
            ate_max: r.ate_max,
            euclid_rms: r.euclid_rms,
            euclid_max: r.euclid_max,
            excluded: r.excluded_phases,
        };
        Ok(())
    })
}

/// Generates a plan. `params_json` may be null for defaults.
#[no_mangle]
pub unsafe extern "C" fn comb_dance_plan_new(
    params_json: *const c_char,
    out_plan: *mut *mut CombDancePlan,
) -> CombStatus {
    guard(|| {
        let slot = out(out_plan)?;
        let params: DanceParams = json_arg(params_json)?.unwrap_or_default();
        let inner = dance::generate(&params)?;
        *slot = Box::into_raw(Box::new(CombDancePlan { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn comb_dance_plan_free(plan: *mut CombDancePlan) {
    if !plan.is_null() {
        drop(Box::from_raw(plan));
    }
}

#[no_mangle]
pub unsafe extern "C" fn comb_dance_plan_len(plan: *const CombDancePlan, out_len: *mut usize) -> CombStatus {
    guard(|| {
        let p = handle(plan.cast_mut())?;
        *out(out_len)? = p.inner.waypoints.len();
        Ok(())
    })
}

/// Copies up to `capacity` waypoints into `dst`; `out_written` receives the
/// number copied.
#[no_mangle]
pub unsafe extern "C" fn comb_dance_plan_waypoints(
    plan: *const CombDancePlan,
    dst: *mut CombWaypoint,
    capacity: usize,
    out_written: *mut usize,
) -> CombStatus {
    guard(|| {
        let p = handle(plan.cast_mut())?;
        let n = p.inner.waypoints.len().min(capacity);
        if n > 0 && dst.is_null() {
            return Err(Fail(CombStatus::NullPointer, "null destination".into()));
        }
        for (i, w) in p.inner.waypoints.iter().take(n).enumerate() {
            // SAFETY: caller provides `capacity` writable slots.
            unsafe { dst.add(i).write(CombWaypoint { t_s: w.t, x_mm: w.x, y_mm: w.y }) };
        }
        *out(out_written)? = n;
        Ok(())
    })
}

/// Plan as JSON, including cycle boundaries.
#[no_mangle]
pub unsafe extern "C" fn comb_dance_plan_json(plan: *const CombDancePlan, out_json: *mut *mut c_char) -> CombStatus {
    guard(|| {
        let p = handle(plan.cast_mut())?;
        give_string(to_json(&p.inner), out_json)
    })
}

/// Creates a controller from a full config JSON, or defaults when null.
#[no_mangle]
pub unsafe extern "C" fn comb_controller_new(
    config_json: *const c_char,
    out_ctl: *mut *mut CombController,
) -> CombStatus {
    guard(|| {
        let slot = out(out_ctl)?;
        let cfg: Config = json_arg(config_json)?.unwrap_or_default();
        let inner = Controller::new(cfg.controller())?;
        *slot = Box::into_raw(Box::new(CombController { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn comb_controller_free(ctl: *mut CombController) {
    if !ctl.is_null() {
        drop(Box::from_raw(ctl));
    }
}

fn fill_state(c: &Controller, dst: *mut CombState) -> Result<(), Fail> {
    let Some(d) = (unsafe { dst.as_mut() }) else {
        return Ok(());
    };
    let s = c.state();
    *d = CombState {
        mode: match s.mode {
            Mode::Idle => CombMode::Idle,
            Mode::Jog => CombMode::Jog,
            Mode::Dance => CombMode::Dance,
            Mode::Scan => CombMode::Scan,
            Mode::Flap => CombMode::Flap,
        },
        motion_enabled: s.motion_enabled,
        routine: match s.active_routine {
            None => CombRoutine::None,
            Some(RoutineKind::Dance) => CombRoutine::Dance,
            Some(RoutineKind::Scan) => CombRoutine::Scan,
        },
        flapper_hz: s.flapper_hz,
        flapper_setpoint_hz: s.flapper_setpoint_hz,
        progress: c.progress(),
    };
    Ok(())
}

/// Presses a key given by name (`START`) or keypad symbol (`#`).
/// `out_state` may be null.
#[no_mangle]
pub unsafe extern "C" fn comb_controller_press(
    ctl: *mut CombController,
    key: *const c_char,
    out_state: *mut CombState,
) -> CombStatus {
    guard(|| {
        let c = handle(ctl)?;
        let key = str_arg(key)?.ok_or(Fail(CombStatus::NullPointer, "null key".into()))?;
        let r = c.inner.press_str(key);
        fill_state(&c.inner, out_state)?;
        r.map(|_| ()).map_err(Fail::from)
    })
}

/// Starts a dance with `params_json` (null for the configured defaults).
#[no_mangle]
pub unsafe extern "C" fn comb_controller_start_dance(
    ctl: *mut CombController,
    params_json: *const c_char,
) -> CombStatus {
    guard(|| {
        let c = handle(ctl)?;
        let params: DanceParams = json_arg(params_json)?.unwrap_or(c.inner.config().dance);
        let plan = dance::generate(&params)?;
        let s = c.inner.state();
        let schedule = (c.inner.config().flapper_during_waggle && s.flapper_setpoint_hz > 0.0)
            .then(|| PayloadSchedule::flapper_during_waggles(&plan, s.flapper_setpoint_hz));
        c.inner.start_routine(Routine::Dance(plan), schedule)?;
        Ok(())
    })
}

/// Advances simulated time by `ticks`.
#[no_mangle]
pub unsafe extern "C" fn comb_controller_advance(
    ctl: *mut CombController,
    ticks: u64,
    out_state: *mut CombState,
) -> CombStatus {
    guard(|| {
        let c = handle(ctl)?;
        c.inner.advance(ticks);
        fill_state(&c.inner, out_state)
    })
}

#[no_mangle]
pub unsafe extern "C" fn comb_controller_pose(ctl: *const CombController, out_pose: *mut CombPose) -> CombStatus {
    guard(|| {
        let c = handle(ctl.cast_mut())?;
        let p = c.inner.pose();
        *out(out_pose)? = CombPose { t_s: p.t, x_mm: p.x, y_mm: p.y };
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn comb_controller_state(ctl: *const CombController, out_state: *mut CombState) -> CombStatus {
    guard(|| {
        let c = handle(ctl.cast_mut())?;
        out(out_state)?;
        fill_state(&c.inner, out_state)
    })
}

/// Execution log of the current or last routine as JSON.
#[no_mangle]
pub unsafe extern "C" fn comb_controller_log_json(
    ctl: *const CombController,
    out_json: *mut *mut c_char,
) -> CombStatus {
    guard(|| {
        let c = handle(ctl.cast_mut())?;
        give_string(to_json(c.inner.log()), out_json)
    })
}
