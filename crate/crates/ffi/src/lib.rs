//! C ABI for `exmart`.
//!
//! Every fallible function returns an [`ExmartStatus`]; results come back
//! through out-pointers. On failure a message is kept per thread and can be
//! read with [`exmart_last_error`]. Handles are opaque and must be released
//! with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use exmart::betting::SimpleJumper;
use exmart::calibration::clopper_pearson;
use exmart::detectors::{boundary_solve, CusumState, SrState, VilleState};
use exmart::pvalue::RankState;
use exmart::schedules::{AlarmEvent, Schedule, ScheduleConfig, ScheduleKind, Stage};
use exmart::{Error, ErrorKind};

/// Status codes shared by every function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExmartStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DataError = 3,
    RuntimeError = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> ExmartStatus {
    match err.kind() {
        ErrorKind::Config => ExmartStatus::InvalidArgument,
        ErrorKind::Data => ExmartStatus::DataError,
        ErrorKind::Runtime => ExmartStatus::RuntimeError,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> ExmartStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ExmartStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            ExmartStatus::NullPointer
        }
        Ok(Err(Failure::Core(e))) => {
            let status = status_of(&e);
            set_error(e.to_string());
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            ExmartStatus::Panic
        }
    }
}

enum Failure {
    Null(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

unsafe fn deref_mut<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn write<T>(p: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    p.write(value);
    Ok(())
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

unsafe fn free_box<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Copies the calling thread's last error message into `buf` (nul
/// terminated, truncated to `len`) and returns the full message length in
/// bytes, excluding the terminator. Returns 0 if there is no error.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn exmart_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let Some(msg) = e.as_ref() else { return 0 };
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn exmart_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Online conformal p-values from a stream of conformity scores.
pub struct ExmartPValueStream {
    inner: RankState,
}

/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn exmart_pvalue_stream_new(
    out: *mut *mut ExmartPValueStream,
) -> ExmartStatus {
    guard(|| {
        let h = Box::into_raw(Box::new(ExmartPValueStream {
            inner: RankState::new(),
        }));
        write(out, h, "out")
    })
}

/// Adds `score` with tie-break `tiebreak` in [0, 1] and writes its p-value.
///
/// # Safety
/// `stream` must come from [`exmart_pvalue_stream_new`]; `p_out` must be
/// valid for writing.
#[no_mangle]
pub unsafe extern "C" fn exmart_pvalue_stream_push(
    stream: *mut ExmartPValueStream,
    score: f64,
    tiebreak: f64,
    p_out: *mut f64,
) -> ExmartStatus {
    guard(|| {
        let s = deref_mut(stream, "stream")?;
        if p_out.is_null() {
            return Err(Failure::Null("p_out"));
        }
        let p = s.inner.push_score(score, tiebreak)?;
        write(p_out, p.value, "p_out")
    })
}

/// Number of scores seen so far; 0 for a null handle.
///
/// # Safety
/// `stream` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmart_pvalue_stream_len(stream: *const ExmartPValueStream) -> u64 {
    stream.as_ref().map_or(0, |s| s.inner.len())
}

/// # Safety
/// `stream` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn exmart_pvalue_stream_free(stream: *mut ExmartPValueStream) {
    free_box(stream);
}

/// Simple Jumper test martingale.
pub struct ExmartJumper {
    inner: SimpleJumper,
}

/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn exmart_jumper_new(
    jump_rate: f64,
    out: *mut *mut ExmartJumper,
) -> ExmartStatus {
    guard(|| {
        let inner = SimpleJumper::new(jump_rate)?;
        write(out, Box::into_raw(Box::new(ExmartJumper { inner })), "out")
    })
}

/// Bets on `p` and writes the capital ratio `S_n / S_{n-1}` and the new
/// `ln S_n`. Either out-pointer may be null.
///
/// # Safety
/// `jumper` must be a live handle; non-null out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_jumper_step(
    jumper: *mut ExmartJumper,
    p: f64,
    ratio_out: *mut f64,
    log_capital_out: *mut f64,
) -> ExmartStatus {
    guard(|| {
        let j = deref_mut(jumper, "jumper")?;
        let step = j.inner.step(p)?;
        if !ratio_out.is_null() {
            ratio_out.write(step.ratio);
        }
        if !log_capital_out.is_null() {
            log_capital_out.write(step.log_capital);
        }
        Ok(())
    })
}

/// Current `ln S_n`; NaN for a null handle.
///
/// # Safety
/// `jumper` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmart_jumper_log_capital(jumper: *const ExmartJumper) -> f64 {
    jumper.as_ref().map_or(f64::NAN, |j| j.inner.log_capital())
}

/// # Safety
/// `jumper` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn exmart_jumper_free(jumper: *mut ExmartJumper) {
    free_box(jumper);
}

/// Bit set in [`ExmartMonitorState::fired`] once the detector has alarmed.
pub const EXMART_FIRED_VILLE: u32 = 1;
pub const EXMART_FIRED_CUSUM: u32 = 2;
pub const EXMART_FIRED_SR: u32 = 4;

/// State of a detector bundle after a step.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ExmartMonitorState {
    pub step: u64,
    pub log10_capital: f64,
    pub cusum: f64,
    pub shiryaev_roberts: f64,
    /// Bitwise OR of the `EXMART_FIRED_*` flags.
    pub fired: u32,
}

/// A Simple Jumper driving Ville, CUSUM and Shiryaev-Roberts detectors.
pub struct ExmartMonitor {
    jumper: SimpleJumper,
    ville: VilleState,
    cusum: CusumState,
    sr: SrState,
}

impl ExmartMonitor {
    fn state(&self) -> ExmartMonitorState {
        let mut fired = 0;
        if self.ville.fired() {
            fired |= EXMART_FIRED_VILLE;
        }
        if self.cusum.fired() {
            fired |= EXMART_FIRED_CUSUM;
        }
        if self.sr.fired() {
            fired |= EXMART_FIRED_SR;
        }
        ExmartMonitorState {
            step: self.jumper.step_count(),
            log10_capital: self.jumper.log_capital() / std::f64::consts::LN_10,
            cusum: self.cusum.gamma(),
            shiryaev_roberts: self.sr.psi(),
            fired,
        }
    }
}

/// Creates a bundle. Pass `INFINITY` for a detector that should never
/// fire.
///
/// # Safety
/// `out` must be valid for writing a pointer.
#[no_mangle]
pub unsafe extern "C" fn exmart_monitor_new(
    jump_rate: f64,
    ville_threshold: f64,
    cusum_threshold: f64,
    sr_threshold: f64,
    out: *mut *mut ExmartMonitor,
) -> ExmartStatus {
    guard(|| {
        let m = ExmartMonitor {
            jumper: SimpleJumper::new(jump_rate)?,
            ville: VilleState::new(ville_threshold)?,
            cusum: CusumState::new(cusum_threshold)?,
            sr: SrState::new(sr_threshold)?,
        };
        write(out, Box::into_raw(Box::new(m)), "out")
    })
}

/// Feeds one p-value; `state_out` may be null.
///
/// # Safety
/// `monitor` must be a live handle; `state_out` null or writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_monitor_step(
    monitor: *mut ExmartMonitor,
    p: f64,
    state_out: *mut ExmartMonitorState,
) -> ExmartStatus {
    guard(|| {
        let m = deref_mut(monitor, "monitor")?;
        let step = m.jumper.step(p)?;
        let n = m.jumper.step_count();
        m.ville.step(step.log_capital, n);
        m.cusum.step_ratio(step.ratio);
        m.sr.step_ratio(step.ratio);
        if !state_out.is_null() {
            state_out.write(m.state());
        }
        Ok(())
    })
}

/// # Safety
/// `monitor` must be a live handle; `state_out` writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_monitor_state(
    monitor: *const ExmartMonitor,
    state_out: *mut ExmartMonitorState,
) -> ExmartStatus {
    guard(|| {
        let m = deref(monitor, "monitor")?;
        write(state_out, m.state(), "state_out")
    })
}

/// # Safety
/// `monitor` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn exmart_monitor_free(monitor: *mut ExmartMonitor) {
    free_box(monitor);
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExmartScheduleKind {
    Variable = 0,
    Fixed = 1,
    MiddlegameOnly = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExmartStage {
    Opening = 0,
    Middlegame = 1,
    Endgame = 2,
}

/// Schedule settings. Optional values are NaN when unset.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExmartScheduleParams {
    pub kind: ExmartScheduleKind,
    pub target_lifespan: u64,
    pub opening_threshold: f64,
    pub endgame_threshold: f64,
    pub endgame_alpha: f64,
    pub middlegame_slope: f64,
    pub middlegame_alpha: f64,
    pub quorum: u32,
    pub folds: u32,
    pub jump_rate: f64,
}

fn opt(v: f64) -> Option<f64> {
    (!v.is_nan()).then_some(v)
}

fn nan_if_none(v: Option<f64>) -> f64 {
    v.unwrap_or(f64::NAN)
}

impl From<&ExmartScheduleParams> for ScheduleConfig {
    fn from(p: &ExmartScheduleParams) -> Self {
        ScheduleConfig {
            kind: match p.kind {
                ExmartScheduleKind::Variable => ScheduleKind::Variable,
                ExmartScheduleKind::Fixed => ScheduleKind::Fixed,
                ExmartScheduleKind::MiddlegameOnly => ScheduleKind::MiddlegameOnly,
            },
            target_lifespan: p.target_lifespan,
            opening_threshold: p.opening_threshold,
            endgame_threshold: opt(p.endgame_threshold),
            endgame_alpha: opt(p.endgame_alpha),
            middlegame_slope: opt(p.middlegame_slope),
            middlegame_alpha: opt(p.middlegame_alpha),
            quorum: p.quorum as usize,
            folds: p.folds as usize,
            jump_rate: p.jump_rate,
        }
    }
}

/// Fills `params` with the variable schedule for target lifespan
/// `target_lifespan`.
///
/// # Safety
/// `params` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_params_variable(
    target_lifespan: u64,
    params: *mut ExmartScheduleParams,
) -> ExmartStatus {
    guard(|| {
        let c = ScheduleConfig::variable(target_lifespan);
        let p = ExmartScheduleParams {
            kind: ExmartScheduleKind::Variable,
            target_lifespan,
            opening_threshold: c.opening_threshold,
            endgame_threshold: nan_if_none(c.endgame_threshold),
            endgame_alpha: nan_if_none(c.endgame_alpha),
            middlegame_slope: nan_if_none(c.middlegame_slope),
            middlegame_alpha: nan_if_none(c.middlegame_alpha),
            quorum: c.quorum as u32,
            folds: c.folds as u32,
            jump_rate: c.jump_rate,
        };
        write(params, p, "params")
    })
}

/// Multi-fold retraining schedule fed with precomputed conformity scores.
pub struct ExmartSchedule {
    inner: Schedule,
}

/// A quorum alarm.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExmartAlarmEvent {
    pub stage: ExmartStage,
    pub step: u64,
    /// Test-stream ordinal of the alarm, `<= 0` if raised on calibration.
    pub delay: i64,
    pub firing_folds: u32,
}

impl From<&AlarmEvent> for ExmartAlarmEvent {
    fn from(e: &AlarmEvent) -> Self {
        ExmartAlarmEvent {
            stage: match e.stage {
                Stage::Opening => ExmartStage::Opening,
                Stage::Middlegame => ExmartStage::Middlegame,
                Stage::Endgame => ExmartStage::Endgame,
            },
            step: e.step,
            delay: e.delay,
            firing_folds: e.firing_folds.len() as u32,
        }
    }
}

/// # Safety
/// `params` must be readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_new(
    params: *const ExmartScheduleParams,
    out: *mut *mut ExmartSchedule,
) -> ExmartStatus {
    guard(|| {
        let p = deref(params, "params")?;
        let inner = Schedule::new(ScheduleConfig::from(p))?;
        write(
            out,
            Box::into_raw(Box::new(ExmartSchedule { inner })),
            "out",
        )
    })
}

/// Feeds fold `fold` (1-based) its calibration scores and tie-breaks.
///
/// # Safety
/// `schedule` must be a live handle; both arrays must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_calibrate(
    schedule: *mut ExmartSchedule,
    fold: u32,
    scores: *const f64,
    tiebreaks: *const f64,
    len: usize,
) -> ExmartStatus {
    guard(|| {
        let s = deref_mut(schedule, "schedule")?;
        let scores = slice(scores, len, "scores")?;
        let ties = slice(tiebreaks, len, "tiebreaks")?;
        s.inner.calibrate(fold as usize, scores, ties)?;
        Ok(())
    })
}

/// Ends calibration; writes how many events it raised (may be null).
///
/// # Safety
/// `schedule` must be a live handle; `new_events` null or writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_finish_calibration(
    schedule: *mut ExmartSchedule,
    new_events: *mut u32,
) -> ExmartStatus {
    guard(|| {
        let s = deref_mut(schedule, "schedule")?;
        let n = s.inner.finish_calibration()?.len() as u32;
        if !new_events.is_null() {
            new_events.write(n);
        }
        Ok(())
    })
}

/// Feeds one test observation: one score and tie-break per fold.
///
/// # Safety
/// `schedule` must be a live handle; both arrays must hold `folds` values;
/// `new_events` null or writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_advance(
    schedule: *mut ExmartSchedule,
    scores: *const f64,
    tiebreaks: *const f64,
    folds: usize,
    new_events: *mut u32,
) -> ExmartStatus {
    guard(|| {
        let s = deref_mut(schedule, "schedule")?;
        let scores = slice(scores, folds, "scores")?;
        let ties = slice(tiebreaks, folds, "tiebreaks")?;
        let n = s.inner.advance(scores, ties)?.len() as u32;
        if !new_events.is_null() {
            new_events.write(n);
        }
        Ok(())
    })
}

/// Number of alarm events so far; 0 for a null handle.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_event_count(schedule: *const ExmartSchedule) -> u32 {
    schedule
        .as_ref()
        .map_or(0, |s| s.inner.events().len() as u32)
}

/// Copies event `index` (0-based, in order raised).
///
/// # Safety
/// `schedule` must be a live handle; `event_out` writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_event(
    schedule: *const ExmartSchedule,
    index: u32,
    event_out: *mut ExmartAlarmEvent,
) -> ExmartStatus {
    guard(|| {
        let s = deref(schedule, "schedule")?;
        let e = s
            .inner
            .events()
            .get(index as usize)
            .ok_or_else(|| Error::invalid(format!("event {index} out of range")))?;
        write(event_out, ExmartAlarmEvent::from(e), "event_out")
    })
}

/// True once the schedule has raised its alarm and stopped.
///
/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_is_terminated(schedule: *const ExmartSchedule) -> bool {
    schedule.as_ref().is_some_and(|s| s.inner.is_terminated())
}

/// # Safety
/// `schedule` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn exmart_schedule_free(schedule: *mut ExmartSchedule) {
    free_box(schedule);
}

/// Horizon at which the opening threshold meets a barrier of slope `slope`
/// under per-step decay `decay` in log10 capital.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_boundary_solve(
    opening_threshold: f64,
    slope: f64,
    decay: f64,
    out: *mut f64,
) -> ExmartStatus {
    guard(|| {
        let n = boundary_solve(opening_threshold, slope, decay)?;
        write(out, n, "out")
    })
}

/// Two-sided Clopper-Pearson interval for `successes` out of `trials`.
///
/// # Safety
/// `lower` and `upper` must be writable.
#[no_mangle]
pub unsafe extern "C" fn exmart_clopper_pearson(
    successes: u64,
    trials: u64,
    level: f64,
    lower: *mut f64,
    upper: *mut f64,
) -> ExmartStatus {
    guard(|| {
        if lower.is_null() || upper.is_null() {
            return Err(Failure::Null("lower/upper"));
        }
        let ci = clopper_pearson(successes, trials, level)?;
        lower.write(ci.lower);
        upper.write(ci.upper);
        Ok(())
    })
}
