//! Mode-based controller driving the simulated stage and payload.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dance::{self, DanceError, DanceParams, TrajectoryPlan};
use crate::scan::{self, CaptureTiming, GridSpec, ScanError, ScanPlan};
use crate::stage::{Axis, FollowReport, Stage, StageConfig, StageError, StagePose};

pub mod fsm;

pub use fsm::{dispatch, Action, ControllerState, Key, Mode, RoutineKind, Transition};

/// Minimum rest before a capture is triggered.
pub const MIN_SETTLE_S: f64 = 0.1;
/// Held keys repeat at this rate.
pub const KEY_REPEAT_HZ: f64 = 10.0;
const RECENT_EVENTS: usize = 32;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("unknown key {0:?}")]
    UnknownKey(String),
    #[error("unknown mode {0:?}")]
    UnknownMode(String),
    #[error("{key} rejected in {mode}: {reason}")]
    RejectedTransition { mode: Mode, key: Key, reason: String },
    #[error("routine aborted: {axis} end-stop hit at {position} mm (t={t:.3} s)")]
    AbortedByEndstop { axis: Axis, position: f64, t: f64, log: Box<ExecutionLog> },
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error(transparent)]
    Dance(#[from] DanceError),
    #[error(transparent)]
    Scan(#[from] ScanError),
}

impl ControllerError {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerError::UnknownKey(_) => "UnknownKey",
            ControllerError::UnknownMode(_) => "UnknownMode",
            ControllerError::RejectedTransition { .. } => "RejectedTransition",
            ControllerError::AbortedByEndstop { .. } => "AbortedByEndstop",
            ControllerError::InvalidParams(_) => "InvalidParams",
            ControllerError::Stage(e) => e.name(),
            ControllerError::Dance(e) => e.name(),
            ControllerError::Scan(e) => e.name(),
        }
    }
}

/// One execution-log line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    Pose { t_s: f64, x_mm: f64, y_mm: f64 },
    RoutineStart { t_s: f64, routine: RoutineKind },
    RoutineEnd { t_s: f64, routine: RoutineKind },
    FlapperOn { t_s: f64, hz: f64 },
    FlapperOff { t_s: f64 },
    Capture { t_s: f64, index: usize, row: usize, col: usize, x_mm: f64, y_mm: f64 },
    Endstop { t_s: f64, axis: Axis, position_mm: f64 },
    Aborted { t_s: f64, reason: String },
}

impl LogRecord {
    pub fn t(&self) -> f64 {
        match *self {
            LogRecord::Pose { t_s, .. }
            | LogRecord::RoutineStart { t_s, .. }
            | LogRecord::RoutineEnd { t_s, .. }
            | LogRecord::FlapperOn { t_s, .. }
            | LogRecord::FlapperOff { t_s }
            | LogRecord::Capture { t_s, .. }
            | LogRecord::Endstop { t_s, .. }
            | LogRecord::Aborted { t_s, .. } => t_s,
        }
    }

    pub fn is_pose(&self) -> bool {
        matches!(self, LogRecord::Pose { .. })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionLog {
    pub routine: Option<RoutineKind>,
    pub records: Vec<LogRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub follow: Option<FollowReport>,
}

impl ExecutionLog {
    pub fn poses(&self) -> Vec<StagePose> {
        self.records
            .iter()
            .filter_map(|r| match *r {
                LogRecord::Pose { t_s, x_mm, y_mm } => Some(StagePose { t: t_s, x: x_mm, y: y_mm }),
                _ => None,
            })
            .collect()
    }

    pub fn events(&self) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(|r| !r.is_pose())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum PayloadEvent {
    FlapperOn { hz: f64 },
    FlapperOff,
}

/// Payload event at a plan time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledEvent {
    pub t_s: f64,
    #[serde(flatten)]
    pub event: PayloadEvent,
}

/// Payload events keyed to plan time. When executed, switch-on events fire
/// one tick after their scheduled time and switch-off events one tick
/// before, so a scheduled interval is always honoured from the inside.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PayloadSchedule {
    pub events: Vec<ScheduledEvent>,
}

impl PayloadSchedule {
    /// Flapper on for the duration of every waggle run.
    pub fn flapper_during_waggles(plan: &TrajectoryPlan, hz: f64) -> Self {
        let mut events = Vec::new();
        for run in &plan.waggle_runs {
            events.push(ScheduledEvent { t_s: run[0], event: PayloadEvent::FlapperOn { hz } });
            events.push(ScheduledEvent { t_s: run[1], event: PayloadEvent::FlapperOff });
        }
        PayloadSchedule { events }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    pub stage: StageConfig,
    pub dance: DanceParams,
    pub scan: GridSpec,
    pub capture: CaptureTiming,
    pub flapper_hz: f64,
    /// Drive the flapper during waggle runs of keypad-started dances.
    pub flapper_during_waggle: bool,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            stage: StageConfig::default(),
            dance: DanceParams::default(),
            scan: GridSpec::default(),
            capture: CaptureTiming::default(),
            flapper_hz: fsm::DEFAULT_FLAPPER_HZ,
            flapper_during_waggle: true,
        }
    }
}

/// A routine ready to run.
#[derive(Debug, Clone, PartialEq)]
pub enum Routine {
    Dance(TrajectoryPlan),
    Scan(ScanPlan),
}

impl Routine {
    pub fn kind(&self) -> RoutineKind {
        match self {
            Routine::Dance(_) => RoutineKind::Dance,
            Routine::Scan(_) => RoutineKind::Scan,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ScanPhase {
    Moving,
    Settling { since: u64 },
    Exposing { until: u64 },
}

#[derive(Debug, Clone)]
enum Active {
    Dance { start_tick: u64, end_tick: u64, schedule: Vec<(u64, PayloadEvent)>, next: usize },
    Scan { plan: ScanPlan, index: usize, phase: ScanPhase, settle_ticks: u64, exposure_ticks: u64 },
}

/// Snapshot of the observable controller state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub seq: u64,
    pub t_s: f64,
    pub pose: StagePose,
    pub velocity: [f64; 2],
    pub controller: ControllerState,
    pub active_plan_progress: f64,
    pub recent_events: Vec<LogRecord>,
    pub last_error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Controller {
    cfg: ControllerConfig,
    state: ControllerState,
    stage: Stage,
    active: Option<Active>,
    log: ExecutionLog,
    recent: VecDeque<LogRecord>,
    jog_target: Option<[f64; 2]>,
    progress: f64,
    last_error: Option<ControllerError>,
}

fn ticks_for(seconds: f64, tick: f64) -> u64 {
    (seconds / tick - 1e-9).ceil().max(0.0) as u64
}

impl Controller {
    pub fn new(cfg: ControllerConfig) -> Result<Self, ControllerError> {
        let stage = Stage::new(cfg.stage)?;
        if !(cfg.flapper_hz >= 0.0) || !cfg.flapper_hz.is_finite() {
            return Err(ControllerError::InvalidParams(format!("flapper_hz {}", cfg.flapper_hz)));
        }
        let state = ControllerState { flapper_setpoint_hz: cfg.flapper_hz, ..ControllerState::default() };
        Ok(Controller {
            cfg,
            state,
            stage,
            active: None,
            log: ExecutionLog::default(),
            recent: VecDeque::new(),
            jog_target: None,
            progress: 0.0,
            last_error: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn state(&self) -> ControllerState {
        self.state
    }

    pub fn stage(&self) -> &Stage {
        &self.stage
    }

    pub fn pose(&self) -> StagePose {
        self.stage.pose()
    }

    pub fn time(&self) -> f64 {
        self.stage.time()
    }

    /// Log of the running or most recent routine.
    pub fn log(&self) -> &ExecutionLog {
        &self.log
    }

    pub fn last_error(&self) -> Option<&ControllerError> {
        self.last_error.as_ref()
    }

    pub fn progress(&self) -> f64 {
        self.progress
    }

    pub fn is_busy(&self) -> bool {
        self.active.is_some() || !self.stage.is_idle() || self.jog_target.is_some()
    }

    pub fn snapshot(&self, seq: u64) -> StateSnapshot {
        StateSnapshot {
            seq,
            t_s: self.time(),
            pose: self.pose(),
            velocity: self.stage.velocity(),
            controller: self.state,
            active_plan_progress: self.progress.clamp(0.0, 1.0),
            recent_events: self.recent.iter().cloned().collect(),
            last_error: self.last_error.as_ref().map(|e| e.to_string()),
        }
    }

    fn record(&mut self, r: LogRecord) {
        if !r.is_pose() {
            if self.recent.len() == RECENT_EVENTS {
                self.recent.pop_front();
            }
            self.recent.push_back(r.clone());
        }
        if self.active.is_some() {
            self.log.records.push(r);
        }
    }

    /// Applies a keypad press.
    pub fn press(&mut self, key: Key) -> Result<ControllerState, ControllerError> {
        let t = dispatch(&self.state, key)?;
        // fallible preparation happens before any state is committed
        let mut prepared = None;
        let mut jog = None;
        for a in &t.actions {
            match *a {
                Action::StartRoutine { routine } => prepared = Some(self.prepare(routine)?),
                Action::Jog { dx, dy } => {
                    let base = self.jog_target.unwrap_or([self.pose().x, self.pose().y]);
                    let target = [base[0] + dx, base[1] + dy];
                    if self.cfg.stage.check_point(target[0], target[1]).is_err() {
                        return Err(ControllerError::RejectedTransition {
                            mode: self.state.mode,
                            key,
                            reason: "jog would leave the travel range".into(),
                        });
                    }
                    jog = Some(target);
                }
                _ => {}
            }
        }
        let now = self.time();
        for a in t.actions {
            match a {
                Action::Halt => self.halt(now, "stopped"),
                Action::FlapperOn { hz } => self.record(LogRecord::FlapperOn { t_s: now, hz }),
                Action::FlapperOff => self.record(LogRecord::FlapperOff { t_s: now }),
                Action::Jog { .. } => {}
                Action::StartRoutine { .. } => {}
            }
        }
        self.state = t.state;
        if let Some(target) = jog {
            self.jog_target = Some(target);
            self.service_jog()?;
        }
        if let Some((routine, schedule)) = prepared {
            self.begin(routine, schedule)?;
        }
        Ok(self.state)
    }

    pub fn press_str(&mut self, key: &str) -> Result<ControllerState, ControllerError> {
        self.press(key.parse()?)
    }

    /// Holds `key` for `seconds`, repeating at the key-repeat rate and
    /// advancing the simulation in between.
    pub fn hold(&mut self, key: Key, seconds: f64) -> Result<ControllerState, ControllerError> {
        let tick = self.cfg.stage.tick_s;
        let period = ticks_for(1.0 / KEY_REPEAT_HZ, tick).max(1);
        let total = ticks_for(seconds, tick);
        let mut elapsed = 0;
        loop {
            self.press(key)?;
            let step = period.min(total.saturating_sub(elapsed));
            self.advance(step);
            elapsed += period;
            if elapsed >= total {
                break;
            }
        }
        Ok(self.state)
    }

    pub fn set_mode(&mut self, mode: Mode) -> Result<ControllerState, ControllerError> {
        let key = match mode {
            Mode::Idle => Key::ModeIdle,
            Mode::Jog => Key::ModeJog,
            Mode::Dance => Key::ModeDance,
            Mode::Scan => Key::ModeScan,
            Mode::Flap => Key::ModeFlap,
        };
        self.press(key)
    }

    pub fn set_motion(&mut self, enabled: bool) -> Result<ControllerState, ControllerError> {
        if self.state.motion_enabled == enabled {
            return Ok(self.state);
        }
        self.press(Key::MotionToggle)
    }

    /// Sets the flapper frequency; 0 switches it off. FLAP mode only.
    pub fn set_flapper(&mut self, hz: f64) -> Result<ControllerState, ControllerError> {
        if !(hz >= 0.0) || !hz.is_finite() {
            return Err(ControllerError::InvalidParams(format!("flapper_hz {hz}")));
        }
        if self.state.mode != Mode::Flap {
            return Err(ControllerError::RejectedTransition {
                mode: self.state.mode,
                key: Key::Start,
                reason: "flapper is controlled in FLAP mode".into(),
            });
        }
        let now = self.time();
        let was_on = self.state.flapper_hz > 0.0;
        if hz > 0.0 {
            self.state.flapper_setpoint_hz = hz;
            self.state.flapper_hz = hz;
            self.record(LogRecord::FlapperOn { t_s: now, hz });
        } else {
            self.state.flapper_hz = 0.0;
            if was_on {
                self.record(LogRecord::FlapperOff { t_s: now });
            }
        }
        Ok(self.state)
    }

    fn prepare(&self, kind: RoutineKind) -> Result<(Routine, PayloadSchedule), ControllerError> {
        match kind {
            RoutineKind::Dance => {
                let plan = dance::generate(&self.cfg.dance)?;
                let schedule = if self.cfg.flapper_during_waggle && self.state.flapper_setpoint_hz > 0.0 {
                    PayloadSchedule::flapper_during_waggles(&plan, self.state.flapper_setpoint_hz)
                } else {
                    PayloadSchedule::default()
                };
                Ok((Routine::Dance(plan), schedule))
            }
            RoutineKind::Scan => Ok((Routine::Scan(scan::plan_grid(&self.cfg.scan)?), PayloadSchedule::default())),
        }
    }

    /// Starts `routine` without blocking. The controller must be in the
    /// routine's mode with motion enabled.
    pub fn start_routine(
        &mut self,
        routine: Routine,
        schedule: Option<PayloadSchedule>,
    ) -> Result<(), ControllerError> {
        let kind = routine.kind();
        let mode = match kind {
            RoutineKind::Dance => Mode::Dance,
            RoutineKind::Scan => Mode::Scan,
        };
        if self.state.mode != mode {
            return Err(ControllerError::RejectedTransition {
                mode: self.state.mode,
                key: Key::Start,
                reason: format!("{} routine needs {mode} mode", kind.as_str()),
            });
        }
        let t = dispatch(&self.state, Key::Start)?;
        self.begin(routine, schedule.unwrap_or_default())?;
        self.state = t.state;
        Ok(())
    }

    /// Runs `routine` to completion and returns its log.
    pub fn run_routine(
        &mut self,
        routine: Routine,
        schedule: Option<PayloadSchedule>,
    ) -> Result<ExecutionLog, ControllerError> {
        self.start_routine(routine, schedule)?;
        self.run_until_idle();
        match &self.last_error {
            Some(e) => Err(e.clone()),
            None => Ok(self.log.clone()),
        }
    }

    /// Advances until no routine or jog is in progress.
    pub fn run_until_idle(&mut self) {
        while self.is_busy() {
            self.tick();
        }
    }

    fn begin(&mut self, routine: Routine, schedule: PayloadSchedule) -> Result<(), ControllerError> {
        if !self.stage.is_idle() {
            self.stage.halt();
        }
        self.jog_target = None;
        let kind = routine.kind();
        let now = self.time();
        let tick = self.cfg.stage.tick_s;
        let active = match routine {
            Routine::Dance(plan) => {
                if plan.waypoints.is_empty() {
                    return Err(StageError::InvalidPlan("empty plan".into()).into());
                }
                let pose = self.pose();
                let first = plan.waypoints[0];
                let report = self.stage.start_follow(&plan, [pose.x - first.x, pose.y - first.y])?;
                let times: Vec<f64> = plan.waypoints.iter().map(|w| w.t).collect();
                let mut events: Vec<(u64, PayloadEvent)> = schedule
                    .events
                    .iter()
                    .map(|e| {
                        let at = report.stage_time(&times, e.t_s) / tick;
                        let t = match e.event {
                            PayloadEvent::FlapperOn { .. } => (at + 1e-6).floor() + 1.0,
                            PayloadEvent::FlapperOff => (at - 1e-6).ceil() - 1.0,
                        };
                        (t.max(self.stage.ticks() as f64) as u64, e.event)
                    })
                    .collect();
                events.sort_by_key(|e| e.0);
                let start_tick = self.stage.ticks();
                let end_tick = start_tick + ticks_for(report.duration_s, tick);
                self.log = ExecutionLog { routine: Some(kind), records: Vec::new(), follow: Some(report) };
                Active::Dance { start_tick, end_tick, schedule: events, next: 0 }
            }
            Routine::Scan(plan) => {
                for p in &plan.positions {
                    self.cfg.stage.check_point(p.x, p.y)?;
                }
                if let Some(p) = plan.positions.first() {
                    self.stage.move_to(p.x, p.y)?;
                }
                self.log = ExecutionLog { routine: Some(kind), records: Vec::new(), follow: None };
                Active::Scan {
                    plan,
                    index: 0,
                    phase: ScanPhase::Moving,
                    settle_ticks: ticks_for(self.cfg.capture.settle_s.max(MIN_SETTLE_S), tick),
                    exposure_ticks: ticks_for(self.cfg.capture.exposure_s, tick),
                }
            }
        };
        self.active = Some(active);
        self.progress = 0.0;
        self.last_error = None;
        let pose = self.pose();
        self.record(LogRecord::RoutineStart { t_s: now, routine: kind });
        self.record(LogRecord::Pose { t_s: pose.t, x_mm: pose.x, y_mm: pose.y });
        Ok(())
    }

    fn halt(&mut self, now: f64, reason: &str) {
        self.stage.halt();
        self.jog_target = None;
        if let Some(kind) = self.active_kind() {
            if self.state.flapper_hz > 0.0 {
                self.record(LogRecord::FlapperOff { t_s: now });
                self.state.flapper_hz = 0.0;
            }
            self.record(LogRecord::Aborted { t_s: now, reason: reason.to_owned() });
            self.record(LogRecord::RoutineEnd { t_s: now, routine: kind });
            self.active = None;
            self.state.active_routine = None;
        }
    }

    fn active_kind(&self) -> Option<RoutineKind> {
        self.active.as_ref().map(|a| match a {
            Active::Dance { .. } => RoutineKind::Dance,
            Active::Scan { .. } => RoutineKind::Scan,
        })
    }

    fn service_jog(&mut self) -> Result<(), ControllerError> {
        if let Some(target) = self.jog_target {
            if self.stage.is_idle() {
                let steps = [self.cfg.stage.x.to_steps(target[0]), self.cfg.stage.y.to_steps(target[1])];
                if steps == self.stage.steps() {
                    self.jog_target = None;
                } else {
                    self.stage.move_to(target[0], target[1])?;
                }
            }
        }
        Ok(())
    }

    /// Advances the simulation by `n` ticks.
    pub fn advance(&mut self, n: u64) {
        for _ in 0..n {
            self.tick();
        }
    }

    /// Advances by (at least) `seconds` of simulated time.
    pub fn advance_secs(&mut self, seconds: f64) {
        self.advance(ticks_for(seconds, self.cfg.stage.tick_s));
    }

    /// One simulation tick.
    pub fn tick(&mut self) {
        let out = self.stage.step();
        let now = out.pose.t;
        let ticks = self.stage.ticks();
        if self.active.is_some() {
            self.record(LogRecord::Pose { t_s: now, x_mm: out.pose.x, y_mm: out.pose.y });
        }
        for e in &out.endstops {
            self.record(LogRecord::Endstop { t_s: e.t, axis: e.axis, position_mm: e.position });
        }
        if let Some(e) = out.endstops.first() {
            self.jog_target = None;
            if self.active.is_some() {
                self.stage.halt();
                self.halt(now, &format!("{} end-stop", e.axis));
                self.last_error = Some(ControllerError::AbortedByEndstop {
                    axis: e.axis,
                    position: e.position,
                    t: e.t,
                    log: Box::new(self.log.clone()),
                });
                self.progress = 0.0;
                return;
            }
        }

        let mut finished = false;
        let mut records = Vec::new();
        let mut move_to: Option<[f64; 2]> = None;
        let idle = self.stage.is_idle();
        match &mut self.active {
            None => {}
            Some(Active::Dance { start_tick, end_tick, schedule, next }) => {
                while *next < schedule.len() && schedule[*next].0 <= ticks {
                    match schedule[*next].1 {
                        PayloadEvent::FlapperOn { hz } => {
                            self.state.flapper_hz = hz;
                            records.push(LogRecord::FlapperOn { t_s: now, hz });
                        }
                        PayloadEvent::FlapperOff => {
                            if self.state.flapper_hz > 0.0 {
                                self.state.flapper_hz = 0.0;
                                records.push(LogRecord::FlapperOff { t_s: now });
                            }
                        }
                    }
                    *next += 1;
                }
                let span = (*end_tick - *start_tick).max(1) as f64;
                self.progress = ((ticks - *start_tick) as f64 / span).min(1.0);
                if idle {
                    finished = true;
                }
            }
            Some(Active::Scan { plan, index, phase, settle_ticks, exposure_ticks }) => {
                let n = plan.positions.len();
                if n == 0 {
                    finished = true;
                } else {
                    match *phase {
                        ScanPhase::Moving => {
                            if idle {
                                *phase = ScanPhase::Settling { since: ticks };
                            }
                        }
                        ScanPhase::Settling { since } => {
                            if ticks - since >= *settle_ticks {
                                let p = plan.positions[*index];
                                let pose = self.stage.pose();
                                records.push(LogRecord::Capture {
                                    t_s: now,
                                    index: *index,
                                    row: p.row,
                                    col: p.col,
                                    x_mm: pose.x,
                                    y_mm: pose.y,
                                });
                                *phase = ScanPhase::Exposing { until: ticks + *exposure_ticks };
                            }
                        }
                        ScanPhase::Exposing { until } => {
                            if ticks >= until {
                                *index += 1;
                                if *index == n {
                                    finished = true;
                                } else {
                                    let p = plan.positions[*index];
                                    move_to = Some([p.x, p.y]);
                                    *phase = ScanPhase::Moving;
                                }
                            }
                        }
                    }
                    self.progress = (*index as f64 / n as f64).min(1.0);
                }
            }
        }
        for r in records {
            self.record(r);
        }
        if let Some([x, y]) = move_to {
            if let Err(e) = self.stage.move_to(x, y) {
                self.halt(now, &e.to_string());
                self.last_error = Some(e.into());
                return;
            }
        }
        if finished {
            let kind = self.active_kind().unwrap();
            if self.state.flapper_hz > 0.0 {
                self.state.flapper_hz = 0.0;
                self.record(LogRecord::FlapperOff { t_s: now });
            }
            self.record(LogRecord::RoutineEnd { t_s: now, routine: kind });
            self.active = None;
            self.state.active_routine = None;
            self.progress = 1.0;
        }
        if self.active.is_none() {
            if let Err(e) = self.service_jog() {
                self.jog_target = None;
                self.last_error = Some(e);
            }
        }
    }
}
