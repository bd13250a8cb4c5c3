//! Control service: a single controller thread fed by a command queue, with
//! snapshots published on a latest-wins channel.

use std::sync::mpsc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use tokio::sync::{oneshot, watch};

use crate::controller::{
    Controller, ControllerConfig, ControllerError, ControllerState, ExecutionLog, Key, Mode, PayloadSchedule, Routine,
    StateSnapshot,
};
use crate::dance::{self, DanceParams};
use crate::scan::{self, GridSpec};
use crate::stage::Axis;

pub mod http;

pub const SNAPSHOT_HZ: f64 = 20.0;
pub const DEFAULT_BIND: &str = "127.0.0.1:8080";
pub const BIND_ENV: &str = "COMB_BIND";
/// Upper bound on ticks simulated per loop pass when catching up.
const MAX_CATCH_UP_TICKS: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "clock", rename_all = "snake_case")]
pub enum Clock {
    /// Simulated time follows the wall clock, scaled.
    Realtime { time_scale: f64 },
    /// Time only moves on explicit advance commands.
    Manual,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Command {
    Key(Key),
    Mode(Mode),
    Motion(bool),
    Jog { axis: Axis, direction: i8, count: u32 },
    Flapper(f64),
    Dance(Option<DanceParams>),
    Scan(Option<GridSpec>),
    Advance(u64),
    Snapshot,
    Log,
}

#[derive(Debug, Clone)]
pub enum Reply {
    State(Result<ControllerState, ControllerError>),
    Snapshot(Box<StateSnapshot>),
    Log(Box<ExecutionLog>),
    /// Advance requested while the clock is real time.
    ClockBusy,
}

type Envelope = (Command, oneshot::Sender<Reply>);

/// Handle to the controller thread.
pub struct Hub {
    tx: mpsc::Sender<Envelope>,
    snapshots: watch::Receiver<StateSnapshot>,
    clock: Clock,
    thread: Option<JoinHandle<()>>,
}

impl Hub {
    pub fn spawn(cfg: ControllerConfig, clock: Clock) -> Result<Self, ControllerError> {
        let controller = Controller::new(cfg)?;
        let (tx, rx) = mpsc::channel::<Envelope>();
        let (snap_tx, snap_rx) = watch::channel(controller.snapshot(0));
        let thread = std::thread::Builder::new()
            .name("controller".into())
            .spawn(move || run_loop(controller, rx, snap_tx, clock))
            .map_err(|e| ControllerError::InvalidParams(format!("cannot start controller thread: {e}")))?;
        Ok(Hub { tx, snapshots: snap_rx, clock, thread: Some(thread) })
    }

    pub fn clock(&self) -> Clock {
        self.clock
    }

    pub fn subscribe(&self) -> watch::Receiver<StateSnapshot> {
        self.snapshots.clone()
    }

    pub async fn request(&self, cmd: Command) -> Reply {
        let (tx, rx) = oneshot::channel();
        if self.tx.send((cmd, tx)).is_err() {
            return Reply::State(Err(ControllerError::InvalidParams("controller stopped".into())));
        }
        rx.await.unwrap_or_else(|_| Reply::State(Err(ControllerError::InvalidParams("controller stopped".into()))))
    }

    /// Blocking variant for non-async callers.
    pub fn request_blocking(&self, cmd: Command) -> Reply {
        let (tx, rx) = oneshot::channel();
        if self.tx.send((cmd, tx)).is_err() {
            return Reply::State(Err(ControllerError::InvalidParams("controller stopped".into())));
        }
        rx.blocking_recv()
            .unwrap_or_else(|_| Reply::State(Err(ControllerError::InvalidParams("controller stopped".into()))))
    }
}

impl Drop for Hub {
    fn drop(&mut self) {
        // closing the queue ends the loop
        let (tx, _) = mpsc::channel();
        self.tx = tx;
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

fn apply(ctl: &mut Controller, cmd: Command, clock: Clock) -> Reply {
    let state = |r: Result<ControllerState, ControllerError>| Reply::State(r);
    match cmd {
        Command::Key(k) => state(ctl.press(k)),
        Command::Mode(m) => state(ctl.set_mode(m)),
        Command::Motion(on) => state(ctl.set_motion(on)),
        Command::Jog { axis, direction, count } => {
            let key = match (axis, direction >= 0) {
                (Axis::X, true) => Key::JogXPlus,
                (Axis::X, false) => Key::JogXMinus,
                (Axis::Y, true) => Key::JogYPlus,
                (Axis::Y, false) => Key::JogYMinus,
            };
            let mut r = Ok(ctl.state());
            for _ in 0..count.max(1) {
                r = ctl.press(key);
                if r.is_err() {
                    break;
                }
            }
            state(r)
        }
        Command::Flapper(hz) => state(ctl.set_flapper(hz)),
        Command::Dance(params) => {
            let params = params.unwrap_or(ctl.config().dance);
            let r = dance::generate(&params).map_err(ControllerError::from).and_then(|plan| {
                let s = ctl.state();
                let schedule = (ctl.config().flapper_during_waggle && s.flapper_setpoint_hz > 0.0)
                    .then(|| PayloadSchedule::flapper_during_waggles(&plan, s.flapper_setpoint_hz));
                ctl.start_routine(Routine::Dance(plan), schedule).map(|_| ctl.state())
            });
            state(r)
        }
        Command::Scan(grid) => {
            let grid = grid.unwrap_or(ctl.config().scan);
            let r = scan::plan_grid(&grid)
                .map_err(ControllerError::from)
                .and_then(|plan| ctl.start_routine(Routine::Scan(plan), None).map(|_| ctl.state()));
            state(r)
        }
        Command::Advance(n) => match clock {
            Clock::Manual => {
                ctl.advance(n);
                Reply::State(Ok(ctl.state()))
            }
            Clock::Realtime { .. } => Reply::ClockBusy,
        },
        Command::Snapshot => Reply::Snapshot(Box::new(ctl.snapshot(0))),
        Command::Log => Reply::Log(Box::new(ctl.log().clone())),
    }
}

fn run_loop(mut ctl: Controller, rx: mpsc::Receiver<Envelope>, snapshots: watch::Sender<StateSnapshot>, clock: Clock) {
    let publish_every = Duration::from_secs_f64(1.0 / SNAPSHOT_HZ);
    let tick = ctl.config().stage.tick_s;
    let started = Instant::now();
    let base_ticks = ctl.stage().ticks();
    let mut seq = 0u64;
    let mut last_publish = Instant::now();
    let publish = |ctl: &Controller, seq: &mut u64| {
        *seq += 1;
        snapshots.send_replace(ctl.snapshot(*seq));
    };
    loop {
        let wait = match clock {
            Clock::Realtime { .. } => Some(Duration::from_millis(2)),
            Clock::Manual => None,
        };
        let first = match wait {
            Some(d) => match rx.recv_timeout(d) {
                Ok(env) => Some(env),
                Err(mpsc::RecvTimeoutError::Timeout) => None,
                Err(mpsc::RecvTimeoutError::Disconnected) => return,
            },
            None => match rx.recv() {
                Ok(env) => Some(env),
                Err(_) => return,
            },
        };
        let mut next = first;
        while let Some((cmd, reply)) = next.take() {
            let query = matches!(cmd, Command::Snapshot | Command::Log);
            let mut r = apply(&mut ctl, cmd, clock);
            // publish before replying so a caller sees its own effect on the stream
            if clock == Clock::Manual && !query {
                publish(&ctl, &mut seq);
            }
            if let Reply::Snapshot(s) = &mut r {
                s.seq = seq;
            }
            let _ = reply.send(r);
            next = rx.try_recv().ok();
        }
        if let Clock::Realtime { time_scale } = clock {
            let target = base_ticks + (started.elapsed().as_secs_f64() * time_scale / tick) as u64;
            let behind = target.saturating_sub(ctl.stage().ticks()).min(MAX_CATCH_UP_TICKS);
            ctl.advance(behind);
            if last_publish.elapsed() >= publish_every {
                last_publish = Instant::now();
                publish(&ctl, &mut seq);
            }
        }
    }
}

/// Bind address from the environment, falling back to the default.
pub fn bind_address() -> String {
    std::env::var(BIND_ENV).unwrap_or_else(|_| DEFAULT_BIND.to_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn commands_apply_in_order() {
        let hub = Hub::spawn(ControllerConfig::default(), Clock::Manual).unwrap();
        assert!(matches!(hub.request_blocking(Command::Motion(true)), Reply::State(Ok(s)) if s.motion_enabled));
        assert!(matches!(hub.request_blocking(Command::Mode(Mode::Jog)), Reply::State(Ok(s)) if s.mode == Mode::Jog));
        hub.request_blocking(Command::Jog { axis: Axis::X, direction: 1, count: 3 });
        hub.request_blocking(Command::Advance(1000));
        match hub.request_blocking(Command::Snapshot) {
            Reply::Snapshot(s) => assert_eq!(s.pose.x, 178.0),
            other => panic!("{other:?}"),
        }
        let rx = hub.subscribe();
        assert!(rx.borrow().seq >= 4);
    }

    #[test]
    fn realtime_clock_advances() {
        let hub = Hub::spawn(ControllerConfig::default(), Clock::Realtime { time_scale: 10.0 }).unwrap();
        std::thread::sleep(Duration::from_millis(200));
        match hub.request_blocking(Command::Snapshot) {
            Reply::Snapshot(s) => assert!(s.t_s > 0.5, "{}", s.t_s),
            other => panic!("{other:?}"),
        }
        assert!(matches!(hub.request_blocking(Command::Advance(5)), Reply::ClockBusy));
    }
}
