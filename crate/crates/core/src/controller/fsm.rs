//! Keypad transition function.
//!
//! | key | symbol | effect |
//! |-----|--------|--------|
//! | `1`..`5` | `MODE_IDLE` .. `MODE_FLAP` | select mode (rejected while a routine runs) |
//! | arrows | `JOG_X_PLUS` etc. | 1 mm jog, JOG mode with motion enabled only |
//! | `#` | `START` | start the routine of the current mode |
//! | `*` | `STOP` | abort routine, flapper off, motion disabled |
//! | `0` | `MOTION_TOGGLE` | enable or disable motion; disabling aborts a routine |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ControllerError;

pub const JOG_STEP_MM: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Idle,
    Jog,
    Dance,
    Scan,
    Flap,
}

impl Mode {
    pub const ALL: [Mode; 5] = [Mode::Idle, Mode::Jog, Mode::Dance, Mode::Scan, Mode::Flap];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Idle => "IDLE",
            Mode::Jog => "JOG",
            Mode::Dance => "DANCE",
            Mode::Scan => "SCAN",
            Mode::Flap => "FLAP",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ControllerError::UnknownMode(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Key {
    ModeIdle,
    ModeJog,
    ModeDance,
    ModeScan,
    ModeFlap,
    JogXPlus,
    JogXMinus,
    JogYPlus,
    JogYMinus,
    Start,
    Stop,
    MotionToggle,
}

impl Key {
    pub const ALL: [Key; 12] = [
        Key::ModeIdle,
        Key::ModeJog,
        Key::ModeDance,
        Key::ModeScan,
        Key::ModeFlap,
        Key::JogXPlus,
        Key::JogXMinus,
        Key::JogYPlus,
        Key::JogYMinus,
        Key::Start,
        Key::Stop,
        Key::MotionToggle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Key::ModeIdle => "MODE_IDLE",
            Key::ModeJog => "MODE_JOG",
            Key::ModeDance => "MODE_DANCE",
            Key::ModeScan => "MODE_SCAN",
            Key::ModeFlap => "MODE_FLAP",
            Key::JogXPlus => "JOG_X_PLUS",
            Key::JogXMinus => "JOG_X_MINUS",
            Key::JogYPlus => "JOG_Y_PLUS",
            Key::JogYMinus => "JOG_Y_MINUS",
            Key::Start => "START",
            Key::Stop => "STOP",
            Key::MotionToggle => "MOTION_TOGGLE",
        }
    }

    /// Physical keypad symbol.
    pub fn symbol(self) -> &'static str {
        match self {
            Key::ModeIdle => "1",
            Key::ModeJog => "2",
            Key::ModeDance => "3",
            Key::ModeScan => "4",
            Key::ModeFlap => "5",
            Key::JogXPlus => "RIGHT",
            Key::JogXMinus => "LEFT",
            Key::JogYPlus => "UP",
            Key::JogYMinus => "DOWN",
            Key::Start => "#",
            Key::Stop => "*",
            Key::MotionToggle => "0",
        }
    }

    pub fn target_mode(self) -> Option<Mode> {
        match self {
            Key::ModeIdle => Some(Mode::Idle),
            Key::ModeJog => Some(Mode::Jog),
            Key::ModeDance => Some(Mode::Dance),
            Key::ModeScan => Some(Mode::Scan),
            Key::ModeFlap => Some(Mode::Flap),
            _ => None,
        }
    }

    pub fn jog_delta(self) -> Option<[f64; 2]> {
        match self {
            Key::JogXPlus => Some([JOG_STEP_MM, 0.0]),
            Key::JogXMinus => Some([-JOG_STEP_MM, 0.0]),
            Key::JogYPlus => Some([0.0, JOG_STEP_MM]),
            Key::JogYMinus => Some([0.0, -JOG_STEP_MM]),
            _ => None,
        }
    }
}

impl fmt::Display for Key {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Accepts either the key name or the keypad symbol.
impl FromStr for Key {
    type Err = ControllerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        Key::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(t) || k.symbol().eq_ignore_ascii_case(t))
            .ok_or_else(|| ControllerError::UnknownKey(s.to_owned()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutineKind {
    Dance,
    Scan,
}

impl RoutineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RoutineKind::Dance => "dance",
            RoutineKind::Scan => "scan",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub mode: Mode,
    pub motion_enabled: bool,
    pub active_routine: Option<RoutineKind>,
    /// Current flapper drive frequency; 0 when off.
    pub flapper_hz: f64,
    /// Frequency used when the flapper is switched on.
    pub flapper_setpoint_hz: f64,
}

pub const DEFAULT_FLAPPER_HZ: f64 = 13.0;

impl Default for ControllerState {
    /// Power-up state: idle, motion disabled.
    fn default() -> Self {
        ControllerState {
            mode: Mode::Idle,
            motion_enabled: false,
            active_routine: None,
            flapper_hz: 0.0,
            flapper_setpoint_hz: DEFAULT_FLAPPER_HZ,
        }
    }
}

/// Side effect requested by a transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum Action {
    Jog {
        dx: f64,
        dy: f64,
    },
    StartRoutine {
        routine: RoutineKind,
    },
    FlapperOn {
        hz: f64,
    },
    /// Abort any routine and stop the stage.
    Halt,
    FlapperOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: ControllerState,
    pub actions: Vec<Action>,
}

fn reject(state: &ControllerState, key: Key, reason: &str) -> ControllerError {
    ControllerError::RejectedTransition { mode: state.mode, key, reason: reason.to_owned() }
}

/// Applies `key` to `state`. Rejections leave the state untouched.
pub fn dispatch(state: &ControllerState, key: Key) -> Result<Transition, ControllerError> {
    let mut next = *state;
    let mut actions = Vec::new();
    let busy = state.active_routine.is_some();
    let flapper_on = state.flapper_hz > 0.0;
    match key {
        Key::ModeIdle | Key::ModeJog | Key::ModeDance | Key::ModeScan | Key::ModeFlap => {
            if busy {
                return Err(reject(state, key, "routine active"));
            }
            let target = key.target_mode().unwrap();
            next.mode = target;
            if flapper_on && target != Mode::Flap {
                next.flapper_hz = 0.0;
                actions.push(Action::FlapperOff);
            }
        }
        Key::JogXPlus | Key::JogXMinus | Key::JogYPlus | Key::JogYMinus => {
            if state.mode != Mode::Jog {
                return Err(reject(state, key, "not in JOG mode"));
            }
            if !state.motion_enabled {
                return Err(reject(state, key, "motion disabled"));
            }
            if busy {
                return Err(reject(state, key, "routine active"));
            }
            let [dx, dy] = key.jog_delta().unwrap();
            actions.push(Action::Jog { dx, dy });
        }
        Key::Start => match state.mode {
            Mode::Dance | Mode::Scan => {
                if busy {
                    return Err(reject(state, key, "routine active"));
                }
                if !state.motion_enabled {
                    return Err(reject(state, key, "motion disabled"));
                }
                let routine = if state.mode == Mode::Dance { RoutineKind::Dance } else { RoutineKind::Scan };
                next.active_routine = Some(routine);
                actions.push(Action::StartRoutine { routine });
            }
            Mode::Flap => {
                if flapper_on {
                    return Err(reject(state, key, "flapper already running"));
                }
                if !(state.flapper_setpoint_hz > 0.0) {
                    return Err(reject(state, key, "flapper setpoint is zero"));
                }
                next.flapper_hz = state.flapper_setpoint_hz;
                actions.push(Action::FlapperOn { hz: state.flapper_setpoint_hz });
            }
            Mode::Idle | Mode::Jog => return Err(reject(state, key, "no routine in this mode")),
        },
        Key::Stop => {
            next.active_routine = None;
            next.motion_enabled = false;
            next.flapper_hz = 0.0;
            actions.push(Action::Halt);
            if flapper_on {
                actions.push(Action::FlapperOff);
            }
        }
        Key::MotionToggle => {
            next.motion_enabled = !state.motion_enabled;
            if state.motion_enabled {
                next.active_routine = None;
                actions.push(Action::Halt);
                // a routine's payload stops with it; the FLAP-mode flapper
                // is not a stage routine and keeps running
                if busy && flapper_on {
                    next.flapper_hz = 0.0;
                    actions.push(Action::FlapperOff);
                }
            }
        }
    }
    Ok(Transition { state: next, actions })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(mode: Mode, enabled: bool) -> ControllerState {
        ControllerState { mode, motion_enabled: enabled, ..ControllerState::default() }
    }

    #[test]
    fn spec_examples() {
        let t = dispatch(&ControllerState::default(), Key::ModeDance).unwrap();
        assert_eq!(t.state.mode, Mode::Dance);

        let err = dispatch(&state(Mode::Jog, false), Key::JogXPlus).unwrap_err();
        assert_eq!(err.name(), "RejectedTransition");

        let t = dispatch(&state(Mode::Dance, true), Key::Start).unwrap();
        assert_eq!(t.state.active_routine, Some(RoutineKind::Dance));
        assert_eq!(t.actions, vec![Action::StartRoutine { routine: RoutineKind::Dance }]);
    }

    #[test]
    fn keys_parse_by_name_and_symbol() {
        for k in Key::ALL {
            assert_eq!(k.name().parse::<Key>().unwrap(), k);
            assert_eq!(k.symbol().parse::<Key>().unwrap(), k);
        }
        assert_eq!("9".parse::<Key>().unwrap_err().name(), "UnknownKey");
        assert_eq!("scan".parse::<Mode>().unwrap(), Mode::Scan);
    }

    #[test]
    fn stop_always_disables() {
        for mode in Mode::ALL {
            let mut s = state(mode, true);
            s.flapper_hz = 13.0;
            let t = dispatch(&s, Key::Stop).unwrap();
            assert!(!t.state.motion_enabled);
            assert_eq!(t.state.flapper_hz, 0.0);
            assert_eq!(t.state.active_routine, None);
        }
    }

    #[test]
    fn flap_start_uses_setpoint() {
        let mut s = state(Mode::Flap, false);
        s.flapper_setpoint_hz = 27.95;
        let t = dispatch(&s, Key::Start).unwrap();
        assert_eq!(t.state.flapper_hz, 27.95);
        let t2 = dispatch(&t.state, Key::ModeIdle).unwrap();
        assert_eq!(t2.state.flapper_hz, 0.0);
        assert_eq!(t2.actions, vec![Action::FlapperOff]);
    }
}
