//! Constant-speed planar kinematics around a circular no-go zone.
//!
//! The agent moves a fixed distance `speed * time_step` per step along its
//! heading; the action is the heading change applied before the move.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{Point2, Rect};
use crate::io::fmt_sig;
use crate::scalar::{wrap_angle, Scalar};

/// Position plus heading; heading is kept in `(-pi, pi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState<T> {
    pub x: T,
    pub y: T,
    pub heading: T,
}

impl<T: Scalar> AgentState<T> {
    pub fn new(x: T, y: T, heading: T) -> Self {
        Self {
            x,
            y,
            heading: wrap_angle(heading),
        }
    }

    pub fn position(&self) -> Point2<T> {
        Point2::new(self.x, self.y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "radians")]
pub enum HeadingPolicy<T> {
    AimAtDestination,
    Fixed(T),
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct EnvConfig<T> {
    pub start: Point2<T>,
    pub start_heading: HeadingPolicy<T>,
    pub destination: Point2<T>,
    pub zone_center: Point2<T>,
    pub zone_radius: T,
    pub speed: T,
    pub time_step: T,
    pub max_steps: usize,
    pub world_bounds: Rect<T>,
    pub dest_tolerance: T,
}

impl<T: Scalar> Default for EnvConfig<T> {
    fn default() -> Self {
        let l = T::lit;
        Self {
            start: Point2::new(l(400.0), l(400.0)),
            start_heading: HeadingPolicy::AimAtDestination,
            destination: Point2::new(l(-200.0), l(-400.0)),
            zone_center: Point2::new(l(0.0), l(0.0)),
            zone_radius: l(240.0),
            speed: l(200.0),
            time_step: l(0.25),
            max_steps: 24,
            world_bounds: Rect::new(Point2::new(l(-1000.0), l(-1000.0)), Point2::new(l(1000.0), l(1000.0))),
            dest_tolerance: l(50.0),
        }
    }
}

impl<T: Scalar> EnvConfig<T> {
    pub fn step_length(&self) -> T {
        self.speed * self.time_step
    }

    pub fn in_zone(&self, p: Point2<T>) -> bool {
        p.dist(self.zone_center) <= self.zone_radius
    }

    pub fn at_destination(&self, p: Point2<T>) -> bool {
        p.dist(self.destination) <= self.dest_tolerance
    }

    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        let positive = |v: T, what: &str| {
            if v > zero && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive and finite, got {v}")))
            }
        };
        positive(self.zone_radius, "zone_radius")?;
        positive(self.speed, "speed")?;
        positive(self.time_step, "time_step")?;
        positive(self.dest_tolerance, "dest_tolerance")?;
        if self.max_steps == 0 {
            return Err(Error::Config("max_steps must be at least 1".into()));
        }
        if self.world_bounds.is_empty() {
            return Err(Error::Config("world_bounds is empty".into()));
        }
        if self.in_zone(self.start) {
            return Err(Error::Config(format!(
                "start ({}, {}) lies inside the no-go zone",
                self.start.x, self.start.y
            )));
        }
        if self.in_zone(self.destination) {
            return Err(Error::Config(format!(
                "destination ({}, {}) lies inside the no-go zone",
                self.destination.x, self.destination.y
            )));
        }
        Ok(())
    }

    /// Classifies a position, zone entry taking precedence.
    pub fn classify(&self, p: Point2<T>) -> Terminal {
        if self.in_zone(p) {
            Terminal::EnteredZone
        } else if !self.world_bounds.contains(p) {
            Terminal::OutOfBounds
        } else if self.at_destination(p) {
            Terminal::ReachedDestination
        } else {
            Terminal::None
        }
    }

    pub fn aim_heading(&self, from: Point2<T>) -> T {
        let d = self.destination.sub(from);
        if d.x == T::zero() && d.y == T::zero() {
            T::zero()
        } else {
            d.y.atan2(d.x)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    None,
    ReachedDestination,
    EnteredZone,
    OutOfBounds,
    MaxSteps,
}

impl Terminal {
    pub fn is_terminal(self) -> bool {
        self != Terminal::None
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::ReachedDestination => "reached_destination",
            Terminal::EnteredZone => "entered_zone",
            Terminal::OutOfBounds => "out_of_bounds",
            Terminal::MaxSteps => "max_steps",
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Terminal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => Terminal::None,
            "reached_destination" => Terminal::ReachedDestination,
            "entered_zone" => Terminal::EnteredZone,
            "out_of_bounds" => Terminal::OutOfBounds,
            "max_steps" => Terminal::MaxSteps,
            other => return Err(Error::Parse(format!("unknown terminal label `{other}`"))),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome<T> {
    pub next_state: AgentState<T>,
    pub reward: T,
    pub terminal: Terminal,
}

/// Initial state for an episode.
pub fn reset<T: Scalar, R: Rng + ?Sized>(config: &EnvConfig<T>, rng: &mut R) -> Result<AgentState<T>> {
    config.validate()?;
    let heading = match config.start_heading {
        HeadingPolicy::AimAtDestination => config.aim_heading(config.start),
        HeadingPolicy::Fixed(h) => h,
        HeadingPolicy::Random => {
            let u: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            T::lit(u)
        }
    };
    Ok(AgentState::new(config.start.x, config.start.y, heading))
}

/// Turns by `action`, then advances one step along the new heading.
/// The reward is left at zero for the caller to fill in.
pub fn step<T: Scalar>(state: &AgentState<T>, action: T, config: &EnvConfig<T>) -> StepOutcome<T> {
    let heading = wrap_angle(state.heading + action);
    let len = config.step_length();
    let next = AgentState {
        x: state.x + len * heading.cos(),
        y: state.y + len * heading.sin(),
        heading,
    };
    StepOutcome {
        next_state: next,
        reward: T::zero(),
        terminal: config.classify(next.position()),
    }
}

/// Time-stamped record of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    /// `steps + 1` states, the first being the initial state.
    pub states: Vec<AgentState<T>>,
    pub actions: Vec<T>,
    pub rewards: Vec<T>,
    pub terminals: Vec<Terminal>,
    pub outcome: Terminal,
    pub time_step: T,
}

impl<T: Scalar> Trajectory<T> {
    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    pub fn travel_time(&self) -> T {
        T::lit(self.steps() as f64) * self.time_step
    }

    pub fn total_reward(&self) -> T {
        self.rewards.iter().fold(T::zero(), |acc, &r| acc + r)
    }

    pub fn reached(&self) -> bool {
        self.outcome == Terminal::ReachedDestination
    }

    pub const CSV_HEADER: &'static str = "step,t,x,y,heading,action,reward,terminal";

    /// One row per state; row 0 is the initial state with zero action and reward.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for (k, s) in self.states.iter().enumerate() {
            let (action, reward, terminal) = if k == 0 {
                (0.0, 0.0, Terminal::None)
            } else {
                (
                    self.actions[k - 1].as_f64(),
                    self.rewards[k - 1].as_f64(),
                    self.terminals[k - 1],
                )
            };
            let t = k as f64 * self.time_step.as_f64();
            out.push_str(&format!(
                "{k},{},{},{},{},{},{},{terminal}\n",
                fmt_sig(t, 9),
                fmt_sig(s.x.as_f64(), 9),
                fmt_sig(s.y.as_f64(), 9),
                fmt_sig(s.heading.as_f64(), 9),
                fmt_sig(action, 9),
                fmt_sig(reward, 9),
            ));
        }
        out
    }
}

/// Runs `policy` from `initial` until a terminal condition or
/// `config.max_steps` steps. `reward_fn` receives the step index (1-based),
/// the action and the raw outcome, and returns the step reward.
pub fn rollout<T, P, R>(initial: AgentState<T>, config: &EnvConfig<T>, mut policy: P, mut reward_fn: R) -> Trajectory<T>
where
    T: Scalar,
    P: FnMut(&AgentState<T>) -> T,
    R: FnMut(usize, T, &StepOutcome<T>) -> T,
{
    let mut traj = Trajectory {
        states: vec![initial],
        actions: Vec::new(),
        rewards: Vec::new(),
        terminals: Vec::new(),
        outcome: Terminal::None,
        time_step: config.time_step,
    };
    let initial_class = config.classify(initial.position());
    if initial_class.is_terminal() {
        traj.outcome = initial_class;
        return traj;
    }
    let mut state = initial;
    for k in 1..=config.max_steps {
        let action = policy(&state);
        let mut outcome = step(&state, action, config);
        if !outcome.terminal.is_terminal() && k == config.max_steps {
            outcome.terminal = Terminal::MaxSteps;
        }
        outcome.reward = reward_fn(k, action, &outcome);
        traj.states.push(outcome.next_state);
        traj.actions.push(action);
        traj.rewards.push(outcome.reward);
        traj.terminals.push(outcome.terminal);
        state = outcome.next_state;
        if outcome.terminal.is_terminal() {
            traj.outcome = outcome.terminal;
            break;
        }
    }
    traj
}
