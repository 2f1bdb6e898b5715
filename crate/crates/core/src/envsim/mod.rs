//! In-process environments, an action-repeat wrapper and a line-delimited
//! JSON protocol for environments hosted elsewhere.

pub mod mountain_car;
pub mod pendulum;
pub mod protocol;
pub mod repeat;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use mountain_car::MountainCar;
pub use pendulum::Pendulum;
pub use protocol::{serve, serve_connection, Message, RemoteEnv, DEFAULT_TIMEOUT};
pub use repeat::ActionRepeat;

/// Box bounds on actions and emitted states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub state_low: Vec<f64>,
    pub state_high: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    #[serde(rename = "d_s")]
    pub state_dim: usize,
    #[serde(rename = "d_a")]
    pub action_dim: usize,
    pub bounds: Bounds,
    pub max_steps: usize,
    pub reward_range: (f64, f64),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        let b = &self.bounds;
        if self.state_dim == 0 || self.action_dim == 0 {
            return Err(Error::invalid("environment dimensions must be positive"));
        }
        if b.action_low.len() != self.action_dim
            || b.action_high.len() != self.action_dim
            || b.state_low.len() != self.state_dim
            || b.state_high.len() != self.state_dim
        {
            return Err(Error::invalid(
                "bounds do not match the environment dimensions",
            ));
        }
        let ordered = |lo: &[f64], hi: &[f64]| {
            lo.iter()
                .zip(hi)
                .all(|(l, h)| l.is_finite() && h.is_finite() && l <= h)
        };
        if !ordered(&b.action_low, &b.action_high) || !ordered(&b.state_low, &b.state_high) {
            return Err(Error::invalid("bounds must be finite with low ≤ high"));
        }
        if self.max_steps == 0 {
            return Err(Error::invalid("max_steps must be positive"));
        }
        Ok(())
    }

    /// Clamps `action` into the action box, logging a warning if it was
    /// outside.
    pub fn clamp_action(&self, action: &[f64]) -> Result<Vec<f64>> {
        if action.len() != self.action_dim {
            return Err(Error::Dimension {
                what: "action",
                expected: self.action_dim,
                got: action.len(),
            });
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::NonFinite("action"));
        }
        let b = &self.bounds;
        let clamped: Vec<f64> = action
            .iter()
            .zip(b.action_low.iter().zip(&b.action_high))
            .map(|(&a, (&lo, &hi))| a.clamp(lo, hi))
            .collect();
        if clamped != action {
            log::warn!("action {action:?} outside bounds, clamped to {clamped:?}");
        }
        Ok(clamped)
    }

    pub fn contains_state(&self, state: &[f64]) -> bool {
        let b = &self.bounds;
        state.len() == self.state_dim
            && state
                .iter()
                .zip(b.state_low.iter().zip(&b.state_high))
                .all(|(&s, (&lo, &hi))| s >= lo && s <= hi)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A single-owner episodic environment.
pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode with initial state drawn from `seed`.
    fn reset(&mut self, seed: u64) -> Result<Vec<f64>>;

    /// Applies `action`, clamped to the action bounds.
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn spec(&self) -> &EnvSpec {
        (**self).spec()
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        (**self).reset(seed)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        (**self).step(action)
    }
}

/// Step counter shared by the in-process environments.
#[derive(Clone, Debug, Default)]
pub(crate) struct EpisodeClock {
    steps: usize,
    active: bool,
}

impl EpisodeClock {
    pub(crate) fn start(&mut self) {
        self.steps = 0;
        self.active = true;
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.active {
            Ok(())
        } else {
            Err(Error::invalid("episode is over; call reset"))
        }
    }

    /// Counts one step; returns whether the step cap was reached.
    pub(crate) fn tick(&mut self, max_steps: usize, terminal: bool) -> bool {
        self.steps += 1;
        let truncated = !terminal && self.steps >= max_steps;
        if terminal || truncated {
            self.active = false;
        }
        truncated
    }
}
