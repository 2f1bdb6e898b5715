use rand::Rng;

use crate::envsim::{Bounds, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const MIN_POSITION: f64 = -1.2;
pub const MAX_POSITION: f64 = 0.6;
pub const MAX_SPEED: f64 = 0.07;
pub const GOAL_POSITION: f64 = 0.45;
const POWER: f64 = 0.0015;
const GRAVITY: f64 = 0.0025;
pub const GOAL_REWARD: f64 = 100.0;

/// Continuous mountain car with state `(position, velocity)` and a scalar
/// force in `[−1, 1]`.
#[derive(Clone, Debug)]
pub struct MountainCar {
    spec: EnvSpec,
    state: [f64; 2],
    clock: EpisodeClock,
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new(200)
    }
}

impl MountainCar {
    pub fn new(max_steps: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 2,
                action_dim: 1,
                bounds: Bounds {
                    action_low: vec![-1.0],
                    action_high: vec![1.0],
                    state_low: vec![MIN_POSITION, -MAX_SPEED],
                    state_high: vec![MAX_POSITION, MAX_SPEED],
                },
                max_steps,
                reward_range: (-0.1, GOAL_REWARD),
            },
            state: [0.0; 2],
            clock: EpisodeClock::default(),
        }
    }

    /// Starts an episode from a given state.
    pub fn reset_to(&mut self, state: [f64; 2]) -> Result<()> {
        if !self.spec.contains_state(&state) {
            return Err(Error::invalid(format!("state {state:?} outside bounds")));
        }
        self.state = state;
        self.clock.start();
        Ok(())
    }

    pub fn state(&self) -> [f64; 2] {
        self.state
    }
}

/// One step of the dynamics for an in-bounds action.
pub fn dynamics([p, v]: [f64; 2], a: f64) -> ([f64; 2], f64, bool) {
    let v = (v + POWER * a - GRAVITY * (3.0 * p).cos()).clamp(-MAX_SPEED, MAX_SPEED);
    let p = (p + v).clamp(MIN_POSITION, MAX_POSITION);
    let v = if p == MIN_POSITION && v < 0.0 { 0.0 } else { v };
    let terminal = p >= GOAL_POSITION;
    let reward = if terminal { GOAL_REWARD } else { -0.1 * a * a };
    ([p, v], reward, terminal)
}

impl Environment for MountainCar {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = stream(seed, &[0x4D43]);
        self.reset_to([rng.random_range(-0.6..=-0.4), 0.0])?;
        Ok(self.state.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check()?;
        let a = self.spec.clamp_action(action)?[0];
        let (next, reward, terminal) = dynamics(self.state, a);
        self.state = next;
        let truncated = self.clock.tick(self.spec.max_steps, terminal);
        Ok(StepResult {
            next_state: next.to_vec(),
            reward,
            terminal,
            truncated,
        })
    }
}
