use std::f64::consts::PI;

use rand::Rng;

use crate::envsim::{Bounds, EnvSpec, Environment, EpisodeClock, StepResult};
use crate::error::{Error, Result};
use crate::rng::stream;

pub const GRAVITY: f64 = 10.0;
pub const MASS: f64 = 1.0;
pub const LENGTH: f64 = 1.0;
pub const DT: f64 = 0.05;
pub const MAX_SPEED: f64 = 8.0;
pub const MAX_TORQUE: f64 = 2.0;

/// Pendulum swing-up. The angle is measured from upright; observations are
/// `(cos θ, sin θ, θ̇)`.
#[derive(Clone, Debug)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
    clock: EpisodeClock,
}

impl Default for Pendulum {
    fn default() -> Self {
        Self::new(200)
    }
}

/// Maps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = (theta + PI).rem_euclid(2.0 * PI) - PI;
    if t == -PI {
        PI
    } else {
        t
    }
}

pub fn observe(theta: f64, theta_dot: f64) -> Vec<f64> {
    vec![theta.cos(), theta.sin(), theta_dot]
}

/// Mechanical energy of the rod, zero potential at the pivot height.
pub fn energy(theta: f64, theta_dot: f64) -> f64 {
    MASS * LENGTH * LENGTH * theta_dot * theta_dot / 6.0
        + MASS * GRAVITY * LENGTH / 2.0 * theta.cos()
}

/// One semi-implicit Euler step for an in-bounds torque; returns the new
/// `(θ, θ̇)` and the reward of the pre-step state.
pub fn dynamics(theta: f64, theta_dot: f64, u: f64) -> (f64, f64, f64) {
    let w = wrap_angle(theta);
    let reward = -(w * w + 0.1 * theta_dot * theta_dot + 0.001 * u * u);
    let acc = 3.0 * GRAVITY / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * u;
    let theta_dot = (theta_dot + acc * DT).clamp(-MAX_SPEED, MAX_SPEED);
    (theta + theta_dot * DT, theta_dot, reward)
}

impl Pendulum {
    pub fn new(max_steps: usize) -> Self {
        let worst = PI * PI + 0.1 * MAX_SPEED * MAX_SPEED + 0.001 * MAX_TORQUE * MAX_TORQUE;
        Self {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                bounds: Bounds {
                    action_low: vec![-MAX_TORQUE],
                    action_high: vec![MAX_TORQUE],
                    state_low: vec![-1.0, -1.0, -MAX_SPEED],
                    state_high: vec![1.0, 1.0, MAX_SPEED],
                },
                max_steps,
                reward_range: (-worst, 0.0),
            },
            theta: 0.0,
            theta_dot: 0.0,
            clock: EpisodeClock::default(),
        }
    }

    pub fn reset_to(&mut self, theta: f64, theta_dot: f64) -> Result<Vec<f64>> {
        if !theta.is_finite() || theta_dot.is_nan() || theta_dot.abs() > MAX_SPEED {
            return Err(Error::invalid("pendulum state outside bounds"));
        }
        self.theta = theta;
        self.theta_dot = theta_dot;
        self.clock.start();
        Ok(observe(theta, theta_dot))
    }

    pub fn angle(&self) -> (f64, f64) {
        (self.theta, self.theta_dot)
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Result<Vec<f64>> {
        let mut rng = stream(seed, &[0x5045]);
        let theta = wrap_angle(rng.random_range(-PI..=PI));
        let theta_dot = rng.random_range(-1.0..=1.0);
        self.reset_to(theta, theta_dot)
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        self.clock.check()?;
        let u = self.spec.clamp_action(action)?[0];
        let (theta, theta_dot, reward) = dynamics(self.theta, self.theta_dot, u);
        self.theta = wrap_angle(theta);
        self.theta_dot = theta_dot;
        let truncated = self.clock.tick(self.spec.max_steps, false);
        Ok(StepResult {
            next_state: observe(self.theta, self.theta_dot),
            reward,
            terminal: false,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_is_half_open() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn truncates_at_the_cap() {
        let mut env = Pendulum::new(3);
        env.reset(0).unwrap();
        assert!(!env.step(&[0.0]).unwrap().truncated);
        assert!(!env.step(&[0.0]).unwrap().truncated);
        assert!(env.step(&[0.0]).unwrap().truncated);
        assert!(env.step(&[0.0]).is_err());
    }
}
