//! Policy selection by the cross-entropy method over action sequences,
//! scored by negative expected free energy estimated from particle rollouts
//! of the learned model.

mod cem;
mod efe;
mod particles;
mod policy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cem::{cem_plan, cem_plan_traced, CandidateScorer, IterationTrace, ModelScorer};
pub use efe::{expected_free_energy, EfeBreakdown};
pub use particles::{propagate, propagate_batch, propagate_with, ParticleSet};
pub use policy::PolicyDistribution;

/// CEM and scoring settings. Action bounds are per action dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerConfig {
    /// Planning horizon `H`.
    #[serde(rename = "H")]
    pub horizon: usize,
    /// Candidates per iteration `N`.
    #[serde(rename = "N")]
    pub candidates: usize,
    /// Elites `M`.
    #[serde(rename = "M")]
    pub elites: usize,
    /// Iterations `I`.
    #[serde(rename = "I")]
    pub iterations: usize,
    /// Weight samples `B` (forced to 1 for point-estimate models).
    #[serde(rename = "B")]
    pub theta_samples: usize,
    /// Particles per weight sample `J`.
    #[serde(rename = "J")]
    pub particles: usize,
    pub extrinsic: bool,
    pub info_gain: bool,
    pub info_gain_weight: f64,
    /// Sample next states from the predicted transition distribution; when
    /// false particles follow the predicted means.
    pub transition_noise: bool,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub variance_floor: f64,
    /// Latent particle coordinates are clamped to `±state_clamp`.
    pub state_clamp: f64,
    pub distance_floor: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            horizon: 12,
            candidates: 1000,
            elites: 100,
            iterations: 10,
            theta_samples: 5,
            particles: 4,
            extrinsic: true,
            info_gain: true,
            info_gain_weight: 1.0,
            transition_noise: true,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            variance_floor: 1e-4,
            state_clamp: 1e6,
            distance_floor: crate::dist::DEFAULT_DISTANCE_FLOOR,
        }
    }
}

impl PlannerConfig {
    pub fn action_dim(&self) -> usize {
        self.action_low.len()
    }

    pub fn with_bounds(mut self, low: Vec<f64>, high: Vec<f64>) -> Self {
        self.action_low = low;
        self.action_high = high;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("H", self.horizon),
            ("N", self.candidates),
            ("M", self.elites),
            ("I", self.iterations),
            ("B", self.theta_samples),
            ("J", self.particles),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid(format!("planner.{name} must be positive")));
            }
        }
        if self.elites > self.candidates {
            return Err(Error::invalid("planner.M must not exceed planner.N"));
        }
        if self.action_low.is_empty() || self.action_low.len() != self.action_high.len() {
            return Err(Error::invalid(
                "action bounds must be non-empty and of equal length",
            ));
        }
        if self
            .action_low
            .iter()
            .zip(&self.action_high)
            .any(|(l, h)| !(l.is_finite() && h.is_finite() && l <= h))
        {
            return Err(Error::invalid(
                "action bounds must be finite with low <= high",
            ));
        }
        if !(self.variance_floor > 0.0) || !(self.state_clamp > 0.0) || !(self.distance_floor > 0.0)
        {
            return Err(Error::invalid("planner floors and clamp must be positive"));
        }
        if !self.info_gain_weight.is_finite() {
            return Err(Error::invalid("planner.info_gain_weight must be finite"));
        }
        Ok(())
    }

    pub fn clamp_actions(&self, actions: &mut [f64]) {
        let da = self.action_dim();
        for (i, a) in actions.iter_mut().enumerate() {
            *a = a.clamp(self.action_low[i % da], self.action_high[i % da]);
        }
    }
}
