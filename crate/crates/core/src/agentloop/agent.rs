use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agentloop::coverage::CoverageSettings;
use crate::error::{Error, Result};
use crate::genmodel::{ModelConfig, TrainConfig, WorldModel};
use crate::planner::{cem_plan, PlannerConfig};
use crate::rng::{normal, stream};
use crate::scalar::Scalar;

const NOISE_STREAM: u64 = 0x4E4F;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    /// Predicted reward plus parameter information gain.
    ActiveInference,
    /// Predicted reward only.
    RewardOnly,
    /// Reward-only plan plus Gaussian action noise.
    EpsilonGreedy,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [
        AgentKind::ActiveInference,
        AgentKind::RewardOnly,
        AgentKind::EpsilonGreedy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AgentKind::ActiveInference => "active_inference",
            AgentKind::RewardOnly => "reward_only",
            AgentKind::EpsilonGreedy => "epsilon_greedy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub kind: AgentKind,
    /// Variance of the ε-greedy action noise.
    pub noise_variance: f64,
    pub seed_episodes: usize,
    pub planner: PlannerConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub coverage: CoverageSettings,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::ActiveInference,
            noise_variance: 0.3,
            seed_episodes: 5,
            planner: PlannerConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            coverage: CoverageSettings::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid(
                "noise_variance must be finite and non-negative",
            ));
        }
        self.planner.validate()
    }

    /// The planner settings this agent scores candidates with.
    pub fn effective_planner(&self) -> PlannerConfig {
        let mut p = self.planner.clone();
        match self.kind {
            AgentKind::ActiveInference => {}
            AgentKind::RewardOnly | AgentKind::EpsilonGreedy => {
                p.extrinsic = true;
                p.info_gain = false;
            }
        }
        p
    }
}

/// The planned action, the exploration noise added to it, and the clamped
/// result.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChoice {
    pub planned: Vec<f64>,
    pub noise: Vec<f64>,
    pub action: Vec<f64>,
}

/// Plans from `state` and applies the agent's exploration rule. Draws
/// exactly one value from `rng`; planning and noise use streams derived
/// from it, so zero noise leaves every later decision unchanged.
pub fn choose_action<S: Scalar, R: Rng + ?Sized>(
    config: &AgentConfig,
    model: &WorldModel<S>,
    state: &[f64],
    rng: &mut R,
) -> Result<ActionChoice> {
    let seed: u64 = rng.random();
    let planner = config.effective_planner();
    let planned = cem_plan(model, state, &planner, &mut stream(seed, &[]))?;
    let mut action = planned.clone();
    let mut noise = vec![0.0; planned.len()];
    if config.kind == AgentKind::EpsilonGreedy && config.noise_variance > 0.0 {
        let sd = config.noise_variance.sqrt();
        let mut noise_rng = stream(seed, &[NOISE_STREAM]);
        for (a, n) in action.iter_mut().zip(&mut noise) {
            *n = sd * normal::<f64, _>(&mut noise_rng);
            *a += *n;
        }
        planner.clamp_actions(&mut action);
    }
    Ok(ActionChoice {
        planned,
        noise,
        action,
    })
}

pub fn select_action<S: Scalar, R: Rng + ?Sized>(
    config: &AgentConfig,
    model: &WorldModel<S>,
    state: &[f64],
    rng: &mut R,
) -> Result<Vec<f64>> {
    choose_action(config, model, state, rng).map(|c| c.action)
}
