use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, Checkpoint, NamedTensor, OptimizerState, Tensor};
use crate::dist::DiagonalGaussian;
use crate::error::{Error, Result};
use crate::genmodel::network::{Mlp, VariationalWeights, VARIANCE_FLOOR};
use crate::genmodel::normalize::Normalizer;
use crate::scalar::{softplus, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelMode {
    /// Distribution over transition weights, fixed unit transition variance.
    Bayesian,
    /// Deterministic weights, learned transition variance.
    PointEstimate,
}

impl ModelMode {
    pub fn default_recognition_variance(self) -> f64 {
        match self {
            ModelMode::Bayesian => 1.0,
            ModelMode::PointEstimate => 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mode: ModelMode,
    /// Width of both hidden layers of the transition network.
    pub hidden: usize,
    /// Width of both hidden layers of the reward network.
    pub reward_hidden: usize,
    /// Initial posterior variance of every transition weight.
    pub weight_variance_init: f64,
    /// Variance of the recognition distribution; `None` uses the mode default.
    pub recognition_variance: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            mode: ModelMode::Bayesian,
            hidden: 500,
            reward_hidden: 500,
            weight_variance_init: 0.05,
            recognition_variance: None,
        }
    }
}

impl ModelConfig {
    pub fn recognition_variance(&self) -> f64 {
        self.recognition_variance
            .unwrap_or_else(|| self.mode.default_recognition_variance())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TransitionWeights<S> {
    Bayesian(VariationalWeights<S>),
    Point(Mlp<S>),
}

/// `p(s' | s, a, θ)`: an MLP over `[state, action]` predicting the
/// standardised increment (and, in point-estimate mode, a variance head).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel<S> {
    pub state_dim: usize,
    pub action_dim: usize,
    pub weights: TransitionWeights<S>,
}

impl<S: Scalar> TransitionModel<S> {
    pub fn dims(mode: ModelMode, state_dim: usize, action_dim: usize, hidden: usize) -> Vec<usize> {
        let out = match mode {
            ModelMode::Bayesian => state_dim,
            ModelMode::PointEstimate => 2 * state_dim,
        };
        vec![state_dim + action_dim, hidden, hidden, out]
    }

    pub fn new<R: Rng + ?Sized>(
        config: &ModelConfig,
        state_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let dims = Self::dims(config.mode, state_dim, action_dim, config.hidden);
        let mean = Mlp::fan_in_uniform(&dims, rng);
        let weights = match config.mode {
            ModelMode::Bayesian => TransitionWeights::Bayesian(VariationalWeights::with_variance(
                mean,
                config.weight_variance_init,
            )?),
            ModelMode::PointEstimate => TransitionWeights::Point(mean),
        };
        Ok(Self {
            state_dim,
            action_dim,
            weights,
        })
    }

    pub fn mode(&self) -> ModelMode {
        match self.weights {
            TransitionWeights::Bayesian(_) => ModelMode::Bayesian,
            TransitionWeights::Point(_) => ModelMode::PointEstimate,
        }
    }

    /// Posterior mean (Bayesian) or the point estimate.
    pub fn point(&self) -> &Mlp<S> {
        match &self.weights {
            TransitionWeights::Bayesian(q) => &q.mean,
            TransitionWeights::Point(net) => net,
        }
    }

    /// One draw from `q(θ)`; the point estimate itself in point-estimate mode.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Mlp<S> {
        match &self.weights {
            TransitionWeights::Bayesian(q) => q.sample(rng),
            TransitionWeights::Point(net) => net.clone(),
        }
    }

    /// Batched prediction in latent coordinates. `latent` is `[m, d_s]`,
    /// `action_input` the standardised actions `[m, d_a]`. Returns the mean
    /// and, in point-estimate mode, the per-element variance.
    pub fn predict_latent(
        &self,
        theta: &Mlp<S>,
        latent: &Tensor<S>,
        action_input: &Tensor<S>,
        norm: &LatentCoefficients<S>,
    ) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
        let d = self.state_dim;
        let m = latent.rows();
        if latent.cols() != d || action_input.cols() != self.action_dim || action_input.rows() != m
        {
            return Err(Error::Dimension {
                what: "transition input",
                expected: d + self.action_dim,
                got: latent.cols() + action_input.cols(),
            });
        }
        let width = d + self.action_dim;
        let mut x = Vec::with_capacity(m * width);
        for i in 0..m {
            x.extend(
                latent
                    .row_slice(i)
                    .iter()
                    .zip(&norm.to_input)
                    .map(|(&y, &k)| y * k),
            );
            x.extend_from_slice(action_input.row_slice(i));
        }
        let out = theta.forward(&Tensor::from_parts(vec![m, width], x))?;
        let oc = out.cols();
        let mut mean = Vec::with_capacity(m * d);
        for i in 0..m {
            let (o, y) = (out.row_slice(i), latent.row_slice(i));
            mean.extend((0..d).map(|j| y[j] + norm.drift[j] + o[j]));
        }
        let var = match self.mode() {
            ModelMode::Bayesian => None,
            ModelMode::PointEstimate => {
                let floor = S::of(VARIANCE_FLOOR);
                let mut v = Vec::with_capacity(m * d);
                for i in 0..m {
                    v.extend(out.row_slice(i)[d..oc].iter().map(|&h| softplus(h) + floor));
                }
                Some(Tensor::from_parts(vec![m, d], v))
            }
        };
        Ok((Tensor::from_parts(vec![m, d], mean), var))
    }
}

/// Normaliser coefficients converted to the model's scalar type.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCoefficients<S> {
    pub to_input: Vec<S>,
    pub drift: Vec<S>,
}

impl<S: Scalar> LatentCoefficients<S> {
    pub fn new(n: &Normalizer) -> Self {
        Self {
            to_input: n.latent_to_input(),
            drift: n.latent_drift(),
        }
    }
}

/// `p(o_r | s) = N(f_α(s), 1)` on standardised states and rewards.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel<S> {
    pub net: Mlp<S>,
}

impl<S: Scalar> RewardModel<S> {
    pub fn new<R: Rng + ?Sized>(state_dim: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            net: Mlp::fan_in_uniform(&[state_dim, hidden, hidden, 1], rng),
        }
    }

    /// Standardised reward means for latent states `[m, d_s]`, as `[m, 1]`.
    pub fn predict_latent(
        &self,
        latent: &Tensor<S>,
        norm: &LatentCoefficients<S>,
    ) -> Result<Tensor<S>> {
        let scaled = Tensor::from_parts(
            latent.shape().to_vec(),
            latent
                .data()
                .iter()
                .enumerate()
                .map(|(i, &y)| y * norm.to_input[i % norm.to_input.len()])
                .collect(),
        );
        self.net.forward(&scaled)
    }
}

/// Fixed identity maps between observations and states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationMaps {
    /// Variance of `q(s | o) = N(o, σ²)`.
    pub recognition_variance: f64,
    /// Variance of `p(o | s) = N(s, σ²)`.
    pub likelihood_variance: f64,
}

/// Transition model, reward model, observation maps and the normaliser that
/// defines their coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldModel<S> {
    pub config: ModelConfig,
    pub transition: TransitionModel<S>,
    pub reward: RewardModel<S>,
    pub maps: ObservationMaps,
    pub normalizer: Normalizer,
}

impl<S: Scalar> WorldModel<S> {
    pub fn new<R: Rng + ?Sized>(
        config: ModelConfig,
        state_dim: usize,
        action_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 || config.hidden == 0 || config.reward_hidden == 0 {
            return Err(Error::invalid("model dimensions must be positive"));
        }
        let transition = TransitionModel::new(&config, state_dim, action_dim, rng)?;
        let reward = RewardModel::new(state_dim, config.reward_hidden, rng);
        let maps = ObservationMaps {
            recognition_variance: config.recognition_variance(),
            likelihood_variance: 1.0,
        };
        Ok(Self {
            config,
            transition,
            reward,
            maps,
            normalizer: Normalizer::identity(state_dim, action_dim),
        })
    }

    pub fn state_dim(&self) -> usize {
        self.transition.state_dim
    }

    pub fn action_dim(&self) -> usize {
        self.transition.action_dim
    }

    pub fn mode(&self) -> ModelMode {
        self.transition.mode()
    }

    pub fn coefficients(&self) -> LatentCoefficients<S> {
        LatentCoefficients::new(&self.normalizer)
    }

    /// `p(s_t | s_{t−1}, a_{t−1}, θ)` in environment units.
    pub fn predict_next_state(
        &self,
        state: &[f64],
        action: &[f64],
        theta: &Mlp<S>,
    ) -> Result<DiagonalGaussian<S>> {
        if state.len() != self.state_dim() || action.len() != self.action_dim() {
            return Err(Error::Dimension {
                what: "state/action",
                expected: self.state_dim() + self.action_dim(),
                got: state.len() + action.len(),
            });
        }
        let y = Tensor::row(&self.normalizer.to_latent::<S>(state));
        let a = Tensor::row(&self.normalizer.action_to_input::<S>(action));
        let (mean, var) = self
            .transition
            .predict_latent(theta, &y, &a, &self.coefficients())?;
        let scale = self.normalizer.latent_variance_scale();
        let mean = self
            .normalizer
            .from_latent(mean.data())
            .into_iter()
            .map(S::of)
            .collect();
        let var = (0..self.state_dim())
            .map(|j| {
                let v = var.as_ref().map_or(S::one(), |v| v.data()[j]);
                v * S::of(scale[j] * scale[j])
            })
            .collect();
        DiagonalGaussian::new(mean, var)
    }

    /// Mean posterior weight variance.
    pub fn parameter_uncertainty(&self) -> Result<S> {
        match &self.transition.weights {
            TransitionWeights::Bayesian(q) => Ok(q.mean_variance()),
            TransitionWeights::Point(_) => Err(Error::WrongMode {
                expected: "bayesian",
            }),
        }
    }

    /// Names of trainable tensors, in the order of [`Self::params`].
    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        match &self.transition.weights {
            TransitionWeights::Bayesian(q) => {
                for l in 0..q.mean.layers.len() {
                    for part in ["weight.mean", "weight.rho", "bias.mean", "bias.rho"] {
                        names.push(format!("transition.{l}.{part}"));
                    }
                }
            }
            TransitionWeights::Point(net) => {
                for l in 0..net.layers.len() {
                    names.push(format!("transition.{l}.weight"));
                    names.push(format!("transition.{l}.bias"));
                }
            }
        }
        for l in 0..self.reward.net.layers.len() {
            names.push(format!("reward.{l}.weight"));
            names.push(format!("reward.{l}.bias"));
        }
        names
    }

    pub fn params(&self) -> Vec<&Tensor<S>> {
        let mut out = Vec::new();
        match &self.transition.weights {
            TransitionWeights::Bayesian(q) => {
                for (m, r) in q.mean.layers.iter().zip(&q.rho.layers) {
                    out.extend([&m.weight, &r.weight, &m.bias, &r.bias]);
                }
            }
            TransitionWeights::Point(net) => out.extend(net.tensors()),
        }
        out.extend(self.reward.net.tensors());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<S>> {
        let mut out = Vec::new();
        match &mut self.transition.weights {
            TransitionWeights::Bayesian(q) => {
                for (m, r) in q.mean.layers.iter_mut().zip(q.rho.layers.iter_mut()) {
                    out.push(&mut m.weight);
                    out.push(&mut r.weight);
                    out.push(&mut m.bias);
                    out.push(&mut r.bias);
                }
            }
            TransitionWeights::Point(net) => out.extend(net.tensors_mut()),
        }
        out.extend(self.reward.net.tensors_mut());
        out
    }

    pub fn new_optimizer(&self, config: AdamConfig) -> OptimizerState<S> {
        OptimizerState::new(config, self.params())
    }

    pub fn to_checkpoint(&self, optimizer: Option<&OptimizerState<S>>) -> Checkpoint {
        let names = self.param_names();
        let params = names
            .iter()
            .zip(self.params())
            .map(|(n, t)| NamedTensor::from_tensor(n.clone(), t))
            .collect();
        let mut ck = Checkpoint::new(params);
        ck.optimizer = optimizer.map(|o| crate::diffcore::OptimizerRecord::from_state(o, &names));
        ck.meta = serde_json::json!({
            "mode": self.mode(),
            "config": self.config,
            "state_dim": self.state_dim(),
            "action_dim": self.action_dim(),
            "maps": self.maps,
            "normalizer": self.normalizer,
        });
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<OptimizerState<S>>)> {
        let field = |k: &str| {
            ck.meta
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Checkpoint(format!("missing metadata field {k}")))
        };
        let parse = |e: serde_json::Error| Error::Checkpoint(e.to_string());
        let config: ModelConfig = serde_json::from_value(field("config")?).map_err(parse)?;
        let state_dim: usize = serde_json::from_value(field("state_dim")?).map_err(parse)?;
        let action_dim: usize = serde_json::from_value(field("action_dim")?).map_err(parse)?;
        let mut rng = crate::rng::stream(0, &[]);
        let mut model = Self::new(config, state_dim, action_dim, &mut rng)?;
        model.maps = serde_json::from_value(field("maps")?).map_err(parse)?;
        model.normalizer = serde_json::from_value(field("normalizer")?).map_err(parse)?;
        let names = model.param_names();
        for (name, slot) in names.iter().zip(model.params_mut()) {
            let t: Tensor<S> = ck
                .param(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?
                .to_tensor()?;
            if t.shape() != slot.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter {name} has shape {:?}",
                    t.shape()
                )));
            }
            *slot = t;
        }
        let opt = ck.optimizer.as_ref().map(|o| o.to_state()).transpose()?;
        Ok((model, opt))
    }
}
