use serde::{Deserialize, Serialize};

use crate::genmodel::TransitionRef;
use crate::scalar::Scalar;

const MIN_STD: f64 = 1e-8;

/// Dataset statistics defining the model's internal coordinates.
///
/// The latent state is `y = (s − mean_s) / std_Δ`, i.e. observations measured
/// in units of the typical one-step change of each dimension. Network inputs
/// are standardised states and actions; the transition network outputs the
/// standardised increment, so `y' = y + mean_Δ / std_Δ + f(x)`. Rewards are
/// standardised by their own mean and deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub state_mean: Vec<f64>,
    pub state_std: Vec<f64>,
    pub action_mean: Vec<f64>,
    pub action_std: Vec<f64>,
    pub delta_mean: Vec<f64>,
    pub delta_std: Vec<f64>,
    pub reward_mean: f64,
    pub reward_std: f64,
}

fn mean_std<'a>(dim: usize, rows: impl Iterator<Item = &'a [f64]> + Clone) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows.clone() {
        for (m, &v) in mean.iter_mut().zip(r) {
            *m += v;
        }
        n += 1;
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; dim];
    for r in rows {
        for ((s, &v), &m) in var.iter_mut().zip(r).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var
        .iter()
        .map(|&s| {
            let sd = (s / n as f64).sqrt();
            if sd > MIN_STD {
                sd
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

impl Normalizer {
    pub fn identity(state_dim: usize, action_dim: usize) -> Self {
        Self {
            state_mean: vec![0.0; state_dim],
            state_std: vec![1.0; state_dim],
            action_mean: vec![0.0; action_dim],
            action_std: vec![1.0; action_dim],
            delta_mean: vec![0.0; state_dim],
            delta_std: vec![1.0; state_dim],
            reward_mean: 0.0,
            reward_std: 1.0,
        }
    }

    pub fn fit(state_dim: usize, action_dim: usize, data: &[TransitionRef<'_>]) -> Self {
        let (state_mean, state_std) = mean_std(state_dim, data.iter().map(|t| t.state));
        let (action_mean, action_std) = mean_std(action_dim, data.iter().map(|t| t.action));
        let deltas: Vec<Vec<f64>> = data
            .iter()
            .map(|t| {
                t.next_state
                    .iter()
                    .zip(t.state)
                    .map(|(a, b)| a - b)
                    .collect()
            })
            .collect();
        let (delta_mean, delta_std) = mean_std(state_dim, deltas.iter().map(Vec::as_slice));
        let rewards: Vec<[f64; 1]> = data.iter().map(|t| [t.reward]).collect();
        let (rm, rs) = mean_std(1, rewards.iter().map(|r| &r[..]));
        Self {
            state_mean,
            state_std,
            action_mean,
            action_std,
            delta_mean,
            delta_std,
            reward_mean: rm[0],
            reward_std: rs[0],
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_mean.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_mean.len()
    }

    pub fn to_latent<S: Scalar>(&self, state: &[f64]) -> Vec<S> {
        state
            .iter()
            .zip(&self.state_mean)
            .zip(&self.delta_std)
            .map(|((&s, &m), &d)| S::of((s - m) / d))
            .collect()
    }

    pub fn from_latent<S: Scalar>(&self, latent: &[S]) -> Vec<f64> {
        latent
            .iter()
            .zip(&self.state_mean)
            .zip(&self.delta_std)
            .map(|((&y, &m), &d)| m + d * y.to_f64_lossy())
            .collect()
    }

    /// Latent variance to state-space variance, per dimension.
    pub fn latent_variance_scale(&self) -> &[f64] {
        &self.delta_std
    }

    /// Multiplier taking a latent state to a standardised network input.
    pub fn latent_to_input<S: Scalar>(&self) -> Vec<S> {
        self.delta_std
            .iter()
            .zip(&self.state_std)
            .map(|(&d, &s)| S::of(d / s))
            .collect()
    }

    /// Constant drift `mean_Δ / std_Δ` added to every latent transition.
    pub fn latent_drift<S: Scalar>(&self) -> Vec<S> {
        self.delta_mean
            .iter()
            .zip(&self.delta_std)
            .map(|(&m, &d)| S::of(m / d))
            .collect()
    }

    pub fn action_to_input<S: Scalar>(&self, action: &[f64]) -> Vec<S> {
        action
            .iter()
            .zip(&self.action_mean)
            .zip(&self.action_std)
            .map(|((&a, &m), &s)| S::of((a - m) / s))
            .collect()
    }

    pub fn reward_to_std<S: Scalar>(&self, r: f64) -> S {
        S::of((r - self.reward_mean) / self.reward_std)
    }

    pub fn reward_from_std<S: Scalar>(&self, r: S) -> S {
        S::of(self.reward_mean) + S::of(self.reward_std) * r
    }
}
