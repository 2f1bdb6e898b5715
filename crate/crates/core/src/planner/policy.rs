use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::normal;

/// `q(π)`: independent Gaussians over each step's action components,
/// flattened step-major (`H · d_a` entries).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyDistribution {
    pub horizon: usize,
    pub action_dim: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

impl PolicyDistribution {
    /// `N(0, I)` over the whole sequence.
    pub fn standard(horizon: usize, action_dim: usize) -> Self {
        let n = horizon * action_dim;
        Self {
            horizon,
            action_dim,
            mean: vec![0.0; n],
            variance: vec![1.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.variance)
            .map(|(&m, &v)| m + v.sqrt() * normal::<f64, _>(rng))
            .collect()
    }

    /// Moment-matches the given sequences, flooring each variance.
    pub fn refit(&mut self, elites: &[&[f64]], variance_floor: f64) -> Result<()> {
        if elites.is_empty() {
            return Err(Error::Empty("elite set"));
        }
        let k = elites.len() as f64;
        for i in 0..self.len() {
            let mean = elites.iter().map(|e| e[i]).sum::<f64>() / k;
            let var = elites.iter().map(|e| (e[i] - mean).powi(2)).sum::<f64>() / k;
            self.mean[i] = mean;
            self.variance[i] = var.max(variance_floor);
        }
        Ok(())
    }

    /// Mean of the first step, `E[q(π_t)]`.
    pub fn first_action(&self) -> &[f64] {
        &self.mean[..self.action_dim]
    }
}
