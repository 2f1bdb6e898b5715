use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{AdamConfig, OptimizerState};
use crate::error::{Error, Result};
use crate::genmodel::free_energy::{free_energy_batch, FreeEnergyOptions, FreeEnergyTerms};
use crate::genmodel::model::WorldModel;
use crate::genmodel::normalize::Normalizer;
use crate::genmodel::TransitionRef;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batches: usize,
    pub batch_size: usize,
    pub k_theta: usize,
    /// Weight on the parameter divergence; `None` uses `batch_size / dataset_size`.
    pub kl_weight: Option<f64>,
    pub include_observation_nll: bool,
    /// Recompute normalisation statistics from the data before training.
    pub refit_normalizer: bool,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batches: 100,
            batch_size: 50,
            k_theta: 1,
            kl_weight: None,
            include_observation_nll: true,
            refit_normalizer: true,
            adam: AdamConfig::default(),
        }
    }
}

/// Per-batch free-energy terms of one training epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    pub terms: Vec<FreeEnergyTerms<f64>>,
}

impl TrainStats {
    fn mean_of(&self, f: impl Fn(&FreeEnergyTerms<f64>) -> f64) -> f64 {
        if self.terms.is_empty() {
            return 0.0;
        }
        self.terms.iter().map(f).sum::<f64>() / self.terms.len() as f64
    }

    pub fn mean_terms(&self) -> FreeEnergyTerms<f64> {
        FreeEnergyTerms {
            state_kl: self.mean_of(|t| t.state_kl),
            parameter_kl: self.mean_of(|t| t.parameter_kl),
            reward_nll: self.mean_of(|t| t.reward_nll),
            observation_nll: self.mean_of(|t| t.observation_nll),
            total: self.mean_of(|t| t.total),
            kl_weight: self.mean_of(|t| t.kl_weight),
            k_theta_samples: self.terms.first().map_or(0, |t| t.k_theta_samples),
        }
    }
}

/// Runs `config.batches` optimisation steps on minibatches drawn uniformly
/// with replacement from `data`.
pub fn train_epoch<S: Scalar, R: Rng + ?Sized>(
    model: &mut WorldModel<S>,
    optimizer: &mut OptimizerState<S>,
    data: &[TransitionRef<'_>],
    config: &TrainConfig,
    rng: &mut R,
) -> Result<TrainStats> {
    if data.is_empty() {
        return Err(Error::Empty("replay buffer"));
    }
    if config.batch_size == 0 {
        return Err(Error::invalid("batch_size must be positive"));
    }
    if config.refit_normalizer {
        model.normalizer = Normalizer::fit(model.state_dim(), model.action_dim(), data);
    }
    let opts = FreeEnergyOptions {
        k_theta: config.k_theta,
        kl_weight: config
            .kl_weight
            .unwrap_or(config.batch_size as f64 / data.len() as f64),
        include_observation_nll: config.include_observation_nll,
        sample_weights: true,
    };
    let mut stats = TrainStats::default();
    let mut batch = Vec::with_capacity(config.batch_size);
    for _ in 0..config.batches {
        batch.clear();
        for _ in 0..config.batch_size {
            batch.push(data[rng.random_range(0..data.len())]);
        }
        let (terms, grads) = free_energy_batch(model, &batch, &opts, rng)?;
        optimizer.step(&mut model.params_mut(), &grads)?;
        stats.terms.push(terms.to_f64());
    }
    Ok(stats)
}
