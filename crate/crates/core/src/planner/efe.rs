use serde::{Deserialize, Serialize};

use crate::dist::{knn_entropy, SampleBatch};
use crate::error::Result;
use crate::planner::{ParticleSet, PlannerConfig};
use crate::scalar::Scalar;

/// Negative expected free energy of one policy, larger is better.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfeBreakdown {
    /// `Σ_τ` mean predicted reward.
    pub extrinsic: f64,
    /// `info_gain_weight · Σ_τ H[q(s_τ | π)]` over pooled particles; zero
    /// when disabled.
    pub param_info_gain: f64,
    pub total: f64,
}

/// Scores a particle set. Entropies are taken in the model's latent
/// coordinates, pooling all `B·J` particles at each step.
pub fn expected_free_energy<S: Scalar>(
    particles: &ParticleSet<S>,
    config: &PlannerConfig,
) -> Result<EfeBreakdown> {
    let extrinsic: f64 = particles
        .rewards
        .iter()
        .map(|r| r.iter().sum::<f64>() / r.len() as f64)
        .sum();
    let mut param_info_gain = 0.0;
    if config.info_gain && config.info_gain_weight != 0.0 {
        let mut h = 0.0;
        for s in &particles.states {
            let batch = SampleBatch::new(s.rows(), s.cols(), s.data().to_vec())?;
            h += knn_entropy(&batch, S::of(config.distance_floor))?
                .value
                .to_f64_lossy();
        }
        param_info_gain = config.info_gain_weight * h;
    }
    let mut total = 0.0;
    if config.extrinsic {
        total += extrinsic;
    }
    if config.info_gain {
        total += param_info_gain;
    }
    Ok(EfeBreakdown {
        extrinsic,
        param_info_gain,
        total,
    })
}
