//! Generative model for fully observed environments: a weight-uncertain (or
//! point-estimate) transition network, a reward network, identity
//! observation maps, and free-energy training.

pub mod free_energy;
pub mod model;
pub mod network;
pub mod normalize;
pub mod train;

pub use free_energy::{free_energy_batch, FreeEnergyOptions, FreeEnergyTerms};
pub use model::{
    LatentCoefficients, ModelConfig, ModelMode, ObservationMaps, RewardModel, TransitionModel,
    TransitionWeights, WorldModel,
};
pub use network::{mlp_on_tape, Dense, Mlp, VariationalWeights, VARIANCE_FLOOR};
pub use normalize::Normalizer;
pub use train::{train_epoch, TrainConfig, TrainStats};

/// Borrowed view of one `(o_{t−1}, a_{t−1}, o_t, r_t)` tuple.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionRef<'a> {
    pub state: &'a [f64],
    pub action: &'a [f64],
    pub next_state: &'a [f64],
    pub reward: f64,
}
