mod common;

use aif_core::genmodel::{
    free_energy_batch, FreeEnergyOptions, ModelConfig, ModelMode, WorldModel,
};
use aif_core::rng::stream;
use common::{linear_dataset, views, LinearSystem};

fn total(
    m: &WorldModel<f64>,
    batch: &[aif_core::genmodel::TransitionRef<'_>],
    opts: &FreeEnergyOptions,
    seed: u64,
) -> f64 {
    free_energy_batch(m, batch, opts, &mut stream(seed, &[]))
        .unwrap()
        .0
        .total
}

/// Central differences over every scalar parameter, with the noise stream
/// frozen by reseeding.
fn check(mode: ModelMode, k_theta: usize) {
    let data = linear_dataset(&LinearSystem::default(), 1, 6, 5);
    let batch = views(&data);
    let cfg = ModelConfig {
        mode,
        hidden: 8,
        reward_hidden: 8,
        weight_variance_init: 0.2,
        ..ModelConfig::default()
    };
    let mut m = WorldModel::<f64>::new(cfg, 2, 1, &mut stream(3, &[])).unwrap();
    m.normalizer = aif_core::genmodel::Normalizer::fit(2, 1, &batch);
    let opts = FreeEnergyOptions {
        k_theta,
        kl_weight: 0.3,
        ..FreeEnergyOptions::default()
    };
    let seed = 77;
    let (_, grads) = free_energy_batch(&m, &batch, &opts, &mut stream(seed, &[])).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let n_params = m.params().len();
    for p in 0..n_params {
        let len = m.params()[p].len();
        for i in 0..len {
            let orig = m.params()[p].data()[i];
            m.params_mut()[p].data_mut()[i] = orig + h;
            let up = total(&m, &batch, &opts, seed);
            m.params_mut()[p].data_mut()[i] = orig - h;
            let down = total(&m, &batch, &opts, seed);
            m.params_mut()[p].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * h);
            let an = grads[p].data()[i];
            let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-3);
            worst = worst.max(rel);
        }
    }
    assert!(worst <= 1e-4, "{mode:?}: worst relative error {worst}");
}

#[test]
fn bayesian_gradients_match_finite_differences() {
    check(ModelMode::Bayesian, 1);
    check(ModelMode::Bayesian, 3);
}

#[test]
fn point_estimate_gradients_match_finite_differences() {
    check(ModelMode::PointEstimate, 2);
}
