use rand::Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::genmodel::{Mlp, ModelMode, WorldModel};
use crate::planner::PlannerConfig;
use crate::rng::normal;
use crate::scalar::Scalar;

/// Particles in the model's latent coordinates for lookahead steps
/// `τ = 1..=H`, grouped by weight sample: rows `b·J .. (b+1)·J` of each
/// step's matrix were rolled out under `θ⁽ᵇ⁾`.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleSet<S> {
    pub theta_samples: usize,
    pub particles: usize,
    /// `[B·J, d_s]` per step.
    pub states: Vec<Tensor<S>>,
    /// Predicted reward means, in environment units, per step and particle.
    pub rewards: Vec<Vec<f64>>,
}

impl<S: Scalar> ParticleSet<S> {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn count(&self) -> usize {
        self.theta_samples * self.particles
    }
}

/// Draws `B` weight samples (one, the point estimate, in point-estimate
/// mode) and rolls `J` particles per sample through `actions`.
pub fn propagate<S: Scalar, R: Rng>(
    model: &WorldModel<S>,
    start_state: &[f64],
    actions: &[f64],
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    let b = match model.mode() {
        ModelMode::Bayesian => config.theta_samples,
        ModelMode::PointEstimate => 1,
    };
    let thetas: Vec<Mlp<S>> = (0..b).map(|_| model.transition.draw(rng)).collect();
    propagate_with(model, &thetas, start_state, actions, config, rng)
}

/// [`propagate`] with the weight samples supplied.
pub fn propagate_with<S: Scalar, R: Rng>(
    model: &WorldModel<S>,
    thetas: &[Mlp<S>],
    start_state: &[f64],
    actions: &[f64],
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<ParticleSet<S>> {
    let mut out = propagate_batch(
        model,
        thetas,
        start_state,
        &[actions],
        config,
        std::slice::from_mut(rng),
    )?;
    Ok(out.pop().expect("one candidate"))
}

/// Rolls several candidate action sequences at once under shared weight
/// samples. Candidate `c` draws its transition noise from `rngs[c]` in the
/// same order as [`propagate_with`], so results do not depend on how
/// candidates are grouped.
pub fn propagate_batch<S: Scalar, R: Rng>(
    model: &WorldModel<S>,
    thetas: &[Mlp<S>],
    start_state: &[f64],
    candidates: &[&[f64]],
    config: &PlannerConfig,
    rngs: &mut [R],
) -> Result<Vec<ParticleSet<S>>> {
    let (d, da) = (model.state_dim(), model.action_dim());
    let h = config.horizon;
    let j = config.particles;
    if start_state.len() != d {
        return Err(Error::Dimension {
            what: "start state",
            expected: d,
            got: start_state.len(),
        });
    }
    if let Some(bad) = candidates.iter().find(|a| a.len() != h * da) {
        return Err(Error::Dimension {
            what: "action sequence",
            expected: h * da,
            got: bad.len(),
        });
    }
    if rngs.len() != candidates.len() {
        return Err(Error::invalid(
            "one random stream per candidate is required",
        ));
    }
    if thetas.is_empty() || j == 0 {
        return Err(Error::invalid(
            "propagation needs at least one weight sample and particle",
        ));
    }
    let c = candidates.len();
    let norm = &model.normalizer;
    let coeff = model.coefficients();
    let bj = thetas.len() * j;
    let rows = c * j;
    let y0: Vec<S> = norm.to_latent(start_state);
    // action_inputs[τ] is the [c·J, d_a] input block for step τ.
    let action_inputs: Vec<Tensor<S>> = (0..h)
        .map(|tau| {
            let mut block = Vec::with_capacity(rows * da);
            for a in candidates {
                let input: Vec<S> = norm.action_to_input(&a[tau * da..(tau + 1) * da]);
                for _ in 0..j {
                    block.extend_from_slice(&input);
                }
            }
            Tensor::from_parts(vec![rows, da], block)
        })
        .collect();
    let clamp = S::of(config.state_clamp);

    // states[c][τ] accumulates B·J rows.
    let mut states: Vec<Vec<Vec<S>>> = vec![vec![Vec::with_capacity(bj * d); h]; c];
    for theta in thetas {
        let mut y = Tensor::from_parts(vec![rows, d], y0.repeat(rows));
        for (tau, a_in) in action_inputs.iter().enumerate() {
            let (mean, var) = model.transition.predict_latent(theta, &y, a_in, &coeff)?;
            let mut next = mean.into_data();
            if config.transition_noise {
                let var = var.as_ref().map(Tensor::data);
                for (ci, rng) in rngs.iter_mut().enumerate() {
                    for idx in ci * j * d..(ci + 1) * j * d {
                        let sd = var.map_or(S::one(), |v| v[idx].sqrt());
                        next[idx] = next[idx] + sd * normal::<S, _>(rng);
                    }
                }
            }
            for x in next.iter_mut() {
                if x.is_nan() {
                    return Err(Error::NonFinite("particle state"));
                }
                *x = x.max(-clamp).min(clamp);
            }
            for (ci, st) in states.iter_mut().enumerate() {
                st[tau].extend_from_slice(&next[ci * j * d..(ci + 1) * j * d]);
            }
            y = Tensor::from_parts(vec![rows, d], next);
        }
    }

    let states: Vec<Vec<Tensor<S>>> = states
        .into_iter()
        .map(|per_tau| {
            per_tau
                .into_iter()
                .map(|s| Tensor::from_parts(vec![bj, d], s))
                .collect()
        })
        .collect();
    let mut rewards: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(h); c];
    for tau in 0..h {
        let mut all = Vec::with_capacity(c * bj * d);
        for st in &states {
            all.extend_from_slice(st[tau].data());
        }
        let r = model
            .reward
            .predict_latent(&Tensor::from_parts(vec![c * bj, d], all), &coeff)?;
        for (ci, chunk) in r.data().chunks(bj).enumerate() {
            rewards[ci].push(
                chunk
                    .iter()
                    .map(|&v| norm.reward_from_std(v).to_f64_lossy())
                    .collect(),
            );
        }
    }
    Ok(states
        .into_iter()
        .zip(rewards)
        .map(|(states, rewards)| ParticleSet {
            theta_samples: thetas.len(),
            particles: j,
            states,
            rewards,
        })
        .collect())
}
