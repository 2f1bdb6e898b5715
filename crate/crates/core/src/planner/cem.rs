use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::genmodel::{Mlp, ModelMode, WorldModel};
use crate::planner::particles::propagate_batch;
use crate::planner::{
    expected_free_energy, propagate_with, EfeBreakdown, PlannerConfig, PolicyDistribution,
};
use crate::rng::{stream, StreamRng};
use crate::scalar::Scalar;

const THETA_STREAM: u64 = u64::MAX;
const NOISE_STREAM: u64 = u64::MAX - 1;
/// Candidates scored together in one batched rollout.
const CHUNK: usize = 125;

/// Scores one candidate action sequence (flattened, step-major) using the
/// noise stream `rng`.
pub trait CandidateScorer: Sync {
    fn score(&self, actions: &[f64], rng: &mut StreamRng) -> Result<f64>;

    /// Scores several candidates, candidate `c` using `rngs[c]`. Must agree
    /// with calling [`Self::score`] on each in turn.
    fn score_batch(&self, candidates: &[&[f64]], rngs: &mut [StreamRng]) -> Vec<Result<f64>> {
        candidates
            .iter()
            .zip(rngs.iter_mut())
            .map(|(a, rng)| self.score(a, rng))
            .collect()
    }
}

impl<F> CandidateScorer for F
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    fn score(&self, actions: &[f64], _rng: &mut StreamRng) -> Result<f64> {
        Ok(self(actions))
    }
}

/// Particle-based negative expected free energy under a fixed set of weight
/// samples, shared by every candidate of one plan.
pub struct ModelScorer<'a, S> {
    pub model: &'a WorldModel<S>,
    pub thetas: Vec<Mlp<S>>,
    pub start_state: Vec<f64>,
    pub config: &'a PlannerConfig,
}

impl<'a, S: Scalar> ModelScorer<'a, S> {
    pub fn new<R: Rng + ?Sized>(
        model: &'a WorldModel<S>,
        start_state: &[f64],
        config: &'a PlannerConfig,
        rng: &mut R,
    ) -> Self {
        let b = match model.mode() {
            ModelMode::Bayesian => config.theta_samples,
            ModelMode::PointEstimate => 1,
        };
        Self {
            model,
            thetas: (0..b).map(|_| model.transition.draw(rng)).collect(),
            start_state: start_state.to_vec(),
            config,
        }
    }

    pub fn breakdown(&self, actions: &[f64], rng: &mut StreamRng) -> Result<EfeBreakdown> {
        let particles = propagate_with(
            self.model,
            &self.thetas,
            &self.start_state,
            actions,
            self.config,
            rng,
        )?;
        expected_free_energy(&particles, self.config)
    }
}

impl<S: Scalar> CandidateScorer for ModelScorer<'_, S> {
    fn score(&self, actions: &[f64], rng: &mut StreamRng) -> Result<f64> {
        Ok(self.breakdown(actions, rng)?.total)
    }

    fn score_batch(&self, candidates: &[&[f64]], rngs: &mut [StreamRng]) -> Vec<Result<f64>> {
        match propagate_batch(
            self.model,
            &self.thetas,
            &self.start_state,
            candidates,
            self.config,
            rngs,
        ) {
            Ok(sets) => sets
                .iter()
                .map(|p| expected_free_energy(p, self.config).map(|e| e.total))
                .collect(),
            Err(e) => {
                let msg = e.to_string();
                (0..candidates.len())
                    .map(|_| match &e {
                        Error::NonFinite(what) => Err(Error::NonFinite(what)),
                        _ => Err(Error::InvalidArgument(msg.clone())),
                    })
                    .collect()
            }
        }
    }
}

/// Per-iteration summary of the CEM search.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationTrace {
    pub iteration: usize,
    pub elite_mean_score: f64,
    pub best_score: f64,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Plans one action from `state`: draws the weight samples and a plan seed
/// from `rng`, then runs [`cem_plan_traced`] with the model scorer.
pub fn cem_plan<S: Scalar, R: Rng + ?Sized>(
    model: &WorldModel<S>,
    state: &[f64],
    config: &PlannerConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let seed: u64 = rng.random();
    let scorer = ModelScorer::new(model, state, config, &mut stream(seed, &[THETA_STREAM]));
    Ok(cem_plan_traced(&scorer, config, seed)?.0)
}

/// Cross-entropy search over action sequences. Starting from `N(0, I)`,
/// each iteration scores `N` candidates (the previous elites plus fresh
/// draws, clamped to the bounds), keeps the `M` best and refits `q(π)` to
/// them. Candidate `n` of iteration `i` is drawn from the stream
/// `(seed, i, n)`; every candidate is scored with a fresh copy of one
/// shared noise stream, so score differences come from the actions.
/// Returns the clamped first-step mean and the per-iteration trace.
pub fn cem_plan_traced<C: CandidateScorer + ?Sized>(
    scorer: &C,
    config: &PlannerConfig,
    seed: u64,
) -> Result<(Vec<f64>, Vec<IterationTrace>)> {
    config.validate()?;
    let (n, m) = (config.candidates, config.elites);
    let mut q = PolicyDistribution::standard(config.horizon, config.action_dim());
    let mut elites: Vec<Vec<f64>> = Vec::new();
    let mut trace = Vec::with_capacity(config.iterations);
    let noise = stream(seed, &[NOISE_STREAM]);

    for it in 0..config.iterations {
        let carried = std::mem::take(&mut elites);
        let chunks: Vec<Result<Vec<(Vec<f64>, f64)>>> = (0..n.div_ceil(CHUNK))
            .into_par_iter()
            .map(|chunk| {
                let ks = chunk * CHUNK..((chunk + 1) * CHUNK).min(n);
                let actions: Vec<Vec<f64>> = ks
                    .clone()
                    .map(|k| match carried.get(k) {
                        Some(a) => a.clone(),
                        None => {
                            let mut a = q.sample(&mut stream(seed, &[it as u64, k as u64]));
                            config.clamp_actions(&mut a);
                            a
                        }
                    })
                    .collect();
                let mut rngs = vec![noise.clone(); ks.len()];
                let refs: Vec<&[f64]> = actions.iter().map(Vec::as_slice).collect();
                let scores = scorer.score_batch(&refs, &mut rngs);
                actions
                    .into_iter()
                    .zip(scores)
                    .map(|(a, s)| match s {
                        Ok(s) if s.is_finite() => Ok((a, s)),
                        Ok(_) | Err(Error::NonFinite(_)) => Ok((a, f64::NEG_INFINITY)),
                        Err(e) => Err(e),
                    })
                    .collect()
            })
            .collect();
        let scored: Vec<Result<(Vec<f64>, f64)>> = chunks
            .into_iter()
            .flat_map(|c| match c {
                Ok(v) => v.into_iter().map(Ok).collect::<Vec<_>>(),
                Err(e) => vec![Err(e)],
            })
            .collect();
        let mut pool = scored.into_iter().collect::<Result<Vec<_>>>()?;
        if pool.iter().all(|(_, s)| *s == f64::NEG_INFINITY) {
            return Err(Error::NonFinite("every candidate score"));
        }
        let mut order: Vec<usize> = (0..pool.len()).collect();
        order.sort_by(|&a, &b| pool[b].1.total_cmp(&pool[a].1).then(a.cmp(&b)));
        order.truncate(m);
        let elite_mean_score = order.iter().map(|&i| pool[i].1).sum::<f64>() / m as f64;
        let best_score = pool[order[0]].1;
        elites = order
            .iter()
            .map(|&i| std::mem::take(&mut pool[i].0))
            .collect();
        let refs: Vec<&[f64]> = elites.iter().map(Vec::as_slice).collect();
        q.refit(&refs, config.variance_floor)?;
        log::trace!(
            "cem iteration {it}: elite mean {elite_mean_score:.6}, best {best_score:.6}, first-step mean {:?}",
            q.first_action()
        );
        trace.push(IterationTrace {
            iteration: it,
            elite_mean_score,
            best_score,
            mean: q.mean.clone(),
            variance: q.variance.clone(),
        });
    }

    let mut action = q.first_action().to_vec();
    config.clamp_actions(&mut action);
    Ok((action, trace))
}
