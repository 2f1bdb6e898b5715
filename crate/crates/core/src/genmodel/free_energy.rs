use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{Tape, Tensor, Var};
use crate::dist::{kl_rows_on_tape, LN_2PI};
use crate::error::{Error, Result};
use crate::genmodel::model::{TransitionWeights, WorldModel};
use crate::genmodel::network::{mlp_on_tape, VariationalWeights, VARIANCE_FLOOR};
use crate::genmodel::TransitionRef;
use crate::rng::normal;
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyOptions {
    /// Number of `θ` draws averaged in the state divergence.
    pub k_theta: usize,
    /// Multiplier on `KL[q(θ) ‖ p(θ)]`.
    pub kl_weight: f64,
    pub include_observation_nll: bool,
    /// When false the posterior mean is used instead of a reparameterised draw.
    pub sample_weights: bool,
}

impl Default for FreeEnergyOptions {
    fn default() -> Self {
        Self {
            k_theta: 1,
            kl_weight: 1.0,
            include_observation_nll: true,
            sample_weights: true,
        }
    }
}

/// Batch-summed free-energy terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FreeEnergyTerms<S> {
    pub state_kl: S,
    pub parameter_kl: S,
    pub reward_nll: S,
    pub observation_nll: S,
    pub total: S,
    pub kl_weight: S,
    pub k_theta_samples: usize,
}

impl<S: Scalar> FreeEnergyTerms<S> {
    pub fn to_f64(&self) -> FreeEnergyTerms<f64> {
        FreeEnergyTerms {
            state_kl: self.state_kl.to_f64_lossy(),
            parameter_kl: self.parameter_kl.to_f64_lossy(),
            reward_nll: self.reward_nll.to_f64_lossy(),
            observation_nll: self.observation_nll.to_f64_lossy(),
            total: self.total.to_f64_lossy(),
            kl_weight: self.kl_weight.to_f64_lossy(),
            k_theta_samples: self.k_theta_samples,
        }
    }
}

enum TransitionVars {
    Bayesian(Vec<crate::genmodel::network::VariationalLayerVars>),
    Point(Vec<(Var, Var)>),
}

fn rows_tensor<S: Scalar>(rows: usize, cols: usize, f: impl Fn(usize) -> Vec<S>) -> Tensor<S> {
    let mut data = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        data.extend(f(i));
    }
    Tensor::from_parts(vec![rows, cols], data)
}

fn noise_tensor<S: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    cols: usize,
    scale: S,
) -> Tensor<S> {
    let data = (0..rows * cols)
        .map(|_| scale * normal::<S, _>(rng))
        .collect();
    Tensor::from_parts(vec![rows, cols], data)
}

fn add_t<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .zip(b.data())
            .map(|(&x, &y)| x + y)
            .collect(),
    )
}

fn scale_cols<S: Scalar>(a: &Tensor<S>, k: &[S]) -> Tensor<S> {
    let n = k.len();
    Tensor::from_parts(
        a.shape().to_vec(),
        a.data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x * k[i % n])
            .collect(),
    )
}

fn hcat<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Tensor<S> {
    let (na, nb) = (a.cols(), b.cols());
    rows_tensor(a.rows(), na + nb, |i| {
        let mut r = a.row_slice(i).to_vec();
        r.extend_from_slice(b.row_slice(i));
        r
    })
}

/// Free energy of a batch of `(o_{t−1}, a_{t−1}, o_t, r_t)` tuples and its
/// gradient with respect to every trainable tensor, in the order of
/// [`WorldModel::params`].
///
/// The terms are: the state divergence
/// `KL[q(s_t|o_t) ‖ p(s_t|s_{t−1}, a_{t−1}, θ)]` with `s_{t−1}` drawn from
/// `q(s_{t−1}|o_{t−1})` and averaged over `k_theta` weight draws; the weight
/// divergence `KL[q(θ) ‖ N(0, I)]`; the reward negative log-likelihood
/// under `N(f_α(s_t), 1)`; and the observation negative log-likelihood under
/// the identity likelihood map, which carries no gradient.
pub fn free_energy_batch<S: Scalar, R: Rng + ?Sized>(
    model: &WorldModel<S>,
    batch: &[TransitionRef<'_>],
    opts: &FreeEnergyOptions,
    rng: &mut R,
) -> Result<(FreeEnergyTerms<S>, Vec<Tensor<S>>)> {
    if batch.is_empty() {
        return Err(Error::Empty("transition batch"));
    }
    if opts.k_theta == 0 {
        return Err(Error::invalid("k_theta must be at least 1"));
    }
    let (d, da) = (model.state_dim(), model.action_dim());
    for t in batch {
        if t.state.len() != d || t.next_state.len() != d || t.action.len() != da {
            return Err(Error::Dimension {
                what: "transition",
                expected: 2 * d + da,
                got: t.state.len() + t.next_state.len() + t.action.len(),
            });
        }
    }
    let m = batch.len();
    let norm = &model.normalizer;
    let coeff = model.coefficients();
    let y_prev: Tensor<S> = rows_tensor(m, d, |i| norm.to_latent(batch[i].state));
    let y_next: Tensor<S> = rows_tensor(m, d, |i| norm.to_latent(batch[i].next_state));
    let a_in: Tensor<S> = rows_tensor(m, da, |i| norm.action_to_input(batch[i].action));
    let r_std: Tensor<S> = rows_tensor(m, 1, |i| vec![norm.reward_to_std(batch[i].reward)]);
    let rec_var = S::of(model.maps.recognition_variance);
    let rec_sd = rec_var.sqrt();

    let mut tape = Tape::new();
    let tvars = match &model.transition.weights {
        TransitionWeights::Bayesian(q) => TransitionVars::Bayesian(q.vars_on_tape(&mut tape)),
        TransitionWeights::Point(net) => TransitionVars::Point(net.params_on_tape(&mut tape)),
    };
    let reward_vars = model.reward.net.params_on_tape(&mut tape);

    let q_mean = tape.constant(y_next.clone());
    let q_var = tape.constant(Tensor::full(&[1, d], rec_var));
    let unit_var = tape.constant(Tensor::full(&[1, d], S::one()));

    // State divergence, averaged over K weight draws.
    let mut state_kl: Option<Var> = None;
    for _ in 0..opts.k_theta {
        let layers = match (&tvars, &model.transition.weights) {
            (TransitionVars::Bayesian(vars), TransitionWeights::Bayesian(q)) => {
                let noise = opts.sample_weights.then(|| q.noise_like(rng));
                VariationalWeights::sample_on_tape(&mut tape, vars, noise.as_deref())?
            }
            (TransitionVars::Point(vars), _) => vars.clone(),
            _ => unreachable!("tape vars follow the model mode"),
        };
        let s_prev = add_t(&y_prev, &noise_tensor(rng, m, d, rec_sd));
        let input = tape.constant(hcat(&scale_cols(&s_prev, &coeff.to_input), &a_in));
        let out = mlp_on_tape(&mut tape, &layers, input)?;
        let base = tape.constant(rows_tensor(m, d, |i| {
            s_prev
                .row_slice(i)
                .iter()
                .zip(&coeff.drift)
                .map(|(&y, &c)| y + c)
                .collect()
        }));
        let (mean, var) = match tvars {
            TransitionVars::Bayesian(_) => {
                let inc = tape.slice_cols(out, 0, d)?;
                (tape.add(inc, base)?, unit_var)
            }
            TransitionVars::Point(_) => {
                let inc = tape.slice_cols(out, 0, d)?;
                let head = tape.slice_cols(out, d, 2 * d)?;
                let sp = tape.softplus(head)?;
                (
                    tape.add(inc, base)?,
                    tape.add_scalar(sp, S::of(VARIANCE_FLOOR))?,
                )
            }
        };
        let kl_rows = kl_rows_on_tape(&mut tape, q_mean, q_var, mean, var)?;
        let kl = tape.sum(kl_rows)?;
        state_kl = Some(match state_kl {
            Some(acc) => tape.add(acc, kl)?,
            None => kl,
        });
    }
    let state_kl = tape.scale(
        state_kl.expect("k_theta >= 1"),
        S::one() / S::of(opts.k_theta as f64),
    )?;

    let parameter_kl = match &tvars {
        TransitionVars::Bayesian(vars) => Some(VariationalWeights::kl_on_tape(&mut tape, vars)?),
        TransitionVars::Point(_) => None,
    };

    // One sample of q(s_t | o_t) feeds both likelihood terms.
    let s_noise = noise_tensor(rng, m, d, rec_sd);
    let s_t = add_t(&y_next, &s_noise);
    let r_in = tape.constant(scale_cols(&s_t, &coeff.to_input));
    let r_pred = mlp_on_tape(&mut tape, &reward_vars, r_in)?;
    let r_obs = tape.constant(r_std);
    let r_err = tape.sub(r_obs, r_pred)?;
    let r_sq = tape.square(r_err)?;
    let r_sum = tape.sum(r_sq)?;
    let r_half = tape.scale(r_sum, S::half())?;
    let reward_nll = tape.add_scalar(r_half, S::half() * S::of(LN_2PI) * S::of(m as f64))?;

    let lik_var = S::of(model.maps.likelihood_variance);
    let observation_nll: S = s_noise
        .data()
        .iter()
        .map(|&e| S::half() * e * e / lik_var)
        .sum::<S>()
        + S::half() * S::of(m as f64 * d as f64) * (S::of(LN_2PI) + lik_var.ln());

    let kl_weight = S::of(opts.kl_weight);
    let mut total = tape.add(state_kl, reward_nll)?;
    if let Some(pk) = parameter_kl {
        let weighted = tape.scale(pk, kl_weight)?;
        total = tape.add(total, weighted)?;
    }
    if opts.include_observation_nll {
        total = tape.add_scalar(total, observation_nll)?;
    }

    let grads = tape.backward(total)?;
    let mut out = Vec::new();
    match &tvars {
        TransitionVars::Bayesian(vars) => {
            for v in vars {
                for var in [v.weight_mean, v.weight_rho, v.bias_mean, v.bias_rho] {
                    out.push(grads.wrt_or_zeros(var, tape.value(var)));
                }
            }
        }
        TransitionVars::Point(vars) => {
            for &(w, b) in vars {
                out.push(grads.wrt_or_zeros(w, tape.value(w)));
                out.push(grads.wrt_or_zeros(b, tape.value(b)));
            }
        }
    }
    for &(w, b) in &reward_vars {
        out.push(grads.wrt_or_zeros(w, tape.value(w)));
        out.push(grads.wrt_or_zeros(b, tape.value(b)));
    }

    let terms = FreeEnergyTerms {
        state_kl: tape.value(state_kl).item(),
        parameter_kl: parameter_kl.map_or(S::zero(), |v| tape.value(v).item()),
        reward_nll: tape.value(reward_nll).item(),
        observation_nll,
        total: tape.value(total).item(),
        kl_weight,
        k_theta_samples: opts.k_theta,
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite("free energy"));
    }
    Ok((terms, out))
}
