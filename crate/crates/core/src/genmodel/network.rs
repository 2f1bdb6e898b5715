use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{affine, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::rng::normal;
use crate::scalar::{softplus, softplus_inv, Scalar};

/// Floor added to every learned variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Fully-connected layer `y = x·W + b` with `W: [in, out]`, `b: [1, out]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense<S> {
    pub weight: Tensor<S>,
    pub bias: Tensor<S>,
}

impl<S: Scalar> Dense<S> {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[inputs, outputs]),
            bias: Tensor::zeros(&[1, outputs]),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weight.cols()
    }
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp<S> {
    pub layers: Vec<Dense<S>>,
}

impl<S: Scalar> Mlp<S> {
    /// All-zero network with layer widths `dims` (`dims[0]` inputs).
    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            layers: dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect(),
        }
    }

    /// Uniform initialisation in `±1/√fan_in`, for weights and biases alike.
    pub fn fan_in_uniform<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut net = Self::zeros(dims);
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            for v in layer
                .weight
                .data_mut()
                .iter_mut()
                .chain(layer.bias.data_mut())
            {
                *v = S::of(rng.random_range(-bound..bound));
            }
        }
        net
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.layers.first().map_or(0, Dense::inputs)];
        d.extend(self.layers.iter().map(Dense::outputs));
        d
    }

    pub fn inputs(&self) -> usize {
        self.layers.first().map_or(0, Dense::inputs)
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<S>> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<S>> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    /// Plain evaluation of every row of `x`.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        if x.cols() != self.inputs() {
            return Err(Error::Dimension {
                what: "network input",
                expected: self.inputs(),
                got: x.cols(),
            });
        }
        let mut h = x.clone();
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            h = affine(&h, &layer.weight, &layer.bias)?;
            if i < last {
                h.relu_assign();
            }
        }
        if !h.is_finite() {
            return Err(Error::NonFinite("network forward"));
        }
        Ok(h)
    }

    /// Records each layer as trainable leaves; returns `(weight, bias)` vars.
    pub fn params_on_tape(&self, tape: &mut Tape<S>) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
            .collect()
    }

    pub fn constants_on_tape(&self, tape: &mut Tape<S>) -> Vec<(Var, Var)> {
        self.layers
            .iter()
            .map(|l| {
                (
                    tape.constant(l.weight.clone()),
                    tape.constant(l.bias.clone()),
                )
            })
            .collect()
    }
}

/// Recorded MLP forward pass over layer vars produced by
/// [`Mlp::params_on_tape`] or [`VariationalWeights::sample_on_tape`].
pub fn mlp_on_tape<S: Scalar>(tape: &mut Tape<S>, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    let last = layers.len().saturating_sub(1);
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(h, w)?;
        h = tape.add(z, b)?;
        if i < last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// Mean-field Gaussian posterior over every scalar weight of an [`Mlp`];
/// variances are `softplus(rho) + VARIANCE_FLOOR`. The prior is `N(0, 1)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariationalWeights<S> {
    pub mean: Mlp<S>,
    pub rho: Mlp<S>,
}

/// Trainable vars of one variational layer on a tape.
#[derive(Clone, Copy, Debug)]
pub struct VariationalLayerVars {
    pub weight_mean: Var,
    pub weight_rho: Var,
    pub bias_mean: Var,
    pub bias_rho: Var,
}

impl<S: Scalar> VariationalWeights<S> {
    /// Posterior with the given means and a uniform initial variance.
    pub fn with_variance(mean: Mlp<S>, variance: f64) -> Result<Self> {
        if variance <= VARIANCE_FLOOR {
            return Err(Error::invalid(format!(
                "initial weight variance must exceed the floor {VARIANCE_FLOOR}"
            )));
        }
        let rho_value = S::of(softplus_inv(variance - VARIANCE_FLOOR));
        let mut rho = mean.clone();
        for t in rho.tensors_mut() {
            t.data_mut().fill(rho_value);
        }
        Ok(Self { mean, rho })
    }

    /// The prior `N(0, I)` itself.
    pub fn prior(dims: &[usize]) -> Self {
        Self::with_variance(Mlp::zeros(dims), 1.0).expect("unit variance is above the floor")
    }

    pub fn variance_of(rho: S) -> S {
        softplus(rho) + S::of(VARIANCE_FLOOR)
    }

    pub fn variances(&self) -> impl Iterator<Item = S> + '_ {
        self.rho
            .tensors()
            .flat_map(|t| t.data().iter().map(|&r| Self::variance_of(r)))
    }

    /// Mean posterior variance over all scalar weights.
    pub fn mean_variance(&self) -> S {
        let n = self.rho.scalar_count();
        self.variances().sum::<S>() / S::of(n as f64)
    }

    /// One reparameterised draw `θ = μ + σ ⊙ ε`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Mlp<S> {
        let mut out = self.mean.clone();
        for (t, rho) in out.tensors_mut().zip(self.rho.tensors()) {
            for (w, &r) in t.data_mut().iter_mut().zip(rho.data()) {
                *w = *w + Self::variance_of(r).sqrt() * normal::<S, _>(rng);
            }
        }
        out
    }

    /// Analytic `KL[q(θ) ‖ N(0, I)]`.
    pub fn kl_to_prior(&self) -> S {
        let half = S::half();
        self.mean
            .tensors()
            .zip(self.rho.tensors())
            .flat_map(|(m, r)| m.data().iter().zip(r.data()))
            .map(|(&mu, &rho)| {
                let v = Self::variance_of(rho);
                half * (v + mu * mu - S::one() - v.ln())
            })
            .sum()
    }

    pub fn vars_on_tape(&self, tape: &mut Tape<S>) -> Vec<VariationalLayerVars> {
        self.mean
            .layers
            .iter()
            .zip(&self.rho.layers)
            .map(|(m, r)| VariationalLayerVars {
                weight_mean: tape.param(m.weight.clone()),
                weight_rho: tape.param(r.weight.clone()),
                bias_mean: tape.param(m.bias.clone()),
                bias_rho: tape.param(r.bias.clone()),
            })
            .collect()
    }

    /// Recorded reparameterised draw using caller-supplied noise, one tensor
    /// per weight/bias in layer order. `None` draws the posterior mean.
    pub fn sample_on_tape(
        tape: &mut Tape<S>,
        vars: &[VariationalLayerVars],
        noise: Option<&[Tensor<S>]>,
    ) -> Result<Vec<(Var, Var)>> {
        let Some(noise) = noise else {
            return Ok(vars.iter().map(|v| (v.weight_mean, v.bias_mean)).collect());
        };
        let mut out = Vec::with_capacity(vars.len());
        for (i, v) in vars.iter().enumerate() {
            let w = Self::draw_on_tape(tape, v.weight_mean, v.weight_rho, &noise[2 * i])?;
            let b = Self::draw_on_tape(tape, v.bias_mean, v.bias_rho, &noise[2 * i + 1])?;
            out.push((w, b));
        }
        Ok(out)
    }

    fn draw_on_tape(tape: &mut Tape<S>, mean: Var, rho: Var, noise: &Tensor<S>) -> Result<Var> {
        let var = Self::variance_on_tape(tape, rho)?;
        let eps = tape.constant(noise.clone());
        crate::dist::reparam_on_tape(tape, mean, var, eps)
    }

    fn variance_on_tape(tape: &mut Tape<S>, rho: Var) -> Result<Var> {
        let sp = tape.softplus(rho)?;
        tape.add_scalar(sp, S::of(VARIANCE_FLOOR))
    }

    /// Recorded `KL[q(θ) ‖ N(0, I)]`.
    pub fn kl_on_tape(tape: &mut Tape<S>, vars: &[VariationalLayerVars]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for v in vars {
            for (m, r) in [(v.weight_mean, v.weight_rho), (v.bias_mean, v.bias_rho)] {
                let var = Self::variance_on_tape(tape, r)?;
                let ln_var = tape.log(var)?;
                let m2 = tape.square(m)?;
                let a = tape.add(var, m2)?;
                let a = tape.sub(a, ln_var)?;
                let a = tape.add_scalar(a, -S::one())?;
                let s = tape.sum(a)?;
                let s = tape.scale(s, S::half())?;
                total = Some(match total {
                    Some(t) => tape.add(t, s)?,
                    None => s,
                });
            }
        }
        total.ok_or(Error::Empty("variational weights"))
    }

    /// Standard-normal noise shaped like the weights, for [`Self::sample_on_tape`].
    pub fn noise_like<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Tensor<S>> {
        self.mean
            .tensors()
            .map(|t| {
                let mut n = Tensor::zeros(t.shape());
                for v in n.data_mut() {
                    *v = normal(rng);
                }
                n
            })
            .collect()
    }
}
