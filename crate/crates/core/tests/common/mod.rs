#![allow(dead_code)]

use aif_core::genmodel::TransitionRef;
use aif_core::rng::stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Discretised damped oscillator `s' = s + dt·(M s + b a) + ε`.
pub struct LinearSystem {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub noise_std: f64,
}

impl Default for LinearSystem {
    fn default() -> Self {
        let dt = 0.05;
        Self {
            a: [[1.0, dt], [-dt, 1.0 - 0.1 * dt]],
            b: [0.0, dt],
            noise_std: 1e-3,
        }
    }
}

impl LinearSystem {
    pub fn mean_next(&self, s: &[f64], a: f64) -> Vec<f64> {
        (0..2)
            .map(|i| self.a[i][0] * s[0] + self.a[i][1] * s[1] + self.b[i] * a)
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Owned {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub next_state: Vec<f64>,
    pub reward: f64,
}

impl Owned {
    pub fn view(&self) -> TransitionRef<'_> {
        TransitionRef {
            state: &self.state,
            action: &self.action,
            next_state: &self.next_state,
            reward: self.reward,
        }
    }
}

/// Random-action rollouts of the linear system; reward is `−‖s'‖²`.
pub fn linear_dataset(sys: &LinearSystem, episodes: usize, steps: usize, seed: u64) -> Vec<Owned> {
    let mut rng = stream(seed, &[0xDA7A]);
    let mut out = Vec::with_capacity(episodes * steps);
    for _ in 0..episodes {
        let mut s = vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        for _ in 0..steps {
            let a: f64 = rng.random_range(-1.0..1.0);
            let mut next = sys.mean_next(&s, a);
            for v in &mut next {
                let e: f64 = StandardNormal.sample(&mut rng);
                *v += sys.noise_std * e;
            }
            let reward = -(next[0] * next[0] + next[1] * next[1]);
            out.push(Owned {
                state: s.clone(),
                action: vec![a],
                next_state: next.clone(),
                reward,
            });
            s = next;
        }
    }
    out
}

pub fn views(data: &[Owned]) -> Vec<TransitionRef<'_>> {
    data.iter().map(Owned::view).collect()
}
