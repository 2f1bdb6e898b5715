//! Fast numerical oracle suite behind `aif selftest`.

use std::fmt;
use std::time::Instant;

use aif_core::diffcore::{Tape, Var};
use aif_core::dist::{knn_entropy, DiagonalGaussian, SampleBatch, DEFAULT_DISTANCE_FLOOR};
use aif_core::planner::{cem_plan_traced, PlannerConfig};
use aif_core::rng::{normal, stream, StreamRng};
use aif_core::Tensor;
use rand::Rng;

const FD_STEP: f64 = 1e-5;
const RELU_KINK: f64 = 1e-4;
const GAUSSIAN_ENTROPY: f64 = 1.418_938_533_204_672_7;

#[derive(Clone, Copy, Debug, Default)]
pub struct SelftestOptions {
    /// Added to the 1-D entropy estimate; a fault-injection seam.
    pub entropy_bias: f64,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub measured: f64,
    pub threshold: f64,
    pub passed: bool,
}

impl Check {
    fn within(name: &'static str, measured: f64, threshold: f64) -> Self {
        Self {
            name,
            measured,
            threshold,
            passed: measured.is_finite() && measured <= threshold,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Report {
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<44} {:>12} {:>12}  result",
            "check", "measured", "threshold"
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "{:<44} {:>12.3e} {:>12.3e}  {}",
                c.name,
                c.measured,
                c.threshold,
                if c.passed { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "{} of {} checks passed in {:.1} s",
            self.checks.iter().filter(|c| c.passed).count(),
            self.checks.len(),
            self.seconds
        )
    }
}

pub fn run(options: SelftestOptions) -> Report {
    let start = Instant::now();
    let checks = vec![
        gradient_check(),
        kl_check(),
        entropy_check(options.entropy_bias),
        entropy_scaling_check(),
        entropy_equivariance_check(),
        cem_check(),
    ];
    Report {
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn random_tensor(rows: usize, cols: usize, rng: &mut StreamRng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal(rng)).collect())
        .expect("shape matches data")
}

/// A small random graph: affine layer, a few random elementwise ops, a
/// second matmul and a mean-square readout.
struct Graph {
    leaves: Vec<Tensor>,
    ops: Vec<u8>,
}

impl Graph {
    fn new(seed: u64) -> Self {
        let mut rng = stream(seed, &[0x5E1F]);
        let leaves = vec![
            random_tensor(3, 4, &mut rng),
            random_tensor(4, 4, &mut rng),
            random_tensor(1, 4, &mut rng),
            random_tensor(4, 2, &mut rng),
        ];
        let len = (rng.random::<f64>() * 4.0) as usize + 1;
        let ops = (0..len)
            .map(|_| (rng.random::<f64>() * 5.0) as u8)
            .collect();
        Self { leaves, ops }
    }

    fn build(&self, tape: &mut Tape<f64>) -> (Var, Vec<Var>, f64) {
        let vars: Vec<Var> = self.leaves.iter().map(|t| tape.param(t.clone())).collect();
        let mut kink = f64::INFINITY;
        let run = |tape: &mut Tape<f64>, kink: &mut f64| -> aif_core::Result<Var> {
            let xw = tape.matmul(vars[0], vars[1])?;
            let mut h = tape.add(xw, vars[2])?;
            for &op in &self.ops {
                h = match op {
                    0 => {
                        *kink = tape
                            .value(h)
                            .data()
                            .iter()
                            .fold(*kink, |m, v| m.min(v.abs()));
                        tape.relu(h)?
                    }
                    1 => tape.softplus(h)?,
                    2 => {
                        let s = tape.scale(h, 0.2)?;
                        tape.exp(s)?
                    }
                    3 => {
                        let s = tape.square(h)?;
                        let s = tape.add_scalar(s, 1.0)?;
                        tape.sqrt(s)?
                    }
                    _ => tape.mul(h, vars[2])?,
                };
            }
            let out = tape.matmul(h, vars[3])?;
            let sq = tape.square(out)?;
            tape.mean(sq)
        };
        let loss = run(tape, &mut kink).expect("graph shapes are consistent");
        (loss, vars, kink)
    }

    fn loss(&self) -> f64 {
        let mut tape = Tape::new();
        let (l, _, _) = self.build(&mut tape);
        tape.value(l).item()
    }

    /// Largest relative gradient error, or `None` when a ReLU input sits
    /// too close to its kink for finite differences to be meaningful.
    fn gradient_error(&mut self) -> Option<f64> {
        let mut tape = Tape::new();
        let (l, vars, kink) = self.build(&mut tape);
        if kink < RELU_KINK {
            return None;
        }
        let grads = tape.backward(l).expect("scalar loss");
        let analytic: Vec<Tensor> = vars
            .iter()
            .zip(&self.leaves)
            .map(|(&v, t)| grads.wrt_or_zeros(v, t))
            .collect();
        let mut worst = 0.0f64;
        for k in 0..self.leaves.len() {
            for i in 0..self.leaves[k].len() {
                let orig = self.leaves[k].data()[i];
                self.leaves[k].data_mut()[i] = orig + FD_STEP;
                let up = self.loss();
                self.leaves[k].data_mut()[i] = orig - FD_STEP;
                let down = self.loss();
                self.leaves[k].data_mut()[i] = orig;
                let fd = (up - down) / (2.0 * FD_STEP);
                let an = analytic[k].data()[i];
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1.0));
            }
        }
        Some(worst)
    }
}

fn gradient_check() -> Check {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut seed = 0;
    while checked < 20 {
        if let Some(e) = Graph::new(seed).gradient_error() {
            worst = worst.max(e);
            checked += 1;
        }
        seed += 1;
    }
    Check::within("autodiff vs finite differences (20 graphs)", worst, 1e-5)
}

fn kl_check() -> Check {
    let mut rng = stream(7, &[0x4B4C]);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let d = 1 + (rng.random::<f64>() * 3.0) as usize;
        let gaussian = |rng: &mut StreamRng| {
            let mean = (0..d).map(|_| normal::<f64, _>(rng)).collect();
            let var = (0..d).map(|_| 0.3 + 1.7 * rng.random::<f64>()).collect();
            DiagonalGaussian::new(mean, var).expect("positive variance")
        };
        let q = gaussian(&mut rng);
        let p = gaussian(&mut rng);
        let analytic = q.kl_divergence(&p).expect("same dimension");
        let n = 1_000_000;
        let mut eps = vec![0.0; d];
        let mut acc = 0.0;
        for _ in 0..n {
            for e in eps.iter_mut() {
                *e = normal(&mut rng);
            }
            let x = q.reparam_sample(&eps).expect("dimension");
            acc += q.log_prob(&x).expect("dimension") - p.log_prob(&x).expect("dimension");
        }
        worst = worst.max((acc / n as f64 - analytic).abs());
    }
    Check::within("KL analytic vs 1e6-sample Monte Carlo", worst, 1e-2)
}

fn gaussian_batch(n: usize, d: usize, scale: f64, seed: u64) -> SampleBatch<f64> {
    let mut rng = stream(seed, &[0xE7]);
    let values = (0..n * d)
        .map(|_| scale * normal::<f64, _>(&mut rng))
        .collect();
    SampleBatch::new(n, d, values).expect("shape matches data")
}

fn entropy(b: &SampleBatch<f64>) -> f64 {
    knn_entropy(b, DEFAULT_DISTANCE_FLOOR)
        .map(|e| e.value)
        .unwrap_or(f64::NAN)
}

fn entropy_check(bias: f64) -> Check {
    let h = entropy(&gaussian_batch(1000, 1, 1.0, 0)) + bias;
    Check::within(
        "kNN entropy of N(0,1), n=1000",
        (h - GAUSSIAN_ENTROPY).abs(),
        0.07,
    )
}

/// Independent samples at scale 1 and `c`; the estimates must differ by
/// `d ln c`.
fn entropy_scaling_check() -> Check {
    let c: f64 = 2.5;
    let shift =
        entropy(&gaussian_batch(5000, 1, c, 10)) - entropy(&gaussian_batch(5000, 1, 1.0, 9));
    Check::within(
        "kNN entropy shift ln(c), n=5000, d=1",
        (shift - c.ln()).abs(),
        0.1,
    )
}

/// The estimator itself is exactly scale-equivariant on a fixed sample.
fn entropy_equivariance_check() -> Check {
    let (d, c) = (3usize, 2.5f64);
    let base = gaussian_batch(5000, d, 1.0, 9);
    let scaled = SampleBatch::new(5000, d, base.values().iter().map(|v| c * v).collect())
        .expect("shape matches data");
    let shift = entropy(&scaled) - entropy(&base);
    Check::within(
        "kNN entropy of rescaled sample, d=3",
        (shift - d as f64 * c.ln()).abs(),
        1e-9,
    )
}

fn cem_check() -> Check {
    let config = PlannerConfig::default();
    let mut rng = stream(3, &[0xCE]);
    let target: Vec<f64> = (0..config.horizon * config.action_dim())
        .map(|_| 1.6 * rng.random::<f64>() - 0.8)
        .collect();
    let scorer = |p: &[f64]| -> f64 {
        -p.iter()
            .zip(&target)
            .map(|(x, c)| (x - c).powi(2))
            .sum::<f64>()
    };
    let error = match cem_plan_traced(&scorer, &config, 11) {
        Ok((a, _)) => (a[0] - target[0]).abs(),
        Err(_) => f64::NAN,
    };
    Check::within("CEM first step on -|pi - c|^2", error, 0.05)
}
