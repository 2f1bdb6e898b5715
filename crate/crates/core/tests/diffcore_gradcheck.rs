use aif_core::diffcore::{Tape, Var};
use aif_core::rng::{normal, stream};
use aif_core::{Result, Tensor};
use proptest::prelude::*;

const STEP: f64 = 1e-5;
const KINK: f64 = 1e-4;

struct Params {
    x: Tensor,
    w: Tensor,
    b: Tensor,
    w2: Tensor,
}

fn random(rows: usize, cols: usize, rng: &mut aif_core::rng::StreamRng) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| normal(rng)).collect()).unwrap()
}

impl Params {
    fn new(seed: u64) -> Self {
        let mut rng = stream(seed, &[0x6C]);
        Self {
            x: random(3, 4, &mut rng),
            w: random(4, 4, &mut rng),
            b: random(1, 4, &mut rng),
            w2: random(4, 2, &mut rng),
        }
    }

    fn all(&self) -> [&Tensor; 4] {
        [&self.x, &self.w, &self.b, &self.w2]
    }

    fn all_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.x, &mut self.w, &mut self.b, &mut self.w2]
    }
}

/// Builds a scalar loss from a sequence of op codes. Returns the loss, the
/// leaf handles, and the smallest |pre-activation| seen by any ReLU.
fn build(tape: &mut Tape<f64>, p: &Params, ops: &[u8]) -> Result<(Var, [Var; 4], f64)> {
    let leaves = [
        tape.param(p.x.clone()),
        tape.param(p.w.clone()),
        tape.param(p.b.clone()),
        tape.param(p.w2.clone()),
    ];
    let [x, w, b, w2] = leaves;
    let mut kink = f64::INFINITY;
    let xw = tape.matmul(x, w)?;
    let mut h = tape.add(xw, b)?;
    for &op in ops {
        h = match op % 9 {
            0 => {
                kink = tape
                    .value(h)
                    .data()
                    .iter()
                    .fold(kink, |m, v| m.min(v.abs()));
                tape.relu(h)?
            }
            1 => tape.softplus(h)?,
            2 => {
                let s = tape.square(h)?;
                tape.scale(s, 0.1)?
            }
            3 => {
                let s = tape.scale(h, 0.2)?;
                tape.exp(s)?
            }
            4 => {
                let s = tape.softplus(h)?;
                let s = tape.add_scalar(s, 0.5)?;
                tape.log(s)?
            }
            5 => {
                let s = tape.square(h)?;
                let s = tape.add_scalar(s, 1.0)?;
                tape.sqrt(s)?
            }
            6 => tape.mul(h, b)?,
            7 => {
                let l = tape.slice_cols(h, 0, 2)?;
                let r = tape.slice_cols(h, 2, 4)?;
                tape.concat(r, l)?
            }
            _ => {
                let m = tape.mean(h)?;
                tape.sub(h, m)?
            }
        };
    }
    let out = tape.matmul(h, w2)?;
    let sq = tape.square(out)?;
    let a = tape.mean(sq)?;
    let cols = tape.sum_cols(out)?;
    let c = tape.sum(cols)?;
    let c = tape.scale(c, 0.3)?;
    Ok((tape.add(a, c)?, leaves, kink))
}

fn loss(p: &Params, ops: &[u8]) -> f64 {
    let mut tape = Tape::new();
    let (l, _, _) = build(&mut tape, p, ops).unwrap();
    tape.value(l).item()
}

/// Largest relative deviation between tape gradients and central
/// differences over every parameter entry.
fn gradient_error(seed: u64, ops: &[u8]) -> Option<f64> {
    let mut p = Params::new(seed);
    let mut tape = Tape::new();
    let (l, leaves, kink) = build(&mut tape, &p, ops).unwrap();
    if kink < KINK {
        return None;
    }
    let grads = tape.backward(l).unwrap();
    let analytic: Vec<Tensor> = leaves
        .iter()
        .zip(p.all())
        .map(|(&v, t)| grads.wrt_or_zeros(v, t))
        .collect();
    let mut worst = 0.0f64;
    for k in 0..4 {
        for i in 0..analytic[k].len() {
            let orig = p.all()[k].data()[i];
            p.all_mut()[k].data_mut()[i] = orig + STEP;
            let up = loss(&p, ops);
            p.all_mut()[k].data_mut()[i] = orig - STEP;
            let down = loss(&p, ops);
            p.all_mut()[k].data_mut()[i] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let an = analytic[k].data()[i];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1.0));
        }
    }
    Some(worst)
}

#[test]
fn two_layer_network_matches_finite_differences() {
    let mut checked = 0;
    for seed in 0..20 {
        if let Some(err) = gradient_error(seed, &[0]) {
            assert!(err <= 1e-5, "seed {seed}: {err}");
            checked += 1;
        }
    }
    assert!(checked >= 10);
}

fn grads_of(tape: &Tape<f64>, out: Var, leaves: &[Var; 4], p: &Params) -> Vec<Tensor> {
    let g = tape.backward(out).unwrap();
    leaves
        .iter()
        .zip(p.all())
        .map(|(&v, t)| g.wrt_or_zeros(v, t))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn composed_graphs_match_finite_differences(seed in 0u64..10_000, ops in prop::collection::vec(0u8..9, 0..6)) {
        let err = gradient_error(seed, &ops);
        prop_assume!(err.is_some());
        prop_assert!(err.unwrap() <= 1e-5, "error {:?}", err);
    }

    #[test]
    fn forward_is_deterministic(seed in 0u64..10_000, ops in prop::collection::vec(0u8..9, 0..6)) {
        let p = Params::new(seed);
        prop_assert_eq!(loss(&p, &ops).to_bits(), loss(&p, &ops).to_bits());
    }

    #[test]
    fn backward_is_linear(
        seed in 0u64..10_000,
        ops1 in prop::collection::vec(0u8..9, 0..4),
        ops2 in prop::collection::vec(0u8..9, 0..4),
        a in -3.0..3.0f64,
        b in -3.0..3.0f64,
    ) {
        let p = Params::new(seed);
        let mut t1 = Tape::new();
        let (l1, v1, _) = build(&mut t1, &p, &ops1).unwrap();
        let g1 = grads_of(&t1, l1, &v1, &p);
        let mut t2 = Tape::new();
        let (l2, v2, _) = build(&mut t2, &p, &ops2).unwrap();
        let g2 = grads_of(&t2, l2, &v2, &p);

        // Both losses on one tape, sharing the leaves.
        let mut t = Tape::new();
        let (m1, leaves, _) = build(&mut t, &p, &ops1).unwrap();
        let (m2, leaves2, _) = build(&mut t, &p, &ops2).unwrap();
        let s1 = t.scale(m1, a).unwrap();
        let s2 = t.scale(m2, b).unwrap();
        let comb = t.add(s1, s2).unwrap();
        let g = t.backward(comb).unwrap();
        for k in 0..4 {
            let ga = g.wrt_or_zeros(leaves[k], p.all()[k]);
            let gb = g.wrt_or_zeros(leaves2[k], p.all()[k]);
            for i in 0..ga.len() {
                let lhs = a * g1[k].data()[i] + b * g2[k].data()[i];
                let rhs = ga.data()[i] + gb.data()[i];
                prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            }
        }
    }
}
