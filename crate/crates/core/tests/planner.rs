use aif_core::dist::{ln_unit_ball_volume, EULER_GAMMA};
use aif_core::genmodel::{
    Mlp, ModelConfig, ModelMode, Normalizer, TransitionWeights, VariationalWeights, WorldModel,
};
use aif_core::planner::{
    cem_plan, cem_plan_traced, expected_free_energy, propagate, propagate_batch, propagate_with,
    CandidateScorer, ModelScorer, ParticleSet, PlannerConfig,
};
use aif_core::rng::{stream, StreamRng};
use aif_core::scalar::softplus_inv;
use aif_core::Tensor;
use proptest::prelude::*;
use rand::Rng;

fn world(mode: ModelMode, d: usize, da: usize, hidden: usize) -> WorldModel<f64> {
    let cfg = ModelConfig {
        mode,
        hidden,
        reward_hidden: 4,
        ..ModelConfig::default()
    };
    let mut m = WorldModel::new(cfg, d, da, &mut stream(0, &[1])).unwrap();
    m.normalizer = Normalizer::identity(d, da);
    m
}

fn unit_head() -> f64 {
    softplus_inv(1.0 - 1e-6)
}

/// Point-estimate net whose mean head computes `C·x` exactly for
/// `x = [s, a]`, using `C·relu(x) − C·relu(−x)`; the variance head is
/// constant `var_bias`.
fn linear_net(c: &[Vec<f64>], inputs: usize, var_bias: f64) -> Mlp<f64> {
    let d = c.len();
    let h = 2 * inputs;
    let mut net = Mlp::zeros(&[inputs, h, h, 2 * d]);
    let w0 = net.layers[0].weight.data_mut();
    for k in 0..inputs {
        w0[k * h + k] = 1.0;
        w0[k * h + inputs + k] = -1.0;
    }
    let w1 = net.layers[1].weight.data_mut();
    for k in 0..h {
        w1[k * h + k] = 1.0;
    }
    let w2 = net.layers[2].weight.data_mut();
    for (j, row) in c.iter().enumerate() {
        for k in 0..inputs {
            w2[k * 2 * d + j] = row[k];
            w2[(inputs + k) * 2 * d + j] = -row[k];
        }
    }
    net.layers[2].bias.data_mut()[d..].fill(var_bias);
    net
}

fn config(h: usize, b: usize, j: usize) -> PlannerConfig {
    PlannerConfig {
        horizon: h,
        theta_samples: b,
        particles: j,
        ..PlannerConfig::default()
    }
}

#[test]
fn deterministic_model_gives_identical_particles() {
    let m = world(ModelMode::PointEstimate, 2, 1, 8);
    let cfg = PlannerConfig {
        transition_noise: false,
        ..config(6, 5, 3)
    };
    let actions: Vec<f64> = (0..6).map(|i| (i as f64 * 0.3).sin()).collect();
    let p = propagate(&m, &[0.2, -0.4], &actions, &cfg, &mut stream(3, &[])).unwrap();
    assert_eq!(p.theta_samples, 1);
    for s in &p.states {
        assert_eq!(s.rows(), 3);
        for r in 1..3 {
            assert_eq!(s.row_slice(r), s.row_slice(0));
        }
    }
}

#[test]
fn exact_linear_weights_reproduce_the_matrix_rollout() {
    let a = [[0.9, 0.2], [-0.3, 1.1]];
    let b = [0.5, -0.25];
    // Residual parameterisation: the net supplies (A − I)s + Ba.
    let c = vec![
        vec![a[0][0] - 1.0, a[0][1], b[0]],
        vec![a[1][0], a[1][1] - 1.0, b[1]],
    ];
    let mut m = world(ModelMode::PointEstimate, 2, 1, 6);
    m.transition.weights = TransitionWeights::Point(linear_net(&c, 3, unit_head()));
    let cfg = PlannerConfig {
        transition_noise: false,
        ..config(8, 1, 2)
    };
    let actions: Vec<f64> = (0..8).map(|i| 0.7 * (i as f64).cos()).collect();
    let p = propagate(&m, &[1.0, -0.5], &actions, &cfg, &mut stream(0, &[])).unwrap();
    let mut s = [1.0, -0.5];
    for (tau, &u) in actions.iter().enumerate() {
        s = [
            a[0][0] * s[0] + a[0][1] * s[1] + b[0] * u,
            a[1][0] * s[0] + a[1][1] * s[1] + b[1] * u,
        ];
        for row in 0..2 {
            for k in 0..2 {
                let got = p.states[tau].row_slice(row)[k];
                assert!((got - s[k]).abs() < 1e-12, "tau {tau}: {got} vs {}", s[k]);
            }
        }
    }
}

#[test]
fn batched_propagation_matches_single_candidates_bitwise() {
    let m = world(ModelMode::Bayesian, 3, 2, 16);
    let cfg = config(5, 3, 4);
    let mut rng = stream(11, &[]);
    let thetas: Vec<_> = (0..3).map(|_| m.transition.draw(&mut rng)).collect();
    let cands: Vec<Vec<f64>> = (0..37)
        .map(|_| (0..10).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let views: Vec<&[f64]> = cands.iter().map(Vec::as_slice).collect();
    let start = [0.3, -0.2, 0.9];
    let mut rngs: Vec<StreamRng> = (0..37).map(|c| stream(5, &[c])).collect();
    let batch = propagate_batch(&m, &thetas, &start, &views, &cfg, &mut rngs).unwrap();
    for (c, got) in batch.iter().enumerate() {
        let single = propagate_with(
            &m,
            &thetas,
            &start,
            views[c],
            &cfg,
            &mut stream(5, &[c as u64]),
        )
        .unwrap();
        for tau in 0..5 {
            assert_eq!(
                got.states[tau].data(),
                single.states[tau].data(),
                "candidate {c}"
            );
            let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&got.rewards[tau]), bits(&single.rewards[tau]));
        }
    }
}

#[test]
fn unit_noise_random_walk_accumulates_variance() {
    let mut m = world(ModelMode::PointEstimate, 2, 1, 4);
    let mut net = Mlp::zeros(&[3, 4, 4, 4]);
    net.layers[2].bias.data_mut()[2..].fill(unit_head());
    m.transition.weights = TransitionWeights::Point(net);
    let cfg = config(2, 1, 200);
    let variances = |seed: u64| {
        let p = propagate(&m, &[0.0, 0.0], &[0.0, 0.0], &cfg, &mut stream(seed, &[])).unwrap();
        let mut out = [[0.0; 2]; 2];
        for (tau, row) in out.iter_mut().enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                let col: Vec<f64> = (0..200).map(|r| p.states[tau].row_slice(r)[k]).collect();
                let mean = col.iter().sum::<f64>() / 200.0;
                *v = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 199.0;
            }
        }
        out
    };
    // One set of 200 particles: relative sd of a sample variance is ≈ 10%.
    let v = variances(0);
    for (tau, expect) in [(0, 1.0), (1, 2.0)] {
        for k in 0..2 {
            assert!(
                (v[tau][k] - expect).abs() < 0.2 * expect,
                "tau {tau}: {}",
                v[tau][k]
            );
        }
    }
    let mut pooled = [[0.0; 2]; 2];
    for seed in 0..100 {
        let v = variances(seed);
        for tau in 0..2 {
            for k in 0..2 {
                pooled[tau][k] += v[tau][k] / 100.0;
            }
        }
    }
    for (tau, expect) in [(0, 1.0), (1, 2.0)] {
        for k in 0..2 {
            assert!(
                (pooled[tau][k] - expect).abs() < 0.05 * expect,
                "pooled tau {tau}: {}",
                pooled[tau][k]
            );
        }
    }
}

fn flat_set(states: Vec<Tensor>, rewards: Vec<Vec<f64>>, b: usize, j: usize) -> ParticleSet<f64> {
    ParticleSet {
        theta_samples: b,
        particles: j,
        states,
        rewards,
    }
}

#[test]
fn uniform_reward_shift_changes_total_by_horizon() {
    let mut rng = stream(4, &[]);
    let states: Vec<Tensor> = (0..12)
        .map(|_| {
            Tensor::matrix(6, 2, (0..12).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
        })
        .collect();
    let rewards: Vec<Vec<f64>> = (0..12)
        .map(|_| (0..6).map(|_| rng.random_range(-3.0..3.0)).collect())
        .collect();
    let shifted: Vec<Vec<f64>> = rewards
        .iter()
        .map(|r| r.iter().map(|x| x + 1.0).collect())
        .collect();
    let cfg = PlannerConfig {
        info_gain: false,
        ..PlannerConfig::default()
    };
    let a = expected_free_energy(&flat_set(states.clone(), rewards, 2, 3), &cfg).unwrap();
    let b = expected_free_energy(&flat_set(states, shifted, 2, 3), &cfg).unwrap();
    assert_eq!(a.param_info_gain, 0.0);
    assert!((b.total - a.total - 12.0).abs() < 1e-12);
}

#[test]
fn degenerate_particles_give_the_floor_entropy() {
    let cfg = PlannerConfig {
        transition_noise: false,
        ..config(12, 1, 4)
    };
    let m = world(ModelMode::PointEstimate, 2, 1, 8);
    let per_step = 2.0 * 1e-12f64.ln() + ln_unit_ball_volume(2) + 3f64.ln() + EULER_GAMMA;
    for seed in 0..3 {
        let mut rng = stream(seed, &[]);
        let actions: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p = propagate(&m, &[0.1, 0.2], &actions, &cfg, &mut rng).unwrap();
        let e = expected_free_energy(&p, &cfg).unwrap();
        assert!((e.param_info_gain - 12.0 * per_step).abs() < 1e-9);
        assert!((e.total - e.extrinsic - e.param_info_gain).abs() < 1e-9);
    }
}

#[test]
fn four_scalar_particles_match_hand_entropy() {
    let s = Tensor::matrix(4, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
    let set = flat_set(vec![s], vec![vec![0.0; 4]], 1, 4);
    let e = expected_free_energy(&set, &PlannerConfig::default()).unwrap();
    let hand = 3f64.ln() + 2f64.ln() + EULER_GAMMA;
    assert!((e.param_info_gain - hand).abs() < 1e-12);
    assert!((e.param_info_gain - 2.369).abs() < 1e-3);
}

fn small_cem(h: usize) -> PlannerConfig {
    PlannerConfig {
        horizon: h,
        ..PlannerConfig::default()
    }
}

#[test]
fn cem_finds_the_origin() {
    let scorer = |p: &[f64]| -p.iter().map(|x| x * x).sum::<f64>();
    for seed in 0..3 {
        let (a, _) = cem_plan_traced(&scorer, &small_cem(12), seed).unwrap();
        assert!(a[0].abs() < 0.05, "{a:?}");
    }
}

#[test]
fn cem_finds_an_interior_target() {
    let target: Vec<f64> = (0..12).map(|i| 0.8 * ((i as f64) * 0.7).sin()).collect();
    let scorer = |p: &[f64]| {
        -p.iter()
            .zip(&target)
            .map(|(x, c)| (x - c).powi(2))
            .sum::<f64>()
    };
    for seed in 0..3 {
        let (a, _) = cem_plan_traced(&scorer, &small_cem(12), seed).unwrap();
        assert!((a[0] - target[0]).abs() < 0.05, "{a:?} vs {}", target[0]);
    }
    let target2 = [0.3, -0.6];
    let scorer2 = |p: &[f64]| {
        -p.iter()
            .zip(target2.iter().cycle())
            .map(|(x, c)| (x - c).powi(2))
            .sum::<f64>()
    };
    let cfg = small_cem(4).with_bounds(vec![-1.0, -1.0], vec![1.0, 1.0]);
    let (a, _) = cem_plan_traced(&scorer2, &cfg, 9).unwrap();
    assert!(
        (a[0] - 0.3).abs() < 0.05 && (a[1] + 0.6).abs() < 0.05,
        "{a:?}"
    );
}

fn grid_best(score: impl Fn(f64) -> f64, low: f64, high: f64) -> f64 {
    (0..=20_000)
        .map(|i| score(low + (high - low) * i as f64 / 20_000.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[test]
fn cem_matches_grid_search_on_a_linear_quadratic_problem() {
    let a = [[1.0, 0.1], [-0.2, 0.95]];
    let b = [0.3, 0.8];
    let s = [1.2, -0.7];
    let reward = |u: f64| {
        let n = [
            a[0][0] * s[0] + a[0][1] * s[1] + b[0] * u,
            a[1][0] * s[0] + a[1][1] * s[1] + b[1] * u,
        ];
        -(n[0] * n[0] + n[1] * n[1]) - 0.1 * u * u
    };
    let scorer = |p: &[f64]| reward(p[0]);
    let cfg = small_cem(1).with_bounds(vec![-2.0], vec![2.0]);
    let best = grid_best(reward, -2.0, 2.0);
    for seed in 0..3 {
        let (act, _) = cem_plan_traced(&scorer, &cfg, seed).unwrap();
        let got = reward(act[0]);
        assert!((got - best).abs() <= 0.05 * best.abs(), "{got} vs {best}");
    }
}

#[test]
fn cem_with_a_model_scorer_matches_grid_search() {
    // s' = A s + B a exactly; reward −|s'_0 − 0.4| built from two ReLUs.
    let a = [[0.9, 0.2], [-0.3, 1.1]];
    let bm = [0.5, -0.25];
    let c = vec![
        vec![a[0][0] - 1.0, a[0][1], bm[0]],
        vec![a[1][0], a[1][1] - 1.0, bm[1]],
    ];
    let mut m = world(ModelMode::PointEstimate, 2, 1, 6);
    m.transition.weights = TransitionWeights::Point(linear_net(&c, 3, unit_head()));
    let mut r = Mlp::zeros(&[2, 4, 4, 1]);
    r.layers[0].weight.data_mut()[0] = 1.0;
    r.layers[0].weight.data_mut()[1] = -1.0;
    r.layers[0].bias.data_mut()[..2].copy_from_slice(&[-0.4, 0.4]);
    for k in 0..4 {
        r.layers[1].weight.data_mut()[k * 4 + k] = 1.0;
    }
    r.layers[2].weight.data_mut()[..2].copy_from_slice(&[-1.0, -1.0]);
    m.reward.net = r;

    let s = [0.3, 0.5];
    let cfg = PlannerConfig {
        info_gain: false,
        transition_noise: false,
        ..small_cem(1).with_bounds(vec![-1.0], vec![1.0])
    };
    let oracle = |u: f64| -((a[0][0] * s[0] + a[0][1] * s[1] + bm[0] * u) - 0.4).abs() - 0.5;
    let scorer = ModelScorer::new(&m, &s, &cfg, &mut stream(0, &[]));
    let mut rng = stream(1, &[]);
    for u in [-0.8, 0.0, 0.6] {
        let got = scorer.score(&[u], &mut rng).unwrap();
        assert!((got - (oracle(u) + 0.5)).abs() < 1e-12);
    }
    let best = grid_best(oracle, -1.0, 1.0);
    let (act, _) = cem_plan_traced(&scorer, &cfg, 5).unwrap();
    assert!((oracle(act[0]) - best).abs() <= 0.05 * best.abs());
}

#[test]
fn replanning_is_stateless() {
    let m = world(ModelMode::Bayesian, 2, 1, 8);
    let cfg = PlannerConfig {
        horizon: 5,
        candidates: 40,
        elites: 5,
        iterations: 3,
        ..PlannerConfig::default()
    };
    let a = cem_plan(&m, &[0.3, -0.1], &cfg, &mut stream(11, &[])).unwrap();
    let b = cem_plan(&m, &[0.3, -0.1], &cfg, &mut stream(11, &[])).unwrap();
    assert_eq!(a[0].to_bits(), b[0].to_bits());
    let c = cem_plan(&m, &[0.3, -0.1], &cfg, &mut stream(12, &[])).unwrap();
    assert_ne!(a, c);
}

#[test]
fn point_mode_uses_a_single_weight_sample() {
    let m = world(ModelMode::PointEstimate, 2, 1, 8);
    let cfg = config(3, 5, 4);
    let scorer = ModelScorer::new(&m, &[0.0, 0.0], &cfg, &mut stream(0, &[]));
    assert_eq!(scorer.thetas.len(), 1);
    let p = propagate(&m, &[0.0, 0.0], &[0.0; 3], &cfg, &mut stream(0, &[])).unwrap();
    assert_eq!(p.count(), 4);
}

/// `s' = s + a + w·relu(s − 1) + ε` with `w ~ N(0, 4)` the only uncertain
/// weight: uncertainty is reachable only by pushing the state above 1.
fn info_gain_fixture() -> WorldModel<f64> {
    let mut m = world(ModelMode::Bayesian, 1, 1, 5);
    let mut mean = Mlp::zeros(&[2, 5, 5, 1]);
    let w0 = mean.layers[0].weight.data_mut();
    w0[0] = 1.0;
    w0[1] = -1.0;
    w0[2] = 1.0;
    w0[5 + 3] = 1.0;
    w0[5 + 4] = -1.0;
    mean.layers[0].bias.data_mut()[2] = -1.0;
    for k in 0..5 {
        mean.layers[1].weight.data_mut()[k * 5 + k] = 1.0;
    }
    mean.layers[2]
        .weight
        .data_mut()
        .copy_from_slice(&[0.0, 0.0, 0.0, 1.0, -1.0]);
    let mut q = VariationalWeights::with_variance(mean, 2e-6).unwrap();
    q.rho.layers[2].weight.data_mut()[2] = softplus_inv(4.0 - 1e-6);
    m.transition.weights = TransitionWeights::Bayesian(q);
    m
}

#[test]
fn info_gain_prefers_policies_reaching_uncertain_regions() {
    let m = info_gain_fixture();
    let cfg = config(12, 5, 4);
    let (mut toward, mut away) = (0.0, 0.0);
    let mut wins = 0;
    for seed in 0..20u64 {
        let mut rng = stream(seed, &[0x16]);
        let up: Vec<f64> = (0..12).map(|_| rng.random_range(0.5..1.0)).collect();
        let down: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..-0.5)).collect();
        let gu = expected_free_energy(&propagate(&m, &[0.0], &up, &cfg, &mut rng).unwrap(), &cfg)
            .unwrap();
        let gd = expected_free_energy(&propagate(&m, &[0.0], &down, &cfg, &mut rng).unwrap(), &cfg)
            .unwrap();
        toward += gu.param_info_gain / 20.0;
        away += gd.param_info_gain / 20.0;
        wins += usize::from(gu.param_info_gain > gd.param_info_gain);
    }
    assert!(toward > away, "{toward} vs {away}");
    assert!(wins >= 15, "{wins}/20");
}

struct Shifted<'a, C: ?Sized>(&'a C, f64);

impl<C: CandidateScorer + ?Sized> CandidateScorer for Shifted<'_, C> {
    fn score(&self, actions: &[f64], rng: &mut StreamRng) -> aif_core::Result<f64> {
        Ok(self.0.score(actions, rng)? + self.1)
    }
}

fn bumpy(p: &[f64]) -> f64 {
    p.iter()
        .enumerate()
        .map(|(i, x)| -(x - 0.1 * i as f64).powi(2) + 0.3 * (5.0 * x).sin())
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn elite_scores_never_decrease(seed in any::<u64>(), h in 1usize..6) {
        let cfg = PlannerConfig { candidates: 200, elites: 20, ..small_cem(h) };
        let (_, trace) = cem_plan_traced(&bumpy, &cfg, seed).unwrap();
        for w in trace.windows(2) {
            prop_assert!(w[1].elite_mean_score >= w[0].elite_mean_score);
        }
    }

    #[test]
    fn constant_score_offsets_do_not_change_the_action(seed in any::<u64>(), c in -1e3..1e3f64) {
        let cfg = PlannerConfig { candidates: 200, elites: 20, ..small_cem(4) };
        let base = |p: &[f64]| bumpy(p);
        let (a, _) = cem_plan_traced(&base, &cfg, seed).unwrap();
        let (b, _) = cem_plan_traced(&Shifted(&base, c), &cfg, seed).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn planned_actions_respect_bounds(seed in any::<u64>(), lo in -2.0..0.0f64, width in 0.01..1.0f64) {
        let cfg = PlannerConfig { candidates: 50, elites: 5, iterations: 3, ..small_cem(3) }
            .with_bounds(vec![lo], vec![lo + width]);
        let far = |p: &[f64]| -p.iter().map(|x| (x - 5.0).powi(2)).sum::<f64>();
        let (a, trace) = cem_plan_traced(&far, &cfg, seed).unwrap();
        prop_assert!(a[0] >= lo && a[0] <= lo + width);
        prop_assert!(trace.iter().all(|t| t.variance.iter().all(|&v| v >= 1e-4)));
    }
}
