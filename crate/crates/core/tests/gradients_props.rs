mod common;

use common::*;
use fpg_core::gradients::{trajectory_rng, Estimator};
use fpg_core::prelude::*;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = GeneratorKind> {
    prop_oneof![
        Just(GeneratorKind::Kl),
        (0.2f64..0.9).prop_map(|alpha| GeneratorKind::Tsallis { alpha }),
        Just(GeneratorKind::JensenShannon),
    ]
}

#[derive(Debug)]
struct Case {
    prob: RegularizedProblem,
    theta: Logits,
}

fn case() -> impl Strategy<Value = Case> {
    (
        kind_strategy(),
        1usize..5,
        2usize..4,
        prop::sample::select(vec![0.0, 0.5, 0.9]),
        any::<u64>(),
    )
        .prop_map(|(kind, ns, na, gamma, seed)| {
            let mut r = rng(seed);
            let prob = random_problem(&mut r, ns, na, gamma, kind, [0.1, 1.0][(seed % 2) as usize]);
            let theta = random_logits(&mut r, ns, na, 1.5);
            Case { prob, theta }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn exact_gradient_matches_finite_differences(c in case()) {
        let g = exact_gradient(&c.prob, &c.theta).unwrap();
        let fd = fd_gradient(&c.prob, &c.theta, 1e-6);
        prop_assert!(rel_error(&g, &fd) < 1e-5 || fd.max_abs() < 1e-9);
    }

    #[test]
    fn gradient_rows_sum_to_zero(c in case()) {
        // Adding a constant to a row of logits leaves the policy unchanged.
        let g = exact_gradient(&c.prob, &c.theta).unwrap();
        for row in g.rows() {
            prop_assert!(row.iter().sum::<f64>().abs() < 1e-10 * (1.0 + row.iter().map(|v| v.abs()).sum::<f64>()));
        }
    }

    #[test]
    fn score_is_the_gradient_of_log_policy(c in case()) {
        let cache = policy_from_logits(&c.prob, &c.theta).unwrap();
        let (ns, na) = c.theta.shape();
        let h = 1e-6;
        for s in 0..ns {
            for a in 0..na {
                let score = log_policy_gradient(&c.prob, &cache, s, a);
                for b in 0..na {
                    let mut up = c.theta.clone();
                    up.set(s, b, up.get(s, b) + h);
                    let mut dn = c.theta.clone();
                    dn.set(s, b, dn.get(s, b) - h);
                    let lp = policy_from_logits(&c.prob, &up).unwrap().policy.get(s, a).ln();
                    let lm = policy_from_logits(&c.prob, &dn).unwrap().policy.get(s, a).ln();
                    let fd = (lp - lm) / (2.0 * h);
                    prop_assert!((fd - score.get(s, b)).abs() < 1e-5 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn correction_is_the_gradient_of_the_state_divergence(c in case()) {
        let cache = policy_from_logits(&c.prob, &c.theta).unwrap();
        let (ns, na) = c.theta.shape();
        let kind = c.prob.generator.kind();
        let h = 1e-6;
        for s in 0..ns {
            let m = reinforce_correction(&c.prob, &cache, s);
            let q = c.prob.pi_ref.row(s);
            for b in 0..na {
                let mut up = c.theta.clone();
                up.set(s, b, up.get(s, b) + h);
                let mut dn = c.theta.clone();
                dn.set(s, b, dn.get(s, b) - h);
                let dp = divergence_oracle(kind, policy_from_logits(&c.prob, &up).unwrap().policy.row(s), q);
                let dm = divergence_oracle(kind, policy_from_logits(&c.prob, &dn).unwrap().policy.row(s), q);
                let fd = (dp - dm) / (2.0 * h);
                prop_assert!((fd - m.get(s, b)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn truncated_expectation_tends_to_the_exact_gradient(c in case()) {
        // With γ^H negligible the estimator is unbiased.
        let horizon = if c.prob.mdp.gamma() == 0.0 { 1 } else { 400 };
        let truncated = truncated_expected_gradient(&c.prob, &c.theta, horizon);
        let exact = exact_gradient(&c.prob, &c.theta).unwrap();
        prop_assert!(rel_error(&truncated, &exact) < 1e-8 || exact.max_abs() < 1e-12);
    }

    #[test]
    fn batch_gradient_is_the_mean_of_trajectory_estimates(c in case(), seed in any::<u64>()) {
        let cache = policy_from_logits(&c.prob, &c.theta).unwrap();
        let batch = sample_batch(&c.prob.mdp, &cache.policy, 7, 9, seed).unwrap();
        let g = stochastic_gradient(&c.prob, &c.theta, &batch).unwrap();
        let mut est = Estimator::new(&c.prob, &cache);
        let mut sum = vec![0.0; g.as_slice().len()];
        for b in 0..7 {
            let mut one = vec![0.0; sum.len()];
            est.add_trajectory(batch.states(b), batch.actions(b), &mut one);
            for (s, o) in sum.iter_mut().zip(&one) {
                *s += o / 7.0;
            }
        }
        for (a, b) in g.as_slice().iter().zip(&sum) {
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn sampling_is_deterministic_per_seed_and_trajectory() {
    let mut r = rng(5);
    let prob = random_problem(&mut r, 4, 3, 0.9, GeneratorKind::Kl, 0.1);
    let pi = Policy::uniform(4, 3);
    let a = sample_batch(&prob.mdp, &pi, 32, 20, 11).unwrap();
    let b = sample_batch(&prob.mdp, &pi, 32, 20, 11).unwrap();
    let c = sample_batch(&prob.mdp, &pi, 32, 20, 12).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.states(0), c.states(0));
    // Trajectory b depends only on (seed, b), not on the batch size.
    let small = sample_batch(&prob.mdp, &pi, 8, 20, 11).unwrap();
    for i in 0..8 {
        assert_eq!(small.states(i), a.states(i));
        assert_eq!(small.actions(i), a.actions(i));
    }
    let mut x = trajectory_rng(11, 3);
    let mut y = trajectory_rng(11, 3);
    assert_eq!(rand::Rng::random::<u64>(&mut x), rand::Rng::random::<u64>(&mut y));
}

#[test]
fn sampled_frequencies_match_the_model() {
    let mut r = rng(9);
    let prob = random_problem(&mut r, 3, 2, 0.9, GeneratorKind::Kl, 0.1);
    let pi = Policy::from_rows(&[vec![0.2, 0.8], vec![0.6, 0.4], vec![0.5, 0.5]]).unwrap();
    let n = 200_000;
    let batch = sample_batch(&prob.mdp, &pi, n, 2, 3).unwrap();
    let mut first = [0usize; 3];
    let mut pair = [[0usize; 2]; 3];
    let mut step = vec![vec![[0usize; 3]; 2]; 3];
    for b in 0..n {
        let (s, a) = (batch.states(b)[0] as usize, batch.actions(b)[0] as usize);
        first[s] += 1;
        pair[s][a] += 1;
        step[s][a][batch.states(b)[1] as usize] += 1;
    }
    let within = |count: usize, total: usize, p: f64| {
        let se = (p * (1.0 - p) / total as f64).sqrt();
        (count as f64 / total as f64 - p).abs() < 5.0 * se + 1e-12
    };
    for s in 0..3 {
        assert!(within(first[s], n, prob.mdp.rho()[s]));
        for a in 0..2 {
            assert!(within(pair[s][a], first[s], pi.get(s, a)));
            for (t, &p) in prob.mdp.transition_row(s, a).iter().enumerate() {
                assert!(within(step[s][a][t], pair[s][a], p));
            }
        }
    }
}

#[test]
fn oversized_batches_are_refused() {
    assert!(TrajectoryBatch::new(100_000, 200).is_err());
    assert!(TrajectoryBatch::new(0, 10).is_err());
}

#[test]
fn bandit_gradient_at_the_reference() {
    // γ = 0, KL, λ = 1: ∇ = π(a)(r(a) − Σπr) at θ = 0.
    let mdp = envs::bandit(&[0.0, 1.0], 0.0).unwrap();
    let prob = RegularizedProblem::with_uniform_reference(mdp, GeneratorKind::Kl, 1.0).unwrap();
    let g = exact_gradient(&prob, &Logits::zeros(1, 2)).unwrap();
    assert!((g.get(0, 0) + 0.25).abs() < 1e-14);
    assert!((g.get(0, 1) - 0.25).abs() < 1e-14);
}
