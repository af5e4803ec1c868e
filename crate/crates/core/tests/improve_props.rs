mod common;

use common::*;
use fpg_core::prelude::*;
use proptest::prelude::*;
use rand::Rng;

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
    pi: Policy,
    tau: f64,
}

/// Policies with some entries near `τ`, for a `τ` drawn in `(0, π̲/2]`.
fn case() -> impl Strategy<Value = Case> {
    (kind_strategy(), 1usize..5, 2usize..5, any::<u64>(), 1e-6f64..1.0).prop_map(|(kind, ns, na, seed, t)| {
        let mut r = rng(seed);
        let prob = random_problem(&mut r, ns, na, 0.9, kind, 0.5);
        let tau = t * 0.5 * prob.generator.pi_ref_floor();
        let rows: Vec<Vec<f64>> = (0..ns)
            .map(|s| {
                let q = prob.pi_ref.row(s);
                let mut row = dirichlet(&mut r, na);
                let keep = r.random_range(0..na);
                for a in 0..na {
                    if a != keep && r.random::<bool>() {
                        row[a] = q[a] * tau * r.random_range(0.01..3.0);
                    }
                }
                let rest: f64 = row.iter().enumerate().filter(|(a, _)| *a != keep).map(|(_, v)| v).sum();
                if rest >= 1.0 {
                    let scale = 0.5 / rest;
                    row.iter_mut().for_each(|v| *v *= scale);
                    row[keep] = 0.0;
                    let rest: f64 = row.iter().sum();
                    row[keep] = 1.0 - rest;
                } else {
                    row[keep] = 1.0 - rest;
                }
                row
            })
            .collect();
        let pi = Policy::from_rows(&rows).unwrap();
        Case { prob, pi, tau }
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn operator_raises_small_ratios_and_conserves_mass(c in case()) {
        let out = improve_policy(&c.prob, &c.pi, c.tau).unwrap();
        for s in 0..c.pi.n_states() {
            let q = c.prob.pi_ref.row(s);
            let (before, after) = (c.pi.row(s), out.row(s));
            prop_assert!((after.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let a_max = (0..q.len())
                .fold(0, |best, a| if before[a] / q[a] > before[best] / q[best] { a } else { best });
            for a in 0..q.len() {
                if before[a] / q[a] <= c.tau / 2.0 {
                    prop_assert!((after[a] - q[a] * c.tau).abs() <= 1e-15);
                } else if a != a_max {
                    prop_assert_eq!(after[a], before[a]);
                }
                // Provable floor: raised entries sit at π_ref·τ, untouched ones above π_ref·τ/2.
                prop_assert!(after[a] / q[a] > c.tau / 2.0 * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn operator_is_idempotent(c in case()) {
        let once = improve_policy(&c.prob, &c.pi, c.tau).unwrap();
        let twice = improve_policy(&c.prob, &once, c.tau).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn logit_map_inverts_the_softargmax(c in case()) {
        let theta = logits_from_policy(&c.prob, &c.pi).unwrap();
        let back = policy_from_logits(&c.prob, &theta).unwrap().policy;
        for s in 0..c.pi.n_states() {
            for (a, b) in c.pi.row(s).iter().zip(back.row(s)) {
                prop_assert!((a - b).abs() <= 1e-8 * a, "{} vs {}", a, b);
            }
        }
    }

    #[test]
    fn lifted_operator_matches_the_policy_operator(c in case(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let (ns, na) = c.pi.shape();
        let theta = random_logits(&mut r, ns, na, 4.0);
        let pi = policy_from_logits(&c.prob, &theta).unwrap().policy;
        let expected = improve_policy(&c.prob, &pi, c.tau).unwrap();
        let projected = project_logits(&c.prob, &theta, c.tau).unwrap();
        let got = policy_from_logits(&c.prob, &projected).unwrap().policy;
        for s in 0..ns {
            for (a, b) in expected.row(s).iter().zip(got.row(s)) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn threshold_operator_does_not_decrease_the_value(c in case()) {
        let tau = tau_star(&c.prob, c.prob.generator.divergence_bound(), c.prob.mdp.rho_min()).unwrap();
        let out = improve_policy(&c.prob, &c.pi, tau.tau).unwrap();
        let rho = c.prob.mdp.rho();
        let before = dot(&evaluate_regularized(&c.prob, &c.pi).unwrap(), rho);
        let after = dot(&evaluate_regularized(&c.prob, &out).unwrap(), rho);
        prop_assert!(after >= before - 1e-10);
    }
}

#[test]
fn threshold_examples_and_domain() {
    let mdp = envs::bandit(&[0.0, 1.0], 0.5).unwrap();
    let prob = RegularizedProblem::with_uniform_reference(mdp, GeneratorKind::Kl, 1.0).unwrap();
    // KL, ρ_min = 1, d_f = 0: [f′]⁻¹(−16/0.25) = e^{−65}; [f′]⁻¹(−4|ln ½ + 1|) is larger.
    let t = tau_star(&prob, 0.0, 1.0).unwrap();
    assert!((t.tau - (-65f64).exp()).abs() < 1e-12 * (-65f64).exp());
    assert!(!t.clamped);
    assert!(tau_star(&prob.with_lambda(0.0).unwrap(), 0.0, 1.0).is_err());
    assert!(tau_star(&prob, 0.0, 0.0).is_err());
    // Underflow is flagged rather than returned as zero.
    let tiny = tau_star(&prob.with_lambda(1e-3).unwrap(), 0.0, 1.0).unwrap();
    assert!(tiny.clamped && tiny.tau > 0.0);
    assert!(improve_policy(&prob, &Policy::uniform(1, 2), 0.3).is_err());
}
