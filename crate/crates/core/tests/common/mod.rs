//! Test fixtures and independent oracles. Nothing here calls into the library
//! code path it is used to check.

#![allow(dead_code, clippy::needless_range_loop)]

use fpg_core::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn dirichlet(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let s: f64 = x.iter().sum();
    x.into_iter().map(|v| v / s).collect()
}

pub fn normal(rng: &mut ChaCha8Rng, scale: f64) -> f64 {
    scale * rng.sample::<f64, _>(StandardNormal)
}

pub fn random_logits(rng: &mut ChaCha8Rng, ns: usize, na: usize, scale: f64) -> Logits {
    Table::from_vec(ns, na, (0..ns * na).map(|_| normal(rng, scale)).collect()).unwrap()
}

/// A row bounded below by `floor`: `floor + (1 − n·floor)·Dirichlet(1)`.
pub fn floored_row(rng: &mut ChaCha8Rng, n: usize, floor: f64) -> Vec<f64> {
    let spread = 1.0 - n as f64 * floor;
    dirichlet(rng, n).into_iter().map(|p| floor + spread * p).collect()
}

/// Random MDP plus a random reference policy bounded below by `1/(2|A|)`.
pub fn random_problem(
    rng: &mut ChaCha8Rng,
    ns: usize,
    na: usize,
    gamma: f64,
    kind: GeneratorKind,
    lambda: f64,
) -> RegularizedProblem {
    let mdp = envs::random_mdp(ns, na, gamma, rng.random(), 0.5 / ns as f64).unwrap();
    let floor = 0.5 / na as f64;
    let rows: Vec<Vec<f64>> = (0..ns).map(|_| floored_row(rng, na, floor)).collect();
    let pi_ref = Policy::from_rows(&rows).unwrap();
    RegularizedProblem::new(mdp, GeneratorSpec::new(kind, floor).unwrap(), lambda, pi_ref).unwrap()
}

pub const KINDS: [GeneratorKind; 4] = [
    GeneratorKind::Kl,
    GeneratorKind::Tsallis { alpha: 0.3 },
    GeneratorKind::Tsallis { alpha: 0.7 },
    GeneratorKind::JensenShannon,
];

// ---------------------------------------------------------------------------
// Generators, written out from their closed forms.

pub fn f_oracle(kind: GeneratorKind, u: f64) -> f64 {
    match kind {
        GeneratorKind::Kl => {
            if u == 0.0 {
                0.0
            } else {
                u * u.ln()
            }
        }
        GeneratorKind::Tsallis { alpha } => (u.powf(alpha) - alpha * u + alpha - 1.0) / (alpha * (alpha - 1.0)),
        GeneratorKind::JensenShannon => {
            let a = if u == 0.0 { 0.0 } else { u * u.ln() };
            0.5 * (a - (u + 1.0) * ((u + 1.0) / 2.0).ln())
        }
    }
}

pub fn divergence_oracle(kind: GeneratorKind, p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(p, q)| q * f_oracle(kind, p / q)).sum()
}

// ---------------------------------------------------------------------------
// Linear algebra and evaluation.

/// Gaussian elimination with partial pivoting.
pub fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let m = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= m * a[col][k];
            }
            b[row] -= m * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

/// `P^π[s][s′]`.
pub fn state_transitions(mdp: &TabularMdp, pi: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let ns = mdp.n_states();
    let mut p = vec![vec![0.0; ns]; ns];
    for s in 0..ns {
        for (a, pa) in pi[s].iter().enumerate() {
            for (t, pt) in mdp.transition_row(s, a).iter().enumerate() {
                p[s][t] += pa * pt;
            }
        }
    }
    p
}

/// Solves `(I − γP^π) v = c` directly.
pub fn solve_value(mdp: &TabularMdp, pi: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let ns = mdp.n_states();
    let p = state_transitions(mdp, pi);
    let a = (0..ns)
        .map(|s| {
            (0..ns)
                .map(|t| f64::from(u8::from(s == t)) - mdp.gamma() * p[s][t])
                .collect()
        })
        .collect();
    dense_solve(a, c.to_vec())
}

/// Fixed-point iteration `v ← c + γP^π v` until the update is below `tol`.
pub fn iterate_value(mdp: &TabularMdp, pi: &[Vec<f64>], c: &[f64], tol: f64) -> Vec<f64> {
    let p = state_transitions(mdp, pi);
    let mut v = vec![0.0; c.len()];
    loop {
        let next: Vec<f64> = (0..c.len())
            .map(|s| c[s] + mdp.gamma() * p[s].iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let diff = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0_f64, f64::max);
        v = next;
        if diff < tol {
            return v;
        }
    }
}

/// Per-state regularized reward `Σ_a π r − λ D_f(π‖π_ref)` using the oracle generator.
pub fn regularized_rewards(prob: &RegularizedProblem, pi: &[Vec<f64>]) -> Vec<f64> {
    let mdp = &prob.mdp;
    (0..mdp.n_states())
        .map(|s| {
            let r: f64 = pi[s].iter().enumerate().map(|(a, p)| p * mdp.reward(s, a)).sum();
            r - prob.lambda * divergence_oracle(prob.generator.kind(), &pi[s], prob.pi_ref.row(s))
        })
        .collect()
}

pub fn rows_of(pi: &Policy) -> Vec<Vec<f64>> {
    (0..pi.n_states()).map(|s| pi.row(s).to_vec()).collect()
}

/// `d̃(s) = (1−γ) Σ_t γ^t Pr(s_t = s)`, summed until the tail is below `tol`.
pub fn occupancy_series(mdp: &TabularMdp, pi: &[Vec<f64>], tol: f64) -> Vec<f64> {
    let p = state_transitions(mdp, pi);
    let ns = mdp.n_states();
    let gamma = mdp.gamma();
    let mut dist = mdp.rho().to_vec();
    let mut out = vec![0.0; ns];
    let mut weight = 1.0 - gamma;
    while weight > tol {
        for s in 0..ns {
            out[s] += weight * dist[s];
        }
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for t in 0..ns {
                next[t] += dist[s] * p[s][t];
            }
        }
        dist = next;
        weight *= gamma;
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---------------------------------------------------------------------------
// Gradients.

pub fn value_at(prob: &RegularizedProblem, theta: &Logits) -> f64 {
    let pi = policy_from_logits(prob, theta).unwrap().policy;
    dot(&evaluate_regularized(prob, &pi).unwrap(), prob.mdp.rho())
}

/// Central finite differences of `θ ↦ ṽ_θ(ρ)`.
pub fn fd_gradient(prob: &RegularizedProblem, theta: &Logits, h: f64) -> Table {
    let mut g = Table::zeros(theta.n_states(), theta.n_actions());
    for i in 0..theta.as_slice().len() {
        let mut plus = theta.clone();
        plus.as_mut_slice()[i] += h;
        let mut minus = theta.clone();
        minus.as_mut_slice()[i] -= h;
        g.as_mut_slice()[i] = (value_at(prob, &plus) - value_at(prob, &minus)) / (2.0 * h);
    }
    g
}

/// `max |a − b| / max |b|`.
pub fn rel_error(a: &Table, b: &Table) -> f64 {
    let diff = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0_f64, f64::max);
    diff / b.max_abs().max(1e-300)
}

/// Classical softmax policy gradient for the KL-regularized objective:
/// `π = π_ref e^θ / Z`, `∂ṽ/∂θ(s,a) = d(s)/(1−γ) · π(a|s) (A(s,a) − Σ_b π(b|s) A(s,b))`
/// with `A = r + γPṽ − λθ`.
pub fn classical_kl_gradient(
    mdp: &TabularMdp,
    pi_ref: &Policy,
    lambda: f64,
    theta: &Logits,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let gamma = mdp.gamma();
    let pi: Vec<Vec<f64>> = (0..ns)
        .map(|s| {
            let m = theta.row(s).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = (0..na)
                .map(|a| pi_ref.get(s, a) * (theta.get(s, a) - m).exp())
                .collect();
            let z: f64 = e.iter().sum();
            e.into_iter().map(|v| v / z).collect()
        })
        .collect();
    let c: Vec<f64> = (0..ns)
        .map(|s| {
            (0..na)
                .map(|a| pi[s][a] * (mdp.reward(s, a) - lambda * (pi[s][a] / pi_ref.get(s, a)).ln()))
                .sum()
        })
        .collect();
    let v = solve_value(mdp, &pi, &c);
    // d solves (I − γP^πᵀ) d = (1−γ) ρ
    let p = state_transitions(mdp, &pi);
    let at = (0..ns)
        .map(|s| (0..ns).map(|t| f64::from(u8::from(s == t)) - gamma * p[t][s]).collect())
        .collect();
    let d = dense_solve(at, mdp.rho().iter().map(|r| (1.0 - gamma) * r).collect());
    let mut grad = vec![vec![0.0; na]; ns];
    for s in 0..ns {
        let adv: Vec<f64> = (0..na)
            .map(|a| mdp.reward(s, a) + gamma * dot(mdp.transition_row(s, a), &v) - lambda * theta.get(s, a))
            .collect();
        let mean = dot(&pi[s], &adv);
        for a in 0..na {
            grad[s][a] = d[s] / (1.0 - gamma) * pi[s][a] * (adv[a] - mean);
        }
    }
    (grad, vec![dot(&v, mdp.rho())])
}

/// Exact expectation of the `H`-truncated single-trajectory estimator, by a
/// forward recursion over `p_h(s) = Pr(s_h = s)` and
/// `G_h(s) = E[Σ_{ℓ<h} ∇log π(a_ℓ|s_ℓ) 1{s_h = s}]`.
pub fn truncated_expected_gradient(prob: &RegularizedProblem, theta: &Logits, horizon: usize) -> Table {
    let mdp = &prob.mdp;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let dim = ns * na;
    let gamma = mdp.gamma();
    let lambda = prob.lambda;
    let cache = policy_from_logits(prob, theta).unwrap();
    let pi = &cache.policy;
    let div = prob.state_divergences(pi);
    let scores: Vec<Vec<Table>> = (0..ns)
        .map(|s| (0..na).map(|a| log_policy_gradient(prob, &cache, s, a)).collect())
        .collect();
    let corr: Vec<Table> = (0..ns).map(|s| reinforce_correction(prob, &cache, s)).collect();

    let mut p = mdp.rho().to_vec();
    let mut gs = vec![vec![0.0; dim]; ns];
    let mut out = vec![0.0; dim];
    let mut disc = 1.0;
    for _ in 0..horizon {
        let mut next_p = vec![0.0; ns];
        let mut next_gs = vec![vec![0.0; dim]; ns];
        for s in 0..ns {
            for i in 0..dim {
                out[i] -= disc * lambda * (gs[s][i] * div[s] + p[s] * corr[s].as_slice()[i]);
            }
            for a in 0..na {
                let pa = pi.get(s, a);
                // G_h(s, a) = π(a|s)[G_h(s) + p_h(s) ∇log π(a|s)]
                let gsa: Vec<f64> = (0..dim)
                    .map(|i| pa * (gs[s][i] + p[s] * scores[s][a].as_slice()[i]))
                    .collect();
                let r = mdp.reward(s, a);
                for i in 0..dim {
                    out[i] += disc * r * gsa[i];
                }
                for (t, pt) in mdp.transition_row(s, a).iter().enumerate() {
                    if *pt == 0.0 {
                        continue;
                    }
                    next_p[t] += p[s] * pa * pt;
                    for i in 0..dim {
                        next_gs[t][i] += pt * gsa[i];
                    }
                }
            }
        }
        p = next_p;
        gs = next_gs;
        disc *= gamma;
    }
    Table::from_vec(ns, na, out).unwrap()
}

// ---------------------------------------------------------------------------
// Simplex brute force.

fn objective(kind: GeneratorKind, nu: &[f64], x: &[f64], q: &[f64]) -> f64 {
    dot(nu, x) - divergence_oracle(kind, nu, q)
}

/// `max_ν ⟨ν, x⟩ − D_f(ν‖q)` over the grid `ν ∈ (step·ℕ)^A ∩ Δ`, for `|A| ∈ {2, 3}`.
///
/// Two actions use the full grid. Three actions start from step 10⁻² and
/// refine around the incumbent down to `step`; the objective is concave, so
/// a window of a few coarse steps contains the fine-grid maximizer.
pub fn simplex_grid_max(kind: GeneratorKind, x: &[f64], q: &[f64], step: f64) -> f64 {
    match x.len() {
        2 => {
            let n = (1.0 / step).round() as usize;
            (0..=n)
                .map(|i| {
                    let a = i as f64 / n as f64;
                    objective(kind, &[a, 1.0 - a], x, q)
                })
                .fold(f64::NEG_INFINITY, f64::max)
        }
        3 => {
            let mut h: f64 = 1e-2;
            let mut centre: (f64, f64) = (1.0 / 3.0, 1.0 / 3.0);
            let mut window: f64 = 1.0;
            loop {
                let n = (1.0 / h).round() as i64;
                let lo0 = ((centre.0 - window) / h).floor().max(0.0) as i64;
                let hi0 = (((centre.0 + window) / h).ceil() as i64).min(n);
                let lo1 = ((centre.1 - window) / h).floor().max(0.0) as i64;
                let hi1 = (((centre.1 + window) / h).ceil() as i64).min(n);
                let mut best = f64::NEG_INFINITY;
                for i in lo0..=hi0 {
                    for j in lo1..=hi1.min(n - i) {
                        let a = i as f64 / n as f64;
                        let b = j as f64 / n as f64;
                        let v = objective(kind, &[a, b, ((n - i - j) as f64 / n as f64).max(0.0)], x, q);
                        if v > best {
                            best = v;
                            centre = (a, b);
                        }
                    }
                }
                if h <= step * 1.000001 {
                    return best;
                }
                window = 4.0 * h;
                h /= 10.0;
            }
        }
        _ => panic!("grid oracle supports two or three actions"),
    }
}
