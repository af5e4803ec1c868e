//! Exact and sampled gradients of the regularized value `ṽ_θ(ρ)` under the
//! f-softargmax parameterization `π_θ(·|s) = softargmax(θ(s,·), π_ref(·|s))`.
//!
//! The exact gradient for state `s` is
//! `S_θ(s) · n_θ(s) · H(w_θ(·|s)) [Q̃_θ(s,·) − λθ(s,·)]`, with `H(u) = diag(u) − uuᵀ`
//! and `n_θ(s) = d̃(s)/(1−γ)` the expected discounted number of visits to `s`.
//!
//! The sampled estimator over `B` trajectories of length `H` is
//!
//! ```text
//! (1/B) Σ_b Σ_h [ Σ_{ℓ≤h} ∇log π(a_ℓ|s_ℓ) γ^h r(s_h,a_h)
//!               − λ Σ_{ℓ≤h−1} ∇log π(a_ℓ|s_ℓ) γ^h D(s_h)
//!               − λ γ^h M_θ(s_h) ]
//! ```
//!
//! where `D(s)` is the divergence to the reference at `s` and `M_θ(s)` the
//! correction returned by [`reinforce_correction`]. It is evaluated in one
//! backward pass over returns-to-go.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::mdp::{evaluate_regularized, occupancy, Policy, RegularizedProblem, TabularMdp};
use crate::softargmax::{softargmax, SoftArgmaxResult};
use crate::table::{Logits, Table};

/// Upper limit on `B·H` for a materialized batch.
pub const MAX_BATCH_ENTRIES: usize = 10_000_000;

/// A policy together with the per-state softargmax outputs it came from.
#[derive(Debug, Clone)]
pub struct PolicyCache {
    pub policy: Policy,
    pub states: Vec<SoftArgmaxResult>,
}

pub fn policy_from_logits(prob: &RegularizedProblem, theta: &Logits) -> Result<PolicyCache> {
    let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
    if theta.shape() != (ns, na) {
        return Err(invalid(format!(
            "logits shape {:?} does not match ({ns}, {na})",
            theta.shape()
        )));
    }
    let mut table = Table::zeros(ns, na);
    let mut states = Vec::with_capacity(ns);
    for s in 0..ns {
        let r = softargmax(&prob.generator, theta.row(s), prob.pi_ref.row(s))?;
        table.row_mut(s).copy_from_slice(&r.probs);
        states.push(r);
    }
    Ok(PolicyCache {
        policy: Policy::from_trusted(table),
        states,
    })
}

/// Everything computed on the way to an exact gradient.
#[derive(Debug, Clone)]
pub struct ExactPoint {
    pub cache: PolicyCache,
    /// `ṽ_θ(s)` for every state.
    pub reg_value: Vec<f64>,
    pub gradient: Table,
}

impl ExactPoint {
    /// `ṽ_θ(ρ)`.
    pub fn value_at(&self, rho: &[f64]) -> f64 {
        crate::mdp::dot(&self.reg_value, rho)
    }
}

pub fn exact_point(prob: &RegularizedProblem, theta: &Logits) -> Result<ExactPoint> {
    let cache = policy_from_logits(prob, theta)?;
    let mdp = &prob.mdp;
    let reg_value = evaluate_regularized(prob, &cache.policy)?;
    let q = mdp.q_values(&reg_value);
    let visits = occupancy(mdp, &cache.policy, mdp.rho())?.visits();
    let mut gradient = Table::zeros(mdp.n_states(), mdp.n_actions());
    for s in 0..mdp.n_states() {
        let r = &cache.states[s];
        let coef = r.s_sum * visits[s];
        let z: Vec<f64> = q
            .row(s)
            .iter()
            .zip(theta.row(s))
            .map(|(qa, t)| qa - prob.lambda * t)
            .collect();
        let wz: f64 = r.weights.iter().zip(&z).map(|(w, z)| w * z).sum();
        for (g, (w, z)) in gradient.row_mut(s).iter_mut().zip(r.weights.iter().zip(&z)) {
            *g = coef * w * (z - wz);
        }
    }
    Ok(ExactPoint {
        cache,
        reg_value,
        gradient,
    })
}

/// `∇_θ ṽ_θ(ρ)`.
pub fn exact_gradient(prob: &RegularizedProblem, theta: &Logits) -> Result<Table> {
    Ok(exact_point(prob, theta)?.gradient)
}

/// `∂ log π(a|s) / ∂θ(s, ·)`, written into `out`.
pub fn score_row(r: &SoftArgmaxResult, a: usize, out: &mut [f64]) {
    let w = &r.weights;
    let c = r.s_sum / r.probs[a] * w[a];
    for (b, o) in out.iter_mut().enumerate() {
        *o = c * (if b == a { 1.0 } else { 0.0 } - w[b]);
    }
}

/// `∂ log π_θ(a|s) / ∂θ` as a full table; only row `s` is nonzero.
pub fn log_policy_gradient(prob: &RegularizedProblem, cache: &PolicyCache, s: usize, a: usize) -> Table {
    let mut t = Table::zeros(prob.mdp.n_states(), prob.mdp.n_actions());
    score_row(&cache.states[s], a, t.row_mut(s));
    t
}

/// `M_θ(s)_b = S w(b) (f′(u_b) − Σ_a w(a) f′(u_a))` with `u = π/π_ref`, written into `out`.
pub fn correction_row(prob: &RegularizedProblem, r: &SoftArgmaxResult, s: usize, out: &mut [f64]) {
    let g = &prob.generator;
    let q = prob.pi_ref.row(s);
    for ((o, p), qa) in out.iter_mut().zip(&r.probs).zip(q) {
        *o = g.fp(p / qa);
    }
    let centre: f64 = out.iter().zip(&r.weights).map(|(d, w)| d * w).sum();
    for (o, w) in out.iter_mut().zip(&r.weights) {
        *o = r.s_sum * w * (*o - centre);
    }
}

/// The correction vector `M_θ(s)`; only row `s` is nonzero.
pub fn reinforce_correction(prob: &RegularizedProblem, cache: &PolicyCache, s: usize) -> Table {
    let mut t = Table::zeros(prob.mdp.n_states(), prob.mdp.n_actions());
    correction_row(prob, &cache.states[s], s, t.row_mut(s));
    t
}

/// `B` trajectories of length `H`, stored flat as `states[b·H + h]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrajectoryBatch {
    pub batch_size: usize,
    pub horizon: usize,
    pub seed: u64,
    states: Vec<u32>,
    actions: Vec<u32>,
}

impl TrajectoryBatch {
    pub fn new(batch_size: usize, horizon: usize) -> Result<Self> {
        if batch_size == 0 || horizon == 0 {
            return Err(invalid("batch size and horizon must be at least 1"));
        }
        let n = batch_size
            .checked_mul(horizon)
            .filter(|&n| n <= MAX_BATCH_ENTRIES)
            .ok_or_else(|| invalid(format!("B·H must not exceed {MAX_BATCH_ENTRIES}")))?;
        Ok(TrajectoryBatch {
            batch_size,
            horizon,
            seed: 0,
            states: vec![0; n],
            actions: vec![0; n],
        })
    }

    pub fn states(&self, b: usize) -> &[u32] {
        &self.states[b * self.horizon..(b + 1) * self.horizon]
    }

    pub fn actions(&self, b: usize) -> &[u32] {
        &self.actions[b * self.horizon..(b + 1) * self.horizon]
    }
}

/// The random stream for trajectory `index` of a batch drawn with `seed`.
pub fn trajectory_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Inverse-CDF tables for drawing from `ρ`, `π` and `P`.
#[derive(Debug, Clone)]
pub struct Sampler {
    n_actions: usize,
    rho: Vec<(u32, f64)>,
    policy: Vec<f64>,
    transitions: Vec<Vec<(u32, f64)>>,
}

fn sparse_cdf(p: &[f64]) -> Vec<(u32, f64)> {
    let mut acc = 0.0;
    let mut out: Vec<(u32, f64)> = p
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, &v)| {
            acc += v;
            (i as u32, acc)
        })
        .collect();
    if let Some(last) = out.last_mut() {
        last.1 = f64::INFINITY;
    }
    out
}

#[inline]
fn draw_sparse(cdf: &[(u32, f64)], u: f64) -> u32 {
    cdf.iter()
        .find(|(_, c)| u < *c)
        .map_or(cdf[cdf.len() - 1].0, |&(i, _)| i)
}

impl Sampler {
    pub fn new(mdp: &TabularMdp) -> Self {
        let (ns, na) = (mdp.n_states(), mdp.n_actions());
        let transitions = (0..ns * na)
            .map(|i| sparse_cdf(mdp.transition_row(i / na, i % na)))
            .collect();
        Sampler {
            n_actions: na,
            rho: sparse_cdf(mdp.rho()),
            policy: vec![0.0; ns * na],
            transitions,
        }
    }

    pub fn set_policy(&mut self, pi: &Policy) {
        let na = self.n_actions;
        for (s, row) in pi.table().rows().enumerate() {
            let mut acc = 0.0;
            for (a, p) in row.iter().enumerate() {
                acc += p;
                self.policy[s * na + a] = acc;
            }
            self.policy[s * na + na - 1] = f64::INFINITY;
        }
    }

    #[inline]
    fn draw_action(&self, s: u32, u: f64) -> u32 {
        let row = &self.policy[s as usize * self.n_actions..(s as usize + 1) * self.n_actions];
        row.iter().position(|&c| u < c).unwrap_or(self.n_actions - 1) as u32
    }

    /// Fills `batch` with fresh trajectories; trajectory `b` uses `trajectory_rng(seed, b)`.
    pub fn sample_into(&self, batch: &mut TrajectoryBatch, seed: u64) {
        let h_len = batch.horizon;
        let na = self.n_actions;
        batch.seed = seed;
        for b in 0..batch.batch_size {
            let mut rng = trajectory_rng(seed, b as u64);
            let range = b * h_len..(b + 1) * h_len;
            let states = &mut batch.states[range.clone()];
            let actions = &mut batch.actions[range];
            let mut s = draw_sparse(&self.rho, rng.random());
            for h in 0..h_len {
                let a = self.draw_action(s, rng.random());
                states[h] = s;
                actions[h] = a;
                if h + 1 < h_len {
                    s = draw_sparse(&self.transitions[s as usize * na + a as usize], rng.random());
                }
            }
        }
    }
}

/// Draws `B` independent trajectories of length `H` under `pi`.
pub fn sample_batch(
    mdp: &TabularMdp,
    pi: &Policy,
    batch_size: usize,
    horizon: usize,
    seed: u64,
) -> Result<TrajectoryBatch> {
    let mut batch = TrajectoryBatch::new(batch_size, horizon)?;
    let mut sampler = Sampler::new(mdp);
    sampler.set_policy(pi);
    sampler.sample_into(&mut batch, seed);
    Ok(batch)
}

/// Per-state quantities shared by every trajectory of an estimator evaluation.
#[derive(Debug, Clone)]
pub struct Estimator {
    n_actions: usize,
    gamma: f64,
    lambda: f64,
    rewards: Vec<f64>,
    divergence: Vec<f64>,
    correction: Vec<f64>,
    /// `scores[(s·A + a)·A + b] = ∂ log π(a|s)/∂θ(s,b)`.
    scores: Vec<f64>,
    discounts: Vec<f64>,
    returns: Vec<f64>,
}

impl Estimator {
    pub fn new(prob: &RegularizedProblem, cache: &PolicyCache) -> Self {
        let (ns, na) = (prob.mdp.n_states(), prob.mdp.n_actions());
        let mut correction = vec![0.0; ns * na];
        let mut scores = vec![0.0; ns * na * na];
        for s in 0..ns {
            let r = &cache.states[s];
            correction_row(prob, r, s, &mut correction[s * na..(s + 1) * na]);
            for a in 0..na {
                let i = (s * na + a) * na;
                score_row(r, a, &mut scores[i..i + na]);
            }
        }
        Estimator {
            n_actions: na,
            gamma: prob.mdp.gamma(),
            lambda: prob.lambda,
            rewards: prob.mdp.rewards().to_vec(),
            divergence: prob.state_divergences(&cache.policy),
            correction,
            scores,
            discounts: Vec::new(),
            returns: Vec::new(),
        }
    }

    /// Adds the single-trajectory estimate to `out` (a flat `S·A` slice).
    pub fn add_trajectory(&mut self, states: &[u32], actions: &[u32], out: &mut [f64]) {
        let h_len = states.len();
        let na = self.n_actions;
        if self.discounts.len() != h_len {
            self.discounts = (0..h_len).map(|h| self.gamma.powi(h as i32)).collect();
            self.returns = vec![0.0; h_len];
        }
        // returns[ℓ] = Σ_{h≥ℓ} γ^h r_h − λ Σ_{h>ℓ} γ^h D(s_h)
        let mut reward_tail = 0.0;
        let mut div_tail = 0.0;
        for h in (0..h_len).rev() {
            let (s, a) = (states[h] as usize, actions[h] as usize);
            reward_tail += self.discounts[h] * self.rewards[s * na + a];
            self.returns[h] = reward_tail - self.lambda * div_tail;
            div_tail += self.discounts[h] * self.divergence[s];
        }
        for h in 0..h_len {
            let (s, a) = (states[h] as usize, actions[h] as usize);
            let score = &self.scores[(s * na + a) * na..(s * na + a + 1) * na];
            let corr = &self.correction[s * na..(s + 1) * na];
            let g = self.returns[h];
            let c = self.lambda * self.discounts[h];
            for ((o, sc), m) in out[s * na..(s + 1) * na].iter_mut().zip(score).zip(corr) {
                *o += sc * g - c * m;
            }
        }
    }

    /// Mean estimate over the batch.
    pub fn batch_gradient(&mut self, batch: &TrajectoryBatch, out: &mut Table) {
        out.scale(0.0);
        let data = out.as_mut_slice();
        for b in 0..batch.batch_size {
            self.add_trajectory(batch.states(b), batch.actions(b), data);
        }
        out.scale(1.0 / batch.batch_size as f64);
    }
}

/// The truncated REINFORCE-type estimate of `∇ṽ_θ(ρ)` from a batch drawn under `π_θ`.
pub fn stochastic_gradient(prob: &RegularizedProblem, theta: &Logits, batch: &TrajectoryBatch) -> Result<Table> {
    let cache = policy_from_logits(prob, theta)?;
    Ok(stochastic_gradient_cached(prob, &cache, batch))
}

pub fn stochastic_gradient_cached(prob: &RegularizedProblem, cache: &PolicyCache, batch: &TrajectoryBatch) -> Table {
    let mut out = Table::zeros(prob.mdp.n_states(), prob.mdp.n_actions());
    Estimator::new(prob, cache).batch_gradient(batch, &mut out);
    out
}
