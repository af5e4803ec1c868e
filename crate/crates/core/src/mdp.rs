//! Tabular MDPs, exact (regularized) policy evaluation, discounted occupancy
//! measures and value iteration.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::divergence::{GeneratorKind, GeneratorSpec};
use crate::error::{domain, invalid, Error, Result};
use crate::softargmax::{softargmax, value_at, SoftArgmaxResult};
use crate::table::Table;

const ROW_TOL: f64 = 1e-10;

/// Default stopping tolerance for [`soft_value_iteration`] and [`value_iteration`].
pub const VI_TOL: f64 = 1e-10;

/// A finite discounted MDP.
///
/// `reward[s·A + a]`, `transition[(s·A + a)·S + s′]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    reward: Vec<f64>,
    transition: Vec<f64>,
}

/// JSON layout: nested `reward[s][a]` and `transition[s][a][s′]` arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MdpDocument {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    rho: Vec<f64>,
    reward: Vec<Vec<f64>>,
    transition: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<MdpDocument> for TabularMdp {
    type Error = Error;

    fn try_from(d: MdpDocument) -> Result<Self> {
        if d.reward.len() != d.n_states || d.transition.len() != d.n_states {
            return Err(invalid("reward/transition outer length must equal n_states"));
        }
        let mut transition = Vec::with_capacity(d.n_states * d.n_actions * d.n_states);
        for per_state in &d.transition {
            if per_state.len() != d.n_actions {
                return Err(invalid("transition[s] length must equal n_actions"));
            }
            for row in per_state {
                if row.len() != d.n_states {
                    return Err(invalid("transition[s][a] length must equal n_states"));
                }
                transition.extend_from_slice(row);
            }
        }
        if d.reward.iter().any(|r| r.len() != d.n_actions) {
            return Err(invalid("reward[s] length must equal n_actions"));
        }
        TabularMdp::new(d.n_states, d.n_actions, d.gamma, d.rho, d.reward.concat(), transition)
    }
}

impl From<TabularMdp> for MdpDocument {
    fn from(m: TabularMdp) -> Self {
        let (ns, na) = (m.n_states, m.n_actions);
        MdpDocument {
            n_states: ns,
            n_actions: na,
            gamma: m.gamma,
            reward: m.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            transition: m
                .transition
                .chunks(na * ns)
                .map(|per_state| per_state.chunks(ns).map(<[f64]>::to_vec).collect())
                .collect(),
            rho: m.rho,
        }
    }
}

impl TabularMdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rho: Vec<f64>,
        reward: Vec<f64>,
        transition: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("an MDP needs at least one state and one action"));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(domain("mdp", format!("discount must lie in [0,1), got {gamma}")));
        }
        if rho.len() != n_states
            || reward.len() != n_states * n_actions
            || transition.len() != n_states * n_actions * n_states
        {
            return Err(invalid("MDP array lengths do not match n_states/n_actions"));
        }
        if let Some(&r) = reward.iter().find(|&&r| !(0.0..=1.0).contains(&r)) {
            return Err(invalid(format!("reward {r} outside [0,1]")));
        }
        check_distribution("rho", &rho)?;
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution("transition row", row)
                .map_err(|e| invalid(format!("(s={}, a={}): {e}", i / n_actions, i % n_actions)))?;
        }
        Ok(TabularMdp {
            n_states,
            n_actions,
            gamma,
            rho,
            reward,
            transition,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn rho_min(&self) -> f64 {
        self.rho.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    /// `P(·|s, a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let i = (s * self.n_actions + a) * self.n_states;
        &self.transition[i..i + self.n_states]
    }

    /// Returns a copy with a different discount factor.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&gamma) {
            return Err(domain("mdp", format!("discount must lie in [0,1), got {gamma}")));
        }
        Ok(TabularMdp { gamma, ..self.clone() })
    }

    /// Returns a copy with a different initial distribution.
    pub fn with_rho(&self, rho: Vec<f64>) -> Result<Self> {
        if rho.len() != self.n_states {
            return Err(invalid("rho length must equal n_states"));
        }
        check_distribution("rho", &rho)?;
        Ok(TabularMdp { rho, ..self.clone() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("MDP serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Json(e.to_string()))
    }

    /// `P^π` as a dense matrix.
    fn state_kernel(&self, pi: &Policy) -> DMatrix<f64> {
        let ns = self.n_states;
        let mut p = DMatrix::zeros(ns, ns);
        for s in 0..ns {
            for (a, &pa) in pi.row(s).iter().enumerate() {
                for (t, &ptr) in self.transition_row(s, a).iter().enumerate() {
                    p[(s, t)] += pa * ptr;
                }
            }
        }
        p
    }

    /// `Q(s,a) = r(s,a) + γ Σ P(s′|s,a) v(s′)`.
    pub fn q_values(&self, v: &[f64]) -> Table {
        let mut q = Table::zeros(self.n_states, self.n_actions);
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let next: f64 = self.transition_row(s, a).iter().zip(v).map(|(p, vv)| p * vv).sum();
                q.set(s, a, self.reward(s, a) + self.gamma * next);
            }
        }
        q
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.shape() != (self.n_states, self.n_actions) {
            return Err(invalid(format!(
                "policy shape {:?} does not match MDP ({}, {})",
                pi.shape(),
                self.n_states,
                self.n_actions
            )));
        }
        Ok(())
    }
}

fn check_distribution(name: &str, v: &[f64]) -> Result<()> {
    if let Some(&bad) = v.iter().find(|&&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!("{name} has invalid entry {bad}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > ROW_TOL {
        return Err(invalid(format!("{name} sums to {s}, not 1")));
    }
    Ok(())
}

/// A row-stochastic, strictly positive `|S|×|A|` table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Policy(Table);

impl Policy {
    pub fn new(table: Table) -> Result<Self> {
        for (s, row) in table.rows().enumerate() {
            if let Some(&bad) = row.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
                return Err(invalid(format!("policy entry {bad} in state {s} outside (0,1]")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOL {
                return Err(invalid(format!("policy row {s} sums to {sum}")));
            }
        }
        Ok(Policy(table))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(Table::from_rows(rows)?)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy(Table::from_vec(n_states, n_actions, vec![1.0 / n_actions as f64; n_states * n_actions]).unwrap())
    }

    /// Wraps rows produced by the softargmax, which are positive and normalized by construction.
    pub(crate) fn from_trusted(table: Table) -> Self {
        Policy(table)
    }

    pub fn row(&self, s: usize) -> &[f64] {
        self.0.row(s)
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.0.get(s, a)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn n_states(&self) -> usize {
        self.0.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.0.n_actions()
    }

    pub fn table(&self) -> &Table {
        &self.0
    }

    pub fn min_entry(&self) -> f64 {
        self.0.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Total-variation distance `max_s ½ Σ_a |π(a|s) − π′(a|s)|`.
    pub fn tv_distance(&self, other: &Policy) -> f64 {
        self.0
            .rows()
            .zip(other.0.rows())
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// An MDP with a divergence regularizer, temperature and reference policy.
#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    pub mdp: TabularMdp,
    pub generator: GeneratorSpec,
    pub lambda: f64,
    pub pi_ref: Policy,
}

impl RegularizedProblem {
    pub fn new(mdp: TabularMdp, generator: GeneratorSpec, lambda: f64, pi_ref: Policy) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(domain(
                "regularized problem",
                format!("temperature must be ≥ 0, got {lambda}"),
            ));
        }
        mdp.check_policy(&pi_ref)?;
        let floor = generator.pi_ref_floor();
        if floor > 1.0 / mdp.n_actions() as f64 + 1e-15 {
            return Err(domain(
                "regularized problem",
                format!("pi_ref_floor {floor} exceeds 1/|A|"),
            ));
        }
        let min = pi_ref.min_entry();
        if min < floor * (1.0 - 1e-12) {
            return Err(domain(
                "regularized problem",
                format!("reference policy minimum {min} is below the floor {floor}"),
            ));
        }
        Ok(RegularizedProblem {
            mdp,
            generator,
            lambda,
            pi_ref,
        })
    }

    /// Uniform reference policy with floor `1/|A|`.
    pub fn with_uniform_reference(mdp: TabularMdp, kind: GeneratorKind, lambda: f64) -> Result<Self> {
        let na = mdp.n_actions();
        let g = GeneratorSpec::new(kind, 1.0 / na as f64)?;
        let pi_ref = Policy::uniform(mdp.n_states(), na);
        Self::new(mdp, g, lambda, pi_ref)
    }

    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.mdp.clone(), self.generator.clone(), lambda, self.pi_ref.clone())
    }

    /// `D_f(π(·|s) ‖ π_ref(·|s))` for every state.
    pub fn state_divergences(&self, pi: &Policy) -> Vec<f64> {
        (0..self.mdp.n_states())
            .map(|s| self.generator.divergence_unchecked(pi.row(s), self.pi_ref.row(s)))
            .collect()
    }
}

/// Solves `(I − γP^π) v = r` for a state-indexed right-hand side.
fn solve_bellman(mdp: &TabularMdp, pi: &Policy, rhs: Vec<f64>) -> Result<Vec<f64>> {
    let ns = mdp.n_states();
    let m = DMatrix::identity(ns, ns) - mdp.state_kernel(pi) * mdp.gamma();
    let v = m
        .lu()
        .solve(&DVector::from_vec(rhs))
        .ok_or(Error::Singular("policy evaluation"))?;
    Ok(v.iter().copied().collect())
}

fn expected_reward(mdp: &TabularMdp, pi: &Policy) -> Vec<f64> {
    (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| pi.get(s, a) * mdp.reward(s, a)).sum())
        .collect()
}

/// Unregularized value `v^π`.
pub fn evaluate(mdp: &TabularMdp, pi: &Policy) -> Result<Vec<f64>> {
    mdp.check_policy(pi)?;
    solve_bellman(mdp, pi, expected_reward(mdp, pi))
}

/// Regularized value `ṽ^π`, the solution of `ṽ = r̃^π + γ P^π ṽ` with
/// `r̃^π(s) = ⟨π(·|s), r(s,·)⟩ − λ D_f(π(·|s) ‖ π_ref(·|s))`.
pub fn evaluate_regularized(prob: &RegularizedProblem, pi: &Policy) -> Result<Vec<f64>> {
    prob.mdp.check_policy(pi)?;
    let mut rhs = expected_reward(&prob.mdp, pi);
    if prob.lambda > 0.0 {
        for (r, d) in rhs.iter_mut().zip(prob.state_divergences(pi)) {
            *r -= prob.lambda * d;
        }
    }
    solve_bellman(&prob.mdp, pi, rhs)
}

pub fn q_function(prob: &RegularizedProblem, v: &[f64]) -> Table {
    prob.mdp.q_values(v)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Discounted state occupancy of `π` started from `rho`.
#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    normalized: Vec<f64>,
    gamma: f64,
}

impl Occupancy {
    /// `d̃ = (1−γ) ρᵀ (I − γP^π)⁻¹`, a probability distribution over states.
    pub fn normalized(&self) -> &[f64] {
        &self.normalized
    }

    /// Expected discounted visit counts `E Σ_t γ^t 𝟙{s_t = s} = d̃(s)/(1−γ)`.
    pub fn visits(&self) -> Vec<f64> {
        self.normalized.iter().map(|d| d / (1.0 - self.gamma)).collect()
    }
}

pub fn occupancy(mdp: &TabularMdp, pi: &Policy, rho: &[f64]) -> Result<Occupancy> {
    mdp.check_policy(pi)?;
    if rho.len() != mdp.n_states() {
        return Err(invalid("rho length must equal n_states"));
    }
    let ns = mdp.n_states();
    let g = mdp.gamma();
    let m = (DMatrix::identity(ns, ns) - mdp.state_kernel(pi) * g).transpose();
    let rhs = DVector::from_iterator(ns, rho.iter().map(|r| (1.0 - g) * r));
    let d = m.lu().solve(&rhs).ok_or(Error::Singular("occupancy"))?;
    Ok(Occupancy {
        normalized: d.iter().copied().collect(),
        gamma: g,
    })
}

/// Result of a value-iteration run.
#[derive(Debug, Clone)]
pub struct SoftOptimum {
    pub value: Vec<f64>,
    pub policy: Policy,
    pub iterations: usize,
    pub residual: f64,
}

/// Iteration cap `⌈ln(tol(1−γ))/ln γ⌉ + 100` used when none is given.
pub fn default_max_iter(gamma: f64, tol: f64) -> usize {
    if gamma <= 0.0 {
        return 101;
    }
    ((tol * (1.0 - gamma)).ln() / gamma.ln()).ceil().max(0.0) as usize + 100
}

/// Soft value iteration `v(s) ← λ · softmax(Q_v(s,·)/λ, π_ref(·|s))`.
pub fn soft_value_iteration(prob: &RegularizedProblem, tol: f64, max_iter: Option<usize>) -> Result<SoftOptimum> {
    let lambda = prob.lambda;
    if !(lambda > 0.0) {
        return Err(domain("soft_value_iteration", "temperature must be positive"));
    }
    let mdp = &prob.mdp;
    let g = &prob.generator;
    let max_iter = max_iter.unwrap_or_else(|| default_max_iter(mdp.gamma(), tol));
    let ns = mdp.n_states();
    let mut v = vec![0.0; ns];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    let mut x = vec![0.0; mdp.n_actions()];
    while iterations < max_iter {
        iterations += 1;
        let q = mdp.q_values(&v);
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for (xa, qa) in x.iter_mut().zip(q.row(s)) {
                *xa = qa / lambda;
            }
            let r = softargmax(g, &x, prob.pi_ref.row(s))?;
            next[s] = lambda * value_at(g, &r.probs, &x, prob.pi_ref.row(s));
        }
        residual = next.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if residual < tol {
            break;
        }
    }
    if residual >= tol {
        return Err(Error::NoConvergence {
            op: "soft_value_iteration",
            iterations,
            residual,
        });
    }
    let q = mdp.q_values(&v);
    let mut policy = Table::zeros(ns, mdp.n_actions());
    for s in 0..ns {
        for (xa, qa) in x.iter_mut().zip(q.row(s)) {
            *xa = qa / lambda;
        }
        let r: SoftArgmaxResult = softargmax(g, &x, prob.pi_ref.row(s))?;
        policy.row_mut(s).copy_from_slice(&r.probs);
    }
    Ok(SoftOptimum {
        value: v,
        policy: Policy::from_trusted(policy),
        iterations,
        residual,
    })
}

/// Result of unregularized value iteration.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub value: Vec<f64>,
    /// A greedy action per state (lowest index among ties).
    pub greedy: Vec<usize>,
    pub iterations: usize,
}

/// Classical value iteration `v(s) ← max_a Q_v(s,a)`.
pub fn value_iteration(mdp: &TabularMdp, tol: f64, max_iter: Option<usize>) -> Result<Optimum> {
    let max_iter = max_iter.unwrap_or_else(|| default_max_iter(mdp.gamma(), tol));
    let mut v = vec![0.0; mdp.n_states()];
    for it in 1..=max_iter {
        let q = mdp.q_values(&v);
        let next: Vec<f64> = q
            .rows()
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let residual = next.iter().zip(&v).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        v = next;
        if residual < tol {
            let q = mdp.q_values(&v);
            let greedy = q
                .rows()
                .map(|r| {
                    let best = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    r.iter().position(|&x| x == best).unwrap_or(0)
                })
                .collect();
            return Ok(Optimum {
                value: v,
                greedy,
                iterations: it,
            });
        }
        if it == max_iter {
            return Err(Error::NoConvergence {
                op: "value_iteration",
                iterations: it,
                residual,
            });
        }
    }
    unreachable!("loop returns on its last iteration")
}
