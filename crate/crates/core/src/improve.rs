//! The improvement operator `U_τ`, its threshold `τ*`, the policy-to-logit map
//! `ϕ` and the lifted operator `T_τ = ϕ ∘ U_τ` on logits.
//!
//! `U_τ` raises every action whose ratio `π(a|s)/π_ref(a|s)` is at most `τ/2`
//! up to `π_ref(a|s)·τ` and takes the added mass from the action with the
//! largest ratio. With `τ = τ*` it never decreases `ṽ(ρ)`.

use serde::Serialize;

use crate::error::{domain, Result};
use crate::gradients::policy_from_logits;
use crate::mdp::{Policy, RegularizedProblem};
use crate::table::{Logits, Table};

/// Value substituted for a threshold that underflows to zero.
pub const TAU_UNDERFLOW: f64 = 1e-300;

/// A ratio threshold `τ ∈ (0, π̲/2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub tau: f64,
    /// Set when the computed value underflowed and was replaced by [`TAU_UNDERFLOW`].
    pub clamped: bool,
}

impl Threshold {
    pub fn new(tau: f64, pi_ref_floor: f64) -> Result<Self> {
        if !(tau > 0.0 && tau <= 0.5 * pi_ref_floor) {
            return Err(domain(
                "threshold",
                format!("tau must lie in (0, {}], got {tau}", 0.5 * pi_ref_floor),
            ));
        }
        Ok(Threshold { tau, clamped: false })
    }
}

/// `τ* = min([f′]⁻¹(−(16 + 8γλd_f)/(λ(1−γ)²ρ_min)), [f′]⁻¹(−4|f′(½)|), π̲/2)`.
pub fn tau_star(prob: &RegularizedProblem, d_f: f64, rho_min: f64) -> Result<Threshold> {
    let lambda = prob.lambda;
    if !(lambda > 0.0) {
        return Err(domain("tau_star", "temperature must be positive"));
    }
    if !(rho_min > 0.0) {
        return Err(domain("tau_star", "rho_min must be positive"));
    }
    let g = &prob.generator;
    let gamma = prob.mdp.gamma();
    let y = -(16.0 + 8.0 * gamma * lambda * d_f) / (lambda * (1.0 - gamma).powi(2) * rho_min);
    let tau = g
        .inverse_fprime(y)?
        .min(g.inverse_fprime(-4.0 * g.fp(0.5).abs())?)
        .min(0.5 * g.pi_ref_floor());
    if tau > 0.0 {
        Ok(Threshold { tau, clamped: false })
    } else {
        Ok(Threshold {
            tau: TAU_UNDERFLOW,
            clamped: true,
        })
    }
}

/// Largest `λ` for which the uniform Łojasiewicz bound is stated:
/// `4/((1−γ)²ρ_min) · min(4/|f′(ι)|, 1/|f′(½)|, 4/|f′(π̲/2)|)`, with `c/0 = ∞`.
pub fn lambda_admissible_bound(prob: &RegularizedProblem, rho_min: f64) -> f64 {
    let g = &prob.generator;
    let ratio = |c: f64, v: f64| if v == 0.0 { f64::INFINITY } else { c / v.abs() };
    let m = ratio(4.0, g.fp(g.iota()))
        .min(ratio(1.0, g.fp(0.5)))
        .min(ratio(4.0, g.fp(0.5 * g.pi_ref_floor())));
    4.0 / ((1.0 - prob.mdp.gamma()).powi(2) * rho_min) * m
}

fn check_tau(prob: &RegularizedProblem, tau: f64) -> Result<()> {
    let half = 0.5 * prob.generator.pi_ref_floor();
    if tau > 0.0 && tau <= half {
        Ok(())
    } else {
        Err(domain(
            "improve_policy",
            format!("tau must lie in (0, {half}], got {tau}"),
        ))
    }
}

/// Applies `U_τ` to one row in place; returns whether anything changed.
fn improve_row(row: &mut [f64], reference: &[f64], tau: f64) -> bool {
    let mut a_max = 0;
    let mut best = f64::NEG_INFINITY;
    for (a, (p, q)) in row.iter().zip(reference).enumerate() {
        let ratio = p / q;
        if ratio > best {
            best = ratio;
            a_max = a;
        }
    }
    let mut added = 0.0;
    for (a, (p, q)) in row.iter_mut().zip(reference).enumerate() {
        if *p / q <= 0.5 * tau {
            assert!(a != a_max, "the largest-ratio action cannot fall below the threshold");
            added += q * tau - *p;
            *p = q * tau;
        }
    }
    row[a_max] -= added;
    added != 0.0
}

pub fn improve_policy(prob: &RegularizedProblem, pi: &Policy, tau: f64) -> Result<Policy> {
    check_tau(prob, tau)?;
    let mut table = pi.table().clone();
    for s in 0..table.n_states() {
        improve_row(table.row_mut(s), prob.pi_ref.row(s), tau);
    }
    Ok(Policy::new(table).expect("U_tau preserves row sums and positivity"))
}

/// `ϕ(π)(s,a) = f′(π(a|s)/π_ref(a|s)) − f′(π(last|s)/π_ref(last|s))`.
pub fn logits_from_policy(prob: &RegularizedProblem, pi: &Policy) -> Result<Logits> {
    let (ns, na) = pi.shape();
    let g = &prob.generator;
    let mut theta = Table::zeros(ns, na);
    for s in 0..ns {
        let q = prob.pi_ref.row(s);
        let p = pi.row(s);
        if let Some(&bad) = p.iter().find(|&&v| !(v > 0.0)) {
            return Err(domain("logits_from_policy", format!("policy entry {bad} in state {s}")));
        }
        let last = g.fp(p[na - 1] / q[na - 1]);
        for a in 0..na {
            theta.set(s, a, g.fp(p[a] / q[a]) - last);
        }
    }
    Ok(theta)
}

/// `T_τ θ`: logits of `U_τ(π_θ)`. States the operator leaves untouched keep
/// their logits, which agree with `ϕ(π_θ)` up to a per-state constant.
pub fn project_logits(prob: &RegularizedProblem, theta: &Logits, tau: f64) -> Result<Logits> {
    check_tau(prob, tau)?;
    let cache = policy_from_logits(prob, theta)?;
    let g = &prob.generator;
    let mut out = theta.clone();
    let mut row = vec![0.0; theta.n_actions()];
    for s in 0..theta.n_states() {
        row.copy_from_slice(cache.policy.row(s));
        let q = prob.pi_ref.row(s);
        if improve_row(&mut row, q, tau) {
            let na = row.len();
            let last = g.fp(row[na - 1] / q[na - 1]);
            for (o, (p, qa)) in out.row_mut(s).iter_mut().zip(row.iter().zip(q)) {
                *o = g.fp(p / qa) - last;
            }
        }
    }
    Ok(out)
}
