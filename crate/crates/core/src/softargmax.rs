//! The f-softargmax `argmax_ν ⟨ν,x⟩ − D_f(ν‖q)` and its value, the f-softmax.
//!
//! The maximizer has the form `π(a) = q(a) [f′]⁻¹(x(a) − μ)` where the
//! normalizer `μ` is the unique root of `F(μ) = Σ q(a)[f′]⁻¹(x(a) − μ) − 1`.
//! `F` is strictly decreasing, and with `a*` an argmax of `x` the interval
//! `(x(a*) − f′(1/q(a*)), max x − f′(1)]` brackets the root. For KL the root
//! has the closed form `μ = ln Σ q e^x − 1`; the other generators use bisection.

use serde::Serialize;

use crate::divergence::{GeneratorKind, GeneratorSpec};
use crate::error::{domain, invalid, Error, Result};

/// Entries below this value are flushed up to it.
pub const PROB_FLOOR: f64 = 1e-300;

const ROOT_TOL: f64 = 1e-13;
const WIDTH_TOL: f64 = 1e-14;
const MAX_BISECTIONS: usize = 200;

/// A strictly positive probability vector.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty probability vector"));
        }
        if let Some(&bad) = probs.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
            return Err(invalid(format!("probability entry {bad} outside (0,1]")));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(invalid(format!("probabilities sum to {s}")));
        }
        Ok(SimplexPoint(probs))
    }

    pub fn uniform(n: usize) -> Self {
        SimplexPoint(vec![1.0 / n as f64; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for SimplexPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Output of [`softargmax`], with the curvature weights cached for gradients.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoftArgmaxResult {
    pub probs: Vec<f64>,
    pub mu: f64,
    /// `w(a) = (q(a)/f″(π(a)/q(a))) / S`.
    pub weights: Vec<f64>,
    /// `S = Σ q(a)/f″(π(a)/q(a))`.
    pub s_sum: f64,
    /// `Σ q(a) |f′(π(a)/q(a))| / f″(π(a)/q(a))`.
    pub y_sum: f64,
}

impl SoftArgmaxResult {
    /// Dense Jacobian `S (diag(w) − w wᵀ)` of the probabilities with respect to `x`.
    pub fn jacobian(&self) -> Vec<Vec<f64>> {
        let w = &self.weights;
        (0..w.len())
            .map(|a| {
                (0..w.len())
                    .map(|b| {
                        let diag = if a == b { w[a] } else { 0.0 };
                        self.s_sum * (diag - w[a] * w[b])
                    })
                    .collect()
            })
            .collect()
    }
}

/// Bracket `(lo, hi)` for the normalizer of `x` under reference `q`.
pub fn normalizer_bracket(g: &GeneratorSpec, x: &[f64], q: &[f64]) -> (f64, f64) {
    let (star, xmax) = argmax(x);
    (xmax - g.fp(1.0 / q[star]), xmax - g.fp(1.0))
}

pub fn softargmax(g: &GeneratorSpec, x: &[f64], q: &[f64]) -> Result<SoftArgmaxResult> {
    check_inputs(x, q)?;
    let mu = match g.kind() {
        GeneratorKind::Kl => kl_normalizer(x, q),
        _ => bisect_normalizer(g, x, q)?,
    };
    let mut probs: Vec<f64> = x.iter().zip(q).map(|(&xa, &qa)| qa * g.inv_fp(xa - mu)).collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p = (*p / total).max(PROB_FLOOR);
    }

    let mut weights = Vec::with_capacity(x.len());
    let mut s_sum = 0.0;
    let mut y_sum = 0.0;
    for (&p, &qa) in probs.iter().zip(q) {
        let u = p / qa;
        let c = qa / g.fpp(u);
        s_sum += c;
        y_sum += c * g.fp(u).abs();
        weights.push(c);
    }
    for w in &mut weights {
        *w /= s_sum;
    }
    if !s_sum.is_finite() || s_sum <= 0.0 {
        return Err(Error::NonFinite {
            op: "softargmax",
            detail: format!("curvature sum {s_sum}"),
        });
    }
    Ok(SoftArgmaxResult {
        probs,
        mu,
        weights,
        s_sum,
        y_sum,
    })
}

/// `max_ν ⟨ν,x⟩ − D_f(ν‖q)`.
pub fn softmax_value(g: &GeneratorSpec, x: &[f64], q: &[f64]) -> Result<f64> {
    let r = softargmax(g, x, q)?;
    Ok(value_at(g, &r.probs, x, q))
}

pub fn softargmax_jacobian(g: &GeneratorSpec, x: &[f64], q: &[f64]) -> Result<Vec<Vec<f64>>> {
    Ok(softargmax(g, x, q)?.jacobian())
}

pub(crate) fn value_at(g: &GeneratorSpec, probs: &[f64], x: &[f64], q: &[f64]) -> f64 {
    let linear: f64 = probs.iter().zip(x).map(|(p, xa)| p * xa).sum();
    linear - g.divergence_unchecked(probs, q)
}

fn check_inputs(x: &[f64], q: &[f64]) -> Result<()> {
    if x.len() != q.len() || x.is_empty() {
        return Err(invalid(format!(
            "logits and reference lengths differ or are empty ({} vs {})",
            x.len(),
            q.len()
        )));
    }
    if let Some(&bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(domain("softargmax", format!("non-finite logit {bad}")));
    }
    if let Some(&bad) = q.iter().find(|&&v| !(v > 0.0)) {
        return Err(domain("softargmax", format!("reference entry {bad} is not positive")));
    }
    Ok(())
}

fn argmax(x: &[f64]) -> (usize, f64) {
    let mut best = (0, x[0]);
    for (i, &v) in x.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn kl_normalizer(x: &[f64], q: &[f64]) -> f64 {
    let (_, xmax) = argmax(x);
    let s: f64 = x.iter().zip(q).map(|(&xa, &qa)| qa * (xa - xmax).exp()).sum();
    xmax + s.ln() - 1.0
}

fn bisect_normalizer(g: &GeneratorSpec, x: &[f64], q: &[f64]) -> Result<f64> {
    let residual = |mu: f64| -> f64 { x.iter().zip(q).map(|(&xa, &qa)| qa * g.inv_fp(xa - mu)).sum::<f64>() - 1.0 };
    let (mut lo, mut hi) = normalizer_bracket(g, x, q);
    let (_, xmax) = argmax(x);
    // Keep every x(a) − μ strictly inside the domain of [f′]⁻¹.
    let edge = xmax - g.fprime_sup();
    if lo <= edge {
        lo = edge + 1e-12;
    }

    let f_hi = residual(hi);
    if f_hi.abs() < ROOT_TOL {
        return Ok(hi);
    }
    let mut f_mid = f64::NAN;
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        f_mid = residual(mid);
        if f_mid.abs() < ROOT_TOL || hi - lo < WIDTH_TOL * mid.abs().max(1.0) || mid <= lo || mid >= hi {
            return Ok(mid);
        }
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        op: "softargmax normalizer",
        iterations: MAX_BISECTIONS,
        residual: f_mid,
    })
}
