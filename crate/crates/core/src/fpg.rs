//! The f-PG loop `θ_{t+1} = T_τ(θ_t + η ĝ(θ_t))` in exact and stochastic
//! modes, together with the theory constants that set its step size,
//! truncation horizon and rates.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};
use crate::gradients::{exact_point, policy_from_logits, Estimator, PolicyCache, Sampler, TrajectoryBatch};
use crate::improve::{lambda_admissible_bound, project_logits, tau_star, Threshold, TAU_UNDERFLOW};
use crate::mdp::{
    dot, evaluate, evaluate_regularized, soft_value_iteration, value_iteration, RegularizedProblem, VI_TOL,
};
use crate::table::{Logits, Table};

/// Target accuracy used for the default truncation horizon.
pub const DEFAULT_HORIZON_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Exact,
    Stochastic,
}

/// How the projection threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauChoice {
    /// `τ*` from the problem constants.
    Auto,
    Fixed(f64),
    /// No projection (ablation).
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub eta: f64,
    pub batch_size: usize,
    pub horizon: usize,
    pub iterations: usize,
    pub mode: Mode,
    pub tau: TauChoice,
    pub seed: u64,
    pub log_every: usize,
    /// Stop early once the regularized gap falls below this value (exact mode only).
    pub stop_gap: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            eta: 1e-3,
            batch_size: 16,
            horizon: 200,
            iterations: 1000,
            mode: Mode::Stochastic,
            tau: TauChoice::Auto,
            seed: 0,
            log_every: 1,
            stop_gap: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("step size must be finite and ≥ 0, got {}", self.eta)));
        }
        if self.log_every == 0 {
            return Err(invalid("log_every must be positive"));
        }
        if self.mode == Mode::Stochastic && (self.batch_size == 0 || self.horizon == 0) {
            return Err(invalid("stochastic mode needs batch_size ≥ 1 and horizon ≥ 1"));
        }
        if let TauChoice::Fixed(t) = self.tau {
            if !(t > 0.0) {
                return Err(invalid(format!("fixed tau must be positive, got {t}")));
            }
        }
        Ok(())
    }
}

/// One logged iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub reg_value: f64,
    pub value: f64,
    pub grad_norm: f64,
    pub gap: f64,
    pub min_policy_entry: f64,
    /// Seconds since the start of the run; not part of the CSV output.
    #[serde(skip)]
    pub elapsed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub rows: Vec<LogRow>,
    /// `ṽ⋆(ρ)` the gaps are measured against.
    pub optimum: f64,
    pub tau: Option<Threshold>,
    pub warnings: Vec<String>,
}

impl RunRecord {
    pub const CSV_HEADER: &'static str = "iter,reg_value,value,grad_norm,gap,min_policy_entry";

    pub fn last(&self) -> Option<&LogRow> {
        self.rows.last()
    }

    /// First logged iteration with unregularized value at least `target`.
    pub fn first_reaching(&self, target: f64) -> Option<usize> {
        self.rows.iter().find(|r| r.value >= target).map(|r| r.iter)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:e}\n",
                r.iter, r.reg_value, r.value, r.grad_norm, r.gap, r.min_policy_entry
            ));
        }
        out
    }
}

/// `ṽ⋆(ρ)`: soft value iteration for `λ > 0`, classical value iteration otherwise.
pub fn optimal_value(prob: &RegularizedProblem) -> Result<f64> {
    let rho = prob.mdp.rho();
    if prob.lambda > 0.0 {
        Ok(dot(&soft_value_iteration(prob, VI_TOL, None)?.value, rho))
    } else {
        Ok(dot(&value_iteration(&prob.mdp, VI_TOL, None)?.value, rho))
    }
}

fn resolve_tau(prob: &RegularizedProblem, choice: TauChoice, warnings: &mut Vec<String>) -> Result<Option<Threshold>> {
    match choice {
        TauChoice::Off => Ok(None),
        TauChoice::Fixed(t) => Ok(Some(Threshold::new(t, prob.generator.pi_ref_floor())?)),
        TauChoice::Auto => {
            let rho_min = prob.mdp.rho_min();
            if prob.lambda > 0.0 && rho_min > 0.0 {
                let t = tau_star(prob, prob.generator.divergence_bound(), rho_min)?;
                if t.clamped {
                    warnings.push(format!("tau* underflowed; clamped to {TAU_UNDERFLOW:e}"));
                }
                Ok(Some(t))
            } else {
                // τ* → 0 as ρ_min → 0 or λ → 0; keep the limiting threshold.
                warnings.push(format!(
                    "tau* undefined (lambda = {}, rho_min = {rho_min}); using {TAU_UNDERFLOW:e}",
                    prob.lambda
                ));
                Ok(Some(Threshold {
                    tau: TAU_UNDERFLOW,
                    clamped: true,
                }))
            }
        }
    }
}

/// SplitMix64 finalizer, used to derive per-iteration batch seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Runs f-PG from `theta0`, measuring gaps against a freshly computed optimum.
pub fn train(prob: &RegularizedProblem, cfg: &TrainConfig, theta0: &Logits) -> Result<(Logits, RunRecord)> {
    let optimum = optimal_value(prob)?;
    train_with_optimum(prob, cfg, theta0, optimum)
}

/// Runs f-PG with a known `ṽ⋆(ρ)`.
pub fn train_with_optimum(
    prob: &RegularizedProblem,
    cfg: &TrainConfig,
    theta0: &Logits,
    optimum: f64,
) -> Result<(Logits, RunRecord)> {
    cfg.validate()?;
    let mdp = &prob.mdp;
    if theta0.shape() != (mdp.n_states(), mdp.n_actions()) {
        return Err(invalid("initial logits shape does not match the MDP"));
    }
    let start = Instant::now();
    let mut warnings = Vec::new();
    let tau = resolve_tau(prob, cfg.tau, &mut warnings)?;
    let rho = mdp.rho();

    let mut theta = theta0.clone();
    let mut rows = Vec::new();
    let mut sampler = Sampler::new(mdp);
    let mut batch = match cfg.mode {
        Mode::Stochastic => Some(TrajectoryBatch::new(cfg.batch_size, cfg.horizon)?),
        Mode::Exact => None,
    };
    let mut grad = Table::zeros(mdp.n_states(), mdp.n_actions());

    for t in 0..=cfg.iterations {
        let log_now = t % cfg.log_every == 0 || t == cfg.iterations;
        let (cache, reg_value): (PolicyCache, Option<f64>) = match cfg.mode {
            Mode::Exact => {
                let p = exact_point(prob, &theta)?;
                grad = p.gradient;
                (p.cache, Some(dot(&p.reg_value, rho)))
            }
            Mode::Stochastic => {
                let cache = policy_from_logits(prob, &theta)?;
                let reg = if log_now {
                    Some(dot(&evaluate_regularized(prob, &cache.policy)?, rho))
                } else {
                    None
                };
                let batch = batch.as_mut().expect("stochastic mode allocates a batch");
                sampler.set_policy(&cache.policy);
                sampler.sample_into(batch, mix_seed(cfg.seed, t as u64));
                Estimator::new(prob, &cache).batch_gradient(batch, &mut grad);
                (cache, reg)
            }
        };
        let grad_norm = grad.norm();
        let stop = matches!((cfg.stop_gap, reg_value), (Some(s), Some(v)) if optimum - v < s);
        if log_now || stop {
            let reg_value = reg_value.expect("value is computed on logged iterations");
            rows.push(LogRow {
                iter: t,
                reg_value,
                value: dot(&evaluate(mdp, &cache.policy)?, rho),
                grad_norm,
                gap: optimum - reg_value,
                min_policy_entry: cache.policy.min_entry(),
                elapsed: start.elapsed().as_secs_f64(),
            });
        }
        if stop || t == cfg.iterations {
            break;
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite {
                op: "train",
                detail: format!(
                    "gradient at iteration {t}: |theta|_max = {:e}, min policy entry = {:e}",
                    theta.max_abs(),
                    cache.policy.min_entry()
                ),
            });
        }
        theta.add_scaled(cfg.eta, &grad);
        if let Some(tau) = tau {
            theta = project_logits(prob, &theta, tau.tau)?;
        }
    }
    Ok((
        theta,
        RunRecord {
            rows,
            optimum,
            tau,
            warnings,
        },
    ))
}

/// The constants entering the smoothness, variance, bias and Łojasiewicz bounds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConstants {
    pub omega: f64,
    pub kappa: f64,
    pub iota: f64,
    pub zeta: f64,
    pub d_f: f64,
    pub y_f: f64,
    /// Smoothness constant of `θ ↦ ṽ_θ(ρ)`.
    pub l_f: f64,
    /// Variance bound of the single-trajectory estimator.
    pub sigma_sq: f64,
    /// Bias bound of the estimator truncated at `horizon_for_beta`.
    pub beta: f64,
    pub horizon_for_beta: usize,
    /// Uniform Łojasiewicz constant after projection; needs `λ > 0` and `ρ_min > 0`.
    pub mu_bar: Option<f64>,
    pub tau_star: Option<Threshold>,
    /// Largest temperature for which `mu_bar` is stated.
    pub lambda_bound: Option<f64>,
    pub eta_default: f64,
    /// Truncation horizon for accuracy [`DEFAULT_HORIZON_EPSILON`].
    pub h_default: Option<usize>,
}

pub fn compute_constants(prob: &RegularizedProblem, horizon_for_beta: usize) -> Result<TheoryConstants> {
    let g = &prob.generator;
    let gamma = prob.mdp.gamma();
    let lambda = prob.lambda;
    let (om, ka) = (g.omega(), g.kappa());
    let (d, y) = (g.divergence_bound(), g.y_bound());
    let c = 1.0 - gamma;

    let l_f = 8.0 * om * (gamma * om + c * ka) / c.powi(3)
        + 4.0
            * lambda
            * (2.0 * gamma * gamma * om * om * d + 2.0 * gamma * c * om * (ka * d + y) + c * c * (om + 2.0 * ka * y))
            / c.powi(3);
    let sigma_sq = 12.0 / c.powi(4)
        * (om.powi(3)
            + lambda * lambda * gamma * gamma * om.powi(3) * d * d
            + lambda * lambda * c * c * om * om * y * y);
    let hb = horizon_for_beta as f64;
    let beta = 2.0 * gamma.powf(hb) * (hb + 1.0) / (c * c) * om * (2.0 + 2.0 * lambda * d + lambda * c * y);

    let rho_min = prob.mdp.rho_min();
    let (mu_bar, tau, lambda_bound) = if lambda > 0.0 && rho_min > 0.0 {
        (
            Some(mu_bar(prob, rho_min)?),
            Some(tau_star(prob, d, rho_min)?),
            Some(lambda_admissible_bound(prob, rho_min)),
        )
    } else {
        (None, None, None)
    };
    let h_default = mu_bar.and_then(|m| horizon_bound(prob, m, DEFAULT_HORIZON_EPSILON));
    Ok(TheoryConstants {
        omega: om,
        kappa: ka,
        iota: g.iota(),
        zeta: g.zeta(),
        d_f: d,
        y_f: y,
        l_f,
        sigma_sq,
        beta,
        horizon_for_beta,
        mu_bar,
        tau_star: tau,
        lambda_bound,
        eta_default: 1.0 / (2.0 * l_f),
        h_default,
    })
}

/// `μ̲_f = λ(1−γ) ρ_min² ζ² π̲² (f⋆)″(−(16 + 8γλd_f)/(λ(1−γ)²ρ_min))² / ω²`.
pub fn mu_bar(prob: &RegularizedProblem, rho_min: f64) -> Result<f64> {
    let lambda = prob.lambda;
    if !(lambda > 0.0 && rho_min > 0.0) {
        return Err(domain("mu_bar", "needs positive temperature and rho_min"));
    }
    let g = &prob.generator;
    let gamma = prob.mdp.gamma();
    let c = 1.0 - gamma;
    let y = -(16.0 + 8.0 * gamma * lambda * g.divergence_bound()) / (lambda * c * c * rho_min);
    let conj = g.conjugate_second(y)?;
    let floor = g.pi_ref_floor();
    Ok(lambda * c * rho_min.powi(2) * g.zeta().powi(2) * floor * floor * conj * conj / g.omega().powi(2))
}

/// Smallest integer `H ≥ 4/(1−γ)² + ln(216ω²/(ε μ̲ (1−γ)⁴) · [4 + 4λ²d² + λ²(1−γ)²y²])/(1−γ)`.
pub fn horizon_bound(prob: &RegularizedProblem, mu_bar: f64, epsilon: f64) -> Option<usize> {
    if !(mu_bar > 0.0 && epsilon > 0.0) {
        return None;
    }
    let g = &prob.generator;
    let c = 1.0 - prob.mdp.gamma();
    let l = prob.lambda;
    let (d, y) = (g.divergence_bound(), g.y_bound());
    let inner = 216.0 * g.omega().powi(2) / (epsilon * mu_bar * c.powi(4))
        * (4.0 + 4.0 * l * l * d * d + l * l * c * c * y * y);
    let h = 4.0 / (c * c) + inner.ln().max(0.0) / c;
    h.is_finite().then(|| h.ceil() as usize)
}

/// `μ_f(θ) = λ(1−γ) ρ_min² (ζ/ω)² min_{s,a} w_θ(a|s)²`.
pub fn loja_coefficient(prob: &RegularizedProblem, theta: &Logits) -> Result<f64> {
    let rho_min = prob.mdp.rho_min();
    if !(prob.lambda > 0.0 && rho_min > 0.0) {
        return Err(domain("loja_coefficient", "needs positive temperature and rho_min"));
    }
    let cache = policy_from_logits(prob, theta)?;
    let w_min = cache
        .states
        .iter()
        .flat_map(|r| r.weights.iter().copied())
        .fold(f64::INFINITY, f64::min);
    let g = &prob.generator;
    Ok(prob.lambda * (1.0 - prob.mdp.gamma()) * rho_min.powi(2) * (g.zeta() / g.omega()).powi(2) * w_min * w_min)
}

/// `α*(ε) = 11 / (2 ln(1/ε))`.
pub fn tsallis_alpha_star(eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(domain(
            "tsallis_alpha_star",
            format!("eps must lie in (0,1), got {eps}"),
        ));
    }
    Ok(11.0 / (2.0 * (1.0 / eps).ln()))
}

/// Step size, horizon and iteration count guaranteeing an `ε`-accurate last iterate in expectation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Schedule {
    pub eta: f64,
    pub horizon: Option<usize>,
    pub iterations: Option<f64>,
}

/// `η = min(1/(2L), εBμ̲/(18σ²))`, `T = (4/μ̲) max(2L, 18σ²/(εBμ̲)) ln(3Δ₀/ε)`.
pub fn recommend_schedule(
    prob: &RegularizedProblem,
    c: &TheoryConstants,
    epsilon: f64,
    batch_size: usize,
    initial_gap: f64,
) -> Schedule {
    let b = batch_size as f64;
    match c.mu_bar.filter(|&m| m > 0.0) {
        Some(m) => {
            let noise = 18.0 * c.sigma_sq / (epsilon * b * m);
            Schedule {
                eta: (1.0 / (2.0 * c.l_f)).min(1.0 / noise),
                horizon: horizon_bound(prob, m, epsilon),
                iterations: Some(4.0 / m * (2.0 * c.l_f).max(noise) * (3.0 * initial_gap / epsilon).ln().max(0.0)),
            }
        }
        None => Schedule {
            eta: c.eta_default,
            horizon: None,
            iterations: None,
        },
    }
}

/// One point of a two-action bandit landscape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LandscapePoint {
    pub theta1: f64,
    pub theta2: f64,
    pub reg_value: f64,
    pub grad_norm: f64,
}

/// Evaluates `ṽ_θ(ρ)` and `‖∇ṽ_θ(ρ)‖₂` on the square grid `[lo, hi]²` with the given step.
pub fn landscape(prob: &RegularizedProblem, lo: f64, hi: f64, step: f64) -> Result<Vec<LandscapePoint>> {
    if prob.mdp.n_states() != 1 || prob.mdp.n_actions() != 2 {
        return Err(invalid("landscapes are defined for one-state, two-action problems"));
    }
    if !(step > 0.0 && hi >= lo) {
        return Err(invalid("landscape grid needs step > 0 and hi ≥ lo"));
    }
    let n = ((hi - lo) / step).round() as usize + 1;
    let axis: Vec<f64> = (0..n).map(|i| lo + step * i as f64).collect();
    let mut out = Vec::with_capacity(n * n);
    for &t1 in &axis {
        for &t2 in &axis {
            let theta = Table::from_vec(1, 2, vec![t1, t2])?;
            let p = exact_point(prob, &theta)?;
            out.push(LandscapePoint {
                theta1: t1,
                theta2: t2,
                reg_value: p.value_at(prob.mdp.rho()),
                grad_norm: p.gradient.norm(),
            });
        }
    }
    Ok(out)
}

/// Share of points with gradient norm below `grad_tol` and gap above `gap_tol`.
pub fn flatness_fraction(points: &[LandscapePoint], optimum: f64, grad_tol: f64, gap_tol: f64) -> f64 {
    let flat = points
        .iter()
        .filter(|p| p.grad_norm < grad_tol && optimum - p.reg_value > gap_tol)
        .count();
    flat as f64 / points.len() as f64
}
