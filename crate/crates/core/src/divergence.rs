//! f-divergence generators and the divergence `D_f(p‖q) = Σ q f(p/q)`.
//!
//! Three generators are supported:
//!
//! | kind | f(u) | f′(u) | f(0) |
//! |------|------|-------|------|
//! | KL | u ln u | ln u + 1 | 0 |
//! | Tsallis(α) | (u^α − αu + α − 1)/(α(α−1)) | (u^{α−1} − 1)/(α−1) | 1/α |
//! | Jensen–Shannon | ½(u ln u − (u+1) ln((u+1)/2)) | ½ ln(2u/(u+1)) | ½ ln 2 |
//!
//! A [`GeneratorSpec`] also carries the regularity constants `ω`, `κ`, `ι`
//! computed for a reference-policy floor `π̲`, together with the bounds
//! `d_f`, `y_f` and `ζ_f` used by the smoothness and Łojasiewicz constants.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{domain, invalid, Error, Result};

/// Tolerance on `Σ p = 1` accepted by [`GeneratorSpec::divergence`].
pub const NORMALIZATION_TOL: f64 = 1e-12;

const JS_GRID_POINTS: usize = 100_000;
const JS_GRID_LOW: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    Kl,
    Tsallis { alpha: f64 },
    JensenShannon,
}

impl GeneratorKind {
    pub fn tsallis(alpha: f64) -> Self {
        GeneratorKind::Tsallis { alpha }
    }

    fn check(&self) -> Result<()> {
        if let GeneratorKind::Tsallis { alpha } = *self {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(domain("tsallis", format!("alpha must lie in (0,1), got {alpha}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for GeneratorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorKind::Kl => write!(f, "kl"),
            GeneratorKind::Tsallis { alpha } => write!(f, "tsallis:{alpha}"),
            GeneratorKind::JensenShannon => write!(f, "js"),
        }
    }
}

/// Parses the tags `kl`, `tsallis:<alpha>` and `js`.
impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let kind = match s.to_ascii_lowercase().as_str() {
            "kl" => GeneratorKind::Kl,
            "js" => GeneratorKind::JensenShannon,
            other => {
                let alpha = other
                    .strip_prefix("tsallis:")
                    .ok_or_else(|| invalid(format!("unknown generator tag {s:?}")))?;
                let alpha: f64 = alpha
                    .parse()
                    .map_err(|_| invalid(format!("bad tsallis alpha in {s:?}")))?;
                GeneratorKind::Tsallis { alpha }
            }
        };
        kind.check()?;
        Ok(kind)
    }
}

/// A divergence generator together with its regularity constants.
///
/// Immutable after construction. The `*_raw` style helpers used by the hot
/// loops elsewhere in the crate skip argument checks; the public methods
/// validate their inputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GeneratorSpec {
    kind: GeneratorKind,
    omega: f64,
    kappa: f64,
    iota: f64,
    pi_ref_floor: f64,
    d_bound: f64,
    y_bound: f64,
    zeta: f64,
}

impl GeneratorSpec {
    /// Builds the generator and computes its constants for the floor `π̲`.
    pub fn new(kind: GeneratorKind, pi_ref_floor: f64) -> Result<Self> {
        kind.check()?;
        if !(pi_ref_floor > 0.0 && pi_ref_floor <= 1.0) {
            return Err(domain(
                "generator",
                format!("pi_ref_floor must lie in (0,1], got {pi_ref_floor}"),
            ));
        }
        let log_floor = pi_ref_floor.ln().abs();
        let mut g = GeneratorSpec {
            kind,
            omega: 1.0,
            kappa: 1.0,
            iota: 1.0,
            pi_ref_floor,
            d_bound: 0.0,
            y_bound: 0.0,
            zeta: 1.0,
        };
        match kind {
            GeneratorKind::Kl => {
                g.d_bound = log_floor;
                g.y_bound = 1.0 + 2.0 * log_floor;
            }
            GeneratorKind::Tsallis { alpha } => {
                g.omega = pi_ref_floor.powf(alpha - 1.0);
                g.kappa = 2.0 * g.omega;
                g.d_bound = 4.0 * log_floor / (alpha * alpha);
                g.y_bound = 4.0 * log_floor;
            }
            GeneratorKind::JensenShannon => {
                let u_max = 1.0 / pi_ref_floor;
                let grid = log_grid(JS_GRID_LOW, u_max, JS_GRID_POINTS);
                g.omega = grid.iter().map(|&u| 1.0 / (u * g.fpp(u))).fold(0.0, f64::max);
                g.kappa = grid
                    .iter()
                    .map(|&u| (g.fppp(u) / (g.fpp(u) * g.fpp(u))).abs())
                    .fold(0.0, f64::max);
                // Σ q·2u(u+1) = 2(Σ ν²/q + 1) ≥ 4 by Cauchy–Schwarz, with equality at ν = q.
                g.zeta = 4.0;
                g.d_bound = js_divergence_bound(&g, pi_ref_floor);
                g.y_bound = js_y_bound(&g, u_max);
            }
        }
        Ok(g)
    }

    pub fn kl(pi_ref_floor: f64) -> Result<Self> {
        Self::new(GeneratorKind::Kl, pi_ref_floor)
    }

    pub fn tsallis(alpha: f64, pi_ref_floor: f64) -> Result<Self> {
        Self::new(GeneratorKind::Tsallis { alpha }, pi_ref_floor)
    }

    pub fn jensen_shannon(pi_ref_floor: f64) -> Result<Self> {
        Self::new(GeneratorKind::JensenShannon, pi_ref_floor)
    }

    pub fn kind(&self) -> GeneratorKind {
        self.kind
    }

    /// Upper bound on `1/(u f″(u))` over `(0, 1/π̲]`.
    pub fn omega(&self) -> f64 {
        self.omega
    }

    /// Upper bound on `|f‴(u)/f″(u)²|` over `(0, 1/π̲]`.
    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Point up to which `f″` is decreasing.
    pub fn iota(&self) -> f64 {
        self.iota
    }

    pub fn pi_ref_floor(&self) -> f64 {
        self.pi_ref_floor
    }

    /// `d_f`: an upper bound on `D_f(ν‖q)` over the simplex, for any `q ≥ π̲`.
    pub fn divergence_bound(&self) -> f64 {
        self.d_bound
    }

    /// `y_f`: an upper bound on `Σ q |f′(ν/q)| / f″(ν/q)`.
    pub fn y_bound(&self) -> f64 {
        self.y_bound
    }

    /// `ζ_f`: a lower bound on `Σ q / f″(ν/q)`.
    pub fn zeta(&self) -> f64 {
        self.zeta
    }

    /// Analytic limit `f(0⁺)`.
    pub fn f_at_zero(&self) -> f64 {
        match self.kind {
            GeneratorKind::Kl => 0.0,
            GeneratorKind::Tsallis { alpha } => 1.0 / alpha,
            GeneratorKind::JensenShannon => 0.5 * std::f64::consts::LN_2,
        }
    }

    /// Supremum of the image of `f′`, i.e. the open upper end of the domain
    /// of `[f′]⁻¹`. Infinite for KL.
    pub fn fprime_sup(&self) -> f64 {
        match self.kind {
            GeneratorKind::Kl => f64::INFINITY,
            GeneratorKind::Tsallis { alpha } => 1.0 / (1.0 - alpha),
            GeneratorKind::JensenShannon => 0.5 * std::f64::consts::LN_2,
        }
    }

    pub fn f_value(&self, u: f64) -> Result<f64> {
        check_positive("f_value", u)?;
        Ok(self.f(u))
    }

    pub fn f_prime(&self, u: f64) -> Result<f64> {
        check_positive("f_prime", u)?;
        Ok(self.fp(u))
    }

    pub fn f_second(&self, u: f64) -> Result<f64> {
        check_positive("f_second", u)?;
        Ok(self.fpp(u))
    }

    pub fn f_third(&self, u: f64) -> Result<f64> {
        check_positive("f_third", u)?;
        Ok(self.fppp(u))
    }

    pub fn inverse_fprime(&self, y: f64) -> Result<f64> {
        self.check_dual("inverse_fprime", y)?;
        Ok(self.inv_fp(y))
    }

    /// `(f⋆)″(y) = 1 / f″([f′]⁻¹(y))`.
    pub fn conjugate_second(&self, y: f64) -> Result<f64> {
        self.check_dual("conjugate_second", y)?;
        Ok(self.conj_pp(y))
    }

    /// `Σ q(a) f(p(a)/q(a))`, using `f(0)` for zero entries of `p`.
    pub fn divergence(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        if p.len() != q.len() || p.is_empty() {
            return Err(invalid(format!(
                "divergence needs equal non-empty lengths, got {} and {}",
                p.len(),
                q.len()
            )));
        }
        if let Some(&bad) = q.iter().find(|&&v| !(v > 0.0)) {
            return Err(domain("divergence", format!("reference entry {bad} is not positive")));
        }
        if let Some(&bad) = p.iter().find(|&&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(invalid(format!("distribution entry {bad} is negative or not finite")));
        }
        for (name, v) in [("p", p), ("q", q)] {
            let s: f64 = v.iter().sum();
            if (s - 1.0).abs() > NORMALIZATION_TOL {
                return Err(invalid(format!("{name} sums to {s}, not 1")));
            }
        }
        Ok(self.divergence_unchecked(p, q))
    }

    pub(crate) fn divergence_unchecked(&self, p: &[f64], q: &[f64]) -> f64 {
        let f0 = self.f_at_zero();
        p.iter()
            .zip(q)
            .map(|(&pa, &qa)| if pa > 0.0 { qa * self.f(pa / qa) } else { qa * f0 })
            .sum()
    }

    fn check_dual(&self, op: &'static str, y: f64) -> Result<()> {
        if y.is_nan() {
            return Err(domain(op, "argument is NaN"));
        }
        let sup = self.fprime_sup();
        if y >= sup {
            return Err(domain(op, format!("argument {y} must be below {sup}")));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn f(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => u * u.ln(),
            GeneratorKind::Tsallis { alpha } => (u.powf(alpha) - alpha * u + alpha - 1.0) / (alpha * (alpha - 1.0)),
            GeneratorKind::JensenShannon => 0.5 * (u * u.ln() - (u + 1.0) * ((u + 1.0) / 2.0).ln()),
        }
    }

    #[inline]
    pub(crate) fn fp(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => u.ln() + 1.0,
            GeneratorKind::Tsallis { alpha } => (u.powf(alpha - 1.0) - 1.0) / (alpha - 1.0),
            GeneratorKind::JensenShannon => 0.5 * (2.0 * u / (u + 1.0)).ln(),
        }
    }

    #[inline]
    pub(crate) fn fpp(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => 1.0 / u,
            GeneratorKind::Tsallis { alpha } => u.powf(alpha - 2.0),
            GeneratorKind::JensenShannon => 0.5 / (u * (u + 1.0)),
        }
    }

    #[inline]
    pub(crate) fn fppp(&self, u: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => -1.0 / (u * u),
            GeneratorKind::Tsallis { alpha } => (alpha - 2.0) * u.powf(alpha - 3.0),
            GeneratorKind::JensenShannon => {
                let m = u * (u + 1.0);
                -0.5 * (2.0 * u + 1.0) / (m * m)
            }
        }
    }

    #[inline]
    pub(crate) fn inv_fp(&self, y: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => (y - 1.0).exp(),
            GeneratorKind::Tsallis { alpha } => (1.0 + (alpha - 1.0) * y).powf(1.0 / (alpha - 1.0)),
            GeneratorKind::JensenShannon => {
                let e = (2.0 * y).exp();
                e / (2.0 - e)
            }
        }
    }

    #[inline]
    pub(crate) fn conj_pp(&self, y: f64) -> f64 {
        match self.kind {
            GeneratorKind::Kl => (y - 1.0).exp(),
            GeneratorKind::Tsallis { alpha } => self.inv_fp(y).powf(2.0 - alpha),
            GeneratorKind::JensenShannon => {
                let u = self.inv_fp(y);
                2.0 * u * (u + 1.0)
            }
        }
    }
}

fn check_positive(op: &'static str, u: f64) -> Result<()> {
    if u > 0.0 && u.is_finite() {
        Ok(())
    } else {
        Err(domain(op, format!("argument must be positive and finite, got {u}")))
    }
}

/// `n` log-spaced points from `lo` to `hi`, both included.
fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = (lo.ln(), hi.ln());
    let mut v: Vec<f64> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect();
    v[n - 1] = hi;
    v
}

/// Largest vertex divergence `q f(1/q) + (1−q) f(0)` over `q ∈ [π̲, 1]`.
/// The divergence is convex in `ν`, so its simplex maximum sits at a vertex.
fn js_divergence_bound(g: &GeneratorSpec, floor: f64) -> f64 {
    let f0 = g.f_at_zero();
    (0..=JS_GRID_POINTS)
        .map(|i| floor + (1.0 - floor) * i as f64 / JS_GRID_POINTS as f64)
        .map(|q| q * g.f(1.0 / q) + (1.0 - q) * f0)
        .fold(0.0, f64::max)
}

/// Splits `Σ q h(u)` with `h(u) = u(u+1)|ln(2u/(u+1))|` into entries with
/// `u ≤ 1` (weights `q` sum to at most 1) and `u ≥ 1` (rewritten as `ν (u+1)|…|`,
/// weights `ν` sum to at most 1), then bounds each part by its grid maximum.
fn js_y_bound(g: &GeneratorSpec, u_max: f64) -> f64 {
    let term = |u: f64| g.fp(u).abs() / g.fpp(u);
    let low = log_grid(JS_GRID_LOW, 1.0, JS_GRID_POINTS)
        .into_iter()
        .map(term)
        .fold(0.0, f64::max);
    let high = (0..=JS_GRID_POINTS)
        .map(|i| 1.0 + (u_max - 1.0) * i as f64 / JS_GRID_POINTS as f64)
        .map(|u| term(u) / u)
        .fold(0.0, f64::max);
    low + high
}
