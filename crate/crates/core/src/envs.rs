//! Benchmark environments as [`TabularMdp`]s: bandits, NChain, DeepSea and
//! seeded random MDPs.
//!
//! Episode ends are modelled by an absorbing zero-reward state so that every
//! environment fits the infinite-horizon discounted setting.

use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::mdp::TabularMdp;

/// Discount used when a selection string does not come with one.
pub const DEFAULT_GAMMA: f64 = 0.99;

pub const FORWARD: usize = 0;
pub const BACK: usize = 1;
pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// A constructed environment and how its rewards relate to the usual convention.
#[derive(Debug, Clone, Serialize)]
pub struct Environment {
    pub name: String,
    pub mdp: TabularMdp,
    /// Constant added to every non-absorbed step reward relative to the
    /// conventional definition (DeepSea encodes its movement cost this way).
    pub step_reward_shift: f64,
    pub notes: Vec<String>,
}

pub fn bandit(rewards: &[f64], gamma: f64) -> Result<TabularMdp> {
    let na = rewards.len();
    TabularMdp::new(1, na, gamma, vec![1.0], rewards.to_vec(), vec![1.0; na])
}

/// Deterministic chain with cells `0..n` and an absorbing state `n`.
///
/// FORWARD moves one cell right; the move into cell `n−1` pays 1. Cell `n−1`
/// leads to the absorbing state. BACK returns to cell 0 and pays 0.01.
/// Starts in cell 0.
pub fn nchain(n: usize, gamma: f64) -> Result<TabularMdp> {
    if n < 2 {
        return Err(invalid("nchain needs n ≥ 2"));
    }
    let ns = n + 1;
    let absorbing = n;
    let mut reward = vec![0.0; ns * 2];
    let mut transition = vec![0.0; ns * 2 * ns];
    let mut go = |s: usize, a: usize, to: usize, r: f64| {
        reward[s * 2 + a] = r;
        transition[(s * 2 + a) * ns + to] = 1.0;
    };
    for s in 0..n - 1 {
        go(s, FORWARD, s + 1, if s + 1 == n - 1 { 1.0 } else { 0.0 });
        go(s, BACK, 0, 0.01);
    }
    for a in [FORWARD, BACK] {
        go(n - 1, a, absorbing, 0.0);
        go(absorbing, a, absorbing, 0.0);
    }
    let mut rho = vec![0.0; ns];
    rho[0] = 1.0;
    TabularMdp::new(ns, 2, gamma, rho, reward, transition)
}

/// `L × L` grid descending one row per step; state `r·L + c`, absorbing state `L²`.
///
/// LEFT/RIGHT shift the column (clamped at the walls). LEFT pays `0.01/L`,
/// RIGHT pays 0, and either action at the bottom-right cell pays 1. Leaving the
/// last row absorbs. Starts at `(0, 0)`.
pub fn deepsea(size: usize, gamma: f64) -> Result<TabularMdp> {
    if size < 2 {
        return Err(invalid("deepsea needs L ≥ 2"));
    }
    let l = size;
    let ns = l * l + 1;
    let absorbing = l * l;
    let mut reward = vec![0.0; ns * 2];
    let mut transition = vec![0.0; ns * 2 * ns];
    for r in 0..l {
        for c in 0..l {
            let s = r * l + c;
            for a in [LEFT, RIGHT] {
                let col = if a == LEFT {
                    c.saturating_sub(1)
                } else {
                    (c + 1).min(l - 1)
                };
                let next = if r + 1 == l { absorbing } else { (r + 1) * l + col };
                transition[(s * 2 + a) * ns + next] = 1.0;
                reward[s * 2 + a] = if r + 1 == l && c + 1 == l {
                    1.0
                } else if a == LEFT {
                    0.01 / l as f64
                } else {
                    0.0
                };
            }
        }
    }
    for a in [LEFT, RIGHT] {
        transition[(absorbing * 2 + a) * ns + absorbing] = 1.0;
    }
    let mut rho = vec![0.0; ns];
    rho[0] = 1.0;
    TabularMdp::new(ns, 2, gamma, rho, reward, transition)
}

/// Dirichlet(1) transition rows, uniform rewards, and `ρ = floor + (1 − S·floor)·Dirichlet(1)`.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64, rho_min_floor: f64) -> Result<TabularMdp> {
    if n_states == 0 || n_actions == 0 {
        return Err(invalid("random MDP needs at least one state and action"));
    }
    if !(rho_min_floor >= 0.0 && rho_min_floor * n_states as f64 <= 1.0) {
        return Err(invalid(format!(
            "rho floor {rho_min_floor} infeasible for {n_states} states"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = |n: usize, rng: &mut ChaCha8Rng| -> Vec<f64> {
        let x: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
        let s: f64 = x.iter().sum();
        x.into_iter().map(|v| v / s).collect()
    };
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        transition.extend(dirichlet(n_states, &mut rng));
    }
    let reward: Vec<f64> = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    let spread = 1.0 - rho_min_floor * n_states as f64;
    let rho = dirichlet(n_states, &mut rng)
        .into_iter()
        .map(|p| rho_min_floor + spread * p)
        .collect();
    TabularMdp::new(n_states, n_actions, gamma, rho, reward, transition)
}

/// A parsed environment selection string.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvSpec {
    Bandit(Vec<f64>),
    NChain(usize),
    DeepSea(usize),
    Random {
        n_states: usize,
        n_actions: usize,
        seed: u64,
    },
}

/// Parses `bandit:<r0>,<r1>,…`, `nchain:<n>`, `deepsea:<L>` and `random:<S>,<A>,<seed>`.
impl FromStr for EnvSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, args) = s
            .trim()
            .split_once(':')
            .ok_or_else(|| invalid(format!("environment {s:?} must look like kind:args")))?;
        let bad = || invalid(format!("cannot parse environment arguments in {s:?}"));
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        match kind.to_ascii_lowercase().as_str() {
            "bandit" => Ok(EnvSpec::Bandit(
                parts
                    .iter()
                    .map(|p| p.parse().map_err(|_| bad()))
                    .collect::<Result<_>>()?,
            )),
            "nchain" => Ok(EnvSpec::NChain(args.trim().parse().map_err(|_| bad())?)),
            "deepsea" => Ok(EnvSpec::DeepSea(args.trim().parse().map_err(|_| bad())?)),
            "random" => {
                if parts.len() != 3 {
                    return Err(bad());
                }
                Ok(EnvSpec::Random {
                    n_states: parts[0].parse().map_err(|_| bad())?,
                    n_actions: parts[1].parse().map_err(|_| bad())?,
                    seed: parts[2].parse().map_err(|_| bad())?,
                })
            }
            other => Err(invalid(format!("unknown environment kind {other:?}"))),
        }
    }
}

impl EnvSpec {
    pub fn build(&self, gamma: f64) -> Result<Environment> {
        let (name, mdp, shift, notes) = match self {
            EnvSpec::Bandit(r) => (format!("bandit:{}", join(r)), bandit(r, gamma)?, 0.0, vec![]),
            EnvSpec::NChain(n) => (
                format!("nchain:{n}"),
                nchain(*n, gamma)?,
                0.0,
                vec!["deterministic transitions; reward paid on entering the last cell".to_string()],
            ),
            EnvSpec::DeepSea(l) => (
                format!("deepsea:{l}"),
                deepsea(*l, gamma)?,
                0.01 / *l as f64,
                vec![format!(
                    "movement cost encoded as +{} for LEFT instead of -{} for RIGHT",
                    0.01 / *l as f64,
                    0.01 / *l as f64
                )],
            ),
            EnvSpec::Random {
                n_states,
                n_actions,
                seed,
            } => (
                format!("random:{n_states},{n_actions},{seed}"),
                random_mdp(*n_states, *n_actions, gamma, *seed, 0.5 / *n_states as f64)?,
                0.0,
                vec![],
            ),
        };
        Ok(Environment {
            name,
            mdp,
            step_reward_shift: shift,
            notes,
        })
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{evaluate, value_iteration, Policy, VI_TOL};

    #[test]
    fn bandit_values() {
        let m = bandit(&[0.0, 1.0], 0.9).unwrap();
        let v = evaluate(&m, &Policy::uniform(1, 2)).unwrap();
        assert!((v[0] - 5.0).abs() < 1e-12);
        let m0 = bandit(&[0.0, 1.0], 0.0).unwrap();
        assert!((value_iteration(&m0, VI_TOL, None).unwrap().value[0] - 1.0).abs() < 1e-12);
        assert!(bandit(&[0.0, 1.5], 0.5).is_err());
    }

    #[test]
    fn nchain_values() {
        let m = nchain(2, 0.9).unwrap();
        assert!((value_iteration(&m, VI_TOL, None).unwrap().value[0] - 1.0).abs() < 1e-9);
        let m = nchain(6, 0.9).unwrap();
        let back = Policy::from_rows(&vec![vec![1e-300, 1.0]; 7]).unwrap();
        let v = evaluate(&m, &back).unwrap();
        assert!((v[0] - 0.01 / (1.0 - 0.9)).abs() < 1e-12);
    }

    #[test]
    fn deepsea_shape_and_optimum() {
        let m = deepsea(3, 0.9).unwrap();
        assert_eq!(m.n_states(), 10);
        let opt = value_iteration(&m, VI_TOL, None).unwrap();
        assert!((opt.value[0] - 0.81).abs() < 1e-9);
        assert!(deepsea(1, 0.9).is_err());
    }

    #[test]
    fn random_mdp_is_reproducible_and_floored() {
        let a = random_mdp(4, 3, 0.9, 7, 0.1).unwrap();
        assert_eq!(a, random_mdp(4, 3, 0.9, 7, 0.1).unwrap());
        assert_ne!(a, random_mdp(4, 3, 0.9, 8, 0.1).unwrap());
        assert!(a.rho_min() >= 0.1);
        assert!(random_mdp(4, 3, 0.9, 7, 0.3).is_err());
    }

    #[test]
    fn parse_selection_strings() {
        assert_eq!(
            "bandit:0,1".parse::<EnvSpec>().unwrap(),
            EnvSpec::Bandit(vec![0.0, 1.0])
        );
        assert_eq!("nchain:10".parse::<EnvSpec>().unwrap(), EnvSpec::NChain(10));
        assert_eq!("deepsea:5".parse::<EnvSpec>().unwrap(), EnvSpec::DeepSea(5));
        assert_eq!(
            "random:3,2,9".parse::<EnvSpec>().unwrap(),
            EnvSpec::Random {
                n_states: 3,
                n_actions: 2,
                seed: 9
            }
        );
        assert!("grid:3".parse::<EnvSpec>().is_err());
        assert!("nchain:x".parse::<EnvSpec>().is_err());
        assert!("random:3,2".parse::<EnvSpec>().is_err());
    }
}
