//! Policy optimization in tabular MDPs with f-softargmax policies and
//! f-divergence regularization.
//!
//! The regularized objective is
//! `ṽ_π(ρ) = E[Σ_t γ^t (r(s_t,a_t) − λ D_f(π(·|s_t) ‖ π_ref(·|s_t)))]`,
//! and policies are parameterized by logits through
//! `π_θ(·|s) = argmax_ν ⟨ν, θ(s,·)⟩ − D_f(ν ‖ π_ref(·|s))`.
//! With the KL generator this is the usual softmax policy with entropy-style
//! regularization; Tsallis and Jensen–Shannon generators give heavier-tailed
//! parameterizations whose gradients do not vanish as quickly.
//!
//! ```
//! use fpg_core::prelude::*;
//!
//! let mdp = envs::bandit(&[0.0, 1.0], 0.0).unwrap();
//! let prob = RegularizedProblem::with_uniform_reference(mdp, GeneratorKind::Kl, 1.0).unwrap();
//! let g = exact_gradient(&prob, &Logits::zeros(1, 2)).unwrap();
//! assert!((g.get(0, 1) - 0.25).abs() < 1e-12);
//! ```

// `!(x > 0.0)` rejects NaN on purpose; index loops mirror the formulas.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod divergence;
pub mod envs;
pub mod error;
pub mod fpg;
pub mod gradients;
pub mod improve;
pub mod mdp;
pub mod softargmax;
pub mod table;

pub use error::{Error, Result};

pub mod prelude {
    pub use crate::divergence::{GeneratorKind, GeneratorSpec};
    pub use crate::envs::{self, EnvSpec, Environment};
    pub use crate::error::{Error, Result};
    pub use crate::fpg::{
        compute_constants, loja_coefficient, train, train_with_optimum, Mode, RunRecord, TauChoice, TheoryConstants,
        TrainConfig,
    };
    pub use crate::gradients::{
        exact_gradient, exact_point, log_policy_gradient, policy_from_logits, reinforce_correction, sample_batch,
        stochastic_gradient, PolicyCache, TrajectoryBatch,
    };
    pub use crate::improve::{improve_policy, logits_from_policy, project_logits, tau_star, Threshold};
    pub use crate::mdp::{
        evaluate, evaluate_regularized, occupancy, q_function, soft_value_iteration, value_iteration, Policy,
        RegularizedProblem, TabularMdp,
    };
    pub use crate::softargmax::{softargmax, softargmax_jacobian, softmax_value, SimplexPoint, SoftArgmaxResult};
    pub use crate::table::{Logits, Table};
}
