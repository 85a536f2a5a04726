//! Adversarial attacks on the classifier: the rank-swap attack and its
//! gradient-based baselines.

pub mod config;
pub mod losses;
pub mod runner;

pub use crate::prob::{build_swap_target, kl_divergence, ProbVector};
pub use config::{
    AttackConfig, AttackKind, AttackOverrides, ClipSchedule, GmMode, NoiseInit, NormKind,
};
pub use runner::{
    attack, derive_seed, fgsm, loss_and_noise_gradient, run_iterative_attack, signed_step,
    AttackOutcome,
};
