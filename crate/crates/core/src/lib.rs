//! # speclab
//!
//! A desk-scale laboratory for draft-and-verify speculative sampling.
//!
//! Instead of real LLM pairs, seeded Markov models supply drafter/verifier
//! distribution pairs with controllable disagreement. Every acceptance
//! strategy — lossless speculative sampling, the divergence-budgeted cactus
//! policy (closed-form and exact-root variants), typical acceptance, and a
//! naive interpolation baseline — is expressed as a choice of per-step
//! target distribution, and every distributional claim about them is
//! checkable against exact brute-force enumeration and seeded Monte Carlo.
//!
//! Modules, bottom up:
//!
//! * [`dist`] — categorical distributions, divergences, entropy
//! * [`warp`] — temperature / top-k / top-p warps
//! * [`rng`] — deterministic substream derivation
//! * [`toylm`] — seeded synthetic language models
//! * [`policy`] — the acceptance strategies
//! * [`engine`] — the draft-and-verify loop and its accounting
//! * [`verify`] — exact and statistical oracles for the guarantees
//! * [`stats`] — chi-square and paired-t test statistics

pub mod dist;
pub mod engine;
pub mod policy;
pub mod rng;
pub mod stats;
pub mod toylm;
pub mod verify;
pub mod warp;

pub use dist::{entropy, f_divergence, kl_divergence, tv_distance, Categorical, DistError};
pub use engine::{
    run_sequence, run_step, single_step_empirical, BonusSource, EngineConfig, EngineError,
    RunStats, StepOutcome,
};
pub use policy::{
    cactus_gamma_exact, cactus_gamma_taylor, derive_phi_and_g, evaluate, CactusMode, PolicyError,
    PolicyKind, PolicyParams, PolicyVerdict,
};
pub use toylm::{build_verifier, derive_drafter, DrafterSpec, MarkovLM, ToyLmError};
pub use verify::{
    brute_force_h_alg, check_observation1, check_phi_optimality, check_tas_threshold,
    sweep_conservativeness, tradeoff_curve, HAlgReport, SweepPoint, TradeoffRow, VerifyError,
};
pub use warp::{warp, WarpParams};
