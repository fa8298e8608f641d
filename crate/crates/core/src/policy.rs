//! Per-step acceptance policies for draft-and-verify sampling.
//!
//! Every policy reduces to the same primitive: choose a target distribution
//! `h` for the current step, then derive the acceptance probability and the
//! recover distribution from `(h, p)`:
//!
//! ```text
//!   phi_i = min{ h_i / p_i, 1 }
//!   g_i   = (h_i - p_i phi_i) / E_{x ~ p}[1 - phi_x]
//! ```
//!
//! Drafting from `p`, accepting token `n` with probability `phi_n`, and
//! resampling from `g` on rejection then emits `h` exactly, and no larger
//! acceptance probability admits a valid recover distribution.
//!
//! The available targets:
//!
//! * `sps` — `h = q`: lossless speculative sampling.
//! * `cactus` — `h` boosts the drafted token to `gamma*`, the largest mass
//!   whose two-point KL against `q(n)` stays within a budget `delta`, and
//!   rescales the remaining tokens proportionally to `q`. `gamma*` comes
//!   either from a closed-form second-order expansion (`taylor`) or from a
//!   bisection root of the binary-KL equation (`exact`).
//! * `tas` — accepts deterministically when `q(n) >= exp(-H(q) - delta)`,
//!   i.e. the cross-entropy-constrained variant; targets are point masses.
//! * `interpolation` — `h = (1 - alpha) q + alpha p`, the naive mixture
//!   baseline without a divergence guarantee.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::{entropy, Categorical};

/// Rejection mass at or below this threshold is treated as "rejection never
/// happens" and the recover distribution is left undefined.
pub const REJECTION_MASS_EPS: f64 = 1e-12;

/// Residual tolerance for the bisection in [`cactus_gamma_exact`].
pub const CACTUS_EXACT_TOL: f64 = 1e-10;

const CACTUS_EXACT_MAX_ITERS: usize = 200;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PolicyError {
    #[error("{name} must be finite, got {value}")]
    NonFinite { name: &'static str, value: f64 },
    #[error("q_n must lie in (0, 1) for the exact root, got {0}")]
    QOutOfRange(f64),
    #[error("delta must be non-negative, got {0}")]
    NegativeDelta(f64),
    #[error("alpha must lie in [0, 1], got {0}")]
    BadAlpha(f64),
    #[error("tolerance must be positive, got {0}")]
    BadTolerance(f64),
}

/// Which acceptance strategy to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Sps,
    CactusTaylor,
    CactusExact,
    Tas,
    Interpolation,
}

impl PolicyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PolicyKind::Sps => "sps",
            PolicyKind::CactusTaylor => "cactus_taylor",
            PolicyKind::CactusExact => "cactus_exact",
            PolicyKind::Tas => "tas",
            PolicyKind::Interpolation => "interpolation",
        }
    }
}

/// A policy plus its hyper-parameters. Fields not used by the chosen kind
/// are ignored.
///
/// `delta` is a KL budget in nats for the cactus policies and the additive
/// exponent slack for `tas`; `alpha` is the interpolation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub kind: PolicyKind,
    #[serde(default)]
    pub delta: f64,
    #[serde(default)]
    pub alpha: f64,
}

impl PolicyParams {
    pub fn sps() -> Self {
        Self {
            kind: PolicyKind::Sps,
            delta: 0.0,
            alpha: 0.0,
        }
    }

    pub fn cactus_taylor(delta: f64) -> Self {
        Self {
            kind: PolicyKind::CactusTaylor,
            delta,
            alpha: 0.0,
        }
    }

    pub fn cactus_exact(delta: f64) -> Self {
        Self {
            kind: PolicyKind::CactusExact,
            delta,
            alpha: 0.0,
        }
    }

    pub fn tas(delta: f64) -> Self {
        Self {
            kind: PolicyKind::Tas,
            delta,
            alpha: 0.0,
        }
    }

    pub fn interpolation(alpha: f64) -> Self {
        Self {
            kind: PolicyKind::Interpolation,
            delta: 0.0,
            alpha,
        }
    }

    /// The hyper-parameter the chosen kind actually reads.
    pub fn hyper(&self) -> f64 {
        match self.kind {
            PolicyKind::Interpolation => self.alpha,
            PolicyKind::Sps => 0.0,
            _ => self.delta,
        }
    }

    pub fn validate(&self) -> Result<(), PolicyError> {
        match self.kind {
            PolicyKind::Sps => {}
            PolicyKind::CactusTaylor | PolicyKind::CactusExact | PolicyKind::Tas => {
                if !self.delta.is_finite() {
                    return Err(PolicyError::NonFinite {
                        name: "delta",
                        value: self.delta,
                    });
                }
                if self.delta < 0.0 {
                    return Err(PolicyError::NegativeDelta(self.delta));
                }
            }
            PolicyKind::Interpolation => {
                if !self.alpha.is_finite() || !(0.0..=1.0).contains(&self.alpha) {
                    return Err(PolicyError::BadAlpha(self.alpha));
                }
            }
        }
        Ok(())
    }
}

/// The output of a policy for one drafted token: the step's target
/// distribution, the acceptance probability of the drafted token, and the
/// recover distribution (absent when rejection has no mass anywhere).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyVerdict {
    pub target_h: Categorical,
    pub accept_prob: f64,
    pub recover: Option<Categorical>,
}

/// Derives `(phi, g)` from a target `h` and drafter `p`.
///
/// `phi_i = min{h_i / p_i, 1}` with `phi_i = 1` where `p_i = 0` (such tokens
/// are never drafted, so the value is vacuous but keeps the reconstruction
/// identity well-posed). `g` is `None` when the expected rejection mass
/// `E_{x ~ p}[1 - phi_x]` is at most [`REJECTION_MASS_EPS`].
pub fn derive_phi_and_g(h: &Categorical, p: &Categorical) -> (Vec<f64>, Option<Categorical>) {
    debug_assert_eq!(h.len(), p.len());
    let len = h.len();
    let mut phi = vec![1.0; len];
    let mut residual = vec![0.0; len];
    let mut rejection_mass = 0.0;
    for i in 0..len {
        let pi = p.prob(i);
        let hi = h.prob(i);
        if pi > 0.0 {
            let f = (hi / pi).min(1.0);
            phi[i] = f;
            rejection_mass += pi * (1.0 - f);
            // (h_i - p_i phi_i) is exactly (h_i - p_i)_+ ; clamp fp dust
            residual[i] = (hi - pi * f).max(0.0);
        } else {
            residual[i] = hi;
        }
    }
    let recover = if rejection_mass > REJECTION_MASS_EPS {
        Some(Categorical::normalized(residual))
    } else {
        None
    };
    (phi, recover)
}

fn verdict_from_target(target_h: Categorical, p: &Categorical, n: usize) -> PolicyVerdict {
    let (phi, recover) = derive_phi_and_g(&target_h, p);
    PolicyVerdict {
        accept_prob: phi[n],
        target_h,
        recover,
    }
}

/// Lossless speculative sampling: the target is the verifier itself.
pub fn sps_verdict(p: &Categorical, q: &Categorical, n: usize) -> PolicyVerdict {
    verdict_from_target(q.clone(), p, n)
}

/// Closed-form bonus mass for the drafted token:
/// `min{ q_n + sqrt(2 delta q_n (1 - q_n)), 1 }`.
pub fn cactus_gamma_taylor(q_n: f64, delta: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&q_n));
    debug_assert!(delta >= 0.0);
    (q_n + (2.0 * delta * q_n * (1.0 - q_n)).sqrt()).min(1.0)
}

/// Binary KL of `(gamma, 1-gamma)` against `(q_n, 1-q_n)`; the divergence a
/// cactus target realizes against the verifier.
pub fn binary_kl(gamma: f64, q_n: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&gamma) && gamma >= q_n);
    let mut acc = 0.0;
    if gamma > 0.0 {
        acc += gamma * (gamma / q_n).ln();
    }
    if gamma < 1.0 {
        acc += (1.0 - gamma) * ((1.0 - gamma) / (1.0 - q_n)).ln();
    }
    acc
}

/// Root of `binary_kl(gamma, q_n) = delta` on `[q_n, 1)`, by bisection to a
/// residual of `tol`, or 1 when even the point mass stays within budget
/// (`ln(1/q_n) <= delta`). Monotone non-decreasing in `delta`.
pub fn cactus_gamma_exact(q_n: f64, delta: f64, tol: f64) -> Result<f64, PolicyError> {
    if !q_n.is_finite() {
        return Err(PolicyError::NonFinite {
            name: "q_n",
            value: q_n,
        });
    }
    if !delta.is_finite() {
        return Err(PolicyError::NonFinite {
            name: "delta",
            value: delta,
        });
    }
    if !(q_n > 0.0 && q_n < 1.0) {
        return Err(PolicyError::QOutOfRange(q_n));
    }
    if delta < 0.0 {
        return Err(PolicyError::NegativeDelta(delta));
    }
    if !(tol.is_finite() && tol > 0.0) {
        return Err(PolicyError::BadTolerance(tol));
    }
    if delta == 0.0 {
        return Ok(q_n);
    }
    if -q_n.ln() <= delta {
        return Ok(1.0);
    }
    let mut lo = q_n;
    let mut hi = 1.0 - 1e-12;
    if hi <= lo {
        return Ok(1.0);
    }
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..CACTUS_EXACT_MAX_ITERS {
        mid = 0.5 * (lo + hi);
        let residual = binary_kl(mid, q_n) - delta;
        if residual.abs() <= tol {
            return Ok(mid);
        }
        // binary_kl is strictly increasing on [q_n, 1]
        if residual > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(mid)
}

/// Which gamma solver the cactus policy uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CactusMode {
    Taylor,
    Exact,
}

/// Cactus: boost the drafted token to `gamma*` and rescale the rest of the
/// verifier row proportionally.
///
/// Edge cases: `q_n = 0` leaves the target at `q` (the drafted token earns
/// no bonus off the verifier's support); `q_n = 1` yields the point mass on
/// `n` regardless of mode.
pub fn cactus_verdict(
    p: &Categorical,
    q: &Categorical,
    n: usize,
    delta: f64,
    mode: CactusMode,
) -> PolicyVerdict {
    let q_n = q.prob(n);
    let target = if q_n >= 1.0 {
        Categorical::point_mass(q.len(), n).expect("n in range")
    } else if q_n == 0.0 || delta == 0.0 {
        // gamma* = q_n in both cases; the rescale factor is exactly 1
        Categorical::normalized(q.probs().to_vec())
    } else {
        let gamma = match mode {
            CactusMode::Taylor => cactus_gamma_taylor(q_n, delta),
            CactusMode::Exact => cactus_gamma_exact(q_n, delta, CACTUS_EXACT_TOL)
                .expect("inputs validated by the edge branches above"),
        };
        cactus_target(q, n, gamma)
    };
    verdict_from_target(target, p, n)
}

/// The cactus target shape: `gamma` at `n`, `q_i (1-gamma)/(1-q_n)` elsewhere.
pub fn cactus_target(q: &Categorical, n: usize, gamma: f64) -> Categorical {
    let q_n = q.prob(n);
    if q_n >= 1.0 || gamma >= 1.0 {
        return Categorical::point_mass(q.len(), n).expect("n in range");
    }
    let scale = (1.0 - gamma) / (1.0 - q_n);
    let weights: Vec<f64> = q
        .probs()
        .iter()
        .enumerate()
        .map(|(i, &qi)| if i == n { gamma } else { qi * scale })
        .collect();
    Categorical::normalized(weights)
}

/// The typical-acceptance decision: `q_n >= exp(-H(q) - delta)`.
///
/// Evaluated in log space with a 1e-12 slack so that exact ties — a uniform
/// verifier at `delta = 0` sits right on the threshold — resolve to accept
/// instead of flipping on the last ulp of the entropy sum.
pub fn tas_accepts(q: &Categorical, n: usize, delta: f64) -> bool {
    let q_n = q.prob(n);
    if q_n <= 0.0 {
        return false;
    }
    q_n.ln() + entropy(q) + delta >= -1e-12
}

/// Typical acceptance sampling, reconstructed as the cross-entropy-budget
/// optimum: accept deterministically iff `q_n >= exp(-H(q) - delta)` (see
/// [`tas_accepts`]), else fall back to the verifier's argmax (ties to the
/// lowest token id).
///
/// Targets are always point masses, so `entropy(target_h) == 0` exactly and
/// `accept_prob` is 0 or 1 for every drafted token.
pub fn tas_verdict(p: &Categorical, q: &Categorical, n: usize, delta: f64) -> PolicyVerdict {
    let target_token = if tas_accepts(q, n, delta) {
        n
    } else {
        argmax_lowest(q)
    };
    let target = Categorical::point_mass(q.len(), target_token).expect("token in range");
    verdict_from_target(target, p, n)
}

/// Argmax over probabilities, ties broken toward the lower token id.
pub fn argmax_lowest(q: &Categorical) -> usize {
    let mut best = 0;
    for (i, &v) in q.probs().iter().enumerate().skip(1) {
        if v > q.prob(best) {
            best = i;
        }
    }
    best
}

/// The naive mixture baseline: `h = (1 - alpha) q + alpha p`, independent of
/// the drafted token.
pub fn interpolation_verdict(
    p: &Categorical,
    q: &Categorical,
    n: usize,
    alpha: f64,
) -> PolicyVerdict {
    debug_assert!((0.0..=1.0).contains(&alpha));
    let weights: Vec<f64> = q
        .probs()
        .iter()
        .zip(p.probs())
        .map(|(&qi, &pi)| (1.0 - alpha) * qi + alpha * pi)
        .collect();
    verdict_from_target(Categorical::normalized(weights), p, n)
}

/// Evaluates `params` on `(p, q, n)`.
///
/// Preconditions (`params` validated, matching vocabularies, `n` in range)
/// are asserted, not returned as errors; config-level validation happens
/// before any verdict is computed.
pub fn evaluate(
    params: &PolicyParams,
    p: &Categorical,
    q: &Categorical,
    n: usize,
) -> PolicyVerdict {
    assert_eq!(p.len(), q.len(), "drafter/verifier vocabulary mismatch");
    assert!(n < p.len(), "token {n} out of range");
    debug_assert!(params.validate().is_ok());
    match params.kind {
        PolicyKind::Sps => sps_verdict(p, q, n),
        PolicyKind::CactusTaylor => cactus_verdict(p, q, n, params.delta, CactusMode::Taylor),
        PolicyKind::CactusExact => cactus_verdict(p, q, n, params.delta, CactusMode::Exact),
        PolicyKind::Tas => tas_verdict(p, q, n, params.delta),
        PolicyKind::Interpolation => interpolation_verdict(p, q, n, params.alpha),
    }
}
