//! Categorical distributions over a finite token vocabulary, plus the
//! divergence and entropy functionals the acceptance policies are built on.
//!
//! A [`Categorical`] is the universal currency of the crate: drafter rows,
//! verifier rows, per-token targets and recover distributions are all plain
//! probability vectors. Construction normalizes, so downstream code can rely
//! on entries in `[0, 1]` summing to one.
//!
//! All logarithms are natural; divergences and entropies are in nats. The
//! usual information-theoretic conventions `0 log 0 = 0` and
//! `0 log(0/0) = 0` apply throughout.

use rand::Rng;
use thiserror::Error;

/// Errors from distribution construction and divergence evaluation.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("need at least 2 tokens, got {0}")]
    TooFewTokens(usize),
    #[error("weight at token {index} is not finite: {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("negative weight at token {index}: {value}")]
    Negative { index: usize, value: f64 },
    #[error("all weights are zero")]
    AllZero,
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("support violation at token {token}: first argument has mass {mass} where second has zero")]
    SupportViolation { token: usize, mass: f64 },
    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },
}

/// A probability vector over token ids `0..|V|`.
///
/// Invariants: every entry is non-negative, entries sum to 1 within 1e-9,
/// and `|V| >= 2`. Values are immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Categorical {
    probs: Vec<f64>,
}

impl Categorical {
    /// Normalizes a vector of non-negative weights into a distribution.
    ///
    /// Rejects vectors that are shorter than two entries, contain a negative
    /// or non-finite weight, or are identically zero; the error names the
    /// offending index.
    pub fn from_weights(raw: &[f64]) -> Result<Self, DistError> {
        if raw.len() < 2 {
            return Err(DistError::TooFewTokens(raw.len()));
        }
        for (index, &value) in raw.iter().enumerate() {
            if !value.is_finite() {
                return Err(DistError::NonFinite { index, value });
            }
            if value < 0.0 {
                return Err(DistError::Negative { index, value });
            }
        }
        let sum: f64 = raw.iter().sum();
        if sum <= 0.0 {
            return Err(DistError::AllZero);
        }
        Ok(Self {
            probs: raw.iter().map(|w| w / sum).collect(),
        })
    }

    /// Internal constructor for weights already guaranteed valid.
    pub(crate) fn normalized(weights: Vec<f64>) -> Self {
        debug_assert!(weights.len() >= 2);
        debug_assert!(weights.iter().all(|w| w.is_finite() && *w >= 0.0));
        let sum: f64 = weights.iter().sum();
        debug_assert!(sum > 0.0);
        Self {
            probs: weights.into_iter().map(|w| w / sum).collect(),
        }
    }

    /// The distribution putting all mass on `token`.
    pub fn point_mass(vocab_size: usize, token: usize) -> Result<Self, DistError> {
        if vocab_size < 2 {
            return Err(DistError::TooFewTokens(vocab_size));
        }
        if token >= vocab_size {
            return Err(DistError::TokenOutOfRange { token, vocab_size });
        }
        let mut probs = vec![0.0; vocab_size];
        probs[token] = 1.0;
        Ok(Self { probs })
    }

    /// The uniform distribution over `vocab_size` tokens.
    pub fn uniform(vocab_size: usize) -> Result<Self, DistError> {
        if vocab_size < 2 {
            return Err(DistError::TooFewTokens(vocab_size));
        }
        Ok(Self {
            probs: vec![1.0 / vocab_size as f64; vocab_size],
        })
    }

    /// Vocabulary size `|V|`.
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    /// Always false; kept for clippy symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Probability of `token`. Panics if out of range.
    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    /// The full probability vector.
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Draws a token by inverse-CDF over the fixed token ordering.
    ///
    /// Deterministic given the rng state: one uniform variate is consumed
    /// per call.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        // Rounding left acc marginally below 1; emit the last token with mass.
        last_positive
    }
}

/// Kullback-Leibler divergence `KL(a || b)` in nats.
///
/// Requires `support(a) ⊆ support(b)`; the returned error names the first
/// token where `a` has mass but `b` does not. Returns exactly 0 when the
/// arguments are equal.
pub fn kl_divergence(a: &Categorical, b: &Categorical) -> Result<f64, DistError> {
    if a.len() != b.len() {
        return Err(DistError::DimensionMismatch(a.len(), b.len()));
    }
    let mut acc = 0.0;
    for (token, (&ai, &bi)) in a.probs().iter().zip(b.probs()).enumerate() {
        if ai > 0.0 {
            if bi <= 0.0 {
                return Err(DistError::SupportViolation { token, mass: ai });
            }
            acc += ai * (ai / bi).ln();
        }
    }
    Ok(acc)
}

/// f-divergence `D_f(a || b) = Σ_i b_i f(a_i / b_i)` for a convex generator
/// with `f(1) = 0`.
///
/// Tokens where both arguments vanish contribute nothing (`0·f(0/0) = 0`);
/// tokens where only `b` vanishes violate the support precondition. The
/// generator is evaluated at ratio 0 for tokens with `a_i = 0 < b_i`, so it
/// must be finite there (see [`generators`]).
pub fn f_divergence<F>(a: &Categorical, b: &Categorical, f: F) -> Result<f64, DistError>
where
    F: Fn(f64) -> f64,
{
    if a.len() != b.len() {
        return Err(DistError::DimensionMismatch(a.len(), b.len()));
    }
    let mut acc = 0.0;
    for (token, (&ai, &bi)) in a.probs().iter().zip(b.probs()).enumerate() {
        if bi > 0.0 {
            acc += bi * f(ai / bi);
        } else if ai > 0.0 {
            return Err(DistError::SupportViolation { token, mass: ai });
        }
    }
    Ok(acc)
}

/// Standard f-divergence generators.
pub mod generators {
    /// `f(t) = t ln t`, the KL generator; `f(0) = 0` by continuity.
    pub fn kl(t: f64) -> f64 {
        if t == 0.0 {
            0.0
        } else {
            t * t.ln()
        }
    }

    /// `f(t) = |t - 1| / 2`, the total-variation generator.
    pub fn total_variation(t: f64) -> f64 {
        0.5 * (t - 1.0).abs()
    }
}

/// Shannon entropy `H(a) = -Σ a_i ln a_i` in nats, with `0 ln 0 = 0`.
///
/// Exactly 0 for point masses (both the `0 ln 0` and `1 ln 1` terms vanish
/// in floating point as well).
pub fn entropy(a: &Categorical) -> f64 {
    let mut acc = 0.0;
    for &p in a.probs() {
        if p > 0.0 {
            acc -= p * p.ln();
        }
    }
    acc
}

/// Total-variation distance `0.5 Σ |a_i - b_i|`.
pub fn tv_distance(a: &Categorical, b: &Categorical) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    0.5 * a
        .probs()
        .iter()
        .zip(b.probs())
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
}
