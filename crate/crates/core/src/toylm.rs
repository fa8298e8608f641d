//! Seeded synthetic autoregressive language models.
//!
//! A [`MarkovLM`] is an order-`n` Markov model whose per-context rows are
//! drawn from a symmetric Dirichlet. A verifier model is built from a seed;
//! drafter models are derived from it with controllable disagreement
//! (tempering, uniform mixing, or an independent redraw), which makes the
//! drafter-verifier divergence a tunable experiment knob.
//!
//! Context windows are left-padded with a reserved BOS symbol that is never
//! emitted, so every prefix (including the empty one) has a well-defined
//! row. The full transition table is materialized up front, which keeps
//! lookups pure and lets verification code enumerate every context exactly.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Categorical;
use crate::rng::{substream, tags};

/// Largest allowed transition table (rows), BOS-extended alphabet included.
pub const CONTEXT_CAP: usize = 65_536;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyLmError {
    #[error("vocab_size must be at least 2, got {0}")]
    VocabTooSmall(usize),
    #[error("context space of {contexts} rows exceeds the cap of {cap}")]
    ContextSpaceOverflow { contexts: usize, cap: usize },
    #[error("context token {token} at position {position} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange {
        token: usize,
        position: usize,
        vocab_size: usize,
    },
    #[error("drafter temperature must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("mixing weight must lie in [0, 1], got {0}")]
    BadEpsilon(f64),
}

/// How a drafter is derived from the verifier.
///
/// Exactly the fields of the chosen kind exist: `tempered` reads `tau`,
/// `uniform_mixed` reads `epsilon`, `independent` reads `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DrafterSpec {
    /// Rows `p ∝ q^{1/tau}`.
    Tempered { tau: f64 },
    /// Rows `p = (1 - epsilon) q + epsilon · uniform`.
    UniformMixed { epsilon: f64 },
    /// Fresh Dirichlet rows drawn from `seed` (same concentration as the
    /// verifier).
    Independent { seed: u64 },
}

impl DrafterSpec {
    pub fn validate(&self) -> Result<(), ToyLmError> {
        match *self {
            DrafterSpec::Tempered { tau } => {
                if !(tau.is_finite() && tau > 0.0) {
                    return Err(ToyLmError::BadTau(tau));
                }
            }
            DrafterSpec::UniformMixed { epsilon } => {
                if !(epsilon.is_finite() && (0.0..=1.0).contains(&epsilon)) {
                    return Err(ToyLmError::BadEpsilon(epsilon));
                }
            }
            DrafterSpec::Independent { .. } => {}
        }
        Ok(())
    }
}

/// An order-`n` Markov model over `vocab_size` tokens with a fully
/// materialized, seed-deterministic transition table.
///
/// Immutable after construction; lookups are safe to share across threads.
#[derive(Debug, Clone)]
pub struct MarkovLM {
    order: usize,
    vocab_size: usize,
    eos_token: usize,
    seed: u64,
    concentration: f64,
    rows: Vec<Categorical>,
}

impl MarkovLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn eos_token(&self) -> usize {
        self.eos_token
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn concentration(&self) -> f64 {
        self.concentration
    }

    /// The reserved context symbol used for left-padding. Never emitted.
    pub fn bos_symbol(&self) -> usize {
        self.vocab_size
    }

    /// Number of rows in the transition table.
    pub fn num_contexts(&self) -> usize {
        self.rows.len()
    }

    /// Direct row access by table index (for exhaustive enumeration).
    pub fn row(&self, context_index: usize) -> &Categorical {
        &self.rows[context_index]
    }

    /// The next-token distribution for `context`, read from the row of its
    /// last `order` tokens (BOS-padded when the context is shorter).
    pub fn next_distribution(&self, context: &[usize]) -> Result<&Categorical, ToyLmError> {
        for (position, &token) in context.iter().enumerate() {
            if token >= self.vocab_size {
                return Err(ToyLmError::TokenOutOfRange {
                    token,
                    position,
                    vocab_size: self.vocab_size,
                });
            }
        }
        Ok(&self.rows[self.context_index(context)])
    }

    /// Table index of the window formed by the last `order` tokens of
    /// `context`, left-padded with BOS.
    fn context_index(&self, context: &[usize]) -> usize {
        let alphabet = self.vocab_size + 1;
        let bos = self.bos_symbol();
        let mut index = 0;
        for slot in 0..self.order {
            // window position `slot` counts back from the end of the context
            let symbol = if slot < context.len() {
                context[context.len() - 1 - slot]
            } else {
                bos
            };
            index = index * alphabet + symbol;
        }
        index
    }
}

fn table_size(vocab_size: usize, order: usize) -> Result<usize, ToyLmError> {
    let alphabet = vocab_size + 1;
    let mut size: usize = 1;
    for _ in 0..order {
        size = size
            .checked_mul(alphabet)
            .filter(|&s| s <= CONTEXT_CAP)
            .ok_or(ToyLmError::ContextSpaceOverflow {
                contexts: usize::MAX,
                cap: CONTEXT_CAP,
            })?;
    }
    if size > CONTEXT_CAP {
        return Err(ToyLmError::ContextSpaceOverflow {
            contexts: size,
            cap: CONTEXT_CAP,
        });
    }
    Ok(size)
}

fn dirichlet_row<R: Rng>(vocab_size: usize, concentration: f64, rng: &mut R) -> Categorical {
    let gamma = Gamma::new(concentration, 1.0).expect("positive concentration");
    loop {
        let weights: Vec<f64> = (0..vocab_size).map(|_| gamma.sample(rng)).collect();
        if weights.iter().any(|&w| w > 0.0) {
            return Categorical::normalized(weights);
        }
        // all-zero draws can only come from underflow at tiny concentrations
    }
}

/// Builds a verifier model whose rows are i.i.d. symmetric-Dirichlet draws.
///
/// Identical `(vocab_size, order, concentration, seed)` reproduce the table
/// bit-for-bit. EOS is token 0 by convention; override via
/// [`MarkovLM::with_eos_token`] if a config says otherwise.
pub fn build_verifier(
    vocab_size: usize,
    order: usize,
    concentration: f64,
    seed: u64,
) -> Result<MarkovLM, ToyLmError> {
    if vocab_size < 2 {
        return Err(ToyLmError::VocabTooSmall(vocab_size));
    }
    let n_rows = table_size(vocab_size, order)?;
    let rows = (0..n_rows)
        .map(|i| {
            let mut rng = substream(seed, &[tags::MODEL_ROW, i as u64]);
            dirichlet_row(vocab_size, concentration, &mut rng)
        })
        .collect();
    Ok(MarkovLM {
        order,
        vocab_size,
        eos_token: 0,
        seed,
        concentration,
        rows,
    })
}

impl MarkovLM {
    /// Returns the same model with a different EOS token id.
    pub fn with_eos_token(mut self, eos_token: usize) -> Result<Self, ToyLmError> {
        if eos_token >= self.vocab_size {
            return Err(ToyLmError::TokenOutOfRange {
                token: eos_token,
                position: 0,
                vocab_size: self.vocab_size,
            });
        }
        self.eos_token = eos_token;
        Ok(self)
    }
}

/// Derives a drafter from `verifier` row by row according to `spec`.
pub fn derive_drafter(verifier: &MarkovLM, spec: &DrafterSpec) -> Result<MarkovLM, ToyLmError> {
    spec.validate()?;
    let vocab = verifier.vocab_size;
    let rows: Vec<Categorical> = match *spec {
        DrafterSpec::Tempered { tau } => {
            if tau == 1.0 {
                verifier.rows.clone()
            } else {
                let inv = 1.0 / tau;
                verifier
                    .rows
                    .iter()
                    .map(|row| {
                        let weights: Vec<f64> = row
                            .probs()
                            .iter()
                            .map(|&q| if q > 0.0 { q.powf(inv) } else { 0.0 })
                            .collect();
                        Categorical::normalized(weights)
                    })
                    .collect()
            }
        }
        DrafterSpec::UniformMixed { epsilon } => {
            if epsilon == 0.0 {
                verifier.rows.clone()
            } else {
                let u = epsilon / vocab as f64;
                verifier
                    .rows
                    .iter()
                    .map(|row| {
                        let weights: Vec<f64> =
                            row.probs().iter().map(|&q| (1.0 - epsilon) * q + u).collect();
                        Categorical::normalized(weights)
                    })
                    .collect()
            }
        }
        DrafterSpec::Independent { seed } => {
            return build_verifier(vocab, verifier.order, verifier.concentration, seed)
                .and_then(|m| m.with_eos_token(verifier.eos_token));
        }
    };
    Ok(MarkovLM {
        order: verifier.order,
        vocab_size: vocab,
        eos_token: verifier.eos_token,
        seed: verifier.seed,
        concentration: verifier.concentration,
        rows,
    })
}
