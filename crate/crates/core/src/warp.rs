//! Sampling-parameter warps: temperature scaling plus top-k and top-p
//! (nucleus) truncation, applied in that order and renormalized.
//!
//! Warps are applied to both drafter and verifier rows before any acceptance
//! policy sees them, mirroring how inference stacks expose "generation
//! parameters" independently of the decoding strategy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dist::Categorical;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WarpError {
    #[error("temperature must be a positive finite number, got {0}")]
    BadTemperature(f64),
    #[error("top_k must be at least 1 when enabled")]
    BadTopK,
    #[error("top_p must lie in (0, 1], got {0}")]
    BadTopP(f64),
}

/// Temperature / top-k / top-p settings. `None` disables a truncation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpParams {
    pub temperature: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
}

impl Default for WarpParams {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: None,
            top_p: None,
        }
    }
}

impl WarpParams {
    pub fn validate(&self) -> Result<(), WarpError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(WarpError::BadTemperature(self.temperature));
        }
        if self.top_k == Some(0) {
            return Err(WarpError::BadTopK);
        }
        if let Some(p) = self.top_p {
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(WarpError::BadTopP(p));
            }
        }
        Ok(())
    }

    /// True when the warp is a no-op (temperature 1, truncations disabled).
    pub fn is_identity(&self) -> bool {
        self.temperature == 1.0
            && self.top_k.is_none()
            && (self.top_p.is_none() || self.top_p == Some(1.0))
    }
}

/// Applies temperature, then top-k, then top-p, then renormalizes.
///
/// Entries outside the retained set are exactly zero. Identity parameters
/// return the input unchanged (bit-for-bit). The top-p rule keeps the
/// smallest prefix of tokens, sorted by probability descending with ties
/// broken toward lower token ids, whose cumulative mass reaches `top_p`;
/// it always retains at least the most probable token.
pub fn warp(q: &Categorical, params: &WarpParams) -> Categorical {
    debug_assert!(params.validate().is_ok());
    if params.is_identity() {
        return q.clone();
    }

    let mut weights: Vec<f64> = q.probs().to_vec();
    if params.temperature != 1.0 {
        let inv_t = 1.0 / params.temperature;
        for w in &mut weights {
            if *w > 0.0 {
                *w = w.powf(inv_t);
            }
        }
    }

    let needs_truncation =
        params.top_k.map_or(false, |k| k < weights.len()) || params.top_p.map_or(false, |p| p < 1.0);
    if needs_truncation {
        // Probability descending, ties toward the lower token id.
        let mut order: Vec<usize> = (0..weights.len()).collect();
        order.sort_by(|&a, &b| {
            weights[b]
                .partial_cmp(&weights[a])
                .expect("weights are finite")
                .then(a.cmp(&b))
        });

        let mut keep = weights.len();
        if let Some(k) = params.top_k {
            keep = keep.min(k);
        }
        if let Some(p) = params.top_p {
            if p < 1.0 {
                let total: f64 = order.iter().take(keep).map(|&i| weights[i]).sum();
                let threshold = p * total;
                let mut cum = 0.0;
                let mut nucleus = keep;
                for (rank, &i) in order.iter().take(keep).enumerate() {
                    cum += weights[i];
                    if cum >= threshold {
                        nucleus = rank + 1;
                        break;
                    }
                }
                keep = nucleus;
            }
        }
        for &i in order.iter().skip(keep) {
            weights[i] = 0.0;
        }
    }

    Categorical::normalized(weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn dist(w: &[f64]) -> Categorical {
        Categorical::from_weights(w).unwrap()
    }

    #[test]
    fn identity_params_return_input_unchanged() {
        let q = dist(&[0.5, 0.3, 0.2]);
        let out = warp(&q, &WarpParams::default());
        assert_eq!(out, q);
    }

    #[test]
    fn top_k_truncates_and_renormalizes() {
        let q = dist(&[0.5, 0.3, 0.2]);
        let params = WarpParams {
            top_k: Some(2),
            ..Default::default()
        };
        let out = warp(&q, &params);
        assert_abs_diff_eq!(out.prob(0), 0.625, epsilon = 1e-12);
        assert_abs_diff_eq!(out.prob(1), 0.375, epsilon = 1e-12);
        assert_eq!(out.prob(2), 0.0);
    }

    #[test]
    fn top_p_keeps_smallest_sufficient_prefix() {
        let q = dist(&[0.5, 0.3, 0.2]);
        let params = WarpParams {
            top_p: Some(0.5),
            ..Default::default()
        };
        let out = warp(&q, &params);
        assert_eq!(out.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn top_p_always_retains_top_token() {
        let q = dist(&[0.9, 0.05, 0.05]);
        let params = WarpParams {
            top_p: Some(1e-9),
            ..Default::default()
        };
        let out = warp(&q, &params);
        assert_eq!(out.probs(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn temperature_sharpens_and_flattens() {
        let q = dist(&[0.8, 0.2]);
        let cold = warp(
            &q,
            &WarpParams {
                temperature: 0.5,
                ..Default::default()
            },
        );
        assert!(cold.prob(0) > 0.8);
        let hot = warp(
            &q,
            &WarpParams {
                temperature: 4.0,
                ..Default::default()
            },
        );
        assert!(hot.prob(0) < 0.8);
        // zero entries stay exactly zero under temperature
        let point = dist(&[1.0, 0.0]);
        let out = warp(
            &point,
            &WarpParams {
                temperature: 0.7,
                ..Default::default()
            },
        );
        assert_eq!(out.probs(), &[1.0, 0.0]);
    }

    #[test]
    fn top_p_ties_break_toward_lower_id() {
        let q = dist(&[0.25, 0.25, 0.25, 0.25]);
        let params = WarpParams {
            top_p: Some(0.5),
            ..Default::default()
        };
        let out = warp(&q, &params);
        assert_eq!(out.probs(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn validate_rejects_bad_params() {
        let bad_t = WarpParams {
            temperature: 0.0,
            ..Default::default()
        };
        assert!(matches!(bad_t.validate(), Err(WarpError::BadTemperature(_))));
        let bad_k = WarpParams {
            top_k: Some(0),
            ..Default::default()
        };
        assert_eq!(bad_k.validate(), Err(WarpError::BadTopK));
        let bad_p = WarpParams {
            top_p: Some(1.5),
            ..Default::default()
        };
        assert!(matches!(bad_p.validate(), Err(WarpError::BadTopP(_))));
    }
}
