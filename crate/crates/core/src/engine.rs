//! The draft-and-verify loop.
//!
//! Each step drafts `m` tokens autoregressively from the (warped) drafter,
//! scores every position against the (warped) verifier through the
//! configured acceptance policy, keeps the prefix before the first
//! rejection, and appends one bonus token: from the recover distribution at
//! the rejected position, or from the policy's token-independent target
//! when the whole draft survives. A step therefore always emits
//! `accepted_count + 1` tokens and costs exactly one verifier call.
//!
//! Randomness is drawn from per-(sequence, step) substreams, so transcripts
//! are a pure function of `(seed, sequence id, config)` and sequences can
//! run on any number of workers without changing results.

use rand::Rng;
use thiserror::Error;

use crate::dist::Categorical;
use crate::policy::{evaluate, PolicyKind, PolicyParams, PolicyVerdict};
use crate::rng::{substream, tags};
use crate::toylm::{MarkovLM, ToyLmError};
use crate::warp::{warp, WarpParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ToyLmError),
    #[error("drafter and verifier disagree on shape: {0}")]
    ModelMismatch(String),
}

/// Where a step's bonus token was sampled from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BonusSource {
    /// The recover distribution at the first rejected position.
    Recover,
    /// The policy's token-independent target after a fully accepted draft
    /// (also the fallback under the vanishing-rejection-mass guard).
    Target,
}

/// Everything one draft-and-verify step did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub drafted: Vec<usize>,
    pub uniforms: Vec<f64>,
    pub accepted_count: usize,
    pub bonus_token: usize,
    pub bonus_source: BonusSource,
    pub per_token_accept_probs: Vec<f64>,
    /// Set when a rejection met an undefined recover distribution and the
    /// engine fell back to the target; expected to stay false.
    pub anomaly: bool,
}

/// Aggregated accounting over one or more sequences.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunStats {
    pub total_drafted: u64,
    pub total_accepted: u64,
    /// First rejected token plus the discarded suffix, per step.
    pub total_rejected: u64,
    pub verifier_calls: u64,
    /// Tokens that made it into transcripts (accepted prefix + bonus,
    /// truncated by EOS / max_len).
    pub kept_tokens: u64,
    pub anomalies: u64,
    pub sequence_lengths: Vec<usize>,
}

impl RunStats {
    /// Mean accepted draft tokens per verifier call.
    pub fn al_m(&self) -> f64 {
        if self.verifier_calls == 0 {
            0.0
        } else {
            self.total_accepted as f64 / self.verifier_calls as f64
        }
    }

    /// Empirical per-token acceptance rate.
    pub fn accept_rate(&self) -> f64 {
        if self.total_drafted == 0 {
            0.0
        } else {
            self.total_accepted as f64 / self.total_drafted as f64
        }
    }

    /// Signed percentage of rejected tokens relative to a reference run.
    pub fn rej_relative_pct(&self, reference: &RunStats) -> f64 {
        if reference.total_rejected == 0 {
            return 0.0;
        }
        100.0 * (self.total_rejected as f64 - reference.total_rejected as f64)
            / reference.total_rejected as f64
    }

    pub fn merge(&mut self, other: &RunStats) {
        self.total_drafted += other.total_drafted;
        self.total_accepted += other.total_accepted;
        self.total_rejected += other.total_rejected;
        self.verifier_calls += other.verifier_calls;
        self.kept_tokens += other.kept_tokens;
        self.anomalies += other.anomalies;
        self.sequence_lengths
            .extend(other.sequence_lengths.iter().copied());
    }
}

/// Engine settings for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    /// Draft length per step.
    pub m: usize,
    /// Hard cap on emitted sequence length.
    pub max_len: usize,
    pub policy: PolicyParams,
    /// Applied to both drafter and verifier rows.
    pub warp: WarpParams,
    pub stop_on_eos: bool,
}

fn check_models(drafter: &MarkovLM, verifier: &MarkovLM) -> Result<(), EngineError> {
    if drafter.vocab_size() != verifier.vocab_size() || drafter.order() != verifier.order() {
        return Err(EngineError::ModelMismatch(format!(
            "drafter |V|={} order={} vs verifier |V|={} order={}",
            drafter.vocab_size(),
            drafter.order(),
            verifier.vocab_size(),
            verifier.order()
        )));
    }
    Ok(())
}

/// The token-independent distribution the bonus token is drawn from when
/// every drafted token was accepted.
///
/// The per-token targets of cactus and tas are tied to a drafted token that
/// does not exist at the bonus position, so those policies (like sps) fall
/// back to the verifier; interpolation keeps its mixture.
fn bonus_target(policy: &PolicyParams, p: &Categorical, q: &Categorical) -> Categorical {
    match policy.kind {
        PolicyKind::Interpolation => {
            let alpha = policy.alpha;
            let weights: Vec<f64> = q
                .probs()
                .iter()
                .zip(p.probs())
                .map(|(&qi, &pi)| (1.0 - alpha) * qi + alpha * pi)
                .collect();
            Categorical::from_weights(&weights).expect("mixture of valid distributions")
        }
        _ => q.clone(),
    }
}

/// Runs one draft-and-verify step from `context`.
///
/// All `m` positions are scored even when an early rejection discards the
/// suffix, mirroring a parallel verifier pass.
pub fn run_step<R: Rng>(
    drafter: &MarkovLM,
    verifier: &MarkovLM,
    context: &[usize],
    cfg: &EngineConfig,
    rng: &mut R,
) -> Result<StepOutcome, EngineError> {
    check_models(drafter, verifier)?;
    let mut work_ctx = context.to_vec();
    let mut drafted = Vec::with_capacity(cfg.m);
    let mut uniforms = Vec::with_capacity(cfg.m);
    let mut verdicts: Vec<PolicyVerdict> = Vec::with_capacity(cfg.m);

    for _ in 0..cfg.m {
        let p = warp(drafter.next_distribution(&work_ctx)?, &cfg.warp);
        let q = warp(verifier.next_distribution(&work_ctx)?, &cfg.warp);
        let token = p.sample(rng);
        let u: f64 = rng.gen();
        verdicts.push(evaluate(&cfg.policy, &p, &q, token));
        drafted.push(token);
        uniforms.push(u);
        work_ctx.push(token);
    }

    let per_token_accept_probs: Vec<f64> = verdicts.iter().map(|v| v.accept_prob).collect();
    // accept iff u < phi: phi = 0 never accepts, phi = 1 always does
    let accepted_count = uniforms
        .iter()
        .zip(&per_token_accept_probs)
        .position(|(&u, &phi)| u >= phi)
        .unwrap_or(cfg.m);

    let mut anomaly = false;
    let (bonus_token, bonus_source) = if accepted_count < cfg.m {
        let verdict = &verdicts[accepted_count];
        match &verdict.recover {
            Some(g) => (g.sample(rng), BonusSource::Recover),
            None => {
                // rejection with no rejection mass: floating-point drift only
                anomaly = true;
                (verdict.target_h.sample(rng), BonusSource::Target)
            }
        }
    } else {
        let p = warp(drafter.next_distribution(&work_ctx)?, &cfg.warp);
        let q = warp(verifier.next_distribution(&work_ctx)?, &cfg.warp);
        let target = bonus_target(&cfg.policy, &p, &q);
        (target.sample(rng), BonusSource::Target)
    };

    Ok(StepOutcome {
        drafted,
        uniforms,
        accepted_count,
        bonus_token,
        bonus_source,
        per_token_accept_probs,
        anomaly,
    })
}

/// Generates one sequence from BOS until EOS (if `stop_on_eos`) or
/// `max_len`, returning the transcript and its accounting.
///
/// Tokens within a step past an accepted EOS, or past `max_len`, are
/// truncated from the transcript; the per-step draft/accept/reject counts
/// still reflect the full verifier pass.
pub fn run_sequence(
    drafter: &MarkovLM,
    verifier: &MarkovLM,
    cfg: &EngineConfig,
    seed: u64,
    sequence_id: u64,
) -> Result<(Vec<usize>, RunStats), EngineError> {
    assert!(cfg.m >= 1, "draft length must be at least 1");
    assert!(cfg.max_len >= 1, "max_len must be at least 1");
    let eos = verifier.eos_token();
    let mut transcript: Vec<usize> = Vec::new();
    let mut stats = RunStats::default();
    let mut step_index: u64 = 0;

    'generation: while transcript.len() < cfg.max_len {
        let mut rng = substream(seed, &[tags::SEQUENCE_STEP, sequence_id, step_index]);
        let outcome = run_step(drafter, verifier, &transcript, cfg, &mut rng)?;
        stats.verifier_calls += 1;
        stats.total_drafted += cfg.m as u64;
        stats.total_accepted += outcome.accepted_count as u64;
        stats.total_rejected += (cfg.m - outcome.accepted_count) as u64;
        stats.anomalies += outcome.anomaly as u64;

        for &token in &outcome.drafted[..outcome.accepted_count] {
            transcript.push(token);
            stats.kept_tokens += 1;
            if transcript.len() >= cfg.max_len || (cfg.stop_on_eos && token == eos) {
                break 'generation;
            }
        }
        transcript.push(outcome.bonus_token);
        stats.kept_tokens += 1;
        if cfg.stop_on_eos && outcome.bonus_token == eos {
            break;
        }
        step_index += 1;
    }

    stats.sequence_lengths.push(transcript.len());
    Ok((transcript, stats))
}

/// Monte Carlo front-end for one fixed step: draws `num_draws` independent
/// one-step outputs (accept the drafted token or resample from the recover
/// distribution) and returns their empirical distribution.
pub fn single_step_empirical<R: Rng>(
    p: &Categorical,
    q: &Categorical,
    policy: &PolicyParams,
    num_draws: u64,
    rng: &mut R,
) -> Categorical {
    assert!(num_draws >= 1);
    let len = p.len();
    // verdicts for every draftable token, computed once
    let verdicts: Vec<Option<PolicyVerdict>> = (0..len)
        .map(|n| (p.prob(n) > 0.0).then(|| evaluate(policy, p, q, n)))
        .collect();

    let mut counts = vec![0.0f64; len];
    for _ in 0..num_draws {
        let token = p.sample(rng);
        let u: f64 = rng.gen();
        let verdict = verdicts[token]
            .as_ref()
            .expect("sampled token has positive drafter mass");
        let emitted = if u < verdict.accept_prob {
            token
        } else {
            match &verdict.recover {
                Some(g) => g.sample(rng),
                None => verdict.target_h.sample(rng),
            }
        };
        counts[emitted] += 1.0;
    }
    Categorical::normalized(counts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toylm::{build_verifier, derive_drafter, DrafterSpec};

    fn models(seed: u64) -> (MarkovLM, MarkovLM) {
        let verifier = build_verifier(8, 1, 1.0, seed).unwrap();
        let drafter =
            derive_drafter(&verifier, &DrafterSpec::UniformMixed { epsilon: 0.4 }).unwrap();
        (drafter, verifier)
    }

    fn config(policy: PolicyParams) -> EngineConfig {
        EngineConfig {
            m: 4,
            max_len: 40,
            policy,
            warp: WarpParams::default(),
            stop_on_eos: false,
        }
    }

    #[test]
    fn identical_models_under_sps_accept_everything() {
        let verifier = build_verifier(8, 1, 1.0, 3).unwrap();
        let drafter = derive_drafter(&verifier, &DrafterSpec::Tempered { tau: 1.0 }).unwrap();
        let cfg = config(PolicyParams::sps());
        for step in 0..20 {
            let mut rng = substream(9, &[tags::SEQUENCE_STEP, 0, step]);
            let out = run_step(&drafter, &verifier, &[1, 2], &cfg, &mut rng).unwrap();
            assert_eq!(out.accepted_count, cfg.m);
            assert_eq!(out.bonus_source, BonusSource::Target);
            assert!(!out.anomaly);
        }
    }

    #[test]
    fn interpolation_alpha_one_accepts_everything() {
        let (drafter, verifier) = models(4);
        let cfg = config(PolicyParams::interpolation(1.0));
        for step in 0..20 {
            let mut rng = substream(10, &[tags::SEQUENCE_STEP, 0, step]);
            let out = run_step(&drafter, &verifier, &[], &cfg, &mut rng).unwrap();
            assert_eq!(out.accepted_count, cfg.m);
        }
    }

    #[test]
    fn step_accounting_matches_first_rejection() {
        let (drafter, verifier) = models(5);
        let cfg = config(PolicyParams::sps());
        for step in 0..50 {
            let mut rng = substream(11, &[tags::SEQUENCE_STEP, 1, step]);
            let out = run_step(&drafter, &verifier, &[0], &cfg, &mut rng).unwrap();
            let oracle = out
                .uniforms
                .iter()
                .zip(&out.per_token_accept_probs)
                .position(|(&u, &phi)| u >= phi)
                .unwrap_or(cfg.m);
            assert_eq!(out.accepted_count, oracle);
            assert_eq!(out.drafted.len(), cfg.m);
            assert_eq!(out.uniforms.len(), cfg.m);
        }
    }

    #[test]
    fn empirical_accept_rate_matches_analytic() {
        // order-0, |V|=2: p=(0.8,0.2), q=(0.5,0.5), sps, m=1:
        // E[accept] = 0.8*0.625 + 0.2*1 = 0.7
        let p = Categorical::from_weights(&[0.8, 0.2]).unwrap();
        let q = Categorical::from_weights(&[0.5, 0.5]).unwrap();
        let policy = PolicyParams::sps();
        let mut rng = substream(21, &[tags::EMPIRICAL, 0]);
        let n = 1_000_000u64;
        let mut accepted = 0u64;
        let verdict0 = evaluate(&policy, &p, &q, 0);
        let verdict1 = evaluate(&policy, &p, &q, 1);
        for _ in 0..n {
            let token = p.sample(&mut rng);
            let u: f64 = rng.gen();
            let phi = if token == 0 {
                verdict0.accept_prob
            } else {
                verdict1.accept_prob
            };
            accepted += (u < phi) as u64;
        }
        let rate = accepted as f64 / n as f64;
        // 5 sigma of Bin(1e6, 0.7)
        assert!((rate - 0.7).abs() < 0.0023, "rate = {rate}");
    }

    #[test]
    fn sequence_is_deterministic_and_isolated() {
        let (drafter, verifier) = models(6);
        let cfg = config(PolicyParams::cactus_taylor(0.5));
        let (seq_a, stats_a) = run_sequence(&drafter, &verifier, &cfg, 77, 0).unwrap();
        let (seq_b, stats_b) = run_sequence(&drafter, &verifier, &cfg, 77, 0).unwrap();
        assert_eq!(seq_a, seq_b);
        assert_eq!(stats_a, stats_b);
        // another sequence id draws a different stream
        let (seq_c, _) = run_sequence(&drafter, &verifier, &cfg, 77, 1).unwrap();
        assert_ne!(seq_a, seq_c);
        // and a different root seed changes this sequence
        let (seq_d, _) = run_sequence(&drafter, &verifier, &cfg, 78, 0).unwrap();
        assert_ne!(seq_a, seq_d);
    }

    #[test]
    fn max_len_one_makes_one_verifier_call() {
        let (drafter, verifier) = models(7);
        let mut cfg = config(PolicyParams::sps());
        cfg.max_len = 1;
        let (seq, stats) = run_sequence(&drafter, &verifier, &cfg, 3, 0).unwrap();
        assert_eq!(stats.verifier_calls, 1);
        assert_eq!(seq.len(), 1);
        assert!(seq.len() <= cfg.m + 1);
    }

    #[test]
    fn stats_reconcile_with_transcript() {
        let (drafter, verifier) = models(8);
        let cfg = config(PolicyParams::sps());
        let mut merged = RunStats::default();
        for seq_id in 0..20 {
            let (seq, stats) = run_sequence(&drafter, &verifier, &cfg, 90, seq_id).unwrap();
            assert_eq!(seq.len(), stats.kept_tokens as usize);
            assert_eq!(seq.len(), *stats.sequence_lengths.last().unwrap());
            assert_eq!(
                stats.total_drafted,
                stats.total_accepted + stats.total_rejected
            );
            // without EOS stops, every step emits c+1 except a max_len cut
            assert!(stats.kept_tokens <= stats.total_accepted + stats.verifier_calls);
            assert_eq!(stats.anomalies, 0);
            merged.merge(&stats);
        }
        assert_eq!(merged.sequence_lengths.len(), 20);
        assert!(merged.al_m() <= cfg.m as f64);
        assert!(merged.al_m() >= 0.0);
    }

    #[test]
    fn eos_stops_generation_when_enabled() {
        let (drafter, verifier) = models(9);
        let mut cfg = config(PolicyParams::sps());
        cfg.stop_on_eos = true;
        cfg.max_len = 400;
        let eos = verifier.eos_token();
        for seq_id in 0..20 {
            let (seq, _) = run_sequence(&drafter, &verifier, &cfg, 91, seq_id).unwrap();
            // EOS appears at most once, and only at the end
            let positions: Vec<_> = seq.iter().filter(|&&t| t == eos).collect();
            assert!(positions.len() <= 1);
            if let Some(pos) = seq.iter().position(|&t| t == eos) {
                assert_eq!(pos, seq.len() - 1);
            }
        }
    }

    #[test]
    fn empirical_step_matches_q_when_models_agree() {
        let q = Categorical::from_weights(&[0.5, 0.3, 0.2]).unwrap();
        let policy = PolicyParams::sps();
        let mut rng = substream(30, &[tags::EMPIRICAL, 1]);
        let emp = single_step_empirical(&q, &q, &policy, 200_000, &mut rng);
        for i in 0..3 {
            assert!((emp.prob(i) - q.prob(i)).abs() < 0.005);
        }
    }

    #[test]
    fn tas_empirical_support_is_two_point() {
        let p = Categorical::from_weights(&[0.25, 0.25, 0.25, 0.25]).unwrap();
        let q = Categorical::from_weights(&[0.1, 0.6, 0.2, 0.1]).unwrap();
        let policy = PolicyParams::tas(0.0);
        let mut rng = substream(31, &[tags::EMPIRICAL, 2]);
        let emp = single_step_empirical(&p, &q, &policy, 100_000, &mut rng);
        // accepted tokens pass the threshold; everything else lands on argmax
        let threshold = (-crate::dist::entropy(&q)).exp();
        for i in 0..4 {
            if emp.prob(i) > 0.0 {
                assert!(q.prob(i) >= threshold || i == 1, "unexpected support at {i}");
            }
        }
    }
}
