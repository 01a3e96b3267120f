//! Decoding-time combination of a large base model with a tuned/naive guide
//! pair: per step, the base distribution is reweighted by the guide ratio
//! `p_expert / p_naive` and renormalized. Everything runs in log space with
//! log-sum-exp; near-zero naive probabilities are floored and the floor
//! events counted so analyses can spot pathological steps.
//!
//! The combination serves two modes: a pure inference-time adjustment (the
//! base model's parameters are never touched), and a training target whose
//! samples and log-probabilities feed reverse-KL distillation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{
    log_softmax, DecodeMode, PolicyError, PolicyModel, PolicyResult, SeqDistribution, TokenId,
    EOS,
};
use crate::rng::Rng;
use rand::RngExt as _;

#[derive(Debug, Error)]
pub enum W2sError {
    #[error("distribution lengths differ: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("input is not a probability distribution: {0}")]
    InvalidDistribution(String),
    #[error("vocabulary mismatch between models")]
    VocabMismatch,
    #[error("invalid config: {0}")]
    Config(String),
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
}

pub type W2sResult<T> = Result<T, W2sError>;

/// Combination parameters. `ratio_exponent = 1` is the plain behavior-ratio
/// rule; the exponent is an ablation knob and acceptance runs at 1 only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct W2sConfig {
    /// Floor applied to naive probabilities before the ratio.
    pub naive_floor: f64,
    /// Power on the guide ratio; 0 switches the guidance off.
    pub ratio_exponent: f64,
    pub decode: DecodeMode,
    pub max_len: usize,
}

impl Default for W2sConfig {
    fn default() -> Self {
        Self {
            naive_floor: 1e-6,
            ratio_exponent: 1.0,
            decode: DecodeMode::Greedy,
            max_len: 48,
        }
    }
}

impl W2sConfig {
    /// The floor must be positive and must not dominate a uniform
    /// distribution; the exponent must be nonnegative.
    pub fn validate(&self, vocab_size: usize) -> W2sResult<()> {
        if self.naive_floor <= 0.0 || !self.naive_floor.is_finite() {
            return Err(W2sError::Config("naive_floor must be positive".into()));
        }
        if self.naive_floor >= 1.0 / vocab_size as f64 {
            return Err(W2sError::Config(format!(
                "naive_floor {} must stay below 1/V = {}",
                self.naive_floor,
                1.0 / vocab_size as f64
            )));
        }
        if self.ratio_exponent < 0.0 || !self.ratio_exponent.is_finite() {
            return Err(W2sError::Config("ratio_exponent must be >= 0".into()));
        }
        Ok(())
    }
}

/// A combined per-step distribution with its normalizer and the count of
/// floored naive entries.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedDistribution {
    pub probs: Vec<f64>,
    /// Natural log of the normalizer.
    pub log_z: f64,
    /// Number of naive entries clamped to the floor this step.
    pub clamp_events: u32,
}

fn validate_dist(p: &[f64], name: &str) -> W2sResult<()> {
    let mut sum = 0.0;
    for &v in p {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(W2sError::InvalidDistribution(format!(
                "{name} has entry {v}"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > 1e-6 {
        return Err(W2sError::InvalidDistribution(format!(
            "{name} sums to {sum}"
        )));
    }
    Ok(())
}

/// Combine one step: `probs` proportional to
/// `p_base * (p_expert / max(p_naive, floor))^exponent`, computed in log
/// space and normalized with log-sum-exp.
pub fn combine_step(
    p_strong: &[f64],
    p_expert: &[f64],
    p_naive: &[f64],
    cfg: &W2sConfig,
) -> W2sResult<CombinedDistribution> {
    if p_strong.len() != p_expert.len() {
        return Err(W2sError::DimensionMismatch(p_strong.len(), p_expert.len()));
    }
    if p_strong.len() != p_naive.len() {
        return Err(W2sError::DimensionMismatch(p_strong.len(), p_naive.len()));
    }
    cfg.validate(p_strong.len())?;
    validate_dist(p_strong, "base")?;
    validate_dist(p_expert, "expert")?;
    validate_dist(p_naive, "naive")?;

    let mut clamp_events = 0u32;
    let log_unnorm: Vec<f64> = if cfg.ratio_exponent == 0.0 {
        // Exponent zero switches the ratio off entirely; computing
        // 0 * (-inf) on empty expert entries would poison the result.
        p_strong.iter().map(|p| p.ln()).collect()
    } else {
        p_strong
            .iter()
            .zip(p_expert)
            .zip(p_naive)
            .map(|((&ps, &pe), &pn)| {
                let floored = if pn < cfg.naive_floor {
                    clamp_events += 1;
                    cfg.naive_floor
                } else {
                    pn
                };
                ps.ln() + cfg.ratio_exponent * (pe.ln() - floored.ln())
            })
            .collect()
    };

    let max = log_unnorm
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(W2sError::InvalidDistribution(
            "combined distribution has no support".into(),
        ));
    }
    let log_z = max
        + log_unnorm
            .iter()
            .map(|l| (l - max).exp())
            .sum::<f64>()
            .ln();
    let probs: Vec<f64> = log_unnorm.iter().map(|l| (l - log_z).exp()).collect();
    Ok(CombinedDistribution {
        probs,
        log_z,
        clamp_events,
    })
}

/// The frozen triple behind the combined distribution. Implements
/// [`SeqDistribution`], so it can serve directly as a distillation target.
pub struct W2sPolicy<'a> {
    pub strong: &'a PolicyModel,
    pub expert: &'a PolicyModel,
    pub naive: &'a PolicyModel,
    pub cfg: W2sConfig,
}

impl<'a> W2sPolicy<'a> {
    pub fn new(
        strong: &'a PolicyModel,
        expert: &'a PolicyModel,
        naive: &'a PolicyModel,
        cfg: W2sConfig,
    ) -> W2sResult<W2sPolicy<'a>> {
        let hash = strong.vocab.sha256();
        if expert.vocab.sha256() != hash || naive.vocab.sha256() != hash {
            return Err(W2sError::VocabMismatch);
        }
        if expert.capacity != naive.capacity {
            return Err(W2sError::Config(
                "expert and naive guides must share capacity".into(),
            ));
        }
        cfg.validate(strong.vocab_size())?;
        Ok(W2sPolicy {
            strong,
            expert,
            naive,
            cfg,
        })
    }

    /// The combined distribution for the next step of `context`.
    pub fn combined_step(&self, context: &[TokenId]) -> W2sResult<CombinedDistribution> {
        let ps = self.strong.step_dist(context)?;
        let pe = self.expert.step_dist(context)?;
        let pn = self.naive.step_dist(context)?;
        combine_step(&ps, &pe, &pn, &self.cfg)
    }
}

impl SeqDistribution for W2sPolicy<'_> {
    fn dist_vocab_size(&self) -> usize {
        self.strong.vocab_size()
    }

    fn dist_step_logprobs(&self, context: &[TokenId]) -> PolicyResult<Vec<f64>> {
        let combined = self
            .combined_step(context)
            .map_err(|e| PolicyError::Checkpoint(e.to_string()))?;
        Ok(log_softmax(
            &combined
                .probs
                .iter()
                .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
                .collect::<Vec<_>>(),
        ))
    }
}

/// One decode-trace row: per-step summary statistics of the three source
/// distributions and the combination.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecodeTraceStep {
    pub step: usize,
    pub strong_entropy: f64,
    pub expert_entropy: f64,
    pub naive_entropy: f64,
    pub log_z: f64,
    pub clamp_events: u32,
    pub chosen: String,
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter()
        .filter(|v| **v > 0.0)
        .map(|v| v * v.ln())
        .sum::<f64>()
}

/// Decode with the combined distribution, the base model untouched
/// throughout. Greedy mode is deterministic; ties break toward the lowest
/// token index. Returns the emitted tokens and, when requested, a per-step
/// trace.
pub fn w2s_decode_traced(
    policy: &W2sPolicy<'_>,
    x: &[TokenId],
    rng: &mut Rng,
    want_trace: bool,
) -> W2sResult<(Vec<TokenId>, Vec<DecodeTraceStep>)> {
    let mut ctx = x.to_vec();
    let mut out = Vec::new();
    let mut trace = Vec::new();
    for step in 0..policy.cfg.max_len {
        let ps = policy.strong.step_dist(&ctx)?;
        let pe = policy.expert.step_dist(&ctx)?;
        let pn = policy.naive.step_dist(&ctx)?;
        let combined = combine_step(&ps, &pe, &pn, &policy.cfg)?;
        let tok = match policy.cfg.decode {
            DecodeMode::Greedy => {
                let mut best = 0;
                for (i, p) in combined.probs.iter().enumerate() {
                    if *p > combined.probs[best] {
                        best = i;
                    }
                }
                TokenId(best as u32)
            }
            DecodeMode::Temperature(t) => sample_probs_tempered(&combined.probs, t, rng),
        };
        if want_trace {
            trace.push(DecodeTraceStep {
                step,
                strong_entropy: entropy(&ps),
                expert_entropy: entropy(&pe),
                naive_entropy: entropy(&pn),
                log_z: combined.log_z,
                clamp_events: combined.clamp_events,
                chosen: policy.strong.vocab.token(tok)?.to_string(),
            });
        }
        out.push(tok);
        ctx.push(tok);
        if tok == EOS {
            break;
        }
    }
    Ok((out, trace))
}

/// Decode without collecting a trace.
pub fn w2s_decode(policy: &W2sPolicy<'_>, x: &[TokenId], rng: &mut Rng) -> W2sResult<Vec<TokenId>> {
    Ok(w2s_decode_traced(policy, x, rng, false)?.0)
}

/// `sum_m log pi_bar(y_m | x, y_<m)`: the combined distribution's sequence
/// log-probability, term-for-term consistent with `combine_step`.
pub fn pi_bar_logprob(policy: &W2sPolicy<'_>, x: &[TokenId], y: &[TokenId]) -> W2sResult<f64> {
    if y.last() != Some(&EOS) {
        return Err(W2sError::Policy(PolicyError::MissingEos));
    }
    let mut ctx = x.to_vec();
    let mut total = 0.0;
    for &tok in y {
        let combined = policy.combined_step(&ctx)?;
        total += combined.probs[tok.idx()].ln();
        ctx.push(tok);
    }
    Ok(total)
}

fn sample_probs_tempered(probs: &[f64], t: f64, rng: &mut Rng) -> TokenId {
    if t <= 0.0 {
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        return TokenId(best as u32);
    }
    let logp: Vec<f64> = probs
        .iter()
        .map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY })
        .collect();
    let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = logp.iter().map(|lp| ((lp - max) / t).exp()).collect();
    let sum: f64 = weights.iter().sum();
    let mut dart = rng.random::<f64>() * sum;
    for (i, w) in weights.iter().enumerate() {
        dart -= w;
        if dart <= 0.0 {
            return TokenId(i as u32);
        }
    }
    TokenId((probs.len() - 1) as u32)
}
