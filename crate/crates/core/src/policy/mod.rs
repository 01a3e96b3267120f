//! Toy autoregressive policy models: exact distributions, exact gradients,
//! per-layer hidden export, sampling, and binary checkpoints.

pub mod checkpoint;
mod model;
mod vocab;

pub use model::{
    log_softmax, Capacity, DecodeMode, FlatParams, HiddenStack, LayerParams, PolicyGrads,
    PolicyModel, Role, POOL_DECAY,
};
pub use vocab::{TokenId, Vocabulary, BOS, EOS, PAD};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unknown token: {0}")]
    UnknownToken(String),
    #[error("duplicate token: {0}")]
    DuplicateToken(String),
    #[error("vocabulary too small ({0} tokens; need at least 4)")]
    VocabTooSmall(usize),
    #[error("target sequence must end with <eos>")]
    MissingEos,
    #[error("vocabulary mismatch between models")]
    VocabMismatch,
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type PolicyResult<T> = Result<T, PolicyError>;

/// A per-step categorical sequence distribution: the policy models implement
/// it directly, and the decoding-time combination implements it over a model
/// triple, so distillation can target either interchangeably.
pub trait SeqDistribution {
    fn dist_vocab_size(&self) -> usize;

    /// Log-probabilities over the vocabulary for the next token.
    fn dist_step_logprobs(&self, context: &[TokenId]) -> PolicyResult<Vec<f64>>;

    /// `sum_m log p(y_m | x, y_<m)`; `y` must end with `<eos>`.
    fn dist_seq_logprob(&self, x: &[TokenId], y: &[TokenId]) -> PolicyResult<f64> {
        if y.last() != Some(&EOS) {
            return Err(PolicyError::MissingEos);
        }
        let mut ctx = x.to_vec();
        let mut total = 0.0;
        for &tok in y {
            total += self.dist_step_logprobs(&ctx)?[tok.idx()];
            ctx.push(tok);
        }
        Ok(total)
    }

    /// Ancestral sample, stopping at `<eos>` or after `max_len` tokens. The
    /// returned sequence always ends with `<eos>` (appended if the budget
    /// ran out) so it is valid as a scoring target.
    fn dist_sample(
        &self,
        x: &[TokenId],
        max_len: usize,
        rng: &mut crate::rng::Rng,
    ) -> PolicyResult<Vec<TokenId>> {
        use rand::RngExt as _;
        let mut ctx = x.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logp = self.dist_step_logprobs(&ctx)?;
            let max = logp.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = logp.iter().map(|lp| (lp - max).exp()).collect();
            let sum: f64 = weights.iter().sum();
            let mut dart = rng.random::<f64>() * sum;
            let mut tok = TokenId((logp.len() - 1) as u32);
            for (i, w) in weights.iter().enumerate() {
                dart -= w;
                if dart <= 0.0 {
                    tok = TokenId(i as u32);
                    break;
                }
            }
            out.push(tok);
            ctx.push(tok);
            if tok == EOS {
                break;
            }
        }
        if out.last() != Some(&EOS) {
            out.push(EOS);
        }
        Ok(out)
    }
}

impl SeqDistribution for PolicyModel {
    fn dist_vocab_size(&self) -> usize {
        self.vocab_size()
    }

    fn dist_step_logprobs(&self, context: &[TokenId]) -> PolicyResult<Vec<f64>> {
        self.step_logprobs(context)
    }

    fn dist_seq_logprob(&self, x: &[TokenId], y: &[TokenId]) -> PolicyResult<f64> {
        self.seq_logprob(x, y)
    }
}
