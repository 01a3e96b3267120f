//! The three optimization objectives (weighted instruction loss, reverse-KL
//! distillation toward a combined distribution, KL-regularized preference
//! loss), a plain-SGD training loop, and gradient verification utilities.
//!
//! Sign convention, stated once and used everywhere: objectives written as
//! maximizations are implemented as minimized negations.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::RngExt as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PrefExample, SeqExample, TaskWeights};
use crate::policy::{
    checkpoint, FlatParams, PolicyError, PolicyGrads, PolicyModel, SeqDistribution, TokenId,
};
use crate::rng::{derive_seed_indexed, rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("beta must be positive")]
    NonPositiveBeta,
    #[error("vocabulary mismatch between models")]
    VocabMismatch,
    #[error("training data must be non-empty")]
    EmptyData,
    #[error("non-finite loss at epoch {epoch}, batch {batch}; last good checkpoint kept")]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        last_good: Box<PolicyModel>,
    },
    #[error("policy error: {0}")]
    Policy(#[from] PolicyError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type TrainResult<T> = Result<T, TrainError>;

/// Instruction-tuning hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SftConfig {
    pub weights: TaskWeights,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SftConfig {
    fn default() -> Self {
        Self {
            weights: TaskWeights::uniform(),
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 8,
            seed: 0,
        }
    }
}

/// Preference-optimization hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DpoConfig {
    /// Temperature on the preference margin.
    pub beta: f64,
    /// Weight on the KL regularizer toward the frozen reference.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Monte Carlo samples per prompt for the regularizer.
    pub kl_sample_count: usize,
    /// Length cap for regularizer samples.
    pub max_sample_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            lambda: 1.0,
            learning_rate: 1e-4,
            kl_sample_count: 8,
            max_sample_len: 32,
            epochs: 1,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> TrainResult<()> {
        if self.beta <= 0.0 {
            return Err(TrainError::NonPositiveBeta);
        }
        if self.lambda < 0.0 || self.kl_sample_count == 0 {
            return Err(TrainError::EmptyData);
        }
        Ok(())
    }
}

/// Distillation hyperparameters for reverse-KL training toward a target
/// distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RklConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Sequences drawn per prompt per batch visit.
    pub sample_count: usize,
    pub max_sample_len: usize,
    pub seed: u64,
}

impl Default for RklConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 1,
            batch_size: 8,
            sample_count: 4,
            max_sample_len: 32,
            seed: 0,
        }
    }
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Weighted instruction loss: the mean over the batch of
/// `alpha_task * -log pi(y | x)`, with exact gradients.
pub fn sft_loss(
    model: &PolicyModel,
    batch: &[SeqExample],
    weights: &TaskWeights,
) -> TrainResult<(f64, PolicyGrads)> {
    if batch.is_empty() {
        return Err(TrainError::EmptyData);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = PolicyGrads::zeros_like(model);
    for ex in batch {
        let alpha = weights.get(&ex.task);
        let (nll, g) = model.nll_grad(&ex.x, &ex.y, alpha * scale)?;
        total += nll;
        grads.axpy(1.0, &g);
    }
    Ok((total, grads))
}

/// Reverse-KL distillation loss: a Monte Carlo estimate of
/// `E_{y ~ target}[ log target(y|x) - log student(y|x) ]`, with gradients
/// flowing only through the student term. The target is a frozen sampler
/// and evaluator (typically the combined decoding distribution).
pub fn rkl_loss(
    student: &PolicyModel,
    target: &dyn SeqDistribution,
    prompts: &[Vec<TokenId>],
    sample_count: usize,
    max_sample_len: usize,
    rng: &mut Rng,
) -> TrainResult<(f64, PolicyGrads)> {
    if prompts.is_empty() || sample_count == 0 {
        return Err(TrainError::EmptyData);
    }
    if target.dist_vocab_size() != student.vocab_size() {
        return Err(TrainError::VocabMismatch);
    }
    let scale = 1.0 / (prompts.len() * sample_count) as f64;
    let mut total = 0.0;
    let mut grads = PolicyGrads::zeros_like(student);
    for x in prompts {
        for _ in 0..sample_count {
            let y = target.dist_sample(x, max_sample_len, rng)?;
            let target_lp = target.dist_seq_logprob(x, &y)?;
            // nll_grad returns -log student(y|x) and its gradient, which is
            // exactly the student term of the loss.
            let (student_nll, g) = student.nll_grad(x, &y, scale)?;
            total += scale * target_lp + student_nll;
            grads.axpy(1.0, &g);
        }
    }
    Ok((total, grads))
}

/// Per-sample score-function gradient of the regularizer
/// `E_{y ~ pi}[ log(pi(y|x) / pi_0(y|x)) ]` at a sampled `y`:
/// value `f = log pi(y) - log pi_0(y)` and gradient `(f + 1) * grad log
/// pi(y)`. Exposed so the estimator can be validated by exhaustive
/// enumeration on small vocabularies.
pub fn regularizer_sample_grad(
    model: &PolicyModel,
    reference: &PolicyModel,
    x: &[TokenId],
    y: &[TokenId],
) -> TrainResult<(f64, PolicyGrads)> {
    let (nll, mut g) = model.nll_grad(x, y, 1.0)?;
    let ref_lp = reference.seq_logprob(x, y)?;
    let f = -nll - ref_lp;
    // grad log pi = -grad nll
    g.scale(-(f + 1.0));
    Ok((f, g))
}

/// Modified preference loss: the sigmoid margin on raw policy
/// log-probabilities plus `lambda` times a sampled estimate of the KL toward
/// the frozen reference. The margin intentionally uses `log pi(y+|x) -
/// log pi(y-|x)` directly rather than reference-normalized ratios; the
/// `reference_margin` switch restores the conventional parameterization.
pub fn dpo_loss(
    model: &PolicyModel,
    reference: &PolicyModel,
    batch: &[PrefExample],
    cfg: &DpoConfig,
    rng: &mut Rng,
) -> TrainResult<(f64, PolicyGrads)> {
    dpo_loss_with(model, reference, batch, cfg, false, rng)
}

/// `dpo_loss` with the margin parameterization made explicit. With
/// `reference_margin` set, the margin becomes the difference of
/// log-probability ratios against the reference (the conventional form);
/// reference terms are constants, so gradients are unchanged in shape.
pub fn dpo_loss_with(
    model: &PolicyModel,
    reference: &PolicyModel,
    batch: &[PrefExample],
    cfg: &DpoConfig,
    reference_margin: bool,
    rng: &mut Rng,
) -> TrainResult<(f64, PolicyGrads)> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(TrainError::EmptyData);
    }
    if model.vocab.sha256() != reference.vocab.sha256() {
        return Err(TrainError::VocabMismatch);
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    let mut grads = PolicyGrads::zeros_like(model);

    for ex in batch {
        let (nll_pos, g_pos) = model.nll_grad(&ex.x, &ex.y_pos, 1.0)?;
        let (nll_neg, g_neg) = model.nll_grad(&ex.x, &ex.y_neg, 1.0)?;
        let mut margin = cfg.beta * (nll_neg - nll_pos);
        if reference_margin {
            let ref_pos = reference.seq_logprob(&ex.x, &ex.y_pos)?;
            let ref_neg = reference.seq_logprob(&ex.x, &ex.y_neg)?;
            margin -= cfg.beta * (ref_pos - ref_neg);
        }
        // -log sigmoid(m) = softplus(-m); d/dm = -sigmoid(-m)
        total += scale * softplus(-margin);
        let coeff = scale * sigmoid(-margin) * cfg.beta;
        grads.axpy(coeff, &g_pos);
        grads.axpy(-coeff, &g_neg);
    }

    if cfg.lambda > 0.0 {
        let reg_scale = 1.0 / (batch.len() * cfg.kl_sample_count) as f64;
        let mut estimate = 0.0;
        for ex in batch {
            for _ in 0..cfg.kl_sample_count {
                let y = model.dist_sample(&ex.x, cfg.max_sample_len, rng)?;
                let (f, g) = regularizer_sample_grad(model, reference, &ex.x, &y)?;
                estimate += reg_scale * f;
                grads.axpy(cfg.lambda * reg_scale, &g);
            }
        }
        total += cfg.lambda * estimate;
    }
    Ok((total, grads))
}

/// Monte Carlo estimate of the regularizer alone:
/// `E_{y ~ pi}[ log(pi(y|x)/pi_0(y|x)) ]`, returned with its standard error.
pub fn kl_regularizer_estimate(
    model: &PolicyModel,
    reference: &PolicyModel,
    prompts: &[Vec<TokenId>],
    samples_per_prompt: usize,
    max_sample_len: usize,
    rng: &mut Rng,
) -> TrainResult<(f64, f64)> {
    let mut values = Vec::new();
    for x in prompts {
        for _ in 0..samples_per_prompt {
            let y = model.dist_sample(x, max_sample_len, rng)?;
            let lp = model.seq_logprob(x, &y)?;
            let ref_lp = reference.seq_logprob(x, &y)?;
            values.push(lp - ref_lp);
        }
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(x))`, stable for large |x|.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// What one training run optimizes.
pub enum TrainData<'a> {
    Sft {
        examples: &'a [SeqExample],
        weights: &'a TaskWeights,
    },
    Rkl {
        target: &'a dyn SeqDistribution,
        prompts: &'a [Vec<TokenId>],
        sample_count: usize,
        max_sample_len: usize,
    },
    Dpo {
        reference: &'a PolicyModel,
        batch: &'a [PrefExample],
        cfg: DpoConfig,
    },
}

impl TrainData<'_> {
    fn len(&self) -> usize {
        match self {
            TrainData::Sft { examples, .. } => examples.len(),
            TrainData::Rkl { prompts, .. } => prompts.len(),
            TrainData::Dpo { batch, .. } => batch.len(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            TrainData::Sft { .. } => "sft",
            TrainData::Rkl { .. } => "rkl",
            TrainData::Dpo { .. } => "dpo",
        }
    }
}

/// Loop hyperparameters, normalized from the per-objective configs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LoopConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stateless global-norm clip applied to each batch gradient before the
    /// step; `None` disables it.
    #[serde(default)]
    pub max_grad_norm: Option<f64>,
}

impl From<&SftConfig> for LoopConfig {
    fn from(c: &SftConfig) -> Self {
        LoopConfig {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            max_grad_norm: None,
        }
    }
}

impl From<&DpoConfig> for LoopConfig {
    fn from(c: &DpoConfig) -> Self {
        LoopConfig {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            max_grad_norm: None,
        }
    }
}

impl From<&RklConfig> for LoopConfig {
    fn from(c: &RklConfig) -> Self {
        LoopConfig {
            learning_rate: c.learning_rate,
            epochs: c.epochs,
            batch_size: c.batch_size,
            seed: c.seed,
            max_grad_norm: None,
        }
    }
}

/// One row of the loss series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchStat {
    pub epoch: usize,
    pub batch: usize,
    pub loss: f64,
    pub grad_norm: f64,
}

/// Everything a training run reports. The wall time is carried in memory and
/// echoed into run manifests, but skipped in the serialized report so report
/// files stay byte-identical across equal-seed runs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub objective: String,
    pub loss_series: Vec<BatchStat>,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub final_checkpoint: Option<PathBuf>,
    pub config: LoopConfig,
    #[serde(skip)]
    pub wall_time: Duration,
}

impl TrainReport {
    /// Loss-curve CSV: `epoch,batch,loss,grad_norm`.
    pub fn write_loss_csv(&self, path: &Path) -> std::io::Result<()> {
        use std::io::Write as _;
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "epoch,batch,loss,grad_norm")?;
        for s in &self.loss_series {
            writeln!(out, "{},{},{},{}", s.epoch, s.batch, s.loss, s.grad_norm)?;
        }
        Ok(())
    }
}

/// Plain gradient descent with a fixed learning rate and seeded per-epoch
/// shuffling. Checkpoints are written at every epoch end when a directory is
/// given. A non-finite loss aborts with the last epoch-end model.
pub fn train_loop(
    mut model: PolicyModel,
    data: TrainData<'_>,
    cfg: &LoopConfig,
    checkpoint_dir: Option<&Path>,
) -> TrainResult<(PolicyModel, TrainReport)> {
    if data.len() == 0 {
        return Err(TrainError::EmptyData);
    }
    let started = Instant::now();
    let n = data.len();
    let batch_size = cfg.batch_size.max(1).min(n);
    let batches_per_epoch = n.div_ceil(batch_size);
    let mut series = Vec::with_capacity(cfg.epochs * batches_per_epoch);
    let mut last_good = model.clone();
    let mut final_checkpoint = None;

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        let mut shuffle_rng = rng_from_seed(derive_seed_indexed(cfg.seed, "shuffle", epoch as u64));
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut batch_rng = rng_from_seed(derive_seed_indexed(cfg.seed, "batch", epoch as u64));
        for (batch_idx, chunk) in order.chunks(batch_size).enumerate() {
            let (loss, grads) = match &data {
                TrainData::Sft { examples, weights } => {
                    let batch: Vec<SeqExample> =
                        chunk.iter().map(|&i| examples[i].clone()).collect();
                    sft_loss(&model, &batch, weights)?
                }
                TrainData::Rkl {
                    target,
                    prompts,
                    sample_count,
                    max_sample_len,
                } => {
                    let batch: Vec<Vec<TokenId>> =
                        chunk.iter().map(|&i| prompts[i].clone()).collect();
                    rkl_loss(
                        &model,
                        *target,
                        &batch,
                        *sample_count,
                        *max_sample_len,
                        &mut batch_rng,
                    )?
                }
                TrainData::Dpo {
                    reference,
                    batch,
                    cfg: dpo_cfg,
                } => {
                    let b: Vec<PrefExample> = chunk.iter().map(|&i| batch[i].clone()).collect();
                    dpo_loss(&model, reference, &b, dpo_cfg, &mut batch_rng)?
                }
            };
            if !loss.is_finite() {
                return Err(TrainError::DivergenceDetected {
                    epoch,
                    batch: batch_idx,
                    last_good: Box::new(last_good),
                });
            }
            let mut grads = grads;
            let grad_norm = grads.l2_norm();
            if let Some(cap) = cfg.max_grad_norm {
                if grad_norm > cap && grad_norm > 0.0 {
                    grads.scale(cap / grad_norm);
                }
            }
            series.push(BatchStat {
                epoch,
                batch: batch_idx,
                loss,
                grad_norm,
            });
            model.apply_grads(&grads, cfg.learning_rate);
        }
        last_good = model.clone();
        if let Some(dir) = checkpoint_dir {
            let path = dir.join(format!("{}_epoch_{:03}.ckpt", data.kind(), epoch + 1));
            checkpoint::save(&model, &path)?;
            final_checkpoint = Some(path);
        }
    }

    let report = TrainReport {
        objective: data.kind().to_string(),
        loss_series: series,
        epochs: cfg.epochs,
        batches_per_epoch,
        final_checkpoint,
        config: cfg.clone(),
        wall_time: started.elapsed(),
    };
    Ok((model, report))
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

/// Central finite difference of `f` with respect to one flat parameter.
/// Independent of any backward pass: it only evaluates the loss.
pub fn central_difference<M, F>(model: &M, index: usize, step: f64, f: F) -> f64
where
    M: FlatParams + Clone,
    F: Fn(&M) -> f64,
{
    let mut plus = model.clone();
    plus.set_param(index, model.param(index) + step);
    let mut minus = model.clone();
    minus.set_param(index, model.param(index) - step);
    (f(&plus) - f(&minus)) / (2.0 * step)
}

/// Outcome of a finite-difference sweep.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
}

/// Compare an analytic flat gradient against central differences at
/// `count` seeded-random parameter indices. Relative error uses
/// `|a - fd| / max(|a|, |fd|, floor)`; the floor keeps components that sit
/// below finite-difference rounding noise from registering as spurious
/// relative error.
pub fn check_gradients<M, F>(
    model: &M,
    analytic_flat: &[f64],
    count: usize,
    step: f64,
    floor: f64,
    seed: u64,
    f: F,
) -> GradCheckReport
where
    M: FlatParams + Clone,
    F: Fn(&M) -> f64,
{
    let mut rng = rng_from_seed(seed);
    let n = model.param_count();
    let mut max_rel: f64 = 0.0;
    for _ in 0..count {
        let idx = rng.random_range(0..n);
        let fd = central_difference(model, idx, step, &f);
        let a = analytic_flat[idx];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        max_rel = max_rel.max(rel);
    }
    GradCheckReport {
        checked: count,
        max_rel_err: max_rel,
    }
}

#[cfg(test)]
mod tests;
