//! The toy autoregressive model family: a fixed-window residual network with
//! exact per-step distributions, exact hand-written reverse-mode gradients,
//! per-layer hidden-state export, and deterministic sampling.
//!
//! One step embeds the last `window` context tokens, pools them with fixed
//! recency weights, pushes the pooled vector through `num_layers` residual
//! blocks (layer norm with gain, affine, tanh), and projects to vocabulary
//! logits. Everything is 64-bit and all softmax paths go through
//! log-sum-exp.

use rand::RngExt as _;
use serde::{Deserialize, Serialize};

use crate::rng::{rng_from_seed, Rng};

use super::vocab::{Vocabulary, EOS, PAD};
use super::{PolicyError, PolicyResult, TokenId};

/// Numerical floor inside layer normalization.
const LN_EPS: f64 = 1e-12;

/// Fixed recency decay for pooling window embeddings. The weight of the
/// token `k` positions before the end is `POOL_DECAY^k`, so identical
/// in-window suffixes produce identical pooled vectors regardless of what
/// scrolled out.
pub const POOL_DECAY: f64 = 0.8;

/// Which stand-in a model plays in the pipeline. Metadata only; the math is
/// identical across roles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Expert,
    Naive,
    Strong,
    Reference,
}

/// Model capacity presets: `Weak` emulates the small tunable model, and
/// `StrongToy` the larger frozen one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Weak,
    StrongToy,
}

impl Capacity {
    /// (num_layers, embed_dim, window)
    pub fn dims(self) -> (usize, usize, usize) {
        match self {
            Capacity::Weak => (2, 32, 8),
            Capacity::StrongToy => (8, 128, 16),
        }
    }
}

/// Per-layer parameters: layer-norm gain, affine map, affine bias.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub gain: Vec<f64>, // d
    pub w: Vec<f64>,    // d*d, row-major
    pub b: Vec<f64>,    // d
}

/// Hidden states captured after each residual block at the position
/// predicting the next token. Always exactly `num_layers` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStack(pub Vec<Vec<f64>>);

impl HiddenStack {
    pub fn num_layers(&self) -> usize {
        self.0.len()
    }

    pub fn layer(&self, l: usize) -> &[f64] {
        &self.0[l]
    }
}

/// A parametric autoregressive categorical sequence model.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyModel {
    pub vocab: Vocabulary,
    pub role: Role,
    pub capacity: Capacity,
    pub seed: u64,
    v: usize,
    d: usize,
    l: usize,
    w: usize,
    pub embed: Vec<f64>, // v*d
    pub layers: Vec<LayerParams>,
    pub out_w: Vec<f64>, // v*d
    pub out_b: Vec<f64>, // v
}

/// Gradients mirroring [`PolicyModel`] parameter shapes.
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub embed: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub out_w: Vec<f64>,
    pub out_b: Vec<f64>,
}

impl PolicyGrads {
    pub fn zeros_like(model: &PolicyModel) -> PolicyGrads {
        PolicyGrads {
            embed: vec![0.0; model.embed.len()],
            layers: model
                .layers
                .iter()
                .map(|l| LayerParams {
                    gain: vec![0.0; l.gain.len()],
                    w: vec![0.0; l.w.len()],
                    b: vec![0.0; l.b.len()],
                })
                .collect(),
            out_w: vec![0.0; model.out_w.len()],
            out_b: vec![0.0; model.out_b.len()],
        }
    }

    /// `self += c * other`
    pub fn axpy(&mut self, c: f64, other: &PolicyGrads) {
        let add = |dst: &mut [f64], src: &[f64]| {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        };
        add(&mut self.embed, &other.embed);
        for (dl, sl) in self.layers.iter_mut().zip(&other.layers) {
            add(&mut dl.gain, &sl.gain);
            add(&mut dl.w, &sl.w);
            add(&mut dl.b, &sl.b);
        }
        add(&mut self.out_w, &other.out_w);
        add(&mut self.out_b, &other.out_b);
    }

    pub fn scale(&mut self, c: f64) {
        for s in self.slices_mut() {
            for v in s {
                *v *= c;
            }
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embed];
        for l in &self.layers {
            out.push(&l.gain);
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embed];
        for l in &mut self.layers {
            out.push(&mut l.gain);
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }

    pub fn flat(&self) -> Vec<f64> {
        self.slices().iter().flat_map(|s| s.iter().copied()).collect()
    }
}

/// Anything exposing a flat 64-bit parameter view; gradient checking and SGD
/// work through this.
pub trait FlatParams {
    fn param_count(&self) -> usize;
    fn param(&self, i: usize) -> f64;
    fn set_param(&mut self, i: usize, v: f64);
}

impl PolicyModel {
    /// Initialize a model of the given capacity. Parameters are drawn from a
    /// seeded uniform distribution on `[-1/sqrt(d), 1/sqrt(d)]`, so the same
    /// seed gives bit-identical parameters.
    pub fn init(capacity: Capacity, vocab: Vocabulary, role: Role, seed: u64) -> PolicyModel {
        let (l, d, w) = capacity.dims();
        let v = vocab.size();
        let mut rng = rng_from_seed(seed);
        let scale = 1.0 / (d as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                .collect()
        };
        let embed = draw(v * d);
        let layers = (0..l)
            .map(|_| LayerParams {
                gain: draw(d),
                w: draw(d * d),
                b: draw(d),
            })
            .collect();
        let out_w = draw(v * d);
        let out_b = draw(v);
        PolicyModel {
            vocab,
            role,
            capacity,
            seed,
            v,
            d,
            l,
            w,
            embed,
            layers,
            out_w,
            out_b,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.v
    }

    pub fn embed_dim(&self) -> usize {
        self.d
    }

    pub fn num_layers(&self) -> usize {
        self.l
    }

    pub fn window(&self) -> usize {
        self.w
    }

    /// Closed-form parameter count:
    /// `V*d + L*(d*d + 2d) + d*V + V`.
    pub fn expected_param_count(v: usize, d: usize, l: usize) -> usize {
        v * d + l * (d * d + 2 * d) + d * v + v
    }

    pub fn zero_params(&mut self) {
        for i in 0..self.param_count() {
            self.set_param(i, 0.0);
        }
    }

    fn check_tokens(&self, ids: &[TokenId]) -> PolicyResult<()> {
        for id in ids {
            if id.idx() >= self.v {
                return Err(PolicyError::UnknownToken(format!("<id {}>", id.0)));
            }
        }
        Ok(())
    }

    /// The last `window` tokens, left-padded with `<pad>`.
    fn window_tokens(&self, context: &[TokenId]) -> Vec<TokenId> {
        let mut win = vec![PAD; self.w];
        let take = context.len().min(self.w);
        let src = &context[context.len() - take..];
        win[self.w - take..].copy_from_slice(src);
        win
    }

    fn forward(&self, context: &[TokenId]) -> PolicyResult<ForwardPass> {
        self.check_tokens(context)?;
        let d = self.d;
        let win = self.window_tokens(context);
        let mut h = vec![0.0; d];
        for (i, tok) in win.iter().enumerate() {
            if *tok == PAD {
                continue;
            }
            let gamma = POOL_DECAY.powi((self.w - 1 - i) as i32);
            let row = &self.embed[tok.idx() * d..(tok.idx() + 1) * d];
            for (hj, ej) in h.iter_mut().zip(row) {
                *hj += gamma * ej;
            }
        }
        let mut layer_caches = Vec::with_capacity(self.l);
        let mut stack = Vec::with_capacity(self.l);
        for layer in &self.layers {
            let mean = h.iter().sum::<f64>() / d as f64;
            let var = h.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let std = (var + LN_EPS).sqrt();
            let normed: Vec<f64> = h.iter().map(|x| (x - mean) / std).collect();
            let scaled: Vec<f64> = normed
                .iter()
                .zip(&layer.gain)
                .map(|(n, g)| n * g)
                .collect();
            let mut act = vec![0.0; d];
            for r in 0..d {
                let row = &layer.w[r * d..(r + 1) * d];
                let z: f64 = row.iter().zip(&scaled).map(|(w, a)| w * a).sum::<f64>() + layer.b[r];
                act[r] = z.tanh();
            }
            for (hj, tj) in h.iter_mut().zip(&act) {
                *hj += tj;
            }
            stack.push(h.clone());
            layer_caches.push(LayerCache {
                std,
                normed,
                scaled,
                act,
            });
        }
        let mut logits = vec![0.0; self.v];
        for (r, logit) in logits.iter_mut().enumerate() {
            let row = &self.out_w[r * d..(r + 1) * d];
            *logit = row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>() + self.out_b[r];
        }
        Ok(ForwardPass {
            window: win,
            layer_caches,
            final_hidden: h,
            logits,
            stack: HiddenStack(stack),
        })
    }

    /// Log-probabilities over the vocabulary for the next token.
    pub fn step_logprobs(&self, context: &[TokenId]) -> PolicyResult<Vec<f64>> {
        Ok(log_softmax(&self.forward(context)?.logits))
    }

    /// Probability vector over the vocabulary for the next token.
    pub fn step_dist(&self, context: &[TokenId]) -> PolicyResult<Vec<f64>> {
        Ok(self
            .step_logprobs(context)?
            .iter()
            .map(|lp| lp.exp())
            .collect())
    }

    /// Probability vector plus the per-layer hidden stack at this position.
    pub fn step_dist_with_hidden(
        &self,
        context: &[TokenId],
    ) -> PolicyResult<(Vec<f64>, HiddenStack)> {
        let pass = self.forward(context)?;
        let probs = log_softmax(&pass.logits).iter().map(|lp| lp.exp()).collect();
        Ok((probs, pass.stack))
    }

    /// Hidden stack at the position predicting the token after `context`.
    pub fn hidden_stack(&self, context: &[TokenId]) -> PolicyResult<HiddenStack> {
        Ok(self.forward(context)?.stack)
    }

    /// `sum_m log pi(y_m | x, y_<m)` in nats. `y` must end with `<eos>`.
    pub fn seq_logprob(&self, x: &[TokenId], y: &[TokenId]) -> PolicyResult<f64> {
        if y.last() != Some(&EOS) {
            return Err(PolicyError::MissingEos);
        }
        let mut ctx = x.to_vec();
        let mut total = 0.0;
        for &tok in y {
            let lp = self.step_logprobs(&ctx)?;
            total += lp[tok.idx()];
            ctx.push(tok);
        }
        Ok(total)
    }

    /// Negative sequence log-likelihood and its exact gradient, scaled by
    /// `weight`. The per-step logit gradient of the NLL is
    /// `softmax(logits) - onehot(gold)`.
    pub fn nll_grad(
        &self,
        x: &[TokenId],
        y: &[TokenId],
        weight: f64,
    ) -> PolicyResult<(f64, PolicyGrads)> {
        if y.last() != Some(&EOS) {
            return Err(PolicyError::MissingEos);
        }
        let mut grads = PolicyGrads::zeros_like(self);
        let mut ctx = x.to_vec();
        let mut nll = 0.0;
        for &tok in y {
            let pass = self.forward(&ctx)?;
            let logp = log_softmax(&pass.logits);
            nll -= logp[tok.idx()];
            let mut dlogits: Vec<f64> = logp.iter().map(|lp| weight * lp.exp()).collect();
            dlogits[tok.idx()] -= weight;
            self.backward_step(&pass, &dlogits, &mut grads);
            ctx.push(tok);
        }
        Ok((weight * nll, grads))
    }

    /// Accumulate parameter gradients for one step given the gradient of a
    /// scalar loss with respect to this step's logits.
    fn backward_step(&self, pass: &ForwardPass, dlogits: &[f64], grads: &mut PolicyGrads) {
        let d = self.d;
        // output map
        let mut dh = vec![0.0; d];
        for r in 0..self.v {
            let g = dlogits[r];
            if g == 0.0 {
                continue;
            }
            grads.out_b[r] += g;
            let row = &self.out_w[r * d..(r + 1) * d];
            let grow = &mut grads.out_w[r * d..(r + 1) * d];
            for j in 0..d {
                grow[j] += g * pass.final_hidden[j];
                dh[j] += g * row[j];
            }
        }
        // residual blocks, reversed
        for (layer, (params, cache)) in self
            .layers
            .iter()
            .zip(&pass.layer_caches)
            .enumerate()
            .rev()
            .map(|(i, pc)| (i, pc))
        {
            let gl = &mut grads.layers[layer];
            // dz = dh * (1 - tanh^2)
            let dz: Vec<f64> = dh
                .iter()
                .zip(&cache.act)
                .map(|(g, t)| g * (1.0 - t * t))
                .collect();
            let mut da = vec![0.0; d];
            for r in 0..d {
                let g = dz[r];
                gl.b[r] += g;
                if g == 0.0 {
                    continue;
                }
                let row = &params.w[r * d..(r + 1) * d];
                let grow = &mut gl.w[r * d..(r + 1) * d];
                for c in 0..d {
                    grow[c] += g * cache.scaled[c];
                    da[c] += g * row[c];
                }
            }
            let mut dn = vec![0.0; d];
            for j in 0..d {
                gl.gain[j] += da[j] * cache.normed[j];
                dn[j] = da[j] * params.gain[j];
            }
            // layer norm backward: dx = (dn - mean(dn) - n * mean(dn .* n)) / std
            let mean_dn = dn.iter().sum::<f64>() / d as f64;
            let mean_dnn = dn
                .iter()
                .zip(&cache.normed)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / d as f64;
            for j in 0..d {
                let dx = (dn[j] - mean_dn - cache.normed[j] * mean_dnn) / cache.std;
                // residual: dh flows through unchanged plus the block path
                dh[j] += dx;
            }
        }
        // pooled embedding
        for (i, tok) in pass.window.iter().enumerate() {
            if *tok == PAD {
                continue;
            }
            let gamma = POOL_DECAY.powi((self.w - 1 - i) as i32);
            let grow = &mut grads.embed[tok.idx() * d..(tok.idx() + 1) * d];
            for j in 0..d {
                grow[j] += gamma * dh[j];
            }
        }
    }

    /// Greedy or temperature decode, stopping at `<eos>` or `max_len`
    /// emitted tokens. Greedy breaks ties toward the lowest token index.
    pub fn sample(
        &self,
        x: &[TokenId],
        mode: DecodeMode,
        max_len: usize,
        rng: &mut Rng,
    ) -> PolicyResult<Vec<TokenId>> {
        let mut ctx = x.to_vec();
        let mut out = Vec::new();
        for _ in 0..max_len {
            let logp = self.step_logprobs(&ctx)?;
            let tok = match mode {
                DecodeMode::Greedy => argmax(&logp),
                DecodeMode::Temperature(t) => sample_tempered(&logp, t, rng),
            };
            out.push(tok);
            ctx.push(tok);
            if tok == EOS {
                break;
            }
        }
        Ok(out)
    }

    /// SGD step: `theta -= lr * grad`.
    pub fn apply_grads(&mut self, grads: &PolicyGrads, lr: f64) {
        let upd = |dst: &mut [f64], src: &[f64]| {
            for (p, g) in dst.iter_mut().zip(src) {
                *p -= lr * g;
            }
        };
        upd(&mut self.embed, &grads.embed);
        for (pl, gl) in self.layers.iter_mut().zip(&grads.layers) {
            upd(&mut pl.gain, &gl.gain);
            upd(&mut pl.w, &gl.w);
            upd(&mut pl.b, &gl.b);
        }
        upd(&mut self.out_w, &grads.out_w);
        upd(&mut self.out_b, &grads.out_b);
    }

    pub(crate) fn param_slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = vec![&self.embed];
        for l in &self.layers {
            out.push(&l.gain);
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.out_w);
        out.push(&self.out_b);
        out
    }

    pub(crate) fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![&mut self.embed];
        for l in &mut self.layers {
            out.push(&mut l.gain);
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.out_w);
        out.push(&mut self.out_b);
        out
    }
}

impl FlatParams for PolicyModel {
    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn param(&self, mut i: usize) -> f64 {
        for s in self.param_slices() {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }

    fn set_param(&mut self, mut i: usize, v: f64) {
        for s in self.param_slices_mut() {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("parameter index out of range");
    }
}

/// Decoding modes. `Temperature(t)` converges to `Greedy` as `t -> 0+`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DecodeMode {
    Greedy,
    Temperature(f64),
}

struct LayerCache {
    std: f64,
    normed: Vec<f64>,
    scaled: Vec<f64>,
    act: Vec<f64>,
}

struct ForwardPass {
    window: Vec<TokenId>,
    layer_caches: Vec<LayerCache>,
    final_hidden: Vec<f64>,
    logits: Vec<f64>,
    stack: HiddenStack,
}

/// Numerically stable log-softmax.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|x| (x - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|x| x - lse).collect()
}

fn argmax(values: &[f64]) -> TokenId {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    TokenId(best as u32)
}

fn sample_tempered(logp: &[f64], t: f64, rng: &mut Rng) -> TokenId {
    if t <= 0.0 {
        return argmax(logp);
    }
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
    TokenId((logp.len() - 1) as u32)
}
