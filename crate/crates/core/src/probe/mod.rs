//! Lightweight predictors trained on frozen per-layer hidden states for
//! multi-choice answering, and the layer-wise probing runner.
//!
//! The stacked predictor runs three blocks: (1) parameter-free
//! normalization, an affine `d -> n1` map and an activation applied to each
//! layer row; (2) the same pattern applied along the layer axis, `L -> n2`,
//! giving an `n2 x n1` array; (3) flatten to `n1*n2`, normalize, and map to
//! `C` choice logits. A literal per-layer variant of block 2 (`n1 -> n2` per
//! row, flatten `L*n2`) stays available behind the topology switch, and the
//! single-layer topology (blocks 1 and 3 only) backs layer-wise probing.
//!
//! Probes never read policy parameters; they consume exported hidden stacks.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::RngExt as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::{FlatParams, HiddenStack, PolicyModel, TokenId};
use crate::rng::{derive_seed, derive_seed_indexed, rng_from_seed};

const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ProbeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid probe config: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("policy error: {0}")]
    Policy(#[from] crate::policy::PolicyError),
}

pub type ProbeResult<T> = Result<T, ProbeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    /// Parameter-free mean/variance normalization.
    MeanVar,
    /// Parameter-free root-mean-square scaling. Preserves the mean
    /// component of the input, so a probe can in principle replicate the
    /// base model's own linear readout; the default for that reason.
    Rms,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    /// Smooth ramp `x * sigmoid(x)`.
    Swish,
    Relu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTopology {
    /// Block 2 reduces along the layer axis (`L -> n2`), flatten `n1*n2`.
    LayerAxis,
    /// Literal reading: block 2 maps `n1 -> n2` per layer, flatten `L*n2`.
    PerLayer,
    /// Blocks 1 and 3 only, over a single layer's vector.
    SingleLayer,
}

/// Predictor shape and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub n1: usize,
    pub n2: usize,
    pub num_choices: usize,
    pub norm: NormKind,
    pub activation: ActKind,
    pub topology: ProbeTopology,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl ProbeConfig {
    /// Defaults for a model shape: `n1 = d/4`, `n2 = max(2, L/2)`, mean/var
    /// normalization, swish activation, layer-axis reduction.
    pub fn for_model(num_layers: usize, hidden_dim: usize, num_choices: usize) -> ProbeConfig {
        ProbeConfig {
            num_layers,
            hidden_dim,
            n1: (hidden_dim / 4).max(2),
            n2: (num_layers / 2).max(2),
            num_choices,
            norm: NormKind::Rms,
            activation: ActKind::Swish,
            topology: ProbeTopology::LayerAxis,
            learning_rate: 0.1,
            epochs: 500,
            batch_size: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> ProbeResult<()> {
        if self.n1 >= self.hidden_dim {
            return Err(ProbeError::Config("n1 must be < hidden_dim".into()));
        }
        if self.topology != ProbeTopology::SingleLayer && self.n2 >= self.n1 {
            return Err(ProbeError::Config("n2 must be < n1".into()));
        }
        if self.num_choices < 2 {
            return Err(ProbeError::Config("need at least two choices".into()));
        }
        if self.topology != ProbeTopology::SingleLayer && self.num_layers == 0 {
            return Err(ProbeError::Config("need at least one layer".into()));
        }
        Ok(())
    }

    fn flat_width(&self) -> usize {
        match self.topology {
            ProbeTopology::LayerAxis => self.n1 * self.n2,
            ProbeTopology::PerLayer => self.num_layers * self.n2,
            ProbeTopology::SingleLayer => self.n1,
        }
    }

    fn block2_in(&self) -> usize {
        match self.topology {
            ProbeTopology::LayerAxis => self.num_layers,
            ProbeTopology::PerLayer => self.n1,
            ProbeTopology::SingleLayer => 0,
        }
    }
}

/// One probing example: an exported hidden stack and its answer index.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeExample {
    pub hidden: Vec<Vec<f64>>,
    pub label: usize,
}

impl ProbeExample {
    pub fn from_stack(stack: &HiddenStack, label: usize) -> ProbeExample {
        ProbeExample {
            hidden: stack.0.clone(),
            label,
        }
    }
}

/// Predictor parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeParams {
    pub cfg: ProbeConfig,
    pub b1_w: Vec<f64>, // n1 x d
    pub b1_b: Vec<f64>, // n1
    pub b2_w: Vec<f64>, // n2 x block2_in (empty for single-layer)
    pub b2_b: Vec<f64>, // n2 (empty for single-layer)
    pub b3_w: Vec<f64>, // C x flat_width
    pub b3_b: Vec<f64>, // C
}

/// Seeded predictor initialization; weights uniform on
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, biases zero.
pub fn build_predictor(cfg: &ProbeConfig) -> ProbeResult<ProbeParams> {
    cfg.validate()?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut draw = |n: usize, fan_in: usize| -> Vec<f64> {
        let scale = 1.0 / (fan_in.max(1) as f64).sqrt();
        (0..n)
            .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
            .collect()
    };
    let (n1, n2, c, d) = (cfg.n1, cfg.n2, cfg.num_choices, cfg.hidden_dim);
    let b2_in = cfg.block2_in();
    let flat = cfg.flat_width();
    Ok(ProbeParams {
        cfg: cfg.clone(),
        b1_w: draw(n1 * d, d),
        b1_b: vec![0.0; n1],
        b2_w: if b2_in == 0 { Vec::new() } else { draw(n2 * b2_in, b2_in) },
        b2_b: if b2_in == 0 { Vec::new() } else { vec![0.0; n2] },
        b3_w: draw(c * flat, flat),
        b3_b: vec![0.0; c],
    })
}

/// Symbolic parameter count for the layer-axis topology:
/// `d*n1 + L*n2 + n1*n2*C` plus the `n1 + n2 + C` biases.
pub fn expected_param_count(cfg: &ProbeConfig) -> usize {
    match cfg.topology {
        ProbeTopology::LayerAxis => {
            cfg.hidden_dim * cfg.n1
                + cfg.num_layers * cfg.n2
                + cfg.n1 * cfg.n2 * cfg.num_choices
                + cfg.n1
                + cfg.n2
                + cfg.num_choices
        }
        ProbeTopology::PerLayer => {
            cfg.hidden_dim * cfg.n1
                + cfg.n1 * cfg.n2
                + cfg.num_layers * cfg.n2 * cfg.num_choices
                + cfg.n1
                + cfg.n2
                + cfg.num_choices
        }
        ProbeTopology::SingleLayer => {
            cfg.hidden_dim * cfg.n1 + cfg.n1 * cfg.num_choices + cfg.n1 + cfg.num_choices
        }
    }
}

impl FlatParams for ProbeParams {
    fn param_count(&self) -> usize {
        self.b1_w.len()
            + self.b1_b.len()
            + self.b2_w.len()
            + self.b2_b.len()
            + self.b3_w.len()
            + self.b3_b.len()
    }

    fn param(&self, mut i: usize) -> f64 {
        for s in [&self.b1_w, &self.b1_b, &self.b2_w, &self.b2_b, &self.b3_w, &self.b3_b] {
            if i < s.len() {
                return s[i];
            }
            i -= s.len();
        }
        panic!("probe parameter index out of range");
    }

    fn set_param(&mut self, mut i: usize, v: f64) {
        for s in [
            &mut self.b1_w,
            &mut self.b1_b,
            &mut self.b2_w,
            &mut self.b2_b,
            &mut self.b3_w,
            &mut self.b3_b,
        ] {
            if i < s.len() {
                s[i] = v;
                return;
            }
            i -= s.len();
        }
        panic!("probe parameter index out of range");
    }
}

fn normalize(kind: NormKind, x: &[f64]) -> (Vec<f64>, f64) {
    let n = x.len() as f64;
    match kind {
        NormKind::MeanVar => {
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = (var + NORM_EPS).sqrt();
            (x.iter().map(|v| (v - mean) / std).collect(), std)
        }
        NormKind::Rms => {
            let ms = x.iter().map(|v| v * v).sum::<f64>() / n;
            let rms = (ms + NORM_EPS).sqrt();
            (x.iter().map(|v| v / rms).collect(), rms)
        }
    }
}

fn norm_backward(kind: NormKind, dn: &[f64], normed: &[f64], scale: f64) -> Vec<f64> {
    let n = dn.len() as f64;
    match kind {
        NormKind::MeanVar => {
            let mean_dn = dn.iter().sum::<f64>() / n;
            let mean_dnn = dn.iter().zip(normed).map(|(a, b)| a * b).sum::<f64>() / n;
            dn.iter()
                .zip(normed)
                .map(|(d, nv)| (d - mean_dn - nv * mean_dnn) / scale)
                .collect()
        }
        NormKind::Rms => {
            // n = x / rms; dx = (dn - n * mean(dn .* n)) / rms
            let mean_dnn = dn.iter().zip(normed).map(|(a, b)| a * b).sum::<f64>() / n;
            dn.iter()
                .zip(normed)
                .map(|(d, nv)| (d - nv * mean_dnn) / scale)
                .collect()
        }
    }
}

fn activate(kind: ActKind, z: f64) -> f64 {
    match kind {
        ActKind::Swish => z * crate::train::sigmoid(z),
        ActKind::Relu => z.max(0.0),
    }
}

fn activate_grad(kind: ActKind, z: f64) -> f64 {
    match kind {
        ActKind::Swish => {
            let s = crate::train::sigmoid(z);
            s + z * s * (1.0 - s)
        }
        ActKind::Relu => {
            if z > 0.0 {
                1.0
            } else {
                0.0
            }
        }
    }
}

struct ProbeForward {
    // block 1, per layer row: normalized input, pre-activation, activation
    row_normed: Vec<Vec<f64>>,
    row_pre: Vec<Vec<f64>>,
    row_act: Vec<Vec<f64>>,
    // block 2 caches (layout depends on topology)
    b2_normed: Vec<Vec<f64>>,
    b2_std: Vec<f64>,
    b2_pre: Vec<Vec<f64>>,
    // block 3
    flat: Vec<f64>,
    flat_normed: Vec<f64>,
    flat_std: f64,
    probs: Vec<f64>,
}

fn forward(params: &ProbeParams, hidden: &[Vec<f64>]) -> ProbeResult<ProbeForward> {
    let cfg = &params.cfg;
    let rows: &[Vec<f64>] = match cfg.topology {
        ProbeTopology::SingleLayer => {
            if hidden.len() != 1 {
                return Err(ProbeError::ShapeMismatch(format!(
                    "single-layer probe expects 1 layer, got {}",
                    hidden.len()
                )));
            }
            hidden
        }
        _ => {
            if hidden.len() != cfg.num_layers {
                return Err(ProbeError::ShapeMismatch(format!(
                    "expected {} layers, got {}",
                    cfg.num_layers,
                    hidden.len()
                )));
            }
            hidden
        }
    };
    for row in rows {
        if row.len() != cfg.hidden_dim {
            return Err(ProbeError::ShapeMismatch(format!(
                "expected width {}, got {}",
                cfg.hidden_dim,
                row.len()
            )));
        }
    }

    let (n1, n2, d) = (cfg.n1, cfg.n2, cfg.hidden_dim);
    let mut row_normed = Vec::with_capacity(rows.len());
    let mut row_pre = Vec::with_capacity(rows.len());
    let mut row_act = Vec::with_capacity(rows.len());
    for row in rows {
        let (normed, _scale) = normalize(cfg.norm, row);
        let mut pre = vec![0.0; n1];
        for (r, p) in pre.iter_mut().enumerate() {
            let w = &params.b1_w[r * d..(r + 1) * d];
            *p = w.iter().zip(&normed).map(|(a, b)| a * b).sum::<f64>() + params.b1_b[r];
        }
        let act: Vec<f64> = pre.iter().map(|&z| activate(cfg.activation, z)).collect();
        row_normed.push(normed);
        row_pre.push(pre);
        row_act.push(act);
    }

    let mut b2_normed = Vec::new();
    let mut b2_std = Vec::new();
    let mut b2_pre = Vec::new();
    let flat: Vec<f64> = match cfg.topology {
        ProbeTopology::SingleLayer => row_act[0].clone(),
        ProbeTopology::LayerAxis => {
            // Normalize the whole L x n1 activation array at once, then
            // reduce each feature's column along the layer axis. Per-column
            // normalization would subtract exactly the layer-constant
            // component, which is where most class signal lives.
            let l = rows.len();
            let all: Vec<f64> = row_act.iter().flat_map(|r| r.iter().copied()).collect();
            let (normed_all, std_all) = normalize(cfg.norm, &all);
            let mut flat = vec![0.0; n1 * n2];
            for j in 0..n1 {
                let col: Vec<f64> = (0..l).map(|i| normed_all[i * n1 + j]).collect();
                let mut pre = vec![0.0; n2];
                for (r, p) in pre.iter_mut().enumerate() {
                    let w = &params.b2_w[r * l..(r + 1) * l];
                    *p = w.iter().zip(&col).map(|(a, b)| a * b).sum::<f64>() + params.b2_b[r];
                }
                for (i, &z) in pre.iter().enumerate() {
                    flat[i * n1 + j] = activate(cfg.activation, z);
                }
                b2_pre.push(pre);
            }
            b2_normed.push(normed_all);
            b2_std.push(std_all);
            flat
        }
        ProbeTopology::PerLayer => {
            let l = rows.len();
            let mut flat = vec![0.0; l * n2];
            for (i, act) in row_act.iter().enumerate() {
                let (normed, std) = normalize(cfg.norm, act);
                let mut pre = vec![0.0; n2];
                for (r, p) in pre.iter_mut().enumerate() {
                    let w = &params.b2_w[r * n1..(r + 1) * n1];
                    *p = w.iter().zip(&normed).map(|(a, b)| a * b).sum::<f64>() + params.b2_b[r];
                }
                for (r, &z) in pre.iter().enumerate() {
                    flat[i * n2 + r] = activate(cfg.activation, z);
                }
                b2_normed.push(normed);
                b2_std.push(std);
                b2_pre.push(pre);
            }
            flat
        }
    };

    let (flat_normed, flat_std) = normalize(cfg.norm, &flat);
    let c = cfg.num_choices;
    let fw = flat.len();
    let mut logits = vec![0.0; c];
    for (r, logit) in logits.iter_mut().enumerate() {
        let w = &params.b3_w[r * fw..(r + 1) * fw];
        *logit = w.iter().zip(&flat_normed).map(|(a, b)| a * b).sum::<f64>() + params.b3_b[r];
    }
    let logp = crate::policy::log_softmax(&logits);
    Ok(ProbeForward {
        row_normed,
        row_pre,
        row_act,
        b2_normed,
        b2_std,
        b2_pre,
        flat,
        flat_normed,
        flat_std,
        probs: logp.iter().map(|l| l.exp()).collect(),
    })
}

/// Probability distribution over the choices for one hidden stack.
pub fn predictor_forward(params: &ProbeParams, hidden: &[Vec<f64>]) -> ProbeResult<Vec<f64>> {
    Ok(forward(params, hidden)?.probs)
}

/// Gradients mirroring [`ProbeParams`].
#[derive(Debug, Clone)]
pub struct ProbeGrads {
    pub b1_w: Vec<f64>,
    pub b1_b: Vec<f64>,
    pub b2_w: Vec<f64>,
    pub b2_b: Vec<f64>,
    pub b3_w: Vec<f64>,
    pub b3_b: Vec<f64>,
}

impl ProbeGrads {
    fn zeros_like(p: &ProbeParams) -> ProbeGrads {
        ProbeGrads {
            b1_w: vec![0.0; p.b1_w.len()],
            b1_b: vec![0.0; p.b1_b.len()],
            b2_w: vec![0.0; p.b2_w.len()],
            b2_b: vec![0.0; p.b2_b.len()],
            b3_w: vec![0.0; p.b3_w.len()],
            b3_b: vec![0.0; p.b3_b.len()],
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        [&self.b1_w, &self.b1_b, &self.b2_w, &self.b2_b, &self.b3_w, &self.b3_b]
            .iter()
            .flat_map(|s| s.iter().copied())
            .collect()
    }
}

/// Cross-entropy loss `-log p(label)` and exact gradients for one example,
/// scaled by `weight`.
pub fn ce_grad(
    params: &ProbeParams,
    hidden: &[Vec<f64>],
    label: usize,
    weight: f64,
) -> ProbeResult<(f64, ProbeGrads)> {
    let cfg = &params.cfg;
    if label >= cfg.num_choices {
        return Err(ProbeError::ShapeMismatch(format!(
            "label {label} out of range"
        )));
    }
    let pass = forward(params, hidden)?;
    let loss = -weight * pass.probs[label].max(1e-300).ln();
    let mut grads = ProbeGrads::zeros_like(params);

    // block 3 backward
    let mut dlogits: Vec<f64> = pass.probs.iter().map(|p| weight * p).collect();
    dlogits[label] -= weight;
    let fw = pass.flat.len();
    let mut dnflat = vec![0.0; fw];
    for (r, &g) in dlogits.iter().enumerate() {
        grads.b3_b[r] += g;
        let w = &params.b3_w[r * fw..(r + 1) * fw];
        let gw = &mut grads.b3_w[r * fw..(r + 1) * fw];
        for j in 0..fw {
            gw[j] += g * pass.flat_normed[j];
            dnflat[j] += g * w[j];
        }
    }
    let dflat = norm_backward(cfg.norm, &dnflat, &pass.flat_normed, pass.flat_std);

    // block 2 backward (or straight through for single-layer)
    let n1 = cfg.n1;
    let n2 = cfg.n2;
    let mut drow_act: Vec<Vec<f64>> = pass.row_act.iter().map(|r| vec![0.0; r.len()]).collect();
    match cfg.topology {
        ProbeTopology::SingleLayer => {
            drow_act[0].copy_from_slice(&dflat);
        }
        ProbeTopology::LayerAxis => {
            let l = pass.row_act.len();
            let normed_all = &pass.b2_normed[0];
            let mut dnormed_all = vec![0.0; l * n1];
            for j in 0..n1 {
                let pre = &pass.b2_pre[j];
                let mut dv = vec![0.0; n2];
                for i in 0..n2 {
                    dv[i] = dflat[i * n1 + j] * activate_grad(cfg.activation, pre[i]);
                }
                for (i, &g) in dv.iter().enumerate() {
                    grads.b2_b[i] += g;
                    let w = &params.b2_w[i * l..(i + 1) * l];
                    let gw = &mut grads.b2_w[i * l..(i + 1) * l];
                    for k in 0..l {
                        gw[k] += g * normed_all[k * n1 + j];
                        dnormed_all[k * n1 + j] += g * w[k];
                    }
                }
            }
            let dall = norm_backward(cfg.norm, &dnormed_all, normed_all, pass.b2_std[0]);
            for (idx, item) in dall.iter().enumerate() {
                drow_act[idx / n1][idx % n1] += item;
            }
        }
        ProbeTopology::PerLayer => {
            for (i, act_grad_row) in drow_act.iter_mut().enumerate() {
                let normed = &pass.b2_normed[i];
                let pre = &pass.b2_pre[i];
                let mut dv = vec![0.0; n2];
                for r in 0..n2 {
                    dv[r] = dflat[i * n2 + r] * activate_grad(cfg.activation, pre[r]);
                }
                let mut dnrow = vec![0.0; n1];
                for (r, &g) in dv.iter().enumerate() {
                    grads.b2_b[r] += g;
                    let w = &params.b2_w[r * n1..(r + 1) * n1];
                    let gw = &mut grads.b2_w[r * n1..(r + 1) * n1];
                    for k in 0..n1 {
                        gw[k] += g * normed[k];
                        dnrow[k] += g * w[k];
                    }
                }
                let drow = norm_backward(cfg.norm, &dnrow, normed, pass.b2_std[i]);
                for (k, item) in drow.iter().enumerate() {
                    act_grad_row[k] += item;
                }
            }
        }
    }

    // block 1 backward
    let d = cfg.hidden_dim;
    for (i, dact) in drow_act.iter().enumerate() {
        let pre = &pass.row_pre[i];
        let normed = &pass.row_normed[i];
        for (r, &g_act) in dact.iter().enumerate() {
            let g = g_act * activate_grad(cfg.activation, pre[r]);
            if g == 0.0 {
                continue;
            }
            grads.b1_b[r] += g;
            let gw = &mut grads.b1_w[r * d..(r + 1) * d];
            for k in 0..d {
                gw[k] += g * normed[k];
            }
        }
    }
    Ok((loss, grads))
}

fn apply_grads(params: &mut ProbeParams, grads: &ProbeGrads, lr: f64) {
    let upd = |p: &mut Vec<f64>, g: &Vec<f64>| {
        for (a, b) in p.iter_mut().zip(g) {
            *a -= lr * b;
        }
    };
    upd(&mut params.b1_w, &grads.b1_w);
    upd(&mut params.b1_b, &grads.b1_b);
    upd(&mut params.b2_w, &grads.b2_w);
    upd(&mut params.b2_b, &grads.b2_b);
    upd(&mut params.b3_w, &grads.b3_w);
    upd(&mut params.b3_b, &grads.b3_b);
}

fn accuracy(params: &ProbeParams, examples: &[&ProbeExample]) -> ProbeResult<f64> {
    if examples.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    for ex in examples {
        let probs = predictor_forward(params, &ex.hidden)?;
        let mut best = 0;
        for (i, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = i;
            }
        }
        if best == ex.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / examples.len() as f64)
}

/// Cross-entropy training with the same loop conventions as the policy
/// trainer (seeded shuffles, fixed-step SGD). Returns the trained predictor
/// and its held-out accuracy. Requires at least two examples per class.
pub fn train_probe(
    examples: &[ProbeExample],
    cfg: &ProbeConfig,
    train_fraction: f64,
) -> ProbeResult<(ProbeParams, f64)> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&train_fraction) || train_fraction <= 0.0 {
        return Err(ProbeError::Config("train_fraction must be in (0, 1)".into()));
    }
    let mut per_class = vec![0usize; cfg.num_choices];
    for ex in examples {
        if ex.label >= cfg.num_choices {
            return Err(ProbeError::ShapeMismatch(format!(
                "label {} out of range",
                ex.label
            )));
        }
        per_class[ex.label] += 1;
    }
    if let Some((class, _)) = per_class.iter().enumerate().find(|(_, n)| **n < 2) {
        return Err(ProbeError::InsufficientData(format!(
            "class {class} has fewer than 2 examples"
        )));
    }

    // Seeded split.
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, "probe-split"));
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
    let n_train = ((examples.len() as f64 * train_fraction).round() as usize)
        .clamp(1, examples.len() - 1);
    let train: Vec<&ProbeExample> = order[..n_train].iter().map(|&i| &examples[i]).collect();
    let val: Vec<&ProbeExample> = order[n_train..].iter().map(|&i| &examples[i]).collect();

    let mut params = build_predictor(cfg)?;
    let batch = cfg.batch_size.max(1).min(train.len());
    for epoch in 0..cfg.epochs {
        let mut idx: Vec<usize> = (0..train.len()).collect();
        let mut rng = rng_from_seed(derive_seed_indexed(cfg.seed, "probe-shuffle", epoch as u64));
        for i in (1..idx.len()).rev() {
            let j = rng.random_range(0..=i);
            idx.swap(i, j);
        }
        for chunk in idx.chunks(batch) {
            let weight = 1.0 / chunk.len() as f64;
            let mut grads: Option<ProbeGrads> = None;
            for &i in chunk {
                let (_, g) = ce_grad(&params, &train[i].hidden, train[i].label, weight)?;
                match grads.as_mut() {
                    None => grads = Some(g),
                    Some(acc) => {
                        for (a, b) in acc.b1_w.iter_mut().zip(&g.b1_w) {
                            *a += b;
                        }
                        for (a, b) in acc.b1_b.iter_mut().zip(&g.b1_b) {
                            *a += b;
                        }
                        for (a, b) in acc.b2_w.iter_mut().zip(&g.b2_w) {
                            *a += b;
                        }
                        for (a, b) in acc.b2_b.iter_mut().zip(&g.b2_b) {
                            *a += b;
                        }
                        for (a, b) in acc.b3_w.iter_mut().zip(&g.b3_w) {
                            *a += b;
                        }
                        for (a, b) in acc.b3_b.iter_mut().zip(&g.b3_b) {
                            *a += b;
                        }
                    }
                }
            }
            apply_grads(&mut params, &grads.unwrap(), cfg.learning_rate);
        }
    }
    let val_acc = accuracy(&params, &val)?;
    Ok((params, val_acc))
}

/// Accuracy profile across layers: for each layer, train a single-layer
/// probe (blocks 1 and 3 only) on that layer's vectors and record its
/// held-out accuracy. Per-layer seeds derive from the config seed, so
/// layers can train concurrently without changing the profile.
pub fn layerwise_probe(
    examples: &[ProbeExample],
    cfg: &ProbeConfig,
    train_fraction: f64,
) -> ProbeResult<Vec<f64>> {
    if examples.is_empty() {
        return Err(ProbeError::InsufficientData("no examples".into()));
    }
    let num_layers = examples[0].hidden.len();
    let mut profile = Vec::with_capacity(num_layers);
    for layer in 0..num_layers {
        let sliced: Vec<ProbeExample> = examples
            .iter()
            .map(|ex| ProbeExample {
                hidden: vec![ex.hidden[layer].clone()],
                label: ex.label,
            })
            .collect();
        let layer_cfg = ProbeConfig {
            topology: ProbeTopology::SingleLayer,
            num_layers: 1,
            seed: derive_seed_indexed(cfg.seed, "layer", layer as u64),
            ..cfg.clone()
        };
        let (_, acc) = train_probe(&sliced, &layer_cfg, train_fraction)?;
        profile.push(acc);
    }
    Ok(profile)
}

/// Export probe examples by running the model over prompts and capturing the
/// hidden stack at the position predicting the answer token.
pub fn export_examples(
    model: &PolicyModel,
    items: &[(Vec<TokenId>, usize)],
) -> ProbeResult<Vec<ProbeExample>> {
    items
        .iter()
        .map(|(prompt, label)| {
            let stack = model.hidden_stack(prompt)?;
            Ok(ProbeExample::from_stack(&stack, *label))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Binary container for exported examples
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct ExamplesHeader {
    format_version: u32,
    count: usize,
    num_layers: usize,
    hidden_dim: usize,
}

/// Write examples as a header-plus-64-bit-arrays container: labels as u64
/// little-endian, then hidden values as f64 little-endian in example-major,
/// layer-major order.
pub fn save_examples(examples: &[ProbeExample], path: &Path) -> ProbeResult<()> {
    if examples.is_empty() {
        return Err(ProbeError::InsufficientData("no examples to save".into()));
    }
    let header = ExamplesHeader {
        format_version: 1,
        count: examples.len(),
        num_layers: examples[0].hidden.len(),
        hidden_dim: examples[0].hidden[0].len(),
    };
    let bytes = serde_json::to_vec(&header)?;
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&(bytes.len() as u64).to_le_bytes())?;
    out.write_all(&bytes)?;
    for ex in examples {
        out.write_all(&(ex.label as u64).to_le_bytes())?;
        for layer in &ex.hidden {
            for v in layer {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn load_examples(path: &Path) -> ProbeResult<Vec<ProbeExample>> {
    let mut input = BufReader::new(File::open(path)?);
    let mut len_bytes = [0u8; 8];
    input.read_exact(&mut len_bytes)?;
    let mut header_bytes = vec![0u8; u64::from_le_bytes(len_bytes) as usize];
    input.read_exact(&mut header_bytes)?;
    let header: ExamplesHeader = serde_json::from_slice(&header_bytes)?;
    let mut out = Vec::with_capacity(header.count);
    let mut buf = [0u8; 8];
    for _ in 0..header.count {
        input.read_exact(&mut buf)?;
        let label = u64::from_le_bytes(buf) as usize;
        let mut hidden = Vec::with_capacity(header.num_layers);
        for _ in 0..header.num_layers {
            let mut layer = Vec::with_capacity(header.hidden_dim);
            for _ in 0..header.hidden_dim {
                input.read_exact(&mut buf)?;
                layer.push(f64::from_le_bytes(buf));
            }
            hidden.push(layer);
        }
        out.push(ProbeExample { hidden, label });
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
