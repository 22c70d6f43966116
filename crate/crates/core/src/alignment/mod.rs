//! Loss kernels and their analytic gradients.
//!
//! All gradients are taken with respect to the feature embeddings (the
//! probe outputs). Prototypes are frozen text embeddings and receive none.
//!
//! - Scene alignment: cosine scores `s[b,c,l]` of each weak feature against
//!   every scene prototype, hard pseudo-labels `y = [c == c*_b && s >= tau]`,
//!   confidence weights `w = sigmoid(s)`, and the weighted multi-label BCE
//!   `-(1/B) sum w * (y log sigmoid(s) + (1-y) log(1 - sigmoid(s)))`.
//! - Classification: softmax cross-entropy over temperature-scaled cosine
//!   logits against the class prototypes, shared by the box-supervised and
//!   weakly supervised branches.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prototypes::PrototypeBank;
use crate::vector::{dot, log_sigmoid, norm, sigmoid, Embedding, SimilarityTensor};

/// Weight of the scene loss in the combined objective.
pub const DEFAULT_LAMBDA: f64 = 0.1;
/// Pseudo-label similarity threshold. Not given a value by the method; this
/// is an artifact default and is always echoed in run configs.
pub const DEFAULT_TAU: f64 = 0.25;
/// Softmax temperature of the classification losses.
pub const DEFAULT_TEMPERATURE: f64 = 0.05;

/// Max-size-proposal features of weakly labeled images with their
/// image-level labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WeakBatch {
    features: Vec<Embedding>,
    labels: Vec<usize>,
}

impl WeakBatch {
    pub fn new(features: Vec<Embedding>, labels: Vec<usize>) -> Result<Self> {
        if features.is_empty() {
            return Err(Error::Shape("weak batch is empty".into()));
        }
        if features.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} features but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features[0].dim();
        for f in &features {
            f.check_dim(dim)?;
        }
        Ok(WeakBatch { features, labels })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Embedding] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn check_against(&self, bank: &PrototypeBank) -> Result<()> {
        check_inputs(&self.features, &self.labels, bank)
    }
}

fn check_inputs(features: &[Embedding], labels: &[usize], bank: &PrototypeBank) -> Result<()> {
    if features.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} features but {} labels",
            features.len(),
            labels.len()
        )));
    }
    for f in features {
        f.check_dim(bank.dim())?;
        let n = f.norm();
        if n < crate::vector::ZERO_NORM_EPS {
            return Err(Error::ZeroNorm { norm: n });
        }
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= bank.num_classes()) {
        return Err(Error::LabelOutOfRange {
            label,
            vocab: bank.num_classes(),
        });
    }
    Ok(())
}

/// `s[b,c,l] = cos(features[b], scene[c][l])`.
pub fn scene_similarities(batch: &WeakBatch, bank: &PrototypeBank) -> Result<SimilarityTensor> {
    batch.check_against(bank)?;
    let (nc, nl) = (bank.num_classes(), bank.l());
    let mut scores = Vec::with_capacity(batch.len() * nc * nl);
    for f in &batch.features {
        let nf = f.norm();
        for c in 0..nc {
            for p in bank.scenes(c) {
                let s = dot(f.as_slice(), p.as_slice()) / (nf * p.norm());
                scores.push(s.clamp(-1.0, 1.0));
            }
        }
    }
    SimilarityTensor::new(batch.len(), nc, nl, scores)
}

/// Hard pseudo-labels and confidence weights over a similarity tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelGrid {
    s: SimilarityTensor,
    y: Vec<u8>,
    w: Vec<f64>,
    logit_scale: f64,
}

impl PseudoLabelGrid {
    pub fn similarities(&self) -> &SimilarityTensor {
        &self.s
    }

    pub fn y(&self, b: usize, c: usize, l: usize) -> u8 {
        self.y[self.s.index(b, c, l)]
    }

    pub fn w(&self, b: usize, c: usize, l: usize) -> f64 {
        self.w[self.s.index(b, c, l)]
    }

    /// Flat labels in `(b, c, l)` row-major order.
    pub fn labels(&self) -> &[u8] {
        &self.y
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn logit_scale(&self) -> f64 {
        self.logit_scale
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }
}

/// `y[b,c,l] = 1` iff `c == labels[b]` and `s[b,c,l] >= tau`;
/// `w = sigmoid(s)` everywhere.
pub fn assign_pseudo_labels(s: &SimilarityTensor, labels: &[usize], tau: f64) -> Result<PseudoLabelGrid> {
    assign_pseudo_labels_scaled(s, labels, tau, 1.0)
}

/// As [`assign_pseudo_labels`] with `w = sigmoid(logit_scale * s)`.
pub fn assign_pseudo_labels_scaled(
    s: &SimilarityTensor,
    labels: &[usize],
    tau: f64,
    logit_scale: f64,
) -> Result<PseudoLabelGrid> {
    if !(-1.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("tau must lie in [-1, 1], got {tau}")));
    }
    if !(logit_scale > 0.0 && logit_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("logit_scale must be > 0, got {logit_scale}")));
    }
    let (nb, nc, nl) = s.shape();
    if labels.len() != nb {
        return Err(Error::Shape(format!("{} labels for batch of {nb}", labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= nc) {
        return Err(Error::LabelOutOfRange { label, vocab: nc });
    }
    let mut y = vec![0u8; nb * nc * nl];
    for (b, &target) in labels.iter().enumerate() {
        for l in 0..nl {
            let i = s.index(b, target, l);
            if s.as_slice()[i] >= tau {
                y[i] = 1;
            }
        }
    }
    let w = s.as_slice().iter().map(|&v| sigmoid(logit_scale * v)).collect();
    Ok(PseudoLabelGrid {
        s: s.clone(),
        y,
        w,
        logit_scale,
    })
}

/// One scene-loss term `-w * bce(y, z)` with `z = scale * s`, and its
/// derivative with respect to `s`.
#[inline]
fn scene_term(s: f64, positive: bool, scale: f64, detach_weights: bool) -> (f64, f64) {
    let z = scale * s;
    let p = sigmoid(z);
    let (bce, dbce) = if positive {
        (log_sigmoid(z), 1.0 - p)
    } else {
        (log_sigmoid(-z), -p)
    };
    let dw = if detach_weights { 0.0 } else { p * (1.0 - p) };
    (-p * bce, -scale * (dw * bce + p * dbce))
}

/// Confidence-weighted multi-label BCE over a pseudo-label grid.
pub fn scene_loss(grid: &PseudoLabelGrid) -> f64 {
    let (nb, _, _) = grid.s.shape();
    let total: f64 = grid
        .s
        .as_slice()
        .iter()
        .zip(&grid.y)
        .map(|(&s, &y)| scene_term(s, y == 1, grid.logit_scale, false).0)
        .sum();
    total / nb as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneLossConfig {
    pub tau: f64,
    /// Multiplier applied to `s` before the sigmoid; 1.0 is the literal loss.
    pub logit_scale: f64,
    /// Treat `w` as a constant when differentiating.
    pub detach_weights: bool,
}

impl Default for SceneLossConfig {
    fn default() -> Self {
        SceneLossConfig {
            tau: DEFAULT_TAU,
            logit_scale: 1.0,
            detach_weights: false,
        }
    }
}

impl SceneLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=1.0).contains(&self.tau) {
            return Err(Error::InvalidConfig(format!("tau must lie in [-1, 1], got {}", self.tau)));
        }
        if !(self.logit_scale > 0.0 && self.logit_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "logit_scale must be > 0, got {}",
                self.logit_scale
            )));
        }
        Ok(())
    }
}

/// Loss value with one gradient vector per input feature.
#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: Vec<Vec<f64>>,
}

impl LossAndGrad {
    fn empty() -> Self {
        LossAndGrad {
            loss: 0.0,
            grads: Vec::new(),
        }
    }

    /// Sums per-item contributions in item order and divides by the count.
    fn reduce_mean(items: Vec<(f64, Vec<f64>)>) -> Self {
        let n = items.len() as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(items.len());
        for (l, mut g) in items {
            loss += l;
            g.iter_mut().for_each(|v| *v /= n);
            grads.push(g);
        }
        LossAndGrad { loss: loss / n, grads }
    }
}

/// Gradient of `sum_j coef_j * cos(f, p_j)` with respect to `f`, given
/// `acc_p = sum_j coef_j * p_j / |p_j|` and `acc_s = sum_j coef_j * cos_j`.
fn combine_cos_grads(f: &[f64], nf: f64, acc_p: &[f64], acc_s: f64) -> Vec<f64> {
    let b = acc_s / (nf * nf);
    f.iter().zip(acc_p).map(|(fi, pi)| pi / nf - b * fi).collect()
}

fn scene_item(f: &[f64], target: usize, bank: &PrototypeBank, cfg: &SceneLossConfig) -> (f64, Vec<f64>) {
    let nf = norm(f);
    let mut acc_p = vec![0.0; f.len()];
    let mut acc_s = 0.0;
    let mut loss = 0.0;
    for c in 0..bank.num_classes() {
        for p in bank.scenes(c) {
            let np = p.norm();
            let s = (dot(f, p.as_slice()) / (nf * np)).clamp(-1.0, 1.0);
            let positive = c == target && s >= cfg.tau;
            let (term, dterm) = scene_term(s, positive, cfg.logit_scale, cfg.detach_weights);
            loss += term;
            acc_s += dterm * s;
            let k = dterm / np;
            for (a, v) in acc_p.iter_mut().zip(p.as_slice()) {
                *a += k * v;
            }
        }
    }
    (loss, combine_cos_grads(f, nf, &acc_p, acc_s))
}

/// Scene loss and its gradient with respect to each feature. Labels are
/// recomputed from the current scores and held constant; weights are
/// differentiated unless `cfg.detach_weights`.
pub fn scene_loss_grad(batch: &WeakBatch, bank: &PrototypeBank, cfg: &SceneLossConfig) -> Result<LossAndGrad> {
    scene_loss_grad_with(batch, bank, cfg, Execution::default())
}

pub fn scene_loss_grad_with(
    batch: &WeakBatch,
    bank: &PrototypeBank,
    cfg: &SceneLossConfig,
    exec: Execution,
) -> Result<LossAndGrad> {
    cfg.validate()?;
    batch.check_against(bank)?;
    let items = exec.map_range(batch.len(), |b| {
        scene_item(batch.features[b].as_slice(), batch.labels[b], bank, cfg)
    });
    Ok(LossAndGrad::reduce_mean(items))
}

fn softmax_ce_item(f: &[f64], target: usize, bank: &PrototypeBank, temperature: f64) -> (f64, Vec<f64>) {
    let nf = norm(f);
    let nc = bank.num_classes();
    let mut cos = Vec::with_capacity(nc);
    for c in 0..nc {
        let p = bank.prototype(c);
        cos.push((dot(f, p.as_slice()) / (nf * p.norm())).clamp(-1.0, 1.0));
    }
    let logits: Vec<f64> = cos.iter().map(|c| c / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = logits.iter().map(|z| (z - max).exp()).sum();
    let lse = max + sum_exp.ln();
    let loss = lse - logits[target];

    let mut acc_p = vec![0.0; f.len()];
    let mut acc_s = 0.0;
    for c in 0..nc {
        let prob = (logits[c] - lse).exp();
        let dlogit = prob - if c == target { 1.0 } else { 0.0 };
        let coef = dlogit / temperature;
        acc_s += coef * cos[c];
        let p = bank.prototype(c);
        let k = coef / p.norm();
        for (a, v) in acc_p.iter_mut().zip(p.as_slice()) {
            *a += k * v;
        }
    }
    (loss, combine_cos_grads(f, nf, &acc_p, acc_s))
}

fn softmax_ce(
    features: &[Embedding],
    labels: &[usize],
    bank: &PrototypeBank,
    temperature: f64,
    exec: Execution,
) -> Result<LossAndGrad> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {temperature}")));
    }
    check_inputs(features, labels, bank)?;
    if features.is_empty() {
        return Ok(LossAndGrad::empty());
    }
    let items = exec.map_range(features.len(), |i| {
        softmax_ce_item(features[i].as_slice(), labels[i], bank, temperature)
    });
    Ok(LossAndGrad::reduce_mean(items))
}

/// Mean softmax cross-entropy of the weak (max-size proposal) features
/// against their image-level labels.
pub fn weak_cls_loss(batch: &WeakBatch, bank: &PrototypeBank, temperature: f64) -> Result<LossAndGrad> {
    softmax_ce(&batch.features, &batch.labels, bank, temperature, Execution::default())
}

pub fn weak_cls_loss_with(
    batch: &WeakBatch,
    bank: &PrototypeBank,
    temperature: f64,
    exec: Execution,
) -> Result<LossAndGrad> {
    softmax_ce(&batch.features, &batch.labels, bank, temperature, exec)
}

/// Mean softmax cross-entropy of box-supervised features. An empty input
/// has loss 0 and no gradients.
pub fn det_cls_loss(
    features: &[Embedding],
    labels: &[usize],
    bank: &PrototypeBank,
    temperature: f64,
) -> Result<LossAndGrad> {
    softmax_ce(features, labels, bank, temperature, Execution::default())
}

pub fn det_cls_loss_with(
    features: &[Embedding],
    labels: &[usize],
    bank: &PrototypeBank,
    temperature: f64,
    exec: Execution,
) -> Result<LossAndGrad> {
    softmax_ce(features, labels, bank, temperature, exec)
}

/// Loss components of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_det_cls: f64,
    pub l_weak: f64,
    pub l_scene: f64,
    pub total: f64,
    pub lambda: f64,
}

/// `total = det + weak + lambda * scene`.
pub fn total_loss(l_det_cls: f64, l_weak: f64, l_scene: f64, lambda: f64) -> Result<LossReport> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(LossReport {
        l_det_cls,
        l_weak,
        l_scene,
        total: l_det_cls + l_weak + lambda * l_scene,
        lambda,
    })
}
