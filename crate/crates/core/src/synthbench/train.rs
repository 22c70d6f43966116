//! Linear probe trained with the combined classification + scene objective.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bank::DescMode;
use super::world::{select_max_size_proposal, ToySample, World, WorldSpec};
use crate::alignment::{
    det_cls_loss_with, scene_loss_grad_with, total_loss, weak_cls_loss_with, LossReport, SceneLossConfig,
    WeakBatch, DEFAULT_LAMBDA, DEFAULT_TAU, DEFAULT_TEMPERATURE,
};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prototypes::{argmax, classify, AggregateOptions, BankOptions, PrototypeBank, Strategy, DEFAULT_K, DEFAULT_L};
use crate::vector::Embedding;

/// Affine map `e = W^T x + b` from raw features into the embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub dim_in: usize,
    pub dim_embed: usize,
    /// Row-major `dim_in x dim_embed`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ProbeInit {
    Identity,
    /// Identity plus `N(0, scale^2 / dim_in)` entries.
    PerturbedIdentity { scale: f64 },
    /// `N(0, scale^2 / dim_in)` entries.
    Random { scale: f64 },
}

impl ProbeModel {
    pub fn identity(dim: usize) -> Self {
        let mut weight = vec![0.0; dim * dim];
        for i in 0..dim {
            weight[i * dim + i] = 1.0;
        }
        ProbeModel {
            dim_in: dim,
            dim_embed: dim,
            weight,
            bias: vec![0.0; dim],
        }
    }

    pub fn init(init: ProbeInit, dim_in: usize, dim_embed: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let std = |scale: f64| scale / (dim_in as f64).sqrt();
        let mut probe = ProbeModel {
            dim_in,
            dim_embed,
            weight: vec![0.0; dim_in * dim_embed],
            bias: vec![0.0; dim_embed],
        };
        match init {
            ProbeInit::Identity | ProbeInit::PerturbedIdentity { .. } if dim_in != dim_embed => {
                return Err(Error::InvalidConfig(format!(
                    "identity probe needs dim_in == dim_embed, got {dim_in} and {dim_embed}"
                )));
            }
            ProbeInit::Identity => probe = ProbeModel::identity(dim_in),
            ProbeInit::PerturbedIdentity { scale } => {
                probe = ProbeModel::identity(dim_in);
                let noise = super::world::gaussian(&mut rng, dim_in * dim_embed, std(scale));
                probe.weight.iter_mut().zip(noise).for_each(|(w, n)| *w += n);
            }
            ProbeInit::Random { scale } => {
                probe.weight = super::world::gaussian(&mut rng, dim_in * dim_embed, std(scale));
            }
        }
        Ok(probe)
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim_in);
        let mut out = self.bias.clone();
        for (xi, row) in x.iter().zip(self.weight.chunks_exact(self.dim_embed)) {
            if *xi != 0.0 {
                for (o, w) in out.iter_mut().zip(row) {
                    *o += xi * w;
                }
            }
        }
        out
    }

    pub fn embed(&self, x: &Embedding) -> Result<Embedding> {
        x.check_dim(self.dim_in)?;
        Embedding::new(self.forward(x.as_slice()))
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Scene-loss weight.
    pub lambda: f64,
    pub tau: f64,
    pub temperature: f64,
    pub logit_scale: f64,
    pub detach_weights: bool,
    /// State descriptions per class (SESP arm).
    pub k: usize,
    /// Scene phrases per class.
    pub l: usize,
    pub aggregator: Strategy,
    pub normalize_inputs: bool,
    pub clamp_negative_weights: bool,
    /// Off: name-only prototypes (k = 0).
    pub use_sesp: bool,
    /// Off: scene loss removed (effective lambda = 0).
    pub use_sapp: bool,
    pub lr: f64,
    pub steps: usize,
    /// `None` is full batch; otherwise seeded mini-batches of this many
    /// samples from each of the box-supervised and weak sets.
    pub batch_size: Option<usize>,
    pub probe_init: ProbeInit,
    pub desc_mode: DescMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            temperature: DEFAULT_TEMPERATURE,
            logit_scale: 1.0,
            detach_weights: false,
            k: DEFAULT_K,
            l: DEFAULT_L,
            aggregator: Strategy::Mean,
            normalize_inputs: false,
            clamp_negative_weights: true,
            use_sesp: true,
            use_sapp: true,
            lr: 0.5,
            steps: 300,
            batch_size: None,
            probe_init: ProbeInit::Identity,
            desc_mode: DescMode::TrueDirections,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be >= 0, got {}", self.lr));
        }
        if self.steps == 0 {
            return bad("steps must be >= 1".into());
        }
        if self.k == 0 || self.l == 0 {
            return bad("k and l must be >= 1 (disable SESP with use_sesp = false)".into());
        }
        if self.batch_size == Some(0) {
            return bad("batch_size must be >= 1".into());
        }
        self.scene_config().validate()
    }

    pub fn scene_config(&self) -> SceneLossConfig {
        SceneLossConfig {
            tau: self.tau,
            logit_scale: self.logit_scale,
            detach_weights: self.detach_weights,
        }
    }

    /// Scene-loss weight actually applied.
    pub fn effective_lambda(&self) -> f64 {
        if self.use_sapp {
            self.lambda
        } else {
            0.0
        }
    }

    pub fn bank_options(&self) -> BankOptions {
        BankOptions {
            strategy: self.aggregator,
            k: if self.use_sesp { self.k } else { 0 },
            l: self.l,
            aggregate: AggregateOptions {
                normalize_inputs: self.normalize_inputs,
                normalize_output: true,
                clamp_negative_weights: self.clamp_negative_weights,
            },
        }
    }
}

/// Raw training inputs: box features with labels, and the max-size
/// proposal of every weak image with its image-level label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainData {
    pub det_features: Vec<Embedding>,
    pub det_labels: Vec<usize>,
    pub weak_features: Vec<Embedding>,
    pub weak_labels: Vec<usize>,
}

impl TrainData {
    pub fn from_samples(det: &[ToySample], weak: &[ToySample]) -> Result<Self> {
        let weak_features = weak
            .iter()
            .map(|s| select_max_size_proposal(s).cloned())
            .collect::<Result<Vec<_>>>()?;
        Ok(TrainData {
            det_features: det.iter().map(|s| s.feature.clone()).collect(),
            det_labels: det.iter().map(|s| s.label).collect(),
            weak_features,
            weak_labels: weak.iter().map(|s| s.label).collect(),
        })
    }

    pub fn from_world(world: &World) -> Result<Self> {
        Self::from_samples(&world.det, &world.weak)
    }
}

fn batch_indices(n: usize, batch: Option<usize>, order: &mut [usize], cursor: &mut usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match batch {
        None => (0..n).collect(),
        Some(size) => {
            let size = size.min(n);
            let mut out = Vec::with_capacity(size);
            while out.len() < size {
                if *cursor == 0 {
                    order.shuffle(rng);
                }
                out.push(order[*cursor]);
                *cursor = (*cursor + 1) % n;
            }
            out
        }
    }
}

fn embed_all(probe: &ProbeModel, xs: &[Embedding], idx: &[usize], step: usize) -> Result<Vec<Embedding>> {
    idx.iter()
        .map(|&i| {
            probe.embed(&xs[i]).map_err(|e| match e {
                Error::NonFinite { .. } => Error::DivergenceDetected { step, total: f64::NAN },
                other => other,
            })
        })
        .collect()
}

/// Gradient descent on `L_det + L_weak + lambda * L_scene`. Returns the
/// trained probe and one loss report per step, taken before that step's
/// update. Single-threaded.
pub fn train(
    probe: &ProbeModel,
    data: &TrainData,
    bank: &PrototypeBank,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ProbeModel, Vec<LossReport>)> {
    config.validate()?;
    if probe.dim_embed != bank.dim() {
        return Err(Error::DimensionMismatch {
            expected: bank.dim(),
            got: probe.dim_embed,
        });
    }
    if data.weak_features.is_empty() {
        return Err(Error::Shape("training needs at least one weak sample".into()));
    }
    let exec = Execution::Sequential;
    let lambda = config.effective_lambda();
    let scene_cfg = config.scene_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a1_0b5e);
    let (nd, nw) = (data.det_features.len(), data.weak_features.len());
    let (mut det_order, mut weak_order): (Vec<usize>, Vec<usize>) = ((0..nd).collect(), (0..nw).collect());
    let (mut det_cursor, mut weak_cursor) = (0usize, 0usize);

    let mut probe = probe.clone();
    let mut trace = Vec::with_capacity(config.steps);
    let (din, demb) = (probe.dim_in, probe.dim_embed);
    for step in 0..config.steps {
        let det_idx = if nd == 0 {
            Vec::new()
        } else {
            batch_indices(nd, config.batch_size, &mut det_order, &mut det_cursor, &mut rng)
        };
        let weak_idx = batch_indices(nw, config.batch_size, &mut weak_order, &mut weak_cursor, &mut rng);

        let det_emb = embed_all(&probe, &data.det_features, &det_idx, step)?;
        let det_labels: Vec<usize> = det_idx.iter().map(|&i| data.det_labels[i]).collect();
        let weak_emb = embed_all(&probe, &data.weak_features, &weak_idx, step)?;
        let weak_labels: Vec<usize> = weak_idx.iter().map(|&i| data.weak_labels[i]).collect();
        let weak_batch = WeakBatch::new(weak_emb, weak_labels)?;

        let det = det_cls_loss_with(&det_emb, &det_labels, bank, config.temperature, exec)?;
        let weak = weak_cls_loss_with(&weak_batch, bank, config.temperature, exec)?;
        let scene = if lambda > 0.0 {
            Some(scene_loss_grad_with(&weak_batch, bank, &scene_cfg, exec)?)
        } else {
            None
        };
        let report = total_loss(det.loss, weak.loss, scene.as_ref().map_or(0.0, |s| s.loss), lambda)?;
        if !report.total.is_finite() {
            return Err(Error::DivergenceDetected {
                step,
                total: report.total,
            });
        }
        trace.push(report);

        let mut grad_w = vec![0.0; din * demb];
        let mut grad_b = vec![0.0; demb];
        let mut accumulate = |x: &[f64], g: &[f64]| {
            for (xi, row) in x.iter().zip(grad_w.chunks_exact_mut(demb)) {
                for (gw, gj) in row.iter_mut().zip(g) {
                    *gw += xi * gj;
                }
            }
            for (gb, gj) in grad_b.iter_mut().zip(g) {
                *gb += gj;
            }
        };
        for (n, &i) in det_idx.iter().enumerate() {
            accumulate(data.det_features[i].as_slice(), &det.grads[n]);
        }
        for (n, &i) in weak_idx.iter().enumerate() {
            let mut g = weak.grads[n].clone();
            if let Some(scene) = &scene {
                for (a, s) in g.iter_mut().zip(&scene.grads[n]) {
                    *a += lambda * s;
                }
            }
            accumulate(data.weak_features[i].as_slice(), &g);
        }
        for (w, g) in probe.weight.iter_mut().zip(&grad_w) {
            *w -= config.lr * g;
        }
        for (b, g) in probe.bias.iter_mut().zip(&grad_b) {
            *b -= config.lr * g;
        }
        if !probe.is_finite() {
            return Err(Error::DivergenceDetected {
                step,
                total: report.total,
            });
        }
    }
    Ok((probe, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc_novel: f64,
    pub acc_base: f64,
    pub acc_all: f64,
    pub n_novel: usize,
    pub n_base: usize,
}

/// Top-1 accuracy of `argmax classify(probe(x))`, split into base
/// (`label < n_base`) and novel classes. An empty split reports 0.
pub fn evaluate(probe: &ProbeModel, bank: &PrototypeBank, test: &[ToySample], n_base: usize, temperature: f64) -> Result<Metrics> {
    if test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let (mut hit_base, mut hit_novel, mut n_b, mut n_n) = (0usize, 0usize, 0usize, 0usize);
    for s in test {
        let e = probe.embed(&s.feature)?;
        let pred = argmax(&classify(&e, bank, temperature)?);
        let hit = (pred == s.label) as usize;
        if s.label < n_base {
            n_b += 1;
            hit_base += hit;
        } else {
            n_n += 1;
            hit_novel += hit;
        }
    }
    let ratio = |h: usize, n: usize| if n == 0 { 0.0 } else { h as f64 / n as f64 };
    Ok(Metrics {
        acc_novel: ratio(hit_novel, n_n),
        acc_base: ratio(hit_base, n_b),
        acc_all: ratio(hit_base + hit_novel, n_b + n_n),
        n_novel: n_n,
        n_base: n_b,
    })
}

/// Zero-shot transfer: evaluates a trained probe on a second world drawn
/// with an unrelated seed (so with fresh class directions), using a bank
/// built from that world's own descriptions.
pub fn evaluate_transfer(probe: &ProbeModel, spec: &WorldSpec, config: &TrainConfig) -> Result<Metrics> {
    let target = WorldSpec {
        seed: spec.seed ^ 0x7a45_f3e2_0b1c_9d01,
        ..spec.clone()
    };
    let world = super::world::generate_world(&target)?;
    let bank = super::bank::build_toy_bank(&world, config.desc_mode, &config.bank_options())?;
    evaluate(probe, &bank, &world.test, target.n_base, config.temperature)
}
