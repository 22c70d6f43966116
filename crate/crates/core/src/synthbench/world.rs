//! Seeded generative model of region features.
//!
//! Each class `c` owns a direction `u_c`, `k_states` state directions
//! `v_{c,k}` and `l_scenes` context directions `z_{c,l}`, all drawn as
//! independent Gaussian directions (quasi-orthogonal in high dimension).
//!
//! - Box-supervised (base classes only): `normalize(u_c + a*v_{c,k} + noise)`
//! - Weak images (all classes): several proposals; the largest one is the
//!   context-rich `normalize(u_c + a*v_{c,k} + b*z_{c,l} + noise)`.
//!   Proposal areas are uniform draws with the largest one swapped onto the
//!   context-rich proposal, which encodes the assumption that max-size
//!   proposals cover the object plus its surroundings.
//! - Test boxes (all classes): same law as the box-supervised features.
//!
//! `a` is `state_strength`, `b` is `context_strength`, and `noise` has i.i.d.
//! `N(0, noise_sigma^2)` coordinates.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{l2_normalize, Embedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldSpec {
    pub dim: usize,
    pub n_classes: usize,
    /// Classes `0..n_base` have box supervision; the rest are novel.
    pub n_base: usize,
    pub k_states: usize,
    pub l_scenes: usize,
    pub state_strength: f64,
    pub context_strength: f64,
    pub noise_sigma: f64,
    /// Root seed of every random draw in a run.
    pub seed: u64,
    pub det_per_class: usize,
    pub weak_per_class: usize,
    pub test_per_class: usize,
    /// Proposals per weak image (the context-rich one included).
    pub proposals_per_image: usize,
    /// Norm of the per-text perturbation added by the calibrated encoder.
    pub encoder_noise: f64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            dim: 64,
            n_classes: 20,
            n_base: 10,
            k_states: 5,
            l_scenes: 5,
            state_strength: 0.6,
            context_strength: 0.8,
            noise_sigma: 0.3,
            seed: 0,
            det_per_class: 20,
            weak_per_class: 20,
            test_per_class: 100,
            proposals_per_image: 4,
            encoder_noise: 0.1,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let infeasible = |m: String| Err(Error::SpecInfeasible(m));
        if self.n_base == 0 || self.n_base >= self.n_classes {
            return infeasible(format!(
                "need 1 <= n_base < n_classes, got n_base={}, n_classes={}",
                self.n_base, self.n_classes
            ));
        }
        if self.k_states == 0 || self.l_scenes == 0 {
            return infeasible("k_states and l_scenes must be >= 1".into());
        }
        let needed = self.n_classes + self.k_states + self.l_scenes;
        if self.dim < needed {
            return infeasible(format!("dim {} < n_classes + k_states + l_scenes = {needed}", self.dim));
        }
        for (name, v) in [
            ("state_strength", self.state_strength),
            ("context_strength", self.context_strength),
            ("noise_sigma", self.noise_sigma),
            ("encoder_noise", self.encoder_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return infeasible(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.proposals_per_image == 0 {
            return infeasible("proposals_per_image must be >= 1".into());
        }
        if self.det_per_class == 0 || self.weak_per_class == 0 || self.test_per_class == 0 {
            return infeasible("per-class sample counts must be >= 1".into());
        }
        Ok(())
    }

    pub fn is_base(&self, class_id: usize) -> bool {
        class_id < self.n_base
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    DetBox,
    WeakImage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub area: f64,
    pub feature: Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToySample {
    pub kind: SampleKind,
    /// Box feature for `DetBox`; whole-image feature for `WeakImage`.
    pub feature: Embedding,
    pub label: usize,
    /// Latent state index, kept for diagnostics.
    pub state: usize,
    pub proposals: Option<Vec<Proposal>>,
}

/// Ground-truth factor directions of a world (unit vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldFactors {
    pub class_dirs: Vec<Embedding>,
    pub state_dirs: Vec<Vec<Embedding>>,
    pub scene_dirs: Vec<Vec<Embedding>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub spec: WorldSpec,
    pub det: Vec<ToySample>,
    pub weak: Vec<ToySample>,
    pub test: Vec<ToySample>,
    pub factors: WorldFactors,
}

impl World {
    pub fn class_name(class_id: usize) -> String {
        format!("class{class_id:03}")
    }
}

pub(crate) fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

pub(crate) fn random_direction(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    loop {
        let v = gaussian(rng, dim, 1.0);
        if let Ok(u) = Embedding::new(v).and_then(|e| l2_normalize(&e)) {
            return u;
        }
    }
}

fn combine(terms: &[(f64, &[f64])], noise: &[f64]) -> Result<Embedding> {
    let mut v = noise.to_vec();
    for (w, dir) in terms {
        for (a, d) in v.iter_mut().zip(dir.iter()) {
            *a += w * d;
        }
    }
    l2_normalize(&Embedding::new(v)?)
}

/// Generates the box-supervised, weak and test sets of a world.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.dim;
    let class_dirs: Vec<Embedding> = (0..spec.n_classes).map(|_| random_direction(&mut rng, dim)).collect();
    let state_dirs: Vec<Vec<Embedding>> = (0..spec.n_classes)
        .map(|_| (0..spec.k_states).map(|_| random_direction(&mut rng, dim)).collect())
        .collect();
    let scene_dirs: Vec<Vec<Embedding>> = (0..spec.n_classes)
        .map(|_| (0..spec.l_scenes).map(|_| random_direction(&mut rng, dim)).collect())
        .collect();

    let object = |rng: &mut ChaCha8Rng, c: usize| -> Result<(usize, Embedding)> {
        let k = rng.random_range(0..spec.k_states);
        let noise = gaussian(rng, dim, spec.noise_sigma);
        let f = combine(
            &[
                (1.0, class_dirs[c].as_slice()),
                (spec.state_strength, state_dirs[c][k].as_slice()),
            ],
            &noise,
        )?;
        Ok((k, f))
    };

    let mut det = Vec::with_capacity(spec.n_base * spec.det_per_class);
    for c in 0..spec.n_base {
        for _ in 0..spec.det_per_class {
            let (state, feature) = object(&mut rng, c)?;
            det.push(ToySample {
                kind: SampleKind::DetBox,
                feature,
                label: c,
                state,
                proposals: None,
            });
        }
    }

    let mut weak = Vec::with_capacity(spec.n_classes * spec.weak_per_class);
    for c in 0..spec.n_classes {
        for _ in 0..spec.weak_per_class {
            let k = rng.random_range(0..spec.k_states);
            let l = rng.random_range(0..spec.l_scenes);
            let noise = gaussian(&mut rng, dim, spec.noise_sigma);
            let rich = combine(
                &[
                    (1.0, class_dirs[c].as_slice()),
                    (spec.state_strength, state_dirs[c][k].as_slice()),
                    (spec.context_strength, scene_dirs[c][l].as_slice()),
                ],
                &noise,
            )?;
            let n = spec.proposals_per_image;
            let rich_at = rng.random_range(0..n);
            let mut areas: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..1.0)).collect();
            let largest = (0..n).fold(0, |best, i| if areas[i] > areas[best] { i } else { best });
            areas.swap(largest, rich_at);
            let mut proposals = Vec::with_capacity(n);
            for (i, area) in areas.into_iter().enumerate() {
                let feature = if i == rich_at {
                    rich.clone()
                } else {
                    // Partial crop: weaker object evidence, no context.
                    let noise = gaussian(&mut rng, dim, spec.noise_sigma);
                    combine(&[(0.5, class_dirs[c].as_slice())], &noise)?
                };
                proposals.push(Proposal { area, feature });
            }
            let mut whole = vec![0.0; dim];
            for p in &proposals {
                for (a, v) in whole.iter_mut().zip(p.feature.as_slice()) {
                    *a += v;
                }
            }
            weak.push(ToySample {
                kind: SampleKind::WeakImage,
                feature: l2_normalize(&Embedding::new(whole)?).unwrap_or_else(|_| rich.clone()),
                label: c,
                state: k,
                proposals: Some(proposals),
            });
        }
    }

    let mut test = Vec::with_capacity(spec.n_classes * spec.test_per_class);
    for c in 0..spec.n_classes {
        for _ in 0..spec.test_per_class {
            let (state, feature) = object(&mut rng, c)?;
            test.push(ToySample {
                kind: SampleKind::DetBox,
                feature,
                label: c,
                state,
                proposals: None,
            });
        }
    }

    Ok(World {
        spec: spec.clone(),
        det,
        weak,
        test,
        factors: WorldFactors {
            class_dirs,
            state_dirs,
            scene_dirs,
        },
    })
}

/// Feature of the largest-area proposal; ties go to the lowest index.
pub fn select_max_size_proposal(sample: &ToySample) -> Result<&Embedding> {
    if sample.kind != SampleKind::WeakImage {
        return Err(Error::NotWeakImage);
    }
    let proposals = sample.proposals.as_deref().ok_or(Error::EmptyProposals)?;
    let first = proposals.first().ok_or(Error::EmptyProposals)?;
    let best = proposals
        .iter()
        .skip(1)
        .fold(first, |best, p| if p.area > best.area { p } else { best });
    Ok(&best.feature)
}
