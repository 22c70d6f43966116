//! Synthetic descriptions and prototype banks for a generated world.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::world::World;
use crate::descriptions::{DescriptionMap, DescriptionSet, EncoderKind, TextEncoder, ToyEncoder};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::prototypes::{build_bank_with, BankOptions, PrototypeBank};

/// How synthetic description texts are turned into embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DescMode {
    /// Every text goes through the hash encoder; prototypes carry no
    /// information about the world.
    Hash,
    /// Texts map to the world's factor directions plus a small per-text
    /// perturbation. Descriptions beyond the world's `k_states` / `l_scenes`
    /// map to spurious directions, like redundant or hallucinated LLM output.
    TrueDirections,
}

pub fn generic_text(class: &str) -> String {
    format!("a photo of a {class}")
}

pub fn state_text(class: &str, k: usize) -> String {
    format!("a {class} in state {k}")
}

pub fn scene_text(class: &str, l: usize) -> String {
    format!("{class} + context {l}")
}

/// `k` state descriptions and `l` scene phrases for every class of the world.
pub fn world_descriptions(world: &World, k: usize, l: usize) -> Result<DescriptionMap> {
    (0..world.spec.n_classes)
        .map(|c| {
            let name = World::class_name(c);
            let set = DescriptionSet::new(
                name.clone(),
                generic_text(&name),
                (0..k).map(|i| state_text(&name, i)).collect(),
                (0..l).map(|i| scene_text(&name, i)).collect(),
            )?;
            Ok((name, set))
        })
        .collect()
}

/// Table encoder aligned with a world's factor directions.
pub struct WorldEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl WorldEncoder {
    pub fn new(world: &World, k: usize, l: usize) -> Result<Self> {
        let spec = &world.spec;
        let noise = ToyEncoder::new(spec.dim, spec.seed ^ 0x5eed_7e87)?;
        let spurious = ToyEncoder::new(spec.dim, spec.seed ^ 0x0ff_d1ec)?;
        let unit_hash = |enc: &ToyEncoder, text: &str| -> Result<Vec<f64>> {
            let v = enc.embed(text)?;
            let n = crate::vector::norm(&v);
            Ok(v.into_iter().map(|x| x / n).collect())
        };
        let mut table = HashMap::new();
        let mut put = |text: String, dirs: &[(f64, &[f64])]| -> Result<()> {
            let mut v: Vec<f64> = unit_hash(&noise, &text)?
                .into_iter()
                .map(|x| x * spec.encoder_noise)
                .collect();
            for (w, d) in dirs {
                for (a, x) in v.iter_mut().zip(d.iter()) {
                    *a += w * x;
                }
            }
            table.insert(text, v);
            Ok(())
        };
        for c in 0..spec.n_classes {
            let name = World::class_name(c);
            let u = world.factors.class_dirs[c].as_slice();
            put(generic_text(&name), &[(1.0, u)])?;
            for i in 0..k {
                let text = state_text(&name, i);
                let dir = match world.factors.state_dirs[c].get(i) {
                    Some(d) => d.as_slice().to_vec(),
                    None => unit_hash(&spurious, &text)?,
                };
                put(text, &[(1.0, u), (spec.state_strength, &dir)])?;
            }
            for i in 0..l {
                let text = scene_text(&name, i);
                let dir = match world.factors.scene_dirs[c].get(i) {
                    Some(d) => d.as_slice().to_vec(),
                    None => unit_hash(&spurious, &text)?,
                };
                put(text, &[(1.0, u), (spec.context_strength, &dir)])?;
            }
        }
        Ok(WorldEncoder { dim: spec.dim, table })
    }
}

impl TextEncoder for WorldEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EncoderKind {
        EncoderKind::FixtureFile
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::EncoderUnavailable(format!("world has no embedding for {text:?}")))
    }
}

/// Builds the bank for a world. `opts.k == 0` gives name-only prototypes.
pub fn build_toy_bank(world: &World, mode: DescMode, opts: &BankOptions) -> Result<PrototypeBank> {
    build_toy_bank_with(world, mode, opts, Execution::default())
}

pub fn build_toy_bank_with(
    world: &World,
    mode: DescMode,
    opts: &BankOptions,
    exec: Execution,
) -> Result<PrototypeBank> {
    // Name-only banks still need one state per set to satisfy the
    // description invariants; it is never encoded.
    let desc = world_descriptions(world, opts.k.max(1), opts.l)?;
    match mode {
        DescMode::Hash => {
            let enc = ToyEncoder::new(world.spec.dim, world.spec.seed)?;
            build_bank_with(&desc, &enc, opts, exec)
        }
        DescMode::TrueDirections => {
            let enc = WorldEncoder::new(world, opts.k, opts.l)?;
            build_bank_with(&desc, &enc, opts, exec)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthbench::world::{generate_world, WorldSpec};
    use crate::vector::cosine;

    fn spec(seed: u64) -> WorldSpec {
        WorldSpec {
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn bank_shapes() {
        let w = generate_world(&spec(0)).unwrap();
        for mode in [DescMode::Hash, DescMode::TrueDirections] {
            let bank = build_toy_bank(&w, mode, &BankOptions::default()).unwrap();
            assert_eq!(bank.num_classes(), w.spec.n_classes);
            assert_eq!(bank.l(), 5);
            assert_eq!(bank.k(), 5);
            assert_eq!(bank.vocab()[3], World::class_name(3));
        }
    }

    #[test]
    fn name_only_bank_is_near_class_direction() {
        let w = generate_world(&spec(0)).unwrap();
        let opts = BankOptions { k: 0, ..Default::default() };
        let bank = build_toy_bank(&w, DescMode::TrueDirections, &opts).unwrap();
        assert_eq!(bank.prototypes()[0].k_used, 0);
        for c in 0..w.spec.n_classes {
            let cos = cosine(bank.prototype(c), &w.factors.class_dirs[c]).unwrap();
            assert!(cos > 0.99, "{cos}");
        }
    }

    #[test]
    fn state_prototypes_fit_state_perturbed_features_better() {
        for seed in 0..5 {
            let w = generate_world(&spec(seed)).unwrap();
            let name_only = build_toy_bank(&w, DescMode::TrueDirections, &BankOptions { k: 0, ..Default::default() }).unwrap();
            let sesp = build_toy_bank(&w, DescMode::TrueDirections, &BankOptions::default()).unwrap();
            let mean_cos = |bank: &PrototypeBank| {
                w.test
                    .iter()
                    .map(|s| cosine(&s.feature, bank.prototype(s.label)).unwrap())
                    .sum::<f64>()
                    / w.test.len() as f64
            };
            let (a, b) = (mean_cos(&name_only), mean_cos(&sesp));
            assert!(b > a, "seed {seed}: sesp {b} <= name-only {a}");
        }
    }
}
