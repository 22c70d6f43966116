//! Class prototypes and scene prototype sets.

mod aggregate;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::descriptions::{encode, DescriptionMap, TextEncoder};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::vector::{cosine, l2_normalize, Embedding};

pub use aggregate::{
    aggregate, aggregate_mean, aggregate_median, aggregate_similarity_weighted, aggregate_two_stage,
    AggregateOptions, Strategy,
};

/// Tolerance for the unit-norm invariant of stored prototypes.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Paper defaults for the number of state descriptions and scene phrases.
pub const DEFAULT_K: usize = 5;
pub const DEFAULT_L: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassPrototype {
    pub class_id: usize,
    pub vector: Embedding,
    pub strategy: Strategy,
    /// Number of state embeddings aggregated; 0 means name-only (the
    /// generic embedding alone).
    pub k_used: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BankOptions {
    pub strategy: Strategy,
    /// State descriptions aggregated per class; 0 builds name-only prototypes.
    pub k: usize,
    /// Scene phrases per class.
    pub l: usize,
    pub aggregate: AggregateOptions,
}

impl Default for BankOptions {
    fn default() -> Self {
        BankOptions {
            strategy: Strategy::Mean,
            k: DEFAULT_K,
            l: DEFAULT_L,
            aggregate: AggregateOptions::default(),
        }
    }
}

/// Per-class prototypes plus `L` scene prototypes per class, over a
/// lexicographically ordered vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    vocab: Vec<String>,
    sesp: Vec<ClassPrototype>,
    sapp: Vec<Vec<Embedding>>,
    dim: usize,
    strategy: Strategy,
    k: usize,
    l: usize,
}

impl PrototypeBank {
    /// Assembles a bank from parts, checking every invariant.
    pub fn from_parts(
        vocab: Vec<String>,
        strategy: Strategy,
        k: usize,
        sesp: Vec<Embedding>,
        sapp: Vec<Vec<Embedding>>,
    ) -> Result<Self> {
        if vocab.is_empty() {
            return Err(Error::Shape("empty vocabulary".into()));
        }
        if !vocab.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Shape("vocabulary must be strictly lexicographically ordered".into()));
        }
        if sesp.len() != vocab.len() || sapp.len() != vocab.len() {
            return Err(Error::Shape(format!(
                "{} classes but {} prototypes and {} scene sets",
                vocab.len(),
                sesp.len(),
                sapp.len()
            )));
        }
        let dim = sesp[0].dim();
        let l = sapp[0].len();
        if l == 0 {
            return Err(Error::Shape("scene sets must be non-empty".into()));
        }
        for e in sesp.iter().chain(sapp.iter().flatten()) {
            e.check_dim(dim)?;
            let n = e.norm();
            if (n - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::Shape(format!("bank vector has norm {n}, expected 1")));
            }
        }
        if let Some(bad) = sapp.iter().find(|s| s.len() != l) {
            return Err(Error::Shape(format!("scene set of length {} (expected {l})", bad.len())));
        }
        let sesp = sesp
            .into_iter()
            .enumerate()
            .map(|(class_id, vector)| ClassPrototype {
                class_id,
                vector,
                strategy,
                k_used: k,
            })
            .collect();
        Ok(PrototypeBank {
            vocab,
            sesp,
            sapp,
            dim,
            strategy,
            k,
            l,
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn num_classes(&self) -> usize {
        self.vocab.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn l(&self) -> usize {
        self.l
    }

    pub fn class_id(&self, name: &str) -> Option<usize> {
        self.vocab.binary_search_by(|v| v.as_str().cmp(name)).ok()
    }

    pub fn prototypes(&self) -> &[ClassPrototype] {
        &self.sesp
    }

    pub fn prototype(&self, class_id: usize) -> &Embedding {
        &self.sesp[class_id].vector
    }

    pub fn scenes(&self, class_id: usize) -> &[Embedding] {
        &self.sapp[class_id]
    }

    pub fn to_file(&self) -> BankFile {
        BankFile {
            dim: self.dim,
            vocab: self.vocab.clone(),
            strategy: self.strategy,
            k: self.k,
            l: self.l,
            sesp: self.sesp.iter().map(|p| p.vector.as_slice().to_vec()).collect(),
            sapp: self
                .sapp
                .iter()
                .map(|set| set.iter().map(|e| e.as_slice().to_vec()).collect())
                .collect(),
        }
    }

    pub fn from_file(file: BankFile) -> Result<Self> {
        let to_emb = |v: Vec<f64>| Embedding::new(v);
        let sesp = file.sesp.into_iter().map(to_emb).collect::<Result<Vec<_>>>()?;
        let sapp = file
            .sapp
            .into_iter()
            .map(|set| set.into_iter().map(to_emb).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let bank = PrototypeBank::from_parts(file.vocab, file.strategy, file.k, sesp, sapp)?;
        if bank.dim != file.dim || bank.l != file.l {
            return Err(Error::Shape(format!(
                "bank header says dim={}, l={} but vectors have dim={}, l={}",
                file.dim, file.l, bank.dim, bank.l
            )));
        }
        Ok(bank)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, &self.to_file())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_file(crate::io::read_json(path)?)
    }
}

/// On-disk bank: `{ dim, vocab, strategy, k, l, sesp, sapp }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankFile {
    pub dim: usize,
    pub vocab: Vec<String>,
    pub strategy: Strategy,
    pub k: usize,
    pub l: usize,
    pub sesp: Vec<Vec<f64>>,
    pub sapp: Vec<Vec<Vec<f64>>>,
}

/// Builds the bank with default aggregation options.
pub fn build_bank(
    desc: &DescriptionMap,
    enc: &dyn TextEncoder,
    strategy: Strategy,
    k: usize,
    l: usize,
) -> Result<PrototypeBank> {
    let opts = BankOptions {
        strategy,
        k,
        l,
        ..Default::default()
    };
    build_bank_with(desc, enc, &opts, Execution::default())
}

/// Encodes and aggregates every class. Classes are processed independently
/// (in parallel under [`Execution::Parallel`]) and assembled in vocabulary
/// order.
pub fn build_bank_with(
    desc: &DescriptionMap,
    enc: &dyn TextEncoder,
    opts: &BankOptions,
    exec: Execution,
) -> Result<PrototypeBank> {
    if opts.l == 0 {
        return Err(Error::InvalidConfig("l must be >= 1".into()));
    }
    let classes: Vec<_> = desc.iter().collect();
    let built = exec.try_map(&classes, |(name, set)| {
        if set.class_name != **name {
            return Err(Error::InvalidDescriptions {
                class: name.to_string(),
                reason: format!("keyed entry names class '{}'", set.class_name),
            });
        }
        let set = set.truncated(opts.k, opts.l)?;
        let generic = encode(&set.generic, enc)?;
        let proto = if opts.k == 0 {
            l2_normalize(&generic)?
        } else {
            let states = set
                .states
                .iter()
                .map(|t| encode(t, enc))
                .collect::<Result<Vec<_>>>()?;
            let agg = AggregateOptions {
                normalize_output: true,
                ..opts.aggregate
            };
            aggregate(opts.strategy, &generic, &states, &agg)?
        };
        let scenes = set
            .scenes
            .iter()
            .map(|t| encode(t, enc))
            .collect::<Result<Vec<_>>>()?;
        Ok((proto, scenes))
    })?;
    let vocab = desc.keys().cloned().collect();
    let (sesp, sapp) = built.into_iter().unzip();
    PrototypeBank::from_parts(vocab, opts.strategy, opts.k, sesp, sapp)
}

/// Temperature-scaled cosine logits of `feature` against every class prototype.
pub fn classify(feature: &Embedding, bank: &PrototypeBank, temperature: f64) -> Result<Vec<f64>> {
    if temperature.is_nan() || temperature <= 0.0 {
        return Err(Error::InvalidConfig(format!("temperature must be > 0, got {temperature}")));
    }
    feature.check_dim(bank.dim())?;
    bank.sesp
        .iter()
        .map(|p| Ok(cosine(feature, &p.vector)? / temperature))
        .collect()
}

/// Index of the largest logit; ties go to the lowest index.
pub fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in logits.iter().enumerate() {
        if *v > logits[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::descriptions::{DescriptionSet, ToyEncoder};
    use std::collections::BTreeMap;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn toy_desc(names: &[&str], k: usize, l: usize) -> DescriptionMap {
        names
            .iter()
            .map(|n| {
                let set = DescriptionSet::new(
                    *n,
                    format!("a photo of a {n}"),
                    (0..k).map(|i| format!("a {n} in state {i}")).collect(),
                    (0..l).map(|i| format!("{n} + place {i}")).collect(),
                )
                .unwrap();
                (n.to_string(), set)
            })
            .collect()
    }

    #[test]
    fn bank_shapes_and_norms() {
        let enc = ToyEncoder::new(24, 1).unwrap();
        let bank = build_bank(&toy_desc(&["dog", "cat"], 5, 5), &enc, Strategy::Mean, DEFAULT_K, DEFAULT_L).unwrap();
        assert_eq!(bank.vocab(), &["cat".to_string(), "dog".to_string()]);
        assert_eq!(bank.num_classes(), 2);
        assert_eq!((bank.k(), bank.l(), bank.dim()), (5, 5, 24));
        for c in 0..2 {
            assert_eq!(bank.prototypes()[c].class_id, c);
            assert_eq!(bank.prototypes()[c].k_used, 5);
            assert!((bank.prototype(c).norm() - 1.0).abs() < 1e-9);
            assert_eq!(bank.scenes(c).len(), 5);
            assert!(bank.scenes(c).iter().all(|s| (s.norm() - 1.0).abs() < 1e-9));
        }
        assert_eq!(bank.class_id("dog"), Some(1));
        assert_eq!(bank.class_id("cow"), None);
    }

    #[test]
    fn bank_uses_first_k_states_and_scene_order() {
        let enc = ToyEncoder::new(16, 2).unwrap();
        let desc = toy_desc(&["cat"], 7, 6);
        let bank = build_bank(&desc, &enc, Strategy::Mean, 3, 2).unwrap();
        let set = &desc["cat"];
        let generic = encode(&set.generic, &enc).unwrap();
        let states: Vec<_> = set.states[..3].iter().map(|t| encode(t, &enc).unwrap()).collect();
        assert_eq!(bank.prototype(0), &aggregate_mean(&generic, &states).unwrap());
        assert_eq!(bank.scenes(0)[1], encode(&set.scenes[1], &enc).unwrap());
    }

    #[test]
    fn name_only_bank_is_generic_embedding() {
        let enc = ToyEncoder::new(16, 2).unwrap();
        let desc = toy_desc(&["cat", "dog"], 5, 5);
        let bank = build_bank(&desc, &enc, Strategy::Mean, 0, 5).unwrap();
        assert_eq!(bank.k(), 0);
        let g = encode(&desc["dog"].generic, &enc).unwrap();
        for (x, y) in bank.prototype(1).as_slice().iter().zip(g.as_slice()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn insufficient_descriptions_propagate() {
        let enc = ToyEncoder::new(8, 0).unwrap();
        let r = build_bank(&toy_desc(&["cat"], 3, 5), &enc, Strategy::Mean, 5, 5);
        assert!(matches!(r, Err(Error::InsufficientDescriptions { got: 3, wanted: 5, .. })));
    }

    #[test]
    fn class_order_does_not_matter() {
        let enc = ToyEncoder::new(16, 9).unwrap();
        let a = toy_desc(&["zebra", "ant", "moose"], 5, 5);
        let b: BTreeMap<_, _> = toy_desc(&["moose", "zebra", "ant"], 5, 5).into_iter().rev().collect();
        let ba = build_bank(&a, &enc, Strategy::Median, 5, 5).unwrap();
        let bb = build_bank(&b, &enc, Strategy::Median, 5, 5).unwrap();
        assert_eq!(ba, bb);
        assert_eq!(ba.vocab(), &["ant", "moose", "zebra"]);
    }

    #[test]
    fn sequential_and_parallel_banks_agree() {
        let enc = ToyEncoder::new(32, 4).unwrap();
        let names: Vec<String> = (0..12).map(|i| format!("class{i:02}")).collect();
        let refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        let desc = toy_desc(&refs, 5, 5);
        for strategy in Strategy::ALL {
            let opts = BankOptions {
                strategy,
                ..Default::default()
            };
            let s = build_bank_with(&desc, &enc, &opts, Execution::Sequential).unwrap();
            let p = build_bank_with(&desc, &enc, &opts, Execution::Parallel).unwrap();
            assert_eq!(s, p);
        }
    }

    #[test]
    fn bank_file_round_trip_is_value_exact() {
        let enc = ToyEncoder::new(20, 5).unwrap();
        let bank = build_bank(&toy_desc(&["cat", "dog"], 5, 5), &enc, Strategy::SimilarityWeighted, 5, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        bank.save(&path).unwrap();
        let back = PrototypeBank::load(&path).unwrap();
        assert_eq!(back, bank);
        let text = std::fs::read_to_string(&path).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        let keys: Vec<_> = value.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 7);
        for k in ["dim", "vocab", "strategy", "k", "l", "sesp", "sapp"] {
            assert!(keys.iter().any(|x| x == k));
        }
    }

    #[test]
    fn bank_file_invariants_are_checked() {
        let ok = BankFile {
            dim: 2,
            vocab: vec!["a".into(), "b".into()],
            strategy: Strategy::Mean,
            k: 1,
            l: 1,
            sesp: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            sapp: vec![vec![vec![1.0, 0.0]], vec![vec![0.0, 1.0]]],
        };
        assert!(PrototypeBank::from_file(ok.clone()).is_ok());
        let mut unsorted = ok.clone();
        unsorted.vocab.reverse();
        assert!(PrototypeBank::from_file(unsorted).is_err());
        let mut not_unit = ok.clone();
        not_unit.sesp[0] = vec![2.0, 0.0];
        assert!(PrototypeBank::from_file(not_unit).is_err());
        let mut ragged = ok.clone();
        ragged.sapp[1].push(vec![1.0, 0.0]);
        assert!(PrototypeBank::from_file(ragged).is_err());
        let mut wrong_dim = ok;
        wrong_dim.dim = 3;
        assert!(PrototypeBank::from_file(wrong_dim).is_err());
    }

    fn orthogonal_bank() -> PrototypeBank {
        let sesp = vec![Embedding::basis(4, 0), Embedding::basis(4, 1), Embedding::basis(4, 2)];
        let sapp = (0..3).map(|c| vec![Embedding::basis(4, c)]).collect();
        PrototypeBank::from_parts(vec!["a".into(), "b".into(), "c".into()], Strategy::Mean, 1, sesp, sapp).unwrap()
    }

    #[test]
    fn classify_examples() {
        let bank = orthogonal_bank();
        for c in 0..3 {
            let logits = classify(bank.prototype(c), &bank, 0.05).unwrap();
            assert_eq!(argmax(&logits), c);
        }
        // p_1 + 0.1 p_2 (1-based) = e0 + 0.1 e1: cosines 1/sqrt(1.01), 0.1/sqrt(1.01), 0.
        let f = e(&[1.0, 0.1, 0.0, 0.0]);
        let logits = classify(&f, &bank, 1.0).unwrap();
        assert!((logits[0] - 1.0 / 1.01f64.sqrt()).abs() < 1e-15);
        assert!((logits[1] - 0.1 / 1.01f64.sqrt()).abs() < 1e-15);
        assert_eq!(logits[2], 0.0);
        assert_eq!(argmax(&logits), 0);

        let scaled = classify(&f.scaled(7.5).unwrap(), &bank, 1.0).unwrap();
        for (a, b) in logits.iter().zip(&scaled) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(argmax(&classify(&f, &bank, 3.0).unwrap()), 0);
        assert!(matches!(classify(&e(&[1.0, 0.0]), &bank, 1.0), Err(Error::DimensionMismatch { .. })));
        assert!(classify(&f, &bank, 0.0).is_err());
    }
}
