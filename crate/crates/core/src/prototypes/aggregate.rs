//! Fixed-weight aggregators from one generic and `K` state embeddings to a
//! single class prototype.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::{cosine, l2_normalize, Embedding};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Arithmetic mean of all `K + 1` embeddings.
    Mean,
    /// Element-wise median of all `K + 1` embeddings.
    Median,
    /// Mean of the states, then mean of that with the generic embedding.
    TwoStageMean,
    /// Weights proportional to cosine similarity with the generic embedding.
    SimilarityWeighted,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Mean,
        Strategy::Median,
        Strategy::TwoStageMean,
        Strategy::SimilarityWeighted,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Mean => "mean",
            Strategy::Median => "median",
            Strategy::TwoStageMean => "two_stage_mean",
            Strategy::SimilarityWeighted => "similarity_weighted",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown aggregator '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AggregateOptions {
    /// l2-normalize every input before aggregating.
    pub normalize_inputs: bool,
    /// l2-normalize the aggregate. Disabling returns the raw aggregate.
    pub normalize_output: bool,
    /// Clamp negative similarity weights to zero.
    pub clamp_negative_weights: bool,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions {
            normalize_inputs: false,
            normalize_output: true,
            clamp_negative_weights: true,
        }
    }
}

fn prepare<'a>(
    generic: &'a Embedding,
    states: &'a [Embedding],
    opts: &AggregateOptions,
) -> Result<Vec<std::borrow::Cow<'a, Embedding>>> {
    use std::borrow::Cow;
    if states.is_empty() {
        return Err(Error::EmptyStateList);
    }
    for s in states {
        s.check_dim(generic.dim())?;
    }
    std::iter::once(generic)
        .chain(states)
        .map(|e| {
            if opts.normalize_inputs {
                l2_normalize(e).map(Cow::Owned)
            } else {
                Ok(Cow::Borrowed(e))
            }
        })
        .collect()
}

fn finish(raw: Vec<f64>, opts: &AggregateOptions) -> Result<Embedding> {
    let e = Embedding::new(raw)?;
    if opts.normalize_output {
        l2_normalize(&e)
    } else {
        Ok(e)
    }
}

fn mean_of<'a>(items: impl ExactSizeIterator<Item = &'a Embedding>, dim: usize) -> Vec<f64> {
    let n = items.len() as f64;
    let mut acc = vec![0.0; dim];
    for e in items {
        for (a, v) in acc.iter_mut().zip(e.as_slice()) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn aggregate(
    strategy: Strategy,
    generic: &Embedding,
    states: &[Embedding],
    opts: &AggregateOptions,
) -> Result<Embedding> {
    let inputs = prepare(generic, states, opts)?;
    let dim = generic.dim();
    let raw = match strategy {
        Strategy::Mean => mean_of(inputs.iter().map(|c| c.as_ref()), dim),
        Strategy::Median => {
            let mut column = Vec::with_capacity(inputs.len());
            (0..dim)
                .map(|j| {
                    column.clear();
                    column.extend(inputs.iter().map(|e| e.as_slice()[j]));
                    column.sort_by(f64::total_cmp);
                    let n = column.len();
                    if n % 2 == 1 {
                        column[n / 2]
                    } else {
                        0.5 * (column[n / 2 - 1] + column[n / 2])
                    }
                })
                .collect()
        }
        Strategy::TwoStageMean => {
            let state_mean = mean_of(inputs[1..].iter().map(|c| c.as_ref()), dim);
            inputs[0]
                .as_slice()
                .iter()
                .zip(&state_mean)
                .map(|(g, s)| 0.5 * (g + s))
                .collect()
        }
        Strategy::SimilarityWeighted => {
            let g = inputs[0].as_ref();
            let mut weights = Vec::with_capacity(inputs.len());
            weights.push(1.0);
            for s in &inputs[1..] {
                let w = cosine(s, g)?;
                weights.push(if opts.clamp_negative_weights { w.max(0.0) } else { w });
            }
            let total: f64 = weights.iter().sum();
            if total.abs() < f64::EPSILON {
                return Err(Error::AllWeightsZero);
            }
            let mut acc = vec![0.0; dim];
            for (e, w) in inputs.iter().zip(&weights) {
                let alpha = w / total;
                for (a, v) in acc.iter_mut().zip(e.as_slice()) {
                    *a += alpha * v;
                }
            }
            acc
        }
    };
    finish(raw, opts)
}

/// `normalize((generic + sum(states)) / (K + 1))`
pub fn aggregate_mean(generic: &Embedding, states: &[Embedding]) -> Result<Embedding> {
    aggregate(Strategy::Mean, generic, states, &AggregateOptions::default())
}

/// Element-wise median over the `K + 1` inputs (mean of the two middle
/// values for an even count), normalized.
pub fn aggregate_median(generic: &Embedding, states: &[Embedding]) -> Result<Embedding> {
    aggregate(Strategy::Median, generic, states, &AggregateOptions::default())
}

/// `normalize((generic + mean(states)) / 2)`
pub fn aggregate_two_stage(generic: &Embedding, states: &[Embedding]) -> Result<Embedding> {
    aggregate(Strategy::TwoStageMean, generic, states, &AggregateOptions::default())
}

/// Weighted mean with weights `max(0, cos(x, generic))` (generic itself has
/// weight 1), normalized to sum to one.
pub fn aggregate_similarity_weighted(generic: &Embedding, states: &[Embedding]) -> Result<Embedding> {
    aggregate(Strategy::SimilarityWeighted, generic, states, &AggregateOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::Strategy;
    use proptest::prelude::*;
    use proptest::strategy::Strategy as _;

    fn e(v: &[f64]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    fn assert_close(a: &Embedding, b: &[f64], tol: f64) {
        assert_eq!(a.dim(), b.len());
        for (x, y) in a.as_slice().iter().zip(b) {
            assert!((x - y).abs() < tol, "{:?} vs {:?}", a.as_slice(), b);
        }
    }

    const H: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn mean_examples() {
        let g = l2_normalize(&e(&[0.2, -0.4, 0.9])).unwrap();
        assert_close(&aggregate_mean(&g, std::slice::from_ref(&g)).unwrap(), g.as_slice(), 1e-15);
        assert_close(&aggregate_mean(&e(&[1.0, 0.0]), &[e(&[0.0, 1.0])]).unwrap(), &[H, H], 1e-15);
    }

    #[test]
    fn raw_mean_is_recoverable() {
        let opts = AggregateOptions {
            normalize_output: false,
            ..Default::default()
        };
        let raw = aggregate(Strategy::Mean, &e(&[1.0, 0.0]), &[e(&[0.0, 1.0])], &opts).unwrap();
        assert_eq!(raw.as_slice(), &[0.5, 0.5]);
    }

    #[test]
    fn median_examples() {
        let v = e(&[0.3, 0.1]);
        assert_close(&aggregate_median(&v, &[v.clone(), v.clone()]).unwrap(), l2_normalize(&v).unwrap().as_slice(), 1e-15);

        let opts = AggregateOptions {
            normalize_output: false,
            ..Default::default()
        };
        let raw = aggregate(Strategy::Median, &e(&[1.0, 5.0]), &[e(&[100.0, 4.0]), e(&[2.0, 6.0])], &opts).unwrap();
        assert_eq!(raw.as_slice(), &[2.0, 5.0]);

        // Even count: four inputs, coordinate values {1, 2, 3, 10} -> 2.5.
        let raw = aggregate(
            Strategy::Median,
            &e(&[10.0]),
            &[e(&[1.0]), e(&[3.0]), e(&[2.0])],
            &opts,
        )
        .unwrap();
        assert_eq!(raw.as_slice(), &[2.5]);
    }

    #[test]
    fn median_zero_vector_is_an_error() {
        let r = aggregate_median(&e(&[1.0, 0.0]), &[e(&[-1.0, 0.0]), e(&[0.0, 0.0])]);
        assert!(matches!(r, Err(Error::ZeroNorm { .. })));
    }

    #[test]
    fn two_stage_examples() {
        let g = e(&[1.0, 0.0]);
        assert_close(&aggregate_two_stage(&g, &[e(&[0.0, 1.0]), e(&[0.0, 1.0])]).unwrap(), &[H, H], 1e-15);
        let s = e(&[0.3, 0.8]);
        assert_eq!(
            aggregate_two_stage(&g, std::slice::from_ref(&s)).unwrap(),
            aggregate_mean(&g, std::slice::from_ref(&s)).unwrap()
        );
    }

    #[test]
    fn similarity_weighted_examples() {
        let g = l2_normalize(&e(&[0.6, 0.8, 0.0])).unwrap();
        let same = vec![g.clone(), g.clone(), g.clone()];
        assert_close(
            &aggregate_similarity_weighted(&g, &same).unwrap(),
            aggregate_mean(&g, &same).unwrap().as_slice(),
            1e-12,
        );
        // States orthogonal to the generic direction get zero weight.
        let orth = [e(&[0.0, 0.0, 1.0]), e(&[0.8, -0.6, 0.0])];
        assert_close(&aggregate_similarity_weighted(&g, &orth).unwrap(), g.as_slice(), 1e-15);
        // Anti-aligned state is clamped away, not subtracted.
        let anti = [e(&[-0.6, -0.8, 0.0]), e(&[0.6, 0.8, 0.0])];
        assert_close(&aggregate_similarity_weighted(&g, &anti).unwrap(), g.as_slice(), 1e-15);
    }

    #[test]
    fn similarity_weighted_unclamped_can_cancel() {
        let opts = AggregateOptions {
            clamp_negative_weights: false,
            ..Default::default()
        };
        let g = e(&[1.0, 0.0]);
        let r = aggregate(Strategy::SimilarityWeighted, &g, &[e(&[-1.0, 0.0])], &opts);
        assert!(matches!(r, Err(Error::AllWeightsZero)));
    }

    #[test]
    fn input_validation() {
        let g = e(&[1.0, 0.0]);
        for st in Strategy::ALL {
            assert!(matches!(aggregate(st, &g, &[], &AggregateOptions::default()), Err(Error::EmptyStateList)));
            assert!(matches!(
                aggregate(st, &g, &[e(&[1.0, 0.0, 0.0])], &AggregateOptions::default()),
                Err(Error::DimensionMismatch { .. })
            ));
        }
    }

    #[test]
    fn strategy_names_round_trip() {
        for st in Strategy::ALL {
            assert_eq!(st.as_str().parse::<Strategy>().unwrap(), st);
            let json = serde_json::to_string(&st).unwrap();
            assert_eq!(json, format!("\"{}\"", st.as_str()));
        }
        assert!("avg".parse::<Strategy>().is_err());
    }

    fn unit_vectors(k: usize, dim: usize) -> impl proptest::strategy::Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-1.0..1.0f64, dim), k + 1)
            .prop_filter("nonzero", |vs| vs.iter().all(|v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3))
    }

    proptest! {
        #[test]
        fn outputs_are_unit_and_permutation_invariant(vs in (1usize..7).prop_flat_map(|k| unit_vectors(k, 6)), rot in 0usize..7) {
            let g = e(&vs[0]);
            let states: Vec<Embedding> = vs[1..].iter().map(|v| e(v)).collect();
            let mut permuted = states.clone();
            let r = rot % permuted.len();
            permuted.rotate_left(r);
            permuted.reverse();
            for st in Strategy::ALL {
                let a = aggregate(st, &g, &states, &AggregateOptions::default());
                let b = aggregate(st, &g, &permuted, &AggregateOptions::default());
                match (a, b) {
                    (Ok(a), Ok(b)) => {
                        prop_assert!((a.norm() - 1.0).abs() < 1e-9);
                        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                            prop_assert!((x - y).abs() < 1e-12);
                        }
                    }
                    (Err(Error::ZeroNorm { .. }), Err(Error::ZeroNorm { .. })) => {}
                    (a, b) => prop_assert!(false, "{st}: {a:?} vs {b:?}"),
                }
            }
        }
    }
}
