//! Dimension-checked vector arithmetic and scalar primitives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms below this are treated as zero.
pub const ZERO_NORM_EPS: f64 = 1e-12;

/// A finite, non-empty real vector in the shared visual-text space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Embedding(Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyVector);
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Embedding(values))
    }

    /// Standard basis vector `e_axis` in `dim` dimensions.
    pub fn basis(dim: usize, axis: usize) -> Self {
        assert!(axis < dim, "axis {axis} out of range for dim {dim}");
        let mut v = vec![0.0; dim];
        v[axis] = 1.0;
        Embedding(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn scaled(&self, alpha: f64) -> Result<Self> {
        Embedding::new(self.0.iter().map(|v| v * alpha).collect())
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: self.dim(),
            });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        Embedding::new(values)
    }
}

impl From<Embedding> for Vec<f64> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f64]> for Embedding {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity of `a` and `b`.
pub fn cosine(a: &Embedding, b: &Embedding) -> Result<f64> {
    b.check_dim(a.dim())?;
    let (na, nb) = (a.norm(), b.norm());
    for n in [na, nb] {
        if n < ZERO_NORM_EPS {
            return Err(Error::ZeroNorm { norm: n });
        }
    }
    Ok((dot(&a.0, &b.0) / (na * nb)).clamp(-1.0, 1.0))
}

pub fn l2_normalize(a: &Embedding) -> Result<Embedding> {
    let n = a.norm();
    if n < ZERO_NORM_EPS {
        return Err(Error::ZeroNorm { norm: n });
    }
    Ok(Embedding(a.0.iter().map(|v| v / n).collect()))
}

/// Logistic function, evaluated without overflow for any finite input.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(sigmoid(x))` as `-softplus(-x)`.
pub fn log_sigmoid(x: f64) -> f64 {
    -((-x).max(0.0) + (-x.abs()).exp().ln_1p())
}

/// Dense `batch x classes x slots` array of cosine scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTensor {
    batch: usize,
    classes: usize,
    slots: usize,
    scores: Vec<f64>,
}

impl SimilarityTensor {
    pub fn new(batch: usize, classes: usize, slots: usize, scores: Vec<f64>) -> Result<Self> {
        if batch == 0 || classes == 0 || slots == 0 {
            return Err(Error::Shape(format!(
                "similarity tensor needs positive extents, got {batch}x{classes}x{slots}"
            )));
        }
        if scores.len() != batch * classes * slots {
            return Err(Error::Shape(format!(
                "{} scores for shape {batch}x{classes}x{slots}",
                scores.len()
            )));
        }
        if let Some((index, &value)) = scores
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(Error::ScoreOutOfRange { index, value });
        }
        Ok(SimilarityTensor {
            batch,
            classes,
            slots,
            scores,
        })
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.batch, self.classes, self.slots)
    }

    pub fn index(&self, b: usize, c: usize, l: usize) -> usize {
        (b * self.classes + c) * self.slots + l
    }

    pub fn get(&self, b: usize, c: usize, l: usize) -> f64 {
        self.scores[self.index(b, c, l)]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.scores
    }
}
