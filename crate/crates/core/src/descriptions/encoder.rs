use std::collections::HashMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::vector::{l2_normalize, Embedding};

/// Stored fixture vectors whose norm differs from 1 by more than this are
/// logged when loaded.
pub const NORM_DRIFT_WARN: f64 = 1e-6;

/// Encoder outputs with a smaller norm are rejected before normalization.
const MIN_RAW_NORM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    FixtureFile,
    DeterministicToy,
    RemoteService,
}

/// A text encoder into the shared embedding space.
///
/// Implementations must be deterministic: the same text always yields the
/// same raw vector.
pub trait TextEncoder: Sync {
    fn dim(&self) -> usize;
    fn kind(&self) -> EncoderKind;
    /// Raw, possibly unnormalized vector for `text`.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Encodes `text` and returns the l2-normalized embedding.
pub fn encode(text: &str, enc: &dyn TextEncoder) -> Result<Embedding> {
    if text.trim().is_empty() {
        return Err(Error::EmptyText);
    }
    let raw = Embedding::new(enc.embed(text)?)?;
    raw.check_dim(enc.dim())?;
    let n = raw.norm();
    if n < MIN_RAW_NORM {
        return Err(Error::ZeroNorm { norm: n });
    }
    l2_normalize(&raw)
}

/// Seeded hash of the text expanded into a Gaussian direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyEncoder {
    dim: usize,
    seed: u64,
}

impl ToyEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidConfig("encoder dim must be >= 1".into()));
        }
        Ok(ToyEncoder { dim, seed })
    }
}

impl TextEncoder for ToyEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EncoderKind {
        EncoderKind::DeterministicToy
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(text.as_bytes());
        let digest: [u8; 32] = h.finalize().into();
        let mut rng = ChaCha8Rng::from_seed(digest);
        Ok((0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingRecord {
    pub text: String,
    pub vector: Vec<f64>,
}

/// On-disk embedding fixture: `{ "dim": .., "records": [{ "text", "vector" }] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbeddingFixture {
    pub dim: usize,
    pub records: Vec<EmbeddingRecord>,
}

impl EmbeddingFixture {
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_json_atomic(path, self)
    }
}

/// Encodes every text in order into a fixture of normalized vectors.
/// Repeated texts are stored once.
pub fn encode_corpus<'a>(
    texts: impl IntoIterator<Item = &'a str>,
    enc: &dyn TextEncoder,
) -> Result<EmbeddingFixture> {
    let mut seen = std::collections::HashSet::new();
    let mut records = Vec::new();
    for text in texts {
        if seen.insert(text) {
            records.push(EmbeddingRecord {
                text: text.to_string(),
                vector: encode(text, enc)?.into_vec(),
            });
        }
    }
    Ok(EmbeddingFixture {
        dim: enc.dim(),
        records,
    })
}

/// Looks texts up in a pre-computed embedding table.
#[derive(Debug, Clone)]
pub struct FixtureEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

impl FixtureEncoder {
    pub fn from_fixture(fixture: EmbeddingFixture) -> Result<Self> {
        if fixture.dim == 0 {
            return Err(Error::InvalidConfig("fixture dim must be >= 1".into()));
        }
        let mut table = HashMap::with_capacity(fixture.records.len());
        let mut drifted = 0usize;
        for rec in fixture.records {
            let e = Embedding::new(rec.vector)?;
            e.check_dim(fixture.dim)?;
            if (e.norm() - 1.0).abs() > NORM_DRIFT_WARN {
                drifted += 1;
            }
            let unit = l2_normalize(&e)?;
            if table.insert(rec.text.clone(), unit.into_vec()).is_some() {
                return Err(Error::MalformedResponse(format!(
                    "duplicate fixture record for {:?}",
                    rec.text
                )));
            }
        }
        if drifted > 0 {
            log::warn!("{drifted} fixture vectors drifted from unit norm by more than {NORM_DRIFT_WARN:e}; re-normalized");
        }
        Ok(FixtureEncoder {
            dim: fixture.dim,
            table,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_fixture(crate::io::read_json(path)?)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl TextEncoder for FixtureEncoder {
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
            .ok_or_else(|| Error::EncoderUnavailable(format!("no fixture embedding for {text:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RemoteEncoderConfig {
    /// Embeddings URL (OpenAI-compatible `/v1/embeddings`).
    pub endpoint: String,
    pub api_key_env: Option<String>,
    pub model: String,
    pub timeout_secs: u64,
}

impl Default for RemoteEncoderConfig {
    fn default() -> Self {
        RemoteEncoderConfig {
            endpoint: "http://127.0.0.1:8080/v1/embeddings".into(),
            api_key_env: Some("OVPROTO_API_KEY".into()),
            model: "clip-vit-b-32-text".into(),
            timeout_secs: 60,
        }
    }
}

/// Encoder backed by an embeddings service.
pub struct RemoteEncoder {
    config: RemoteEncoderConfig,
    dim: usize,
    api_key: Option<String>,
    agent: ureq::Agent,
}

impl RemoteEncoder {
    pub fn new(config: RemoteEncoderConfig, dim: usize) -> Result<Self> {
        let api_key = match &config.api_key_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                Error::EncoderUnavailable(format!("environment variable {var} is not set"))
            })?),
            None => None,
        };
        let agent = super::client::http_agent(config.timeout_secs);
        Ok(RemoteEncoder {
            config,
            dim,
            api_key,
            agent,
        })
    }
}

impl TextEncoder for RemoteEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn kind(&self) -> EncoderKind {
        EncoderKind::RemoteService
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({ "model": self.config.model, "input": text });
        let reply = super::client::post_json(&self.agent, &self.config.endpoint, self.api_key.as_deref(), &body)
            .map_err(|e| match e {
                Error::ClientUnavailable(m) => Error::EncoderUnavailable(m),
                other => other,
            })?;
        reply
            .pointer("/data/0/embedding")
            .and_then(|v| v.as_array())
            .and_then(|a| a.iter().map(|x| x.as_f64()).collect::<Option<Vec<f64>>>())
            .ok_or_else(|| Error::MalformedResponse("embedding reply has no data[0].embedding".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector::cosine;

    #[test]
    fn toy_encoder_is_deterministic_and_normalized() {
        let enc = ToyEncoder::new(32, 7).unwrap();
        let a = encode("a sleeping cat", &enc).unwrap();
        let b = encode("a sleeping cat", &enc).unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-9);
        let other_seed = encode("a sleeping cat", &ToyEncoder::new(32, 8).unwrap()).unwrap();
        assert_ne!(a, other_seed);
    }

    #[test]
    fn toy_encoder_separates_a_corpus() {
        let enc = ToyEncoder::new(64, 0).unwrap();
        let mut corpus: Vec<String> = vec!["a".into(), "b".into()];
        corpus.extend((0..98).map(|i| format!("text number {i}")));
        let vecs: Vec<Embedding> = corpus.iter().map(|t| encode(t, &enc).unwrap()).collect();
        for i in 0..vecs.len() {
            for j in i + 1..vecs.len() {
                assert!(cosine(&vecs[i], &vecs[j]).unwrap() < 1.0 - 1e-6);
            }
        }
    }

    #[test]
    fn encode_rejects_empty_text() {
        let enc = ToyEncoder::new(4, 0).unwrap();
        assert!(matches!(encode("  ", &enc), Err(Error::EmptyText)));
    }

    #[test]
    fn fixture_encoder_checks_dims_and_renormalizes() {
        let bad = EmbeddingFixture {
            dim: 3,
            records: vec![EmbeddingRecord {
                text: "x".into(),
                vector: vec![1.0, 0.0],
            }],
        };
        assert!(matches!(
            FixtureEncoder::from_fixture(bad),
            Err(Error::DimensionMismatch { expected: 3, got: 2 })
        ));
        let drifted = EmbeddingFixture {
            dim: 2,
            records: vec![EmbeddingRecord {
                text: "x".into(),
                vector: vec![3.0, 4.0],
            }],
        };
        let enc = FixtureEncoder::from_fixture(drifted).unwrap();
        assert_eq!(encode("x", &enc).unwrap().as_slice(), &[0.6, 0.8]);
        assert!(matches!(encode("y", &enc), Err(Error::EncoderUnavailable(_))));
    }

    #[test]
    fn corpus_round_trips_through_fixture_encoder() {
        let toy = ToyEncoder::new(16, 3).unwrap();
        let texts = ["cat", "a sleeping cat", "cat", "cat + sofa"];
        let fixture = encode_corpus(texts, &toy).unwrap();
        assert_eq!(fixture.records.len(), 3);
        let json = serde_json::to_string(&fixture).unwrap();
        let back: EmbeddingFixture = serde_json::from_str(&json).unwrap();
        let enc = FixtureEncoder::from_fixture(back).unwrap();
        for t in texts {
            let (a, b) = (encode(t, &enc).unwrap(), encode(t, &toy).unwrap());
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-15);
            }
        }
    }
}
