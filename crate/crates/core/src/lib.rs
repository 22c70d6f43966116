//! Prototype banks and alignment losses for weakly supervised open-vocabulary
//! classification.
//!
//! The crate is organised bottom-up:
//!
//! - [`vector`]: dimension-checked embeddings, cosine similarity, sigmoid.
//! - [`descriptions`]: prompt templates, description generation clients and
//!   text encoders.
//! - [`prototypes`]: state-enhanced class prototypes (four aggregators) and
//!   the per-class scene prototype sets, packed into a [`PrototypeBank`].
//! - [`alignment`]: scene similarities, thresholded pseudo-labels, the
//!   confidence-weighted scene loss, softmax classification losses and their
//!   analytic gradients.
//! - [`synthbench`]: a seeded synthetic world, a linear probe trainer and the
//!   ablation harness.
//!
//! Data-parallel loops go through [`exec`]; with the `parallel` feature
//! (default) they run on rayon, otherwise sequentially. Both paths produce
//! bitwise-identical results.

pub mod alignment;
pub mod descriptions;
pub mod error;
pub mod exec;
pub mod io;
pub mod prototypes;
pub mod synthbench;
pub mod vector;

pub use alignment::{
    LossReport, PseudoLabelGrid, SceneLossConfig, WeakBatch, DEFAULT_LAMBDA, DEFAULT_TAU,
    DEFAULT_TEMPERATURE,
};
pub use descriptions::{DescriptionSet, EncoderKind, TextEncoder};
pub use error::{Error, ErrorClass, Result};
pub use exec::Execution;
pub use prototypes::{AggregateOptions, ClassPrototype, PrototypeBank, Strategy};
pub use vector::{Embedding, SimilarityTensor};

/// Version string echoed into every results record.
pub const ARTIFACT_VERSION: &str = concat!("ovproto ", env!("CARGO_PKG_VERSION"));
