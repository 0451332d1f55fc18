//! Stateful intent-clustering guardrail for anonymized request streams.
//!
//! Requests are embedded twice: a frozen projection captures surface
//! semantics and a contrastively trained head captures the underlying intent.
//! The [`engine`] keeps both embeddings of every past request and blocks a
//! request once its intent vector lands in an established cluster.

pub mod acl;
pub mod benchmark;
pub mod bounds;
pub mod dataset;
pub mod encoders;
pub mod engine;
pub mod error;
pub mod featurizer;
pub mod loadgen;
pub mod metrics;
pub mod simulator;
pub mod stream;
pub mod types;
pub mod vecstore;
pub mod vector;

pub use error::{Error, Result};
pub use types::{Decision, EmbeddingPair, IntentId, Request, Role, Stage, Thresholds, Verdict};
