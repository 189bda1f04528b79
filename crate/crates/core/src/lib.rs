//! Human-in-the-loop active learning for biomedical named-entity recognition.
//!
//! - [`corpus`]: subtoken sequences, BIO label schemes, corpus files, splits
//!   and a synthetic corpus generator.
//! - [`crf`]: the linear-chain CRF tagger with exact inference, SGD training,
//!   feature-dropout sampling and per-word explanations.
//! - [`query`]: acquisition strategies (least confidence, lowest token
//!   probability, BALD, BatchBALD, information density, random).
//! - [`active`]: the pool/query/annotate/retrain loop, transfer protocol,
//!   evaluation and human-factor metrics.

pub mod active;
pub mod annotation;
pub mod corpus;
pub mod crf;
pub mod metrics;
pub mod query;

pub use annotation::AnnotationRecord;
pub use corpus::{CorpusSplit, LabelScheme, Tag, TokenSequence};
pub use crf::{CrfModel, FeatureEncoder, Prediction, TrainConfig};
pub use query::{QueryScore, StrategyId};
