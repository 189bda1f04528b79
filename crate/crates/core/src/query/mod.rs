//! Acquisition strategies and batch selection.
//!
//! Every strategy scores an instance against an immutable model snapshot;
//! higher scores are queried first and ties go to the lowest instance id.

mod bald;
mod density;
mod random;
mod uncertainty;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Tag, TokenSequence};
use crate::crf::{CrfError, CrfModel};

pub use bald::{modal_count, score_bald, score_bald_tokens, select_batch_bald, select_batch_bald_scored};
pub use density::{build_similarity, score_id, score_id_with_base, SimilarityMatrix};
pub use random::score_random;
pub use uncertainty::{score_lc, score_ltp};

#[derive(Debug, Error)]
pub enum QueryError {
    #[error(transparent)]
    Crf(#[from] CrfError),
    #[error("instance `{0}` is not in the similarity matrix")]
    NotInSimilarity(String),
    #[error("information density needs a similarity matrix")]
    MissingSimilarity,
    #[error("{0} cannot serve as the information-density base strategy")]
    InvalidBase(StrategyId),
    #[error("similarity matrix is malformed: {0}")]
    BadSimilarity(String),
    #[error("passes must be at least 1")]
    NoPasses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StrategyId {
    Lc,
    Ltp,
    Bald,
    #[serde(rename = "batchbald")]
    BatchBald,
    Id,
    Random,
}

impl StrategyId {
    pub const ALL: [StrategyId; 6] = [
        StrategyId::Lc,
        StrategyId::Ltp,
        StrategyId::Bald,
        StrategyId::BatchBald,
        StrategyId::Id,
        StrategyId::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyId::Lc => "lc",
            StrategyId::Ltp => "ltp",
            StrategyId::Bald => "bald",
            StrategyId::BatchBald => "batchbald",
            StrategyId::Id => "id",
            StrategyId::Random => "random",
        }
    }

    pub fn valid_ids() -> String {
        Self::ALL.map(Self::as_str).join(", ")
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown strategy `{given}`; valid ids: {valid}")]
pub struct UnknownStrategy {
    pub given: String,
    pub valid: String,
}

impl FromStr for StrategyId {
    type Err = UnknownStrategy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|id| id.as_str() == s)
            .ok_or_else(|| UnknownStrategy {
                given: s.to_string(),
                valid: Self::valid_ids(),
            })
    }
}

/// One distinct sampled sequence and how many passes produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleCount {
    pub tags: Vec<Tag>,
    pub count: usize,
}

/// What a score was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// Probability of the Viterbi path.
    PathProbability { path_prob: f64 },
    /// The least confident word of the Viterbi path.
    LeastConfidentToken {
        /// Subtoken position of the word's first piece.
        position: usize,
        word: usize,
        confidence: f64,
    },
    /// Histogram of stochastic parses, most frequent first.
    Samples {
        passes: usize,
        token_averaged: bool,
        histogram: Vec<SampleCount>,
    },
    /// Greedy batch step: joint disagreement of the batch selected so far
    /// with this instance added.
    JointSamples {
        passes: usize,
        step: usize,
        histogram: Vec<SampleCount>,
    },
    Density {
        base_strategy: StrategyId,
        base: f64,
        density: f64,
        beta: f64,
    },
    Random { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryScore {
    pub instance_id: String,
    pub strategy: StrategyId,
    pub score: f64,
    pub evidence: Evidence,
}

/// Strategy parameters shared by pool scoring and batch selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QueryConfig {
    pub strategy: StrategyId,
    /// Stochastic passes for BALD and BatchBALD.
    pub passes: usize,
    pub beta: f64,
    /// Base strategy weighted by information density.
    pub id_base: StrategyId,
    /// Average per-word disagreement instead of whole-sequence agreement.
    pub bald_token_averaged: bool,
    pub rng_seed: u64,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyId::Ltp,
            passes: 10,
            beta: 1.0,
            id_base: StrategyId::Ltp,
            bald_token_averaged: false,
            rng_seed: 0,
        }
    }
}

/// Descending score, then ascending instance id.
pub fn rank_order(a: &QueryScore, b: &QueryScore) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.instance_id.cmp(&b.instance_id))
}

/// The `k` best scores in rank order.
pub fn top_k(mut scores: Vec<QueryScore>, k: usize) -> Vec<QueryScore> {
    scores.sort_by(rank_order);
    scores.truncate(k);
    scores
}

fn score_one(
    model: &CrfModel,
    seq: &TokenSequence,
    strategy: StrategyId,
    cfg: &QueryConfig,
    sim: Option<&SimilarityMatrix>,
) -> Result<QueryScore, QueryError> {
    match strategy {
        StrategyId::Lc => score_lc(model, seq),
        StrategyId::Ltp => score_ltp(model, seq),
        StrategyId::Bald | StrategyId::BatchBald if cfg.bald_token_averaged => {
            score_bald_tokens(model, seq, cfg.passes, cfg.rng_seed)
        }
        StrategyId::Bald | StrategyId::BatchBald => score_bald(model, seq, cfg.passes, cfg.rng_seed),
        StrategyId::Random => Ok(score_random(seq, cfg.rng_seed)),
        StrategyId::Id => {
            if matches!(cfg.id_base, StrategyId::Id | StrategyId::BatchBald) {
                return Err(QueryError::InvalidBase(cfg.id_base));
            }
            let sim = sim.ok_or(QueryError::MissingSimilarity)?;
            let base = score_one(model, seq, cfg.id_base, cfg, None)?;
            score_id_with_base(&base, sim)
        }
    }
}

/// Scores every instance independently (in parallel) under `cfg.strategy`.
///
/// BatchBALD has no per-instance score; its individual BALD scores are
/// returned instead.
pub fn score_pool(
    model: &CrfModel,
    pool: &[TokenSequence],
    cfg: &QueryConfig,
    sim: Option<&SimilarityMatrix>,
) -> Result<Vec<QueryScore>, QueryError> {
    if cfg.passes == 0 && matches!(cfg.strategy, StrategyId::Bald | StrategyId::BatchBald) {
        return Err(QueryError::NoPasses);
    }
    pool.par_iter()
        .map(|seq| score_one(model, seq, cfg.strategy, cfg, sim))
        .collect()
}

/// Selects up to `batch_size` instances to query, in selection order.
pub fn select_batch(
    model: &CrfModel,
    pool: &[TokenSequence],
    batch_size: usize,
    cfg: &QueryConfig,
    sim: Option<&SimilarityMatrix>,
) -> Result<Vec<QueryScore>, QueryError> {
    if cfg.strategy == StrategyId::BatchBald {
        if cfg.passes == 0 {
            return Err(QueryError::NoPasses);
        }
        return Ok(select_batch_bald_scored(model, pool, batch_size, cfg.passes, cfg.rng_seed));
    }
    Ok(top_k(score_pool(model, pool, cfg, sim)?, batch_size))
}
