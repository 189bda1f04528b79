//! Least confidence over the whole parse and over its weakest token.

use super::{Evidence, QueryError, QueryScore, StrategyId};
use crate::corpus::TokenSequence;
use crate::crf::CrfModel;

/// `1 - P(y* | x)` for the Viterbi parse `y*`.
pub fn score_lc(model: &CrfModel, seq: &TokenSequence) -> Result<QueryScore, QueryError> {
    let pred = model.viterbi_decode(seq)?;
    let path_prob = pred.path_log_prob.exp().min(1.0);
    Ok(QueryScore {
        instance_id: seq.id().to_string(),
        strategy: StrategyId::Lc,
        score: (1.0 - path_prob).clamp(0.0, 1.0),
        evidence: Evidence::PathProbability { path_prob },
    })
}

/// `1 - min_i P(y*_i | x)` over the words of the Viterbi parse.
///
/// Continuation subtokens carry no prediction and are skipped; the evidence
/// names the first word attaining the minimum.
pub fn score_ltp(model: &CrfModel, seq: &TokenSequence) -> Result<QueryScore, QueryError> {
    let pred = model.predict(seq)?;
    let conf = pred.path_confidences(model.scheme());
    let (word, confidence) = conf
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, c)| if c < best.1 { (i, c) } else { best });
    Ok(QueryScore {
        instance_id: seq.id().to_string(),
        strategy: StrategyId::Ltp,
        score: (1.0 - confidence).clamp(0.0, 1.0),
        evidence: Evidence::LeastConfidentToken {
            position: seq.word_starts()[word],
            word,
            confidence,
        },
    })
}
