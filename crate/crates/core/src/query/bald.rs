//! Disagreement between stochastic parses under feature dropout.

use rayon::prelude::*;

use super::{Evidence, QueryError, QueryScore, SampleCount, StrategyId};
use crate::corpus::{Tag, TokenSequence};
use crate::crf::CrfModel;

fn histogram(samples: &[Vec<Tag>]) -> Vec<SampleCount> {
    let mut hist: Vec<SampleCount> = Vec::new();
    for s in samples {
        match hist.iter_mut().find(|h| &h.tags == s) {
            Some(h) => h.count += 1,
            None => hist.push(SampleCount { tags: s.clone(), count: 1 }),
        }
    }
    // Stable: equal counts keep first-appearance order.
    hist.sort_by(|a, b| b.count.cmp(&a.count));
    hist
}

/// Size of the largest group of identical items.
pub fn modal_count<T: PartialEq>(items: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in items.iter().enumerate() {
        if items[..i].contains(x) {
            continue;
        }
        best = best.max(items[i..].iter().filter(|y| *y == x).count());
    }
    best
}

/// `1 - (modal count) / passes` over whole parses from `passes` dropout
/// masks. Parses are word-level, so continuation subtokens never affect
/// equality.
pub fn score_bald(model: &CrfModel, seq: &TokenSequence, passes: usize, rng_seed: u64) -> Result<QueryScore, QueryError> {
    if passes == 0 {
        return Err(QueryError::NoPasses);
    }
    let samples = model.stochastic_predict(seq, passes, rng_seed);
    let hist = histogram(&samples);
    Ok(QueryScore {
        instance_id: seq.id().to_string(),
        strategy: StrategyId::Bald,
        score: 1.0 - hist[0].count as f64 / passes as f64,
        evidence: Evidence::Samples {
            passes,
            token_averaged: false,
            histogram: hist,
        },
    })
}

/// Word-averaged variant: mean over words of `1 - (modal tag count) / passes`.
pub fn score_bald_tokens(model: &CrfModel, seq: &TokenSequence, passes: usize, rng_seed: u64) -> Result<QueryScore, QueryError> {
    if passes == 0 {
        return Err(QueryError::NoPasses);
    }
    let samples = model.stochastic_predict(seq, passes, rng_seed);
    let words = seq.word_count();
    let total: f64 = (0..words)
        .map(|i| {
            let column: Vec<&Tag> = samples.iter().map(|s| &s[i]).collect();
            1.0 - modal_count(&column) as f64 / passes as f64
        })
        .sum();
    Ok(QueryScore {
        instance_id: seq.id().to_string(),
        strategy: StrategyId::Bald,
        score: total / words as f64,
        evidence: Evidence::Samples {
            passes,
            token_averaged: true,
            histogram: histogram(&samples),
        },
    })
}

/// Greedy batch selection on joint disagreement.
///
/// Every candidate is sampled with the same `passes` seeds, so pass `p` of
/// different instances forms one joint draw. Each step adds the candidate
/// maximizing `1 - (modal count of the tuple of parses across the batch) /
/// passes`; ties go to the lowest id. The returned scores are those joint
/// values at the step each instance was added.
pub fn select_batch_bald_scored(
    model: &CrfModel,
    pool: &[TokenSequence],
    batch_size: usize,
    passes: usize,
    rng_seed: u64,
) -> Vec<QueryScore> {
    let b = batch_size.min(pool.len());
    if b == 0 || passes == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &c| pool[a].id().cmp(pool[c].id()));
    let samples: Vec<Vec<Vec<Tag>>> = order
        .par_iter()
        .map(|&i| model.stochastic_predict(&pool[i], passes, rng_seed))
        .collect();
    // Per candidate: the class of each pass's parse (index of first equal parse).
    let classes: Vec<Vec<usize>> = samples
        .iter()
        .map(|s| (0..passes).map(|p| s[..=p].iter().position(|x| *x == s[p]).unwrap()).collect())
        .collect();
    // Joint class of each pass for the batch so far.
    let mut joint: Vec<usize> = vec![0; passes];
    let mut chosen = vec![false; order.len()];
    let mut out = Vec::with_capacity(b);
    for step in 0..b {
        let mut best: Option<(usize, usize)> = None;
        for (c, cls) in classes.iter().enumerate() {
            if chosen[c] {
                continue;
            }
            let keys: Vec<(usize, usize)> = joint.iter().copied().zip(cls.iter().copied()).collect();
            let modal = modal_count(&keys);
            // Candidates are visited in id order, so strict `<` keeps the lowest id.
            if best.map_or(true, |(_, m)| modal < m) {
                best = Some((c, modal));
            }
        }
        let (c, modal) = best.expect("unchosen candidate exists");
        chosen[c] = true;
        let keys: Vec<(usize, usize)> = joint.iter().copied().zip(classes[c].iter().copied()).collect();
        joint = (0..passes).map(|p| keys[..=p].iter().position(|k| *k == keys[p]).unwrap()).collect();
        out.push(QueryScore {
            instance_id: pool[order[c]].id().to_string(),
            strategy: StrategyId::BatchBald,
            score: 1.0 - modal as f64 / passes as f64,
            evidence: Evidence::JointSamples {
                passes,
                step,
                histogram: histogram(&samples[c]),
            },
        });
    }
    out
}

/// Ids chosen by [`select_batch_bald_scored`], in selection order.
pub fn select_batch_bald(model: &CrfModel, pool: &[TokenSequence], batch_size: usize, passes: usize, rng_seed: u64) -> Vec<String> {
    select_batch_bald_scored(model, pool, batch_size, passes, rng_seed)
        .into_iter()
        .map(|q| q.instance_id)
        .collect()
}
