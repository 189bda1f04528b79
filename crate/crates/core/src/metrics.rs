//! Entity-level and token-level evaluation, and inter-annotator agreement.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Tag, TokenSequence};
use crate::crf::{CrfError, CrfModel};

/// A labeled span over words `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity: String,
}

/// Entity spans of a word-level BIO sequence. An `I-e` that does not
/// continue an `e` span opens a new one; `X` is skipped.
pub fn extract_spans(tags: &[Tag]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, t) in tags.iter().enumerate() {
        match t {
            Tag::Excluded => continue,
            Tag::Inside(e) if open.as_ref().is_some_and(|s| &s.entity == e) => {
                open.as_mut().unwrap().end = i + 1;
            }
            Tag::Begin(e) | Tag::Inside(e) => {
                spans.extend(open.take());
                open = Some(Span {
                    start: i,
                    end: i + 1,
                    entity: e.clone(),
                });
            }
            Tag::Outside => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

/// Micro-averaged exact-span precision, recall and F1. Undefined ratios
/// are reported as 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EntityMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl EntityMetrics {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Self {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

/// Scores `(gold, predicted)` word-level tag pairs.
pub fn entity_metrics<'a>(pairs: impl IntoIterator<Item = (&'a [Tag], &'a [Tag])>) -> EntityMetrics {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (gold, pred) in pairs {
        let g = extract_spans(gold);
        let p = extract_spans(pred);
        tp += p.iter().filter(|s| g.contains(s)).count();
        np += p.len();
        ng += g.len();
    }
    EntityMetrics::from_counts(tp, np, ng)
}

/// Viterbi predictions of `model` on labeled data, scored against gold.
/// Unlabeled sequences are ignored.
pub fn evaluate(model: &CrfModel, data: &[TokenSequence]) -> Result<EntityMetrics, CrfError> {
    let mut pairs = Vec::with_capacity(data.len());
    for seq in data {
        if let Some(gold) = seq.word_tags() {
            pairs.push((gold, model.viterbi_decode(seq)?.best_path));
        }
    }
    Ok(entity_metrics(pairs.iter().map(|(g, p)| (g.as_slice(), p.as_slice()))))
}

/// Quality of the corpus produced jointly by annotators and the model:
/// human labels where instances were annotated, model predictions elsewhere.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct InclusiveMetrics {
    /// Correct word tags over all word tags of the joint corpus.
    pub accuracy: f64,
    pub entity: EntityMetrics,
    pub human_instances: usize,
    pub model_instances: usize,
    pub human_correct: usize,
    pub model_correct: usize,
    pub total_words: usize,
}

/// `human` and `model` hold `(gold, assigned)` word-level tag pairs.
pub fn inclusive_metrics(human: &[(Vec<Tag>, Vec<Tag>)], model: &[(Vec<Tag>, Vec<Tag>)]) -> InclusiveMetrics {
    let correct = |part: &[(Vec<Tag>, Vec<Tag>)]| -> usize {
        part.iter()
            .map(|(g, a)| g.iter().zip(a).filter(|(x, y)| x == y).count())
            .sum()
    };
    let total_words: usize = human.iter().chain(model).map(|(g, _)| g.len()).sum();
    let human_correct = correct(human);
    let model_correct = correct(model);
    InclusiveMetrics {
        accuracy: if total_words == 0 {
            0.0
        } else {
            (human_correct + model_correct) as f64 / total_words as f64
        },
        entity: entity_metrics(human.iter().chain(model).map(|(g, a)| (g.as_slice(), a.as_slice()))),
        human_instances: human.len(),
        model_instances: model.len(),
        human_correct,
        model_correct,
        total_words,
    }
}

/// Observed agreement and Cohen's kappa over aligned labels.
///
/// When chance agreement is 1 (both raters use one identical label) kappa
/// is defined as 1. Empty input gives agreement 0 and kappa 0.
pub fn cohen_kappa<T: Ord>(a: &[T], b: &[T]) -> (f64, f64) {
    assert_eq!(a.len(), b.len(), "label sequences must be aligned");
    let n = a.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let agree = a.iter().zip(b).filter(|(x, y)| x == y).count();
    let mut ca: BTreeMap<&T, usize> = BTreeMap::new();
    let mut cb: BTreeMap<&T, usize> = BTreeMap::new();
    for (x, y) in a.iter().zip(b) {
        *ca.entry(x).or_default() += 1;
        *cb.entry(y).or_default() += 1;
    }
    let nf = n as f64;
    let p_o = agree as f64 / nf;
    let p_e: f64 = ca
        .iter()
        .map(|(k, &c)| c as f64 / nf * cb.get(k).copied().unwrap_or(0) as f64 / nf)
        .sum();
    if (1.0 - p_e).abs() < 1e-12 {
        return (p_o, 1.0);
    }
    (p_o, (p_o - p_e) / (1.0 - p_e))
}
