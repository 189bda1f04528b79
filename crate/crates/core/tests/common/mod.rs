//! Brute-force reference computations shared by the integration tests.

#![allow(dead_code)]

use nerloop_core::corpus::{split_unlabeled, LabelScheme, SubwordSplitter, Tag, TokenSequence};
use nerloop_core::crf::{FeatureEncoder, FeatureTemplate};
use nerloop_core::CrfModel;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const VOCAB: [&str; 6] = ["aa", "bb", "cc", "dd", "ee", "ff"];

/// A model over `Word` features with random weights for every vocabulary
/// word and transition slot.
pub fn random_model(rng: &mut ChaCha8Rng, entity_types: usize, constrained: bool, scale: f64) -> CrfModel {
    let names: Vec<String> = (0..entity_types).map(|i| format!("E{i}")).collect();
    let scheme = LabelScheme::new(names).unwrap();
    let tags = scheme.tags();
    let mut m = CrfModel::new(scheme, FeatureEncoder::new(vec![FeatureTemplate::Word], 0.0), constrained);
    for w in VOCAB {
        for t in &tags {
            m.set_feature_weight(&format!("w={w}"), t, scale * rng.random_range(-1.0..1.0)).unwrap();
        }
    }
    let slots = m.num_tags() + 2;
    for a in 0..slots {
        for b in 0..slots {
            m.set_transition_weight(a, b, scale * rng.random_range(-1.0..1.0));
        }
    }
    m
}

pub fn random_sentence(rng: &mut ChaCha8Rng, id: &str, len: usize) -> TokenSequence {
    let words: Vec<&str> = (0..len).map(|_| VOCAB[rng.random_range(0..VOCAB.len())]).collect();
    split_unlabeled(id, &words, &SubwordSplitter::identity()).unwrap()
}

/// Every tag sequence with its unnormalized log-score.
pub struct Enumeration {
    pub paths: Vec<(Vec<usize>, f64)>,
    pub log_z: f64,
    pub len: usize,
    pub tags: usize,
}

fn oracle_allowed(model: &CrfModel, prev: Option<usize>, next: usize) -> bool {
    if !model.hard_bio_constraints() {
        return true;
    }
    let next = model.scheme().tag(next).to_string();
    let Some(ent) = next.strip_prefix("I-") else {
        return true;
    };
    match prev {
        None => false,
        Some(p) => {
            let p = model.scheme().tag(p).to_string();
            p == format!("B-{ent}") || p == format!("I-{ent}")
        }
    }
}

/// Per-word emission scores summed directly from the weight table.
pub fn emission_table(model: &CrfModel, seq: &TokenSequence) -> Vec<Vec<f64>> {
    model
        .encode(seq)
        .iter()
        .map(|fs| (0..model.num_tags()).map(|k| fs.iter().map(|&f| model.emission_weight(f, k)).sum()).collect())
        .collect()
}

pub fn path_score(model: &CrfModel, em: &[Vec<f64>], path: &[usize]) -> f64 {
    let (start, stop) = (model.start_slot(), model.stop_slot());
    let mut s = 0.0;
    let mut prev: Option<usize> = None;
    for (i, &y) in path.iter().enumerate() {
        if !oracle_allowed(model, prev, y) {
            return f64::NEG_INFINITY;
        }
        s += em[i][y] + model.transition_weight(prev.unwrap_or(start), y);
        prev = Some(y);
    }
    s + model.transition_weight(prev.unwrap(), stop)
}

pub fn enumerate(model: &CrfModel, seq: &TokenSequence) -> Enumeration {
    let em = emission_table(model, seq);
    let (t, k) = (em.len(), model.num_tags());
    let total = k.pow(t as u32);
    let mut paths = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut path = vec![0; t];
        for slot in path.iter_mut().rev() {
            *slot = code % k;
            code /= k;
        }
        let s = path_score(model, &em, &path);
        paths.push((path, s));
    }
    let max = paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + paths.iter().map(|p| (p.1 - max).exp()).sum::<f64>().ln();
    Enumeration {
        paths,
        log_z,
        len: t,
        tags: k,
    }
}

impl Enumeration {
    pub fn prob(&self, score: f64) -> f64 {
        (score - self.log_z).exp()
    }

    /// `P(y_i = k)` for every position and tag, accumulated in one pass.
    pub fn marginals(&self) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; self.tags]; self.len];
        for (path, score) in &self.paths {
            let p = self.prob(*score);
            for (i, &y) in path.iter().enumerate() {
                m[i][y] += p;
            }
        }
        m
    }

    /// `P(y_i = a, y_{i+1} = b)` indexed `[i][a][b]`.
    pub fn pairwise(&self) -> Vec<Vec<Vec<f64>>> {
        let mut m = vec![vec![vec![0.0; self.tags]; self.tags]; self.len.saturating_sub(1)];
        for (path, score) in &self.paths {
            let p = self.prob(*score);
            for i in 0..path.len().saturating_sub(1) {
                m[i][path[i]][path[i + 1]] += p;
            }
        }
        m
    }

    /// Highest-scoring path; among equal scores the lexicographically
    /// smallest, and whether the maximum is unique.
    pub fn best(&self) -> (Vec<usize>, f64, bool) {
        let max = self.paths.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        let winners: Vec<_> = self.paths.iter().filter(|p| p.1 == max).collect();
        (winners[0].0.clone(), max, winners.len() == 1)
    }

    pub fn tags_of(model: &CrfModel, path: &[usize]) -> Vec<Tag> {
        path.iter().map(|&k| model.scheme().tag(k)).collect()
    }
}
