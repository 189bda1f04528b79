//! Information density: informativeness weighted by mean pool similarity.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use super::{score_ltp, Evidence, QueryError, QueryScore, StrategyId};
use crate::corpus::TokenSequence;
use crate::crf::CrfModel;

/// Cosine similarities among the pool, computed once and looked up.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    ids: Vec<String>,
    index: HashMap<String, usize>,
    values: Vec<f64>,
    densities: Vec<f64>,
    beta: f64,
}

fn bag(seq: &TokenSequence) -> Vec<(String, f64)> {
    let mut counts: BTreeMap<&str, f64> = BTreeMap::new();
    for (piece, &init) in seq.subtokens().iter().zip(seq.is_word_initial()) {
        if init {
            *counts.entry(piece.as_str()).or_default() += 1.0;
        }
    }
    let norm = counts.values().map(|c| c * c).sum::<f64>().sqrt();
    counts.into_iter().map(|(k, c)| (k.to_string(), c / norm)).collect()
}

fn dot(a: &[(String, f64)], b: &[(String, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

/// Cosine similarity of L2-normalized bags of word-initial subtokens.
pub fn build_similarity(pool: &[TokenSequence], beta: f64) -> SimilarityMatrix {
    let bags: Vec<_> = pool.iter().map(bag).collect();
    let n = pool.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { dot(&bags[i], &bags[j]) }).collect())
        .collect();
    // Make the matrix exactly symmetric.
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in i..n {
            values[i * n + j] = rows[i][j];
            values[j * n + i] = rows[i][j];
        }
    }
    SimilarityMatrix::from_values(pool.iter().map(|s| s.id().to_string()).collect(), values, beta)
        .expect("cosine matrix is well formed")
}

impl SimilarityMatrix {
    /// Checks shape, symmetry and unit diagonal (within 1e-9).
    pub fn from_values(ids: Vec<String>, values: Vec<f64>, beta: f64) -> Result<Self, QueryError> {
        let n = ids.len();
        if values.len() != n * n {
            return Err(QueryError::BadSimilarity(format!("{} values for {n} ids", values.len())));
        }
        if !(beta >= 0.0) {
            return Err(QueryError::BadSimilarity(format!("beta {beta} is negative")));
        }
        for i in 0..n {
            if (values[i * n + i] - 1.0).abs() > 1e-9 {
                return Err(QueryError::BadSimilarity(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                if (values[i * n + j] - values[j * n + i]).abs() > 1e-9 {
                    return Err(QueryError::BadSimilarity(format!("entries ({i}, {j}) are not symmetric")));
                }
            }
        }
        Ok(Self::assemble(ids, values, beta))
    }

    fn assemble(ids: Vec<String>, values: Vec<f64>, beta: f64) -> Self {
        let n = ids.len();
        // Summing in sorted order gives rows with equal entries equal sums,
        // so duplicate instances tie exactly.
        let densities = (0..n)
            .map(|i| {
                let mut row = values[i * n..(i + 1) * n].to_vec();
                row.sort_by(f64::total_cmp);
                row.iter().sum::<f64>() / n as f64
            })
            .collect();
        let index = ids.iter().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        Self {
            ids,
            index,
            values,
            densities,
            beta,
        }
    }

    /// Every similarity multiplied by `c` (the diagonal included).
    pub fn scaled(&self, c: f64) -> Self {
        Self::assemble(self.ids.clone(), self.values.iter().map(|v| v * c).collect(), self.beta)
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let (i, j) = (*self.index.get(a)?, *self.index.get(b)?);
        Some(self.values[i * self.len() + j])
    }

    /// Mean similarity of `id` to every pool instance, itself included.
    pub fn density(&self, id: &str) -> Option<f64> {
        self.index.get(id).map(|&i| self.densities[i])
    }
}

/// `base × density^β` for an already computed base score.
pub fn score_id_with_base(base: &QueryScore, sim: &SimilarityMatrix) -> Result<QueryScore, QueryError> {
    let density = sim
        .density(&base.instance_id)
        .ok_or_else(|| QueryError::NotInSimilarity(base.instance_id.clone()))?;
    Ok(QueryScore {
        instance_id: base.instance_id.clone(),
        strategy: StrategyId::Id,
        score: base.score * density.powf(sim.beta()),
        evidence: Evidence::Density {
            base_strategy: base.strategy,
            base: base.score,
            density,
            beta: sim.beta(),
        },
    })
}

/// Information density with the lowest-token-probability base.
pub fn score_id(model: &CrfModel, seq: &TokenSequence, sim: &SimilarityMatrix) -> Result<QueryScore, QueryError> {
    if sim.density(seq.id()).is_none() {
        return Err(QueryError::NotInSimilarity(seq.id().to_string()));
    }
    score_id_with_base(&score_ltp(model, seq)?, sim)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_unlabeled, SubwordSplitter};

    fn s(id: &str, words: &[&str]) -> TokenSequence {
        split_unlabeled(id, words, &SubwordSplitter::identity()).unwrap()
    }

    #[test]
    fn hand_computed_cosines() {
        // {a,b,c}·{a,d,e} = 1 / (√3·√3); {a,a} normalizes to (1) on a.
        let pool = [s("x", &["a", "b", "c"]), s("y", &["a", "d", "e"]), s("z", &["a", "a"]), s("w", &["q"])];
        let m = build_similarity(&pool, 1.0);
        assert!((m.get("x", "y").unwrap() - 1.0 / 3.0).abs() < 1e-12);
        assert!((m.get("x", "z").unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert_eq!(m.get("x", "w").unwrap(), 0.0);
        assert_eq!(m.get("w", "w").unwrap(), 1.0);
        let dx = (1.0 + 1.0 / 3.0 + 1.0 / 3f64.sqrt()) / 4.0;
        assert!((m.density("x").unwrap() - dx).abs() < 1e-12);
    }

    #[test]
    fn subword_continuations_are_ignored() {
        let sp = SubwordSplitter::new(["ab", "##c", "ab"]);
        let a = split_unlabeled("a", &["abc"], &sp).unwrap();
        let b = split_unlabeled("b", &["ab"], &sp).unwrap();
        assert!((build_similarity(&[a, b], 1.0).get("a", "b").unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_pool_and_missing_instance() {
        let m = build_similarity(&[], 1.0);
        assert!(m.is_empty());
        let base = QueryScore {
            instance_id: "nope".into(),
            strategy: StrategyId::Ltp,
            score: 0.5,
            evidence: Evidence::Random { seed: 0 },
        };
        assert!(matches!(score_id_with_base(&base, &m), Err(QueryError::NotInSimilarity(_))));
    }

    #[test]
    fn beta_two_squares_density() {
        let pool = [s("x", &["a", "b"]), s("y", &["a"])];
        let m = build_similarity(&pool, 2.0);
        let base = QueryScore {
            instance_id: "x".into(),
            strategy: StrategyId::Ltp,
            score: 0.3,
            evidence: Evidence::Random { seed: 0 },
        };
        let d = m.density("x").unwrap();
        assert_eq!(score_id_with_base(&base, &m).unwrap().score, 0.3 * d * d);
    }
}
