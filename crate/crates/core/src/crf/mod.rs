//! Linear-chain CRF tagger over sparse word features.
//!
//! The chain runs over word-initial positions only: continuation subtokens
//! are bridged, carry the excluded tag in outputs, and never enter scores,
//! marginals or the training loss.

mod explain;
mod features;
pub mod inference;
mod persist;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelScheme, Tag, TokenSequence};
pub use explain::{explain_gradient, explain_occlusion, target_log_marginal_gradient};
pub use features::{word_shape, FeatureEncoder, FeatureTemplate, UNKNOWN_WORD};
use inference::Potentials;
pub use persist::MODEL_FORMAT;
pub use train::{objective, objective_gradient, train, train_anchored, Gradient, TrainConfig, TrainReport};

#[derive(Debug, Error)]
pub enum CrfError {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("no training data")]
    EmptyData,
    #[error("sequence `{0}` has no gold tags")]
    Unlabeled(String),
    #[error("tag `{0}` is not in the model scheme")]
    TagNotInScheme(String),
    #[error("expected {expected} tags, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("position {0} is not a word-initial subtoken")]
    NotWordInitial(usize),
    #[error("position {0} is out of range")]
    OutOfRange(usize),
    #[error("feature `{0}` is not in the frozen vocabulary")]
    UnknownFeature(String),
    #[error("unsupported model format `{0}`")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Decoding result for one sequence; all vectors are indexed by word.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// The Viterbi path, one tag per word.
    pub best_path: Vec<Tag>,
    /// `log P(best_path | x)`.
    pub path_log_prob: f64,
    /// Per-word tag distributions in scheme order; empty when only decoding.
    pub token_marginals: Vec<Vec<f64>>,
    pub saliency: Option<Vec<f64>>,
}

impl Prediction {
    /// Marginal probability of the decoded tag at every word.
    pub fn path_confidences(&self, scheme: &LabelScheme) -> Vec<f64> {
        self.best_path
            .iter()
            .zip(&self.token_marginals)
            .map(|(t, row)| scheme.tag_index(t).map_or(0.0, |k| row[k]))
            .collect()
    }
}

/// Emission and transition weights plus the scheme and encoder they refer to.
///
/// Transition slots `0..K` are tags, `K` is START and `K + 1` is STOP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrfModel {
    scheme: LabelScheme,
    encoder: FeatureEncoder,
    emissions: Vec<f64>,
    transitions: Vec<f64>,
    hard_bio_constraints: bool,
    theta_version: u64,
}

impl CrfModel {
    pub fn new(scheme: LabelScheme, encoder: FeatureEncoder, hard_bio_constraints: bool) -> Self {
        let k = scheme.num_tags();
        let emissions = vec![0.0; encoder.num_features() * k];
        Self {
            scheme,
            encoder,
            emissions,
            transitions: vec![0.0; (k + 2) * (k + 2)],
            hard_bio_constraints,
            theta_version: 0,
        }
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn encoder(&self) -> &FeatureEncoder {
        &self.encoder
    }

    pub fn num_tags(&self) -> usize {
        self.scheme.num_tags()
    }

    pub fn num_features(&self) -> usize {
        self.encoder.num_features()
    }

    pub fn hard_bio_constraints(&self) -> bool {
        self.hard_bio_constraints
    }

    pub fn theta_version(&self) -> u64 {
        self.theta_version
    }

    pub(crate) fn bump_version(&mut self) {
        self.theta_version += 1;
    }

    pub fn set_dropout_rate(&mut self, rate: f64) {
        self.encoder.set_dropout_rate(rate);
    }

    pub fn freeze_vocab(&mut self) {
        self.encoder.freeze();
    }

    pub fn start_slot(&self) -> usize {
        self.num_tags()
    }

    pub fn stop_slot(&self) -> usize {
        self.num_tags() + 1
    }

    pub fn emission_weights(&self) -> &[f64] {
        &self.emissions
    }

    pub fn transition_weights(&self) -> &[f64] {
        &self.transitions
    }

    pub(crate) fn weights_mut(&mut self) -> (&mut [f64], &mut [f64]) {
        (&mut self.emissions, &mut self.transitions)
    }

    pub fn emission_weight(&self, feature: u32, tag: usize) -> f64 {
        self.emissions[feature as usize * self.num_tags() + tag]
    }

    pub fn set_emission_weight(&mut self, feature: u32, tag: usize, w: f64) {
        let k = self.num_tags();
        self.emissions[feature as usize * k + tag] = w;
    }

    /// Sets the weight of a named feature for a tag, adding the feature to
    /// the vocabulary if needed.
    pub fn set_feature_weight(&mut self, feature: &str, tag: &Tag, w: f64) -> Result<(), CrfError> {
        let k = self.scheme.tag_index(tag).ok_or_else(|| CrfError::TagNotInScheme(tag.to_string()))?;
        let f = self
            .encoder
            .intern_name(feature)
            .ok_or_else(|| CrfError::UnknownFeature(feature.to_string()))?;
        self.sync_emissions();
        self.set_emission_weight(f, k, w);
        Ok(())
    }

    pub fn transition_weight(&self, from: usize, to: usize) -> f64 {
        self.transitions[from * (self.num_tags() + 2) + to]
    }

    pub fn set_transition_weight(&mut self, from: usize, to: usize, w: f64) {
        let n = self.num_tags() + 2;
        self.transitions[from * n + to] = w;
    }

    /// Whether a transition between slots is permitted under the BIO rules
    /// (always true when hard constraints are off).
    pub fn allowed(&self, from: usize, to: usize) -> bool {
        if !self.hard_bio_constraints {
            return true;
        }
        let k = self.num_tags();
        if to == self.stop_slot() {
            return true;
        }
        debug_assert!(to < k);
        // I-e has even index 2 + 2i; B-e is the odd index just below it.
        if to == 0 || to % 2 == 1 {
            return true;
        }
        from < k && (from == to || from == to - 1)
    }

    fn sync_emissions(&mut self) {
        let want = self.encoder.num_features() * self.num_tags();
        if self.emissions.len() < want {
            self.emissions.resize(want, 0.0);
        }
    }

    /// Feature indices for each word of the sequence.
    pub fn encode(&self, seq: &TokenSequence) -> Vec<Vec<u32>> {
        self.encoder.encode(&seq.words())
    }

    /// Adds the sequences' features to the vocabulary (no-op when frozen).
    pub fn extend_vocab<'a>(&mut self, seqs: impl IntoIterator<Item = &'a TokenSequence>) {
        for s in seqs {
            self.encoder.encode_growing(&s.words());
        }
        self.sync_emissions();
    }

    pub(crate) fn encode_growing(&mut self, seq: &TokenSequence) -> Vec<Vec<u32>> {
        let f = self.encoder.encode_growing(&seq.words());
        self.sync_emissions();
        f
    }

    /// Log-potentials for encoded words, each active feature scaled by `scale`.
    pub fn potentials_scaled(&self, feats: &[Vec<u32>], scale: f64) -> Potentials {
        let k = self.num_tags();
        let n = k + 2;
        let mut emissions = vec![0.0; feats.len() * k];
        for (i, fs) in feats.iter().enumerate() {
            let row = &mut emissions[i * k..(i + 1) * k];
            for &f in fs {
                let w = &self.emissions[f as usize * k..(f as usize + 1) * k];
                for (r, x) in row.iter_mut().zip(w) {
                    *r += scale * x;
                }
            }
        }
        let mask = |from: usize, to: usize, w: f64| if self.allowed(from, to) { w } else { f64::NEG_INFINITY };
        let start = (0..k)
            .map(|j| mask(self.start_slot(), j, self.transitions[self.start_slot() * n + j]))
            .collect();
        let stop = (0..k)
            .map(|j| mask(j, self.stop_slot(), self.transitions[j * n + self.stop_slot()]))
            .collect();
        let mut trans = vec![0.0; k * k];
        for a in 0..k {
            for b in 0..k {
                trans[a * k + b] = mask(a, b, self.transitions[a * n + b]);
            }
        }
        Potentials::new(feats.len(), k, emissions, start, stop, trans)
    }

    pub fn potentials(&self, feats: &[Vec<u32>]) -> Potentials {
        self.potentials_scaled(feats, 1.0)
    }

    fn path_tags(&self, path: &[usize]) -> Vec<Tag> {
        path.iter().map(|&k| self.scheme.tag(k)).collect()
    }

    /// Viterbi parse with its log-probability; marginals are left empty.
    pub fn viterbi_decode(&self, seq: &TokenSequence) -> Result<Prediction, CrfError> {
        let pot = self.potentials(&self.encode(seq));
        let (path, score) = pot.viterbi();
        let fb = pot.forward_backward()?;
        Ok(Prediction {
            best_path: self.path_tags(&path),
            path_log_prob: score - fb.log_partition(),
            token_marginals: Vec::new(),
            saliency: None,
        })
    }

    /// Viterbi parse plus per-word marginals from one forward-backward pass.
    pub fn predict(&self, seq: &TokenSequence) -> Result<Prediction, CrfError> {
        let pot = self.potentials(&self.encode(seq));
        let (path, score) = pot.viterbi();
        let fb = pot.forward_backward()?;
        Ok(Prediction {
            best_path: self.path_tags(&path),
            path_log_prob: score - fb.log_partition(),
            token_marginals: fb.marginals(),
            saliency: None,
        })
    }

    /// `P(y_i = k | x)` for every word `i`, in scheme tag order.
    pub fn token_marginals(&self, seq: &TokenSequence) -> Result<Vec<Vec<f64>>, CrfError> {
        let pot = self.potentials(&self.encode(seq));
        Ok(pot.forward_backward()?.marginals())
    }

    /// Converts word-level or subtoken-level tags to word-level tag indices.
    pub fn tag_indices(&self, seq: &TokenSequence, tags: &[Tag]) -> Result<Vec<usize>, CrfError> {
        let word_tags: Vec<&Tag> = if tags.len() == seq.word_count() {
            tags.iter().collect()
        } else if tags.len() == seq.len() {
            tags.iter()
                .zip(seq.is_word_initial())
                .filter(|(_, &init)| init)
                .map(|(t, _)| t)
                .collect()
        } else {
            return Err(CrfError::LengthMismatch {
                expected: seq.word_count(),
                got: tags.len(),
            });
        };
        word_tags
            .into_iter()
            .map(|t| self.scheme.tag_index(t).ok_or_else(|| CrfError::TagNotInScheme(t.to_string())))
            .collect()
    }

    /// `log P(tags | x)`; `-inf` for a sequence the hard constraints forbid.
    /// Accepts one tag per word or one per subtoken (with `X` on continuations).
    pub fn sequence_log_prob(&self, seq: &TokenSequence, tags: &[Tag]) -> Result<f64, CrfError> {
        let path = self.tag_indices(seq, tags)?;
        let pot = self.potentials(&self.encode(seq));
        let fb = pot.forward_backward()?;
        Ok(pot.path_score(&path) - fb.log_partition())
    }

    /// Viterbi parses under `passes` independent feature-dropout masks.
    ///
    /// Pass `p` draws its mask from a generator seeded with `rng_seed + p`,
    /// so identical inputs see identical masks. Kept features are scaled by
    /// `1 / (1 - rate)`.
    pub fn stochastic_predict(&self, seq: &TokenSequence, passes: usize, rng_seed: u64) -> Vec<Vec<Tag>> {
        let feats = self.encode(seq);
        let rate = self.encoder.dropout_rate();
        if rate == 0.0 {
            let path = self.path_tags(&self.potentials(&feats).viterbi().0);
            return vec![path; passes];
        }
        (0..passes as u64)
            .map(|p| {
                let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_add(p));
                let masked: Vec<Vec<u32>> = feats
                    .iter()
                    .map(|fs| fs.iter().copied().filter(|_| rng.random::<f64>() >= rate).collect())
                    .collect();
                let pot = self.potentials_scaled(&masked, 1.0 / (1.0 - rate));
                self.path_tags(&pot.viterbi().0)
            })
            .collect()
    }
}
