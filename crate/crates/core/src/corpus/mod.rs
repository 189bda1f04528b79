//! Corpus types: subtoken sequences with word alignment, BIO tags, label
//! schemes and the seed/pool/validation/test split used by the active loop.

mod io;
mod scheme;
mod subword;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{parse_corpus, read_corpus, write_corpus, CorpusFormat};
pub use scheme::{map_labels, LabelScheme, LabelTarget, MappingRule};
pub use subword::{apply_subtoken_rule, split_unlabeled, SubwordSplitter};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("line {line}: unknown tag `{tag}`")]
    UnknownTagAt { line: usize, tag: String },
    #[error("unmapped source labels: {}", .0.join(", "))]
    Unmapped(Vec<String>),
    #[error("duplicate entity type `{0}`")]
    DuplicateEntityType(String),
    #[error("mapping target `{0}` is not an entity type of the scheme")]
    BadMappingTarget(String),
    #[error("splitter produced no pieces for word `{0}`")]
    EmptySplit(String),
    #[error("invalid sequence `{id}`: {message}")]
    InvalidSequence { id: String, message: String },
    #[error("instance id `{0}` appears in more than one partition")]
    OverlappingSplit(String),
    #[error("empty lexicon for entity type `{0}`")]
    EmptyLexicon(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A BIO tag, or the sentinel carried by non-initial subtokens.
///
/// Serialized as `O`, `B-<type>`, `I-<type>` and `X`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
    Excluded,
}

impl Tag {
    pub fn entity(&self) -> Option<&str> {
        match self {
            Tag::Begin(e) | Tag::Inside(e) => Some(e),
            _ => None,
        }
    }

    pub fn is_excluded(&self) -> bool {
        matches!(self, Tag::Excluded)
    }

    /// Same prefix, different entity type.
    pub fn with_entity(&self, entity: &str) -> Tag {
        match self {
            Tag::Begin(_) => Tag::Begin(entity.to_string()),
            Tag::Inside(_) => Tag::Inside(entity.to_string()),
            other => other.clone(),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(e) => write!(f, "B-{e}"),
            Tag::Inside(e) => write!(f, "I-{e}"),
            Tag::Excluded => f.write_str("X"),
        }
    }
}

impl FromStr for Tag {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "O" => Ok(Tag::Outside),
            "X" => Ok(Tag::Excluded),
            _ => {
                if let Some(e) = s.strip_prefix("B-").filter(|e| !e.is_empty()) {
                    Ok(Tag::Begin(e.to_string()))
                } else if let Some(e) = s.strip_prefix("I-").filter(|e| !e.is_empty()) {
                    Ok(Tag::Inside(e.to_string()))
                } else {
                    Err(CorpusError::UnknownTag(s.to_string()))
                }
            }
        }
    }
}

impl From<Tag> for String {
    fn from(t: Tag) -> String {
        t.to_string()
    }
}

impl TryFrom<String> for Tag {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// True when `next` may follow `prev` in a well-formed BIO sequence.
/// `None` stands for the sequence start.
pub fn bio_transition_ok(prev: Option<&Tag>, next: &Tag) -> bool {
    match next {
        Tag::Inside(e) => match prev {
            Some(Tag::Begin(p)) | Some(Tag::Inside(p)) => p == e,
            _ => false,
        },
        _ => true,
    }
}

/// One sentence as subtokens aligned to source words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct TokenSequence {
    id: String,
    subtokens: Vec<String>,
    word_index: Vec<usize>,
    is_word_initial: Vec<bool>,
    gold_tags: Option<Vec<Tag>>,
}

#[derive(Deserialize)]
struct RawSequence {
    id: String,
    subtokens: Vec<String>,
    word_index: Vec<usize>,
    #[allow(dead_code)]
    is_word_initial: Vec<bool>,
    gold_tags: Option<Vec<Tag>>,
}

impl TryFrom<RawSequence> for TokenSequence {
    type Error = CorpusError;
    fn try_from(r: RawSequence) -> Result<Self, Self::Error> {
        TokenSequence::new(r.id, r.subtokens, r.word_index, r.gold_tags)
    }
}

impl TokenSequence {
    /// Builds a sequence and checks the alignment and tag invariants.
    ///
    /// `word_index` must start at 0 and grow by at most one per subtoken.
    /// When tags are given, word-initial subtokens carry BIO tags forming a
    /// well-formed BIO run and all other subtokens carry [`Tag::Excluded`].
    pub fn new(
        id: impl Into<String>,
        subtokens: Vec<String>,
        word_index: Vec<usize>,
        gold_tags: Option<Vec<Tag>>,
    ) -> Result<Self, CorpusError> {
        let id = id.into();
        let invalid = |message: String| CorpusError::InvalidSequence {
            id: id.clone(),
            message,
        };
        if subtokens.is_empty() {
            return Err(invalid("sequence has no subtokens".into()));
        }
        if word_index.len() != subtokens.len() {
            return Err(invalid("word_index length differs from subtokens".into()));
        }
        if word_index[0] != 0 {
            return Err(invalid("word_index must start at 0".into()));
        }
        let mut is_word_initial = Vec::with_capacity(subtokens.len());
        for (i, &w) in word_index.iter().enumerate() {
            if i == 0 {
                is_word_initial.push(true);
                continue;
            }
            let prev = word_index[i - 1];
            if w == prev {
                is_word_initial.push(false);
            } else if w == prev + 1 {
                is_word_initial.push(true);
            } else {
                return Err(invalid(format!("word_index jumps from {prev} to {w}")));
            }
        }
        if let Some(tags) = &gold_tags {
            if tags.len() != subtokens.len() {
                return Err(invalid("gold tag count differs from subtokens".into()));
            }
            let mut prev: Option<&Tag> = None;
            for (i, tag) in tags.iter().enumerate() {
                if is_word_initial[i] {
                    if tag.is_excluded() {
                        return Err(invalid(format!("word-initial subtoken {i} is tagged X")));
                    }
                    if !bio_transition_ok(prev, tag) {
                        return Err(invalid(format!("ill-formed BIO: `{tag}` at subtoken {i}")));
                    }
                    prev = Some(tag);
                } else if !tag.is_excluded() {
                    return Err(invalid(format!(
                        "non-initial subtoken {i} carries `{tag}` instead of X"
                    )));
                }
            }
        }
        Ok(Self {
            id,
            subtokens,
            word_index,
            is_word_initial,
            gold_tags,
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn subtokens(&self) -> &[String] {
        &self.subtokens
    }

    pub fn word_index(&self) -> &[usize] {
        &self.word_index
    }

    pub fn is_word_initial(&self) -> &[bool] {
        &self.is_word_initial
    }

    pub fn gold_tags(&self) -> Option<&[Tag]> {
        self.gold_tags.as_deref()
    }

    pub fn len(&self) -> usize {
        self.subtokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subtokens.is_empty()
    }

    pub fn word_count(&self) -> usize {
        self.word_index.last().map_or(0, |w| w + 1)
    }

    /// Subtoken position of the first piece of every word.
    pub fn word_starts(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.is_word_initial[i]).collect()
    }

    /// Source words reassembled from their pieces (continuation markers removed).
    pub fn words(&self) -> Vec<String> {
        let mut words = vec![String::new(); self.word_count()];
        for (piece, &w) in self.subtokens.iter().zip(&self.word_index) {
            words[w].push_str(piece.strip_prefix("##").unwrap_or(piece));
        }
        words
    }

    /// Gold tags at word-initial positions only.
    pub fn word_tags(&self) -> Option<Vec<Tag>> {
        self.gold_tags.as_ref().map(|tags| {
            tags.iter()
                .zip(&self.is_word_initial)
                .filter(|(_, &init)| init)
                .map(|(t, _)| t.clone())
                .collect()
        })
    }

    /// Expands one tag per word into one tag per subtoken.
    pub fn expand_word_tags(&self, word_tags: &[Tag]) -> Result<Vec<Tag>, CorpusError> {
        if word_tags.len() != self.word_count() {
            return Err(CorpusError::InvalidSequence {
                id: self.id.clone(),
                message: format!(
                    "expected {} word tags, got {}",
                    self.word_count(),
                    word_tags.len()
                ),
            });
        }
        Ok(self
            .word_index
            .iter()
            .zip(&self.is_word_initial)
            .map(|(&w, &init)| if init { word_tags[w].clone() } else { Tag::Excluded })
            .collect())
    }

    /// Copy of this sequence with gold replaced by the given word-level tags.
    pub fn with_word_tags(&self, word_tags: &[Tag]) -> Result<Self, CorpusError> {
        let tags = self.expand_word_tags(word_tags)?;
        TokenSequence::new(
            self.id.clone(),
            self.subtokens.clone(),
            self.word_index.clone(),
            Some(tags),
        )
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn without_gold(&self) -> Self {
        let mut s = self.clone();
        s.gold_tags = None;
        s
    }

}

/// Unlabeled pool whose gold labels stay behind the oracle interface.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Pool {
    items: Vec<TokenSequence>,
    oracle: BTreeMap<String, Vec<Tag>>,
}

impl Pool {
    /// Moves any gold tags into the oracle and keeps stripped instances.
    pub fn new(seqs: Vec<TokenSequence>) -> Self {
        let mut oracle = BTreeMap::new();
        let items = seqs
            .into_iter()
            .map(|s| {
                if let Some(tags) = s.word_tags() {
                    oracle.insert(s.id().to_string(), tags);
                }
                s.without_gold()
            })
            .collect();
        Self { items, oracle }
    }

    pub fn instances(&self) -> &[TokenSequence] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&TokenSequence> {
        self.items.iter().find(|s| s.id() == id)
    }

    /// Oracle access: the hidden word-level gold for a pool instance.
    pub fn reveal(&self, id: &str) -> Option<&[Tag]> {
        self.oracle.get(id).map(Vec::as_slice)
    }

    /// Removes and returns the instances with the given ids, in pool order.
    pub fn take(&mut self, ids: &BTreeSet<String>) -> Vec<TokenSequence> {
        let (taken, kept): (Vec<_>, Vec<_>) = std::mem::take(&mut self.items)
            .into_iter()
            .partition(|s| ids.contains(s.id()));
        self.items = kept;
        taken
    }
}

/// The four disjoint partitions consumed by the active loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub labeled_seed: Vec<TokenSequence>,
    pub unlabeled_pool: Pool,
    pub validation: Vec<TokenSequence>,
    pub test: Vec<TokenSequence>,
}

impl CorpusSplit {
    pub fn new(
        labeled_seed: Vec<TokenSequence>,
        pool: Vec<TokenSequence>,
        validation: Vec<TokenSequence>,
        test: Vec<TokenSequence>,
    ) -> Result<Self, CorpusError> {
        let mut seen = BTreeSet::new();
        for s in labeled_seed.iter().chain(&pool).chain(&validation).chain(&test) {
            if !seen.insert(s.id().to_string()) {
                return Err(CorpusError::OverlappingSplit(s.id().to_string()));
            }
        }
        Ok(Self {
            labeled_seed,
            unlabeled_pool: Pool::new(pool),
            validation,
            test,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn tag_parse_and_display() {
        for t in ["O", "X", "B-Drug", "I-Route"] {
            assert_eq!(t.parse::<Tag>().unwrap().to_string(), t);
        }
        assert!("B-".parse::<Tag>().is_err());
        assert!("E-Drug".parse::<Tag>().is_err());
    }

    #[test]
    fn word_alignment_derived() {
        let seq = TokenSequence::new(
            "a",
            s(&["di", "##ar", "##r", "##hea", "now"]),
            vec![0, 0, 0, 0, 1],
            None,
        )
        .unwrap();
        assert_eq!(seq.is_word_initial(), &[true, false, false, false, true]);
        assert_eq!(seq.words(), s(&["diarrhea", "now"]));
        assert_eq!(seq.word_starts(), vec![0, 4]);
    }

    #[test]
    fn rejects_tag_on_continuation_piece() {
        let err = TokenSequence::new(
            "a",
            s(&["di", "##ar"]),
            vec![0, 0],
            Some(vec![Tag::Begin("Diagnosis".into()), Tag::Outside]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn rejects_bad_alignment_and_empty() {
        assert!(TokenSequence::new("a", vec![], vec![], None).is_err());
        assert!(TokenSequence::new("a", s(&["x", "y"]), vec![0, 2], None).is_err());
        assert!(TokenSequence::new("a", s(&["x"]), vec![1], None).is_err());
    }

    #[test]
    fn rejects_ill_formed_bio() {
        let err = TokenSequence::new(
            "a",
            s(&["x", "y"]),
            vec![0, 1],
            Some(vec![Tag::Outside, Tag::Inside("Drug".into())]),
        );
        assert!(err.is_err());
    }

    #[test]
    fn pool_hides_gold() {
        let seq = TokenSequence::new("p1", s(&["x"]), vec![0], Some(vec![Tag::Outside])).unwrap();
        let pool = Pool::new(vec![seq]);
        assert!(pool.instances()[0].gold_tags().is_none());
        assert_eq!(pool.reveal("p1"), Some(&[Tag::Outside][..]));
    }

    #[test]
    fn split_rejects_shared_ids() {
        let seq = TokenSequence::new("p1", s(&["x"]), vec![0], None).unwrap();
        assert!(CorpusSplit::new(vec![seq.clone()], vec![seq], vec![], vec![]).is_err());
    }
}
