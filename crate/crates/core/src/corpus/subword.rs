use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Tag, TokenSequence};

/// Greedy longest-match-first subword splitter over a fixed piece vocabulary.
///
/// Vocabulary entries that continue a word carry the `##` marker, as in
/// WordPiece. When no entry matches at some offset the remainder of the word
/// becomes a single piece, so an empty vocabulary leaves words whole.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubwordSplitter {
    vocab: BTreeSet<String>,
}

impl SubwordSplitter {
    pub fn new<S: Into<String>>(pieces: impl IntoIterator<Item = S>) -> Self {
        Self {
            vocab: pieces.into_iter().map(Into::into).collect(),
        }
    }

    /// Splitter that never splits.
    pub fn identity() -> Self {
        Self::default()
    }

    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    pub fn split(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut pieces = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let marker = if start == 0 { "" } else { "##" };
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let candidate: String = chars[start..end].iter().collect();
                let key = format!("{marker}{candidate}");
                if self.vocab.contains(&key) {
                    matched = Some((end, key));
                    break;
                }
            }
            match matched {
                Some((end, key)) => {
                    pieces.push(key);
                    start = end;
                }
                None => {
                    let rest: String = chars[start..].iter().collect();
                    pieces.push(format!("{marker}{rest}"));
                    break;
                }
            }
        }
        pieces
    }
}

fn build(
    id: &str,
    words: &[(&str, Option<Tag>)],
    splitter: &SubwordSplitter,
) -> Result<TokenSequence, CorpusError> {
    let labeled = words.iter().all(|(_, t)| t.is_some());
    let mut subtokens = Vec::new();
    let mut word_index = Vec::new();
    let mut tags = Vec::new();
    for (w, (word, tag)) in words.iter().enumerate() {
        let pieces = splitter.split(word);
        if pieces.is_empty() {
            return Err(CorpusError::EmptySplit(word.to_string()));
        }
        for (p, piece) in pieces.into_iter().enumerate() {
            subtokens.push(piece);
            word_index.push(w);
            if labeled {
                let t = tag.clone().expect("checked labeled");
                tags.push(if p == 0 { t } else { Tag::Excluded });
            }
        }
    }
    TokenSequence::new(id, subtokens, word_index, labeled.then_some(tags))
}

/// Splits each word into subtokens; the first piece inherits the word's tag
/// and every further piece is tagged [`Tag::Excluded`].
pub fn apply_subtoken_rule(
    id: &str,
    words: &[(&str, Tag)],
    splitter: &SubwordSplitter,
) -> Result<TokenSequence, CorpusError> {
    if let Some((w, _)) = words.iter().find(|(_, t)| t.is_excluded()) {
        return Err(CorpusError::InvalidSequence {
            id: id.to_string(),
            message: format!("word `{w}` carries the excluded tag"),
        });
    }
    let words: Vec<(&str, Option<Tag>)> = words.iter().map(|(w, t)| (*w, Some(t.clone()))).collect();
    build(id, &words, splitter)
}

/// Splits unlabeled words into an untagged sequence.
pub fn split_unlabeled(
    id: &str,
    words: &[&str],
    splitter: &SubwordSplitter,
) -> Result<TokenSequence, CorpusError> {
    let words: Vec<(&str, Option<Tag>)> = words.iter().map(|w| (*w, None)).collect();
    build(id, &words, splitter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diarrhea_splits_like_the_wordpiece_example() {
        let splitter = SubwordSplitter::new(["di", "##ar", "##r", "##hea"]);
        assert_eq!(splitter.split("diarrhea"), vec!["di", "##ar", "##r", "##hea"]);
        let seq = apply_subtoken_rule(
            "s",
            &[("diarrhea", Tag::Begin("Disorder".into()))],
            &splitter,
        )
        .unwrap();
        assert_eq!(
            seq.gold_tags().unwrap(),
            &[
                Tag::Begin("Disorder".into()),
                Tag::Excluded,
                Tag::Excluded,
                Tag::Excluded
            ]
        );
    }

    #[test]
    fn single_piece_word() {
        let seq = apply_subtoken_rule("s", &[("he", Tag::Outside)], &SubwordSplitter::identity()).unwrap();
        assert_eq!(seq.subtokens(), &["he"]);
        assert_eq!(seq.gold_tags().unwrap(), &[Tag::Outside]);
    }

    #[test]
    fn alignment_over_two_words() {
        let splitter = SubwordSplitter::new(["fe", "##ver"]);
        let seq = apply_subtoken_rule(
            "s",
            &[("fever", Tag::Begin("Diagnosis".into())), ("now", Tag::Outside)],
            &splitter,
        )
        .unwrap();
        assert_eq!(seq.word_index(), &[0, 0, 1]);
        assert_eq!(seq.word_count(), 2);
    }

    #[test]
    fn longest_match_wins_and_remainder_is_one_piece() {
        let splitter = SubwordSplitter::new(["a", "ab", "##c"]);
        assert_eq!(splitter.split("abc"), vec!["ab", "##c"]);
        assert_eq!(splitter.split("abxyz"), vec!["ab", "##xyz"]);
        assert_eq!(splitter.split("zzz"), vec!["zzz"]);
    }

    #[test]
    fn empty_word_is_an_error() {
        let err = apply_subtoken_rule("s", &[("", Tag::Outside)], &SubwordSplitter::identity());
        assert!(matches!(err, Err(CorpusError::EmptySplit(_))));
    }
}
