//! Annotator feedback on one queried instance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabelScheme, Tag, TokenSequence};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnnotationError {
    #[error("instance `{instance}` has {expected} words but {got} tags were given")]
    WrongLength { instance: String, expected: usize, got: usize },
    #[error("tag `{0}` is not in the label scheme")]
    TagNotInScheme(String),
    #[error("tags do not form a valid BIO sequence at word {0}")]
    InvalidBio(usize),
    #[error("rationale span {start}..={end} is out of bounds or reversed")]
    SpanOutOfBounds { start: usize, end: usize },
    #[error("rationale spans overlap")]
    OverlappingSpans,
    #[error("record is for `{got}`, expected `{expected}`")]
    WrongInstance { expected: String, got: String },
}

/// Words `start..=end` marked as evidence for the annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RationaleSpan {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub instance_id: String,
    pub annotator_id: String,
    /// One tag per word.
    pub final_tags: Vec<Tag>,
    #[serde(default)]
    pub rationale_spans: Vec<RationaleSpan>,
    /// Version of the model whose suggestion the annotator saw.
    pub suggestion_theta_version: u64,
    /// Milliseconds since the Unix epoch.
    #[serde(default)]
    pub started_at: Option<u64>,
    #[serde(default)]
    pub submitted_at: Option<u64>,
    #[serde(default)]
    pub comment: Option<String>,
}

impl AnnotationRecord {
    /// A record with no rationale, timestamps or comment.
    pub fn new(instance_id: impl Into<String>, annotator_id: impl Into<String>, final_tags: Vec<Tag>, theta_version: u64) -> Self {
        Self {
            instance_id: instance_id.into(),
            annotator_id: annotator_id.into(),
            final_tags,
            rationale_spans: Vec::new(),
            suggestion_theta_version: theta_version,
            started_at: None,
            submitted_at: None,
            comment: None,
        }
    }

    /// Checks the record against the instance it annotates.
    pub fn validate(&self, seq: &TokenSequence, scheme: &LabelScheme) -> Result<(), AnnotationError> {
        if self.instance_id != seq.id() {
            return Err(AnnotationError::WrongInstance {
                expected: seq.id().to_string(),
                got: self.instance_id.clone(),
            });
        }
        let words = seq.word_count();
        if self.final_tags.len() != words {
            return Err(AnnotationError::WrongLength {
                instance: self.instance_id.clone(),
                expected: words,
                got: self.final_tags.len(),
            });
        }
        let mut prev: Option<&Tag> = None;
        for (i, t) in self.final_tags.iter().enumerate() {
            if scheme.tag_index(t).is_none() {
                return Err(AnnotationError::TagNotInScheme(t.to_string()));
            }
            if !crate::corpus::bio_transition_ok(prev, t) {
                return Err(AnnotationError::InvalidBio(i));
            }
            prev = Some(t);
        }
        let mut spans = self.rationale_spans.clone();
        spans.sort();
        for s in &spans {
            if s.start > s.end || s.end >= words {
                return Err(AnnotationError::SpanOutOfBounds { start: s.start, end: s.end });
            }
        }
        if spans.windows(2).any(|w| w[1].start <= w[0].end) {
            return Err(AnnotationError::OverlappingSpans);
        }
        Ok(())
    }

    /// Seconds between start and submission when both are known.
    pub fn duration_seconds(&self) -> Option<f64> {
        match (self.started_at, self.submitted_at) {
            (Some(a), Some(b)) if b >= a => Some((b - a) as f64 / 1000.0),
            _ => None,
        }
    }

    /// Words whose final tag differs from the suggestion.
    pub fn corrections(&self, suggestion: &[Tag]) -> usize {
        self.final_tags.iter().zip(suggestion).filter(|(a, b)| a != b).count()
            + self.final_tags.len().abs_diff(suggestion.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{split_unlabeled, SubwordSplitter};

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    fn seq() -> TokenSequence {
        split_unlabeled("s1", &["took", "aspirin", "daily"], &SubwordSplitter::identity()).unwrap()
    }

    #[test]
    fn validation() {
        let scheme = LabelScheme::joint();
        let ok = AnnotationRecord::new("s1", "ann", tags("O B-Drug B-Frequency"), 0);
        assert_eq!(ok.validate(&seq(), &scheme), Ok(()));
        let bad = AnnotationRecord::new("s1", "ann", tags("O B-Bogus O"), 0);
        assert!(matches!(bad.validate(&seq(), &scheme), Err(AnnotationError::TagNotInScheme(_))));
        let short = AnnotationRecord::new("s1", "ann", tags("O O"), 0);
        assert!(matches!(short.validate(&seq(), &scheme), Err(AnnotationError::WrongLength { .. })));
        let bio = AnnotationRecord::new("s1", "ann", tags("O I-Drug O"), 0);
        assert_eq!(bio.validate(&seq(), &scheme), Err(AnnotationError::InvalidBio(1)));
        let mut spans = ok.clone();
        spans.rationale_spans = vec![RationaleSpan { start: 0, end: 1 }, RationaleSpan { start: 1, end: 2 }];
        assert_eq!(spans.validate(&seq(), &scheme), Err(AnnotationError::OverlappingSpans));
        spans.rationale_spans = vec![RationaleSpan { start: 2, end: 3 }];
        assert!(matches!(spans.validate(&seq(), &scheme), Err(AnnotationError::SpanOutOfBounds { .. })));
    }

    #[test]
    fn corrections_count_changed_words() {
        let r = AnnotationRecord::new("s1", "ann", tags("O B-Drug O"), 0);
        assert_eq!(r.corrections(&tags("O B-Drug O")), 0);
        assert_eq!(r.corrections(&tags("B-Drug O B-Route")), 3);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let json = r#"{"instance_id":"a","annotator_id":"b","final_tags":["O"],"suggestion_theta_version":1,"extra":1}"#;
        assert!(serde_json::from_str::<AnnotationRecord>(json).is_err());
    }
}
