use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Tag, TokenSequence};

/// The twelve-type joint entity inventory used for the clinical target task.
pub const JOINT_ENTITY_TYPES: [&str; 12] = [
    "Drug",
    "Strength",
    "Duration",
    "Route",
    "Form",
    "Dosages",
    "Frequency",
    "Diseases",
    "Anatomy",
    "Treatment",
    "Diagnosis",
    "Chemical",
];

/// Where a corpus-native label ends up in the joint scheme.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum LabelTarget {
    Entity(String),
    /// The entity is discarded and its tokens become `O`.
    Drop,
}

impl fmt::Display for LabelTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelTarget::Entity(e) => f.write_str(e),
            LabelTarget::Drop => f.write_str("DROP"),
        }
    }
}

impl From<LabelTarget> for String {
    fn from(t: LabelTarget) -> String {
        t.to_string()
    }
}

impl From<String> for LabelTarget {
    fn from(s: String) -> Self {
        if s == "DROP" {
            LabelTarget::Drop
        } else {
            LabelTarget::Entity(s)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingRule {
    pub source: String,
    pub target: LabelTarget,
}

impl MappingRule {
    pub fn new(source: &str, target: &str) -> Self {
        Self {
            source: source.to_string(),
            target: LabelTarget::from(target.to_string()),
        }
    }
}

/// Entity inventory, the BIO tag set derived from it, and mapping rules from
/// corpus-native labels.
///
/// Tag indices are `O = 0`, `B-e = 1 + 2i`, `I-e = 2 + 2i` for the `i`-th
/// entity type. The excluded sentinel has no index: it is never predicted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawScheme")]
pub struct LabelScheme {
    entity_types: Vec<String>,
    #[serde(default)]
    mapping: Vec<MappingRule>,
}

#[derive(Deserialize)]
struct RawScheme {
    entity_types: Vec<String>,
    #[serde(default)]
    mapping: Vec<MappingRule>,
}

impl TryFrom<RawScheme> for LabelScheme {
    type Error = CorpusError;
    fn try_from(r: RawScheme) -> Result<Self, Self::Error> {
        LabelScheme::new(r.entity_types)?.with_mapping(r.mapping)
    }
}

impl Default for LabelScheme {
    fn default() -> Self {
        Self::joint()
    }
}

impl LabelScheme {
    pub fn new<S: Into<String>>(entity_types: impl IntoIterator<Item = S>) -> Result<Self, CorpusError> {
        let entity_types: Vec<String> = entity_types.into_iter().map(Into::into).collect();
        let mut seen = BTreeSet::new();
        for e in &entity_types {
            if !seen.insert(e.as_str()) {
                return Err(CorpusError::DuplicateEntityType(e.clone()));
            }
        }
        Ok(Self {
            entity_types,
            mapping: Vec::new(),
        })
    }

    /// The joint twelve-type inventory with no mapping rules.
    pub fn joint() -> Self {
        Self::new(JOINT_ENTITY_TYPES).expect("joint inventory has no duplicates")
    }

    pub fn with_mapping(mut self, mapping: Vec<MappingRule>) -> Result<Self, CorpusError> {
        for rule in &mapping {
            if let LabelTarget::Entity(e) = &rule.target {
                if !self.entity_types.contains(e) {
                    return Err(CorpusError::BadMappingTarget(e.clone()));
                }
            }
        }
        self.mapping = mapping;
        Ok(self)
    }

    /// UMLS-category rules for the muchmore corpus: procedures become
    /// treatments, disorders become diagnoses, anatomy and chemicals carry
    /// over, the remaining semantic groups are dropped.
    pub fn muchmore_rules() -> Vec<MappingRule> {
        vec![
            MappingRule::new("Procedure", "Treatment"),
            MappingRule::new("Disorder", "Diagnosis"),
            MappingRule::new("Anatomy", "Anatomy"),
            MappingRule::new("Chemical", "Chemical"),
        ]
    }

    /// Medication rules for n2c2: the medication attributes carry over,
    /// adverse drug events and reasons are dropped.
    pub fn n2c2_rules() -> Vec<MappingRule> {
        let mut rules: Vec<MappingRule> =
            ["Drug", "Strength", "Duration", "Route", "Form", "Dosages", "Frequency"]
                .into_iter()
                .map(|e| MappingRule::new(e, e))
                .collect();
        rules.push(MappingRule::new("ADE", "DROP"));
        rules.push(MappingRule::new("Reason", "DROP"));
        rules
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn mapping(&self) -> &[MappingRule] {
        &self.mapping
    }

    /// Number of predictable tags (`O` plus B/I for each entity type).
    pub fn num_tags(&self) -> usize {
        1 + 2 * self.entity_types.len()
    }

    pub fn entity_index(&self, entity: &str) -> Option<usize> {
        self.entity_types.iter().position(|e| e == entity)
    }

    pub fn tag_index(&self, tag: &Tag) -> Option<usize> {
        match tag {
            Tag::Outside => Some(0),
            Tag::Begin(e) => self.entity_index(e).map(|i| 1 + 2 * i),
            Tag::Inside(e) => self.entity_index(e).map(|i| 2 + 2 * i),
            Tag::Excluded => None,
        }
    }

    pub fn tag(&self, index: usize) -> Tag {
        if index == 0 {
            Tag::Outside
        } else {
            let e = self.entity_types[(index - 1) / 2].clone();
            if index % 2 == 1 {
                Tag::Begin(e)
            } else {
                Tag::Inside(e)
            }
        }
    }

    /// All predictable tags in index order.
    pub fn tags(&self) -> Vec<Tag> {
        (0..self.num_tags()).map(|i| self.tag(i)).collect()
    }

    /// Tag names plus the excluded sentinel.
    pub fn bio_tags(&self) -> Vec<Tag> {
        let mut t = self.tags();
        t.push(Tag::Excluded);
        t
    }

    /// Whether a tag may appear in a corpus read under this scheme: joint
    /// tags, `O`/`X`, and any entity named as a mapping source.
    pub fn accepts(&self, tag: &Tag) -> bool {
        match tag.entity() {
            None => true,
            Some(e) => self.entity_index(e).is_some() || self.mapping.iter().any(|r| r.source == e),
        }
    }

    fn target_of(&self, entity: &str) -> Option<&LabelTarget> {
        self.mapping.iter().find(|r| r.source == entity).map(|r| &r.target)
    }
}

/// Rewrites gold tags into the scheme's joint inventory.
///
/// Entities already in the inventory pass through unchanged (before any rule
/// is consulted), so mapping is idempotent. Dropped entities become `O` along with their `I-` continuation.
pub fn map_labels(seq: &TokenSequence, scheme: &LabelScheme) -> Result<TokenSequence, CorpusError> {
    let Some(tags) = seq.gold_tags() else {
        return Ok(seq.clone());
    };
    let mut unmapped = BTreeSet::new();
    let mapped: Vec<Tag> = tags
        .iter()
        .map(|tag| match tag.entity() {
            None => tag.clone(),
            Some(e) if scheme.entity_index(e).is_some() => tag.clone(),
            Some(e) => match scheme.target_of(e) {
                Some(LabelTarget::Entity(t)) => tag.with_entity(t),
                Some(LabelTarget::Drop) => Tag::Outside,
                None => {
                    unmapped.insert(e.to_string());
                    tag.clone()
                }
            },
        })
        .collect();
    if !unmapped.is_empty() {
        return Err(CorpusError::Unmapped(unmapped.into_iter().collect()));
    }
    TokenSequence::new(
        seq.id(),
        seq.subtokens().to_vec(),
        seq.word_index().to_vec(),
        Some(mapped),
    )
}
