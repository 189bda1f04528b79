//! Deterministic synthetic clinical-style corpora.
//!
//! Two "languages" share sentence templates, entity-type suffixes and
//! capitalization patterns but draw word stems from disjoint consonant
//! inventories, so their lexicons never overlap. A model trained on one
//! language can only carry over shape and affix evidence to the other.
//!
//! Templates are whitespace-separated slots:
//! `{Type}` an entity of that type, `$n` the language's n-th function word,
//! `~` a random filler word. Entity slots are realized with probability
//! `entity_density` and otherwise become filler.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{apply_subtoken_rule, CorpusError, CorpusSplit, SubwordSplitter, Tag, TokenSequence};
use super::scheme::JOINT_ENTITY_TYPES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Source,
    Target,
}

impl Language {
    fn consonants(self) -> &'static [&'static str] {
        match self {
            Language::Source => &["b", "d", "g", "k", "l", "m", "n", "p", "r", "s", "t"],
            Language::Target => &["f", "h", "j", "v", "w", "z", "c", "q", "x", "y", "sch"],
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Language::Source => "src",
            Language::Target => "tgt",
        }
    }

    fn salt(self) -> u64 {
        match self {
            Language::Source => 0x5EED_0001,
            Language::Target => 0x5EED_0002,
        }
    }
}

const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

/// Suffixes shared by both languages; neighbouring types share one ending so
/// the suffix alone does not determine the type.
fn type_suffixes(entity: &str) -> &'static [&'static str] {
    match entity {
        "Drug" => &["ol", "ine"],
        "Chemical" => &["ine", "ide"],
        "Strength" => &["mg", "gr"],
        "Dosages" => &["gr", "tab"],
        "Duration" => &["tag", "wk"],
        "Frequency" => &["dly", "wk"],
        "Route" => &["al", "ous"],
        "Form" => &["ule", "ous"],
        "Diagnosis" => &["itis", "oma"],
        "Diseases" => &["oma", "osis"],
        "Anatomy" => &["ex", "um"],
        "Treatment" => &["omy", "um"],
        _ => &["ent"],
    }
}

fn capitalized(entity: &str) -> bool {
    matches!(entity, "Drug" | "Chemical")
}

fn multiword(entity: &str) -> bool {
    matches!(entity, "Diagnosis" | "Diseases" | "Anatomy" | "Treatment")
}

/// Built-in templates with their sampling weights.
pub fn default_templates() -> Vec<(String, f64)> {
    [
        ("$0 $1 ~ ~ $2", 3.0),
        ("$3 ~ $4 ~ ~", 3.0),
        ("$24 ~ ~ $25 ~ $26", 3.0),
        ("~ $29 ~ $30", 2.0),
        ("$0 $5 {Drug} {Strength} {Route} $6", 2.0),
        ("$7 {Drug} {Dosages} {Frequency} $8 {Duration}", 1.0),
        ("$9 ~ $10 {Diagnosis} $11 {Anatomy}", 1.5),
        ("$12 {Treatment} $13 {Anatomy} ~", 1.0),
        ("$14 {Diseases} $15 ~ {Chemical}", 0.5),
        ("$16 {Form} $17 {Drug} $18", 0.5),
        ("~ $19 {Diagnosis} $20 $21 {Treatment}", 1.0),
        ("$22 {Chemical} ~ $23 {Diseases}", 0.3),
        ("$27 {Drug} {Strength} {Form} $28 {Frequency} {Route}", 0.7),
    ]
    .into_iter()
    .map(|(t, w)| (t.to_string(), w))
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub entity_types: Vec<String>,
    /// Generated entries per entity type.
    pub lexicon_size: usize,
    /// Explicit lexicons replacing the generated ones; entries may contain
    /// spaces for multi-word entities.
    pub lexicons: BTreeMap<String, Vec<String>>,
    /// Share of generated entries without the type suffix.
    pub irregular_fraction: f64,
    pub filler_size: usize,
    pub templates: Vec<(String, f64)>,
    pub entity_density: f64,
    pub seed_sentences: usize,
    pub pool_sentences: usize,
    pub validation_sentences: usize,
    pub test_sentences: usize,
    pub language: Language,
    /// Split words into syllable pieces (exercising the subtoken rule).
    pub split_subwords: bool,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entity_types: JOINT_ENTITY_TYPES.iter().map(|s| s.to_string()).collect(),
            lexicon_size: 60,
            lexicons: BTreeMap::new(),
            irregular_fraction: 0.25,
            filler_size: 300,
            templates: default_templates(),
            entity_density: 0.9,
            seed_sentences: 20,
            pool_sentences: 1000,
            validation_sentences: 100,
            test_sentences: 200,
            language: Language::Target,
            split_subwords: true,
        }
    }
}

struct Lexicon {
    function_words: Vec<String>,
    fillers: Vec<String>,
    entities: BTreeMap<String, Vec<Vec<String>>>,
    splitter: SubwordSplitter,
}

fn syllables(lang: Language) -> Vec<String> {
    lang.consonants()
        .iter()
        .flat_map(|c| VOWELS.iter().map(move |v| format!("{c}{v}")))
        .collect()
}

fn stem(rng: &mut ChaCha8Rng, syl: &[String], min: usize, max: usize) -> String {
    let n = rng.random_range(min..=max);
    (0..n).map(|_| syl.choose(rng).expect("non-empty").as_str()).collect()
}

fn unique_words(rng: &mut ChaCha8Rng, syl: &[String], n: usize, min: usize, max: usize, taken: &mut std::collections::BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = stem(rng, syl, min, max);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn build_lexicon(cfg: &SyntheticConfig, seed: u64) -> Result<Lexicon, CorpusError> {
    let lang = cfg.language;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ lang.salt());
    let syl = syllables(lang);
    let mut taken = std::collections::BTreeSet::new();
    let function_words = unique_words(&mut rng, &syl, 32, 1, 2, &mut taken);
    let fillers = unique_words(&mut rng, &syl, cfg.filler_size.max(1), 2, 3, &mut taken);
    let mut entities = BTreeMap::new();
    for e in &cfg.entity_types {
        let entries: Vec<Vec<String>> = if let Some(explicit) = cfg.lexicons.get(e) {
            explicit
                .iter()
                .map(|entry| entry.split_whitespace().map(str::to_string).collect::<Vec<_>>())
                .filter(|words: &Vec<String>| !words.is_empty())
                .collect()
        } else {
            let suffixes = type_suffixes(e);
            let stems = unique_words(&mut rng, &syl, cfg.lexicon_size * 2, 1, 3, &mut taken);
            (0..cfg.lexicon_size)
                .map(|i| {
                    let form = |s: &str, rng: &mut ChaCha8Rng| {
                        let mut w = s.to_string();
                        if !rng.random_bool(cfg.irregular_fraction.clamp(0.0, 1.0)) {
                            w.push_str(suffixes.choose(rng).expect("non-empty"));
                        }
                        if capitalized(e) {
                            w = capitalize(&w);
                        }
                        w
                    };
                    let mut words = vec![form(&stems[2 * i], &mut rng)];
                    if multiword(e) && rng.random_bool(0.4) {
                        words.push(form(&stems[2 * i + 1], &mut rng));
                    }
                    words
                })
                .collect()
        };
        if entries.is_empty() {
            return Err(CorpusError::EmptyLexicon(e.clone()));
        }
        entities.insert(e.clone(), entries);
    }
    let splitter = if cfg.split_subwords {
        let mut pieces: Vec<String> = syl.clone();
        pieces.extend(syl.iter().map(|s| format!("##{s}")));
        pieces.extend(syl.iter().map(|s| capitalize(s)));
        for e in JOINT_ENTITY_TYPES {
            pieces.extend(type_suffixes(e).iter().map(|s| format!("##{s}")));
        }
        SubwordSplitter::new(pieces)
    } else {
        SubwordSplitter::identity()
    };
    Ok(Lexicon {
        function_words,
        fillers,
        entities,
        splitter,
    })
}

fn sentence(
    rng: &mut ChaCha8Rng,
    lex: &Lexicon,
    cfg: &SyntheticConfig,
    id: String,
) -> Result<TokenSequence, CorpusError> {
    let weights: Vec<f64> = cfg.templates.iter().map(|(_, w)| *w).collect();
    let total: f64 = weights.iter().sum();
    let mut pick = rng.random::<f64>() * total;
    let mut template = &cfg.templates[cfg.templates.len() - 1].0;
    for (t, w) in &cfg.templates {
        if pick < *w {
            template = t;
            break;
        }
        pick -= w;
    }
    let mut words: Vec<(String, Tag)> = Vec::new();
    for slot in template.split_whitespace() {
        if let Some(n) = slot.strip_prefix('$') {
            let n: usize = n.parse().unwrap_or(0);
            words.push((lex.function_words[n % lex.function_words.len()].clone(), Tag::Outside));
        } else if let Some(e) = slot.strip_prefix('{').and_then(|s| s.strip_suffix('}')) {
            match lex.entities.get(e) {
                Some(entries) if rng.random_bool(cfg.entity_density.clamp(0.0, 1.0)) => {
                    let entry = entries.choose(rng).expect("non-empty lexicon");
                    for (i, w) in entry.iter().enumerate() {
                        let tag = if i == 0 { Tag::Begin(e.to_string()) } else { Tag::Inside(e.to_string()) };
                        words.push((w.clone(), tag));
                    }
                }
                _ => words.push((lex.fillers.choose(rng).expect("non-empty").clone(), Tag::Outside)),
            }
        } else {
            words.push((lex.fillers.choose(rng).expect("non-empty").clone(), Tag::Outside));
        }
    }
    let pairs: Vec<(&str, Tag)> = words.iter().map(|(w, t)| (w.as_str(), t.clone())).collect();
    apply_subtoken_rule(&id, &pairs, &lex.splitter)
}

/// Generates a labeled split; every partition (pool included) is built from
/// the same distribution and the pool's gold is kept behind the oracle.
///
/// Identical config and seed give identical output.
pub fn generate_synthetic_corpus(cfg: &SyntheticConfig, rng_seed: u64) -> Result<CorpusSplit, CorpusError> {
    let lex = build_lexicon(cfg, rng_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ cfg.language.salt());
    let lang = cfg.language.tag();
    let mut part = |name: &str, n: usize| -> Result<Vec<TokenSequence>, CorpusError> {
        (0..n)
            .map(|i| sentence(&mut rng, &lex, cfg, format!("{lang}-{name}-{i:05}")))
            .collect()
    };
    let seed = part("seed", cfg.seed_sentences)?;
    let pool = part("pool", cfg.pool_sentences)?;
    let validation = part("val", cfg.validation_sentences)?;
    let test = part("test", cfg.test_sentences)?;
    CorpusSplit::new(seed, pool, validation, test)
}

/// Source- and target-language splits generated from one seed.
pub fn generate_transfer_pair(cfg: &SyntheticConfig, rng_seed: u64) -> Result<(CorpusSplit, CorpusSplit), CorpusError> {
    let source = generate_synthetic_corpus(
        &SyntheticConfig {
            language: Language::Source,
            ..cfg.clone()
        },
        rng_seed,
    )?;
    let target = generate_synthetic_corpus(
        &SyntheticConfig {
            language: Language::Target,
            ..cfg.clone()
        },
        rng_seed,
    )?;
    Ok((source, target))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_corpus, CorpusFormat};
    use std::collections::BTreeSet;

    fn small() -> SyntheticConfig {
        SyntheticConfig {
            seed_sentences: 5,
            pool_sentences: 30,
            validation_sentences: 5,
            test_sentences: 10,
            ..Default::default()
        }
    }

    fn dump(split: &CorpusSplit) -> String {
        let mut s = write_corpus(&split.labeled_seed, CorpusFormat::Subtoken);
        s += &write_corpus(split.unlabeled_pool.instances(), CorpusFormat::Subtoken);
        s += &write_corpus(&split.test, CorpusFormat::Subtoken);
        s
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic_corpus(&small(), 11).unwrap();
        let b = generate_synthetic_corpus(&small(), 11).unwrap();
        assert_eq!(dump(&a), dump(&b));
        assert_eq!(a, b);
        let c = generate_synthetic_corpus(&small(), 12).unwrap();
        assert_ne!(dump(&a), dump(&c));
    }

    #[test]
    fn zero_pool() {
        let cfg = SyntheticConfig {
            pool_sentences: 0,
            ..small()
        };
        assert!(generate_synthetic_corpus(&cfg, 1).unwrap().unlabeled_pool.is_empty());
    }

    #[test]
    fn zero_density_is_all_outside() {
        let cfg = SyntheticConfig {
            entity_density: 0.0,
            ..small()
        };
        let split = generate_synthetic_corpus(&cfg, 1).unwrap();
        for s in split.labeled_seed.iter().chain(&split.test) {
            assert!(s.word_tags().unwrap().iter().all(|t| *t == Tag::Outside));
        }
    }

    #[test]
    fn empty_lexicon_is_an_error() {
        let mut cfg = small();
        cfg.lexicons.insert("Drug".into(), vec![]);
        assert!(matches!(generate_synthetic_corpus(&cfg, 1), Err(CorpusError::EmptyLexicon(e)) if e == "Drug"));
    }

    #[test]
    fn languages_have_disjoint_vocabularies() {
        let (src, tgt) = generate_transfer_pair(&small(), 5).unwrap();
        let vocab = |s: &CorpusSplit| -> BTreeSet<String> {
            s.labeled_seed
                .iter()
                .chain(s.unlabeled_pool.instances())
                .chain(&s.test)
                .flat_map(|x| x.words())
                .collect()
        };
        assert!(vocab(&src).is_disjoint(&vocab(&tgt)));
    }

    #[test]
    fn subword_pieces_are_excluded() {
        let split = generate_synthetic_corpus(&small(), 3).unwrap();
        let any_split = split.test.iter().any(|s| s.len() > s.word_count());
        assert!(any_split);
        for s in &split.test {
            assert_eq!(s.word_starts().len(), s.word_count());
        }
    }
}
