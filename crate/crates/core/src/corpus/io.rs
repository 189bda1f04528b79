//! Tab-separated corpus files.
//!
//! Subtoken format, one subtoken per line:
//!
//! ```text
//! # id = s1
//! he<TAB>0<TAB>O
//! di<TAB>1<TAB>B-Disorder
//! ##ar<TAB>1<TAB>X
//! ```
//!
//! Word format, one word per line, split on read with a [`SubwordSplitter`]:
//!
//! ```text
//! he<TAB>O
//! diarrhea<TAB>B-Disorder
//! ```
//!
//! Sequences are separated by blank lines. `_` marks an unlabeled position,
//! `X` an excluded continuation piece. The `# id = ...` comment is optional;
//! sequences without one are numbered from the given prefix.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{split_unlabeled, apply_subtoken_rule, CorpusError, LabelScheme, SubwordSplitter, Tag, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Subtoken,
    Word,
}

impl FromStr for CorpusFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "subtoken" => Ok(CorpusFormat::Subtoken),
            "word" => Ok(CorpusFormat::Word),
            other => Err(format!("unknown corpus format `{other}` (expected subtoken or word)")),
        }
    }
}

const UNLABELED: &str = "_";

struct Block<'a> {
    id: Option<String>,
    first_line: usize,
    rows: Vec<(usize, Vec<&'a str>)>,
}

fn blocks(text: &str) -> Vec<Block<'_>> {
    let mut out = Vec::new();
    let mut cur: Option<Block> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            if let Some(b) = cur.take() {
                out.push(b);
            }
            continue;
        }
        let block = cur.get_or_insert_with(|| Block {
            id: None,
            first_line: line_no,
            rows: Vec::new(),
        });
        if let Some(comment) = line.strip_prefix('#').filter(|_| !line.contains('\t')) {
            if let Some(id) = comment.trim().strip_prefix("id =") {
                block.id = Some(id.trim().to_string());
            }
            continue;
        }
        block.rows.push((line_no, line.split('\t').collect()));
    }
    out.extend(cur);
    out.retain(|b| !b.rows.is_empty());
    out
}

fn parse_tag(field: &str, line: usize, scheme: &LabelScheme) -> Result<Option<Tag>, CorpusError> {
    if field == UNLABELED {
        return Ok(None);
    }
    let tag: Tag = field.parse().map_err(|_| CorpusError::UnknownTagAt {
        line,
        tag: field.to_string(),
    })?;
    if !scheme.accepts(&tag) {
        return Err(CorpusError::UnknownTagAt {
            line,
            tag: field.to_string(),
        });
    }
    Ok(Some(tag))
}

fn malformed(line: usize, message: impl Into<String>) -> CorpusError {
    CorpusError::Malformed {
        line,
        message: message.into(),
    }
}

/// Parses corpus text. Tags are checked against `scheme` (joint tags plus the
/// scheme's mapping sources); `splitter` is only used by the word format.
pub fn parse_corpus(
    text: &str,
    format: CorpusFormat,
    scheme: &LabelScheme,
    splitter: &SubwordSplitter,
    id_prefix: &str,
) -> Result<Vec<TokenSequence>, CorpusError> {
    let mut out = Vec::new();
    for (n, block) in blocks(text).into_iter().enumerate() {
        let id = block.id.clone().unwrap_or_else(|| format!("{id_prefix}{n:06}"));
        let seq = match format {
            CorpusFormat::Subtoken => parse_subtoken_block(&block, id, scheme)?,
            CorpusFormat::Word => parse_word_block(&block, id, scheme, splitter)?,
        };
        out.push(seq);
    }
    Ok(out)
}

fn parse_subtoken_block(block: &Block, id: String, scheme: &LabelScheme) -> Result<TokenSequence, CorpusError> {
    let mut subtokens = Vec::new();
    let mut word_index = Vec::new();
    let mut tags: Vec<Option<Tag>> = Vec::new();
    for (line, cols) in &block.rows {
        if cols.len() != 3 {
            return Err(malformed(*line, format!("expected 3 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].is_empty() {
            return Err(malformed(*line, "empty subtoken"));
        }
        let w: usize = cols[1]
            .parse()
            .map_err(|_| malformed(*line, format!("bad word index `{}`", cols[1])))?;
        subtokens.push(cols[0].to_string());
        word_index.push(w);
        tags.push(parse_tag(cols[2], *line, scheme)?);
    }
    // An unlabeled sequence may mark continuation pieces with either `_` or `X`.
    let labeled = tags.iter().any(|t| matches!(t, Some(t) if !t.is_excluded()));
    let gold = if labeled {
        let mut gold = Vec::with_capacity(tags.len());
        for ((line, _), t) in block.rows.iter().zip(tags) {
            gold.push(t.ok_or_else(|| malformed(*line, "unlabeled position in a labeled sequence"))?);
        }
        Some(gold)
    } else {
        None
    };
    TokenSequence::new(id, subtokens, word_index, gold).map_err(|e| malformed(block.first_line, e.to_string()))
}

fn parse_word_block(
    block: &Block,
    id: String,
    scheme: &LabelScheme,
    splitter: &SubwordSplitter,
) -> Result<TokenSequence, CorpusError> {
    let mut words = Vec::new();
    let mut tags = Vec::new();
    for (line, cols) in &block.rows {
        if cols.len() != 2 {
            return Err(malformed(*line, format!("expected 2 tab-separated columns, found {}", cols.len())));
        }
        if cols[0].is_empty() {
            return Err(malformed(*line, "empty word"));
        }
        let tag = parse_tag(cols[1], *line, scheme)?;
        if matches!(tag, Some(Tag::Excluded)) {
            return Err(malformed(*line, "word-level rows cannot carry X"));
        }
        words.push(cols[0]);
        tags.push(tag);
    }
    let result = if tags.iter().all(Option::is_none) {
        split_unlabeled(&id, &words, splitter)
    } else if tags.iter().all(Option::is_some) {
        let pairs: Vec<(&str, Tag)> = words.iter().copied().zip(tags.into_iter().flatten()).collect();
        apply_subtoken_rule(&id, &pairs, splitter)
    } else {
        return Err(malformed(block.first_line, "sequence mixes labeled and unlabeled words"));
    };
    result.map_err(|e| match e {
        CorpusError::EmptySplit(_) => e,
        other => malformed(block.first_line, other.to_string()),
    })
}

/// Reads a corpus file; sequence ids default to `<file stem>-<n>`.
pub fn read_corpus(
    path: impl AsRef<Path>,
    format: CorpusFormat,
    scheme: &LabelScheme,
    splitter: &SubwordSplitter,
) -> Result<Vec<TokenSequence>, CorpusError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("seq");
    parse_corpus(&text, format, scheme, splitter, &format!("{stem}-"))
}

/// Serializes sequences, always with `# id = ...` headers.
pub fn write_corpus(seqs: &[TokenSequence], format: CorpusFormat) -> String {
    let mut out = String::new();
    for (n, seq) in seqs.iter().enumerate() {
        if n > 0 {
            out.push('\n');
        }
        let _ = writeln!(out, "# id = {}", seq.id());
        match format {
            CorpusFormat::Subtoken => {
                for i in 0..seq.len() {
                    let tag = match seq.gold_tags() {
                        Some(t) => t[i].to_string(),
                        None => UNLABELED.to_string(),
                    };
                    let _ = writeln!(out, "{}\t{}\t{}", seq.subtokens()[i], seq.word_index()[i], tag);
                }
            }
            CorpusFormat::Word => {
                let tags = seq.word_tags();
                for (w, word) in seq.words().iter().enumerate() {
                    let tag = tags.as_ref().map_or(UNLABELED.to_string(), |t| t[w].to_string());
                    let _ = writeln!(out, "{word}\t{tag}");
                }
            }
        }
    }
    out
}
