//! CoNLL-format parsing, the BIO label space, and span algebra.
//!
//! The file format is whitespace-separated columns: token first, BIO tag
//! last, optional POS tag in column two, blank-line sentence separation,
//! and `# id ...` comment lines carrying a sentence identifier. Both LF
//! and CRLF are accepted on read; LF is emitted on write.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The six entity classes of the label space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EntityType {
    Per,
    Loc,
    Grp,
    Corp,
    Prod,
    Cw,
}

impl EntityType {
    pub const ALL: [EntityType; 6] = [
        EntityType::Per,
        EntityType::Loc,
        EntityType::Grp,
        EntityType::Corp,
        EntityType::Prod,
        EntityType::Cw,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EntityType::Per => "PER",
            EntityType::Loc => "LOC",
            EntityType::Grp => "GRP",
            EntityType::Corp => "CORP",
            EntityType::Prod => "PROD",
            EntityType::Cw => "CW",
        }
    }
}

impl FromStr for EntityType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "PER" => Ok(EntityType::Per),
            "LOC" => Ok(EntityType::Loc),
            "GRP" => Ok(EntityType::Grp),
            "CORP" => Ok(EntityType::Corp),
            "PROD" => Ok(EntityType::Prod),
            "CW" => Ok(EntityType::Cw),
            other => Err(Error::Vocab(format!("unknown entity type: {other}"))),
        }
    }
}

impl fmt::Display for EntityType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One parsed BIO tag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BioTag {
    Outside,
    Begin(EntityType),
    Inside(EntityType),
}

impl BioTag {
    pub fn parse(tag: &str) -> Result<BioTag> {
        if tag == "O" {
            return Ok(BioTag::Outside);
        }
        if let Some(rest) = tag.strip_prefix("B-") {
            return Ok(BioTag::Begin(rest.parse()?));
        }
        if let Some(rest) = tag.strip_prefix("I-") {
            return Ok(BioTag::Inside(rest.parse()?));
        }
        Err(Error::Vocab(format!("unknown tag: {tag}")))
    }

    pub fn as_string(&self) -> String {
        match self {
            BioTag::Outside => "O".to_string(),
            BioTag::Begin(t) => format!("B-{t}"),
            BioTag::Inside(t) => format!("I-{t}"),
        }
    }
}

/// An ordered token sequence with optional gold BIO tags and POS tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub gold_tags: Option<Vec<String>>,
    pub pos_tags: Option<Vec<String>>,
    pub id: Option<String>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>) -> Self {
        Sentence {
            tokens,
            gold_tags: None,
            pos_tags: None,
            id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// A typed, inclusive token-index interval extracted from a BIO sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub entity_type: EntityType,
}

impl EntitySpan {
    pub fn new(entity_type: EntityType, start: usize, end: usize) -> Self {
        EntitySpan {
            start,
            end,
            entity_type,
        }
    }
}

/// Bijection between BIO tag strings and contiguous label indices, plus
/// the two virtual START/END states that are never emitted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelVocab {
    tags: Vec<String>,
    index: HashMap<String, usize>,
    entity_types: Vec<EntityType>,
}

impl LabelVocab {
    /// Vocabulary over the given entity classes; tag order is "O" first,
    /// then B-X/I-X pairs in declaration order of [`EntityType`].
    pub fn new(types: &[EntityType]) -> Self {
        let mut entity_types: Vec<EntityType> = Vec::new();
        for t in EntityType::ALL {
            if types.contains(&t) && !entity_types.contains(&t) {
                entity_types.push(t);
            }
        }
        let mut tags = vec!["O".to_string()];
        for t in &entity_types {
            tags.push(format!("B-{t}"));
            tags.push(format!("I-{t}"));
        }
        let index = tags
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        LabelVocab {
            tags,
            index,
            entity_types,
        }
    }

    /// The full six-class vocabulary: 13 emittable tags, 15 states total.
    pub fn full() -> Self {
        LabelVocab::new(&EntityType::ALL)
    }

    /// Number of emittable labels `k` (START/END excluded).
    pub fn num_labels(&self) -> usize {
        self.tags.len()
    }

    pub fn start_state(&self) -> usize {
        self.tags.len()
    }

    pub fn end_state(&self) -> usize {
        self.tags.len() + 1
    }

    pub fn entity_types(&self) -> &[EntityType] {
        &self.entity_types
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn tag_of(&self, label: usize) -> &str {
        &self.tags[label]
    }

    pub fn label_of(&self, tag: &str) -> Result<usize> {
        self.index
            .get(tag)
            .copied()
            .ok_or_else(|| Error::Vocab(format!("unknown tag: {tag}")))
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.index.contains_key(tag)
    }
}

/// A BIO well-formedness violation: an I-X tag with no matching predecessor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BioViolation {
    pub position: usize,
    pub tag: String,
}

/// Flags every I-X whose predecessor is neither B-X nor I-X. An empty
/// list means the sequence is valid.
pub fn validate_bio<S: AsRef<str>>(tags: &[S], vocab: &LabelVocab) -> Result<Vec<BioViolation>> {
    let mut violations = Vec::new();
    let mut prev: Option<BioTag> = None;
    for (pos, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        if !vocab.contains(tag) {
            return Err(Error::Vocab(format!("unknown tag: {tag}")));
        }
        let parsed = BioTag::parse(tag)?;
        if let BioTag::Inside(t) = parsed {
            let legal = matches!(prev, Some(BioTag::Begin(p)) | Some(BioTag::Inside(p)) if p == t);
            if !legal {
                violations.push(BioViolation {
                    position: pos,
                    tag: tag.to_string(),
                });
            }
        }
        prev = Some(parsed);
    }
    Ok(violations)
}

/// Rewrites every illegal I-X to B-X; valid input comes back unchanged.
pub fn repair_bio<S: AsRef<str>>(tags: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(tags.len());
    let mut prev: Option<BioTag> = None;
    for tag in tags {
        let parsed = BioTag::parse(tag.as_ref()).expect("syntactically well-formed tag");
        let repaired = match parsed {
            BioTag::Inside(t) => {
                let legal =
                    matches!(prev, Some(BioTag::Begin(p)) | Some(BioTag::Inside(p)) if p == t);
                if legal {
                    parsed
                } else {
                    BioTag::Begin(t)
                }
            }
            other => other,
        };
        prev = Some(parsed);
        out.push(repaired.as_string());
    }
    out
}

/// Converts a valid BIO sequence into its set of entity spans; every
/// maximal `B-X (I-X)*` run becomes one span.
pub fn spans_from_bio<S: AsRef<str>>(tags: &[S]) -> Result<BTreeSet<EntitySpan>> {
    let mut spans = BTreeSet::new();
    let mut open: Option<(EntityType, usize)> = None;
    let mut prev: Option<BioTag> = None;
    for (pos, tag) in tags.iter().enumerate() {
        let parsed = BioTag::parse(tag.as_ref())?;
        match parsed {
            BioTag::Outside => {
                if let Some((t, start)) = open.take() {
                    spans.insert(EntitySpan::new(t, start, pos - 1));
                }
            }
            BioTag::Begin(t) => {
                if let Some((prev_t, start)) = open.take() {
                    spans.insert(EntitySpan::new(prev_t, start, pos - 1));
                }
                open = Some((t, pos));
            }
            BioTag::Inside(t) => {
                let legal =
                    matches!(prev, Some(BioTag::Begin(p)) | Some(BioTag::Inside(p)) if p == t);
                if !legal {
                    return Err(Error::Contract(format!(
                        "invalid BIO sequence: {} at position {} has no open {} span (repair first)",
                        tag.as_ref(),
                        pos,
                        t
                    )));
                }
            }
        }
        prev = Some(parsed);
    }
    if let Some((t, start)) = open {
        spans.insert(EntitySpan::new(t, start, tags.len() - 1));
    }
    Ok(spans)
}

/// Inverse of [`spans_from_bio`]: renders non-overlapping spans as a BIO
/// tag sequence of the given length.
pub fn bio_from_spans(spans: &BTreeSet<EntitySpan>, len: usize) -> Result<Vec<String>> {
    let mut tags = vec![BioTag::Outside; len];
    let mut last_covered: Option<usize> = None;
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(Error::Domain(format!(
                "span {}..={} out of bounds for length {len}",
                span.start, span.end
            )));
        }
        if let Some(last) = last_covered {
            if span.start <= last {
                return Err(Error::Domain(format!(
                    "overlapping spans at token {}",
                    span.start
                )));
            }
        }
        tags[span.start] = BioTag::Begin(span.entity_type);
        for t in tags.iter_mut().take(span.end + 1).skip(span.start + 1) {
            *t = BioTag::Inside(span.entity_type);
        }
        last_covered = Some(span.end);
    }
    Ok(tags.iter().map(BioTag::as_string).collect())
}

/// Parses CoNLL-style text into sentences.
///
/// Columns are whitespace-separated: one column is a bare token, two are
/// token + BIO tag, three or more are token, POS tag, and BIO tag in the
/// last column. All lines of one sentence must agree on the column count.
pub fn parse_conll(text: &str, vocab: &LabelVocab) -> Result<Vec<Sentence>> {
    parse_conll_impl(text, Some(vocab))
}

/// Like [`parse_conll`] but keeps any tag column as-is without checking
/// it against a vocabulary. For inputs whose tags are absent or ignored
/// (prediction inputs may carry gold tags from another tag set).
pub fn parse_conll_lenient(text: &str) -> Result<Vec<Sentence>> {
    parse_conll_impl(text, None)
}

fn parse_conll_impl(text: &str, vocab: Option<&LabelVocab>) -> Result<Vec<Sentence>> {
    let mut sentences = Vec::new();
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<String> = Vec::new();
    let mut pos: Vec<String> = Vec::new();
    let mut id: Option<String> = None;
    let mut column_count: Option<usize> = None;
    let mut first_line_of_sentence = 0usize;

    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<String>,
                     pos: &mut Vec<String>,
                     id: &mut Option<String>,
                     column_count: &mut Option<usize>| {
        if !tokens.is_empty() {
            sentences.push(Sentence {
                tokens: std::mem::take(tokens),
                gold_tags: if tags.is_empty() {
                    None
                } else {
                    Some(std::mem::take(tags))
                },
                pos_tags: if pos.is_empty() {
                    None
                } else {
                    Some(std::mem::take(pos))
                },
                id: id.take(),
            });
        }
        tags.clear();
        pos.clear();
        *column_count = None;
    };

    for (line_idx, raw_line) in text.lines().enumerate() {
        let line_no = line_idx + 1;
        let line = raw_line.strip_suffix('\r').unwrap_or(raw_line);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut pos, &mut id, &mut column_count);
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            let comment = comment.trim_start();
            if let Some(rest) = comment.strip_prefix("id ") {
                id = Some(rest.trim().to_string());
            } else if comment == "id" {
                id = Some(String::new());
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        match column_count {
            None => {
                column_count = Some(cols.len());
                first_line_of_sentence = line_no;
            }
            Some(expected) if expected != cols.len() => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!(
                        "ragged columns: {} columns here but {} on line {}",
                        cols.len(),
                        expected,
                        first_line_of_sentence
                    ),
                });
            }
            Some(_) => {}
        }
        tokens.push(cols[0].to_string());
        if cols.len() >= 2 {
            let tag = *cols.last().expect("non-empty columns");
            if vocab.is_some_and(|v| !v.contains(tag)) {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown tag: {tag}"),
                });
            }
            tags.push(tag.to_string());
        }
        if cols.len() >= 3 {
            pos.push(cols[1].to_string());
        }
    }
    flush(&mut tokens, &mut tags, &mut pos, &mut id, &mut column_count);
    Ok(sentences)
}

/// Renders sentences in canonical CoNLL form: single-space separation,
/// LF line endings, one blank line after every sentence.
pub fn write_conll(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for sentence in sentences {
        if let Some(id) = &sentence.id {
            out.push_str("# id ");
            out.push_str(id);
            out.push('\n');
        }
        for (i, token) in sentence.tokens.iter().enumerate() {
            out.push_str(token);
            if let Some(pos) = &sentence.pos_tags {
                out.push(' ');
                out.push_str(&pos[i]);
            }
            if let Some(tags) = &sentence.gold_tags {
                out.push(' ');
                out.push_str(&tags[i]);
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}
