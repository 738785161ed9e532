//! CoNLL-style corpus reading, IOB validation and dataset statistics.
//!
//! Sentences are separated by blank lines. Every other line carries a token
//! surface in its first column and the IOB tag in its last column; any columns
//! in between (POS, chunk tags) are ignored. `-DOCSTART-` lines are skipped.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::catalog::EntityCatalog;
use crate::error::{Error, Result};

/// Parsed IOB tag.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Tag {
    Outside,
    Begin(String),
    Inside(String),
}

impl Tag {
    pub fn parse(raw: &str) -> Result<Self> {
        let invalid = |reason: &str| Error::InvalidTag {
            tag: raw.to_string(),
            reason: reason.to_string(),
        };
        if raw == "O" {
            return Ok(Tag::Outside);
        }
        let (prefix, ty) = raw
            .split_once('-')
            .ok_or_else(|| invalid("expected O, B-<type> or I-<type>"))?;
        if ty.is_empty() {
            return Err(invalid("empty entity type"));
        }
        if ty.chars().any(char::is_whitespace) {
            return Err(invalid("entity type contains whitespace"));
        }
        match prefix {
            "B" => Ok(Tag::Begin(ty.to_string())),
            "I" => Ok(Tag::Inside(ty.to_string())),
            _ => Err(invalid("prefix must be B or I")),
        }
    }

    pub fn entity_type(&self) -> Option<&str> {
        match self {
            Tag::Outside => None,
            Tag::Begin(t) | Tag::Inside(t) => Some(t),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Outside => f.write_str("O"),
            Tag::Begin(t) => write!(f, "B-{t}"),
            Tag::Inside(t) => write!(f, "I-{t}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub tag: Tag,
}

impl Token {
    pub fn new(surface: impl Into<String>, tag: &str) -> Result<Self> {
        let surface = surface.into();
        if surface.is_empty() || surface.chars().any(char::is_whitespace) {
            return Err(Error::InvalidTag {
                tag: tag.to_string(),
                reason: format!("surface {surface:?} is empty or contains whitespace"),
            });
        }
        Ok(Self {
            surface,
            tag: Tag::parse(tag)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggedSentence {
    pub tokens: Vec<Token>,
    /// 1-based line of the first token in the source file (0 when built in memory).
    pub source_line: usize,
}

impl TaggedSentence {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        let tokens = pairs
            .iter()
            .map(|(s, t)| Token::new(*s, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tokens,
            source_line: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn surfaces(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.surface.clone()).collect()
    }

    pub fn tags(&self) -> Vec<Tag> {
        self.tokens.iter().map(|t| t.tag.clone()).collect()
    }

    pub fn tag_strings(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.tag.to_string()).collect()
    }
}

/// An `I-X` that follows neither `B-X` nor `I-X`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IobViolation {
    pub position: usize,
    pub tag: String,
}

/// Positions violating IOB2: every `I-X` must continue a span of type `X`.
pub fn validate_tags(tags: &[Tag]) -> Vec<IobViolation> {
    let mut out = Vec::new();
    let mut prev: Option<&str> = None;
    for (i, tag) in tags.iter().enumerate() {
        if let Tag::Inside(t) = tag {
            if prev != Some(t.as_str()) {
                out.push(IobViolation {
                    position: i,
                    tag: tag.to_string(),
                });
            }
        }
        prev = tag.entity_type();
    }
    out
}

pub fn validate_iob(sentence: &TaggedSentence) -> Vec<IobViolation> {
    validate_tags(&sentence.tags())
}

/// Rewrites every orphan `I-X` to `B-X`; returns how many tags changed.
pub fn repair_tags(tags: &mut [Tag]) -> usize {
    let violations = validate_tags(tags);
    for v in &violations {
        if let Tag::Inside(t) = &tags[v.position] {
            tags[v.position] = Tag::Begin(t.clone());
        }
    }
    violations.len()
}

pub fn repair_iob(sentence: &mut TaggedSentence) -> usize {
    let mut tags = sentence.tags();
    let n = repair_tags(&mut tags);
    for (tok, tag) in sentence.tokens.iter_mut().zip(tags) {
        tok.tag = tag;
    }
    n
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ParseOptions {
    /// Rewrite orphan `I-X` tags to `B-X` instead of only warning.
    pub repair_iob: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedCorpus {
    pub sentences: Vec<TaggedSentence>,
    pub diagnostics: Vec<Diagnostic>,
}

/// Parses CoNLL text with default options.
pub fn parse_conll(text: &str) -> Result<Vec<TaggedSentence>> {
    parse_conll_with(text, ParseOptions::default()).map(|c| c.sentences)
}

pub fn parse_conll_with(text: &str, options: ParseOptions) -> Result<ParsedCorpus> {
    let mut corpus = ParsedCorpus::default();
    let mut current: Vec<Token> = Vec::new();
    let mut start_line = 0;

    let flush = |tokens: &mut Vec<Token>, start: usize, corpus: &mut ParsedCorpus| {
        if tokens.is_empty() {
            return;
        }
        let mut sentence = TaggedSentence {
            tokens: std::mem::take(tokens),
            source_line: start,
        };
        let violations = validate_iob(&sentence);
        if !violations.is_empty() {
            let positions: Vec<_> = violations.iter().map(|v| v.position).collect();
            let message = if options.repair_iob {
                repair_iob(&mut sentence);
                format!("repaired orphan I- tags at positions {positions:?}")
            } else {
                format!("orphan I- tags at positions {positions:?}")
            };
            log::warn!("line {start}: {message}");
            corpus.diagnostics.push(Diagnostic {
                line: start,
                message,
            });
        }
        corpus.sentences.push(sentence);
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let trimmed = line.trim();
        if trimmed.is_empty() {
            flush(&mut current, start_line, &mut corpus);
            continue;
        }
        let mut cols = trimmed.split_whitespace();
        let surface = cols.next().unwrap_or_default();
        if surface == "-DOCSTART-" {
            continue;
        }
        let tag = match cols.last() {
            Some(tag) => tag,
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("missing tag column in {trimmed:?}"),
                })
            }
        };
        let tag = Tag::parse(tag).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if current.is_empty() {
            start_line = line_no;
        }
        current.push(Token {
            surface: surface.to_string(),
            tag,
        });
    }
    flush(&mut current, start_line, &mut corpus);
    Ok(corpus)
}

/// Two-column CoNLL rendering; sentences end with a blank line.
pub fn to_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for t in &s.tokens {
            out.push_str(&t.surface);
            out.push(' ');
            out.push_str(&t.tag.to_string());
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

pub fn read_conll_file(path: &Path, options: ParseOptions) -> Result<ParsedCorpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll_with(&text, options).map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    })
}

/// Entity types used in the corpus that the catalog does not define.
pub fn unknown_types(sentences: &[TaggedSentence], catalog: &EntityCatalog) -> Vec<Diagnostic> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in sentences {
        for tok in &s.tokens {
            if let Some(t) = tok.tag.entity_type() {
                if catalog.index_of(t).is_none() && seen.insert(t.to_string()) {
                    out.push(Diagnostic {
                        line: s.source_line,
                        message: format!("entity type {t:?} is not in the catalog"),
                    });
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Dev,
    Test,
}

impl SplitKind {
    fn from_file_name(name: &str) -> Option<Self> {
        let lower = name.to_ascii_lowercase();
        if lower.contains("train") {
            Some(SplitKind::Train)
        } else if lower.contains("dev") || lower.contains("valid") {
            Some(SplitKind::Dev)
        } else if lower.contains("test") {
            Some(SplitKind::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub name: String,
    pub kind: Option<SplitKind>,
    pub path: PathBuf,
    pub sentences: Vec<TaggedSentence>,
}

/// Loads either a single CoNLL file or a directory whose file names contain
/// `train`, `dev` (or `valid`) and `test`
/// (`wnut17train.conll`, `emerging.dev.conll`, ...). Directory splits come back in
/// train, dev, test order.
pub fn load_splits(path: &Path, options: ParseOptions) -> Result<Vec<Split>> {
    let meta = fs::metadata(path).map_err(|e| Error::io(path, e))?;
    if meta.is_file() {
        let corpus = read_conll_file(path, options)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let kind = SplitKind::from_file_name(&name);
        return Ok(vec![Split {
            name,
            kind,
            path: path.to_path_buf(),
            sentences: corpus.sentences,
        }]);
    }
    let mut found = Vec::new();
    for entry in fs::read_dir(path).map_err(|e| Error::io(path, e))? {
        let entry = entry.map_err(|e| Error::io(path, e))?;
        let file_name = entry.file_name().to_string_lossy().into_owned();
        if !entry.path().is_file() {
            continue;
        }
        if let Some(kind) = SplitKind::from_file_name(&file_name) {
            found.push((kind, file_name, entry.path()));
        }
    }
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!(
            "{}: no train/dev/test files found",
            path.display()
        )));
    }
    let mut splits = Vec::with_capacity(found.len());
    for (kind, _, p) in found {
        if splits.iter().any(|s: &Split| s.kind == Some(kind.clone())) {
            return Err(Error::Config(format!(
                "{}: more than one {kind:?} file",
                path.display()
            )));
        }
        let corpus = read_conll_file(&p, options)?;
        splits.push(Split {
            name: format!("{kind:?}").to_lowercase(),
            kind: Some(kind),
            path: p,
            sentences: corpus.sentences,
        });
    }
    Ok(splits)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSize {
    pub split: String,
    pub sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusStats {
    pub split_sizes: Vec<SplitSize>,
    pub n_entity_types: usize,
    /// Mean tokens per sentence pooled over all splits.
    pub avg_length: f64,
    /// Mean whitespace tokens per catalog option text.
    pub avg_option_length: f64,
}

pub fn compute_stats(splits: &[(&str, &[TaggedSentence])], catalog: &EntityCatalog) -> Result<CorpusStats> {
    if splits.is_empty() {
        return Err(Error::Config("statistics need at least one split".into()));
    }
    let (mut sentences, mut tokens) = (0usize, 0usize);
    let split_sizes = splits
        .iter()
        .map(|(name, s)| {
            sentences += s.len();
            tokens += s.iter().map(TaggedSentence::len).sum::<usize>();
            SplitSize {
                split: name.to_string(),
                sentences: s.len(),
            }
        })
        .collect();
    let avg_length = if sentences == 0 {
        0.0
    } else {
        tokens as f64 / sentences as f64
    };
    let option_tokens: usize = catalog
        .entries()
        .iter()
        .map(|e| e.option_text.split_whitespace().count())
        .sum();
    let avg_option_length = if catalog.is_empty() {
        0.0
    } else {
        option_tokens as f64 / catalog.len() as f64
    };
    Ok(CorpusStats {
        split_sizes,
        n_entity_types: catalog.len(),
        avg_length,
        avg_option_length,
    })
}
