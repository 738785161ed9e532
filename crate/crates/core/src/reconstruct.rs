//! Turns tagged sentences into (passage, question, options) triplets with a
//! binary token-by-option label matrix.

use serde::Serialize;

use crate::catalog::EntityCatalog;
use crate::corpus::{Tag, TaggedSentence};
use crate::error::{Error, Result};

/// The single question asked for every dataset and every entity type.
pub const UNIVERSAL_QUESTION: &str = "What kind of entity is this?";

/// Dense `k × N_O` binary matrix, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LabelMatrix {
    rows: usize,
    cols: usize,
    data: Vec<u8>,
}

impl LabelMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) || rows.iter().flatten().any(|&v| v > 1) {
            return Err(Error::Shape("label rows must be equal-length 0/1 vectors".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.cols + col] = value as u8;
    }

    pub fn row(&self, row: usize) -> &[u8] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn column(&self, col: usize) -> Vec<u8> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    /// First `rows` rows only.
    pub fn truncated(&self, rows: usize) -> Self {
        let rows = rows.min(self.rows);
        Self {
            rows,
            cols: self.cols,
            data: self.data[..rows * self.cols].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McTriplet {
    pub passage: Vec<String>,
    pub question: Vec<String>,
    pub options: Vec<Vec<String>>,
    pub label_matrix: Option<LabelMatrix>,
    /// Index of the source sentence in its split, when known.
    pub origin: Option<usize>,
}

impl McTriplet {
    pub fn num_options(&self) -> usize {
        self.options.len()
    }

    pub fn passage_len(&self) -> usize {
        self.passage.len()
    }
}

/// JSON-lines record written by the `reconstruct` subcommand.
#[derive(Debug, Serialize)]
pub struct TripletRecord<'a> {
    pub passage: &'a [String],
    pub question: &'a [String],
    pub options: &'a [Vec<String>],
    pub label_matrix: Option<Vec<Vec<u8>>>,
}

impl<'a> From<&'a McTriplet> for TripletRecord<'a> {
    fn from(t: &'a McTriplet) -> Self {
        Self {
            passage: &t.passage,
            question: &t.question,
            options: &t.options,
            label_matrix: t.label_matrix.as_ref().map(LabelMatrix::to_rows),
        }
    }
}

/// `B-X` / `I-X` → `X`, `O` → `None`.
pub fn strip_iob(tag: &str) -> Result<Option<String>> {
    Ok(Tag::parse(tag)?.entity_type().map(str::to_string))
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_string).collect()
}

pub fn question_tokens() -> Vec<String> {
    tokens(UNIVERSAL_QUESTION)
}

pub fn option_tokens(catalog: &EntityCatalog) -> Vec<Vec<String>> {
    catalog.entries().iter().map(|e| tokens(&e.option_text)).collect()
}

/// Triplet without labels, for inference on raw token sequences.
pub fn triplet_for_passage(passage: Vec<String>, catalog: &EntityCatalog) -> McTriplet {
    McTriplet {
        passage,
        question: question_tokens(),
        options: option_tokens(catalog),
        label_matrix: None,
        origin: None,
    }
}

pub fn label_matrix(sentence: &TaggedSentence, catalog: &EntityCatalog) -> Result<LabelMatrix> {
    let mut m = LabelMatrix::zeros(sentence.len(), catalog.len());
    for (r, tok) in sentence.tokens.iter().enumerate() {
        if let Some(t) = tok.tag.entity_type() {
            let col = catalog.index_of(t).ok_or_else(|| Error::UnknownEntityType {
                type_name: t.to_string(),
                position: r,
            })?;
            m.set(r, col, true);
        }
    }
    Ok(m)
}

pub fn reconstruct(sentence: &TaggedSentence, catalog: &EntityCatalog) -> Result<McTriplet> {
    let labels = label_matrix(sentence, catalog)?;
    let mut t = triplet_for_passage(sentence.surfaces(), catalog);
    t.label_matrix = Some(labels);
    Ok(t)
}

pub fn reconstruct_all(sentences: &[TaggedSentence], catalog: &EntityCatalog) -> Result<Vec<McTriplet>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut t = reconstruct(s, catalog)?;
            t.origin = Some(i);
            Ok(t)
        })
        .collect()
}
