//! Exact-match span F1, micro-averaged over all types and sentences.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_tags, Tag};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub type_name: String,
    pub start: usize,
    /// Exclusive.
    pub end: usize,
}

/// Spans of an IOB2 sequence. With `repair`, an orphan `I-X` opens a new
/// span instead of being an error.
pub fn extract_spans(tags: &[Tag], repair: bool) -> Result<Vec<EntitySpan>> {
    if !repair {
        if let Some(v) = validate_tags(tags).into_iter().next() {
            return Err(Error::InvalidIob {
                position: v.position,
                tag: v.tag,
            });
        }
    }
    let mut spans = Vec::new();
    let mut open: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let continues = matches!((tag, &open), (Tag::Inside(t), Some((o, _))) if t == o);
        if continues {
            continue;
        }
        if let Some((type_name, start)) = open.take() {
            spans.push(EntitySpan {
                type_name,
                start,
                end: i,
            });
        }
        if let Some(t) = tag.entity_type() {
            open = Some((t.to_string(), i));
        }
    }
    if let Some((type_name, start)) = open {
        spans.push(EntitySpan {
            type_name,
            start,
            end: tags.len(),
        });
    }
    Ok(spans)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub per_type: BTreeMap<String, Counts>,
}

pub fn prf(tp: usize, fp: usize, fn_: usize) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(tp, tp + fp);
    let r = ratio(tp, tp + fn_);
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

pub fn micro_f1(gold: &[Vec<Tag>], pred: &[Vec<Tag>], repair: bool) -> Result<F1Report> {
    if gold.len() != pred.len() {
        return Err(Error::LengthMismatch(format!(
            "{} gold sentences vs {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut per_type: BTreeMap<String, Counts> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::LengthMismatch(format!(
                "sentence {i}: {} gold tags vs {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: HashSet<EntitySpan> = extract_spans(g, repair)?.into_iter().collect();
        let ps: HashSet<EntitySpan> = extract_spans(p, repair)?.into_iter().collect();
        for s in &ps {
            let c = per_type.entry(s.type_name.clone()).or_default();
            if gs.contains(s) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for s in gs.difference(&ps) {
            per_type.entry(s.type_name.clone()).or_default().fn_ += 1;
        }
    }
    let tp = per_type.values().map(|c| c.tp).sum();
    let fp = per_type.values().map(|c| c.fp).sum();
    let fn_ = per_type.values().map(|c| c.fn_).sum();
    let (precision, recall, f1) = prf(tp, fp, fn_);
    Ok(F1Report {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
        per_type,
    })
}
