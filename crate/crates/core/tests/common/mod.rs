//! Brute-force reference implementations used as test oracles. None of these
//! call into the library's decoding or scoring code.
#![allow(dead_code)]

use std::collections::BTreeSet;

/// Straight transcription of the inference procedure over raw
/// `[select, not_select]` pairs. Returns IOB2 tag strings.
pub fn algorithm1(rows: &[Vec<[f64; 2]>], types: &[&str]) -> Vec<String> {
    let mut out = Vec::with_capacity(rows.len());
    let mut prev: Option<usize> = None;
    for row in rows {
        let mut best: Option<usize> = None;
        for (i, pair) in row.iter().enumerate() {
            // argmax over {select, not select}; a tie goes to not select
            if pair[0] > pair[1] {
                match best {
                    Some(b) if row[b][0] >= pair[0] => {}
                    _ => best = Some(i),
                }
            }
        }
        match best {
            None => {
                out.push("O".to_string());
                prev = None;
            }
            Some(t) => {
                let prefix = if prev == Some(t) { "I" } else { "B" };
                out.push(format!("{prefix}-{}", types[t]));
                prev = Some(t);
            }
        }
    }
    out
}

fn split_tag(tag: &str) -> Option<(char, &str)> {
    if tag == "O" {
        return None;
    }
    let (p, t) = tag.split_once('-').expect("tag has a prefix");
    Some((p.chars().next().unwrap(), t))
}

/// Every (type, start, end) triple that forms an entity, found by testing all
/// O(k^2) candidate intervals. An `I-t` that does not continue a `t` entity
/// opens a new one.
pub fn span_set(tags: &[String]) -> BTreeSet<(String, usize, usize)> {
    let ty = |i: usize| split_tag(&tags[i]).map(|(_, t)| t);
    let prefix = |i: usize| split_tag(&tags[i]).map(|(p, _)| p);
    let mut spans = BTreeSet::new();
    for s in 0..tags.len() {
        for e in s..tags.len() {
            let Some(t) = ty(s) else { continue };
            let opens = prefix(s) == Some('B') || s == 0 || ty(s - 1) != Some(t);
            let body = (s + 1..=e).all(|j| prefix(j) == Some('I') && ty(j) == Some(t));
            let closed = e + 1 == tags.len() || !(prefix(e + 1) == Some('I') && ty(e + 1) == Some(t));
            if opens && body && closed {
                spans.insert((t.to_string(), s, e));
            }
        }
    }
    spans
}

/// Pooled precision, recall, F1 and counts over sentence-indexed span sets.
pub fn micro_prf(gold: &[Vec<String>], pred: &[Vec<String>]) -> (f64, f64, f64, usize, usize, usize) {
    let collect = |c: &[Vec<String>]| -> BTreeSet<(usize, String, usize, usize)> {
        c.iter()
            .enumerate()
            .flat_map(|(i, s)| span_set(s).into_iter().map(move |(t, a, b)| (i, t, a, b)))
            .collect()
    };
    let g = collect(gold);
    let p = collect(pred);
    let tp = g.intersection(&p).count();
    let fp = p.len() - tp;
    let fn_ = g.len() - tp;
    let precision = if p.is_empty() { 0.0 } else { tp as f64 / p.len() as f64 };
    let recall = if g.is_empty() { 0.0 } else { tp as f64 / g.len() as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1, tp, fp, fn_)
}

/// Random tag string over `types`, including orphan `I-` tags.
pub fn random_tags<R: rand::Rng>(rng: &mut R, len: usize, types: &[&str]) -> Vec<String> {
    (0..len)
        .map(|_| match rng.random_range(0..3) {
            0 => "O".to_string(),
            1 => format!("B-{}", types[rng.random_range(0..types.len())]),
            _ => format!("I-{}", types[rng.random_range(0..types.len())]),
        })
        .collect()
}
