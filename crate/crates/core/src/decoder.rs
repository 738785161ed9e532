//! Recovers IOB tags from a prediction matrix.
//!
//! Each cell is first reduced to a select / not-select bit. A position with at
//! least one selected option takes the selected type with the highest select
//! probability; a position with none becomes `O`. Runs of identical types then
//! get `B-` on their first token and `I-` on the rest, so two adjacent entities
//! of the same type come out as one span.

use crate::catalog::EntityCatalog;
use crate::corpus::Tag;
use crate::error::{Error, Result};
use crate::head::{PredictionMatrix, NOT_SELECT, SELECT};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrix {
    k: usize,
    n_options: usize,
    bits: Vec<bool>,
}

impl SelectionMatrix {
    pub fn get(&self, row: usize, option: usize) -> bool {
        self.bits[row * self.n_options + option]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.k, self.n_options)
    }

    pub fn row_count(&self, row: usize) -> usize {
        (0..self.n_options).filter(|&i| self.get(row, i)).count()
    }
}

/// Per-cell argmax; a tie resolves to "not select".
pub fn select(pred: &PredictionMatrix) -> SelectionMatrix {
    let (k, n, _) = pred.shape();
    let bits = (0..k)
        .flat_map(|r| (0..n).map(move |i| (r, i)))
        .map(|(r, i)| {
            let pair = pred.get(r, i);
            pair[SELECT] > pair[NOT_SELECT]
        })
        .collect();
    SelectionMatrix {
        k,
        n_options: n,
        bits,
    }
}

/// Chosen option index per position, `None` for `O`.
pub fn decode_indices(pred: &PredictionMatrix, sel: &SelectionMatrix) -> Result<Vec<Option<usize>>> {
    let (k, n, _) = pred.shape();
    if sel.shape() != (k, n) {
        return Err(Error::Shape(format!(
            "selection {:?} vs prediction {:?}",
            sel.shape(),
            pred.shape()
        )));
    }
    Ok((0..k)
        .map(|r| {
            let mut best: Option<(usize, f64)> = None;
            for i in (0..n).filter(|&i| sel.get(r, i)) {
                let p = pred.select_prob(r, i);
                // strict comparison keeps the lower index on ties
                if best.map_or(true, |(_, bp)| p > bp) {
                    best = Some((i, p));
                }
            }
            best.map(|(i, _)| i)
        })
        .collect())
}

/// Entity type name (or `None` for `O`) per position.
pub fn decode_types(pred: &PredictionMatrix, sel: &SelectionMatrix, catalog: &EntityCatalog) -> Result<Vec<Option<String>>> {
    if catalog.len() != pred.n_options() {
        return Err(Error::Shape(format!(
            "{} options for a catalog of {}",
            pred.n_options(),
            catalog.len()
        )));
    }
    Ok(decode_indices(pred, sel)?
        .into_iter()
        .map(|i| i.map(|i| catalog.type_name(i).to_string()))
        .collect())
}

/// `B-` on the first token of each run of equal types, `I-` on the rest.
pub fn recover_iob<S: AsRef<str>>(types: &[Option<S>]) -> Vec<Tag> {
    let mut prev: Option<&str> = None;
    types
        .iter()
        .map(|t| {
            let cur = t.as_ref().map(AsRef::as_ref);
            let tag = match cur {
                None => Tag::Outside,
                Some(x) if prev == Some(x) => Tag::Inside(x.to_string()),
                Some(x) => Tag::Begin(x.to_string()),
            };
            prev = cur;
            tag
        })
        .collect()
}

/// select → decode_types → recover_iob.
pub fn decode(pred: &PredictionMatrix, catalog: &EntityCatalog) -> Result<Vec<Tag>> {
    let sel = select(pred);
    Ok(recover_iob(&decode_types(pred, &sel, catalog)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::{CatalogEntry, SourceKind};
    use crate::corpus::validate_tags;

    fn catalog(types: &[&str]) -> EntityCatalog {
        EntityCatalog::new(
            "t",
            SourceKind::NameOnly,
            types
                .iter()
                .map(|t| CatalogEntry {
                    type_name: t.to_string(),
                    option_text: t.to_string(),
                })
                .collect(),
        )
        .unwrap()
    }

    fn strs(tags: &[Tag]) -> Vec<String> {
        tags.iter().map(Tag::to_string).collect()
    }

    #[test]
    fn select_examples() {
        let p = PredictionMatrix::from_select_probs(&[vec![0.9, 0.5, 0.1]]).unwrap();
        let s = select(&p);
        assert!(s.get(0, 0));
        assert!(!s.get(0, 1), "0.5/0.5 tie resolves to not-select");
        assert!(!s.get(0, 2));
        let none = PredictionMatrix::from_select_probs(&vec![vec![0.1; 3]; 4]).unwrap();
        let s = select(&none);
        assert!((0..4).all(|r| s.row_count(r) == 0));
    }

    #[test]
    fn case_a_picks_highest_probability() {
        let cat = catalog(&["LOC", "PER"]);
        let p = PredictionMatrix::from_select_probs(&[vec![0.7, 0.9], vec![0.8, 0.2], vec![0.3, 0.4]]).unwrap();
        let types = decode_types(&p, &select(&p), &cat).unwrap();
        assert_eq!(types, vec![Some("PER".to_string()), Some("LOC".to_string()), None]);
    }

    #[test]
    fn case_a_tie_prefers_lower_index() {
        let cat = catalog(&["A", "B", "C"]);
        let p = PredictionMatrix::from_select_probs(&[vec![0.6, 0.75, 0.75]]).unwrap();
        assert_eq!(decode_types(&p, &select(&p), &cat).unwrap()[0].as_deref(), Some("B"));
    }

    #[test]
    fn recover_examples() {
        let t = recover_iob(&[Some("LOC"), Some("LOC"), Some("PER")]);
        assert_eq!(strs(&t), vec!["B-LOC", "I-LOC", "B-PER"]);
        assert_eq!(strs(&recover_iob::<&str>(&[None, None])), vec!["O", "O"]);
        let t = recover_iob(&[Some("PER"), None, Some("PER")]);
        assert_eq!(strs(&t), vec!["B-PER", "O", "B-PER"]);
        assert!(validate_tags(&t).is_empty());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let p = PredictionMatrix::from_select_probs(&[vec![0.9, 0.1]]).unwrap();
        let other = PredictionMatrix::from_select_probs(&[vec![0.9]]).unwrap();
        assert!(decode_indices(&p, &select(&other)).is_err());
        assert!(decode(&p, &catalog(&["A"])).is_err());
    }
}
