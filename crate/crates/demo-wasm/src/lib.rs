//! Three pure operations from `ner-mrc` for a static browser page.
//!
//! Every function takes and returns strings so the page needs no glue
//! beyond the generated bindings. The `*_json` functions are the plain Rust
//! versions; the exported wrappers turn their errors into JS exceptions.

use ner_mrc::decoder::{decode_types, recover_iob, select};
use ner_mrc::metrics::micro_f1;
use ner_mrc::reconstruct::TripletRecord;
use ner_mrc::{parse_conll, reconstruct, EntityCatalog, PredictionMatrix};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// CoNLL text + catalog JSON → one triplet record per sentence.
pub fn reconstruct_json(conll: &str, catalog: &str) -> Result<String, String> {
    let catalog = EntityCatalog::from_json(catalog).map_err(|e| e.to_string())?;
    let sentences = parse_conll(conll).map_err(|e| e.to_string())?;
    let records = sentences
        .iter()
        .map(|s| {
            let t = reconstruct(s, &catalog)?;
            Ok(serde_json::to_value(TripletRecord::from(&t))?)
        })
        .collect::<ner_mrc::Result<Vec<Value>>>()
        .map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&records).map_err(|e| e.to_string())
}

/// `k × N_O` select probabilities (JSON array of rows) → selection matrix,
/// per-position type and IOB tags.
pub fn decode_json(probs: &str, catalog: &str) -> Result<String, String> {
    let catalog = EntityCatalog::from_json(catalog).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<f64>> = serde_json::from_str(probs).map_err(|e| e.to_string())?;
    if rows.iter().flatten().any(|p| !(0.0..=1.0).contains(p)) {
        return Err("probabilities must lie in [0, 1]".into());
    }
    let pred = PredictionMatrix::from_select_probs(&rows).map_err(|e| e.to_string())?;
    if pred.n_options() != catalog.len() {
        return Err(format!("{} columns for {} options", pred.n_options(), catalog.len()));
    }
    let sel = select(&pred);
    let types = decode_types(&pred, &sel, &catalog).map_err(|e| e.to_string())?;
    let selection: Vec<Vec<u8>> = (0..pred.k())
        .map(|r| (0..pred.n_options()).map(|c| sel.get(r, c) as u8).collect())
        .collect();
    let tags: Vec<String> = recover_iob(&types).iter().map(ToString::to_string).collect();
    Ok(json!({"selection": selection, "types": types, "tags": tags}).to_string())
}

/// Gold and predicted CoNLL text → micro F1 report.
pub fn score_json(gold: &str, pred: &str, repair: bool) -> Result<String, String> {
    let gold = parse_conll(gold).map_err(|e| e.to_string())?;
    let pred = parse_conll(pred).map_err(|e| e.to_string())?;
    if gold.len() != pred.len() {
        return Err(format!("{} gold sentences, {} predicted", gold.len(), pred.len()));
    }
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        if g.surfaces() != p.surfaces() {
            return Err(format!("sentence {} has different tokens", i + 1));
        }
    }
    let gold: Vec<_> = gold.iter().map(|s| s.tags()).collect();
    let pred: Vec<_> = pred.iter().map(|s| s.tags()).collect();
    let report = micro_f1(&gold, &pred, repair).map_err(|e| e.to_string())?;
    serde_json::to_string_pretty(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen(js_name = reconstruct)]
pub fn reconstruct_js(conll: &str, catalog: &str) -> Result<String, JsError> {
    reconstruct_json(conll, catalog).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = decode)]
pub fn decode_js(probs: &str, catalog: &str) -> Result<String, JsError> {
    decode_json(probs, catalog).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = score)]
pub fn score_js(gold: &str, pred: &str, repair: bool) -> Result<String, JsError> {
    score_json(gold, pred, repair).map_err(|e| JsError::new(&e))
}
