//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "NMRCKPT\0"
//! version    u32
//! header_len u64
//! header     JSON      model config, seed, vocabulary, catalog, tensor table
//! payload    f64 × Σ rows·cols, tensors in header order, row-major
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::catalog::{CatalogConfig, EntityCatalog};
use crate::encoder::Vocabulary;
use crate::error::{Error, Result};
use crate::graph::Mat;
use crate::model::{ModelConfig, NerMrcModel};

pub const MAGIC: &[u8; 8] = b"NMRCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub seed: u64,
    pub vocab_hash: String,
    pub model: ModelConfig,
    pub vocab: Vec<String>,
    pub catalog: CatalogConfig,
    pub tensors: Vec<TensorEntry>,
}

pub fn to_bytes(model: &NerMrcModel) -> Result<Vec<u8>> {
    let header = CheckpointHeader {
        format_version: FORMAT_VERSION,
        seed: model.seed,
        vocab_hash: model.vocab.hash(),
        model: model.config.clone(),
        vocab: model.vocab.tokens().to_vec(),
        catalog: model.catalog.to_config(),
        tensors: model
            .store
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: [t.value.nrows(), t.value.ncols()],
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(20 + header.len() + model.store.num_scalars() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.store.iter() {
        for v in t.value.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<NerMrcModel> {
    if take(&mut bytes, 8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut bytes, 4)?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(take(&mut bytes, 8)?.try_into().expect("8 bytes")) as usize;
    let header: CheckpointHeader = serde_json::from_slice(take(&mut bytes, header_len)?)?;
    let vocab = Vocabulary::from_tokens(header.vocab)?;
    if vocab.hash() != header.vocab_hash {
        return Err(Error::Checkpoint("vocabulary hash mismatch".into()));
    }
    let catalog = EntityCatalog::from_config(header.catalog)?;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for entry in header.tensors {
        let [rows, cols] = entry.shape;
        let raw = take(&mut bytes, rows * cols * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let value = Mat::from_shape_vec((rows, cols), data)
            .map_err(|e| Error::Checkpoint(format!("tensor {}: {e}", entry.name)))?;
        tensors.push((entry.name, value));
    }
    if !bytes.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len())));
    }
    let mut model = NerMrcModel::new(header.model, vocab, catalog, header.seed)?;
    model.load_tensors(tensors)?;
    Ok(model)
}

pub fn save(model: &NerMrcModel, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, to_bytes(model)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<NerMrcModel> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint(m) => Error::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::synth;

    fn model(variant: Variant) -> NerMrcModel {
        let mut config = ModelConfig::default();
        config.encoder.d_model = 8;
        config.encoder.n_heads = 2;
        config.encoder.ffn_dim = 8;
        config.encoder.max_len = 40;
        config.hrca.n_heads = 2;
        config.hrca.head_dim = 2;
        config.variant = variant;
        let vocab = Vocabulary::build(["Anna", "visited", "Paris"]);
        NerMrcModel::new(config, vocab, synth::catalog(), 5).unwrap()
    }

    #[test]
    fn round_trip_preserves_everything() {
        for variant in Variant::ALL {
            let m = model(variant);
            let bytes = to_bytes(&m).unwrap();
            let back = from_bytes(&bytes).unwrap();
            assert_eq!(back.store, m.store);
            assert_eq!(back.vocab, m.vocab);
            assert_eq!(back.catalog, m.catalog);
            assert_eq!(back.config, m.config);
            assert_eq!(to_bytes(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let bytes = to_bytes(&model(Variant::Full)).unwrap();
        assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(from_bytes(&bad).is_err());
        let mut extra = bytes;
        extra.push(0);
        assert!(from_bytes(&extra).is_err());
    }
}
