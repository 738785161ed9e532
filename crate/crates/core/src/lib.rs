//! Named entity recognition recast as multiple-choice reading comprehension.
//!
//! A tagged sentence becomes a passage, one fixed question and one option per
//! entity type. The model encodes every `passage ⊕ question ⊕ option`
//! sequence, runs a review / read / find attention stack, and scores each
//! passage token as selected or not for each option. Decoding turns those
//! scores back into IOB tags, which are scored with exact-match span F1.
//!
//! Pipeline by module:
//! [`corpus`] → [`reconstruct`] → [`encoder`] → [`hrca`] → [`head`] →
//! [`decoder`] → [`metrics`], with [`train`] and [`cli`] on top.

pub mod attention;
pub mod catalog;
pub mod checkpoint;
pub mod cli;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod hrca;
pub mod metrics;
pub mod model;
pub mod reconstruct;
pub mod synth;
pub mod train;

pub use catalog::{CatalogEntry, EntityCatalog, SourceKind};
pub use corpus::{parse_conll, Tag, TaggedSentence, Token};
pub use error::{Error, Result};
pub use head::PredictionMatrix;
pub use metrics::{micro_f1, F1Report};
pub use model::{ModelConfig, NerMrcModel, Variant};
pub use reconstruct::{reconstruct, McTriplet, UNIVERSAL_QUESTION};
pub use train::{train, TrainConfig};
