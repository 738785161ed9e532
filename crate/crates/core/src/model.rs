//! The trainable model: encoder, optional reasoning stack, and output head.
//!
//! Three variants share the encoder:
//! - `Full`: triplet encoding per option, HRCA, per-option selection heads;
//! - `ReconstructionOnly`: triplet encoding, selection heads read the
//!   encoder's passage states directly;
//! - `Vanilla`: passage-only encoding and a single IOB tag classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::Linear;
use crate::catalog::EntityCatalog;
use crate::corpus::{repair_tags, Tag, TaggedSentence};
use crate::decoder;
use crate::encoder::{encode_passage, encode_triplet, EncoderConfig, EncoderParams, Vocabulary};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, ParamStore, Var};
use crate::head::{overall_loss_graph, predict_graph, HeadParams, PredictionMatrix, LOG_EPS};
use crate::hrca::{hrca_forward, HrcaConfig, HrcaParams};
use crate::reconstruct::{reconstruct, triplet_for_passage, McTriplet};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    #[default]
    Full,
    ReconstructionOnly,
    Vanilla,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::ReconstructionOnly, Variant::Vanilla];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ReconstructionOnly => "reconstruction_only",
            Variant::Vanilla => "vanilla",
        }
    }

    pub fn uses_triplets(self) -> bool {
        self != Variant::Vanilla
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub hrca: HrcaConfig,
    pub variant: Variant,
    /// Truncate overlong inputs instead of failing.
    pub truncate: bool,
}

/// One training or evaluation sample.
#[derive(Debug, Clone)]
pub struct Example {
    pub passage: Vec<String>,
    pub gold: Vec<Tag>,
    /// Present for the triplet-based variants only.
    pub triplet: Option<McTriplet>,
}

pub fn prepare_examples(sentences: &[TaggedSentence], catalog: &EntityCatalog, variant: Variant) -> Result<Vec<Example>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let triplet = if variant.uses_triplets() {
                let mut t = reconstruct(s, catalog)?;
                t.origin = Some(i);
                Some(t)
            } else {
                for (pos, tok) in s.tokens.iter().enumerate() {
                    if let Some(t) = tok.tag.entity_type() {
                        if catalog.index_of(t).is_none() {
                            return Err(Error::UnknownEntityType {
                                type_name: t.to_string(),
                                position: pos,
                            });
                        }
                    }
                }
                None
            };
            Ok(Example {
                passage: s.surfaces(),
                gold: s.tags(),
                triplet,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OutputHead {
    Options(HeadParams),
    /// `O`, then `B-t`, `I-t` for every catalog type.
    Tags(Linear),
}

#[derive(Debug, Clone)]
pub struct NerMrcModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub catalog: EntityCatalog,
    pub seed: u64,
    pub store: ParamStore,
    pub encoder: EncoderParams,
    pub hrca: Option<HrcaParams>,
    pub head: OutputHead,
}

/// Class index of an IOB tag in the vanilla tag head.
pub fn tag_class(tag: &Tag, catalog: &EntityCatalog) -> Result<usize> {
    let lookup = |t: &str| {
        catalog.index_of(t).ok_or_else(|| Error::UnknownEntityType {
            type_name: t.to_string(),
            position: 0,
        })
    };
    Ok(match tag {
        Tag::Outside => 0,
        Tag::Begin(t) => 1 + 2 * lookup(t)?,
        Tag::Inside(t) => 2 + 2 * lookup(t)?,
    })
}

pub fn class_tag(class: usize, catalog: &EntityCatalog) -> Tag {
    if class == 0 {
        return Tag::Outside;
    }
    let ty = catalog.type_name((class - 1) / 2).to_string();
    if (class - 1) % 2 == 0 {
        Tag::Begin(ty)
    } else {
        Tag::Inside(ty)
    }
}

impl NerMrcModel {
    pub fn new(config: ModelConfig, vocab: Vocabulary, catalog: EntityCatalog, seed: u64) -> Result<Self> {
        config.encoder.validate()?;
        config.hrca.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let d = config.encoder.d_model;
        let encoder = EncoderParams::init(&mut store, &mut rng, &config.encoder, vocab.len());
        let hrca = match config.variant {
            Variant::Full => Some(HrcaParams::init(&mut store, &mut rng, &config.hrca, d)),
            _ => None,
        };
        let head = match config.variant {
            Variant::Vanilla => OutputHead::Tags(Linear::init(
                &mut store,
                &mut rng,
                "head.tags",
                d,
                1 + 2 * catalog.len(),
            )),
            _ => OutputHead::Options(HeadParams::init(&mut store, &mut rng, d, catalog.len())),
        };
        Ok(Self {
            config,
            vocab,
            catalog,
            seed,
            store,
            encoder,
            hrca,
            head,
        })
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Per-option `k × 2` probability nodes for a triplet.
    pub fn option_probs(&self, g: &mut Graph, triplet: &McTriplet) -> Result<Vec<Var>> {
        let OutputHead::Options(head) = &self.head else {
            return Err(Error::Config("the vanilla variant has no option head".into()));
        };
        if triplet.num_options() != head.sub_heads.len() {
            return Err(Error::Shape(format!(
                "triplet has {} options, model has {} sub-heads",
                triplet.num_options(),
                head.sub_heads.len()
            )));
        }
        let mut passages = Vec::with_capacity(triplet.num_options());
        for i in 0..triplet.num_options() {
            let h = encode_triplet(
                g,
                triplet,
                i,
                &self.vocab,
                &self.encoder,
                &self.config.encoder,
                self.config.truncate,
            )?;
            let p = match &self.hrca {
                Some(hrca) => hrca_forward(g, &h, hrca)?.passage,
                None => h.passage,
            };
            passages.push(p);
        }
        predict_graph(g, &passages, head)
    }

    /// `k × n_tags` probabilities for the vanilla variant.
    pub fn tag_probs(&self, g: &mut Graph, passage: &[String]) -> Result<Var> {
        let OutputHead::Tags(head) = &self.head else {
            return Err(Error::Config("only the vanilla variant has a tag head".into()));
        };
        let h = encode_passage(
            g,
            passage,
            &self.vocab,
            &self.encoder,
            &self.config.encoder,
            self.config.truncate,
        )?;
        let logits = head.forward(g, h)?;
        Ok(g.softmax_rows(logits))
    }

    pub fn loss_node(&self, g: &mut Graph, example: &Example) -> Result<Var> {
        match self.variant() {
            Variant::Vanilla => {
                let probs = self.tag_probs(g, &example.passage)?;
                let rows = g.shape(probs).0;
                let targets = example.gold[..rows]
                    .iter()
                    .map(|t| tag_class(t, &self.catalog))
                    .collect::<Result<Vec<_>>>()?;
                g.nll_rows(probs, &targets, LOG_EPS)
            }
            _ => {
                let triplet = example
                    .triplet
                    .as_ref()
                    .ok_or_else(|| Error::Config("example has no triplet".into()))?;
                let labels = triplet
                    .label_matrix
                    .as_ref()
                    .ok_or_else(|| Error::Config("triplet has no label matrix".into()))?;
                let probs = self.option_probs(g, triplet)?;
                overall_loss_graph(g, &probs, labels)
            }
        }
    }

    pub fn loss(&self, example: &Example) -> Result<f64> {
        let mut g = Graph::new(&self.store);
        let l = self.loss_node(&mut g, example)?;
        Ok(g.scalar(l))
    }

    /// Loss and one gradient slot per parameter tensor.
    pub fn loss_and_grads(&self, example: &Example) -> Result<(f64, Vec<Option<Mat>>)> {
        let mut g = Graph::new(&self.store);
        let l = self.loss_node(&mut g, example)?;
        let loss = g.scalar(l);
        Ok((loss, g.backward(l).into_param_grads()))
    }

    pub fn prediction_matrix(&self, triplet: &McTriplet) -> Result<PredictionMatrix> {
        let mut g = Graph::new(&self.store);
        let probs = self.option_probs(&mut g, triplet)?;
        let blocks: Vec<Mat> = probs.iter().map(|&p| g.value(p).clone()).collect();
        PredictionMatrix::from_option_probs(&blocks)
    }

    /// Decoded IOB tags for a token sequence, one per token.
    pub fn predict_tags(&self, passage: &[String]) -> Result<Vec<Tag>> {
        let mut tags = match self.variant() {
            Variant::Vanilla => {
                let mut g = Graph::new(&self.store);
                let probs = self.tag_probs(&mut g, passage)?;
                let mut tags: Vec<Tag> = g
                    .value(probs)
                    .rows()
                    .into_iter()
                    .map(|row| {
                        let best = row
                            .iter()
                            .enumerate()
                            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
                        class_tag(best.0, &self.catalog)
                    })
                    .collect();
                repair_tags(&mut tags);
                tags
            }
            _ => {
                let triplet = triplet_for_passage(passage.to_vec(), &self.catalog);
                let pred = self.prediction_matrix(&triplet)?;
                decoder::decode(&pred, &self.catalog)?
            }
        };
        // positions dropped by truncation are predicted as O
        tags.resize(passage.len(), Tag::Outside);
        Ok(tags)
    }

    /// Overwrites every parameter with the same-named tensor from a checkpoint.
    pub fn load_tensors(&mut self, tensors: Vec<(String, Mat)>) -> Result<()> {
        if tensors.len() != self.store.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors for a model with {}",
                tensors.len(),
                self.store.len()
            )));
        }
        for (name, value) in tensors {
            let id = self
                .store
                .find(&name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {name}")))?;
            if self.store.get(id).dim() != value.dim() {
                return Err(Error::Checkpoint(format!(
                    "tensor {name}: shape {:?}, expected {:?}",
                    value.dim(),
                    self.store.get(id).dim()
                )));
            }
            *self.store.get_mut(id) = value;
        }
        Ok(())
    }
}
