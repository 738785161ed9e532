//! Word-level transformer encoder over `P SEP Q SEP O` sequences.
//!
//! One hidden row per input word: the passage segment of the output lines up
//! with passage tokens one-to-one, so per-token labels need no alignment step.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attention::{attention, uniform, AttentionParams, LayerNorm, Linear};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mat, ParamId, ParamStore, Var};
use crate::reconstruct::McTriplet;

pub const PAD: &str = "[PAD]";
pub const SEP: &str = "[SEP]";
pub const UNK: &str = "[UNK]";

/// Whitespace-token vocabulary with dense ids; specials occupy 0..3.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub const PAD_ID: usize = 0;
    pub const SEP_ID: usize = 1;
    pub const UNK_ID: usize = 2;

    /// Ids are assigned in first-seen order.
    pub fn build<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = vec![PAD.into(), SEP.into(), UNK.into()];
        let mut index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        for w in words {
            if !index.contains_key(w) {
                index.insert(w.to_string(), tokens.len());
                tokens.push(w.to_string());
            }
        }
        Self { tokens, index }
    }

    pub fn from_triplets(triplets: &[McTriplet]) -> Self {
        Self::build(triplets.iter().flat_map(|t| {
            t.passage
                .iter()
                .chain(&t.question)
                .chain(t.options.iter().flatten())
                .map(String::as_str)
        }))
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 3 || tokens[0] != PAD || tokens[1] != SEP || tokens[2] != UNK {
            return Err(Error::Checkpoint("vocabulary must start with [PAD] [SEP] [UNK]".into()));
        }
        let index: HashMap<String, usize> =
            tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != tokens.len() {
            return Err(Error::Checkpoint("vocabulary has duplicate tokens".into()));
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(Self::UNK_ID)
    }

    pub fn ids<S: AsRef<str>>(&self, words: &[S]) -> Vec<usize> {
        words.iter().map(|w| self.id(w.as_ref())).collect()
    }

    /// Hex SHA-256 over the newline-joined token list.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tokens {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            ffn_dim: 128,
            max_len: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.ffn_dim == 0 || self.max_len < 4 {
            return Err(Error::Config(format!("degenerate encoder config {self:?}")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "encoder width {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderLayerParams {
    pub attn: AttentionParams,
    pub ln_attn: LayerNorm,
    pub ff_in: Linear,
    pub ff_out: Linear,
    pub ln_ff: LayerNorm,
}

/// Handles into the shared [`ParamStore`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub token_embedding: ParamId,
    pub position_embedding: ParamId,
    /// Rows: passage, question, option.
    pub segment_embedding: ParamId,
    pub layers: Vec<EncoderLayerParams>,
}

pub const EMBEDDING_INIT: f64 = 0.1;
const POSITION_INIT: f64 = 0.01;

impl EncoderParams {
    pub fn init<R: Rng>(store: &mut ParamStore, rng: &mut R, config: &EncoderConfig, vocab_size: usize) -> Self {
        let d = config.d_model;
        let token_embedding = store.add("enc.tok_emb", uniform(rng, vocab_size, d, EMBEDDING_INIT));
        let position_embedding = store.add("enc.pos_emb", uniform(rng, config.max_len, d, POSITION_INIT));
        let segment_embedding = store.add("enc.seg_emb", uniform(rng, 3, d, EMBEDDING_INIT));
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("enc.l{l}");
                EncoderLayerParams {
                    attn: AttentionParams::init(
                        store,
                        rng,
                        &format!("{p}.attn"),
                        d,
                        config.n_heads,
                        d / config.n_heads,
                    ),
                    ln_attn: LayerNorm::init(store, &format!("{p}.ln_attn"), d),
                    ff_in: Linear::init(store, rng, &format!("{p}.ff_in"), d, config.ffn_dim),
                    ff_out: Linear::init(store, rng, &format!("{p}.ff_out"), config.ffn_dim, d),
                    ln_ff: LayerNorm::init(store, &format!("{p}.ln_ff"), d),
                }
            })
            .collect();
        Self {
            token_embedding,
            position_embedding,
            segment_embedding,
            layers,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Segment {
    Passage = 0,
    Question = 1,
    Option = 2,
}

/// Row ranges of each segment inside the encoded sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentLayout {
    pub passage: std::ops::Range<usize>,
    pub question: std::ops::Range<usize>,
    pub option: std::ops::Range<usize>,
    pub total: usize,
}

impl SegmentLayout {
    /// Lays out `P SEP Q SEP O`, truncating the option tail first and then
    /// the passage tail when `truncate` is set.
    pub fn plan(k: usize, m: usize, n: usize, max_len: usize, truncate: bool) -> Result<Self> {
        let full = k + m + n + 2;
        let (mut k2, mut n2) = (k, n);
        if full > max_len {
            if !truncate {
                return Err(Error::SequenceTooLong { len: full, max_len });
            }
            let budget = max_len.saturating_sub(m + 2);
            n2 = n.min(budget.saturating_sub(k).max(1));
            k2 = k.min(budget.saturating_sub(n2));
            if k2 == 0 {
                return Err(Error::SequenceTooLong { len: full, max_len });
            }
            log::warn!("truncated sequence of {full} to {max_len}: passage {k}->{k2}, option {n}->{n2}");
        }
        let passage = 0..k2;
        let question = k2 + 1..k2 + 1 + m;
        let option = question.end + 1..question.end + 1 + n2;
        Ok(Self {
            total: option.end,
            passage,
            question,
            option,
        })
    }
}

/// Encoder output split back into its three segments.
#[derive(Debug, Clone, Copy)]
pub struct HiddenStates {
    pub passage: Var,
    pub question: Var,
    pub option: Var,
    pub option_index: usize,
}

/// Concrete matrices for a [`HiddenStates`].
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenValues {
    pub passage: Mat,
    pub question: Mat,
    pub option: Mat,
    pub option_index: usize,
}

impl HiddenStates {
    pub fn values(&self, g: &Graph) -> HiddenValues {
        HiddenValues {
            passage: g.value(self.passage).clone(),
            question: g.value(self.question).clone(),
            option: g.value(self.option).clone(),
            option_index: self.option_index,
        }
    }
}

/// Embedding sum for `ids` with the given segment ids; position `i` uses row `i`.
pub fn embed(g: &mut Graph, params: &EncoderParams, ids: &[usize], segments: &[usize]) -> Result<Var> {
    let n = ids.len();
    let positions: Vec<usize> = (0..n).collect();
    let tok_table = g.param(params.token_embedding);
    let pos_table = g.param(params.position_embedding);
    let seg_table = g.param(params.segment_embedding);
    if n > g.shape(pos_table).0 {
        return Err(Error::SequenceTooLong {
            len: n,
            max_len: g.shape(pos_table).0,
        });
    }
    let tok = g.gather(tok_table, ids)?;
    let pos = g.gather(pos_table, &positions)?;
    let seg = g.gather(seg_table, segments)?;
    let x = g.add(tok, pos)?;
    g.add(x, seg)
}

/// Post-norm transformer stack over an embedded sequence.
pub fn encode_embedded(g: &mut Graph, params: &EncoderParams, mut x: Var) -> Result<Var> {
    for layer in &params.layers {
        let a = attention(g, x, x, x, &layer.attn)?.output;
        let res = g.add(x, a)?;
        x = layer.ln_attn.forward(g, res)?;
        let h = layer.ff_in.forward(g, x)?;
        let h = g.gelu(h);
        let h = layer.ff_out.forward(g, h)?;
        let res = g.add(x, h)?;
        x = layer.ln_ff.forward(g, res)?;
    }
    Ok(x)
}

/// Token ids, segment ids and layout for `P SEP Q SEP O^i`.
pub fn triplet_input(
    triplet: &McTriplet,
    option_index: usize,
    vocab: &Vocabulary,
    max_len: usize,
    truncate: bool,
) -> Result<(Vec<usize>, Vec<usize>, SegmentLayout)> {
    let option = triplet.options.get(option_index).ok_or_else(|| {
        Error::Shape(format!(
            "option index {option_index} out of range for {} options",
            triplet.options.len()
        ))
    })?;
    if triplet.passage.is_empty() || triplet.question.is_empty() || option.is_empty() {
        return Err(Error::Shape("triplet segments must be non-empty".into()));
    }
    let layout = SegmentLayout::plan(
        triplet.passage.len(),
        triplet.question.len(),
        option.len(),
        max_len,
        truncate,
    )?;
    let mut ids = Vec::with_capacity(layout.total);
    let mut segs = Vec::with_capacity(layout.total);
    ids.extend(vocab.ids(&triplet.passage[..layout.passage.len()]));
    ids.push(Vocabulary::SEP_ID);
    segs.resize(ids.len(), Segment::Passage as usize);
    ids.extend(vocab.ids(&triplet.question));
    ids.push(Vocabulary::SEP_ID);
    segs.resize(ids.len(), Segment::Question as usize);
    ids.extend(vocab.ids(&option[..layout.option.len()]));
    segs.resize(ids.len(), Segment::Option as usize);
    Ok((ids, segs, layout))
}

/// Encodes `P ⊕ Q ⊕ O^option_index` (0-based index) and slices the result.
pub fn encode_triplet(
    g: &mut Graph,
    triplet: &McTriplet,
    option_index: usize,
    vocab: &Vocabulary,
    params: &EncoderParams,
    config: &EncoderConfig,
    truncate: bool,
) -> Result<HiddenStates> {
    let (ids, segs, layout) = triplet_input(triplet, option_index, vocab, config.max_len, truncate)?;
    let x = embed(g, params, &ids, &segs)?;
    let h = encode_embedded(g, params, x)?;
    Ok(HiddenStates {
        passage: g.slice_rows(h, layout.passage.start, layout.passage.end)?,
        question: g.slice_rows(h, layout.question.start, layout.question.end)?,
        option: g.slice_rows(h, layout.option.start, layout.option.end)?,
        option_index,
    })
}

/// One [`HiddenStates`] per option, in catalog order.
pub fn encode_all_options(
    g: &mut Graph,
    triplet: &McTriplet,
    vocab: &Vocabulary,
    params: &EncoderParams,
    config: &EncoderConfig,
    truncate: bool,
) -> Result<Vec<HiddenStates>> {
    (0..triplet.num_options())
        .map(|i| encode_triplet(g, triplet, i, vocab, params, config, truncate))
        .collect()
}

/// Passage-only encoding, used by the plain sequence-labelling baseline.
pub fn encode_passage(
    g: &mut Graph,
    passage: &[String],
    vocab: &Vocabulary,
    params: &EncoderParams,
    config: &EncoderConfig,
    truncate: bool,
) -> Result<Var> {
    let mut k = passage.len();
    if k == 0 {
        return Err(Error::Shape("empty passage".into()));
    }
    if k > config.max_len {
        if !truncate {
            return Err(Error::SequenceTooLong {
                len: k,
                max_len: config.max_len,
            });
        }
        log::warn!("truncated passage of {k} to {}", config.max_len);
        k = config.max_len;
    }
    let ids = vocab.ids(&passage[..k]);
    let x = embed(g, params, &ids, &vec![Segment::Passage as usize; k])?;
    encode_embedded(g, params, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconstruct::question_tokens;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn triplet() -> McTriplet {
        McTriplet {
            passage: words("Ann visited Rome"),
            question: question_tokens(),
            options: vec![words("Person names"), words("Places"), words("Groups of people")],
            label_matrix: None,
            origin: None,
        }
    }

    fn model(d: usize, seed: u64) -> (ParamStore, EncoderParams, EncoderConfig, Vocabulary) {
        let t = triplet();
        let vocab = Vocabulary::from_triplets(std::slice::from_ref(&t));
        let config = EncoderConfig {
            d_model: d,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 2 * d,
            max_len: 32,
        };
        let mut store = ParamStore::new();
        let params = EncoderParams::init(&mut store, &mut ChaCha8Rng::seed_from_u64(seed), &config, vocab.len());
        (store, params, config, vocab)
    }

    #[test]
    fn vocabulary_specials_and_unknowns() {
        let v = Vocabulary::build(["a", "b", "a"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("zzz"), Vocabulary::UNK_ID);
        assert_eq!(Vocabulary::from_tokens(v.tokens().to_vec()).unwrap(), v);
        assert_eq!(v.hash().len(), 64);
        assert_ne!(v.hash(), Vocabulary::build(["b", "a"]).hash());
    }

    #[test]
    fn segment_shapes() {
        let (store, params, config, vocab) = model(16, 1);
        let mut g = Graph::new(&store);
        let h = encode_triplet(&mut g, &triplet(), 0, &vocab, &params, &config, false).unwrap();
        assert_eq!(g.shape(h.passage), (3, 16));
        assert_eq!(g.shape(h.question), (6, 16));
        assert_eq!(g.shape(h.option), (2, 16));
    }

    #[test]
    fn zero_embeddings_give_equal_rows() {
        let (mut store, params, config, vocab) = model(8, 2);
        for id in [params.token_embedding, params.position_embedding, params.segment_embedding] {
            store.get_mut(id).fill(0.0);
        }
        let mut g = Graph::new(&store);
        let h = encode_triplet(&mut g, &triplet(), 1, &vocab, &params, &config, false).unwrap();
        let all = ndarray::concatenate(
            ndarray::Axis(0),
            &[g.value(h.passage).view(), g.value(h.question).view(), g.value(h.option).view()],
        )
        .unwrap();
        for row in all.rows() {
            for (a, b) in row.iter().zip(all.row(0).iter()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let run = || {
            let (store, params, config, vocab) = model(8, 42);
            let mut g = Graph::new(&store);
            let h = encode_triplet(&mut g, &triplet(), 2, &vocab, &params, &config, false).unwrap();
            h.values(&g)
        };
        let (a, b) = (run(), run());
        let bits = |m: &Mat| m.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.passage), bits(&b.passage));
        assert_eq!(bits(&a.option), bits(&b.option));
    }

    #[test]
    fn embedding_layer_is_word_aligned() {
        let (store, params, config, vocab) = model(8, 3);
        let t = triplet();
        let (ids, segs, _) = triplet_input(&t, 0, &vocab, config.max_len, false).unwrap();
        let mut masked = ids.clone();
        masked[1] = Vocabulary::UNK_ID;
        let mut g = Graph::new(&store);
        let a = embed(&mut g, &params, &ids, &segs).unwrap();
        let b = embed(&mut g, &params, &masked, &segs).unwrap();
        let diff = g.value(a) - g.value(b);
        for (r, row) in diff.rows().into_iter().enumerate() {
            let changed = row.iter().any(|v| v.abs() > 0.0);
            assert_eq!(changed, r == 1, "row {r}");
        }
    }

    #[test]
    fn overlong_sequences() {
        assert!(matches!(
            SegmentLayout::plan(10, 6, 30, 20, false),
            Err(Error::SequenceTooLong { len: 48, max_len: 20 })
        ));
        let l = SegmentLayout::plan(10, 6, 30, 20, true).unwrap();
        assert_eq!((l.passage.len(), l.option.len(), l.total), (10, 2, 20));
        let l = SegmentLayout::plan(30, 6, 30, 20, true).unwrap();
        assert_eq!((l.passage.len(), l.option.len(), l.total), (11, 1, 20));
        let l = SegmentLayout::plan(3, 6, 2, 512, false).unwrap();
        assert_eq!((l.question.clone(), l.option.clone()), (4..10, 11..13));
    }

    #[test]
    fn all_options_follow_catalog_order() {
        let (store, params, config, vocab) = model(8, 4);
        let t = triplet();
        let mut swapped = t.clone();
        swapped.options.swap(0, 2);
        let mut g = Graph::new(&store);
        let a = encode_all_options(&mut g, &t, &vocab, &params, &config, false).unwrap();
        let b = encode_all_options(&mut g, &swapped, &vocab, &params, &config, false).unwrap();
        assert_eq!(a.len(), 3);
        assert_eq!(g.value(a[0].passage), g.value(b[2].passage));
        assert_eq!(g.value(a[2].option), g.value(b[0].option));
        assert_eq!(g.value(a[1].passage), g.value(b[1].passage));
    }
}
