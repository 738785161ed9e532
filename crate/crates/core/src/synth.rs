//! Seedable templated corpus over a three-type catalog (PER, LOC, ORG).
//!
//! Templates never put two entities of the same type next to each other, so
//! decoding a perfect prediction always recovers the gold spans.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::catalog::{CatalogEntry, EntityCatalog, SourceKind};
use crate::corpus::{Tag, TaggedSentence, Token};

const PERSONS: &[&str] = &[
    "Anna Berg",
    "Marco Rossi",
    "Li Wei",
    "Omar",
    "Sofia Lind",
    "John Smith",
    "Priya Nair",
    "Tomas",
];

const LOCATIONS: &[&str] = &[
    "Paris",
    "New York",
    "Lake Como",
    "Berlin",
    "Cape Town",
    "Oslo",
    "Buenos Aires",
    "Kyoto",
];

const ORGANIZATIONS: &[&str] = &[
    "Acme Corp",
    "United Nations",
    "Red Cross",
    "Globex",
    "Nordic Rail",
    "Blue Harbor Bank",
    "Initech",
    "Orbit Labs",
];

/// Slots are written `{PER}`, `{LOC}`, `{ORG}`.
const TEMPLATES: &[&str] = &[
    "{PER} flew to {LOC} on Monday .",
    "{ORG} opened an office in {LOC} .",
    "{PER} joined {ORG} last year .",
    "The report from {ORG} was read by {PER} .",
    "{PER} met {PER2} in {LOC} .",
    "Yesterday it rained in {LOC} .",
    "Nothing happened today .",
    "{ORG} hired {PER} to lead the team in {LOC} .",
    "A spokesperson for {ORG} said the talks went well .",
    "{PER} visited {LOC} and then {LOC2} .",
    "Shares of {ORG} rose after the news .",
    "We will meet at noon .",
];

pub const PER: &str = "PER";
pub const LOC: &str = "LOC";
pub const ORG: &str = "ORG";

/// Guideline-style catalog for the synthetic corpus.
pub fn catalog() -> EntityCatalog {
    build_catalog(
        SourceKind::AnnotationGuidelines,
        [
            "Names of people ( e.g. Anna Berg ) . Fictional people can be included .",
            "Names that are locations ( e.g. Paris ) such as cities , lakes and countries .",
            "Names of organizations ( e.g. Red Cross ) such as companies , agencies and charities .",
        ],
    )
}

/// The same types described by bare names.
pub fn name_only_catalog() -> EntityCatalog {
    build_catalog(SourceKind::NameOnly, ["Person", "Location", "Organization"])
}

fn build_catalog(kind: SourceKind, texts: [&str; 3]) -> EntityCatalog {
    let entries = [PER, LOC, ORG]
        .iter()
        .zip(texts)
        .map(|(t, text)| CatalogEntry {
            type_name: t.to_string(),
            option_text: text.to_string(),
        })
        .collect();
    EntityCatalog::new("synthetic", kind, entries).expect("static catalog is valid")
}

fn push_entity(tokens: &mut Vec<Token>, name: &str, ty: &str) {
    for (i, w) in name.split_whitespace().enumerate() {
        let tag = if i == 0 {
            Tag::Begin(ty.to_string())
        } else {
            Tag::Inside(ty.to_string())
        };
        tokens.push(Token {
            surface: w.to_string(),
            tag,
        });
    }
}

/// Names are dealt from a shuffled deck per type, so every name appears once
/// before any repeats. Small training splits then cover the whole lexicon.
struct Deck {
    pool: &'static [&'static str],
    cards: Vec<&'static str>,
}

impl Deck {
    fn new(pool: &'static [&'static str]) -> Self {
        Deck { pool, cards: Vec::new() }
    }

    fn deal(&mut self, rng: &mut ChaCha8Rng, avoid: Option<&str>) -> &'static str {
        if self.cards.is_empty() || (self.cards.len() == 1 && Some(self.cards[0]) == avoid) {
            let mut fresh = self.pool.to_vec();
            fresh.shuffle(rng);
            self.cards.splice(0..0, fresh);
        }
        let mut i = self.cards.len() - 1;
        if Some(self.cards[i]) == avoid {
            i -= 1;
        }
        self.cards.remove(i)
    }
}

/// `n` sentences drawn from the templates with a fixed seed.
pub fn generate(n: usize, seed: u64) -> Vec<TaggedSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut decks = [Deck::new(PERSONS), Deck::new(LOCATIONS), Deck::new(ORGANIZATIONS)];
    (0..n)
        .map(|_| {
            let template = TEMPLATES.choose(&mut rng).expect("templates");
            let mut tokens = Vec::new();
            let mut last: [Option<&str>; 3] = [None; 3];
            for word in template.split_whitespace() {
                let (ty, slot) = match word {
                    "{PER}" | "{PER2}" => (PER, 0),
                    "{LOC}" | "{LOC2}" => (LOC, 1),
                    "{ORG}" => (ORG, 2),
                    _ => {
                        tokens.push(Token {
                            surface: word.to_string(),
                            tag: Tag::Outside,
                        });
                        continue;
                    }
                };
                let name = decks[slot].deal(&mut rng, last[slot]);
                last[slot] = Some(name);
                push_entity(&mut tokens, name, ty);
            }
            TaggedSentence {
                tokens,
                source_line: 0,
            }
        })
        .collect()
}

/// Seed offsets keep the three splits on independent streams.
pub struct SyntheticCorpus {
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
}

pub fn corpus(n_train: usize, n_dev: usize, n_test: usize, seed: u64) -> SyntheticCorpus {
    SyntheticCorpus {
        train: generate(n_train, seed),
        dev: generate(n_dev, seed.wrapping_add(1_000_003)),
        test: generate(n_test, seed.wrapping_add(2_000_006)),
    }
}
