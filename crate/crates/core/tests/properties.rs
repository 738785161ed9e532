mod common;

use ndarray::{concatenate, s, Array2, Axis};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use ner_mrc::attention::{attention, uniform, AttentionParams, Linear};
use ner_mrc::catalog::{CatalogEntry, EntityCatalog, SourceKind};
use ner_mrc::corpus::{validate_tags, Tag, TaggedSentence, Token};
use ner_mrc::decoder::decode;
use ner_mrc::graph::{Graph, Mat, ParamStore};
use ner_mrc::head::{overall_loss, predict, HeadParams, PredictionMatrix};
use ner_mrc::metrics::micro_f1;
use ner_mrc::reconstruct::label_matrix;

const TYPES: [&str; 3] = ["LOC", "PER", "ORG"];

fn catalog(n: usize) -> EntityCatalog {
    let entries = TYPES[..n]
        .iter()
        .map(|t| CatalogEntry {
            type_name: t.to_string(),
            option_text: format!("names of {t}"),
        })
        .collect();
    EntityCatalog::new("prop", SourceKind::NameOnly, entries).unwrap()
}

/// Valid IOB2 tags over the first `n_types` types.
fn arb_valid_tags(n_types: usize, max_len: usize) -> impl Strategy<Value = Vec<Tag>> {
    prop::collection::vec((0..=n_types, any::<bool>()), 0..=max_len).prop_map(move |cells| {
        let mut prev: Option<usize> = None;
        cells
            .into_iter()
            .map(|(c, cont)| {
                if c == 0 {
                    prev = None;
                    return Tag::Outside;
                }
                let t = c - 1;
                let tag = if cont && prev == Some(t) {
                    Tag::Inside(TYPES[t].into())
                } else {
                    Tag::Begin(TYPES[t].into())
                };
                prev = Some(t);
                tag
            })
            .collect()
    })
}

fn sentence(tags: &[Tag]) -> TaggedSentence {
    TaggedSentence {
        tokens: tags
            .iter()
            .enumerate()
            .map(|(i, t)| Token {
                surface: format!("w{i}"),
                tag: t.clone(),
            })
            .collect(),
        source_line: 1,
    }
}

fn arb_probs(max_k: usize, max_o: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_k, 1..=max_o).prop_flat_map(|(k, n)| prop::collection::vec(prop::collection::vec(0.0f64..=1.0, n), k))
}

fn strings(tags: &[Tag]) -> Vec<String> {
    tags.iter().map(Tag::to_string).collect()
}

proptest! {
    #[test]
    fn label_matrix_shape_and_perfect_decode(n_types in 1usize..=3, tags in arb_valid_tags(3, 12)) {
        let tags: Vec<Tag> = tags
            .into_iter()
            .map(|t| match t.entity_type() {
                Some(ty) if TYPES.iter().position(|x| *x == ty).unwrap() >= n_types => Tag::Outside,
                _ => t,
            })
            .collect();
        let mut tags = tags;
        ner_mrc::corpus::repair_tags(&mut tags);
        let cat = catalog(n_types);
        let s = sentence(&tags);
        let labels = label_matrix(&s, &cat).unwrap();
        prop_assert_eq!(labels.shape(), (tags.len(), n_types));
        if tags.is_empty() {
            return Ok(());
        }
        let decoded = decode(&PredictionMatrix::perfect(&labels), &cat).unwrap();
        let got: Vec<Option<&str>> = decoded.iter().map(Tag::entity_type).collect();
        let want: Vec<Option<&str>> = tags.iter().map(Tag::entity_type).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn decoder_matches_oracle_on_continuous_inputs(rows in arb_probs(6, 3)) {
        let n = rows[0].len();
        let pred = PredictionMatrix::from_select_probs(&rows).unwrap();
        let got = strings(&decode(&pred, &catalog(n)).unwrap());
        let pairs: Vec<Vec<[f64; 2]>> = rows.iter().map(|r| r.iter().map(|&p| [p, 1.0 - p]).collect()).collect();
        prop_assert_eq!(got, common::algorithm1(&pairs, &TYPES[..n]));
    }

    #[test]
    fn decoder_output_is_valid_iob(rows in arb_probs(8, 3)) {
        let n = rows[0].len();
        let tags = decode(&PredictionMatrix::from_select_probs(&rows).unwrap(), &catalog(n)).unwrap();
        prop_assert!(validate_tags(&tags).is_empty());
    }

    #[test]
    fn raising_a_select_probability_keeps_its_type(
        rows in arb_probs(5, 3),
        cell in any::<prop::sample::Index>(),
        bump in 0.0f64..=1.0,
    ) {
        let n = rows[0].len();
        let flat = cell.index(rows.len() * n);
        let (r, i) = (flat / n, flat % n);
        let cat = catalog(n);
        let before = decode(&PredictionMatrix::from_select_probs(&rows).unwrap(), &cat).unwrap();
        let mut raised = rows.clone();
        raised[r][i] = rows[r][i] + (1.0 - rows[r][i]) * bump;
        let after = decode(&PredictionMatrix::from_select_probs(&raised).unwrap(), &cat).unwrap();
        if before[r].entity_type() == Some(TYPES[i]) {
            prop_assert_eq!(after[r].entity_type(), Some(TYPES[i]));
        }
    }

    #[test]
    fn metric_matches_brute_force(seed in any::<u64>(), n in 1usize..6) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gold = Vec::new();
        let mut pred = Vec::new();
        for _ in 0..n {
            let len = rng.random_range(0..=10);
            gold.push(common::random_tags(&mut rng, len, &TYPES));
            pred.push(common::random_tags(&mut rng, len, &TYPES));
        }
        let parse = |c: &[Vec<String>]| -> Vec<Vec<Tag>> {
            c.iter().map(|s| s.iter().map(|t| Tag::parse(t).unwrap()).collect()).collect()
        };
        let report = micro_f1(&parse(&gold), &parse(&pred), true).unwrap();
        let (p, r, f, tp, fp, fn_) = common::micro_prf(&gold, &pred);
        prop_assert_eq!((report.tp, report.fp, report.fn_), (tp, fp, fn_));
        prop_assert!((report.precision - p).abs() < 1e-12);
        prop_assert!((report.recall - r).abs() < 1e-12);
        prop_assert!((report.f1 - f).abs() < 1e-12);
    }

    #[test]
    fn metric_symmetry_and_sentence_order(
        pairs in prop::collection::vec((arb_valid_tags(3, 8), arb_valid_tags(3, 8)), 1..6),
        rotate in 0usize..6,
    ) {
        let pairs: Vec<(Vec<Tag>, Vec<Tag>)> = pairs
            .into_iter()
            .map(|(mut g, mut p)| {
                let len = g.len().min(p.len());
                g.truncate(len);
                p.truncate(len);
                (g, p)
            })
            .collect();
        let gold: Vec<Vec<Tag>> = pairs.iter().map(|p| p.0.clone()).collect();
        let pred: Vec<Vec<Tag>> = pairs.iter().map(|p| p.1.clone()).collect();
        let a = micro_f1(&gold, &pred, false).unwrap();
        let b = micro_f1(&pred, &gold, false).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);

        let k = rotate % gold.len();
        let (mut g2, mut p2) = (gold.clone(), pred.clone());
        g2.rotate_left(k);
        p2.rotate_left(k);
        let c = micro_f1(&g2, &p2, false).unwrap();
        prop_assert_eq!((c.tp, c.fp, c.fn_), (a.tp, a.fp, a.fn_));
        prop_assert_eq!(c.f1, a.f1);
        prop_assert!((0.0..=1.0).contains(&a.f1));
    }

    #[test]
    fn loss_is_invariant_to_joint_option_permutation(
        seed in any::<u64>(),
        k in 1usize..=5,
        n in 1usize..=5,
        perm_seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = 4;
        let mut store = ParamStore::new();
        let head = HeadParams::init(&mut store, &mut rng, d, n);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).dim();
            *store.get_mut(id) = uniform(&mut rng, shape.0, shape.1, 1.0);
        }
        let states: Vec<Mat> = (0..n).map(|_| uniform(&mut rng, k, d, 1.0)).collect();
        let label_rows: Vec<Vec<u8>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(0..=1)).collect()).collect();
        let labels = ner_mrc::reconstruct::LabelMatrix::from_rows(&label_rows).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let p_states: Vec<Mat> = perm.iter().map(|&i| states[i].clone()).collect();
        let p_head = HeadParams { sub_heads: perm.iter().map(|&i| head.sub_heads[i].clone()).collect() };
        let p_rows: Vec<Vec<u8>> = label_rows.iter().map(|r| perm.iter().map(|&i| r[i]).collect()).collect();
        let p_labels = ner_mrc::reconstruct::LabelMatrix::from_rows(&p_rows).unwrap();

        let a = overall_loss(&predict(&states, &head, &store).unwrap(), &labels).unwrap();
        let b = overall_loss(&predict(&p_states, &p_head, &store).unwrap(), &p_labels).unwrap();
        prop_assert!(a >= 0.0);
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0), "{a} vs {b}");
    }

    #[test]
    fn multi_head_equals_concatenated_single_heads(
        seed in any::<u64>(),
        n_heads in 1usize..=4,
        head_dim in 1usize..=4,
        q_len in 1usize..=5,
        kv_len in 1usize..=5,
    ) {
        let d = 6;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let params = AttentionParams::init(&mut store, &mut rng, "mh", d, n_heads, head_dim);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.get(id).dim();
            *store.get_mut(id) = uniform(&mut rng, shape.0, shape.1, 0.7);
        }
        let qm = uniform(&mut rng, q_len, d, 1.0);
        let kvm = uniform(&mut rng, kv_len, d, 1.0);

        let mut g = Graph::new(&store);
        let (q, kv) = (g.input(qm.clone()), g.input(kvm.clone()));
        let out = attention(&mut g, q, kv, kv, &params).unwrap().output;
        let multi = g.value(out).clone();

        let mut contexts = Vec::new();
        for h in 0..n_heads {
            let cols = s![.., h * head_dim..(h + 1) * head_dim];
            let mut single = ParamStore::new();
            let mut slice = |name: &str, l: &Linear| Linear {
                weight: single.add(format!("{name}.weight"), store.get(l.weight).slice(cols).to_owned()),
                bias: single.add(format!("{name}.bias"), store.get(l.bias).slice(cols).to_owned()),
            };
            let query = slice("q", &params.query);
            let key = slice("k", &params.key);
            let value = slice("v", &params.value);
            let output = Linear {
                weight: single.add("o.weight", Array2::eye(head_dim)),
                bias: single.add("o.bias", Mat::zeros((1, head_dim))),
            };
            let one = AttentionParams { query, key, value, output, n_heads: 1, head_dim };
            let mut g1 = Graph::new(&single);
            let (q1, kv1) = (g1.input(qm.clone()), g1.input(kvm.clone()));
            let o1 = attention(&mut g1, q1, kv1, kv1, &one).unwrap().output;
            contexts.push(g1.value(o1).clone());
        }
        let views: Vec<_> = contexts.iter().map(|c| c.view()).collect();
        let joined = concatenate(Axis(1), &views).unwrap();
        let want = joined.dot(store.get(params.output.weight)) + store.get(params.output.bias);
        let diff = (&multi - &want).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        prop_assert!(diff <= 1e-10, "max diff {diff}");
    }
}
