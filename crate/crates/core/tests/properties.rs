//! Property tests for corpus handling and model invariants.

mod common;

use nerloop_core::corpus::{
    apply_subtoken_rule, map_labels, parse_corpus, write_corpus, CorpusFormat, LabelScheme, MappingRule, SubwordSplitter, Tag,
};
use nerloop_core::query::{build_similarity, score_id};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const WORDS: [&str; 8] = ["fever", "aspirin", "x", "oral", "bid", "headache", "ab", "cd"];

fn splitter() -> SubwordSplitter {
    SubwordSplitter::new(["fe", "##ver", "as", "##pir", "##in", "head", "##ache", "a", "##b"])
}

/// Word/tag pairs with well-formed BIO over the given entity names.
fn tagged(entities: &'static [&'static str]) -> impl Strategy<Value = Vec<(&'static str, Tag)>> {
    prop::collection::vec((0..WORDS.len(), 0..3usize, 0..entities.len()), 1..10).prop_map(move |raw| {
        let mut out: Vec<(&str, Tag)> = Vec::new();
        for (w, kind, e) in raw {
            let ent = entities[e].to_string();
            let tag = match kind {
                0 => Tag::Outside,
                1 => Tag::Begin(ent),
                _ => match out.last().and_then(|(_, t)| t.entity().map(str::to_string)) {
                    Some(prev) if prev == ent => Tag::Inside(ent),
                    _ => Tag::Begin(ent),
                },
            };
            out.push((WORDS[w], tag));
        }
        out
    })
}

proptest! {
    #[test]
    fn corpus_files_round_trip(pairs in tagged(&["Drug", "Route", "Diagnosis"])) {
        let seq = apply_subtoken_rule("r1", &pairs, &splitter()).unwrap();
        let scheme = LabelScheme::joint();
        for format in [CorpusFormat::Subtoken, CorpusFormat::Word] {
            let text = write_corpus(std::slice::from_ref(&seq), format);
            let back = parse_corpus(&text, format, &scheme, &splitter(), "r").unwrap();
            prop_assert_eq!(&back, &vec![seq.clone()]);
            prop_assert_eq!(write_corpus(&back, format), text);
        }
    }

    #[test]
    fn label_mapping_is_idempotent(pairs in tagged(&["Procedure", "Disorder", "Anatomy", "Chemical", "Drug"])) {
        let scheme = LabelScheme::joint().with_mapping(LabelScheme::muchmore_rules()).unwrap();
        let seq = apply_subtoken_rule("m1", &pairs, &SubwordSplitter::identity()).unwrap();
        let once = map_labels(&seq, &scheme).unwrap();
        let twice = map_labels(&once, &scheme).unwrap();
        prop_assert_eq!(&once, &twice);
        for t in once.gold_tags().unwrap() {
            prop_assert!(t.entity().is_none_or(|e| scheme.entity_index(e).is_some()));
        }
    }

    #[test]
    fn dropped_labels_become_outside(pairs in tagged(&["ADE", "Reason"])) {
        let scheme = LabelScheme::joint().with_mapping(vec![MappingRule::new("ADE", "DROP"), MappingRule::new("Reason", "DROP")]).unwrap();
        let seq = apply_subtoken_rule("d1", &pairs, &SubwordSplitter::identity()).unwrap();
        let mapped = map_labels(&seq, &scheme).unwrap();
        prop_assert!(mapped.word_tags().unwrap().iter().all(|t| *t == Tag::Outside));
    }

    #[test]
    fn marginals_normalize_and_paths_respect_constraints(seed in any::<u64>(), len in 1usize..12, scale in 0.0f64..8.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 3, true, scale);
        let seq = common::random_sentence(&mut rng, "p", len);
        for row in model.token_marginals(&seq).unwrap() {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(row.iter().all(|p| (0.0..=1.0 + 1e-12).contains(p)));
        }
        let pred = model.viterbi_decode(&seq).unwrap();
        prop_assert!(pred.path_log_prob <= 1e-12);
        prop_assert!(seq.with_word_tags(&pred.best_path).is_ok(), "ill-formed path {:?}", pred.best_path);
        prop_assert!(model.stochastic_predict(&seq, 3, seed).iter().all(|p| seq.with_word_tags(p).is_ok()));
    }

    #[test]
    fn id_scaling_preserves_ranking(seed in any::<u64>(), c in 0.001f64..1000.0, beta in 0.0f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = common::random_model(&mut rng, 2, true, 1.0);
        let pool: Vec<_> = (0..12).map(|i| common::random_sentence(&mut rng, &format!("q{i:02}"), 2 + i % 4)).collect();
        let sim = build_similarity(&pool, beta);
        let scaled = sim.scaled(c);
        let rank = |m| {
            let mut s: Vec<_> = pool.iter().map(|p| score_id(&model, p, m).unwrap()).collect();
            s.sort_by(nerloop_core::query::rank_order);
            s.into_iter().map(|q| q.instance_id).collect::<Vec<_>>()
        };
        prop_assert_eq!(rank(&sim), rank(&scaled));
    }

    #[test]
    fn similarity_is_symmetric_with_unit_diagonal(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pool: Vec<_> = (0..10).map(|i| common::random_sentence(&mut rng, &format!("q{i}"), 1 + i % 5)).collect();
        let sim = build_similarity(&pool, 1.0);
        for a in &pool {
            prop_assert!((sim.get(a.id(), a.id()).unwrap() - 1.0).abs() < 1e-9);
            for b in &pool {
                let v = sim.get(a.id(), b.id()).unwrap();
                prop_assert!((v - sim.get(b.id(), a.id()).unwrap()).abs() < 1e-9);
                prop_assert!((-1.0 - 1e-9..=1.0 + 1e-9).contains(&v));
            }
        }
    }
}
