//! Cross-module invariants, mostly driven by proptest.

use proptest::prelude::*;

use ier_core::annot::{filter_executable, parse_line, serialize};
use ier_core::bio::{decode, encode_innermost, encode_nested};
use ier_core::eval::{krippendorff_alpha, RatingsMatrix};
use ier_core::features::{embed_mean, tokenize, EmbeddingTable};
use ier_core::model::Token;
use ier_core::synth::{generate, SynthConfig};

proptest! {
    /// Arbitrary byte noise never panics the parser: it yields either an
    /// utterance or a single parse error.
    #[test]
    fn parse_line_is_total(input in ".*") {
        let _ = parse_line(&input);
    }

    /// Likewise for bracket-and-colon-heavy strings, which exercise the
    /// grammar corners far more often than uniform noise.
    #[test]
    fn parse_line_is_total_on_bracket_soup(tokens in proptest::collection::vec(
        prop_oneof![
            Just("[".to_string()),
            Just("]".to_string()),
            Just(":".to_string()),
            Just("[IER".to_string()),
            Just("[ACTION-CROP".to_string()),
            Just("[LOCATION".to_string()),
            "[a-z]{1,6}".prop_map(|s| s),
        ],
        0..24,
    )) {
        let _ = parse_line(&tokens.join(" "));
    }

    /// Every generated utterance survives a serialize/parse round trip.
    #[test]
    fn synth_round_trips(seed in 0u64..1000) {
        let corpus = generate(&SynthConfig::default(), 3, seed);
        for utt in &corpus.utterances {
            let line = serialize(utt);
            let parsed = parse_line(&line).expect("generated line must parse");
            prop_assert!(parsed.structural_eq(utt));
        }
    }

    /// Tokenization is idempotent on its own space-joined output.
    #[test]
    fn tokenize_idempotent(text in ".{0,60}") {
        let once: Vec<String> = tokenize(&text).into_iter().map(|t| t.text).collect();
        let again: Vec<String> = tokenize(&once.join(" ")).into_iter().map(|t| t.text).collect();
        prop_assert_eq!(once, again);
    }

    /// Mean pooling does not depend on token order.
    #[test]
    fn embed_mean_is_permutation_invariant(perm_seed in 0u64..100) {
        let table = EmbeddingTable::load(std::io::Cursor::new(
            "a 1 0 2\nb 0 1 -1\nc 3 3 3\nd -1 0.5 0\n",
        )).unwrap();
        let words = ["a", "b", "c", "d", "oov", "b"];
        let tokens: Vec<Token> =
            words.iter().enumerate().map(|(i, w)| Token::new(*w, i)).collect();
        let base = embed_mean(&tokens, &table);
        // rotate by the seed for a cheap permutation
        let k = (perm_seed as usize) % words.len();
        let rotated: Vec<Token> = words
            .iter()
            .cycle()
            .skip(k)
            .take(words.len())
            .enumerate()
            .map(|(i, w)| Token::new(*w, i))
            .collect();
        let permuted = embed_mean(&rotated, &table);
        for (x, y) in base.iter().zip(&permuted) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    /// Flattened tags decode to exactly the tree's spans when nothing nests,
    /// never overlap, and never produce empty spans.
    #[test]
    fn bio_codec_invariants(seed in 0u64..500) {
        // flat trees only
        let cfg = SynthConfig { nesting_rate: 0.0, ..SynthConfig::default() };
        let corpus = generate(&cfg, 4, seed);
        for utt in &corpus.utterances {
            let tags = encode_innermost(utt);
            prop_assert_eq!(tags.len(), utt.tokens.len());
            let spans = decode(&tags);
            // adjacent same-label entities would merge under flattening, but
            // the generator separates entities with O tokens, so equality
            // with the tree spans holds
            prop_assert_eq!(&spans, &utt.entity_spans());
            for w in spans.windows(2) {
                prop_assert!(w[0].end <= w[1].start, "overlap: {:?}", w);
            }
            for s in &spans {
                prop_assert!(s.start < s.end);
            }
            // nested encoding with depth 1 equals innermost
            prop_assert_eq!(encode_nested(utt, 1), tags);
        }
    }

    /// With nesting on, depth-1 nested encoding still equals innermost.
    #[test]
    fn nested_depth_one_is_innermost(seed in 0u64..300) {
        let cfg = SynthConfig { nesting_rate: 0.5, ..SynthConfig::default() };
        let corpus = generate(&cfg, 4, seed);
        for utt in &corpus.utterances {
            prop_assert_eq!(encode_nested(utt, 1), encode_innermost(utt));
        }
    }

    /// The executable filter is idempotent on arbitrary synthetic corpora.
    #[test]
    fn filter_is_idempotent(seed in 0u64..200) {
        let cfg = SynthConfig { comment_rate: 0.3, ..SynthConfig::default() };
        let corpus = generate(&cfg, 20, seed);
        let (once, _) = filter_executable(&corpus);
        let (twice, counts) = filter_executable(&once);
        prop_assert_eq!(once.utterances, twice.utterances);
        prop_assert_eq!(counts.total(), 0);
    }

    /// Reordering the evaluated instances leaves every metric unchanged.
    #[test]
    fn metrics_are_order_invariant(rotation in 1usize..7) {
        use ier_core::eval::{classification_report, span_f1};
        use ier_core::model::{EntityLabel, Span};

        let gold: Vec<String> = ["a", "b", "a", "c", "b", "a", "c"].iter().map(|s| s.to_string()).collect();
        let pred: Vec<String> = ["a", "c", "a", "c", "b", "b", "a"].iter().map(|s| s.to_string()).collect();
        let labels: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let rotate = |v: &[String]| -> Vec<String> {
            v.iter().cycle().skip(rotation % v.len()).take(v.len()).cloned().collect()
        };
        let base = classification_report(&gold, &pred, &labels).unwrap();
        let rotated = classification_report(&rotate(&gold), &rotate(&pred), &labels).unwrap();
        prop_assert_eq!(base, rotated);

        let g = vec![
            vec![Span::new(EntityLabel::Location, 0, 2)],
            vec![Span::new(EntityLabel::Object, 1, 2), Span::new(EntityLabel::Value, 3, 4)],
            vec![],
        ];
        let p = vec![
            vec![Span::new(EntityLabel::Location, 0, 2)],
            vec![Span::new(EntityLabel::Object, 1, 3)],
            vec![Span::new(EntityLabel::Intent, 0, 1)],
        ];
        let k = rotation % g.len();
        let rot = |v: &[Vec<Span>]| -> Vec<Vec<Span>> {
            v.iter().cycle().skip(k).take(v.len()).cloned().collect()
        };
        let base = span_f1(&g, &p).unwrap();
        let rotated = span_f1(&rot(&g), &rot(&p)).unwrap();
        prop_assert_eq!(base, rotated);
    }

    /// Alpha is invariant under bijective renaming of the categories.
    #[test]
    fn alpha_is_relabel_invariant(rows in proptest::collection::vec(
        proptest::collection::vec(proptest::option::of(0usize..4), 3),
        2..12,
    )) {
        let name = |c: usize| ["a", "b", "c", "d"][c].to_string();
        let renamed = |c: usize| ["x9", "w7", "z8", "y6"][c].to_string();
        let build = |f: &dyn Fn(usize) -> String| RatingsMatrix::new(
            vec!["r1".into(), "r2".into(), "r3".into()],
            rows.iter()
                .map(|r| r.iter().map(|v| v.map(f)).collect())
                .collect(),
        );
        let original = krippendorff_alpha(&build(&name));
        let relabeled = krippendorff_alpha(&build(&renamed));
        match (original, relabeled) {
            (Ok(a), Ok(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (Err(_), Err(_)) => {}
            (a, b) => prop_assert!(false, "one defined, one not: {a:?} vs {b:?}"),
        }
    }
}
