mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use common::*;
use retrace_core::annotate::{consolidate, export_timeline, parse_annotations, Annotation, AnnotationBody, ConsolidationConfig, TimelineFormat};
use retrace_core::artifacts::{sanitize_symbol, Addr, BinaryArtifactMap, Stoplist, SymbolIndex};
use retrace_core::codec::{apply_patches, diff_frames};
use retrace_core::evaluate::{stratified_sample, SamplePool};
use retrace_core::input::aggregate_keystrokes;
use retrace_core::matchers::{levenshtein, match_function, similarity_score, MatchConfig};
use retrace_core::ocr::OcrFrame;
use retrace_core::session::Timestamp;

fn short_text() -> impl Strategy<Value = String> {
    "[abc01Olé_ ]{0,12}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn levenshtein_matches_table_oracle(a in short_text(), b in short_text()) {
        prop_assert_eq!(levenshtein(&a, &b), oracle_levenshtein(&a, &b));
        prop_assert_eq!(similarity_score(&a, &b), oracle_similarity(&a, &b));
    }

    #[test]
    fn levenshtein_is_a_metric(a in short_text(), b in short_text(), c in short_text()) {
        let (ab, bc, ac) = (levenshtein(&a, &b), levenshtein(&b, &c), levenshtein(&a, &c));
        prop_assert_eq!(ab == 0, a == b);
        prop_assert_eq!(ab, levenshtein(&b, &a));
        prop_assert!(ac <= ab + bc);
    }

    #[test]
    fn perfect_score_only_for_equal(a in "[a-z0-9_]{0,300}", b in "[a-z0-9_]{0,300}") {
        prop_assert_eq!(similarity_score(&a, &b) == 100, a == b);
        let mut c = a.clone();
        c.push('x');
        prop_assert!(similarity_score(&a, &c) < 100);
    }

    #[test]
    fn sanitize_is_idempotent(raw in "[ \\[\\]()*:,.A-Za-z0-9_@$?]{0,24}") {
        let once = sanitize_symbol(&raw);
        prop_assert_eq!(sanitize_symbol(&once), once.clone());
        prop_assert_eq!(once.to_lowercase(), once);
    }

    #[test]
    fn codec_round_trip(seed in any::<u64>(), w in 1u32..40, h in 1u32..30) {
        let mut r = rng(seed);
        let a = random_image(&mut r, w, h);
        let b = mutate_image(&mut r, &a);
        let patches = diff_frames(&a, &b).unwrap();
        prop_assert_eq!(apply_patches(&a, &patches).unwrap(), b);
    }

    #[test]
    fn keystrokes_match_stack_simulator(seed in any::<u64>(), len in 0usize..80, gap in prop::sample::select(vec![0u64, 300, 2000, 5000])) {
        let ops = random_key_ops(&mut rng(seed), len);
        let events: Vec<_> = ops.iter().map(|(t, op)| op.event(*t)).collect();
        let got: Vec<(String, u64, u64)> = aggregate_keystrokes(&events, gap)
            .into_iter()
            .map(|w| (w.text, w.t_start.0, w.t_end.0))
            .collect();
        prop_assert_eq!(got, oracle_words(&ops, gap));
    }

    #[test]
    fn typed_words_never_span_a_long_pause(seed in any::<u64>(), len in 0usize..80) {
        let ops = random_key_ops(&mut rng(seed), len);
        let events: Vec<_> = ops.iter().map(|(t, op)| op.event(*t)).collect();
        for w in aggregate_keystrokes(&events, 2000) {
            let inside: Vec<u64> = events
                .iter()
                .filter(|e| e.t >= w.t_start && e.t <= w.t_end && matches!(e.kind, retrace_core::session::EventKind::Keystroke { .. }))
                .map(|e| e.t.0)
                .collect();
            prop_assert!(inside.windows(2).all(|p| p[1] - p[0] <= 2000) || inside.len() < 2);
            prop_assert!(!w.text.is_empty() && w.t_start <= w.t_end);
        }
    }

    #[test]
    fn consolidation_is_monotone_and_disjoint(
        labels in prop::collection::vec(prop::option::weighted(0.7, 0u64..4), 0..60),
        steps in prop::collection::vec(1u64..4000, 60),
        min_interval in prop::sample::select(vec![0u64, 1000, 5000]),
        g1 in 0u64..20_000,
        g2 in 0u64..20_000,
    ) {
        let mut t = 0;
        let samples: Vec<(Timestamp, Option<Addr>)> = labels
            .iter()
            .zip(&steps)
            .map(|(l, s)| {
                t += s;
                (Timestamp(t), l.map(Addr))
            })
            .collect();
        let (lo, hi) = (g1.min(g2), g1.max(g2));
        let count = |gap| consolidate(&samples, &ConsolidationConfig { min_interval_ms: min_interval, max_gap_ms: gap });
        let (a, b) = (count(lo), count(hi));
        prop_assert!(b.len() <= a.len());
        for iv in a.iter().chain(&b) {
            prop_assert!(iv.t_start <= iv.t_end);
        }
        for w in a.windows(2).chain(b.windows(2)) {
            prop_assert!(w[0].t_end < w[1].t_start);
        }
    }

    #[test]
    fn zero_thresholds_keep_every_run(labels in prop::collection::vec(prop::option::of(0u64..3), 0..50)) {
        let samples: Vec<(Timestamp, Option<Addr>)> =
            labels.iter().enumerate().map(|(i, l)| (Timestamp(1000 * i as u64), l.map(Addr))).collect();
        let mut runs = 0;
        for (i, l) in labels.iter().enumerate() {
            if l.is_some() && (i == 0 || labels[i - 1] != *l) {
                runs += 1;
            }
        }
        let cfg = ConsolidationConfig { min_interval_ms: 0, max_gap_ms: 0 };
        prop_assert_eq!(consolidate(&samples, &cfg).len(), runs);
    }

    #[test]
    fn sampling_ignores_pool_order(seed in any::<u64>(), n in 1usize..6, rotate in 0usize..4) {
        let pools: Vec<SamplePool> = (0..4)
            .map(|i| SamplePool {
                session_id: format!("s{i}"),
                subject: format!("subject-{}", i % 2),
                frame_count: 5 + i,
            })
            .collect();
        let mut rotated = pools.clone();
        rotated.rotate_left(rotate);
        let excluded: BTreeSet<(String, usize)> = [("s1".to_string(), 0)].into();
        let a = stratified_sample(&pools, n, seed, &excluded).unwrap();
        prop_assert_eq!(&a, &stratified_sample(&rotated, n, seed, &excluded).unwrap());
        prop_assert_eq!(a.len(), 2 * n);
        prop_assert!(!a.iter().any(|e| e.session_id == "s1" && e.frame_index == 0));
    }

    #[test]
    fn token_order_never_changes_the_label(seed in any::<u64>(), kind in 0u32..3) {
        let map = corpus_map();
        let index = SymbolIndex::build(&map, &Stoplist::default());
        let mut r = rng(seed);
        let (_, tokens) = corpus_frame(&mut r, &map, kind);
        let mut reversed = tokens.clone();
        reversed.reverse();
        let cfg = MatchConfig::default();
        let a = match_function(&OcrFrame { frame_index: 0, tokens, backend_id: String::new(), config_fingerprint: String::new() }, &index, &cfg);
        let b = match_function(&OcrFrame { frame_index: 0, tokens: reversed, backend_id: String::new(), config_fingerprint: String::new() }, &index, &cfg);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn timeline_jsonl_round_trips(entries in prop::collection::vec((0u64..1_000_000, 0u64..50_000, 0u64..8, "[a-z ]{0,8}"), 0..20)) {
        let annotations: Vec<Annotation> = entries
            .iter()
            .enumerate()
            .map(|(i, (t, len, f, text))| {
                let body = if i % 2 == 0 {
                    AnnotationBody::FunctionView { entry: Addr(0x1000 + f), display_name: format!("FUN_{f}") }
                } else {
                    AnnotationBody::Comment { text: text.clone() }
                };
                let mut a = Annotation::auto("s", body, Timestamp(*t), (i % 2 == 0).then(|| Timestamp(t + len)));
                a.assign_id(&i.to_string());
                a
            })
            .collect();
        let first = export_timeline(&annotations, TimelineFormat::Jsonl).unwrap();
        let again = export_timeline(&parse_annotations(&first, "export").unwrap(), TimelineFormat::Jsonl).unwrap();
        prop_assert_eq!(first, again);
    }
}

#[test]
fn index_keys_resolve_to_the_function_that_renders_them() {
    let map: BinaryArtifactMap = corpus_map();
    let stop = Stoplist::default();
    let index = SymbolIndex::build(&map, &stop);
    assert!(!index.symbol_to_function().is_empty());
    for (sym, entry) in index.symbol_to_function() {
        assert!(!stop.contains(sym));
        let owners: BTreeSet<Addr> = map
            .functions
            .iter()
            .filter(|f| {
                retrace_core::artifacts::symbols_in(&f.name).any(|s| &s == sym)
                    || f.blocks.iter().flat_map(|b| &b.text_lines).any(|l| retrace_core::artifacts::symbols_in(l).any(|s| &s == sym))
            })
            .map(|f| f.entry_address)
            .collect();
        assert_eq!(owners, BTreeSet::from([*entry]), "{sym}");
    }
}
