mod common;

use std::collections::BTreeMap;

use abintent_core::annotation::first_to;
use abintent_core::bootstrap::{apply_cap, merge, LabelSource, LabelState, RoundCap};
use abintent_core::corpus::{clean_text, collapse_repeats, segment_document, tokenize, CleanDocument, RawDocument, Source};
use abintent_core::embedding::{expand_desire_verbs, ConeConfig, EmbeddingTable};
use abintent_core::ngram::{ngram_round, score_ngrams, select_predictive, NgramConfig, NgramIndex, NgramLearnerConfig, Proposal};
use abintent_core::scoring::document_score;
use abintent_core::sequence::amplify;
use proptest::prelude::*;

fn forum_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-zA-Z]{1,8}",
        Just(" ".to_string()),
        Just("oooooo".to_string()),
        "#[A-Z][a-z]{1,5}[A-Z][a-z]{1,5}",
        "@[a-z_0-9]{1,6}",
        Just("<i>".to_string()),
        Just("</i>".to_string()),
        Just("&amp;".to_string()),
        Just("\n".to_string()),
        "[.!?;,]{1,3}",
        "[\u{80}-\u{2FF}]{1,2}",
    ];
    prop::collection::vec(piece, 0..30).prop_map(|v| v.concat())
}

fn corpus() -> impl Strategy<Value = (Vec<String>, Vec<f64>)> {
    let text = prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d", "e"]), 1..7).prop_map(|w| w.join(" "));
    let label = prop::sample::select(vec![0.0, 1.0, 0.5, 0.2, 0.9]);
    prop::collection::vec((text, label), 2..50).prop_map(|mut rows| {
        rows[0].1 = 1.0;
        rows[1].1 = 0.0;
        rows.into_iter().unzip()
    })
}

fn segments(texts: &[String]) -> Vec<abintent_core::corpus::Segment> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| common::segment(&format!("s{i}"), "d", i, t))
        .collect()
}

type Row = (bool, Option<bool>, Option<bool>, f64);

proptest! {
    #[test]
    fn cleaning_is_idempotent(text in forum_text(), markup in any::<bool>()) {
        let once = clean_text(&text, markup);
        prop_assert_eq!(clean_text(&once, markup), once);
    }

    #[test]
    fn cleaned_text_is_plain_single_spaced_ascii(text in forum_text(), markup in any::<bool>()) {
        let c = clean_text(&text, markup);
        prop_assert!(c.chars().all(|ch| (' '..='~').contains(&ch)));
        prop_assert!(!c.contains("  "));
        prop_assert_eq!(c.trim(), c.as_str());
        let chars: Vec<char> = c.chars().collect();
        prop_assert!(chars.windows(3).all(|w| !(w[0] == w[1] && w[1] == w[2])));
    }

    #[test]
    fn collapse_keeps_at_most_max(text in "[ab ]{0,40}", max in 1usize..4) {
        let c = collapse_repeats(&text, max);
        let chars: Vec<char> = c.chars().collect();
        prop_assert!(chars.windows(max + 1).all(|w| w.iter().any(|&x| x != w[0])));
        prop_assert_eq!(collapse_repeats(&c, max), c.clone());
        let dedup = |s: &str| { let mut v: Vec<char> = s.chars().collect(); v.dedup(); v };
        prop_assert_eq!(dedup(&c), dedup(&text));
    }

    #[test]
    fn segments_partition_the_cleaned_words(text in forum_text()) {
        let doc = CleanDocument::from_raw(&RawDocument { doc_id: "d".into(), source: Source::Stormfront, text, markup: false });
        let segs = segment_document(&doc);
        let lowered = doc.cleaned_text.to_lowercase();
        let from_doc: Vec<&str> = tokenize(&lowered);
        let from_segs: Vec<String> = segs.iter().flat_map(|s| tokenize(&s.text).into_iter().map(str::to_string).collect::<Vec<_>>()).collect();
        prop_assert_eq!(from_doc, from_segs);
        for (i, s) in segs.iter().enumerate() {
            prop_assert_eq!(s.index_in_doc, i);
            prop_assert!(!s.text.is_empty());
            prop_assert!(!s.text.contains(['.', '!', '?', ';']));
        }
    }

    #[test]
    fn rates_match_the_definition((texts, labels) in corpus(), n_max in 1usize..4, smooth in prop::option::of(0.0f64..1.0)) {
        let index = NgramIndex::build(&segments(&texts), NgramConfig { n_min: 1, n_max, cap: 1_000_000 }).unwrap();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let want = common::brute_rates(&refs, &labels, 1, n_max, smooth);
        let got: BTreeMap<String, f64> = score_ngrams(&index, &labels, smooth).unwrap().into_iter().map(|s| (s.gram, s.intent_rate)).collect();
        prop_assert_eq!(got.len(), want.len());
        for (g, r) in &got {
            let w = want[g];
            prop_assert!(r == &w || (r - w).abs() <= 1e-12 * w.abs(), "{}: {} vs {}", g, r, w);
        }
    }

    #[test]
    fn proposals_match_brute_force((texts, labels) in corpus(), percentile in 50.0f64..100.0) {
        let index = NgramIndex::build(&segments(&texts), NgramConfig { n_min: 1, n_max: 2, cap: 1_000_000 }).unwrap();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let rates = common::brute_rates(&refs, &labels, 1, 2, None);
        let (up, down) = common::brute_selection(&rates, percentile);
        let cfg = NgramLearnerConfig { percentile, smoothing: None };
        let (proposals, _) = ngram_round(&index, &labels, &cfg).unwrap();
        let got: BTreeMap<usize, f64> = proposals.iter().map(|p| (p.segment, p.value)).collect();
        prop_assert_eq!(got, common::brute_proposals(&refs, 1, 2, &up, &down));
    }

    #[test]
    fn selection_tails_hold_the_extremes((texts, labels) in corpus(), percentile in 50.0f64..100.0) {
        let index = NgramIndex::build(&segments(&texts), NgramConfig { n_min: 1, n_max: 2, cap: 1_000_000 }).unwrap();
        let mut scores = score_ngrams(&index, &labels, None).unwrap();
        let sel = select_predictive(&mut scores, percentile).unwrap();
        if let Some(t) = sel.upper_threshold {
            for (i, s) in scores.iter().enumerate() {
                prop_assert_eq!(sel.intentful.contains(&i), s.intent_rate >= t);
            }
        } else {
            prop_assert!(sel.intentful.is_empty());
        }
        if let Some(t) = sel.lower_threshold {
            for (i, s) in scores.iter().enumerate() {
                prop_assert_eq!(sel.non_intentful.contains(&i), s.intent_rate <= t);
            }
        }
    }

    #[test]
    fn swapped_labels_invert_unsmoothed_rates((texts, labels) in corpus()) {
        let index = NgramIndex::build(&segments(&texts), NgramConfig { n_min: 1, n_max: 2, cap: 1_000_000 }).unwrap();
        let swapped: Vec<f64> = labels.iter().map(|l| 1.0 - l).collect();
        let a = score_ngrams(&index, &labels, Some(0.0)).unwrap();
        let b = score_ngrams(&index, &swapped, Some(0.0)).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert_eq!(&x.gram, &y.gram);
            let r = x.intent_rate;
            if r.is_finite() && r > 0.0 {
                prop_assert!((y.intent_rate * r - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn amplify_stays_in_range_and_on_its_side(p in 0.0f64..=1.0, t in 0.51f64..=1.0, f in 0.0f64..=1.0) {
        let a = amplify(p, t, f);
        prop_assert!((0.0..=1.0).contains(&a));
        if p >= t { prop_assert!(a >= p); }
        else if p <= 1.0 - t { prop_assert!(a <= p); }
        else { prop_assert_eq!(a, p); }
    }

    #[test]
    fn cap_respects_counts_and_locks(
        rows in prop::collection::vec((any::<bool>(), any::<bool>(), 0.0f64..1.0), 1..60),
        n_p in 0usize..20,
        n_n in 0usize..20,
    ) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("s{i}")).collect();
        let locked: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let values: Vec<f64> = locked.iter().map(|&l| if l { 1.0 } else { 0.5 }).collect();
        let state = LabelState::from_values(ids, &values, &locked);
        let proposals: Vec<Proposal> = rows.iter().enumerate().map(|(i, r)| Proposal {
            segment: i, value: if r.1 { 1.0 } else { 0.0 }, confidence: r.2,
        }).collect();
        let out = apply_cap(&proposals, &state, RoundCap { n_p, n_n });
        prop_assert!(out.passed.iter().filter(|p| p.value == 1.0).count() <= n_p);
        prop_assert!(out.passed.iter().filter(|p| p.value == 0.0).count() <= n_n);
        prop_assert!(out.passed.iter().all(|p| !locked[p.segment]));
        prop_assert_eq!(out.passed.len() + out.dropped_locked + out.dropped_over_cap, proposals.len());
    }

    #[test]
    fn merge_never_moves_locked_or_contradicted(
        rows in prop::collection::vec((any::<bool>(), prop::option::of(any::<bool>()), prop::option::of(any::<bool>()), 0.0f64..1.0), 1..40),
    ) {
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("s{i}")).collect();
        let locked: Vec<bool> = rows.iter().map(|r| r.0).collect();
        let values: Vec<f64> = rows.iter().map(|r| if r.0 { 0.0 } else { 0.4 }).collect();
        let mut state = LabelState::from_values(ids, &values, &locked);
        let to_props = |pick: &dyn Fn(&Row) -> Option<bool>| -> Vec<Proposal> {
            rows.iter().enumerate().filter_map(|(i, r)| pick(r).map(|v| Proposal { segment: i, value: if v { 1.0 } else { 0.0 }, confidence: 1.0 })).collect()
        };
        let a = to_props(&|r| r.1);
        let b = to_props(&|r| r.2);
        let scores: Vec<f64> = rows.iter().map(|r| r.3).collect();
        let out = merge((&a, LabelSource::Ngram), (&b, LabelSource::Deep), Some(&scores), &mut state, 1);
        for (i, r) in rows.iter().enumerate() {
            let e = &state.entries[i];
            if r.0 {
                prop_assert!(e.locked && e.value == 0.0);
                continue;
            }
            match (r.1, r.2) {
                (Some(x), Some(y)) if x != y => {
                    prop_assert!(out.contradicted.contains(&i));
                    prop_assert!(!e.locked && e.value == 0.4);
                }
                (Some(x), _) | (None, Some(x)) => {
                    let v = if x { 1.0 } else { 0.0 };
                    prop_assert!(e.locked && e.value == v);
                }
                (None, None) => prop_assert!(!e.locked && e.value == r.3),
            }
        }
    }

    #[test]
    fn document_score_is_the_best_window(ai in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..12)) {
        let (a, i): (Vec<f64>, Vec<f64>) = ai.into_iter().unzip();
        let d = document_score("d", &a, &i, 3).unwrap();
        prop_assert_eq!(d.doc_score, common::window_oracle(&a, &i));
        let best_single = a.iter().zip(&i).map(|(x, y)| x * y).fold(0.0, f64::max);
        prop_assert!(d.doc_score >= best_single);
    }

    #[test]
    fn first_to_three_matches_prefix_replay(votes in prop::collection::vec(any::<bool>(), 0..9)) {
        prop_assert_eq!(first_to(&votes, 3), common::first_to_3_oracle(&votes));
    }

    #[test]
    fn cone_grows_with_the_multiplier(
        points in prop::collection::vec(prop::collection::vec(-2.0f32..2.0, 3), 8..40),
        m1 in 0.1f64..3.0,
        extra in 0.0f64..2.0,
    ) {
        let words: Vec<String> = (0..points.len()).map(|i| format!("w{i}")).collect();
        let table = EmbeddingTable::from_pairs(3, words.iter().map(String::as_str).zip(points.iter().cloned())).unwrap();
        let seeds: Vec<String> = words[..3].to_vec();
        let at = |m: f64| expand_desire_verbs(&ConeConfig { seeds: seeds.clone(), distance_multiplier: m, ..ConeConfig::default() }, &table, |_| true).unwrap();
        let small = at(m1);
        let large = at(m1 + extra);
        prop_assert!(small.is_subset(&large));
        let vectors: BTreeMap<String, Vec<f32>> = words.iter().cloned().zip(points.iter().cloned()).collect();
        prop_assert_eq!(small, common::cone_oracle(&vectors, &seeds, m1));
    }
}
