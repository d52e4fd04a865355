//! Property tests over the segmentation and labeling invariants.

use proptest::prelude::*;

use myanner::corpus::{
    convert_scheme, evaluate, labels_to_spans, read_conll, spans_to_labels, validate_labels,
    write_conll, EntitySpan, LabeledSentence, NeType, Scheme,
};
use myanner::syllable::{classify_char, segment, CharClass};

/// Characters likely to exercise every branch of the segmenter: the whole
/// Myanmar block plus ASCII and whitespace.
fn any_mixed_char() -> impl Strategy<Value = char> {
    prop_oneof![
        4 => (0x1000u32..=0x109F).prop_map(|c| char::from_u32(c).unwrap()),
        1 => proptest::char::range('a', 'z'),
        1 => Just(' '),
        1 => Just('\u{00A0}'),
        1 => proptest::char::range('0', '9'),
    ]
}

fn any_text() -> impl Strategy<Value = String> {
    proptest::collection::vec(any_mixed_char(), 0..60).prop_map(|cs| cs.into_iter().collect())
}

proptest! {
    #[test]
    fn segmentation_is_lossless(text in any_text()) {
        let joined: String = segment(&text)
            .iter()
            .map(|s| s.surface().to_string())
            .collect();
        let without_ws: String = text.chars().filter(|c| !c.is_whitespace()).collect();
        prop_assert_eq!(joined, without_ws);
    }

    #[test]
    fn segmentation_is_idempotent(text in any_text()) {
        for syllable in segment(&text) {
            let again = segment(syllable.surface());
            prop_assert_eq!(again.len(), 1);
            prop_assert_eq!(again[0].surface(), syllable.surface());
        }
    }

    #[test]
    fn marks_never_start_syllables_after_myanmar(text in any_text()) {
        // reconstruct each syllable's start offset in the whitespace-free text
        let stripped: Vec<char> = text.chars().filter(|c| !c.is_whitespace()).collect();
        // map each stripped index back to the original scalar before it
        let original: Vec<char> = text.chars().collect();
        let mut stripped_to_orig = Vec::new();
        for (i, c) in original.iter().enumerate() {
            if !c.is_whitespace() {
                stripped_to_orig.push(i);
            }
        }
        let mut offset = 0usize;
        for syllable in segment(&text) {
            let first = syllable.surface().chars().next().unwrap();
            let class = classify_char(first);
            let is_mark = matches!(
                class,
                CharClass::Asat
                    | CharClass::Virama
                    | CharClass::Medial
                    | CharClass::DependentVowel
                    | CharClass::VariousSign
            );
            if is_mark {
                let orig_idx = stripped_to_orig[offset];
                let prev_is_myanmar = orig_idx > 0
                    && !matches!(
                        classify_char(original[orig_idx - 1]),
                        CharClass::NonMyanmar | CharClass::Whitespace
                    );
                prop_assert!(
                    !prev_is_myanmar,
                    "syllable starting with {:?} follows a Myanmar scalar",
                    first
                );
            }
            offset += syllable.surface().chars().count();
            let _ = stripped.len();
        }
    }
}

fn any_ne_type() -> impl Strategy<Value = NeType> {
    prop_oneof![
        Just(NeType::Pname),
        Just(NeType::Loc),
        Just(NeType::Org),
        Just(NeType::Race),
        Just(NeType::Time),
        Just(NeType::Num),
    ]
}

/// Random sentence length plus sorted, non-overlapping spans over it.
fn any_span_set() -> impl Strategy<Value = (usize, Vec<EntitySpan>)> {
    (1usize..25)
        .prop_flat_map(|n| {
            let spans = proptest::collection::vec((0usize..n, 1usize..4, any_ne_type()), 0..6)
                .prop_map(move |raw| {
                    let mut spans: Vec<EntitySpan> = Vec::new();
                    let mut next_free = 0usize;
                    let mut sorted = raw;
                    sorted.sort_by_key(|(s, _, _)| *s);
                    for (start, len, ty) in sorted {
                        let start = start.max(next_free);
                        let end = (start + len - 1).min(n - 1);
                        if start >= n || start > end {
                            continue;
                        }
                        spans.push(EntitySpan::new(start, end, ty));
                        next_free = end + 2;
                    }
                    spans
                });
            (Just(n), spans)
        })
}

proptest! {
    #[test]
    fn iobes_round_trip_is_exact((n, spans) in any_span_set()) {
        let labels = spans_to_labels(n, &spans, Scheme::Iobes).unwrap();
        prop_assert!(validate_labels(&labels, Scheme::Iobes).is_empty());
        prop_assert_eq!(labels_to_spans(&labels), spans);
    }

    #[test]
    fn iob2_round_trip_is_exact((n, spans) in any_span_set()) {
        let labels = spans_to_labels(n, &spans, Scheme::Iob2).unwrap();
        prop_assert!(validate_labels(&labels, Scheme::Iob2).is_empty());
        prop_assert_eq!(labels_to_spans(&labels), spans);
    }

    #[test]
    fn scheme_conversion_preserves_spans((n, spans) in any_span_set()) {
        let iobes = spans_to_labels(n, &spans, Scheme::Iobes).unwrap();
        let iob2 = convert_scheme(&iobes, Scheme::Iobes, Scheme::Iob2).unwrap();
        prop_assert_eq!(labels_to_spans(&iob2), spans.clone());
        let back = convert_scheme(&iob2, Scheme::Iob2, Scheme::Iobes).unwrap();
        prop_assert_eq!(back, iobes);
    }

    #[test]
    fn gold_scores_perfectly_against_itself((n, spans) in any_span_set()) {
        let labels = spans_to_labels(n, &spans, Scheme::Iobes).unwrap();
        let gold = vec![LabeledSentence::new(vec!["x".to_string(); n], labels.clone()).unwrap()];
        let metrics = evaluate(&gold, &[labels]).unwrap();
        if spans.is_empty() {
            prop_assert_eq!(metrics.micro.tp, 0);
        } else {
            prop_assert_eq!(metrics.micro.f1(), 1.0);
            prop_assert_eq!(metrics.micro.precision(), 1.0);
            prop_assert_eq!(metrics.micro.recall(), 1.0);
        }
    }

    #[test]
    fn metric_count_identities(
        (n, gold_spans) in any_span_set(),
        (m, pred_template) in any_span_set()
    ) {
        // align the prediction to the gold length by clamping
        let pred_spans: Vec<EntitySpan> = pred_template
            .into_iter()
            .filter(|s| s.end < n)
            .collect();
        let _ = m;
        let gold_labels = spans_to_labels(n, &gold_spans, Scheme::Iobes).unwrap();
        let pred_labels = spans_to_labels(n, &pred_spans, Scheme::Iobes).unwrap();
        let gold = vec![LabeledSentence::new(vec!["x".to_string(); n], gold_labels).unwrap()];
        let metrics = evaluate(&gold, &[pred_labels]).unwrap();
        prop_assert_eq!(metrics.micro.tp + metrics.micro.fn_, gold_spans.len());
        prop_assert_eq!(metrics.micro.tp + metrics.micro.fp, pred_spans.len());
    }
}

fn any_token() -> impl Strategy<Value = String> {
    proptest::collection::vec(
        prop_oneof![
            3 => (0x1000u32..=0x104F).prop_map(|c| char::from_u32(c).unwrap()),
            1 => proptest::char::range('a', 'z'),
        ],
        1..6,
    )
    .prop_map(|cs| cs.into_iter().collect())
}

fn any_labeled_sentences() -> impl Strategy<Value = Vec<LabeledSentence>> {
    proptest::collection::vec(
        (1usize..8).prop_flat_map(|n| {
            (
                proptest::collection::vec(any_token(), n..=n),
                Just(vec!["O".to_string(); n]),
            )
                .prop_map(|(tokens, labels)| LabeledSentence::new(tokens, labels).unwrap())
        }),
        0..6,
    )
}

proptest! {
    #[test]
    fn conll_write_read_round_trips(sentences in any_labeled_sentences()) {
        let mut buf = Vec::new();
        write_conll(&mut buf, &sentences).unwrap();
        let back = read_conll(buf.as_slice()).unwrap();
        prop_assert_eq!(back, sentences);
    }
}
