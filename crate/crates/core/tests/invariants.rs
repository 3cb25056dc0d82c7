use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sancws::autodiff::{Graph, ParamStore};
use sancws::corpus::{build_vocab, LabeledSentence};
use sancws::crf::{log_partition, sequence_score, Transitions};
use sancws::encoder::{glorot, local_mask, scaled_dot};
use sancws::lexicon::{replacement_probability, span_tag, Lexicon, MatchedSpan, TagMode};
use sancws::repr::{positional_encoding, word_context};
use sancws::{Adaptation, ModelConfig, Segmenter64};

proptest! {
    #[test]
    fn replacement_probability_shape(f in 1u64..10_000, g in 1u64..10_000, t in 1e-3f64..1e3) {
        let (lo, hi) = (f.min(g), f.max(g));
        let p_lo = replacement_probability(lo, t).unwrap();
        let p_hi = replacement_probability(hi, t).unwrap();
        prop_assert!(p_hi <= p_lo);
        prop_assert!((0.0..=1.0).contains(&p_hi));
        prop_assert_eq!(p_lo == 1.0, lo as f64 <= t);
    }

    #[test]
    fn positional_tags_mark_boundaries(len in 1usize..8, begin in 0usize..5) {
        let span = MatchedSpan {
            begin,
            end: begin + len - 1,
            word: "x".repeat(len),
            pos: "NR".into(),
        };
        let tags: Vec<String> = (span.begin..=span.end)
            .map(|i| span_tag(&span, i, TagMode::Positional).unwrap())
            .collect();
        let count = |suffix: &str| tags.iter().filter(|t| t.ends_with(suffix)).count();
        if len == 1 {
            prop_assert_eq!(&tags, &vec!["NR_s".to_string()]);
        } else {
            prop_assert_eq!(count("_b"), 1);
            prop_assert_eq!(count("_e"), 1);
            prop_assert_eq!(count("_m"), len - 2);
            prop_assert!(tags[0].ends_with("_b") && tags[len - 1].ends_with("_e"));
        }
        for i in span.begin..=span.end {
            prop_assert_eq!(span_tag(&span, i, TagMode::Plain).unwrap(), "NR");
        }
    }

    #[test]
    fn positional_encoding_is_bounded(pos in 0usize..5000, half in 1usize..64) {
        let pe = positional_encoding::<f64>(pos, 2 * half).unwrap();
        prop_assert!(pe.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn word_context_is_a_convex_combination(
        seed in any::<u64>(),
        dc in 1usize..6,
        dw in 1usize..6,
        k in 1usize..6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = glorot::<f64>(1, dc, &mut rng).data().to_vec();
        let bilinear = glorot::<f64>(dc, dw, &mut rng).map(|v| v * 5.0);
        let spans: Vec<Vec<f64>> = (0..k).map(|_| glorot::<f64>(1, dw, &mut rng).data().to_vec()).collect();
        let (h, alpha) = word_context(&x, &spans, &bilinear).unwrap();
        prop_assert_eq!(alpha.len(), k);
        prop_assert!(alpha.iter().all(|&a| a >= 0.0));
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (d, &hd) in h.iter().enumerate() {
            let lo = spans.iter().map(|s| s[d]).fold(f64::INFINITY, f64::min);
            let hi = spans.iter().map(|s| s[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(lo - 1e-12 <= hd && hd <= hi + 1e-12);
        }
    }

    #[test]
    fn local_attention_rows_and_gradients(seed in any::<u64>(), n in 1usize..10, window in 0usize..4) {
        let store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = local_mask::<f64>(n, window);
        let (qm, km, vm) = (glorot(n, 4, &mut rng), glorot(n, 4, &mut rng), glorot(n, 3, &mut rng));
        for i in 0..n {
            let mut g = Graph::new(&store);
            let q = g.constant(qm.clone());
            let k = g.constant(km.clone());
            let v = g.input(vm.clone());
            let (out, weights) = scaled_dot(&mut g, q, k, v, Some(&mask), 0.0, &mut None).unwrap();
            let w = g.value(weights).clone();
            let row: f64 = (0..n).map(|j| w.get(i, j)).sum();
            prop_assert!((row - 1.0).abs() < 1e-12);
            let picked = g.rows(out, i, 1);
            let root = g.sum_all(picked);
            let back = g.backward(root);
            let dv = back.wrt(v).unwrap();
            for j in 0..n {
                prop_assert!(w.get(i, j) >= 0.0);
                if i.abs_diff(j) > window {
                    prop_assert_eq!(w.get(i, j), 0.0);
                    prop_assert!(dv.row(j).iter().all(|&x| x == 0.0));
                } else {
                    prop_assert!(w.get(i, j) > 0.0);
                }
            }
        }
    }

    #[test]
    fn partition_bounds_every_path(
        seed in any::<u64>(),
        labels in prop::collection::vec(0usize..4, 1..8),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let e = glorot::<f64>(labels.len(), 4, &mut rng).map(|v| v * 10.0);
        let t = Transitions::from_matrix(glorot::<f64>(6, 6, &mut rng).map(|v| v * 10.0)).unwrap();
        prop_assert!(log_partition(&e, &t).unwrap() >= sequence_score(&e, &t, &labels).unwrap());
    }
}

#[test]
fn zero_probability_draw_matches_inference_rule() {
    let sentences: Vec<LabeledSentence> = ["韩立 在 青云山", "青云 的 张小凡"]
        .iter()
        .map(|l| LabeledSentence::from_words(&l.split(' ').collect::<Vec<_>>()).unwrap())
        .collect();
    let lexicon = Lexicon::from_entries([
        ("韩立", "NR"),
        ("青云", "NS"),
        ("青云山", "NS"),
        ("张小凡", "NR"),
        ("小凡", "NR"),
        ("的", "DEG"),
    ])
    .unwrap()
    .0;
    for (adaptation, covered) in [
        (Adaptation::T, vec![true, false, true, false, true, false]),
        (Adaptation::Tb, vec![false, true, true, true, false, true]),
    ] {
        let cfg = ModelConfig {
            char_emb_dim: 4,
            bigram_emb_dim: 4,
            word_emb_dim: 4,
            adaptation,
            ..ModelConfig::default()
        };
        let vocab = build_vocab(&sentences, 1).unwrap();
        let mut seg = Segmenter64::new(cfg, vocab, Some(lexicon.clone()), 3).unwrap();
        seg.set_word_coverage(covered).unwrap();
        let features = seg.word_features().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in &sentences {
            for span in seg.matched_spans(&s.chars) {
                for i in span.begin..=span.end {
                    let drawn = features
                        .word_repr_with_probability(&span, i, &span.pos, 0.0, &mut rng)
                        .unwrap();
                    assert_eq!(drawn, features.word_repr_predict(&span, i).unwrap(), "{}", span.word);
                }
            }
        }
    }
}
