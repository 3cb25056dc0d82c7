use std::collections::BTreeSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sancws::autodiff::{Graph, ParamStore};
use sancws::corpus::{from_bmes, to_bmes};
use sancws::crf::{log_partition, sequence_score, viterbi, Transitions};
use sancws::encoder::{glorot, san_encode, SanConfig, SanParams};
use sancws::eval::{counts, prf, spans_of};
use sancws::lexicon::{all_spans, match_spans, Lexicon};
use sancws::Matrix64;

fn paths(n: usize) -> Vec<Vec<usize>> {
    (0..4usize.pow(n as u32))
        .map(|mut code| {
            (0..n)
                .map(|_| {
                    let y = code % 4;
                    code /= 4;
                    y
                })
                .collect()
        })
        .collect()
}

fn emissions() -> impl Strategy<Value = Matrix64> {
    (1usize..=6).prop_flat_map(|n| {
        prop::collection::vec(-9.0f64..9.0, n * 4).prop_map(move |v| Matrix64::from_vec(n, 4, v))
    })
}

fn transitions() -> impl Strategy<Value = Transitions<f64>> {
    prop::collection::vec(-9.0f64..9.0, 36)
        .prop_map(|v| Transitions::from_matrix(Matrix64::from_vec(6, 6, v)).unwrap())
}

proptest! {
    #[test]
    fn crf_matches_enumeration(e in emissions(), t in transitions()) {
        let scores: Vec<(f64, Vec<usize>)> = paths(e.rows())
            .into_iter()
            .map(|p| (sequence_score(&e, &t, &p).unwrap(), p))
            .collect();
        let max = scores.iter().map(|s| s.0).fold(f64::NEG_INFINITY, f64::max);
        let brute = max + scores.iter().map(|s| (s.0 - max).exp()).sum::<f64>().ln();
        prop_assert!((log_partition(&e, &t).unwrap() - brute).abs() < 1e-8);
        let argmax = &scores.iter().find(|s| s.0 == max).unwrap().1;
        let (path, score) = viterbi(&e, &t).unwrap();
        prop_assert_eq!(&path, argmax);
        prop_assert!((score - max).abs() < 1e-9);
    }
}

fn brute_spans(text: &[char], words: &BTreeSet<String>, max_len: usize) -> Vec<(usize, usize, String)> {
    let mut out = Vec::new();
    for b in 0..text.len() {
        for e in b..text.len().min(b + max_len) {
            let w: String = text[b..=e].iter().collect();
            if words.contains(&w) {
                out.push((b, e, w));
            }
        }
    }
    out
}

fn word() -> impl Strategy<Value = String> {
    prop::collection::vec(prop::sample::select(vec!['甲', '乙', '丙']), 1..7)
        .prop_map(|cs| cs.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matching_equals_substring_scan(
        words in prop::collection::btree_set(word(), 0..=50),
        text in prop::collection::vec(prop::sample::select(vec!['甲', '乙', '丙', '丁']), 0..=20),
        max_len in 1usize..7,
    ) {
        let lex = Lexicon::from_entries(words.iter().map(|w| (w.as_str(), "N"))).unwrap().0;
        let expected = brute_spans(&text, &words, max_len);
        let found: Vec<_> = all_spans(&text, &lex, max_len)
            .into_iter()
            .map(|s| (s.begin, s.end, s.word))
            .collect();
        prop_assert_eq!(&found, &expected);
        let per_char = match_spans(&text, &lex, max_len).unwrap();
        for (i, spans) in per_char.iter().enumerate() {
            let got: Vec<_> = spans.iter().map(|s| (s.begin, s.end, s.word.clone())).collect();
            let want: Vec<_> = expected.iter().filter(|s| s.0 <= i && i <= s.1).cloned().collect();
            prop_assert_eq!(got, want);
        }
    }
}

fn partitions(n: usize) -> Vec<Vec<String>> {
    let alphabet: Vec<char> = "abcdefghij".chars().collect();
    (0..1usize << (n - 1))
        .map(|cuts| {
            let mut words = vec![String::new()];
            for (i, &c) in alphabet[..n].iter().enumerate() {
                if i > 0 && cuts >> (i - 1) & 1 == 1 {
                    words.push(String::new());
                }
                words.last_mut().unwrap().push(c);
            }
            words
        })
        .collect()
}

#[test]
fn bmes_round_trip_on_every_partition() {
    for n in 1..=10 {
        for words in partitions(n) {
            let labels = to_bmes(&words).unwrap();
            let chars: Vec<char> = words.concat().chars().collect();
            assert_eq!(from_bmes(&chars, &labels), words);
        }
    }
}

fn segmentation() -> impl Strategy<Value = Vec<Vec<String>>> {
    prop::collection::vec(prop::collection::vec(1usize..4, 1..6), 1..5).prop_map(|sents| {
        sents
            .into_iter()
            .map(|lens| {
                let mut c = 0x4E00u32;
                lens.into_iter()
                    .map(|l| {
                        (0..l)
                            .map(|_| {
                                c += 1;
                                char::from_u32(c).unwrap()
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    })
}

fn resegment(gold: &[Vec<String>], cuts: &[bool]) -> Vec<Vec<String>> {
    let mut k = 0;
    gold.iter()
        .map(|s| {
            let chars: Vec<char> = s.concat().chars().collect();
            let mut words = vec![String::new()];
            for (i, c) in chars.into_iter().enumerate() {
                if i > 0 && cuts[k % cuts.len()] {
                    words.push(String::new());
                }
                k += 1;
                words.last_mut().unwrap().push(c);
            }
            words
        })
        .collect()
}

proptest! {
    #[test]
    fn prf_properties(gold in segmentation(), cuts in prop::collection::vec(any::<bool>(), 1..20)) {
        let pred = resegment(&gold, &cuts);
        let a = prf(&gold, &pred).unwrap();
        let b = prf(&pred, &gold).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert!((a.f1 - b.f1).abs() < 1e-15);
        prop_assert_eq!(a.f1 == 1.0, gold == pred);
        let total = counts(&gold, &pred).unwrap();
        let mut sum = 0;
        for (g, p) in gold.iter().zip(&pred) {
            sum += counts(std::slice::from_ref(g), std::slice::from_ref(p)).unwrap().correct_words;
        }
        prop_assert_eq!(total.correct_words, sum);
        for s in &gold {
            let lens: Vec<String> = s.iter().map(|w| "x".repeat(w.chars().count())).collect();
            prop_assert_eq!(spans_of(s), spans_of(&lens));
        }
    }
}

#[test]
fn wide_window_equals_global_attention() {
    let local = |ws| SanConfig {
        layers: 2,
        heads: 2,
        d_model: 8,
        d_inner: 16,
        head_dim: 4,
        window: ws,
        ..SanConfig::default()
    }
    .without_dropout();
    for n in 2..=12 {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64);
        let params = SanParams::init(&mut store, "san", 6, &local(None), &mut rng);
        let x = glorot::<f64>(n, 6, &mut rng);
        let run = |cfg: &SanConfig| {
            let mut g = Graph::new(&store);
            let xi = g.constant(x.clone());
            let out = san_encode(&mut g, xi, n, &params, cfg, &mut None).unwrap();
            g.value(out).clone()
        };
        let global = run(&local(None));
        for ws in [n - 1, n, n + 3] {
            let out = run(&local(Some(ws)));
            let diff = out
                .data()
                .iter()
                .zip(global.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff <= 1e-10, "n={n} ws={ws}: {diff}");
        }
        if n > 2 {
            let narrow = run(&local(Some(1)));
            assert_ne!(narrow, global, "n={n}");
        }
    }
}
