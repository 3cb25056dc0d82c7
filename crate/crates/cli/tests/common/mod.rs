#![allow(dead_code)]

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sancws::corpus::LabeledSentence;
use sancws::lexicon::Lexicon;

/// Sentences of 3 to 8 words drawn from a fixed vocabulary of 40 words.
pub fn toy_corpus(n: usize, seed: u64) -> Vec<LabeledSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pool: Vec<char> = (0..60).map(|k| char::from_u32(0x4E00 + k * 37).unwrap()).collect();
    let words: Vec<String> = (0..40)
        .map(|_| {
            let len = [1, 1, 2, 2, 2, 3, 4][rng.gen_range(0..7)];
            (0..len).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
        })
        .collect();
    (0..n)
        .map(|_| {
            let k = rng.gen_range(3..9);
            let ws: Vec<&str> = (0..k).map(|_| words[rng.gen_range(0..words.len())].as_str()).collect();
            LabeledSentence::from_words(&ws).unwrap()
        })
        .collect()
}

pub fn write_corpus(path: &Path, sentences: &[LabeledSentence]) {
    let text: String = sentences.iter().map(|s| s.words().join(" ") + "\n").collect();
    std::fs::write(path, text).unwrap();
}

pub fn write_lexicon(path: &Path, lexicon: &Lexicon) {
    let text: String = lexicon.entries().map(|(w, p)| format!("{w}\t{p}\n")).collect();
    std::fs::write(path, text).unwrap();
}

/// Source-domain training data plus a target test set whose names occur only
/// in the lexicon, and one target name that is in neither.
pub struct DomainShift {
    pub train: Vec<LabeledSentence>,
    pub dev: Vec<LabeledSentence>,
    pub test: Vec<Vec<String>>,
    pub lexicon: Lexicon,
    /// Lexicon-only names followed by the absent one.
    pub targets: Vec<String>,
}

fn ch(k: u32) -> char {
    char::from_u32(0x4E00 + k * 53).unwrap()
}

pub fn domain_shift(seed: u64) -> DomainShift {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let singles: Vec<char> = (0..30).map(ch).collect();
    let common: Vec<String> = (0..25)
        .map(|k| (0..2 + k % 2).map(|j| ch(100 + k * 3 + j)).collect())
        .collect();
    let mut seen = HashSet::new();
    let mut name = |rng: &mut ChaCha8Rng| loop {
        let len = rng.gen_range(2..4);
        let n: String = (0..len).map(|_| *singles.choose(rng).unwrap()).collect();
        if seen.insert(n.clone()) {
            return n;
        }
    };
    let source: Vec<String> = (0..20).map(|_| name(&mut rng)).collect();
    let target: Vec<String> = (0..6).map(|_| name(&mut rng)).collect();
    let absent = name(&mut rng);
    let sentence = |rng: &mut ChaCha8Rng, names: &[String]| -> Vec<String> {
        let k = rng.gen_range(4..9);
        let mut ws: Vec<String> = (0..k)
            .map(|_| {
                if rng.gen_bool(0.5) {
                    singles.choose(rng).unwrap().to_string()
                } else {
                    common.choose(rng).unwrap().clone()
                }
            })
            .collect();
        let at = rng.gen_range(0..=ws.len());
        ws.insert(at, names.choose(rng).unwrap().clone());
        ws
    };
    let labeled = |ws: Vec<String>| LabeledSentence::from_words(&ws).unwrap();
    let train = (0..300).map(|_| labeled(sentence(&mut rng, &source))).collect();
    let dev = (0..40).map(|_| labeled(sentence(&mut rng, &source))).collect();
    let mut targets = target.clone();
    targets.push(absent);
    let test = (0..80).map(|_| sentence(&mut rng, &targets)).collect();
    let mut entries: Vec<(String, String)> = common
        .iter()
        .map(|w| (w.clone(), ["NN", "VV"][w.chars().count() % 2].to_string()))
        .collect();
    entries.extend(source.iter().chain(&target).map(|n| (n.clone(), "NR".to_string())));
    let lexicon = Lexicon::from_entries(entries).unwrap().0;
    DomainShift {
        train,
        dev,
        test,
        lexicon,
        targets,
    }
}
