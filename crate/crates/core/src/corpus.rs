//! Segmented corpora, BMES conversion, vocabularies and batching.

use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    B,
    M,
    E,
    S,
}

impl Label {
    pub const ALL: [Label; 4] = [Label::B, Label::M, Label::E, Label::S];

    pub fn index(self) -> usize {
        match self {
            Label::B => 0,
            Label::M => 1,
            Label::E => 2,
            Label::S => 3,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = match self {
            Label::B => "B",
            Label::M => "M",
            Label::E => "E",
            Label::S => "S",
        };
        f.write_str(c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledSentence {
    pub chars: Vec<char>,
    pub labels: Vec<Label>,
}

impl LabeledSentence {
    pub fn from_words<S: AsRef<str>>(words: &[S]) -> Result<Self> {
        let labels = to_bmes(words)?;
        let chars: Vec<char> = words.iter().flat_map(|w| w.as_ref().chars()).collect();
        if chars.is_empty() {
            return Err(Error::invalid("sentence without characters"));
        }
        Ok(LabeledSentence { chars, labels })
    }

    pub fn len(&self) -> usize {
        self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chars.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        from_bmes(&self.chars, &self.labels)
    }

    pub fn label_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }

    pub fn text(&self) -> String {
        self.chars.iter().collect()
    }
}

/// Word separators inside a corpus line.
pub fn is_word_separator(c: char) -> bool {
    c == ' ' || c == '\u{3000}' || c == '\t'
}

/// Splits a segmented line into words; empty for a blank line.
pub fn split_words(line: &str) -> Vec<&str> {
    line.split(is_word_separator).filter(|w| !w.is_empty()).collect()
}

pub fn to_bmes<S: AsRef<str>>(words: &[S]) -> Result<Vec<Label>> {
    let mut labels = Vec::new();
    for w in words {
        let k = w.as_ref().chars().count();
        match k {
            0 => return Err(Error::EmptyWord),
            1 => labels.push(Label::S),
            _ => {
                labels.push(Label::B);
                labels.extend(std::iter::repeat(Label::M).take(k - 2));
                labels.push(Label::E);
            }
        }
    }
    Ok(labels)
}

/// Groups characters into words. Any label sequence is accepted: a word opens
/// before B or S and closes after E or S; a trailing unfinished word is closed.
pub fn from_bmes(chars: &[char], labels: &[Label]) -> Vec<String> {
    assert_eq!(chars.len(), labels.len(), "chars and labels differ in length");
    let mut words = Vec::new();
    let mut current = String::new();
    for (&c, &l) in chars.iter().zip(labels) {
        if matches!(l, Label::B | Label::S) && !current.is_empty() {
            words.push(std::mem::take(&mut current));
        }
        current.push(c);
        if matches!(l, Label::E | Label::S) {
            words.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Reads a file line by line as UTF-8, reporting the first bad line.
pub(crate) fn read_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (no, raw) in bytes.split(|&b| b == b'\n').enumerate() {
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let line = std::str::from_utf8(raw).map_err(|_| Error::Utf8 {
            path: path.to_path_buf(),
            line: no + 1,
        })?;
        lines.push(line.to_string());
    }
    if bytes.ends_with(b"\n") {
        lines.pop();
    }
    Ok(lines)
}

pub fn parse_segmented_line(line: &str) -> Option<LabeledSentence> {
    let words = split_words(line);
    if words.is_empty() {
        return None;
    }
    Some(LabeledSentence::from_words(&words).expect("split_words yields non-empty words"))
}

pub fn read_segmented_corpus(path: impl AsRef<Path>) -> Result<Vec<LabeledSentence>> {
    let lines = read_lines(path.as_ref())?;
    Ok(lines.iter().filter_map(|l| parse_segmented_line(l)).collect())
}

/// Bigram item: a character and its successor, `None` past the sentence end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bigram(pub char, pub Option<char>);

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "</s>";

/// Items that can live in an [`ItemIndex`] and be written to vocab text.
pub trait VocabItem: Clone + Eq + std::hash::Hash + Ord {
    fn encode(&self) -> String;
    fn decode(s: &str) -> Option<Self>;
}

impl VocabItem for char {
    fn encode(&self) -> String {
        self.to_string()
    }
    fn decode(s: &str) -> Option<Self> {
        let mut it = s.chars();
        let c = it.next()?;
        it.next().is_none().then_some(c)
    }
}

impl VocabItem for Bigram {
    fn encode(&self) -> String {
        match self.1 {
            Some(c) => format!("{}{}", self.0, c),
            None => format!("{}{}", self.0, EOS_TOKEN),
        }
    }
    fn decode(s: &str) -> Option<Self> {
        let mut it = s.chars();
        let first = it.next()?;
        let rest = it.as_str();
        if rest == EOS_TOKEN {
            return Some(Bigram(first, None));
        }
        let second = char::decode(rest)?;
        Some(Bigram(first, Some(second)))
    }
}

pub const PAD_INDEX: usize = 0;
pub const UNK_INDEX: usize = 1;

/// Item→index table with PAD at 0 and UNK at 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemIndex<I: VocabItem> {
    items: Vec<I>,
    counts: Vec<u64>,
    map: HashMap<I, usize>,
}

impl<I: VocabItem> ItemIndex<I> {
    /// Items sorted by descending count, ties by item order.
    fn from_counts(counts: HashMap<I, u64>, min_freq: u64) -> Self {
        let mut kept: Vec<(I, u64)> = counts.into_iter().filter(|(_, c)| *c >= min_freq).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut index = ItemIndex {
            items: Vec::with_capacity(kept.len()),
            counts: Vec::with_capacity(kept.len()),
            map: HashMap::new(),
        };
        for (item, count) in kept {
            index.push(item, count);
        }
        index
    }

    fn push(&mut self, item: I, count: u64) {
        self.map.insert(item.clone(), self.items.len() + 2);
        self.items.push(item);
        self.counts.push(count);
    }

    /// Size including PAD and UNK.
    pub fn len(&self) -> usize {
        self.items.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, item: &I) -> usize {
        self.map.get(item).copied().unwrap_or(UNK_INDEX)
    }

    pub fn contains(&self, item: &I) -> bool {
        self.map.contains_key(item)
    }

    pub fn item(&self, index: usize) -> Option<&I> {
        index.checked_sub(2).and_then(|i| self.items.get(i))
    }

    pub fn count(&self, index: usize) -> u64 {
        index.checked_sub(2).and_then(|i| self.counts.get(i)).copied().unwrap_or(0)
    }

    pub fn to_text(&self, kind: &str) -> String {
        let mut out = format!("sancws-vocab\tv1\t{kind}\n");
        out.push_str(&format!("{PAD_INDEX}\t{PAD_TOKEN}\t0\n"));
        out.push_str(&format!("{UNK_INDEX}\t{UNK_TOKEN}\t0\n"));
        for (i, (item, count)) in self.items.iter().zip(&self.counts).enumerate() {
            out.push_str(&format!("{}\t{}\t{}\n", i + 2, item.encode(), count));
        }
        out
    }

    pub fn from_text(text: &str, kind: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().unwrap_or_default();
        if header != format!("sancws-vocab\tv1\t{kind}") {
            return Err(Error::Parse {
                line: 1,
                message: format!("unsupported vocab header `{header}`"),
            });
        }
        let mut index = ItemIndex {
            items: Vec::new(),
            counts: Vec::new(),
            map: HashMap::new(),
        };
        for (no, line) in lines.enumerate() {
            let line_no = no + 2;
            let bad = |m: &str| Error::Parse {
                line: line_no,
                message: m.to_string(),
            };
            let mut fields = line.split('\t');
            let (Some(idx), Some(item), Some(count), None) =
                (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(bad("expected index<TAB>item<TAB>count"));
            };
            let idx: usize = idx.parse().map_err(|_| bad("bad index"))?;
            let count: u64 = count.parse().map_err(|_| bad("bad count"))?;
            match idx {
                PAD_INDEX if item == PAD_TOKEN => continue,
                UNK_INDEX if item == UNK_TOKEN => continue,
                _ => {}
            }
            if idx != index.len() {
                return Err(bad("indices must be consecutive"));
            }
            let item = I::decode(item).ok_or_else(|| bad("undecodable item"))?;
            index.push(item, count);
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    pub unigrams: ItemIndex<char>,
    pub bigrams: ItemIndex<Bigram>,
    pub min_freq: u64,
}

pub fn bigrams_of(chars: &[char]) -> Vec<Bigram> {
    (0..chars.len())
        .map(|i| Bigram(chars[i], chars.get(i + 1).copied()))
        .collect()
}

impl Vocab {
    pub fn unigram_ids(&self, chars: &[char]) -> Vec<usize> {
        chars.iter().map(|c| self.unigrams.get(c)).collect()
    }

    pub fn bigram_ids(&self, chars: &[char]) -> Vec<usize> {
        bigrams_of(chars).iter().map(|b| self.bigrams.get(b)).collect()
    }
}

pub fn build_vocab(sentences: &[LabeledSentence], min_freq: u64) -> Result<Vocab> {
    build_vocab_with(sentences, min_freq, min_freq)
}

/// Separate thresholds for unigrams and bigrams.
pub fn build_vocab_with(
    sentences: &[LabeledSentence],
    unigram_min_freq: u64,
    bigram_min_freq: u64,
) -> Result<Vocab> {
    if sentences.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut uni: HashMap<char, u64> = HashMap::new();
    let mut bi: HashMap<Bigram, u64> = HashMap::new();
    for s in sentences {
        for &c in &s.chars {
            *uni.entry(c).or_default() += 1;
        }
        for b in bigrams_of(&s.chars) {
            *bi.entry(b).or_default() += 1;
        }
    }
    Ok(Vocab {
        unigrams: ItemIndex::from_counts(uni, unigram_min_freq),
        bigrams: ItemIndex::from_counts(bi, bigram_min_freq),
        min_freq: unigram_min_freq,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    /// Positions of the member sentences in the source slice.
    pub indices: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub bigram_ids: Vec<Vec<usize>>,
    pub pad_mask: Vec<Vec<bool>>,
    pub lengths: Vec<usize>,
}

/// Splits sentences into padded batches. With a seed the order is shuffled
/// deterministically; without one the input order is kept.
pub fn make_batches(
    sentences: &[LabeledSentence],
    vocab: &Vocab,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::invalid("batch_size must be >= 1"));
    }
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| {
            let max_len = chunk.iter().map(|&i| sentences[i].len()).max().unwrap_or(0);
            let mut batch = Batch {
                indices: chunk.to_vec(),
                char_ids: Vec::new(),
                bigram_ids: Vec::new(),
                pad_mask: Vec::new(),
                lengths: Vec::new(),
            };
            for &i in chunk {
                let s = &sentences[i];
                let mut u = vocab.unigram_ids(&s.chars);
                let mut b = vocab.bigram_ids(&s.chars);
                u.resize(max_len, PAD_INDEX);
                b.resize(max_len, PAD_INDEX);
                batch.char_ids.push(u);
                batch.bigram_ids.push(b);
                batch.pad_mask.push((0..max_len).map(|p| p < s.len()).collect());
                batch.lengths.push(s.len());
            }
            batch
        })
        .collect())
}
