//! Word/POS lexicon, dictionary span matching and replacement sampling.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::read_lines;
use crate::error::{Error, Result};

/// How matched spans are turned into POS features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TagMode {
    /// The word's POS tag as is (`t`).
    Plain,
    /// The POS tag decorated with the character's position in the word (`t_b`).
    Positional,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: HashMap<char, usize>,
    entry: Option<usize>,
}

/// Character trie over lexicon words.
#[derive(Debug, Clone)]
pub struct Trie {
    nodes: Vec<TrieNode>,
}

impl Default for Trie {
    fn default() -> Self {
        Trie {
            nodes: vec![TrieNode::default()],
        }
    }
}

impl Trie {
    fn insert(&mut self, word: &str, entry: usize) {
        let mut cur = 0;
        for c in word.chars() {
            cur = match self.nodes[cur].children.get(&c) {
                Some(&next) => next,
                None => {
                    self.nodes.push(TrieNode::default());
                    let next = self.nodes.len() - 1;
                    self.nodes[cur].children.insert(c, next);
                    next
                }
            };
        }
        self.nodes[cur].entry = Some(entry);
    }

    /// Entries for every prefix of `chars` of length at most `max_len`, shortest first.
    pub fn prefixes<'a>(&'a self, chars: &'a [char], max_len: usize) -> impl Iterator<Item = (usize, usize)> + 'a {
        let mut cur = Some(0);
        chars.iter().take(max_len).enumerate().filter_map(move |(k, c)| {
            let node = cur?;
            cur = self.nodes[node].children.get(c).copied();
            let next = cur?;
            self.nodes[next].entry.map(|e| (k + 1, e))
        })
    }
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    entries: Vec<(String, String)>,
    index: HashMap<String, usize>,
    trie: Trie,
    /// Length in characters of the longest entry.
    pub max_word_len: usize,
    pub pos_tags_t: Vec<String>,
    pub pos_tags_tb: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LexiconLoadReport {
    pub entries: usize,
    pub duplicates: usize,
}

pub const POSITION_SUFFIXES: [&str; 4] = ["b", "m", "e", "s"];

fn decorate(pos: &str, suffix: &str) -> String {
    format!("{pos}_{suffix}")
}

impl Lexicon {
    /// Builds a lexicon from `(word, pos)` pairs; a repeated word keeps its first POS.
    /// Returns the lexicon and the number of ignored duplicates.
    pub fn from_entries<I, W, P>(pairs: I) -> Result<(Self, usize)>
    where
        I: IntoIterator<Item = (W, P)>,
        W: Into<String>,
        P: Into<String>,
    {
        let mut lex = Lexicon {
            entries: Vec::new(),
            index: HashMap::new(),
            trie: Trie::default(),
            max_word_len: 0,
            pos_tags_t: Vec::new(),
            pos_tags_tb: Vec::new(),
        };
        let mut duplicates = 0;
        let mut tags = BTreeSet::new();
        for (w, p) in pairs {
            let (w, p) = (w.into(), p.into());
            if w.is_empty() {
                return Err(Error::EmptyWord);
            }
            if lex.index.contains_key(&w) {
                duplicates += 1;
                continue;
            }
            let id = lex.entries.len();
            lex.trie.insert(&w, id);
            lex.max_word_len = lex.max_word_len.max(w.chars().count());
            lex.index.insert(w.clone(), id);
            tags.insert(p.clone());
            lex.entries.push((w, p));
        }
        lex.pos_tags_t = tags.into_iter().collect();
        lex.pos_tags_tb = lex
            .pos_tags_t
            .iter()
            .flat_map(|p| POSITION_SUFFIXES.iter().map(move |s| decorate(p, s)))
            .collect();
        Ok((lex, duplicates))
    }

    pub fn empty() -> Self {
        Self::from_entries(std::iter::empty::<(String, String)>())
            .expect("empty lexicon")
            .0
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn pos(&self, word: &str) -> Option<&str> {
        self.index.get(word).map(|&i| self.entries[i].1.as_str())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(w, p)| (w.as_str(), p.as_str()))
    }

    pub fn tags(&self, mode: TagMode) -> &[String] {
        match mode {
            TagMode::Plain => &self.pos_tags_t,
            TagMode::Positional => &self.pos_tags_tb,
        }
    }

    /// SHA-256 over the entries in insertion order, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (w, p) in &self.entries {
            h.update(w.as_bytes());
            h.update(b"\t");
            h.update(p.as_bytes());
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads `word<TAB>POS` lines; `#` comments and blank lines are skipped.
pub fn load_lexicon(path: impl AsRef<Path>) -> Result<(Lexicon, LexiconLoadReport)> {
    let lines = read_lines(path.as_ref())?;
    let mut pairs = Vec::new();
    for (no, line) in lines.iter().enumerate() {
        let trimmed = line.trim_end();
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let err = |m: &str| Error::Parse {
            line: no + 1,
            message: m.to_string(),
        };
        let (word, pos) = trimmed.split_once('\t').ok_or_else(|| err("missing tab"))?;
        let (word, pos) = (word.trim(), pos.trim());
        if word.is_empty() {
            return Err(err("empty word"));
        }
        if pos.is_empty() {
            return Err(err("empty POS tag"));
        }
        pairs.push((word.to_string(), pos.to_string()));
    }
    let (lex, duplicates) = Lexicon::from_entries(pairs)?;
    if duplicates > 0 {
        log::warn!("{}: {duplicates} duplicate lexicon entries ignored", path.as_ref().display());
    }
    let report = LexiconLoadReport {
        entries: lex.len(),
        duplicates,
    };
    Ok((lex, report))
}

/// A lexicon word found in a sentence, covering characters `begin..=end`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatchedSpan {
    pub begin: usize,
    pub end: usize,
    pub word: String,
    pub pos: String,
}

impl MatchedSpan {
    pub fn len(&self) -> usize {
        self.end - self.begin + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn covers(&self, i: usize) -> bool {
        self.begin <= i && i <= self.end
    }
}

impl fmt::Display for MatchedSpan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}({}..{})/{}", self.word, self.begin, self.end, self.pos)
    }
}

/// All lexicon spans in `chars` of at most `max_len` characters, ordered by `(begin, end)`.
pub fn all_spans(chars: &[char], lexicon: &Lexicon, max_len: usize) -> Vec<MatchedSpan> {
    let mut out = Vec::new();
    for b in 0..chars.len() {
        for (len, entry) in lexicon.trie.prefixes(&chars[b..], max_len) {
            let (word, pos) = &lexicon.entries[entry];
            out.push(MatchedSpan {
                begin: b,
                end: b + len - 1,
                word: word.clone(),
                pos: pos.clone(),
            });
        }
    }
    out
}

/// For each character position, the spans covering it, ordered by `(begin, end)`.
pub fn match_spans(chars: &[char], lexicon: &Lexicon, max_len: usize) -> Result<Vec<Vec<MatchedSpan>>> {
    if max_len == 0 {
        return Err(Error::invalid("max_len must be >= 1"));
    }
    let mut per_char = vec![Vec::new(); chars.len()];
    for span in all_spans(chars, lexicon, max_len) {
        for slot in &mut per_char[span.begin..=span.end] {
            slot.push(span.clone());
        }
    }
    Ok(per_char)
}

/// Position suffix index (`b`, `m`, `e`, `s`) of character `i` inside `span`.
pub fn position_in_span(span: &MatchedSpan, i: usize) -> Result<usize> {
    if !span.covers(i) {
        return Err(Error::invalid(format!(
            "position {i} outside span {}..{}",
            span.begin, span.end
        )));
    }
    Ok(if span.begin == span.end {
        3
    } else if i == span.begin {
        0
    } else if i == span.end {
        2
    } else {
        1
    })
}

pub fn span_tag(span: &MatchedSpan, i: usize, mode: TagMode) -> Result<String> {
    let p = position_in_span(span, i)?;
    Ok(match mode {
        TagMode::Plain => span.pos.clone(),
        TagMode::Positional => decorate(&span.pos, POSITION_SUFFIXES[p]),
    })
}

/// `min(1, sqrt(t / freq))`.
pub fn replacement_probability(freq: u64, t: f64) -> Result<f64> {
    if freq == 0 {
        return Err(Error::invalid("replacement probability of an unseen word"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid("replacement threshold must be positive"));
    }
    Ok((t / freq as f64).sqrt().min(1.0))
}

/// Gold word counts of a training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WordFreqTable {
    counts: HashMap<String, u64>,
}

impl WordFreqTable {
    pub fn get(&self, word: &str) -> Option<u64> {
        self.counts.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

pub fn build_freq_table<S: AsRef<[W]>, W: AsRef<str>>(sentences: &[S]) -> WordFreqTable {
    let mut counts = HashMap::new();
    for s in sentences {
        for w in s.as_ref() {
            *counts.entry(w.as_ref().to_string()).or_insert(0) += 1;
        }
    }
    WordFreqTable { counts }
}
