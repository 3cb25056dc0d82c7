//! Character and word input representations.
//!
//! A character starts as the concatenation of its unigram (or contextual)
//! vector and its bigram vector, gets a sinusoidal position code added, and
//! can then be extended with a word context vector: an attention-weighted
//! mix of the representations of every lexicon span covering it.

use std::collections::HashMap;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, RngCore};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamId, ParamStore};
use crate::corpus::{read_lines, Vocab};
use crate::error::{Error, Result};
use crate::lexicon::{replacement_probability, span_tag, MatchedSpan, TagMode, WordFreqTable};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// A lookup table stored in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbeddingTable {
    pub param: ParamId,
    pub dim: usize,
}

impl EmbeddingTable {
    pub fn row<'a, T: Scalar>(&self, store: &'a ParamStore<T>, index: usize) -> &'a [T] {
        store.value(self.param).row(index)
    }

    pub fn trainable<T: Scalar>(&self, store: &ParamStore<T>) -> bool {
        store.get(self.param).trainable
    }
}

/// Tables feeding the per-character input vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CharTables {
    /// Absent when a contextual provider replaces unigram embeddings.
    pub unigram: Option<EmbeddingTable>,
    pub bigram: EmbeddingTable,
}

impl CharTables {
    pub fn input_dim(&self, contextual_dim: Option<usize>) -> usize {
        let first = match (contextual_dim, self.unigram) {
            (Some(d), _) => d,
            (None, Some(u)) => u.dim,
            (None, None) => 0,
        };
        first + self.bigram.dim
    }
}

/// Concatenated character vector at position `i`: unigram (or the contextual
/// vector when given) followed by the bigram embedding.
pub fn char_input<T: Scalar>(
    store: &ParamStore<T>,
    tables: &CharTables,
    vocab: &Vocab,
    chars: &[char],
    i: usize,
    contextual: Option<&Matrix<T>>,
) -> Result<Vec<T>> {
    if i >= chars.len() {
        return Err(Error::invalid(format!(
            "position {i} outside sentence of length {}",
            chars.len()
        )));
    }
    let mut out = match (contextual, tables.unigram) {
        (Some(ctx), _) => {
            if ctx.rows() != chars.len() {
                return Err(Error::Contextual(format!(
                    "{} vectors for {} characters",
                    ctx.rows(),
                    chars.len()
                )));
            }
            ctx.row(i).to_vec()
        }
        (None, Some(u)) => u.row(store, vocab.unigrams.get(&chars[i])).to_vec(),
        (None, None) => {
            return Err(Error::Contextual(
                "model expects contextual vectors but none were given".into(),
            ))
        }
    };
    let bigram = vocab.bigram_ids(&chars[i..chars.len().min(i + 2)])[0];
    out.extend_from_slice(tables.bigram.row(store, bigram));
    Ok(out)
}

/// Sinusoidal code: even components `sin(pos / 10000^(2i/d))`, odd ones `cos` of the same angle.
pub fn positional_encoding<T: Scalar>(pos: usize, d: usize) -> Result<Vec<T>> {
    if d % 2 != 0 {
        return Err(Error::invalid(format!(
            "positional encoding dimension must be even, got {d}"
        )));
    }
    let mut out = Vec::with_capacity(d);
    for k in 0..d / 2 {
        let angle = pos as f64 / 10000f64.powf(2.0 * k as f64 / d as f64);
        out.push(T::of(angle.sin()));
        out.push(T::of(angle.cos()));
    }
    Ok(out)
}

pub fn positional_matrix<T: Scalar>(n: usize, d: usize) -> Result<Matrix<T>> {
    let mut rows = Vec::with_capacity(n);
    for p in 0..n {
        rows.push(positional_encoding::<T>(p, d)?);
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, d));
    }
    Ok(Matrix::from_rows(&rows))
}

/// Which table row represents a span for one character.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ReprSource {
    Word(usize),
    Pos(usize),
}

/// Word and POS tables used by the word attention.
#[derive(Debug, Clone)]
pub struct WordFeatures {
    pub mode: TagMode,
    pub word_table: EmbeddingTable,
    pub pos_table: EmbeddingTable,
    /// Bilinear score matrix, `dim(x_c) x dim(x_w)`.
    pub bilinear: ParamId,
    words: HashMap<String, usize>,
    word_list: Vec<String>,
    /// Rows of the word table that hold a pretrained vector.
    covered: Vec<bool>,
    tags: HashMap<String, usize>,
    tag_list: Vec<String>,
}

impl WordFeatures {
    pub fn new(
        mode: TagMode,
        word_table: EmbeddingTable,
        pos_table: EmbeddingTable,
        bilinear: ParamId,
        word_list: Vec<String>,
        covered: Vec<bool>,
        tag_list: Vec<String>,
    ) -> Self {
        assert_eq!(word_list.len(), covered.len());
        let words = word_list
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
        let tags = tag_list
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        WordFeatures {
            mode,
            word_table,
            pos_table,
            bilinear,
            words,
            word_list,
            covered,
            tags,
            tag_list,
        }
    }

    pub fn word_list(&self) -> &[String] {
        &self.word_list
    }

    pub fn tag_list(&self) -> &[String] {
        &self.tag_list
    }

    pub fn covered(&self) -> &[bool] {
        &self.covered
    }

    pub fn set_covered(&mut self, covered: Vec<bool>) {
        assert_eq!(covered.len(), self.word_list.len());
        self.covered = covered;
    }

    /// Word-table row holding a pretrained vector for `word`, if any.
    pub fn pretrained_row(&self, word: &str) -> Option<usize> {
        self.words.get(word).copied().filter(|&r| self.covered[r])
    }

    pub fn word_row(&self, word: &str) -> Option<usize> {
        self.words.get(word).copied()
    }

    pub fn pos_repr(&self, span: &MatchedSpan, i: usize, pos: &str) -> Result<ReprSource> {
        let tagged = MatchedSpan {
            pos: pos.to_string(),
            ..span.clone()
        };
        let tag = span_tag(&tagged, i, self.mode)?;
        self.tags
            .get(&tag)
            .map(|&r| ReprSource::Pos(r))
            .ok_or_else(|| Error::invalid(format!("POS tag `{tag}` is not in the model inventory")))
    }

    /// Inference rule: the pretrained word vector when there is one, otherwise
    /// the POS embedding of the span's tag for character `i`.
    pub fn word_repr_predict(&self, span: &MatchedSpan, i: usize) -> Result<ReprSource> {
        if !span.covers(i) {
            return Err(Error::invalid(format!("position {i} outside span")));
        }
        match self.pretrained_row(&span.word) {
            Some(r) => Ok(ReprSource::Word(r)),
            None => self.pos_repr(span, i, &span.pos),
        }
    }

    /// Training rule for a span that is a gold word: with probability
    /// `min(1, sqrt(t / f(w)))` the gold POS embedding replaces the word vector.
    pub fn word_repr_train(
        &self,
        span: &MatchedSpan,
        i: usize,
        gold_pos: &str,
        freq: &WordFreqTable,
        threshold: f64,
        rng: &mut dyn RngCore,
    ) -> Result<ReprSource> {
        let f = freq.get(&span.word).ok_or_else(|| {
            Error::invalid(format!("`{}` has no training frequency", span.word))
        })?;
        let p = replacement_probability(f, threshold)?;
        self.word_repr_with_probability(span, i, gold_pos, p, rng)
    }

    /// [`Self::word_repr_train`] with an explicit replacement probability.
    pub fn word_repr_with_probability(
        &self,
        span: &MatchedSpan,
        i: usize,
        gold_pos: &str,
        probability: f64,
        rng: &mut dyn RngCore,
    ) -> Result<ReprSource> {
        let rb: f64 = rng.gen();
        if rb < probability {
            return self.pos_repr(span, i, gold_pos);
        }
        match self.pretrained_row(&span.word) {
            Some(r) => Ok(ReprSource::Word(r)),
            None => self.pos_repr(span, i, gold_pos),
        }
    }

    pub fn vector<'a, T: Scalar>(&self, store: &'a ParamStore<T>, src: ReprSource) -> &'a [T] {
        match src {
            ReprSource::Word(r) => self.word_table.row(store, r),
            ReprSource::Pos(r) => self.pos_table.row(store, r),
        }
    }
}

/// Bilinear attention of one character over its span representations.
///
/// Returns the context vector `h = sum_k alpha_k x_k` and the weights; an empty
/// span set gives a zero vector of width `bilinear.cols()` and no weights.
pub fn word_context<T: Scalar>(
    x_c: &[T],
    spans: &[Vec<T>],
    bilinear: &Matrix<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if x_c.len() != bilinear.rows() {
        return Err(Error::shape(format!(
            "character vector of width {} vs bilinear {}x{}",
            x_c.len(),
            bilinear.rows(),
            bilinear.cols()
        )));
    }
    let dw = bilinear.cols();
    if spans.is_empty() {
        return Ok((vec![T::zero(); dw], Vec::new()));
    }
    if let Some(bad) = spans.iter().find(|s| s.len() != dw) {
        return Err(Error::shape(format!(
            "span vector of width {} vs expected {dw}",
            bad.len()
        )));
    }
    let projected = Matrix::row_vector(x_c).matmul(bilinear);
    let scores: Vec<T> = spans
        .iter()
        .map(|s| projected.row(0).iter().zip(s).map(|(&a, &b)| a * b).sum())
        .collect();
    let max = scores.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    let alpha: Vec<T> = exps.iter().map(|&e| e / total).collect();
    let mut h = vec![T::zero(); dw];
    for (a, s) in alpha.iter().zip(spans) {
        for (hv, &sv) in h.iter_mut().zip(s) {
            *hv += *a * sv;
        }
    }
    Ok((h, alpha))
}

pub fn augment<T: Scalar>(x_c: &[T], h: &[T]) -> Vec<T> {
    let mut out = x_c.to_vec();
    out.extend_from_slice(h);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
    pub duplicates: usize,
    pub covered_rows: Vec<usize>,
}

/// Overwrites table rows from a whitespace-separated text embedding file.
///
/// The optional first line `count dim` is checked against the table width.
/// Items that `lookup` does not map to a row are skipped; a repeated item keeps
/// its last vector.
pub fn load_pretrained<T: Scalar>(
    path: impl AsRef<Path>,
    table: &mut Matrix<T>,
    lookup: impl Fn(&str) -> Option<usize>,
) -> Result<Coverage> {
    let path = path.as_ref();
    let lines = read_lines(path)?;
    let dim = table.cols();
    let mut seen = vec![false; table.rows()];
    let mut duplicates = 0;
    for (no, line) in lines.iter().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let err = |m: String| Error::Parse {
            line: no + 1,
            message: m,
        };
        if no == 0 && fields.len() == 2 && fields.iter().all(|f| f.parse::<usize>().is_ok()) {
            let header_dim: usize = fields[1].parse().expect("checked");
            if header_dim != dim {
                return Err(err(format!(
                    "embedding dimension {header_dim} does not match table dimension {dim}"
                )));
            }
            continue;
        }
        if fields.len() != dim + 1 {
            return Err(err(format!(
                "expected item and {dim} values, got {} fields",
                fields.len()
            )));
        }
        let Some(row) = lookup(fields[0]) else { continue };
        let mut values = Vec::with_capacity(dim);
        for f in &fields[1..] {
            let v: f64 = f.parse().map_err(|_| err(format!("bad number `{f}`")))?;
            values.push(T::of(v));
        }
        if seen[row] {
            duplicates += 1;
        }
        seen[row] = true;
        table.row_mut(row).copy_from_slice(&values);
    }
    if duplicates > 0 {
        log::warn!("{}: {duplicates} duplicate embedding items, last one kept", path.display());
    }
    let covered_rows: Vec<usize> = (0..seen.len()).filter(|&r| seen[r]).collect();
    Ok(Coverage {
        covered: covered_rows.len(),
        total: table.rows(),
        duplicates,
        covered_rows,
    })
}

/// Source of precomputed per-character vectors (e.g. a frozen masked-LM encoder).
pub trait ContextualProvider: Send + Sync {
    fn dim(&self) -> usize;
    /// One `dim`-wide row per character of `chars`.
    fn vectors(&self, chars: &[char]) -> Result<Matrix<f32>>;
}

/// Hex SHA-256 of the sentence text, the key of a contextual record.
pub fn sentence_key(chars: &[char]) -> String {
    let text: String = chars.iter().collect();
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

const CONTEXTUAL_HEADER: &str = "sancws-contextual v1";

fn index_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".idx");
    PathBuf::from(s)
}

/// Writes a contextual vector store: `path` holds records of
/// `sha256 (32 bytes) | n: u32 LE | dim: u32 LE | n*dim f32 LE`; `path.idx`
/// lists `hex-hash<TAB>offset<TAB>n` after a header line.
pub fn write_contextual(path: impl AsRef<Path>, records: &[(Vec<char>, Matrix<f32>)]) -> Result<()> {
    let path = path.as_ref();
    let dim = records.first().map_or(0, |r| r.1.cols());
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut data = BufWriter::new(file);
    let mut index = format!("{CONTEXTUAL_HEADER}\tdim={dim}\n");
    let mut offset = 0u64;
    for (chars, m) in records {
        if m.rows() != chars.len() || m.cols() != dim {
            return Err(Error::Contextual(format!(
                "record for `{}` is {}x{}, expected {}x{dim}",
                chars.iter().collect::<String>(),
                m.rows(),
                m.cols(),
                chars.len()
            )));
        }
        let hash = Sha256::digest(chars.iter().collect::<String>().as_bytes());
        let mut buf = Vec::with_capacity(40 + m.len() * 4);
        buf.extend_from_slice(&hash);
        buf.extend_from_slice(&(m.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
        for &v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        data.write_all(&buf).map_err(|e| Error::io(path, e))?;
        index.push_str(&format!("{}\t{offset}\t{}\n", sentence_key(chars), m.rows()));
        offset += buf.len() as u64;
    }
    data.flush().map_err(|e| Error::io(path, e))?;
    let idx = index_path(path);
    std::fs::write(&idx, index).map_err(|e| Error::io(idx, e))
}

/// In-memory view of a store written by [`write_contextual`].
#[derive(Debug, Clone)]
pub struct ContextualStore {
    dim: usize,
    data: Vec<u8>,
    index: HashMap<String, (usize, usize)>,
}

impl ContextualStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let idx_path = index_path(path);
        let lines = read_lines(&idx_path)?;
        let header = lines.first().map(String::as_str).unwrap_or_default();
        let dim = header
            .strip_prefix(CONTEXTUAL_HEADER)
            .and_then(|rest| rest.trim().strip_prefix("dim="))
            .and_then(|d| d.parse::<usize>().ok())
            .ok_or_else(|| Error::Contextual(format!("bad index header `{header}`")))?;
        let mut index = HashMap::new();
        for (no, line) in lines.iter().enumerate().skip(1) {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Parse {
                line: no + 1,
                message: "expected hash<TAB>offset<TAB>n".into(),
            };
            let mut f = line.split('\t');
            let (Some(h), Some(off), Some(n)) = (f.next(), f.next(), f.next()) else {
                return Err(bad());
            };
            let off: usize = off.parse().map_err(|_| bad())?;
            let n: usize = n.parse().map_err(|_| bad())?;
            if off + 40 + n * dim * 4 > data.len() {
                return Err(Error::Contextual(format!("record at {off} runs past end of data")));
            }
            index.insert(h.to_string(), (off, n));
        }
        Ok(ContextualStore { dim, data, index })
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }
}

impl ContextualProvider for ContextualStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn vectors(&self, chars: &[char]) -> Result<Matrix<f32>> {
        let key = sentence_key(chars);
        let text: String = chars.iter().collect();
        let &(off, n) = self
            .index
            .get(&key)
            .ok_or_else(|| Error::Contextual(format!("no vectors for sentence `{text}`")))?;
        let rec = &self.data[off..];
        let u32_at = |o: usize| u32::from_le_bytes(rec[o..o + 4].try_into().expect("4 bytes")) as usize;
        if rec[..32] != Sha256::digest(text.as_bytes())[..] || u32_at(32) != n || u32_at(36) != self.dim {
            return Err(Error::Contextual(format!("corrupt record for sentence `{text}`")));
        }
        if n != chars.len() {
            return Err(Error::Contextual(format!(
                "record for `{text}` has {n} vectors for {} characters",
                chars.len()
            )));
        }
        let values = rec[40..40 + n * self.dim * 4]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        Ok(Matrix::from_vec(n, self.dim, values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab, LabeledSentence, UNK_INDEX};
    use crate::lexicon::build_freq_table;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn features(store: &mut ParamStore<f64>, mode: TagMode, covered: Vec<bool>) -> WordFeatures {
        let words = vec!["张小凡".to_string(), "青云".to_string()];
        let tags: Vec<String> = match mode {
            TagMode::Plain => vec!["NR".into(), "NS".into()],
            TagMode::Positional => ["NR", "NS"]
                .iter()
                .flat_map(|p| ["b", "m", "e", "s"].iter().map(move |s| format!("{p}_{s}")))
                .collect(),
        };
        let w = store.add("word", Matrix::from_fn(2, 3, |r, c| (r * 3 + c) as f64), false);
        let p = store.add("pos", Matrix::from_fn(tags.len(), 3, |r, c| 100.0 + (r * 3 + c) as f64), true);
        let bil = store.add("bil", Matrix::zeros(2, 3), true);
        WordFeatures::new(
            mode,
            EmbeddingTable { param: w, dim: 3 },
            EmbeddingTable { param: p, dim: 3 },
            bil,
            words,
            covered,
            tags,
        )
    }

    fn span(word: &str, begin: usize, pos: &str) -> MatchedSpan {
        MatchedSpan {
            begin,
            end: begin + word.chars().count() - 1,
            word: word.into(),
            pos: pos.into(),
        }
    }

    #[test]
    fn char_input_dims() {
        let corpus = vec![LabeledSentence::from_words(&["AB", "C"]).unwrap()];
        let vocab = build_vocab(&corpus, 1).unwrap();
        let mut store = ParamStore::<f64>::new();
        let u = store.add_embedding("u", Matrix::filled(vocab.unigrams.len(), 50, 1.0), true, 0);
        let b = store.add_embedding("b", Matrix::filled(vocab.bigrams.len(), 50, 2.0), true, 0);
        let tables = CharTables {
            unigram: Some(EmbeddingTable { param: u, dim: 50 }),
            bigram: EmbeddingTable { param: b, dim: 50 },
        };
        let chars: Vec<char> = "ABZ".chars().collect();
        let x = char_input(&store, &tables, &vocab, &chars, 0, None).unwrap();
        assert_eq!(x.len(), 100);
        assert_eq!(tables.input_dim(None), 100);
        // 'Z' is unknown: the UNK row is used.
        let z = char_input(&store, &tables, &vocab, &chars, 2, None).unwrap();
        assert_eq!(&z[..50], store.value(u).row(UNK_INDEX));

        let ctx = Matrix::<f64>::filled(3, 768, 0.5);
        let x = char_input(&store, &tables, &vocab, &chars, 1, Some(&ctx)).unwrap();
        assert_eq!(x.len(), 818);
        assert_eq!(tables.input_dim(Some(768)), 818);
        assert!(char_input(&store, &tables, &vocab, &chars, 3, None).is_err());
    }

    #[test]
    fn positional_values() {
        let p0 = positional_encoding::<f64>(0, 8).unwrap();
        for k in 0..4 {
            assert_eq!(p0[2 * k], 0.0);
            assert_eq!(p0[2 * k + 1], 1.0);
        }
        let p1 = positional_encoding::<f64>(1, 8).unwrap();
        assert!((p1[0] - 0.841471).abs() < 1e-6);
        assert!(positional_encoding::<f64>(0, 7).is_err());
        let d = 8;
        let k = 1;
        let period = 2.0 * std::f64::consts::PI * 10000f64.powf(2.0 * k as f64 / d as f64);
        // Integer positions cannot hit the period exactly; compare the closed form.
        let angle = |p: f64| (p / 10000f64.powf(2.0 * k as f64 / d as f64)).sin();
        assert!((angle(3.0) - angle(3.0 + period)).abs() < 1e-9);
        for pos in 0..200 {
            assert!(positional_encoding::<f64>(pos, 16)
                .unwrap()
                .iter()
                .all(|v| (-1.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn predict_rule() {
        let mut store = ParamStore::new();
        let f = features(&mut store, TagMode::Plain, vec![true, false]);
        let s = span("张小凡", 0, "NR");
        assert_eq!(f.word_repr_predict(&s, 1).unwrap(), ReprSource::Word(0));
        let oov = span("韩立", 0, "NR");
        assert_eq!(f.word_repr_predict(&oov, 0).unwrap(), ReprSource::Pos(0));
        assert_eq!(f.vector(&store, ReprSource::Pos(0)), &[100.0, 101.0, 102.0]);
        let uncovered = span("青云", 0, "NS");
        assert_eq!(f.word_repr_predict(&uncovered, 1).unwrap(), ReprSource::Pos(1));
        let unknown_tag = span("韩立", 0, "VV");
        assert!(f.word_repr_predict(&unknown_tag, 0).is_err());

        let mut store = ParamStore::new();
        let f = features(&mut store, TagMode::Positional, vec![false, false]);
        assert_eq!(f.word_repr_predict(&oov, 0).unwrap(), ReprSource::Pos(0));
        assert_eq!(f.word_repr_predict(&oov, 1).unwrap(), ReprSource::Pos(2));
        assert_eq!(f.tag_list()[2], "NR_e");
    }

    #[test]
    fn train_rule() {
        let mut store = ParamStore::new();
        let f = features(&mut store, TagMode::Plain, vec![true, true]);
        let freq = build_freq_table(&[vec!["张小凡"; 40], vec!["青云"; 3]]);
        let rare = span("青云", 0, "NS");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let src = f.word_repr_train(&rare, 0, "NS", &freq, 10.0, &mut rng).unwrap();
            assert_eq!(src, ReprSource::Pos(1));
        }
        let common = span("张小凡", 0, "NR");
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| f.word_repr_train(&common, 0, "NR", &freq, 10.0, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(7), draw(7));
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let forced = f
            .word_repr_with_probability(&common, 0, "NR", 0.0, &mut rng)
            .unwrap();
        assert_eq!(forced, f.word_repr_predict(&common, 0).unwrap());
        let missing = span("韩立", 0, "NR");
        assert!(f.word_repr_train(&missing, 0, "NR", &freq, 10.0, &mut rng).is_err());
    }

    #[test]
    fn replacement_rate_monte_carlo() {
        let mut store = ParamStore::new();
        let f = features(&mut store, TagMode::Plain, vec![true, true]);
        let t = 10.0;
        let freq = build_freq_table(&[vec!["张小凡"; 40]]);
        let s = span("张小凡", 0, "NR");
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 10_000;
        let pos = (0..draws)
            .filter(|_| matches!(f.word_repr_train(&s, 0, "NR", &freq, t, &mut rng).unwrap(), ReprSource::Pos(_)))
            .count();
        let rate = pos as f64 / draws as f64;
        assert!((rate - 0.5).abs() <= 0.02, "rate {rate}");
    }

    #[test]
    fn word_context_examples() {
        let w = Matrix::from_fn(2, 3, |r, c| 0.1 * (r + 2 * c) as f64);
        let xc = [1.0, -2.0];
        let one = vec![vec![0.3, 0.2, -0.1]];
        let (h, a) = word_context(&xc, &one, &w).unwrap();
        assert_eq!(a, vec![1.0]);
        assert_eq!(h, one[0]);
        let same = vec![vec![0.3, 0.2, -0.1]; 2];
        let (h, a) = word_context(&xc, &same, &w).unwrap();
        assert!((h[0] - 0.3).abs() < 1e-15 && (a[0] - 0.5).abs() < 1e-15);
        let (h, a) = word_context(&xc, &[], &w).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert!(a.is_empty());
        assert!(word_context(&[1.0], &one, &w).is_err());
        assert!(word_context(&xc, &[vec![1.0]], &w).is_err());

        let spans = vec![vec![1.0, 0.0, 2.0], vec![-1.0, 3.0, 0.5], vec![0.0, 0.0, -4.0]];
        let (h, a) = word_context(&xc, &spans, &w).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(a.iter().all(|&x| x >= 0.0));
        for k in 0..3 {
            let lo = spans.iter().map(|s| s[k]).fold(f64::INFINITY, f64::min);
            let hi = spans.iter().map(|s| s[k]).fold(f64::NEG_INFINITY, f64::max);
            assert!(lo <= h[k] && h[k] <= hi);
        }
    }

    #[test]
    fn augment_dims() {
        let xc = vec![1.0f64; 100];
        let h = vec![0.0f64; 200];
        let x = augment(&xc, &h);
        assert_eq!(x.len(), 300);
        assert_eq!(&x[..100], &xc[..]);
    }

    #[test]
    fn pretrained_loading() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        std::fs::write(&p, "4 2\na 1 2\nb 3 4\nzz 9 9\nc 5 6\na 7 8\n").unwrap();
        let mut table = Matrix::<f64>::filled(5, 2, -1.0);
        let lookup = |s: &str| ["a", "b", "c", "d", "e"].iter().position(|w| *w == s);
        let cov = load_pretrained(&p, &mut table, lookup).unwrap();
        assert_eq!((cov.covered, cov.total, cov.duplicates), (3, 5, 1));
        assert_eq!(table.row(0), &[7.0, 8.0]);
        assert_eq!(table.row(3), &[-1.0, -1.0]);

        std::fs::write(&p, "2 3\na 1 2 3\n").unwrap();
        assert!(load_pretrained(&p, &mut table, lookup).is_err());
        std::fs::write(&p, "a 1 2 3\n").unwrap();
        assert!(load_pretrained(&p, &mut table, lookup).is_err());
    }

    #[test]
    fn contextual_store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ctx.bin");
        let s1: Vec<char> = "韩立也".chars().collect();
        let s2: Vec<char> = "在".chars().collect();
        let m1 = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f32 * 0.5);
        let m2 = Matrix::from_fn(1, 4, |_, c| -(c as f32));
        write_contextual(&p, &[(s1.clone(), m1.clone()), (s2.clone(), m2.clone())]).unwrap();
        let store = ContextualStore::open(&p).unwrap();
        assert_eq!(store.dim(), 4);
        assert_eq!(store.vectors(&s1).unwrap(), m1);
        assert_eq!(store.vectors(&s2).unwrap(), m2);
        let err = store.vectors(&"没有".chars().collect::<Vec<_>>()).unwrap_err();
        assert!(err.to_string().contains("没有"));
    }
}
