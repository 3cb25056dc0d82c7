//! The full segmenter: character features, optional word attention, encoder,
//! emission projection and CRF.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::corpus::{from_bmes, Label, LabeledSentence, Vocab, PAD_INDEX};
use crate::crf::{self, Transitions, NUM_LABELS, NUM_STATES};
use crate::encoder::{glorot, DropoutRng, EncoderConfig, EncoderParams};
use crate::error::{Error, Result};
use crate::eval::spans_of;
use crate::lexicon::{all_spans, match_spans, replacement_probability, Lexicon, MatchedSpan, TagMode, WordFreqTable};
use crate::repr::{
    load_pretrained, positional_matrix, CharTables, ContextualProvider, Coverage, EmbeddingTable, ReprSource,
    WordFeatures,
};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Adaptation {
    Off,
    /// Plain POS tags.
    T,
    /// POS tags decorated with the character position inside the word.
    Tb,
}

impl Adaptation {
    pub fn tag_mode(self) -> Option<TagMode> {
        match self {
            Adaptation::Off => None,
            Adaptation::T => Some(TagMode::Plain),
            Adaptation::Tb => Some(TagMode::Positional),
        }
    }
}

impl fmt::Display for Adaptation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Adaptation::Off => "off",
            Adaptation::T => "t",
            Adaptation::Tb => "t_b",
        })
    }
}

impl FromStr for Adaptation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "off" => Ok(Adaptation::Off),
            "t" => Ok(Adaptation::T),
            "t_b" | "tb" => Ok(Adaptation::Tb),
            _ => Err(Error::invalid(format!("unknown adaptation mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub char_emb_dim: usize,
    pub bigram_emb_dim: usize,
    /// Width of both word and POS embeddings.
    pub word_emb_dim: usize,
    /// When set, contextual vectors of this width replace unigram embeddings.
    pub contextual_dim: Option<usize>,
    pub adaptation: Adaptation,
    pub max_word_len: usize,
    pub replace_threshold: f64,
    pub bmes_constraints: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder: EncoderConfig::San(Default::default()),
            char_emb_dim: 50,
            bigram_emb_dim: 50,
            word_emb_dim: 200,
            contextual_dim: None,
            adaptation: Adaptation::Off,
            max_word_len: 4,
            replace_threshold: 10.0,
            bmes_constraints: false,
        }
    }
}

impl ModelConfig {
    /// Width of the character vector before word attention.
    pub fn char_dim(&self) -> usize {
        self.contextual_dim.unwrap_or(self.char_emb_dim) + self.bigram_emb_dim
    }

    /// Width of the encoder input.
    pub fn input_dim(&self) -> usize {
        match self.adaptation {
            Adaptation::Off => self.char_dim(),
            _ => self.char_dim() + self.word_emb_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if self.bigram_emb_dim == 0 || self.word_emb_dim == 0 || self.max_word_len == 0 {
            return Err(Error::invalid("embedding dimensions and max_word_len must be positive"));
        }
        if self.contextual_dim.is_none() && self.char_emb_dim == 0 {
            return Err(Error::invalid("char_emb_dim must be positive"));
        }
        if self.contextual_dim == Some(0) {
            return Err(Error::invalid("contextual_dim must be positive"));
        }
        if self.encoder.uses_positional_encoding() && self.char_dim() % 2 != 0 {
            return Err(Error::invalid(format!(
                "character vector width {} must be even for positional encoding",
                self.char_dim()
            )));
        }
        if !(self.replace_threshold > 0.0) {
            return Err(Error::invalid("replace_threshold must be positive"));
        }
        Ok(())
    }
}

pub const UNIGRAM_TABLE: &str = "embed.unigram";
pub const BIGRAM_TABLE: &str = "embed.bigram";
pub const WORD_TABLE: &str = "embed.word";
pub const POS_TABLE: &str = "embed.pos";
pub const BILINEAR: &str = "word_attention.bilinear";
pub const EMISSION_W: &str = "emission.w";
pub const EMISSION_B: &str = "emission.b";
pub const TRANSITIONS: &str = "crf.transitions";

/// Randomness and gold information used while building a training loss.
pub struct TrainDraws<'a> {
    pub dropout: DropoutRng<'a>,
    /// Gold word frequencies and the draw source for POS replacement.
    pub replacement: Option<(&'a WordFreqTable, &'a mut dyn RngCore)>,
}

impl<'a> TrainDraws<'a> {
    pub fn none() -> Self {
        TrainDraws {
            dropout: None,
            replacement: None,
        }
    }
}

pub struct Segmenter<T: Scalar> {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore<T>,
    tables: CharTables,
    words: Option<WordFeatures>,
    lexicon: Option<Lexicon>,
    encoder: EncoderParams,
    emission_w: ParamId,
    emission_b: ParamId,
    transitions: ParamId,
    contextual: Option<Arc<dyn ContextualProvider>>,
}

impl<T: Scalar> fmt::Debug for Segmenter<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Segmenter")
            .field("config", &self.config)
            .field("parameters", &self.store.len())
            .field("lexicon", &self.lexicon.as_ref().map(Lexicon::len))
            .finish()
    }
}

impl<T: Scalar> Segmenter<T> {
    /// Fresh model. Adaptation modes need a lexicon, whose words become the
    /// rows of the (frozen) word table and whose tags the POS inventory.
    pub fn new(config: ModelConfig, vocab: Vocab, lexicon: Option<Lexicon>, seed: u64) -> Result<Self> {
        let (word_list, tag_list) = match (config.adaptation.tag_mode(), &lexicon) {
            (None, _) => (Vec::new(), Vec::new()),
            (Some(mode), Some(lex)) => {
                let mut words: Vec<String> = lex.entries().map(|(w, _)| w.to_string()).collect();
                words.sort();
                (words, lex.tags(mode).to_vec())
            }
            (Some(_), None) => {
                return Err(Error::invalid(format!(
                    "adaptation mode {} needs a lexicon",
                    config.adaptation
                )))
            }
        };
        let covered = vec![false; word_list.len()];
        let mut seg = Self::from_parts(config, vocab, word_list, covered, tag_list, seed)?;
        seg.lexicon = lexicon;
        Ok(seg)
    }

    /// Model skeleton with freshly initialized parameters.
    pub fn from_parts(
        config: ModelConfig,
        vocab: Vocab,
        word_list: Vec<String>,
        covered: Vec<bool>,
        tag_list: Vec<String>,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let unigram = match config.contextual_dim {
            Some(_) => None,
            None => {
                let d = config.char_emb_dim;
                let table = glorot(vocab.unigrams.len(), d, &mut rng);
                Some(EmbeddingTable {
                    param: store.add_embedding(UNIGRAM_TABLE, table, true, PAD_INDEX),
                    dim: d,
                })
            }
        };
        let d = config.bigram_emb_dim;
        let bigram_table = glorot(vocab.bigrams.len(), d, &mut rng);
        let bigram = EmbeddingTable {
            param: store.add_embedding(BIGRAM_TABLE, bigram_table, true, PAD_INDEX),
            dim: d,
        };
        let tables = CharTables { unigram, bigram };
        let words = match config.adaptation.tag_mode() {
            None => None,
            Some(mode) => {
                if tag_list.is_empty() {
                    return Err(Error::invalid("lexicon has no POS tags"));
                }
                let dw = config.word_emb_dim;
                let word_table = EmbeddingTable {
                    param: store.add(WORD_TABLE, glorot(word_list.len().max(1), dw, &mut rng), false),
                    dim: dw,
                };
                let pos_table = EmbeddingTable {
                    param: store.add(POS_TABLE, glorot(tag_list.len(), dw, &mut rng), true),
                    dim: dw,
                };
                let bilinear = store.add(BILINEAR, glorot(config.char_dim(), dw, &mut rng), true);
                Some(WordFeatures::new(mode, word_table, pos_table, bilinear, word_list, covered, tag_list))
            }
        };
        let encoder = EncoderParams::init(&mut store, config.input_dim(), &config.encoder, &mut rng);
        let d_enc = config.encoder.output_dim();
        let emission_w = store.add(EMISSION_W, glorot(d_enc, NUM_LABELS, &mut rng), true);
        let emission_b = store.add(EMISSION_B, Matrix::zeros(1, NUM_LABELS), true);
        let transitions = store.add(TRANSITIONS, Matrix::zeros(NUM_STATES, NUM_STATES), true);
        Ok(Segmenter {
            config,
            vocab,
            store,
            tables,
            words,
            lexicon: None,
            encoder,
            emission_w,
            emission_b,
            transitions,
            contextual: None,
        })
    }

    pub fn word_features(&self) -> Option<&WordFeatures> {
        self.words.as_ref()
    }

    pub fn lexicon(&self) -> Option<&Lexicon> {
        self.lexicon.as_ref()
    }

    /// Replaces the lexicon used for matching. The word table and POS
    /// inventory stay as trained.
    pub fn set_lexicon(&mut self, lexicon: Option<Lexicon>) {
        self.lexicon = lexicon;
    }

    pub fn set_contextual(&mut self, provider: Option<Arc<dyn ContextualProvider>>) -> Result<()> {
        if let (Some(p), Some(d)) = (&provider, self.config.contextual_dim) {
            if p.dim() != d {
                return Err(Error::Contextual(format!(
                    "provider width {} but model expects {d}",
                    p.dim()
                )));
            }
        }
        self.contextual = provider;
        Ok(())
    }

    pub fn set_word_coverage(&mut self, covered: Vec<bool>) -> Result<()> {
        let words = self
            .words
            .as_mut()
            .ok_or_else(|| Error::invalid("model has no word table"))?;
        if covered.len() != words.word_list().len() {
            return Err(Error::invalid("coverage length does not match the word table"));
        }
        words.set_covered(covered);
        Ok(())
    }

    /// Loads pretrained word vectors into the word table.
    pub fn load_word_vectors(&mut self, path: impl AsRef<Path>) -> Result<Coverage> {
        let words = self
            .words
            .as_mut()
            .ok_or_else(|| Error::invalid("word vectors given but adaptation is off"))?;
        let table = self.store.value_mut(words.word_table.param);
        let cov = load_pretrained(path, table, |w| words.word_row(w))?;
        let mut covered = vec![false; words.word_list().len()];
        for &r in &cov.covered_rows {
            covered[r] = true;
        }
        words.set_covered(covered);
        Ok(cov)
    }

    /// Loads pretrained character vectors into the unigram table.
    pub fn load_char_vectors(&mut self, path: impl AsRef<Path>) -> Result<Coverage> {
        let table = self
            .tables
            .unigram
            .ok_or_else(|| Error::invalid("model uses contextual vectors instead of unigrams"))?;
        let vocab = &self.vocab;
        let lookup = |s: &str| {
            let mut it = s.chars();
            match (it.next(), it.next()) {
                (Some(c), None) if vocab.unigrams.contains(&c) => Some(vocab.unigrams.get(&c)),
                _ => None,
            }
        };
        let cov = load_pretrained(path, self.store.value_mut(table.param), lookup)?;
        self.store.value_mut(table.param).row_mut(PAD_INDEX).fill(T::zero());
        Ok(cov)
    }

    fn contextual_rows(&self, chars: &[char]) -> Result<Option<Matrix<T>>> {
        if self.config.contextual_dim.is_none() {
            return Ok(None);
        }
        let provider = self.contextual.as_ref().ok_or_else(|| {
            Error::Contextual("model expects contextual vectors but no provider is set".into())
        })?;
        let m = provider.vectors(chars)?;
        if m.rows() != chars.len() {
            return Err(Error::Contextual(format!(
                "{} vectors for {} characters of `{}`",
                m.rows(),
                chars.len(),
                chars.iter().collect::<String>()
            )));
        }
        Ok(Some(m.cast()))
    }

    /// `x~` for every character, as a graph node.
    fn char_node(&self, g: &mut Graph<'_, T>, chars: &[char]) -> Result<NodeId> {
        let bigram_ids = self.vocab.bigram_ids(chars);
        let bigram = g.embed(self.tables.bigram.param, &bigram_ids);
        let first = match (self.contextual_rows(chars)?, self.tables.unigram) {
            (Some(ctx), _) => g.constant(ctx),
            (None, Some(u)) => g.embed(u.param, &self.vocab.unigram_ids(chars)),
            (None, None) => unreachable!("validated configuration"),
        };
        Ok(g.hcat(&[first, bigram]))
    }

    /// Per-character span representations as `(char, source)` pairs.
    fn span_sources(
        &self,
        words: &WordFeatures,
        chars: &[char],
        gold: Option<&[usize]>,
        replacement: &mut Option<(&WordFreqTable, &mut dyn RngCore)>,
    ) -> Result<Vec<(usize, ReprSource)>> {
        let Some(lex) = &self.lexicon else {
            return Ok(Vec::new());
        };
        let max_len = self.config.max_word_len;
        let per_char = match_spans(chars, lex, max_len)?;
        let mut replaced: HashSet<(usize, usize)> = HashSet::new();
        if let (Some(gold), Some((freq, rng))) = (gold, replacement.as_mut()) {
            let labels: Vec<Label> = gold.iter().map(|&l| Label::from_index(l).expect("label")).collect();
            let gold_words = from_bmes(chars, &labels);
            let gold_spans: HashSet<(usize, usize)> = spans_of(&gold_words).into_iter().collect();
            for span in all_spans(chars, lex, max_len) {
                if !gold_spans.contains(&(span.begin, span.end + 1)) {
                    continue;
                }
                let f = freq.get(&span.word).unwrap_or(1);
                let p = replacement_probability(f, self.config.replace_threshold)?;
                let rb: f64 = rng.gen();
                if rb < p {
                    replaced.insert((span.begin, span.end));
                }
            }
        }
        let mut out = Vec::new();
        for (i, spans) in per_char.iter().enumerate() {
            for span in spans {
                let src = if replaced.contains(&(span.begin, span.end)) {
                    words.pos_repr(span, i, &span.pos)?
                } else {
                    words.word_repr_predict(span, i)?
                };
                out.push((i, src));
            }
        }
        Ok(out)
    }

    /// Word attention context `H` (`n x word_emb_dim`) for the character rows `x_c`.
    fn word_context_node(
        &self,
        g: &mut Graph<'_, T>,
        words: &WordFeatures,
        x_c: NodeId,
        pairs: &[(usize, ReprSource)],
    ) -> Result<NodeId> {
        let n = g.shape(x_c).0;
        if pairs.is_empty() {
            return Ok(g.constant(Matrix::zeros(n, words.word_table.dim)));
        }
        let word_rows: Vec<usize> = pairs
            .iter()
            .filter_map(|(_, s)| match s {
                ReprSource::Word(r) => Some(*r),
                ReprSource::Pos(_) => None,
            })
            .collect();
        let pos_rows: Vec<usize> = pairs
            .iter()
            .filter_map(|(_, s)| match s {
                ReprSource::Pos(r) => Some(*r),
                ReprSource::Word(_) => None,
            })
            .collect();
        let (mut wk, mut pk) = (0, word_rows.len());
        let order: Vec<usize> = pairs
            .iter()
            .map(|(_, s)| match s {
                ReprSource::Word(_) => {
                    wk += 1;
                    wk - 1
                }
                ReprSource::Pos(_) => {
                    pk += 1;
                    pk - 1
                }
            })
            .collect();
        let mut parts = Vec::new();
        if !word_rows.is_empty() {
            parts.push(g.embed(words.word_table.param, &word_rows));
        }
        if !pos_rows.is_empty() {
            parts.push(g.embed(words.pos_table.param, &pos_rows));
        }
        let stacked = if parts.len() == 1 { parts[0] } else { g.vcat(&parts) };
        let reprs = g.gather(stacked, &order);
        let bilinear = g.param(words.bilinear);
        let projected = g.matmul(x_c, bilinear);
        let scores = g.matmul_nt(projected, reprs);
        let mask = Matrix::from_fn(n, pairs.len(), |i, p| {
            if pairs[p].0 == i {
                T::zero()
            } else {
                T::neg_infinity()
            }
        });
        let alpha = g.masked_softmax(scores, Some(&mask), true)?;
        Ok(g.matmul(alpha, reprs))
    }

    /// Emission scores node (`n x 4`).
    fn emission_node(
        &self,
        g: &mut Graph<'_, T>,
        chars: &[char],
        gold: Option<&[usize]>,
        draws: &mut TrainDraws<'_>,
    ) -> Result<NodeId> {
        if chars.is_empty() {
            return Err(Error::invalid("cannot score an empty sentence"));
        }
        let mut x = self.char_node(g, chars)?;
        if self.config.encoder.uses_positional_encoding() {
            let pe = g.constant(positional_matrix(chars.len(), self.config.char_dim())?);
            x = g.add(x, pe);
        }
        if let Some(words) = &self.words {
            let pairs = self.span_sources(words, chars, gold, &mut draws.replacement)?;
            let h = self.word_context_node(g, words, x, &pairs)?;
            x = g.hcat(&[x, h]);
        }
        let enc = self.encoder.encode(g, x, &self.config.encoder, &mut draws.dropout)?;
        let w = g.param(self.emission_w);
        let b = g.param(self.emission_b);
        let em = g.matmul(enc, w);
        Ok(g.add_row(em, b))
    }

    /// Sentence NLL as a `1 x 1` node.
    pub fn loss_node(
        &self,
        g: &mut Graph<'_, T>,
        sentence: &LabeledSentence,
        draws: &mut TrainDraws<'_>,
    ) -> Result<NodeId> {
        let gold = sentence.label_indices();
        let em = self.emission_node(g, &sentence.chars, Some(&gold), draws)?;
        let tr = g.param(self.transitions);
        g.crf_nll(em, tr, &gold, self.config.bmes_constraints)
    }

    /// Deterministic NLL (no dropout, no replacement).
    pub fn nll(&self, sentence: &LabeledSentence) -> Result<T> {
        let mut g = Graph::new(&self.store);
        let loss = self.loss_node(&mut g, sentence, &mut TrainDraws::none())?;
        Ok(g.value(loss).get(0, 0))
    }

    pub fn emissions(&self, chars: &[char]) -> Result<Matrix<T>> {
        let mut g = Graph::new(&self.store);
        let em = self.emission_node(&mut g, chars, None, &mut TrainDraws::none())?;
        Ok(g.value(em).clone())
    }

    pub fn transitions(&self) -> Result<Transitions<T>> {
        let t = Transitions::from_matrix(self.store.value(self.transitions).clone())?;
        Ok(if self.config.bmes_constraints {
            crf::constrained_transitions(&t)
        } else {
            t
        })
    }

    pub fn predict_labels(&self, chars: &[char]) -> Result<Vec<Label>> {
        if chars.is_empty() {
            return Ok(Vec::new());
        }
        let (labels, _) = crf::viterbi(&self.emissions(chars)?, &self.transitions()?)?;
        Ok(labels
            .into_iter()
            .map(|l| Label::from_index(l).expect("viterbi label"))
            .collect())
    }

    pub fn segment_chars(&self, chars: &[char]) -> Result<Vec<String>> {
        let labels = self.predict_labels(chars)?;
        Ok(from_bmes(chars, &labels))
    }

    pub fn segment(&self, text: &str) -> Result<Vec<String>> {
        let chars: Vec<char> = text.chars().collect();
        self.segment_chars(&chars)
    }

    /// Spans matched in `chars` by the current lexicon (empty without one).
    pub fn matched_spans(&self, chars: &[char]) -> Vec<MatchedSpan> {
        match &self.lexicon {
            Some(lex) => all_spans(chars, lex, self.config.max_word_len),
            None => Vec::new(),
        }
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.store.find(name)
    }

    pub fn transitions_param(&self) -> ParamId {
        self.transitions
    }

    pub fn encoder_params(&self) -> &EncoderParams {
        &self.encoder
    }

    /// Zeroes every parameter (a uniform model).
    pub fn zero_parameters(&mut self) {
        for id in self.store.ids().collect::<Vec<_>>() {
            self.store.value_mut(id).data_mut().fill(T::zero());
        }
    }

    /// Contextual provider currently attached.
    pub fn contextual(&self) -> Option<&Arc<dyn ContextualProvider>> {
        self.contextual.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocab;
    use crate::encoder::{LstmConfig, SanConfig};

    fn corpus() -> Vec<LabeledSentence> {
        ["韩立 也 在 青云山", "张小凡 在 青云山 上", "我 在"]
            .iter()
            .map(|l| LabeledSentence::from_words(&l.split(' ').collect::<Vec<_>>()).unwrap())
            .collect()
    }

    fn lexicon() -> Lexicon {
        Lexicon::from_entries([("韩立", "NR"), ("青云山", "NS"), ("张小凡", "NR"), ("云山", "NS")])
            .unwrap()
            .0
    }

    fn tiny(adaptation: Adaptation, encoder: EncoderConfig) -> ModelConfig {
        ModelConfig {
            encoder,
            char_emb_dim: 4,
            bigram_emb_dim: 4,
            word_emb_dim: 6,
            adaptation,
            ..ModelConfig::default()
        }
    }

    fn san() -> EncoderConfig {
        EncoderConfig::San(
            SanConfig {
                layers: 1,
                heads: 2,
                d_model: 8,
                d_inner: 8,
                head_dim: 4,
                window: Some(2),
                ..SanConfig::default()
            }
            .without_dropout(),
        )
    }

    #[test]
    fn zero_model_is_uniform() {
        let data = corpus();
        let vocab = build_vocab(&data, 1).unwrap();
        for adaptation in [Adaptation::Off, Adaptation::T, Adaptation::Tb] {
            let mut seg = Segmenter::<f64>::new(tiny(adaptation, san()), vocab.clone(), Some(lexicon()), 1).unwrap();
            seg.zero_parameters();
            for s in &data {
                let expect = s.len() as f64 * 4f64.ln();
                assert!((seg.nll(s).unwrap() - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shapes_and_segmentation_partition() {
        let data = corpus();
        let vocab = build_vocab(&data, 1).unwrap();
        let lstm = EncoderConfig::BiLstm(LstmConfig {
            layers: 1,
            hidden: 3,
            input_dropout: 0.0,
        });
        for enc in [san(), lstm] {
            let seg = Segmenter::<f64>::new(tiny(Adaptation::Tb, enc), vocab.clone(), Some(lexicon()), 2).unwrap();
            let em = seg.emissions(&data[0].chars).unwrap();
            assert_eq!(em.shape(), (data[0].len(), 4));
            let words = seg.segment("韩立在未知的地方").unwrap();
            assert_eq!(words.concat(), "韩立在未知的地方");
            assert!(seg.segment("").unwrap().is_empty());
            assert_eq!(seg.segment("我").unwrap(), vec!["我"]);
        }
    }

    #[test]
    fn adaptation_requires_lexicon() {
        let vocab = build_vocab(&corpus(), 1).unwrap();
        assert!(Segmenter::<f64>::new(tiny(Adaptation::T, san()), vocab, None, 0).is_err());
    }

    #[test]
    fn word_attention_changes_only_with_matches() {
        let data = corpus();
        let vocab = build_vocab(&data, 1).unwrap();
        let seg = Segmenter::<f64>::new(tiny(Adaptation::T, san()), vocab.clone(), Some(lexicon()), 3).unwrap();
        let mut bare = Segmenter::<f64>::new(tiny(Adaptation::T, san()), vocab, Some(lexicon()), 3).unwrap();
        bare.set_lexicon(Some(Lexicon::empty()));
        let chars: Vec<char> = "我在".chars().collect();
        assert_eq!(seg.emissions(&chars).unwrap(), bare.emissions(&chars).unwrap());
        let chars: Vec<char> = "韩立在".chars().collect();
        assert_ne!(seg.emissions(&chars).unwrap(), bare.emissions(&chars).unwrap());
    }
}
