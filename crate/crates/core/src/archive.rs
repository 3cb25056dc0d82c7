//! Single-file model archive.
//!
//! Layout (little-endian): magic `SANCWSAR`, `u32` version, `u32` section
//! count, sections as `(u32 name length, name, u64 payload length, payload)`,
//! then `u32` tensor count and tensors as `(u32 name length, name, u32 rows,
//! u32 cols, rows*cols f64)`. Tensors follow parameter creation order.

use std::path::Path;

use crate::config::RunConfig;
use crate::corpus::{ItemIndex, Vocab};
use crate::error::{Error, Result};
use crate::model::Segmenter;
use crate::scalar::Scalar;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"SANCWSAR";
pub const VERSION: u32 = 1;

const SECTIONS: [&str; 7] = [
    "config",
    "vocab.unigram",
    "vocab.bigram",
    "vocab.words",
    "coverage",
    "pos_tags",
    "lexicon_fingerprint",
];

pub struct ModelArchive<T: Scalar> {
    pub config: RunConfig,
    pub segmenter: Segmenter<T>,
    /// Fingerprint of the lexicon the model was trained with.
    pub lexicon_fingerprint: Option<String>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Archive(format!("{v} does not fit in u32")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_name(out: &mut Vec<u8>, name: &str) -> Result<()> {
    put_u32(out, name.len())?;
    out.extend_from_slice(name.as_bytes());
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.data.len())
            .ok_or_else(|| Error::Archive(format!("truncated at byte {}", self.pos)))?;
        let s = &self.data[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Archive("length overflow".into()))
    }

    fn text(&mut self, n: usize) -> Result<&'a str> {
        std::str::from_utf8(self.take(n)?).map_err(|_| Error::Archive("section is not UTF-8".into()))
    }

    fn name(&mut self) -> Result<&'a str> {
        let n = self.u32()?;
        self.text(n)
    }
}

fn lines_of(text: &str) -> Vec<String> {
    text.lines().map(str::to_string).collect()
}

impl<T: Scalar> ModelArchive<T> {
    pub fn new(config: RunConfig, segmenter: Segmenter<T>) -> Self {
        let lexicon_fingerprint = segmenter.lexicon().map(|l| l.fingerprint());
        ModelArchive {
            config,
            segmenter,
            lexicon_fingerprint,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let seg = &self.segmenter;
        let (words, covered, tags) = match seg.word_features() {
            Some(w) => (
                w.word_list().join("\n"),
                w.covered().iter().map(|&c| if c { '1' } else { '0' }).collect(),
                w.tag_list().join("\n"),
            ),
            None => (String::new(), String::new(), String::new()),
        };
        let payloads = [
            self.config.to_text(),
            seg.vocab.unigrams.to_text("unigram"),
            seg.vocab.bigrams.to_text("bigram"),
            words,
            covered,
            tags,
            self.lexicon_fingerprint.clone().unwrap_or_default(),
        ];
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_u32(&mut out, SECTIONS.len())?;
        for (name, payload) in SECTIONS.iter().zip(&payloads) {
            put_name(&mut out, name)?;
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload.as_bytes());
        }
        put_u32(&mut out, seg.store.len())?;
        for (_, p) in seg.store.iter() {
            put_name(&mut out, &p.name)?;
            put_u32(&mut out, p.value.rows())?;
            put_u32(&mut out, p.value.cols())?;
            for &v in p.value.data() {
                out.extend_from_slice(&v.as_f64().to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let mut r = Reader { data, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Archive("not a model archive (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Archive(format!(
                "unsupported archive version {version} (expected {VERSION})"
            )));
        }
        let count = r.u32()?;
        let mut sections = std::collections::HashMap::new();
        for _ in 0..count {
            let name = r.name()?.to_string();
            let len = r.u64()?;
            sections.insert(name, r.text(len)?.to_string());
        }
        let section = |name: &str| {
            sections
                .get(name)
                .map(String::as_str)
                .ok_or_else(|| Error::Archive(format!("missing section `{name}`")))
        };
        let config = RunConfig::parse(section("config")?)?;
        let vocab = Vocab {
            unigrams: ItemIndex::from_text(section("vocab.unigram")?, "unigram")?,
            bigrams: ItemIndex::from_text(section("vocab.bigram")?, "bigram")?,
            min_freq: config.min_freq_unigram,
        };
        let words = lines_of(section("vocab.words")?);
        let covered: Vec<bool> = section("coverage")?.chars().map(|c| c == '1').collect();
        if covered.len() != words.len() {
            return Err(Error::Archive("coverage does not match the word list".into()));
        }
        let tags = lines_of(section("pos_tags")?);
        let fingerprint = section("lexicon_fingerprint")?;
        let mut segmenter = Segmenter::from_parts(config.model_config(), vocab, words, covered, tags, 0)?;
        let tensors = r.u32()?;
        if tensors != segmenter.store.len() {
            return Err(Error::Archive(format!(
                "{tensors} tensors but the configuration needs {}",
                segmenter.store.len()
            )));
        }
        for _ in 0..tensors {
            let name = r.name()?.to_string();
            let (rows, cols) = (r.u32()?, r.u32()?);
            let id = segmenter
                .param_id(&name)
                .ok_or_else(|| Error::Archive(format!("unexpected tensor `{name}`")))?;
            let expected = segmenter.store.value(id).shape();
            if expected != (rows, cols) {
                return Err(Error::Archive(format!(
                    "tensor `{name}` is {rows}x{cols}, expected {}x{}",
                    expected.0, expected.1
                )));
            }
            let bytes = r.take(rows * cols * 8)?;
            let values = bytes
                .chunks_exact(8)
                .map(|b| T::of(f64::from_le_bytes(b.try_into().expect("8 bytes"))))
                .collect();
            *segmenter.store.value_mut(id) = Matrix::from_vec(rows, cols, values);
        }
        if r.pos != data.len() {
            return Err(Error::Archive("trailing bytes after tensors".into()));
        }
        Ok(ModelArchive {
            config,
            segmenter,
            lexicon_fingerprint: (!fingerprint.is_empty()).then(|| fingerprint.to_string()),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocab_with, LabeledSentence};
    use crate::lexicon::Lexicon;

    fn sample() -> (RunConfig, Segmenter<f64>) {
        let cfg = RunConfig::parse(
            "char_emb_dim = 4\nbigram_emb_dim = 4\nword_emb_dim = 6\nsan_layers = 1\nsan_heads = 2\n\
             san_d_model = 8\nsan_d_inner = 8\nsan_head_dim = 4\nadaptation = t_b",
        )
        .unwrap();
        let data = vec![LabeledSentence::from_words(&["韩立", "在", "青云山"]).unwrap()];
        let vocab = build_vocab_with(&data, 1, 1).unwrap();
        let lex = Lexicon::from_entries([("韩立", "NR"), ("青云山", "NS")]).unwrap().0;
        let seg = Segmenter::new(cfg.model_config(), vocab, Some(lex), 7).unwrap();
        (cfg, seg)
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let (cfg, seg) = sample();
        let archive = ModelArchive::new(cfg, seg);
        let bytes = archive.to_bytes().unwrap();
        let loaded = ModelArchive::<f64>::from_bytes(&bytes).unwrap();
        assert_eq!(loaded.to_bytes().unwrap(), bytes);
        assert_eq!(loaded.lexicon_fingerprint, archive.lexicon_fingerprint);
        let text: Vec<char> = "韩立在青云山".chars().collect();
        let mut reloaded = loaded.segmenter;
        reloaded.set_lexicon(archive.segmenter.lexicon().cloned());
        assert_eq!(
            reloaded.emissions(&text).unwrap(),
            archive.segmenter.emissions(&text).unwrap()
        );
    }

    #[test]
    fn rejects_bad_input() {
        let (cfg, seg) = sample();
        let mut bytes = ModelArchive::new(cfg, seg).to_bytes().unwrap();
        assert!(ModelArchive::<f64>::from_bytes(&bytes[..bytes.len() - 3]).is_err());
        bytes[8] = 2;
        let err = ModelArchive::<f64>::from_bytes(&bytes).err().unwrap();
        assert!(err.to_string().contains("version 2"));
        assert!(ModelArchive::<f64>::from_bytes(b"NOTANARCHIVE").is_err());
    }
}
