use sancws::corpus::{build_vocab, LabeledSentence};
use sancws::encoder::{EncoderConfig, LstmConfig, SanConfig};
use sancws::lexicon::Lexicon;
use sancws::train::{check_gradients, GradCheckOptions, SegmenterObjective};
use sancws::{Adaptation, ModelConfig, Segmenter};

fn sentences() -> Vec<LabeledSentence> {
    ["韩立 在 青云", "张小凡 也"]
        .iter()
        .map(|l| LabeledSentence::from_words(&l.split(' ').collect::<Vec<_>>()).unwrap())
        .collect()
}

fn lexicon() -> Lexicon {
    Lexicon::from_entries([("韩立", "NR"), ("青云", "NS"), ("张小凡", "NR"), ("小凡", "NR"), ("在", "P")])
        .unwrap()
        .0
}

fn tiny_san(window: Option<usize>) -> EncoderConfig {
    EncoderConfig::San(
        SanConfig {
            layers: 2,
            heads: 2,
            d_model: 8,
            d_inner: 8,
            head_dim: 4,
            window,
            ..SanConfig::default()
        }
        .without_dropout(),
    )
}

fn check(config: ModelConfig, sample: &[LabeledSentence]) -> f64 {
    let vocab = build_vocab(sample, 1).unwrap();
    let mut seg = Segmenter::<f64>::new(config, vocab, Some(lexicon()), 11).unwrap();
    let mut obj = SegmenterObjective {
        segmenter: &mut seg,
        sample,
        l2: 1e-3,
    };
    let report = check_gradients(&mut obj, &GradCheckOptions::default()).unwrap();
    assert!(report.checked > 100);
    report.max_rel_error
}

#[test]
fn san_crf_with_word_attention() {
    for adaptation in [Adaptation::T, Adaptation::Tb] {
        let cfg = ModelConfig {
            encoder: tiny_san(Some(1)),
            char_emb_dim: 4,
            bigram_emb_dim: 4,
            word_emb_dim: 4,
            adaptation,
            ..ModelConfig::default()
        };
        let err = check(cfg, &sentences()[..1]);
        assert!(err < 1e-4, "{adaptation}: {err}");
    }
}

#[test]
fn bilstm_crf() {
    let cfg = ModelConfig {
        encoder: EncoderConfig::BiLstm(LstmConfig {
            layers: 2,
            hidden: 3,
            input_dropout: 0.0,
        }),
        char_emb_dim: 3,
        bigram_emb_dim: 3,
        word_emb_dim: 4,
        adaptation: Adaptation::Off,
        bmes_constraints: true,
        ..ModelConfig::default()
    };
    let err = check(cfg, &sentences());
    assert!(err < 1e-4, "{err}");
}
