use proptest::prelude::*;
use sancws::autodiff::{Gradients, Graph, ParamStore};
use sancws::config::{EncoderKind, OptimizerKind};
use sancws::corpus::{build_vocab, LabeledSentence};
use sancws::lexicon::Lexicon;
use sancws::model::TrainDraws;
use sancws::train::{add_l2_gradient, train_loop, EpochRecord, OptimizerConfig, OptimizerState, TrainConfig};
use sancws::{Adaptation, RunConfig, Segmenter64};

fn corpus() -> Vec<LabeledSentence> {
    [
        "韩立 在 青云山 修炼",
        "张小凡 也 在 青云",
        "韩立 和 张小凡",
        "青云山 很 高",
        "他 在 修炼",
        "小凡 也 修炼",
    ]
    .iter()
    .map(|l| LabeledSentence::from_words(&l.split(' ').collect::<Vec<_>>()).unwrap())
    .collect()
}

fn lexicon() -> Lexicon {
    Lexicon::from_entries([
        ("韩立", "NR"),
        ("张小凡", "NR"),
        ("小凡", "NR"),
        ("青云", "NS"),
        ("青云山", "NS"),
        ("修炼", "VV"),
        ("在", "P"),
    ])
    .unwrap()
    .0
}

fn tiny() -> RunConfig {
    RunConfig {
        char_emb_dim: 4,
        bigram_emb_dim: 4,
        word_emb_dim: 4,
        san_layers: 1,
        san_heads: 2,
        san_head_dim: 4,
        san_d_model: 8,
        san_d_inner: 8,
        window: Some(2),
        lstm_hidden: 4,
        batch_size: 3,
        warmup_steps: 10,
        adaptation: Adaptation::Tb,
        ..RunConfig::default()
    }
}

fn model(cfg: &RunConfig) -> Segmenter64 {
    let sentences = corpus();
    let vocab = build_vocab(&sentences, 1).unwrap();
    Segmenter64::new(cfg.model_config(), vocab, Some(lexicon()), cfg.seed).unwrap()
}

fn sq_norm(store: &ParamStore<f64>) -> f64 {
    store.iter().map(|(_, p)| p.value.sq_norm()).sum()
}

fn values(seg: &Segmenter64) -> Vec<Vec<f64>> {
    seg.store.iter().map(|(_, p)| p.value.data().to_vec()).collect()
}

#[test]
fn update_ignores_order_within_a_batch() {
    let cfg = tiny();
    let sentences = corpus();
    let mut updated = Vec::new();
    for order in [vec![0, 1, 2, 3, 4, 5], vec![5, 3, 1, 4, 0, 2]] {
        let mut seg = model(&cfg);
        let mut grads = Gradients::for_store(&seg.store);
        for &i in &order {
            let mut g = Graph::new(&seg.store);
            let loss = seg.loss_node(&mut g, &sentences[i], &mut TrainDraws::none()).unwrap();
            grads.merge(&g.backward(loss).params);
        }
        add_l2_gradient(&mut grads, &seg.store, 1e-3);
        grads.clip_global_norm(5.0);
        let mut opt = OptimizerState::new(OptimizerConfig::adam(8), &seg.store);
        opt.step(&mut seg.store, &grads).unwrap();
        updated.push(values(&seg));
    }
    let diff = updated[0]
        .iter()
        .flatten()
        .zip(updated[1].iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(diff < 1e-12, "{diff}");
}

fn run(cfg: &RunConfig) -> (Segmenter64, Vec<EpochRecord>) {
    let sentences = corpus();
    let mut seg = model(cfg);
    let mut seen = Vec::new();
    let outcome = train_loop(&mut seg, &sentences, &sentences[..2], &cfg.train_config(), &mut |r| {
        seen.push(r.clone());
        Ok(())
    })
    .unwrap();
    assert_eq!(outcome.history, seen);
    (seg, outcome.history)
}

#[test]
fn parameter_norm_stays_bounded() {
    let cfg = RunConfig {
        l2: 1e-3,
        max_epochs: 40,
        patience: 40,
        ..tiny()
    };
    let start = sq_norm(&model(&cfg).store);
    let (seg, history) = run(&cfg);
    assert_eq!(history.len(), 40);
    let end = sq_norm(&seg.store);
    assert!(end.is_finite() && end < 10.0 * start, "{start} -> {end}");
}

#[test]
fn training_is_deterministic_and_history_is_per_epoch() {
    let cfg = RunConfig {
        max_epochs: 6,
        patience: 6,
        ..tiny()
    };
    let (a, ha) = run(&cfg);
    let (b, hb) = run(&cfg);
    assert_eq!(ha, hb);
    assert_eq!(values(&a), values(&b));
    assert_eq!(ha.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=6).collect::<Vec<_>>());

    let early = RunConfig { patience: 1, max_epochs: 30, ..tiny() };
    let (_, h) = run(&early);
    assert!(h.len() < 30);
    assert_eq!(h.iter().map(|r| r.epoch).collect::<Vec<_>>(), (1..=h.len()).collect::<Vec<_>>());
    let best = h.iter().map(|r| r.dev_f1).fold(f64::NEG_INFINITY, f64::max);
    assert!(h.last().unwrap().dev_f1 <= best);
}

fn configs() -> impl Strategy<Value = RunConfig> {
    (
        (any::<bool>(), 1usize..=2, 1usize..=2, prop::sample::select(vec![2usize, 4])),
        (prop::option::of(0usize..4), 1usize..=4, 1usize..=2),
        (prop::sample::select(vec![Adaptation::Off, Adaptation::T, Adaptation::Tb]), any::<bool>()),
        (prop::option::of(Just(5.0)), any::<bool>(), 1usize..=4, prop::sample::select(vec![(2usize, 2usize), (4, 2), (2, 4)])),
        (0.0f64..0.5, 1usize..=4),
    )
        .prop_map(
            |((lstm, layers, heads, head_dim), (window, hidden, lstm_layers), (adaptation, sgd), (clip, constraints, batch, (ce, be)), (dropout, max_len))| RunConfig {
                encoder: if lstm { EncoderKind::BiLstm } else { EncoderKind::San },
                char_emb_dim: ce,
                bigram_emb_dim: be,
                word_emb_dim: 2,
                san_layers: layers,
                san_heads: heads,
                san_head_dim: head_dim,
                san_d_model: heads * head_dim,
                san_d_inner: 4,
                window,
                relu_dropout: dropout,
                attention_dropout: dropout,
                residual_dropout: dropout,
                lstm_layers,
                lstm_hidden: hidden,
                lstm_input_dropout: dropout,
                optimizer: if sgd { OptimizerKind::Sgd } else { OptimizerKind::Adam },
                clip_norm: clip,
                bmes_constraints: constraints,
                batch_size: batch,
                adaptation,
                max_word_len: max_len,
                max_epochs: 1,
                ..RunConfig::default()
            },
        )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn valid_configs_train_and_segment(cfg in configs()) {
        prop_assume!(cfg.validate().is_ok());
        let sentences = corpus();
        let mut seg = model(&cfg);
        let outcome = train_loop(&mut seg, &sentences, &sentences[..2], &cfg.train_config(), &mut |_| Ok(())).unwrap();
        prop_assert_eq!(outcome.history.len(), 1);
        for s in &sentences {
            prop_assert_eq!(seg.segment_chars(&s.chars).unwrap().concat(), s.text());
        }
    }
}

#[test]
fn sgd_config_uses_constant_rate() {
    let cfg = RunConfig { optimizer: OptimizerKind::Sgd, ..tiny() };
    assert!(matches!(cfg.train_config().optimizer, OptimizerConfig::Sgd { .. }));
    let tc: TrainConfig = cfg.train_config();
    assert_eq!(tc.optimizer.lr(1).unwrap(), tc.optimizer.lr(100).unwrap());
}
