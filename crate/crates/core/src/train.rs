//! Optimization: learning-rate schedule, Adam and SGD, the regularized loss,
//! finite-difference gradient checks and the epoch loop.

use std::time::Instant;

use rand::seq::index::sample;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, ParamId, ParamStore};
use crate::corpus::{make_batches, LabeledSentence};
use crate::error::{Error, Result};
use crate::eval::{self, Prf};
use crate::lexicon::{build_freq_table, WordFreqTable};
use crate::model::{Segmenter, TrainDraws};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// `factor * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn noam_lr(step: u64, d_model: usize, warmup: u64, factor: f64) -> Result<f64> {
    if step == 0 {
        return Err(Error::invalid("learning-rate step must be >= 1"));
    }
    if warmup == 0 || d_model == 0 {
        return Err(Error::invalid("warmup and d_model must be positive"));
    }
    let s = step as f64;
    Ok(factor * (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OptimizerConfig {
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
        warmup: u64,
        factor: f64,
        d_model: usize,
    },
    Sgd {
        lr: f64,
    },
}

impl OptimizerConfig {
    pub fn adam(d_model: usize) -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
            warmup: 1000,
            factor: 1.0,
            d_model,
        }
    }

    pub fn sgd() -> Self {
        OptimizerConfig::Sgd { lr: 0.001 }
    }

    /// Learning rate used by update number `step` (1-based).
    pub fn lr(&self, step: u64) -> Result<f64> {
        match *self {
            OptimizerConfig::Adam {
                warmup,
                factor,
                d_model,
                ..
            } => noam_lr(step, d_model, warmup, factor),
            OptimizerConfig::Sgd { lr } => Ok(lr),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimizerState<T> {
    pub config: OptimizerConfig,
    pub step: u64,
    first: Vec<Option<Matrix<T>>>,
    second: Vec<Option<Matrix<T>>>,
}

fn check_finite<T: Scalar>(store: &ParamStore<T>, grads: &Gradients<T>) -> Result<()> {
    for (id, g) in grads.iter() {
        if !g.is_finite() {
            return Err(Error::NonFinite(store.get(id).name.clone()));
        }
    }
    Ok(())
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, store: &ParamStore<T>) -> Self {
        OptimizerState {
            config,
            step: 0,
            first: vec![None; store.len()],
            second: vec![None; store.len()],
        }
    }

    /// Applies one update and returns the learning rate used.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &Gradients<T>) -> Result<f64> {
        check_finite(store, grads)?;
        let lr = self.config.lr(self.step + 1)?;
        match self.config {
            OptimizerConfig::Sgd { .. } => sgd_step(store, grads, lr)?,
            OptimizerConfig::Adam { beta1, beta2, eps, .. } => {
                let t = (self.step + 1) as i32;
                let (b1, b2, e) = (T::of(beta1), T::of(beta2), T::of(eps));
                let c1 = T::one() - T::of(beta1.powi(t));
                let c2 = T::one() - T::of(beta2.powi(t));
                let lr_t = T::of(lr);
                for id in store.ids().collect::<Vec<_>>() {
                    if !store.get(id).trainable {
                        continue;
                    }
                    let shape = store.value(id).shape();
                    let m = self.first[id.index()].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    let v = self.second[id.index()].get_or_insert_with(|| Matrix::zeros(shape.0, shape.1));
                    let g = grads.get(id);
                    let p = store.value_mut(id).data_mut();
                    for k in 0..p.len() {
                        let gk = g.map_or(T::zero(), |g| g.data()[k]);
                        let mk = &mut m.data_mut()[k];
                        *mk = b1 * *mk + (T::one() - b1) * gk;
                        let mk = *mk;
                        let vk = &mut v.data_mut()[k];
                        *vk = b2 * *vk + (T::one() - b2) * gk * gk;
                        let vk = *vk;
                        let m_hat = mk / c1;
                        let v_hat = vk / c2;
                        p[k] -= lr_t * m_hat / (v_hat.sqrt() + e);
                    }
                }
            }
        }
        self.step += 1;
        Ok(lr)
    }

    pub fn moments(&self, id: ParamId) -> (Option<&Matrix<T>>, Option<&Matrix<T>>) {
        (self.first[id.index()].as_ref(), self.second[id.index()].as_ref())
    }
}

/// `p <- p - lr * g` for every trainable parameter with a gradient.
pub fn sgd_step<T: Scalar>(store: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
    check_finite(store, grads)?;
    for (id, g) in grads.iter() {
        if !store.get(id).trainable {
            continue;
        }
        if store.value(id).shape() != g.shape() {
            return Err(Error::shape(format!("gradient shape for `{}`", store.get(id).name)));
        }
        store.value_mut(id).axpy(T::of(-lr), g);
    }
    Ok(())
}

/// `sum(nlls) + (lambda / 2) * ||theta||^2` over trainable, non-PAD entries.
pub fn total_loss<T: Scalar>(nlls: &[T], store: &ParamStore<T>, lambda: f64) -> Result<T> {
    if lambda < 0.0 {
        return Err(Error::invalid("L2 coefficient must be >= 0"));
    }
    let nll: T = nlls.iter().copied().sum();
    if lambda == 0.0 {
        return Ok(nll);
    }
    Ok(nll + T::of(lambda / 2.0) * store.trainable_sq_norm())
}

/// Adds the gradient `lambda * theta` of the L2 term.
pub fn add_l2_gradient<T: Scalar>(grads: &mut Gradients<T>, store: &ParamStore<T>, lambda: f64) {
    if lambda == 0.0 {
        return;
    }
    for (id, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        let mut g = p.value.clone();
        g.scale(T::of(lambda));
        if let Some(r) = p.pad_row {
            g.row_mut(r).fill(T::zero());
        }
        grads.accumulate(id, &g);
    }
}

/// Loss and analytic gradient of a fixed batch, for finite-difference checks.
pub trait Objective {
    fn store(&self) -> &ParamStore<f64>;
    fn store_mut(&mut self) -> &mut ParamStore<f64>;
    fn loss(&self) -> Result<f64>;
    fn gradient(&self) -> Result<Gradients<f64>>;
}

/// Deterministic regularized loss of a segmenter on a fixed sample.
pub struct SegmenterObjective<'a> {
    pub segmenter: &'a mut Segmenter<f64>,
    pub sample: &'a [LabeledSentence],
    pub l2: f64,
}

impl Objective for SegmenterObjective<'_> {
    fn store(&self) -> &ParamStore<f64> {
        &self.segmenter.store
    }

    fn store_mut(&mut self) -> &mut ParamStore<f64> {
        &mut self.segmenter.store
    }

    fn loss(&self) -> Result<f64> {
        let nlls = self
            .sample
            .iter()
            .map(|s| self.segmenter.nll(s))
            .collect::<Result<Vec<_>>>()?;
        total_loss(&nlls, &self.segmenter.store, self.l2)
    }

    fn gradient(&self) -> Result<Gradients<f64>> {
        let store = &self.segmenter.store;
        let mut grads = Gradients::for_store(store);
        for s in self.sample {
            let mut g = Graph::new(store);
            let loss = self.segmenter.loss_node(&mut g, s, &mut TrainDraws::none())?;
            grads.merge(&g.backward(loss).params);
        }
        add_l2_gradient(&mut grads, store, self.l2);
        Ok(grads)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Beyond this many entries a seeded random subset is checked.
    pub max_entries: usize,
    pub seed: u64,
    /// Denominator floor of the relative error, per unit of loss magnitude.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_entries: 10_000,
            seed: 0,
            floor: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

/// The entry with the largest relative error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorstEntry {
    pub name: String,
    /// Flat row-major index into the parameter.
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<WorstEntry>,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares analytic gradients with central differences over trainable,
/// non-PAD entries.
pub fn check_gradients(obj: &mut dyn Objective, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let grads = obj.gradient()?;
    let floor = opts.floor * obj.loss()?.abs().max(1.0);
    let mut entries: Vec<(ParamId, usize)> = Vec::new();
    for (id, p) in obj.store().iter() {
        if !p.trainable {
            continue;
        }
        let cols = p.value.cols();
        for k in 0..p.value.len() {
            if p.pad_row == Some(k / cols.max(1)) {
                continue;
            }
            entries.push((id, k));
        }
    }
    if entries.len() > opts.max_entries {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut picked = sample(&mut rng, entries.len(), opts.max_entries).into_vec();
        picked.sort_unstable();
        entries = picked.into_iter().map(|i| entries[i]).collect();
    }
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
        params: Vec::new(),
    };
    for (id, k) in entries {
        let original = obj.store().value(id).data()[k];
        obj.store_mut().value_mut(id).data_mut()[k] = original + opts.step;
        let plus = obj.loss()?;
        obj.store_mut().value_mut(id).data_mut()[k] = original - opts.step;
        let minus = obj.loss()?;
        obj.store_mut().value_mut(id).data_mut()[k] = original;
        let numeric = (plus - minus) / (2.0 * opts.step);
        let analytic = grads.get(id).map_or(0.0, |g| g.data()[k]);
        let err = relative_error(analytic, numeric, floor);
        let name = obj.store().get(id).name.clone();
        if report.params.last().map_or(true, |p| p.name != name) {
            report.params.push(ParamCheck {
                name: name.clone(),
                checked: 0,
                max_rel_error: 0.0,
            });
        }
        let pc = report.params.last_mut().expect("pushed");
        pc.checked += 1;
        pc.max_rel_error = pc.max_rel_error.max(err);
        report.checked += 1;
        if err > report.max_rel_error || report.worst.is_none() {
            report.max_rel_error = report.max_rel_error.max(err);
            report.worst = Some(WorstEntry {
                name,
                index: k,
                analytic,
                numeric,
            });
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub optimizer: OptimizerConfig,
    pub l2: f64,
    /// Global gradient-norm bound; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Stop as soon as dev F1 reaches this value.
    pub target_dev_f1: Option<f64>,
    pub history_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            seed: 1,
            optimizer: OptimizerConfig::adam(512),
            l2: 1e-8,
            clip_norm: Some(5.0),
            target_dev_f1: None,
            history_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be >= 1"));
        }
        if self.l2 < 0.0 {
            return Err(Error::invalid("l2 must be >= 0"));
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return Err(Error::invalid("clip_norm must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean sentence NLL over the epoch.
    pub train_loss: f64,
    pub dev_p: f64,
    pub dev_r: f64,
    pub dev_f1: f64,
    /// Learning rate of the last update in the epoch.
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_time: Option<f64>,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Word-level P/R/F1 of the segmenter on gold sentences.
pub fn evaluate<T: Scalar>(seg: &Segmenter<T>, gold: &[LabeledSentence]) -> Result<Prf> {
    let gold_words: Vec<Vec<String>> = gold.iter().map(LabeledSentence::words).collect();
    let pred = gold
        .iter()
        .map(|s| seg.segment_chars(&s.chars))
        .collect::<Result<Vec<_>>>()?;
    eval::prf(&gold_words, &pred)
}

/// Gold word counts of a training corpus.
pub fn word_frequencies(sentences: &[LabeledSentence]) -> WordFreqTable {
    let words: Vec<Vec<String>> = sentences.iter().map(LabeledSentence::words).collect();
    build_freq_table(&words)
}

fn snapshot<T: Scalar>(store: &ParamStore<T>) -> Vec<Matrix<T>> {
    store.iter().map(|(_, p)| p.value.clone()).collect()
}

fn restore<T: Scalar>(store: &mut ParamStore<T>, values: Vec<Matrix<T>>) {
    for (id, v) in store.ids().collect::<Vec<_>>().into_iter().zip(values) {
        *store.value_mut(id) = v;
    }
}

/// Trains in place and leaves the best dev-F1 parameters in `seg`.
///
/// `on_epoch` sees every history record as soon as it is produced.
pub fn train_loop<T: Scalar>(
    seg: &mut Segmenter<T>,
    train: &[LabeledSentence],
    dev: &[LabeledSentence],
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let start = Instant::now();
    let freq = word_frequencies(train);
    let mut optimizer = OptimizerState::new(config.optimizer.clone(), &seg.store);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let mut replace_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, Vec<Matrix<T>>)> = None;
    let mut since_best = 0;
    let mut lr = 0.0;
    for epoch in 1..=config.max_epochs {
        let shuffle = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64);
        let batches = make_batches(train, &seg.vocab, config.batch_size, Some(shuffle))?;
        let mut epoch_nll = 0.0;
        for batch in &batches {
            let mut grads = Gradients::for_store(&seg.store);
            for &i in &batch.indices {
                let mut g = Graph::new(&seg.store);
                let mut draws = TrainDraws {
                    dropout: Some(&mut dropout_rng as &mut dyn RngCore),
                    replacement: Some((&freq, &mut replace_rng as &mut dyn RngCore)),
                };
                let loss = seg.loss_node(&mut g, &train[i], &mut draws)?;
                let value = g.value(loss).get(0, 0);
                if !value.is_finite() {
                    return Err(Error::NonFinite(format!("loss of training sentence {}", i + 1)));
                }
                epoch_nll += value.as_f64();
                grads.merge(&g.backward(loss).params);
            }
            add_l2_gradient(&mut grads, &seg.store, config.l2);
            if let Some(c) = config.clip_norm {
                grads.clip_global_norm(T::of(c));
            }
            lr = optimizer.step(&mut seg.store, &grads)?;
        }
        let prf = evaluate(seg, dev)?;
        if prf.f1.is_nan() {
            return Err(Error::NonFinite("dev F1".into()));
        }
        let record = EpochRecord {
            epoch,
            train_loss: epoch_nll / train.len() as f64,
            dev_p: prf.precision,
            dev_r: prf.recall,
            dev_f1: prf.f1,
            lr,
            wall_time: config.history_wall_time.then(|| start.elapsed().as_secs_f64()),
        };
        log::info!(
            "epoch {epoch}: loss {:.4} dev F1 {:.4} lr {:.3e}",
            record.train_loss,
            record.dev_f1,
            lr
        );
        on_epoch(&record)?;
        history.push(record);
        if best.as_ref().map_or(true, |b| prf.f1 > b.1) {
            best = Some((epoch, prf.f1, snapshot(&seg.store)));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if config.target_dev_f1.is_some_and(|t| prf.f1 >= t) || since_best >= config.patience {
            break;
        }
    }
    let (best_epoch, best_dev_f1, values) = best.expect("at least one epoch");
    restore(&mut seg.store, values);
    Ok(TrainOutcome {
        history,
        best_epoch,
        best_dev_f1,
    })
}
