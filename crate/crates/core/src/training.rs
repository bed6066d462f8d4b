//! Binary cross-entropy, Adam, and the epoch loop with best-checkpoint and
//! early-stopping callbacks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};
use crate::corpus::{split_validation, CorpusError, Label, LabeledCorpus};
use crate::layers::Mode;
use crate::model::{
    forward_graph, parse_value, ConfigError, DetectorModel, GraphParams, ModelConfig, ModelError, ParamStore,
};

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before the log.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("adam: {0}")]
    ShapeMismatch(String),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(e.into())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub patience: usize,
    pub checkpoint_path: Option<PathBuf>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            val_fraction: 0.1,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            patience: 3,
            checkpoint_path: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 9] = [
        "epochs",
        "batch_size",
        "val_fraction",
        "learning_rate",
        "beta1",
        "beta2",
        "epsilon",
        "patience",
        "seed",
    ];

    /// Sets one field by name; `Ok(false)` for keys owned elsewhere.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "val_fraction" => self.val_fraction = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "beta1" => self.beta1 = parse_value(key, value)?,
            "beta2" => self.beta2 = parse_value(key, value)?,
            "epsilon" => self.epsilon = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad("val_fraction must be in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("beta1 and beta2 must be in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        Ok(())
    }
}

/// Binary cross-entropy of one clamped probability.
pub fn bce_loss(p: f64, y: Label) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    match y {
        Label::Ai => -p.ln(),
        Label::Human => -(1.0 - p).ln(),
    }
}

/// Records the clamped binary cross-entropy of a one-element probability.
pub fn bce_node<T: Real>(tape: &mut Tape<T>, p: Var, y: Label) -> Result<Var, TensorError> {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    let p = tape.clamp(p, lo, hi)?;
    let likelihood = match y {
        Label::Ai => p,
        Label::Human => {
            let one = tape.constant(Tensor::full(tape.shape(p), T::one()));
            tape.sub(one, p)?
        }
    };
    let log = tape.log(likelihood)?;
    tape.scale(log, -T::one())
}

/// Mean BCE over a batch of encoded examples.
pub fn batch_loss<T: Real>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    graph: &GraphParams,
    batch: &[(&[usize], Label)],
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let mut losses = Vec::with_capacity(batch.len());
    for (ids, label) in batch {
        let p = forward_graph(config, tape, graph, ids, mode)?;
        losses.push(bce_node(tape, p, *label)?);
    }
    let all = tape.concat(&losses)?;
    Ok(tape.mean(all, None)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        TrainConfig::default().adam()
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// First and second moments per parameter plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros: Vec<Tensor<T>> = params.tensors().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

pub fn adam_apply<T: Real>(
    params: &mut ParamStore<T>,
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} parameters, {} gradients, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for ((p, g), m) in params.tensors().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(TrainError::ShapeMismatch(format!(
                "parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.t += 1;
    let t = state.t as i32;
    let b1 = T::lit(cfg.beta1);
    let b2 = T::lit(cfg.beta2);
    let one = T::one();
    let correct1 = T::lit(1.0 - cfg.beta1.powi(t));
    let correct2 = T::lit(1.0 - cfg.beta2.powi(t));
    let lr = T::lit(cfg.learning_rate);
    let eps = T::lit(cfg.epsilon);
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / correct1;
            let v_hat = v[i] / correct2;
            p[i] = p[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

/// Per-epoch metrics. Without a validation set the validation columns are
/// NaN and the callbacks monitor training loss instead.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingHistory {
    pub records: Vec<EpochRecord>,
    pub validated: bool,
    /// Epoch after which early stopping fired.
    pub stopped_at: Option<usize>,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,train_accuracy,val_loss,val_accuracy";

impl TrainingHistory {
    pub fn new(validated: bool) -> Self {
        Self {
            records: Vec::new(),
            validated,
            stopped_at: None,
        }
    }

    /// Builds a history from scripted validation losses.
    pub fn from_val_losses(losses: &[f64]) -> Self {
        let mut h = Self::new(true);
        for (epoch, &val_loss) in losses.iter().enumerate() {
            h.records.push(EpochRecord {
                epoch,
                train_loss: val_loss,
                train_accuracy: 0.0,
                val_loss,
                val_accuracy: 0.0,
            });
        }
        h
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// The series both callbacks watch.
    pub fn monitored(&self) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| if self.validated { r.val_loss } else { r.train_loss })
            .collect()
    }

    /// First epoch attaining the lowest monitored value.
    pub fn best_epoch(&self) -> Option<usize> {
        let series = self.monitored();
        let mut best: Option<usize> = None;
        for (i, &v) in series.iter().enumerate() {
            match best {
                None => best = Some(i),
                Some(b) if v < series[b] => best = Some(i),
                _ => {}
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(HISTORY_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.6}",
                r.epoch, r.train_loss, r.train_accuracy, r.val_loss, r.val_accuracy
            );
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        std::fs::write(path, self.to_csv())
    }
}

/// True when the newest epoch improves strictly on every earlier one.
pub fn is_new_best(history: &TrainingHistory) -> bool {
    let series = history.monitored();
    match series.split_last() {
        None => false,
        Some((last, rest)) => rest.iter().all(|v| last < v),
    }
}

/// Saves `model` to `path` when the newest epoch is a strict improvement.
pub fn checkpoint_best(history: &TrainingHistory, model: &DetectorModel, path: &Path) -> Result<bool, TrainError> {
    if !is_new_best(history) {
        return Ok(false);
    }
    model.save(path)?;
    Ok(true)
}

/// Whether `patience` epochs have passed since the best monitored value.
pub fn should_stop(history: &TrainingHistory, patience: usize) -> bool {
    match history.best_epoch() {
        Some(best) => history.len() - 1 - best >= patience,
        None => false,
    }
}

/// Early stopping that keeps a snapshot of the best weights and restores
/// it when it fires.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<(usize, ParamStore<f32>)>,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _)| *e)
    }

    /// Call after appending the epoch to `history`. Returns `true` when
    /// training should stop; the model then holds the best weights.
    pub fn on_epoch_end(&mut self, history: &TrainingHistory, model: &mut DetectorModel) -> bool {
        if is_new_best(history) {
            self.best = Some((history.len() - 1, model.params().clone()));
        }
        if !should_stop(history, self.patience) {
            return false;
        }
        if let Some((_, params)) = &self.best {
            model.set_params(params.clone());
        }
        true
    }
}

/// Encoded sequence and its label.
pub type Example = (Vec<usize>, Label);

pub fn encode_corpus(model: &DetectorModel, corpus: &LabeledCorpus) -> Vec<Example> {
    corpus.iter().map(|r| (model.encode_text(&r.text), r.label)).collect()
}

/// Mean BCE and accuracy in inference mode.
pub fn evaluate_loss_accuracy(model: &DetectorModel, examples: &[Example]) -> Result<(f64, f64), ModelError> {
    if examples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let ids: Vec<&[usize]> = examples.iter().map(|(ids, _)| ids.as_slice()).collect();
    let probs = model.predict_many(&ids)?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, (_, y)) in probs.iter().zip(examples) {
        loss += bce_loss(*p, *y);
        if Label::from_probability(*p) == *y {
            correct += 1;
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

/// One optimizer step on `batch`; returns the batch loss.
pub fn train_step(
    model: &mut DetectorModel,
    batch: &[(&[usize], Label)],
    state: &mut AdamState<f32>,
    adam: &AdamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<f64, TrainError> {
    let mut tape = Tape::<f32>::new();
    let vars = model.params().attach(&mut tape);
    let graph = GraphParams::bind(model.config(), &vars)?;
    let loss = batch_loss(model.config(), &mut tape, &graph, batch, &mut Mode::Train(rng))?;
    let mut grads = tape.backward(loss)?;
    let grads: Vec<Tensor<f32>> = vars
        .iter()
        .zip(model.params().tensors())
        .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect();
    let value = f64::from(tape.value(loss).data()[0]);
    drop(tape);
    adam_apply(model.params_mut(), &grads, state, adam)?;
    Ok(value)
}

pub fn fit(
    model: &mut DetectorModel,
    corpus: &LabeledCorpus,
    cfg: &TrainConfig,
) -> Result<TrainingHistory, TrainError> {
    fit_with(model, corpus, cfg, |_| {})
}

/// [`fit`] with a hook invoked after every epoch's record is appended.
pub fn fit_with(
    model: &mut DetectorModel,
    corpus: &LabeledCorpus,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingHistory, TrainError> {
    cfg.validate()?;
    if corpus.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (train, val) = split_validation(corpus, cfg.val_fraction, cfg.seed)?;
    let train = encode_corpus(model, &train);
    let val = encode_corpus(model, &val);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let adam = cfg.adam();
    let mut state = AdamState::new(model.params());
    let mut history = TrainingHistory::new(!val.is_empty());
    let mut early = EarlyStopping::new(cfg.patience);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&[usize], Label)> = chunk.iter().map(|&i| (train[i].0.as_slice(), train[i].1)).collect();
            train_step(model, &batch, &mut state, &adam, &mut rng)?;
        }
        let (train_loss, train_accuracy) = evaluate_loss_accuracy(model, &train)?;
        let (val_loss, val_accuracy) = evaluate_loss_accuracy(model, &val)?;
        let record = EpochRecord {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
        };
        history.records.push(record);
        on_epoch(&record);

        if let Some(path) = &cfg.checkpoint_path {
            checkpoint_best(&history, model, path)?;
        }
        if early.on_epoch_end(&history, model) {
            history.stopped_at = Some(epoch);
            break;
        }
    }
    Ok(history)
}
