//! Mean-squared-error training, the two training stages, and dev-QWK
//! checkpoint selection.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_score, rescale_to_raw, Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::qwk;
use crate::model::{EncoderConfig, EncoderKind, InputMode, InputSequence, ScoringModel, Vocabulary};
use crate::seed::{derive_seed, rng_for};

pub const PRE_FINETUNE_EPOCHS: usize = 5;
pub const FINETUNE_EPOCHS_AFTER_PRE_FINETUNE: usize = 10;
pub const FINETUNE_EPOCHS_FROM_SCRATCH: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSelection {
    /// Parameters from the epoch with the highest dev QWK (earliest on ties).
    MaxDevQwk,
    LastEpoch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// `None` picks the stage default (5 pre-finetuning, 10 finetuning after
    /// pre-finetuning, 30 finetuning from scratch).
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    /// `None` picks 2e-5 for pretrained encoders and 1e-3 otherwise.
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    pub checkpoint_selection: CheckpointSelection,
}

fn default_batch() -> usize {
    8
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}

impl TrainConfig {
    pub fn pre_finetune_default() -> Self {
        Self {
            epochs: None,
            batch_size: default_batch(),
            learning_rate: None,
            seed: 0,
            optimizer: OptimizerKind::Adam,
            checkpoint_selection: CheckpointSelection::LastEpoch,
        }
    }

    pub fn finetune_default() -> Self {
        Self {
            checkpoint_selection: CheckpointSelection::MaxDevQwk,
            ..Self::pre_finetune_default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = Some(epochs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == Some(0) {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if let Some(lr) = self.learning_rate {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("learning_rate must be finite and >= 0, got {lr}")));
            }
        }
        Ok(())
    }

    pub fn resolved_learning_rate(&self, kind: EncoderKind) -> f64 {
        self.learning_rate.unwrap_or(match kind {
            EncoderKind::PretrainedTransformer => 2e-5,
            EncoderKind::TinyTransformer | EncoderKind::BagOfEmbeddings => 1e-3,
        })
    }
}

/// One training or dev instance: model input, normalized target and the
/// raw score/range needed for QWK.
#[derive(Debug, Clone)]
pub struct LabeledInput {
    pub input: InputSequence,
    pub target: f64,
    pub raw_score: u32,
    pub max_score: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_qwk: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedArtifact {
    pub model: ScoringModel,
    pub history: Vec<EpochRecord>,
    /// 1-based index into `history`.
    pub selected_epoch: usize,
    pub mode: InputMode,
    /// Answer ids the model was trained on, in sampling order.
    pub train_answer_ids: Vec<String>,
}

impl TrainedArtifact {
    pub fn selected(&self) -> &EpochRecord {
        &self.history[self.selected_epoch - 1]
    }
}

/// `(1/I) Σ (s − m(x))²`.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::Argument(format!(
            "mse_loss needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let sum: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(sum / predictions.len() as f64)
}

/// MSE over `batch` and its gradient with respect to every model parameter.
pub fn loss_and_gradient(model: &ScoringModel, batch: &[&LabeledInput], grad: &mut [f64]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Argument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let trace = model.trace(&ex.input)?;
        let err = trace.prediction - ex.target;
        loss += err * err;
        model.backward(&trace, 2.0 * err * scale, grad);
    }
    Ok(loss * scale)
}

/// 1-based epoch chosen by `policy`. Under [`CheckpointSelection::MaxDevQwk`]
/// the first epoch attaining the maximum wins.
pub fn select_epoch(dev_qwks: &[Option<f64>], policy: CheckpointSelection) -> Result<usize> {
    if dev_qwks.is_empty() {
        return Err(Error::Argument("no epochs to select from".into()));
    }
    match policy {
        CheckpointSelection::LastEpoch => Ok(dev_qwks.len()),
        CheckpointSelection::MaxDevQwk => {
            let mut best: Option<(usize, f64)> = None;
            for (i, q) in dev_qwks.iter().enumerate() {
                let q = q.ok_or_else(|| Error::Argument(format!("epoch {} has no dev QWK", i + 1)))?;
                if best.is_none_or(|(_, b)| q > b) {
                    best = Some((i + 1, q));
                }
            }
            Ok(best.map(|(e, _)| e).unwrap_or(1))
        }
    }
}

struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Optimizer {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        let state = if kind == OptimizerKind::Adam { n } else { 0 };
        Self {
            kind,
            lr,
            m: vec![0.0; state],
            v: vec![0.0; state],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut [f64], grad: &[f64]) {
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= self.lr * g;
                }
            }
            OptimizerKind::Adam => {
                self.step += 1;
                let c1 = 1.0 - Self::BETA1.powi(self.step);
                let c2 = 1.0 - Self::BETA2.powi(self.step);
                for i in 0..params.len() {
                    let g = grad[i];
                    self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * g;
                    self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * g * g;
                    let mhat = self.m[i] / c1;
                    let vhat = self.v[i] / c2;
                    params[i] -= self.lr * mhat / (vhat.sqrt() + Self::EPS);
                }
            }
        }
    }
}

/// Dev QWK: per prompt on rescaled integer predictions, then the unweighted
/// mean over prompts.
pub fn dev_qwk(model: &ScoringModel, dev: &[LabeledInput]) -> Result<f64> {
    let mut by_prompt: BTreeMap<&str, (u32, Vec<u32>, Vec<u32>)> = BTreeMap::new();
    for ex in dev {
        let pred = rescale_to_raw(model.predict_score(&ex.input)?, ex.max_score)?;
        let entry = by_prompt
            .entry(ex.input.prompt_id.as_str())
            .or_insert_with(|| (ex.max_score, Vec::new(), Vec::new()));
        entry.1.push(ex.raw_score);
        entry.2.push(pred);
    }
    if by_prompt.is_empty() {
        return Err(Error::Argument("empty dev set".into()));
    }
    let mut total = 0.0;
    for (max, gold, pred) in by_prompt.values() {
        total += qwk(gold, pred, 0, *max)?;
    }
    Ok(total / by_prompt.len() as f64)
}

/// Trains with a caller-supplied per-epoch monitor whose value drives
/// checkpoint selection. [`train`] uses dev QWK as the monitor.
///
/// `config.epochs` must be set; the stage functions fill in their defaults.
pub fn train_with_monitor<F>(
    mut model: ScoringModel,
    train_data: &[LabeledInput],
    config: &TrainConfig,
    mut monitor: F,
) -> Result<TrainedArtifact>
where
    F: FnMut(&ScoringModel, usize) -> Result<Option<f64>>,
{
    config.validate()?;
    let Some(epochs) = config.epochs else {
        return Err(Error::Config("epochs not set".into()));
    };
    if train_data.is_empty() {
        return Err(Error::Argument("empty training data".into()));
    }
    let lr = config.resolved_learning_rate(model.config().kind);
    let mut optimizer = Optimizer::new(config.optimizer, lr, model.num_params());
    let mut rng = rng_for(config.seed, "train/shuffle");
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut grad = vec![0.0; model.num_params()];
    let mut history = Vec::with_capacity(epochs);
    let mut best: Option<(f64, Vec<f64>)> = None;

    for epoch in 1..=epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            grad.fill(0.0);
            let batch: Vec<&LabeledInput> = chunk.iter().map(|&i| &train_data[i]).collect();
            let loss = loss_and_gradient(&model, &batch, &mut grad)?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Divergence {
                    epoch,
                    batch: b + 1,
                    loss,
                });
            }
            optimizer.apply(model.params_mut(), &grad);
            loss_sum += loss * chunk.len() as f64;
        }
        let dev = monitor(&model, epoch)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_data.len() as f64,
            dev_qwk: dev,
        });
        if config.checkpoint_selection == CheckpointSelection::MaxDevQwk {
            let q = dev.ok_or_else(|| Error::Argument("checkpoint selection needs a dev set".into()))?;
            if best.as_ref().is_none_or(|(b, _)| q > *b) {
                best = Some((q, model.params().to_vec()));
            }
        }
    }

    let dev_values: Vec<Option<f64>> = history.iter().map(|r| r.dev_qwk).collect();
    let selected_epoch = select_epoch(&dev_values, config.checkpoint_selection)?;
    if let Some((_, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok(TrainedArtifact {
        model,
        history,
        selected_epoch,
        mode: train_data[0].input.mode,
        train_answer_ids: Vec::new(),
    })
}

/// Mini-batch training on the MSE objective. Dev QWK is computed after every
/// epoch whenever `dev_data` is non-empty.
pub fn train(
    model: ScoringModel,
    train_data: &[LabeledInput],
    dev_data: &[LabeledInput],
    config: &TrainConfig,
) -> Result<TrainedArtifact> {
    if config.checkpoint_selection == CheckpointSelection::MaxDevQwk && dev_data.is_empty() {
        return Err(Error::Argument("max_dev_qwk selection requires dev data".into()));
    }
    train_with_monitor(model, train_data, config, |m, _| {
        if dev_data.is_empty() {
            Ok(None)
        } else {
            dev_qwk(m, dev_data).map(Some)
        }
    })
}

/// Builds labeled inputs for every answer of `split` in `dataset`.
pub fn labeled_inputs(
    model: &ScoringModel,
    dataset: &Dataset,
    split: Split,
    mode: InputMode,
) -> Result<Vec<LabeledInput>> {
    labeled_from_answers(model, dataset, &dataset.answers_in(split), mode)
}

fn labeled_from_answers(
    model: &ScoringModel,
    dataset: &Dataset,
    answers: &[&crate::corpus::Answer],
    mode: InputMode,
) -> Result<Vec<LabeledInput>> {
    answers
        .iter()
        .map(|a| {
            let prompt = dataset
                .prompt(&a.prompt_id)
                .ok_or_else(|| Error::Argument(format!("unknown prompt {}", a.prompt_id)))?;
            Ok(LabeledInput {
                input: model.build_input(prompt, &a.text, mode)?,
                target: normalize_score(a.raw_score, prompt.max_score)?,
                raw_score: a.raw_score,
                max_score: prompt.max_score,
            })
        })
        .collect()
}

/// Trains a fresh model on the pooled training answers of every prompt in
/// `pool`, each conditioned on its own prompt's key phrases (or ID token).
pub fn pre_finetune(
    pool: &Dataset,
    vocab: Arc<Vocabulary>,
    encoder: &EncoderConfig,
    config: &TrainConfig,
    mode: InputMode,
) -> Result<TrainedArtifact> {
    let model = ScoringModel::from_config(encoder, vocab, derive_seed(config.seed, "pre_finetune/init"))?;
    let train_answers = pool.answers_in(Split::Train);
    if train_answers.is_empty() {
        return Err(Error::Argument("pre-finetuning pool has no training answers".into()));
    }
    let train_data = labeled_from_answers(&model, pool, &train_answers, mode)?;
    let dev_data = labeled_inputs(&model, pool, Split::Dev, mode)?;
    let config = TrainConfig {
        epochs: Some(config.epochs.unwrap_or(PRE_FINETUNE_EPOCHS)),
        ..config.clone()
    };
    let mut artifact = train(model, &train_data, &dev_data, &config)?;
    artifact.train_answer_ids = train_answers.iter().map(|a| a.answer_id.clone()).collect();
    Ok(artifact)
}

/// Starting point of target-prompt finetuning.
#[derive(Debug, Clone, Copy)]
pub enum FinetuneBase<'a> {
    /// Continue from pre-finetuned parameters.
    PreFinetuned(&'a ScoringModel),
    /// Start from a freshly initialized encoder.
    Fresh {
        encoder: &'a EncoderConfig,
        vocab: &'a Arc<Vocabulary>,
    },
}

/// Seeded choice of `n_train` answers from the prompt's training split.
pub fn sample_training_answers<'a>(
    target: &'a Dataset,
    prompt_id: &str,
    n_train: usize,
    seed: u64,
) -> Result<Vec<&'a crate::corpus::Answer>> {
    let mut pool = target.prompt_answers_in(prompt_id, Split::Train);
    if pool.len() < n_train {
        return Err(Error::sizing(
            prompt_id,
            format!("training split has {} answers, {} requested", pool.len(), n_train),
        ));
    }
    if n_train == 0 {
        return Err(Error::Argument("n_train must be >= 1".into()));
    }
    pool.shuffle(&mut rng_for(seed, &format!("finetune/subsample/{prompt_id}")));
    pool.truncate(n_train);
    Ok(pool)
}

/// Finetunes on `n_train` answers of one target prompt, selecting the
/// checkpoint on that prompt's dev split.
pub fn finetune(
    base: FinetuneBase<'_>,
    target: &Dataset,
    prompt_id: &str,
    n_train: usize,
    config: &TrainConfig,
    mode: InputMode,
) -> Result<TrainedArtifact> {
    let prompt = target
        .prompt(prompt_id)
        .ok_or_else(|| Error::Argument(format!("unknown target prompt {prompt_id}")))?;
    let (model, default_epochs) = match base {
        FinetuneBase::PreFinetuned(m) => (m.clone(), FINETUNE_EPOCHS_AFTER_PRE_FINETUNE),
        FinetuneBase::Fresh { encoder, vocab } => (
            ScoringModel::from_config(encoder, vocab.clone(), derive_seed(config.seed, "finetune/init"))?,
            FINETUNE_EPOCHS_FROM_SCRATCH,
        ),
    };
    let chosen = sample_training_answers(target, prompt_id, n_train, config.seed)?;
    let train_data = labeled_from_answers(&model, target, &chosen, mode)?;
    let dev_answers = target.prompt_answers_in(&prompt.prompt_id, Split::Dev);
    let dev_data = labeled_from_answers(&model, target, &dev_answers, mode)?;
    let config = TrainConfig {
        epochs: Some(config.epochs.unwrap_or(default_epochs)),
        ..config.clone()
    };
    let mut artifact = train(model, &train_data, &dev_data, &config)?;
    artifact.train_answer_ids = chosen.iter().map(|a| a.answer_id.clone()).collect();
    Ok(artifact)
}

/// Writes the per-epoch log as CSV (`epoch,train_loss,dev_qwk`).
pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "train_loss", "dev_qwk"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.to_string(),
            r.dev_qwk.map(|q| q.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
