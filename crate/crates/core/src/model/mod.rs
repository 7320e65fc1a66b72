//! Input construction, encoders and the sigmoid regression head.

mod checkpoint;
mod encoder;
mod input;
pub mod linalg;
pub mod tokenizer;

use std::sync::Arc;

use crate::corpus::Prompt;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT_VERSION};
pub use encoder::{EncoderConfig, EncoderKind, Slot};
pub use input::{build_key_phrase_sequence, InputBuilder, InputMode, InputSequence};
pub use tokenizer::Vocabulary;

use encoder::{EncodeCache, EncoderSlots, LayoutBuilder};
use linalg::{dot, sigmoid};

/// Encoder plus regression head `sigmoid(w · h + b)`, all parameters held in
/// one flat vector so optimizers and checkpoints treat them uniformly.
#[derive(Debug, Clone)]
pub struct ScoringModel {
    config: EncoderConfig,
    vocab: Arc<Vocabulary>,
    encoder: EncoderSlots,
    head_w: Slot,
    head_b: Slot,
    names: Vec<(String, Slot)>,
    params: Vec<f64>,
}

/// Keeps predictions strictly inside (0, 1) when the logit saturates.
const PREDICTION_FLOOR: f64 = 1e-12;

/// Forward-pass state kept for [`ScoringModel::backward`].
pub struct Trace {
    pooled: Vec<f64>,
    cache: EncodeCache,
    pub prediction: f64,
}

impl ScoringModel {
    /// Randomly initialized model. `pretrained_transformer` configs are
    /// resolved by [`ScoringModel::from_config`] instead.
    pub fn new(config: EncoderConfig, vocab: Arc<Vocabulary>, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut model = Self::zeroed(config, vocab);
        let mut rng = rng_for(seed, "model/init");
        model.encoder.init(&mut model.params, &mut rng);
        let bound = 1.0 / (model.hidden_size() as f64).sqrt();
        for v in &mut model.params[model.head_w.range()] {
            *v = rand::Rng::gen_range(&mut rng, -bound..bound);
        }
        Ok(model)
    }

    /// Builds the model an [`EncoderConfig`] describes: fresh weights for the
    /// trainable kinds, checkpoint weights (with a re-initialized head) for
    /// `pretrained_transformer`. The returned vocabulary is the one in use.
    pub fn from_config(config: &EncoderConfig, vocab: Arc<Vocabulary>, seed: u64) -> Result<Self> {
        config.validate()?;
        match (&config.kind, &config.pretrained_path) {
            (EncoderKind::PretrainedTransformer, Some(path)) => {
                let ck = load_checkpoint(path)?;
                let mut model = ck.model;
                if !model.config.is_transformer() {
                    return Err(Error::Config(format!(
                        "{} does not hold a transformer encoder",
                        path.display()
                    )));
                }
                if model.hidden_size() != config.hidden_size {
                    return Err(Error::Config(format!(
                        "pretrained encoder has hidden size {}, config asks for {}",
                        model.hidden_size(),
                        config.hidden_size
                    )));
                }
                model.config.kind = EncoderKind::PretrainedTransformer;
                model.config.pretrained_path = Some(path.clone());
                model.config.key_phrase_delimiter = config.key_phrase_delimiter.clone();
                model.reset_head(seed);
                Ok(model)
            }
            _ => Self::new(config.clone(), vocab, seed),
        }
    }

    pub(crate) fn zeroed(config: EncoderConfig, vocab: Arc<Vocabulary>) -> Self {
        let mut b = LayoutBuilder::default();
        let encoder = EncoderSlots::build(&config, vocab.len(), &mut b);
        let h = encoder.hidden();
        let head_w = b.add("head.weight", 1, h);
        let head_b = b.add("head.bias", 1, 1);
        Self {
            params: vec![0.0; b.total],
            names: b.names,
            config,
            vocab,
            encoder,
            head_w,
            head_b,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Arc<Vocabulary> {
        &self.vocab
    }

    pub fn hidden_size(&self) -> usize {
        self.encoder.hidden()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Named parameter tensors in layout order.
    pub fn param_slots(&self) -> &[(String, Slot)] {
        &self.names
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.params[self.head_w.range()]
    }

    pub fn head_bias(&self) -> f64 {
        self.params[self.head_b.offset]
    }

    pub fn head_slots(&self) -> (Slot, Slot) {
        (self.head_w, self.head_b)
    }

    pub fn token_embedding_slot(&self) -> Slot {
        self.encoder.token_embeddings()
    }

    pub fn set_head(&mut self, weights: &[f64], bias: f64) -> Result<()> {
        if weights.len() != self.hidden_size() {
            return Err(Error::Argument(format!(
                "head weights of length {} for hidden size {}",
                weights.len(),
                self.hidden_size()
            )));
        }
        let r = self.head_w.range();
        self.params[r].copy_from_slice(weights);
        self.params[self.head_b.offset] = bias;
        Ok(())
    }

    pub(crate) fn reset_head(&mut self, seed: u64) {
        let mut rng = rng_for(seed, "model/head");
        let bound = 1.0 / (self.hidden_size() as f64).sqrt();
        for v in &mut self.params[self.head_w.range()] {
            *v = rand::Rng::gen_range(&mut rng, -bound..bound);
        }
        self.params[self.head_b.offset] = 0.0;
    }

    pub fn input_builder(&self) -> InputBuilder<'_> {
        InputBuilder {
            vocab: &self.vocab,
            max_len: self.config.max_sequence_length,
            delimiter: &self.config.key_phrase_delimiter,
        }
    }

    pub fn build_input(&self, prompt: &Prompt, answer_text: &str, mode: InputMode) -> Result<InputSequence> {
        self.input_builder().build(prompt, answer_text, mode)
    }

    fn check_input(&self, input: &InputSequence) -> Result<()> {
        if input.len() > self.config.max_sequence_length {
            return Err(Error::Argument(format!(
                "input of {} tokens exceeds max_sequence_length {}",
                input.len(),
                self.config.max_sequence_length
            )));
        }
        if input.separator >= input.len() {
            return Err(Error::Argument("input lacks a separator".into()));
        }
        if let Some(&bad) = input.tokens.iter().find(|&&t| t as usize >= self.vocab.len()) {
            return Err(Error::Argument(format!("token id {bad} outside the vocabulary")));
        }
        Ok(())
    }

    /// Pooled hidden vector `h_x`.
    pub fn encode(&self, input: &InputSequence) -> Result<Vec<f64>> {
        self.check_input(input)?;
        Ok(self.encoder.forward(&self.params, input).0)
    }

    /// Predicted normalized score in (0, 1).
    pub fn predict_score(&self, input: &InputSequence) -> Result<f64> {
        Ok(self.trace(input)?.prediction)
    }

    pub fn trace(&self, input: &InputSequence) -> Result<Trace> {
        self.check_input(input)?;
        let (pooled, cache) = self.encoder.forward(&self.params, input);
        let z = dot(self.head_weights(), &pooled) + self.head_bias();
        Ok(Trace {
            pooled,
            cache,
            prediction: sigmoid(z).clamp(PREDICTION_FLOOR, 1.0 - PREDICTION_FLOOR),
        })
    }

    /// Adds `dprediction · ∂prediction/∂θ` into `grad` (same layout as
    /// [`ScoringModel::params`]).
    pub fn backward(&self, trace: &Trace, dprediction: f64, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.params.len());
        let p = trace.prediction;
        let dz = dprediction * p * (1.0 - p);
        for (g, &h) in grad[self.head_w.range()].iter_mut().zip(&trace.pooled) {
            *g += dz * h;
        }
        grad[self.head_b.offset] += dz;
        let dpooled: Vec<f64> = self.head_weights().iter().map(|w| dz * w).collect();
        self.encoder.backward(&self.params, &trace.cache, &dpooled, grad);
    }
}
