//! Deterministic training loop: Adam, linear warmup, chunk-packed batches.

mod data;
mod eval;
mod synthetic;

pub use data::{
    decode_bytes, load_corpus, pack_chunks, save_corpus, Corpus, Document, BYTE_VOCAB,
    CORPUS_VERSION, EOS_TOKEN, SEP_TOKEN,
};
pub use eval::{bucket_eval, greedy_decode, perplexity, sequence_nll, BucketReport};
pub use synthetic::{
    gen_retrieval, retrieval_accuracy, retrieval_corpus, RetrievalSample, RetrievalTaskSpec,
    FILLER_TOKEN, FIRST_KEY, QUERY_TOKEN,
};

use crate::attention::LayerPlan;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Parameters};
use crate::numerics::{adam_step, cross_entropy_logits_sum, AdamHyper, AdamState, RngState, Tensor2D};

// Substream label for batch sampling under the train seed.
const DATA_STREAM: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSpec {
    pub steps: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub seq_len: usize,
    pub learning_rate: f32,
    pub seed: u64,
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".to_string()));
        }
        if self.seq_len < 2 {
            return Err(Error::Config("seq_len must be at least 2".to_string()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive and finite".to_string()));
        }
        Ok(())
    }

    /// Linear warmup: ramps from lr/warmup to lr over the first
    /// `warmup_steps` steps, flat afterwards. Steps count from 1.
    pub fn lr_at(&self, step: usize) -> f32 {
        if self.warmup_steps == 0 || step >= self.warmup_steps {
            self.learning_rate
        } else {
            self.learning_rate * step as f32 / self.warmup_steps as f32
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub lr: f32,
}

/// One line per step: step, loss, lr, tab separated.
pub fn format_loss_log(entries: &[LogEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.step, e.loss, e.lr));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub log: Vec<LogEntry>,
}

/// Mean next-token loss of one sequence and the parameter gradients for it.
pub fn clm_loss(model: &Model, tokens: &[u16]) -> Result<(f64, Parameters)> {
    if tokens.len() < 2 {
        return Err(Error::Shape {
            op: "clm_loss",
            detail: format!("{} tokens admit no predictions", tokens.len()),
        });
    }
    let (logits, cache) = model.forward(tokens)?;
    let m = tokens.len() - 1;
    let (nll, d_head, _) = prediction_loss(&logits, tokens)?;
    let mut d_logits = Tensor2D::zeros(logits.rows(), logits.cols());
    for i in 0..m {
        d_logits.row_mut(i).copy_from_slice(d_head.row(i));
    }
    d_logits.scale(1.0 / m as f32);
    let grads = model.backward(&cache, &d_logits)?;
    Ok((nll / m as f64, grads))
}

/// NLL sum and unscaled d_logits over the prediction rows (all but the last).
fn prediction_loss(logits: &Tensor2D, tokens: &[u16]) -> Result<(f64, Tensor2D, usize)> {
    let m = tokens.len() - 1;
    let mut head = Tensor2D::zeros(m, logits.cols());
    for i in 0..m {
        head.row_mut(i).copy_from_slice(logits.row(i));
    }
    cross_entropy_logits_sum(&head, &tokens[1..])
}

/// Initialize a model from `config` and train it on `corpus`.
pub fn train(config: ModelConfig, corpus: &Corpus, spec: &TrainSpec) -> Result<TrainOutcome> {
    train_from(Model::new(config)?, corpus, spec)
}

/// Resume training an existing model. Optimizer state starts fresh.
///
/// Each step samples `batch_size` chunks with replacement, averages the loss
/// per predicted token, and applies one Adam update. Everything downstream of
/// (weights, corpus, spec) is a pure function, so reruns match bit for bit.
pub fn train_from(mut model: Model, corpus: &Corpus, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    if spec.seq_len > model.config.max_pos {
        return Err(Error::ContextOverflow {
            len: spec.seq_len,
            max_pos: model.config.max_pos,
        });
    }
    let chunks = pack_chunks(corpus, spec.seq_len)?;
    let mut rng = RngState::new(spec.seed).substream(DATA_STREAM);
    let mut states: Vec<AdamState> = model
        .params
        .tensors()
        .iter()
        .map(|(_, t)| AdamState::new(t.rows(), t.cols()))
        .collect();
    let mut hyper = AdamHyper { lr: spec.learning_rate, ..Default::default() };
    let mut log = Vec::with_capacity(spec.steps);

    for step in 1..=spec.steps {
        hyper.lr = spec.lr_at(step);
        let mut grads = Parameters::zeros(&model.config);
        let mut total_nll = 0.0f64;
        let mut total_pred = 0usize;
        for item in 0..spec.batch_size {
            let chunk = &chunks[rng.below(chunks.len() as u64) as usize];
            let (logits, cache) = model.forward(chunk)?;
            let (nll, d_head, count) = prediction_loss(&logits, chunk)?;
            if !nll.is_finite() {
                return Err(Error::NonFiniteLoss { step, item });
            }
            let mut d_logits = Tensor2D::zeros(logits.rows(), logits.cols());
            for i in 0..count {
                d_logits.row_mut(i).copy_from_slice(d_head.row(i));
            }
            let item_grads = model.backward(&cache, &d_logits)?;
            for ((_, g), (_, ig)) in grads.tensors_mut().into_iter().zip(item_grads.tensors()) {
                g.add_assign(ig)?;
            }
            total_nll += nll;
            total_pred += count;
        }
        let scale = 1.0 / total_pred as f32;
        for (_, g) in grads.tensors_mut() {
            g.scale(scale);
        }
        for (((_, p), (_, g)), st) in model
            .params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(states.iter_mut())
        {
            adam_step(p, g, st, &hyper)?;
        }
        log.push(LogEntry { step, loss: total_nll / total_pred as f64, lr: hyper.lr });
    }
    Ok(TrainOutcome { model, log })
}

/// Adapt a trained model to longer sequences under a new span plan: tile the
/// position table by `factor`, swap the plan in, and keep training.
pub fn continual_train(
    model: Model,
    factor: usize,
    plan: LayerPlan,
    corpus: &Corpus,
    spec: &TrainSpec,
) -> Result<TrainOutcome> {
    let mut model = model;
    model.extend_positions(factor)?;
    model.set_plan(plan)?;
    train_from(model, corpus, spec)
}
