//! Adadelta training with a weight moving average, over sampled paragraphs.
//!
//! Each question in a batch draws its paragraphs and dropout masks from its
//! own ChaCha8 stream keyed by `(seed, epoch, question index)`. Gradients are
//! computed in parallel and summed in question order, so results do not
//! depend on the worker count.

mod checkpoint;
mod ema;
mod optimizer;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Real, Tape, Tensor};
use crate::corpus::{ParagraphGroup, SEPARATOR};
use crate::error::{Error, Result};
use crate::layers::{Dropout, Model};
use crate::objectives::{
    no_answer_loss, shared_norm_loss, sigmoid_loss, summed_bounds_loss, LabeledScores, LossGrad,
    SharedNormGroup,
};
use crate::sampling::{epoch_sample, Pool, SamplingPlan};

pub use checkpoint::{Checkpoint, CHECKPOINT_VERSION};
pub use ema::{ema_swap, ema_update, EmaState};
pub use optimizer::{adadelta_step, clip_global_norm, OptimizerState};

/// How sampled paragraphs are turned into a loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// Summed-bounds loss on each answer paragraph; others are skipped.
    None,
    /// Per-token sigmoid loss on every paragraph.
    Sigmoid,
    /// Drawn paragraphs joined by separator tokens into one sequence.
    Merge,
    /// Joint span softmax with a learned no-answer option.
    NoAnswer,
    /// One softmax normalizer shared by all drawn paragraphs.
    SharedNorm,
}

impl TrainingMode {
    pub const ALL: [TrainingMode; 5] = [
        TrainingMode::None,
        TrainingMode::Sigmoid,
        TrainingMode::Merge,
        TrainingMode::NoAnswer,
        TrainingMode::SharedNorm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TrainingMode::None => "none",
            TrainingMode::Sigmoid => "sigmoid",
            TrainingMode::Merge => "merge",
            TrainingMode::NoAnswer => "no-answer",
            TrainingMode::SharedNorm => "shared-norm",
        }
    }

    /// Samples must contain an answer paragraph.
    pub fn requires_answer(self) -> bool {
        matches!(self, TrainingMode::Merge | TrainingMode::SharedNorm)
    }

    pub fn needs_no_answer_head(self) -> bool {
        self == TrainingMode::NoAnswer
    }
}

impl fmt::Display for TrainingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TrainingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown mode {s:?}; expected none, sigmoid, merge, no-answer or shared-norm"
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: TrainingMode,
    /// Questions per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub learning_rate: f64,
    pub ema_decay: f64,
    pub sampling: SamplingPlan,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: TrainingMode::SharedNorm,
            batch_size: 60,
            seed: 0,
            clip_norm: Some(5.0),
            learning_rate: 1.0,
            ema_decay: 0.999,
            sampling: SamplingPlan::single_document(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.sampling.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "ema_decay must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::Config("clip_norm must be positive".into()));
            }
        }
        Ok(())
    }

    /// The sampling plan with the answer requirement the mode implies.
    pub fn effective_plan(&self) -> SamplingPlan {
        SamplingPlan {
            require_answer: self.sampling.require_answer || self.mode.requires_answer(),
            ..self.sampling.clone()
        }
    }
}

/// Joins groups in document order with separator tokens, shifting their
/// answer spans. Length is the sum of lengths plus one per separator.
pub fn merge_sampled(groups: &[&ParagraphGroup]) -> (Vec<String>, Vec<(usize, usize)>) {
    let mut ordered: Vec<&ParagraphGroup> = groups.to_vec();
    ordered.sort_by(|a, b| (&a.source_doc, a.position).cmp(&(&b.source_doc, b.position)));
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for (i, g) in ordered.iter().enumerate() {
        if i > 0 {
            tokens.push(SEPARATOR.to_string());
        }
        let offset = tokens.len();
        tokens.extend(g.tokens().iter().cloned());
        spans.extend(
            g.answer_spans
                .spans
                .iter()
                .map(|&(a, b)| (a + offset, b + offset)),
        );
    }
    (tokens, spans)
}

/// Loss of one question and the gradient for every parameter, or `None`
/// when the mode has nothing to learn from this draw.
pub fn question_gradients<T: Real>(
    model: &Model<T>,
    pool: &Pool,
    mode: TrainingMode,
    plan: &SamplingPlan,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(f64, Vec<Tensor<T>>)>> {
    let picks = epoch_sample(pool, plan, rng);
    let groups: Vec<&ParagraphGroup> = picks.iter().map(|&i| &pool.question.groups[i]).collect();
    let sequences: Vec<(Vec<String>, Vec<(usize, usize)>)> = match mode {
        TrainingMode::Merge => vec![merge_sampled(&groups)],
        TrainingMode::None => groups
            .iter()
            .filter(|g| g.has_answer)
            .map(|g| (g.tokens().to_vec(), g.answer_spans.spans.clone()))
            .collect(),
        _ => groups
            .iter()
            .map(|g| (g.tokens().to_vec(), g.answer_spans.spans.clone()))
            .collect(),
    };
    if sequences.is_empty() {
        return Ok(None);
    }

    let mut tape = Tape::new();
    let vars = model.params.bind(&mut tape, true);
    let mut dropout = Dropout::train(model.config.dropout_rate, rng);
    let question = &pool.question.question.tokens;
    let mut outputs = Vec::with_capacity(sequences.len());
    let mut labeled = Vec::with_capacity(sequences.len());
    for (tokens, spans) in &sequences {
        let out = model.forward(&mut tape, &vars, question, tokens, &mut dropout)?;
        labeled.push(LabeledScores::new(out.to_scores(&tape), spans.clone())?);
        outputs.push(out);
    }

    let (loss, grads): (f64, Vec<LossGrad>) = match mode {
        TrainingMode::SharedNorm => shared_norm_loss(&SharedNormGroup { members: labeled })?,
        _ => {
            let f = match mode {
                TrainingMode::Sigmoid => sigmoid_loss,
                TrainingMode::NoAnswer => no_answer_loss,
                _ => summed_bounds_loss,
            };
            let grads = labeled.iter().map(f).collect::<Result<Vec<_>>>()?;
            (grads.iter().map(|g| g.loss).sum(), grads)
        }
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite(format!(
            "loss for question {}",
            pool.question.q_id
        )));
    }

    let mut seeds = Vec::with_capacity(3 * outputs.len());
    for (out, g) in outputs.iter().zip(&grads) {
        seeds.push((
            out.start,
            Tensor::column(g.d_start.iter().map(|&x| T::of(x)).collect()),
        ));
        seeds.push((
            out.end,
            Tensor::column(g.d_end.iter().map(|&x| T::of(x)).collect()),
        ));
        if let (Some(z), Some(dz)) = (out.no_answer, g.d_no_answer) {
            seeds.push((z, Tensor::scalar(T::of(dz))));
        }
    }
    let mut back = tape.backward(&seeds)?;
    let param_grads = vars
        .iter()
        .zip(model.params.iter())
        .map(|(&v, p)| {
            back.take(v)
                .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
        })
        .collect();
    Ok(Some((loss, param_grads)))
}

/// The RNG for one question in one epoch.
pub fn question_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean per-question loss over questions that contributed.
    pub mean_loss: f64,
    pub questions: usize,
    pub skipped: usize,
    pub steps: usize,
    pub mean_grad_norm: f64,
}

/// Model, optimizer and weight average under one training configuration.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real> {
    pub model: Model<T>,
    pub optimizer: OptimizerState<T>,
    pub ema: EmaState<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
}

impl<T: Real> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if config.mode.needs_no_answer_head() != model.config.no_answer_head {
            return Err(Error::Config(format!(
                "mode {} {} a no-answer head",
                config.mode,
                if config.mode.needs_no_answer_head() {
                    "needs"
                } else {
                    "must not have"
                }
            )));
        }
        let optimizer = OptimizerState::with_hyper(&model.params, 0.95, 1e-6, config.learning_rate);
        let ema = EmaState::new(&model.params, config.ema_decay);
        Ok(Trainer {
            model,
            optimizer,
            ema,
            config,
            epoch: 0,
        })
    }

    /// One pass over `pools` in a seeded shuffled order.
    pub fn train_epoch(&mut self, pools: &[Pool]) -> Result<EpochMetrics> {
        let plan = self.config.effective_plan();
        let mut order: Vec<usize> = (0..pools.len()).collect();
        order.shuffle(&mut question_rng(
            self.config.seed,
            self.epoch,
            u32::MAX as usize,
        ));

        let mut total_loss = 0.0;
        let mut counted = 0;
        let mut skipped = 0;
        let mut steps = 0;
        let mut norm_sum = 0.0;
        for batch in order.chunks(self.config.batch_size) {
            let model = &self.model;
            let (seed, epoch, mode) = (self.config.seed, self.epoch, self.config.mode);
            let results: Vec<Result<Option<(f64, Vec<Tensor<T>>)>>> = batch
                .par_iter()
                .map(|&qi| {
                    question_gradients(
                        model,
                        &pools[qi],
                        mode,
                        &plan,
                        &mut question_rng(seed, epoch, qi),
                    )
                })
                .collect();

            let mut sum: Option<Vec<Tensor<T>>> = None;
            let mut n = 0usize;
            for r in results {
                let Some((loss, grads)) = r? else {
                    skipped += 1;
                    continue;
                };
                total_loss += loss;
                n += 1;
                match sum.as_mut() {
                    None => sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(&grads) {
                            for (x, &y) in a.data_mut().iter_mut().zip(g.data()) {
                                *x += y;
                            }
                        }
                    }
                }
            }
            let Some(mut grads) = sum else { continue };
            let inv = T::of(1.0 / n as f64);
            for g in grads.iter_mut() {
                for x in g.data_mut() {
                    *x = *x * inv;
                }
            }
            counted += n;
            norm_sum += match self.config.clip_norm {
                Some(c) => clip_global_norm(&mut grads, c),
                None => grads.iter().map(Tensor::sum_squares).sum::<f64>().sqrt(),
            };
            adadelta_step(&mut self.model.params, &grads, &mut self.optimizer)?;
            ema_update(&self.model.params, &mut self.ema)?;
            steps += 1;
        }
        self.epoch += 1;
        let metrics = EpochMetrics {
            epoch: self.epoch,
            mean_loss: if counted > 0 {
                total_loss / counted as f64
            } else {
                0.0
            },
            questions: counted,
            skipped,
            steps,
            mean_grad_norm: if steps > 0 {
                norm_sum / steps as f64
            } else {
                0.0
            },
        };
        log::info!(
            "epoch {} mode {} loss {:.4} over {} questions ({} skipped)",
            metrics.epoch,
            self.config.mode,
            metrics.mean_loss,
            metrics.questions,
            metrics.skipped
        );
        Ok(metrics)
    }

    /// The model with averaged weights, for evaluation.
    pub fn averaged_model(&self) -> Model<T> {
        Model {
            params: self.ema.shadow.clone(),
            ..self.model.clone()
        }
    }
}
