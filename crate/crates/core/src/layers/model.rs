use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::attention::{bidaf_attention, self_attention_block, BidafIds, SelfAttentionIds};
use super::config::ModelConfig;
use super::embed::{embed, EmbedIds};
use super::gru::{bigru, BiGruIds};
use super::params::ParamStore;
use super::predict::{no_answer_score, predict_boundaries, BoundaryIds, NoAnswerIds};
use super::vectors::WordVectors;
use super::{Dropout, ScoreMatrix};
use crate::autodiff::{Real, Tape, Var};
use crate::error::{Error, Result};

/// Where each layer's parameters live in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelLayout {
    pub embed: EmbedIds,
    pub shared: BiGruIds,
    pub bidaf: BidafIds,
    pub self_att: SelfAttentionIds,
    pub boundaries: BoundaryIds,
    pub no_answer: Option<NoAnswerIds>,
}

impl ModelLayout {
    /// Registers every parameter in a fixed order and returns their ids.
    pub fn build<T: Real>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        c: &ModelConfig,
    ) -> Self {
        let g = c.gru_dim;
        let embed = EmbedIds::new(store, rng, c);
        let shared = BiGruIds::new(store, rng, "shared_gru", c.word_dim + c.char_filters, g);
        let bidaf = BidafIds::new(store, rng, "bidaf", 2 * g, c.linear_dim);
        let self_att = SelfAttentionIds::new(store, rng, "self", c.linear_dim, g);
        let boundaries = BoundaryIds::new(store, rng, c.linear_dim, g);
        let no_answer = c
            .no_answer_head
            .then(|| NoAnswerIds::new(store, rng, 2 * g, c.linear_dim, c.no_answer_hidden));
        ModelLayout {
            embed,
            shared,
            bidaf,
            self_att,
            boundaries,
            no_answer,
        }
    }
}

/// Score tensors from one forward pass: `[n × 1]` start and end, `[1 × 1]` z.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub start: Var,
    pub end: Var,
    pub no_answer: Option<Var>,
}

impl ForwardVars {
    pub fn to_scores<T: Real>(&self, tape: &Tape<T>) -> ScoreMatrix {
        ScoreMatrix {
            start: tape.value(self.start).to_f64_vec(),
            end: tape.value(self.end).to_f64_vec(),
            no_answer: self.no_answer.map(|z| tape.value(z).data()[0].as_f64()),
        }
    }
}

/// Trainable parameters plus the frozen word table.
#[derive(Debug, Clone)]
pub struct Model<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub layout: ModelLayout,
    pub words: Arc<WordVectors<T>>,
}

impl<T: Real> Model<T> {
    /// Fresh parameters drawn from a ChaCha8 stream seeded with `seed`.
    pub fn new(config: ModelConfig, words: Arc<WordVectors<T>>, seed: u64) -> Result<Self> {
        config.validate()?;
        if words.dim() != config.word_dim {
            return Err(Error::Config(format!(
                "word vectors have dimension {}, config expects {}",
                words.dim(),
                config.word_dim
            )));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layout = ModelLayout::build(&mut params, &mut rng, &config);
        Ok(Model {
            config,
            params,
            layout,
            words,
        })
    }

    /// Rebuilds a model around stored parameters, which must match the
    /// layout `config` implies.
    pub fn from_params(
        config: ModelConfig,
        words: Arc<WordVectors<T>>,
        params: ParamStore<T>,
    ) -> Result<Self> {
        let mut model = Model::new(config, words, 0)?;
        model.params.check_layout(&params)?;
        model.params = params;
        Ok(model)
    }

    /// Builds the full graph. `vars` are the bound parameters in store order.
    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        question: &[String],
        context: &[String],
        dropout: &mut Dropout<'_>,
    ) -> Result<ForwardVars> {
        if question.is_empty() || context.is_empty() {
            return Err(Error::InvalidInput(
                "question and context must be non-empty".into(),
            ));
        }
        let c = &self.config;
        let l = &self.layout;
        let emb = l.embed.bind(vars);
        let shared = l.shared.bind(vars);

        let ctx = embed(tape, &emb, &self.words, context, c)?;
        let ctx = dropout.apply(tape, ctx)?;
        let qst = embed(tape, &emb, &self.words, question, c)?;
        let qst = dropout.apply(tape, qst)?;

        let h = bigru(tape, &shared, ctx)?;
        let q = bigru(tape, &shared, qst)?;
        let h = dropout.apply(tape, h)?;
        let q = dropout.apply(tape, q)?;
        let att = bidaf_attention(tape, &l.bidaf.bind(vars), h, q)?;

        let y = self_attention_block(tape, &l.self_att.bind(vars), att.output, dropout)?.output;
        let b = predict_boundaries(tape, &l.boundaries.bind(vars), y, dropout)?;
        let no_answer = match &l.no_answer {
            Some(ids) => Some(no_answer_score(tape, &ids.bind(vars), &b, y)?),
            None => None,
        };
        Ok(ForwardVars {
            start: b.start,
            end: b.end,
            no_answer,
        })
    }

    /// Eval-mode scores for one paragraph.
    pub fn scores(&self, question: &[String], context: &[String]) -> Result<ScoreMatrix> {
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape, false);
        let out = self.forward(&mut tape, &vars, question, context, &mut Dropout::eval())?;
        let scores = out.to_scores(&tape);
        scores.check_finite()?;
        Ok(scores)
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout,
            words: Arc::new(self.words.cast()),
        }
    }
}
