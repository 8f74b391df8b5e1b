use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{EmaState, OptimizerState, TrainConfig, Trainer};
use crate::autodiff::Real;
use crate::error::{Error, Result};
use crate::layers::{Model, ModelConfig, ParamStore, WordVectors};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything needed to resume training or evaluate, as one JSON document.
/// Word vectors are referenced by checksum, not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Real", deny_unknown_fields)]
pub struct Checkpoint<T> {
    pub version: u32,
    pub precision: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub epoch: usize,
    pub word_vectors_checksum: u64,
    pub params: ParamStore<T>,
    pub optimizer: OptimizerState<T>,
    pub ema: EmaState<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn from_trainer(t: &Trainer<T>) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            precision: T::NAME.to_string(),
            model_config: t.model.config.clone(),
            train_config: t.config.clone(),
            epoch: t.epoch,
            word_vectors_checksum: t.model.words.checksum(),
            params: t.model.params.clone(),
            optimizer: t.optimizer.clone(),
            ema: t.ema.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and checks internal consistency: version, precision, and that
    /// parameters, optimizer and average share one layout.
    pub fn parse(text: &str, source: &str) -> Result<Self> {
        let ck: Checkpoint<T> = serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source.to_string(),
            line: e.line(),
            message: e.to_string(),
        })?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointMismatch(format!(
                "version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.precision != T::NAME {
            return Err(Error::CheckpointMismatch(format!(
                "precision {} (expected {})",
                ck.precision,
                T::NAME
            )));
        }
        ck.model_config.validate()?;
        ck.train_config.validate()?;
        ck.ema.shadow.check_layout(&ck.params)?;
        ck.optimizer.check_layout(&ck.params)?;
        if ck.params.iter().any(|p| !p.value.all_finite()) {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Rejects a checkpoint trained under a different model configuration.
    pub fn expect_config(&self, config: &ModelConfig) -> Result<()> {
        if &self.model_config == config {
            Ok(())
        } else {
            Err(Error::CheckpointMismatch(format!(
                "checkpoint model config {:?} differs from requested {:?}",
                self.model_config, config
            )))
        }
    }

    /// Rebuilds the trainer. The word vectors must be the ones trained with.
    pub fn into_trainer(self, words: Arc<WordVectors<T>>) -> Result<Trainer<T>> {
        if words.checksum() != self.word_vectors_checksum {
            return Err(Error::CheckpointMismatch(
                "word vectors differ from the ones trained with".into(),
            ));
        }
        let model = Model::from_params(self.model_config, words, self.params)?;
        let mut trainer = Trainer::new(model, self.train_config)?;
        trainer.optimizer = self.optimizer;
        trainer.ema = self.ema;
        trainer.epoch = self.epoch;
        Ok(trainer)
    }
}
