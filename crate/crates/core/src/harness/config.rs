use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synthetic::{SyntheticSpec, DOCUMENTS_FILE, TEST_FILE, TRAIN_FILE, VECTORS_FILE};
use crate::corpus::DEFAULT_MERGE_TARGET;
use crate::error::{Error, Result};
use crate::layers::ModelConfig;
use crate::text::DEFAULT_MATCH_CAP;
use crate::training::{TrainConfig, TrainingMode};

/// Float width used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// One run: where the data lives, how to build and train the model, and
/// where artifacts go. Relative data paths resolve against `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub documents: PathBuf,
    pub train_questions: PathBuf,
    pub test_questions: PathBuf,
    pub word_vectors: PathBuf,
    pub out_dir: PathBuf,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub epochs: usize,
    pub k_max: usize,
    pub merge_target: usize,
    pub match_cap: usize,
    pub precision: Precision,
    /// Thread cap for parallel work; `None` uses every core.
    pub workers: Option<usize>,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data_dir: PathBuf::from("data"),
            documents: DOCUMENTS_FILE.into(),
            train_questions: TRAIN_FILE.into(),
            test_questions: TEST_FILE.into(),
            word_vectors: VECTORS_FILE.into(),
            out_dir: PathBuf::from("out"),
            model: ModelConfig::small(),
            train: TrainConfig::default(),
            epochs: 30,
            k_max: 8,
            merge_target: DEFAULT_MERGE_TARGET,
            match_cap: DEFAULT_MATCH_CAP,
            precision: Precision::F32,
            workers: None,
            synthetic: SyntheticSpec::default(),
        }
    }
}

/// Command-line values that replace config fields when present.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub mode: Option<TrainingMode>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
    pub k_max: Option<usize>,
    pub workers: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
}

impl RunConfig {
    /// Settings for the synthetic corpus at desk scale: one paragraph per
    /// group, and batches and averaging sized for a few hundred updates.
    pub fn desk_synthetic() -> Self {
        let mut c = RunConfig {
            merge_target: 30,
            ..RunConfig::default()
        };
        c.train.batch_size = 10;
        c.train.ema_decay = 0.99;
        c.train.seed = 7;
        c
    }

    pub fn parse(text: &str, source: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            source_name: source.to_string(),
            line: e.line(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(m) = o.mode {
            self.train.mode = m;
        }
        if let Some(e) = o.epochs {
            self.epochs = e;
        }
        if let Some(s) = o.seed {
            self.train.seed = s;
        }
        if let Some(k) = o.k_max {
            self.k_max = k;
        }
        if o.workers.is_some() {
            self.workers = o.workers;
        }
        if let Some(d) = &o.out_dir {
            self.out_dir = d.clone();
        }
        if let Some(d) = &o.data_dir {
            self.data_dir = d.clone();
        }
    }

    /// Derives the no-answer head flag from the mode, then validates.
    pub fn finalize(mut self) -> Result<Self> {
        self.model.no_answer_head = self.train.mode.needs_no_answer_head();
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.synthetic.validate()?;
        if self.model.no_answer_head != self.train.mode.needs_no_answer_head() {
            return Err(Error::Config(format!(
                "mode {} and no_answer_head = {} disagree",
                self.train.mode, self.model.no_answer_head
            )));
        }
        if self.k_max == 0 {
            return Err(Error::Config("k_max must be positive".into()));
        }
        if self.merge_target == 0 || self.match_cap == 0 {
            return Err(Error::Config(
                "merge_target and match_cap must be positive".into(),
            ));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.data_dir.join(path)
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }
}
