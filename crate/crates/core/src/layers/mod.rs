//! The reader network: embeddings, a shared bi-directional GRU, bi-directional
//! attention, residual self-attention, boundary prediction and an optional
//! no-answer head.

pub mod attention;
pub mod config;
pub mod dropout;
pub mod embed;
pub mod gru;
pub mod linear;
pub mod model;
pub mod params;
pub mod predict;
pub mod vectors;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use config::ModelConfig;
pub use dropout::{variational_dropout_mask, Dropout};
pub use model::{ForwardVars, Model, ModelLayout};
pub use params::{ParamId, ParamStore};
pub use vectors::WordVectors;

/// Per-token start scores `s` and end scores `g` for one paragraph, plus the
/// no-answer score `z` when the model has that head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMatrix {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
    pub no_answer: Option<f64>,
}

impl ScoreMatrix {
    pub fn new(start: Vec<f64>, end: Vec<f64>, no_answer: Option<f64>) -> Result<Self> {
        let m = ScoreMatrix {
            start,
            end,
            no_answer,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if self.start.len() != self.end.len() {
            return Err(Error::InvalidInput(format!(
                "{} start scores but {} end scores",
                self.start.len(),
                self.end.len()
            )));
        }
        if self.start.is_empty() {
            return Err(Error::InvalidInput("empty score matrix".into()));
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        let finite = self
            .start
            .iter()
            .chain(&self.end)
            .chain(&self.no_answer)
            .all(|x| x.is_finite());
        if finite {
            Ok(())
        } else {
            Err(Error::NonFinite("model produced a non-finite score".into()))
        }
    }
}
