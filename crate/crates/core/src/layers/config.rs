use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model dimensions and decoding limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub word_dim: usize,
    pub char_dim: usize,
    /// Hash buckets for characters; bucket 0 is padding.
    pub char_vocab: usize,
    pub char_filters: usize,
    pub char_width: usize,
    /// Characters per token beyond this are dropped before the char CNN.
    pub max_word_chars: usize,
    pub gru_dim: usize,
    pub linear_dim: usize,
    pub dropout_rate: f64,
    pub max_span_len: usize,
    pub no_answer_hidden: usize,
    /// Adds the no-answer head producing `z`.
    pub no_answer_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::squad()
    }
}

impl ModelConfig {
    /// Paragraph-scale settings: GRU 100, linear 200, span cap 17.
    pub fn squad() -> Self {
        ModelConfig {
            word_dim: 300,
            char_dim: 20,
            char_vocab: 262,
            char_filters: 100,
            char_width: 5,
            max_word_chars: 30,
            gru_dim: 100,
            linear_dim: 200,
            dropout_rate: 0.2,
            max_span_len: 17,
            no_answer_hidden: 80,
            no_answer_head: false,
        }
    }

    /// Larger dimensions (GRU 140, linear 280) and span cap 8.
    pub fn triviaqa() -> Self {
        ModelConfig {
            gru_dim: 140,
            linear_dim: 280,
            max_span_len: 8,
            ..Self::squad()
        }
    }

    /// Desk-scale dimensions for the synthetic corpus.
    pub fn small() -> Self {
        ModelConfig {
            word_dim: 24,
            char_dim: 8,
            char_vocab: 64,
            char_filters: 16,
            char_width: 3,
            max_word_chars: 16,
            gru_dim: 16,
            linear_dim: 32,
            dropout_rate: 0.2,
            max_span_len: 8,
            no_answer_hidden: 16,
            no_answer_head: false,
        }
    }

    /// Minimal dimensions used by gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            word_dim: 4,
            char_dim: 3,
            char_vocab: 11,
            char_filters: 4,
            char_width: 2,
            max_word_chars: 6,
            gru_dim: 3,
            linear_dim: 6,
            dropout_rate: 0.2,
            max_span_len: 4,
            no_answer_hidden: 4,
            no_answer_head: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("word_dim", self.word_dim),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("char_width", self.char_width),
            ("max_word_chars", self.max_word_chars),
            ("gru_dim", self.gru_dim),
            ("linear_dim", self.linear_dim),
            ("max_span_len", self.max_span_len),
            ("no_answer_hidden", self.no_answer_hidden),
        ];
        for (name, v) in sizes {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.char_vocab < 2 {
            return Err(Error::Config("char_vocab must be at least 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}
