use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Real;
use crate::error::{Error, Result};

/// Frozen pre-trained word vectors in GloVe text format: one word per line,
/// followed by `dim` whitespace-separated floats.
#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors<T> {
    dim: usize,
    index: HashMap<String, usize>,
    table: Vec<T>,
}

impl<T: Real> WordVectors<T> {
    pub fn empty(dim: usize) -> Self {
        WordVectors {
            dim,
            index: HashMap::new(),
            table: Vec::new(),
        }
    }

    pub fn from_pairs(
        dim: usize,
        pairs: impl IntoIterator<Item = (String, Vec<T>)>,
    ) -> Result<Self> {
        let mut wv = WordVectors::empty(dim);
        for (word, v) in pairs {
            if v.len() != dim {
                return Err(Error::InvalidInput(format!(
                    "vector for {word:?} has {} values, expected {dim}",
                    v.len()
                )));
            }
            wv.insert(word, &v);
        }
        Ok(wv)
    }

    fn insert(&mut self, word: String, v: &[T]) {
        if let Some(&row) = self.index.get(&word) {
            self.table[row * self.dim..(row + 1) * self.dim].copy_from_slice(v);
        } else {
            self.index.insert(word, self.index.len());
            self.table.extend_from_slice(v);
        }
    }

    /// Parses GloVe text. When `expected_dim` is `None` the dimension is taken
    /// from the first line. Blank lines are skipped; later duplicates win.
    pub fn parse(text: &str, source: &str, expected_dim: Option<usize>) -> Result<Self> {
        let mut wv: Option<WordVectors<T>> = expected_dim.map(WordVectors::empty);
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let err = |message: String| Error::Parse {
                source_name: source.to_string(),
                line: i + 1,
                message,
            };
            let values = values.map_err(|e| err(format!("bad float: {e}")))?;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(err("non-finite value".into()));
            }
            let table = wv.get_or_insert_with(|| WordVectors::empty(values.len()));
            if values.is_empty() || values.len() != table.dim {
                return Err(err(format!(
                    "expected {} values after {word:?}, found {}",
                    table.dim,
                    values.len()
                )));
            }
            let row: Vec<T> = values.into_iter().map(T::of).collect();
            table.insert(word.to_string(), &row);
        }
        wv.ok_or_else(|| Error::Parse {
            source_name: source.to_string(),
            line: 0,
            message: "no vectors found".into(),
        })
    }

    pub fn read(path: &Path, expected_dim: Option<usize>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string(), expected_dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    /// Exact match first, then the lowercased token.
    pub fn lookup(&self, token: &str) -> Option<&[T]> {
        let row = self
            .index
            .get(token)
            .or_else(|| self.index.get(&token.to_lowercase()))?;
        Some(&self.table[row * self.dim..(row + 1) * self.dim])
    }

    /// GloVe text, rows in insertion order.
    pub fn to_text(&self) -> String {
        let mut words: Vec<(&String, &usize)> = self.index.iter().collect();
        words.sort_by_key(|(_, &r)| r);
        let mut out = String::new();
        for (w, &r) in words {
            out.push_str(w);
            for x in &self.table[r * self.dim..(r + 1) * self.dim] {
                let _ = write!(out, " {}", x.as_f64());
            }
            out.push('\n');
        }
        out
    }

    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for x in &self.table {
            for b in x.as_f64().to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> WordVectors<U> {
        WordVectors {
            dim: self.dim,
            index: self.index.clone(),
            table: self.table.iter().map(|x| U::of(x.as_f64())).collect(),
        }
    }
}
