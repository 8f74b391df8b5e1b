//! Token embeddings: frozen word vector concatenated with a character CNN.
//!
//! The CNN embeds each character, slides `char_width`-wide filters over the
//! token and max-pools over positions. Tokens shorter than the width are
//! right-padded with the padding character. The separator token has no
//! pretrained vector and uses a learned word-slot embedding instead.

use rand::Rng;

use super::config::ModelConfig;
use super::params::{glorot, ParamId, ParamStore};
use super::vectors::WordVectors;
use crate::autodiff::{Axis, Real, Tape, Tensor, Var};
use crate::corpus::SEPARATOR;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EmbedIds {
    pub char_table: ParamId,
    pub filters: ParamId,
    pub filter_bias: ParamId,
    pub separator: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct EmbedVars {
    pub char_table: Var,
    pub filters: Var,
    pub filter_bias: Var,
    pub separator: Var,
}

impl EmbedIds {
    pub fn new<T: Real, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, c: &ModelConfig) -> Self {
        EmbedIds {
            char_table: store.add("embed.chars", glorot(rng, c.char_vocab, c.char_dim)),
            filters: store.add(
                "embed.filters",
                glorot(rng, c.char_width * c.char_dim, c.char_filters),
            ),
            filter_bias: store.add("embed.filter_bias", Tensor::zeros(&[1, c.char_filters])),
            separator: store.add("embed.separator", glorot(rng, 1, c.word_dim)),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> EmbedVars {
        EmbedVars {
            char_table: vars[self.char_table.0],
            filters: vars[self.filters.0],
            filter_bias: vars[self.filter_bias.0],
            separator: vars[self.separator.0],
        }
    }
}

/// Character bucket ids for one token, truncated to `max_word_chars` and
/// padded with 0 up to `char_width`. Non-padding ids are in `1..char_vocab`.
pub fn char_indices(token: &str, c: &ModelConfig) -> Vec<usize> {
    let buckets = (c.char_vocab - 1) as u32;
    let mut ids: Vec<usize> = token
        .chars()
        .take(c.max_word_chars)
        .map(|ch| 1 + (ch as u32 % buckets) as usize)
        .collect();
    if ids.len() < c.char_width {
        ids.resize(c.char_width, 0);
    }
    ids
}

/// Frozen word slice for `tokens` (`[n × word_dim]`); unknown words and the
/// separator are zero rows. Also returns the separator positions.
pub fn word_matrix<T: Real>(words: &WordVectors<T>, tokens: &[String]) -> (Tensor<T>, Vec<usize>) {
    let dim = words.dim();
    let mut data = vec![T::zero(); tokens.len() * dim];
    let mut separators = Vec::new();
    for (i, tok) in tokens.iter().enumerate() {
        if tok == SEPARATOR {
            separators.push(i);
        } else if let Some(v) = words.lookup(tok) {
            data[i * dim..(i + 1) * dim].copy_from_slice(v);
        }
    }
    let t = Tensor::new(vec![tokens.len(), dim], data).expect("word matrix shape");
    (t, separators)
}

/// Character-CNN features, `[n × char_filters]`.
pub fn char_cnn<T: Real>(
    tape: &mut Tape<T>,
    p: &EmbedVars,
    tokens: &[String],
    c: &ModelConfig,
) -> Result<Var> {
    let mut window_ids = Vec::new();
    let mut windows_per_token = Vec::with_capacity(tokens.len());
    for tok in tokens {
        let ids = char_indices(tok, c);
        let windows = ids.len() + 1 - c.char_width;
        for w in 0..windows {
            window_ids.extend_from_slice(&ids[w..w + c.char_width]);
        }
        windows_per_token.push(windows);
    }
    let total: usize = windows_per_token.iter().sum();
    let chars = tape.gather_rows(p.char_table, &window_ids)?;
    let unfolded = tape.reshape(chars, &[total, c.char_width * c.char_dim])?;
    let conv = tape.matmul(unfolded, p.filters)?;
    let conv = tape.add(conv, p.filter_bias)?;
    tape.segment_max(conv, &windows_per_token)
}

/// `[n × (word_dim + char_filters)]` embedding of `tokens`.
pub fn embed<T: Real>(
    tape: &mut Tape<T>,
    p: &EmbedVars,
    words: &WordVectors<T>,
    tokens: &[String],
    c: &ModelConfig,
) -> Result<Var> {
    let (word_rows, separators) = word_matrix(words, tokens);
    let mut word_part = tape.constant(word_rows);
    if !separators.is_empty() {
        let mut mask = vec![T::zero(); tokens.len()];
        for &i in &separators {
            mask[i] = T::one();
        }
        let rows = tape.gather_rows(p.separator, &vec![0; tokens.len()])?;
        let mask = tape.constant(Tensor::column(mask));
        let sep = tape.mul(rows, mask)?;
        word_part = tape.add(word_part, sep)?;
    }
    let chars = char_cnn(tape, p, tokens, c)?;
    tape.concat(&[word_part, chars], Axis::Cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (ModelConfig, ParamStore<f64>, EmbedIds, WordVectors<f64>) {
        let c = ModelConfig::tiny();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let ids = EmbedIds::new(&mut store, &mut rng, &c);
        let words = WordVectors::parse("tiger 1 2 3 4\ncat -1 0 0.5 2\n", "mem", Some(4)).unwrap();
        (c, store, ids, words)
    }

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn zero_filters_pool_to_bias() {
        let (c, mut store, ids, words) = setup();
        *store.get_mut(ids.filters) = Tensor::zeros(store.get(ids.filters).shape());
        *store.get_mut(ids.filter_bias) = Tensor::full(&[1, c.char_filters], 0.75);
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, false);
        let out = embed(&mut tape, &ids.bind(&vars), &words, &toks(&["tiger"]), &c).unwrap();
        let v = tape.value(out);
        assert_eq!(v.shape(), &[1, c.word_dim + c.char_filters]);
        assert!(v.row_slice(0)[c.word_dim..].iter().all(|&x| x == 0.75));
    }

    #[test]
    fn known_word_slice_is_file_row_and_unknown_is_zero() {
        let (c, store, ids, words) = setup();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, false);
        let out = embed(
            &mut tape,
            &ids.bind(&vars),
            &words,
            &toks(&["cat", "zebra"]),
            &c,
        )
        .unwrap();
        let v = tape.value(out);
        assert_eq!(&v.row_slice(0)[..4], &[-1.0, 0.0, 0.5, 2.0]);
        assert_eq!(&v.row_slice(1)[..4], &[0.0; 4]);
    }

    #[test]
    fn case_variants_share_word_slice_but_not_chars() {
        let (c, store, ids, words) = setup();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, false);
        let out = embed(
            &mut tape,
            &ids.bind(&vars),
            &words,
            &toks(&["tiger", "Tiger"]),
            &c,
        )
        .unwrap();
        let v = tape.value(out);
        assert_eq!(&v.row_slice(0)[..4], &v.row_slice(1)[..4]);
        assert_ne!(&v.row_slice(0)[4..], &v.row_slice(1)[4..]);
    }

    #[test]
    fn separator_uses_learned_row() {
        let (c, store, ids, words) = setup();
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, true);
        let out = embed(
            &mut tape,
            &ids.bind(&vars),
            &words,
            &toks(&["cat", SEPARATOR]),
            &c,
        )
        .unwrap();
        assert_eq!(
            &tape.value(out).row_slice(1)[..4],
            store.get(ids.separator).data()
        );
        let loss = tape.sum(out);
        let grads = tape.backward_scalar(loss).unwrap();
        assert_eq!(grads.get(vars[ids.separator.0]).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn char_ids_are_padded_and_truncated() {
        let c = ModelConfig::tiny();
        assert_eq!(char_indices("a", &c).len(), c.char_width);
        assert_eq!(char_indices("a", &c)[1], 0);
        assert_eq!(char_indices("abcdefghij", &c).len(), c.max_word_chars);
        assert!(char_indices("xyz", &c)
            .iter()
            .all(|&i| (1..c.char_vocab).contains(&i)));
    }
}
