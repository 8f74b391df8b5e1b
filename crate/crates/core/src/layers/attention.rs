//! Bi-directional attention between context and question, and the residual
//! self-attention block.
//!
//! Context-to-question, for context states `h_i` and question states `q_j`:
//!
//! ```text
//! a_ij = w1·h_i + w2·q_j + w3·(h_i ⊙ q_j)
//! p_ij = softmax_j(a_ij)            c_i = Σ_j p_ij q_j
//! m_i  = max_j a_ij                 p_i = softmax_i(m_i)
//! q_c  = Σ_i p_i h_i
//! out_i = ReLU(W [h_i, c_i, h_i ⊙ c_i, q_c ⊙ c_i] + b)
//! ```
//!
//! Self-attention uses the same trilinear scores of the passage against
//! itself with `a_ii` excluded and no `q_c` term. A row with every entry
//! excluded (n = 1) attends to the zero vector.

use rand::Rng;

use super::gru::{bigru, BiGruIds, BiGruVars};
use super::linear::{LinearIds, LinearVars};
use super::params::{glorot, ParamId, ParamStore};
use super::Dropout;
use crate::autodiff::{Axis, Real, Tape, Tensor, Var};
use crate::error::Result;

/// Trilinear scoring vectors: `w1, w2` are `[d × 1]`, `w3` is `[1 × d]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrilinearIds {
    pub w1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
}

#[derive(Debug, Clone, Copy)]
pub struct TrilinearVars {
    pub w1: Var,
    pub w2: Var,
    pub w3: Var,
}

impl TrilinearIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d: usize,
    ) -> Self {
        TrilinearIds {
            w1: store.add(format!("{name}.w1"), glorot(rng, d, 1)),
            w2: store.add(format!("{name}.w2"), glorot(rng, d, 1)),
            w3: store.add(format!("{name}.w3"), glorot(rng, 1, d)),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> TrilinearVars {
        TrilinearVars {
            w1: vars[self.w1.0],
            w2: vars[self.w2.0],
            w3: vars[self.w3.0],
        }
    }
}

impl TrilinearVars {
    /// `[n_h × n_q]` scores `a_ij`.
    pub fn scores<T: Real>(&self, tape: &mut Tape<T>, h: Var, q: Var) -> Result<Var> {
        let hw = tape.matmul(h, self.w1)?;
        let qw = tape.matmul(q, self.w2)?;
        let qw_row = tape.transpose(qw)?;
        let hw3 = tape.mul(h, self.w3)?;
        let qt = tape.transpose(q)?;
        let cross = tape.matmul(hw3, qt)?;
        let a = tape.add(cross, hw)?;
        tape.add(a, qw_row)
    }
}

/// Output of an attention layer plus its row-normalized weights.
#[derive(Debug, Clone, Copy)]
pub struct Attended {
    pub output: Var,
    pub weights: Var,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BidafIds {
    pub scores: TrilinearIds,
    pub linear: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct BidafVars {
    pub scores: TrilinearVars,
    pub linear: LinearVars,
}

impl BidafIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d: usize,
        out: usize,
    ) -> Self {
        BidafIds {
            scores: TrilinearIds::new(store, rng, &format!("{name}.att"), d),
            linear: LinearIds::new(store, rng, &format!("{name}.linear"), 4 * d, out),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> BidafVars {
        BidafVars {
            scores: self.scores.bind(vars),
            linear: self.linear.bind(vars),
        }
    }
}

/// Context `h` (`[n_c × d]`) attending to question `q` (`[n_q × d]`).
pub fn bidaf_attention<T: Real>(
    tape: &mut Tape<T>,
    p: &BidafVars,
    h: Var,
    q: Var,
) -> Result<Attended> {
    let a = p.scores.scores(tape, h, q)?;
    let weights = tape.softmax_rows(a, None)?;
    let c = tape.matmul(weights, q)?;
    let m = tape.max_over_axis(a, Axis::Cols)?;
    let m_row = tape.transpose(m)?;
    let pm = tape.softmax_rows(m_row, None)?;
    let qc = tape.matmul(pm, h)?;
    let hc = tape.mul(h, c)?;
    let qcc = tape.mul(c, qc)?;
    let cat = tape.concat(&[h, c, hc, qcc], Axis::Cols)?;
    let output = p.linear.apply_relu(tape, cat)?;
    Ok(Attended { output, weights })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelfAttentionIds {
    pub gru: BiGruIds,
    pub scores: TrilinearIds,
    pub linear: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct SelfAttentionVars {
    pub gru: BiGruVars,
    pub scores: TrilinearVars,
    pub linear: LinearVars,
}

impl SelfAttentionIds {
    /// Block over `[n × d]` inputs with a GRU of width `gru_dim`.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        d: usize,
        gru_dim: usize,
    ) -> Self {
        SelfAttentionIds {
            gru: BiGruIds::new(store, rng, &format!("{name}.gru"), d, gru_dim),
            scores: TrilinearIds::new(store, rng, &format!("{name}.att"), 2 * gru_dim),
            linear: LinearIds::new(store, rng, &format!("{name}.linear"), 6 * gru_dim, d),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> SelfAttentionVars {
        SelfAttentionVars {
            gru: self.gru.bind(vars),
            scores: self.scores.bind(vars),
            linear: self.linear.bind(vars),
        }
    }
}

/// `1 − I` as an `[n × n]` keep-mask.
pub fn off_diagonal_mask<T: Real>(n: usize) -> Tensor<T> {
    let mut data = vec![T::one(); n * n];
    for i in 0..n {
        data[i * n + i] = T::zero();
    }
    Tensor::new(vec![n, n], data).expect("square mask")
}

/// `x + ReLU(W [s_i, c_i, s_i ⊙ c_i] + b)` where `s = BiGRU(x)` and `c` is
/// the diagonal-masked self-attention over `s`.
pub fn self_attention_block<T: Real>(
    tape: &mut Tape<T>,
    p: &SelfAttentionVars,
    x: Var,
    dropout: &mut Dropout<'_>,
) -> Result<Attended> {
    let n = tape.value(x).rows();
    let xd = dropout.apply(tape, x)?;
    let s = bigru(tape, &p.gru, xd)?;
    let s = dropout.apply(tape, s)?;
    let a = p.scores.scores(tape, s, s)?;
    let weights = tape.softmax_rows(a, Some(&off_diagonal_mask(n)))?;
    let c = tape.matmul(weights, s)?;
    let sc = tape.mul(s, c)?;
    let cat = tape.concat(&[s, c, sc], Axis::Cols)?;
    let y = p.linear.apply_relu(tape, cat)?;
    let output = tape.add(x, y)?;
    Ok(Attended { output, weights })
}
