//! Span boundary scores and the no-answer score.

use rand::Rng;

use super::gru::{bigru, BiGruIds, BiGruVars};
use super::linear::{LinearIds, LinearVars};
use super::params::{glorot, ParamId, ParamStore};
use super::Dropout;
use crate::autodiff::{Axis, Real, Tape, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundaryIds {
    pub start_gru: BiGruIds,
    pub start: LinearIds,
    pub end_gru: BiGruIds,
    pub end: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct BoundaryVars {
    pub start_gru: BiGruVars,
    pub start: LinearVars,
    pub end_gru: BiGruVars,
    pub end: LinearVars,
}

impl BoundaryIds {
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        d: usize,
        gru_dim: usize,
    ) -> Self {
        BoundaryIds {
            start_gru: BiGruIds::new(store, rng, "predict.start_gru", d, gru_dim),
            start: LinearIds::new(store, rng, "predict.start", 2 * gru_dim, 1),
            end_gru: BiGruIds::new(store, rng, "predict.end_gru", 2 * gru_dim + d, gru_dim),
            end: LinearIds::new(store, rng, "predict.end", 2 * gru_dim, 1),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> BoundaryVars {
        BoundaryVars {
            start_gru: self.start_gru.bind(vars),
            start: self.start.bind(vars),
            end_gru: self.end_gru.bind(vars),
            end: self.end.bind(vars),
        }
    }
}

/// Boundary scores (`[n × 1]` each) and the GRU states they came from.
#[derive(Debug, Clone, Copy)]
pub struct Boundaries {
    pub start: Var,
    pub end: Var,
    pub start_states: Var,
    pub end_states: Var,
}

/// `G1 = BiGRU(x)`, `s = G1·w_s + b_s`; `G2 = BiGRU([G1, x])`, `g = G2·w_e + b_e`.
pub fn predict_boundaries<T: Real>(
    tape: &mut Tape<T>,
    p: &BoundaryVars,
    x: Var,
    dropout: &mut Dropout<'_>,
) -> Result<Boundaries> {
    let xd = dropout.apply(tape, x)?;
    let g1 = bigru(tape, &p.start_gru, xd)?;
    let start = p.start.apply(tape, g1)?;
    let cat = tape.concat(&[g1, x], Axis::Cols)?;
    let cat = dropout.apply(tape, cat)?;
    let g2 = bigru(tape, &p.end_gru, cat)?;
    let end = p.end.apply(tape, g2)?;
    Ok(Boundaries {
        start,
        end,
        start_states: g1,
        end_states: g2,
    })
}

/// Pooling vector `w` over the self-attention output and a two-layer ReLU
/// network on `[v1, v2, v3]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoAnswerIds {
    pub pool: ParamId,
    pub hidden: LinearIds,
    pub out: LinearIds,
}

#[derive(Debug, Clone, Copy)]
pub struct NoAnswerVars {
    pub pool: Var,
    pub hidden: LinearVars,
    pub out: LinearVars,
}

impl NoAnswerIds {
    /// `state_dim` is the width of each boundary GRU's output; `d` the width
    /// of the self-attention output.
    pub fn new<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        state_dim: usize,
        d: usize,
        hidden: usize,
    ) -> Self {
        NoAnswerIds {
            pool: store.add("no_answer.pool", glorot(rng, d, 1)),
            hidden: LinearIds::new(store, rng, "no_answer.hidden", 2 * state_dim + d, hidden),
            out: LinearIds::new(store, rng, "no_answer.out", hidden, 1),
        }
    }

    pub fn bind(&self, vars: &[Var]) -> NoAnswerVars {
        NoAnswerVars {
            pool: vars[self.pool.0],
            hidden: self.hidden.bind(vars),
            out: self.out.bind(vars),
        }
    }
}

/// `Σ_i softmax(scores)_i · states_i` for `[n × 1]` scores, giving `[1 × d]`.
pub fn soft_pool<T: Real>(tape: &mut Tape<T>, scores: Var, states: Var) -> Result<Var> {
    let row = tape.transpose(scores)?;
    let weights = tape.softmax_rows(row, None)?;
    tape.matmul(weights, states)
}

/// Scalar `z` (`[1 × 1]`).
pub fn no_answer_score<T: Real>(
    tape: &mut Tape<T>,
    p: &NoAnswerVars,
    b: &Boundaries,
    self_att: Var,
) -> Result<Var> {
    let v1 = soft_pool(tape, b.start, b.start_states)?;
    let v2 = soft_pool(tape, b.end, b.end_states)?;
    let pool_scores = tape.matmul(self_att, p.pool)?;
    let v3 = soft_pool(tape, pool_scores, self_att)?;
    let v = tape.concat(&[v1, v2, v3], Axis::Cols)?;
    let hidden = p.hidden.apply_relu(tape, v)?;
    p.out.apply(tape, hidden)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
        let data = (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(vec![r, c], data).unwrap()
    }

    #[test]
    fn zero_weights_give_bias_scores() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f64>::new();
        let ids = BoundaryIds::new(&mut store, &mut rng, 3, 2);
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        *store.get_mut(ids.start.b) = Tensor::scalar(0.3);
        *store.get_mut(ids.end.b) = Tensor::scalar(-1.5);
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, false);
        let x = tape.constant(rand_tensor(&mut rng, 5, 3));
        let b = predict_boundaries(&mut tape, &ids.bind(&vars), x, &mut Dropout::eval()).unwrap();
        assert_eq!(tape.value(b.start).data(), &[0.3; 5]);
        assert_eq!(tape.value(b.end).data(), &[-1.5; 5]);
    }

    #[test]
    fn output_lengths_follow_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        let ids = BoundaryIds::new(&mut store, &mut rng, 3, 2);
        for n in [1, 5, 400] {
            let mut tape = Tape::new();
            let vars = store.bind(&mut tape, false);
            let x = tape.constant(rand_tensor(&mut rng, n, 3).cast());
            let b =
                predict_boundaries(&mut tape, &ids.bind(&vars), x, &mut Dropout::eval()).unwrap();
            assert_eq!(tape.value(b.start).shape(), &[n, 1]);
            assert_eq!(tape.value(b.end).shape(), &[n, 1]);
        }
    }

    #[test]
    fn equal_start_scores_pool_to_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut tape = Tape::<f64>::new();
        let scores = tape.constant(Tensor::full(&[4, 1], 2.5));
        let sv = rand_tensor(&mut rng, 4, 3);
        let states = tape.constant(sv.clone());
        let v = soft_pool(&mut tape, scores, states).unwrap();
        for k in 0..3 {
            let mean: f64 = (0..4).map(|i| sv.get(i, k)).sum::<f64>() / 4.0;
            assert!((tape.value(v).get(0, k) - mean).abs() < 1e-15);
        }
    }

    fn head_setup(seed: u64) -> (ParamStore<f64>, NoAnswerIds, ChaCha8Rng) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ids = NoAnswerIds::new(&mut store, &mut rng, 2, 3, 4);
        (store, ids, rng)
    }

    #[test]
    fn zero_network_gives_final_bias() {
        let (mut store, ids, mut rng) = head_setup(4);
        for p in store.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
        *store.get_mut(ids.out.b) = Tensor::scalar(0.7);
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, false);
        let b = Boundaries {
            start: tape.constant(rand_tensor(&mut rng, 3, 1)),
            end: tape.constant(rand_tensor(&mut rng, 3, 1)),
            start_states: tape.constant(rand_tensor(&mut rng, 3, 2)),
            end_states: tape.constant(rand_tensor(&mut rng, 3, 2)),
        };
        let y = tape.constant(rand_tensor(&mut rng, 3, 3));
        let z = no_answer_score(&mut tape, &ids.bind(&vars), &b, y).unwrap();
        assert_eq!(tape.value(z).data(), &[0.7]);
    }

    #[test]
    fn no_answer_gradient_check() {
        let (store, ids, mut rng) = head_setup(5);
        let mut points: Vec<Tensor<f64>> = store.iter().map(|p| p.value.clone()).collect();
        // Positive hidden biases keep the ReLUs away from their kink.
        let hb = ids.hidden.b.0;
        points[hb] = Tensor::full(points[hb].shape(), 0.5);
        for (r, c) in [(3, 1), (3, 1), (3, 2), (3, 2), (3, 3)] {
            points.push(rand_tensor(&mut rng, r, c));
        }
        let base = store.len();
        let err = grad_check(
            |tape, vars| {
                let b = Boundaries {
                    start: vars[base],
                    end: vars[base + 1],
                    start_states: vars[base + 2],
                    end_states: vars[base + 3],
                };
                no_answer_score(tape, &ids.bind(vars), &b, vars[base + 4])
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn boundary_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::<f64>::new();
        let ids = BoundaryIds::new(&mut store, &mut rng, 3, 2);
        let mut points: Vec<Tensor<f64>> = store.iter().map(|p| p.value.clone()).collect();
        points.push(rand_tensor(&mut rng, 6, 3));
        let ps = rand_tensor(&mut rng, 6, 1);
        let pe = rand_tensor(&mut rng, 6, 1);
        let err = grad_check(
            |tape, vars| {
                let x = vars[vars.len() - 1];
                let b = predict_boundaries(tape, &ids.bind(vars), x, &mut Dropout::eval())?;
                let ps = tape.constant(ps.clone());
                let pe = tape.constant(pe.clone());
                let a = tape.mul(b.start, ps)?;
                let e = tape.mul(b.end, pe)?;
                let t = tape.concat(&[a, e], Axis::Rows)?;
                Ok(tape.sum(t))
            },
            &points,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }
}
