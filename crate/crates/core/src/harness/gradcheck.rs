//! Finite-difference checks of every tape primitive, every layer, the full
//! model and every objective, in 64-bit precision.
//!
//! Each check draws fresh random inputs per point and reduces the output to
//! a scalar through a fixed random weighting, so no gradient is trivially
//! uniform.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{grad_check, Axis, Tape, Tensor, Var};
use crate::corpus::SEPARATOR;
use crate::error::Result;
use crate::layers::attention::{
    bidaf_attention, self_attention_block, BidafIds, SelfAttentionIds, TrilinearIds,
};
use crate::layers::embed::{embed, EmbedIds};
use crate::layers::gru::{bigru, gru, BiGruIds, GruIds};
use crate::layers::linear::LinearIds;
use crate::layers::predict::{no_answer_score, predict_boundaries, BoundaryIds, NoAnswerIds};
use crate::layers::{Dropout, Model, ModelConfig, ParamStore, ScoreMatrix, WordVectors};
use crate::objectives::{
    independent_bounds_loss, no_answer_loss, shared_norm_loss, sigmoid_loss, summed_bounds_loss,
    LabeledScores, LossGrad, SharedNormGroup,
};

const EPS: f64 = 1e-6;
pub const PRIMITIVE_TOLERANCE: f64 = 1e-5;
pub const END_TO_END_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckRow {
    pub name: String,
    /// `primitive`, `layer`, `model` or `objective`.
    pub group: String,
    pub points: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .expect("shape")
}

fn jitter(t: &Tensor<f64>, rng: &mut ChaCha8Rng, amp: f64) -> Tensor<f64> {
    let mut out = t.clone();
    for x in out.data_mut() {
        *x += rng.gen_range(-amp..amp);
    }
    out
}

/// `Σ w ⊙ v` with `w` drawn from `seed`, identical on every call.
fn weighted_sum(tape: &mut Tape<f64>, v: Var, seed: u64) -> Result<Var> {
    let shape = tape.value(v).shape().to_vec();
    let w = uniform(&mut ChaCha8Rng::seed_from_u64(seed), &shape, -1.0, 1.0);
    let w = tape.constant(w);
    let p = tape.mul(v, w)?;
    Ok(tape.sum(p))
}

type TapeFn = dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

struct Check {
    name: &'static str,
    shapes: Vec<Vec<usize>>,
    range: (f64, f64),
    f: Box<TapeFn>,
}

fn check(
    name: &'static str,
    shapes: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + 'static,
) -> Check {
    Check {
        name,
        shapes: shapes.iter().map(|s| s.to_vec()).collect(),
        range: (-1.5, 1.5),
        f: Box::new(f),
    }
}

fn primitive_checks() -> Vec<Check> {
    use Axis::{Cols, Rows};
    let mut v = vec![
        check("matmul", &[&[3, 4], &[4, 2]], |t, x| t.matmul(x[0], x[1])),
        check("add", &[&[3, 4], &[3, 4]], |t, x| t.add(x[0], x[1])),
        check("add_row_broadcast", &[&[3, 4], &[1, 4]], |t, x| {
            t.add(x[0], x[1])
        }),
        check("add_col_broadcast", &[&[3, 4], &[3, 1]], |t, x| {
            t.add(x[0], x[1])
        }),
        check("add_scalar_broadcast", &[&[3, 4], &[1, 1]], |t, x| {
            t.add(x[0], x[1])
        }),
        check("sub", &[&[3, 4], &[1, 4]], |t, x| t.sub(x[0], x[1])),
        check("mul", &[&[3, 4], &[3, 4]], |t, x| t.mul(x[0], x[1])),
        check("mul_col_broadcast", &[&[3, 4], &[3, 1]], |t, x| {
            t.mul(x[0], x[1])
        }),
        check("affine", &[&[2, 3]], |t, x| Ok(t.affine(x[0], 1.7, -0.3))),
        check("concat_cols", &[&[3, 2], &[3, 4]], |t, x| {
            t.concat(&[x[0], x[1]], Cols)
        }),
        check("concat_rows", &[&[2, 3], &[4, 3]], |t, x| {
            t.concat(&[x[0], x[1]], Rows)
        }),
        check("relu", &[&[4, 5]], |t, x| Ok(t.relu(x[0]))),
        check("tanh", &[&[4, 5]], |t, x| Ok(t.tanh(x[0]))),
        check("sigmoid", &[&[4, 5]], |t, x| Ok(t.sigmoid(x[0]))),
        check("exp", &[&[4, 5]], |t, x| Ok(t.exp(x[0]))),
        check("max_rows", &[&[4, 5]], |t, x| t.max_over_axis(x[0], Rows)),
        check("max_cols", &[&[4, 5]], |t, x| t.max_over_axis(x[0], Cols)),
        check("segment_max", &[&[6, 3]], |t, x| {
            t.segment_max(x[0], &[2, 1, 3])
        }),
        check("softmax_rows", &[&[3, 5]], |t, x| {
            t.softmax_rows(x[0], None)
        }),
        check("softmax_rows_masked", &[&[4, 4]], |t, x| {
            t.softmax_rows(x[0], Some(&crate::layers::attention::off_diagonal_mask(4)))
        }),
        check("transpose", &[&[3, 5]], |t, x| t.transpose(x[0])),
        check("slice_rows", &[&[5, 3]], |t, x| t.slice_rows(x[0], 1, 3)),
        check("slice_cols", &[&[3, 5]], |t, x| t.slice_cols(x[0], 2, 2)),
        check("gather_rows", &[&[4, 3]], |t, x| {
            t.gather_rows(x[0], &[2, 0, 2, 3])
        }),
        check("reshape", &[&[4, 3]], |t, x| t.reshape(x[0], &[2, 6])),
        check("sum", &[&[3, 3]], |t, x| Ok(t.sum(x[0]))),
    ];
    let mut log = check("log", &[&[4, 5]], |t, x| Ok(t.log(x[0])));
    log.range = (0.5, 2.0);
    v.push(log);
    v
}

/// Parameters of a layer plus extra inputs, bound in order.
fn layer_check(
    name: &'static str,
    store: ParamStore<f64>,
    inputs: &[&[usize]],
    f: impl Fn(&mut Tape<f64>, &[Var], &[Var]) -> Result<Var> + 'static,
) -> (Check, Vec<Tensor<f64>>) {
    let base: Vec<Tensor<f64>> = store.iter().map(|p| p.value.clone()).collect();
    let n = base.len();
    let mut shapes: Vec<Vec<usize>> = base.iter().map(|t| t.shape().to_vec()).collect();
    shapes.extend(inputs.iter().map(|s| s.to_vec()));
    let c = Check {
        name,
        shapes,
        range: (-1.0, 1.0),
        f: Box::new(move |t, vars| f(t, &vars[..n], &vars[n..])),
    };
    (c, base)
}

fn layer_checks() -> Vec<(Check, Vec<Tensor<f64>>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut out = Vec::new();

    let mut s = ParamStore::new();
    let ids = LinearIds::new(&mut s, &mut rng, "lin", 4, 3);
    out.push(layer_check("linear_relu", s, &[&[3, 4]], move |t, p, x| {
        ids.bind(p).apply_relu(t, x[0])
    }));

    let mut s = ParamStore::new();
    let ids = GruIds::new(&mut s, &mut rng, "gru", 3, 2);
    out.push(layer_check("gru", s, &[&[4, 3]], move |t, p, x| {
        gru(t, &ids.bind(p), x[0], false, None)
    }));

    let mut s = ParamStore::new();
    let ids = BiGruIds::new(&mut s, &mut rng, "bigru", 3, 2);
    out.push(layer_check("bigru", s, &[&[4, 3]], move |t, p, x| {
        bigru(t, &ids.bind(p), x[0])
    }));

    let mut s = ParamStore::new();
    let ids = TrilinearIds::new(&mut s, &mut rng, "tri", 3);
    out.push(layer_check(
        "trilinear",
        s,
        &[&[4, 3], &[2, 3]],
        move |t, p, x| ids.bind(p).scores(t, x[0], x[1]),
    ));

    let mut s = ParamStore::new();
    let ids = BidafIds::new(&mut s, &mut rng, "bidaf", 3, 4);
    out.push(layer_check(
        "bidaf_attention",
        s,
        &[&[4, 3], &[3, 3]],
        move |t, p, x| Ok(bidaf_attention(t, &ids.bind(p), x[0], x[1])?.output),
    ));

    let mut s = ParamStore::new();
    let ids = SelfAttentionIds::new(&mut s, &mut rng, "self", 4, 2);
    out.push(layer_check(
        "self_attention",
        s,
        &[&[4, 4]],
        move |t, p, x| {
            Ok(self_attention_block(t, &ids.bind(p), x[0], &mut Dropout::eval())?.output)
        },
    ));

    let mut s = ParamStore::new();
    let ids = BoundaryIds::new(&mut s, &mut rng, 4, 2);
    out.push(layer_check("boundaries", s, &[&[4, 4]], move |t, p, x| {
        let b = predict_boundaries(t, &ids.bind(p), x[0], &mut Dropout::eval())?;
        t.concat(&[b.start, b.end], Axis::Cols)
    }));

    let mut s = ParamStore::new();
    let bids = BoundaryIds::new(&mut s, &mut rng, 4, 2);
    let nids = NoAnswerIds::new(&mut s, &mut rng, 4, 4, 3);
    out.push(layer_check(
        "no_answer_head",
        s,
        &[&[4, 4]],
        move |t, p, x| {
            let b = predict_boundaries(t, &bids.bind(p), x[0], &mut Dropout::eval())?;
            no_answer_score(t, &nids.bind(p), &b, x[0])
        },
    ));

    let config = ModelConfig::tiny();
    let words = tiny_words();
    let mut s = ParamStore::new();
    let ids = EmbedIds::new(&mut s, &mut rng, &config);
    let tokens = tiny_context();
    out.push(layer_check("embedding", s, &[], move |t, p, _| {
        embed(t, &ids.bind(p), &words, &tokens, &config)
    }));
    out
}

fn tiny_words() -> WordVectors<f64> {
    WordVectors::parse(
        "the 0.1 0.2 -0.3 0.4\ncat 1 0 0.5 -1\nsat 0.3 -0.7 0.2 0.1\nwho -0.5 0.5 0.5 0\n",
        "gradcheck",
        Some(4),
    )
    .expect("inline vectors")
}

fn tiny_context() -> Vec<String> {
    ["the", "cat", SEPARATOR, "sat", "Mat"]
        .map(String::from)
        .to_vec()
}

/// Runs `c` at `points` points. Layer checks jitter `base` instead of
/// drawing parameters from scratch, keeping them at a realistic scale.
fn run(
    c: &Check,
    base: Option<&[Tensor<f64>]>,
    points: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for k in 0..points {
        let pts: Vec<Tensor<f64>> = c
            .shapes
            .iter()
            .enumerate()
            .map(|(i, s)| match base.and_then(|b| b.get(i)) {
                Some(t) => jitter(t, rng, 0.3),
                None => uniform(rng, s, c.range.0, c.range.1),
            })
            .collect();
        let seed = 1000 + k as u64;
        let err = grad_check(
            |t, vars| {
                let y = (c.f)(t, vars)?;
                weighted_sum(t, y, seed)
            },
            &pts,
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

fn model_check(points: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let model = Model::new(ModelConfig::tiny(), Arc::new(tiny_words()), 9)?;
    let question: Vec<String> = ["who", "sat", "?"].map(String::from).to_vec();
    let context = tiny_context();
    let mut worst = 0.0f64;
    for k in 0..points {
        let pts: Vec<Tensor<f64>> = model
            .params
            .iter()
            .map(|p| jitter(&p.value, rng, 0.2))
            .collect();
        let seed = 5000 + k as u64;
        let err = grad_check(
            |t, vars| {
                let out = model.forward(t, vars, &question, &context, &mut Dropout::eval())?;
                let z = out.no_answer.expect("tiny config has the head");
                let bounds = t.concat(&[out.start, out.end], Axis::Cols)?;
                let s = weighted_sum(t, bounds, seed)?;
                t.add(s, z)
            },
            &pts,
            EPS,
        )?;
        worst = worst.max(err);
    }
    Ok(worst)
}

type Objective = fn(&[LabeledScores]) -> Result<(f64, Vec<LossGrad>)>;

fn single(
    f: fn(&LabeledScores) -> Result<LossGrad>,
) -> impl Fn(&[LabeledScores]) -> Result<(f64, Vec<LossGrad>)> {
    move |ls| {
        let g = f(&ls[0])?;
        Ok((g.loss, vec![g]))
    }
}

fn objective_check(
    members: usize,
    with_z: bool,
    points: usize,
    rng: &mut ChaCha8Rng,
    f: &dyn Fn(&[LabeledScores]) -> Result<(f64, Vec<LossGrad>)>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for _ in 0..points {
        let n = rng.gen_range(2..7);
        let mut start: Vec<Vec<f64>> = (0..members)
            .map(|_| (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect())
            .collect();
        let mut end = start.clone();
        for e in end.iter_mut() {
            for x in e.iter_mut() {
                *x = rng.gen_range(-3.0..3.0);
            }
        }
        let mut z: Vec<f64> = (0..members).map(|_| rng.gen_range(-2.0..2.0)).collect();
        // Member 0 always has an answer; others with probability one half.
        let spans: Vec<Vec<(usize, usize)>> = (0..members)
            .map(|m| {
                if m == 0 || rng.gen_bool(0.5) {
                    let a = rng.gen_range(0..n);
                    vec![(a, rng.gen_range(a..n))]
                } else {
                    Vec::new()
                }
            })
            .collect();
        let build = |start: &[Vec<f64>],
                     end: &[Vec<f64>],
                     z: &[f64]|
         -> Result<Vec<LabeledScores>> {
            (0..members)
                .map(|m| {
                    let s =
                        ScoreMatrix::new(start[m].clone(), end[m].clone(), with_z.then_some(z[m]))?;
                    LabeledScores::new(s, spans[m].clone())
                })
                .collect()
        };
        let (_, grads) = f(&build(&start, &end, &z)?)?;
        let mut compare = |analytic: f64, plus: f64, minus: f64| {
            let numeric = (plus - minus) / (2.0 * EPS);
            let err = (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs());
            worst = worst.max(err);
        };
        for m in 0..members {
            for i in 0..n {
                let orig = start[m][i];
                start[m][i] = orig + EPS;
                let plus = f(&build(&start, &end, &z)?)?.0;
                start[m][i] = orig - EPS;
                let minus = f(&build(&start, &end, &z)?)?.0;
                start[m][i] = orig;
                compare(grads[m].d_start[i], plus, minus);

                let orig = end[m][i];
                end[m][i] = orig + EPS;
                let plus = f(&build(&start, &end, &z)?)?.0;
                end[m][i] = orig - EPS;
                let minus = f(&build(&start, &end, &z)?)?.0;
                end[m][i] = orig;
                compare(grads[m].d_end[i], plus, minus);
            }
            if with_z {
                let orig = z[m];
                z[m] = orig + EPS;
                let plus = f(&build(&start, &end, &z)?)?.0;
                z[m] = orig - EPS;
                let minus = f(&build(&start, &end, &z)?)?.0;
                z[m] = orig;
                compare(grads[m].d_no_answer.unwrap_or(0.0), plus, minus);
            }
        }
    }
    Ok(worst)
}

/// Every check at `points` random points. Errors only on a failure to
/// evaluate, never on a large gradient error; see [`GradCheckRow::passed`].
pub fn gradcheck_suite(points: usize, seed: u64) -> Result<Vec<GradCheckRow>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    let mut push = |name: &str, group: &str, err: f64, tol: f64| {
        rows.push(GradCheckRow {
            name: name.to_string(),
            group: group.to_string(),
            points,
            max_rel_error: err,
            tolerance: tol,
        })
    };
    for c in primitive_checks() {
        let err = run(&c, None, points, &mut rng)?;
        push(c.name, "primitive", err, PRIMITIVE_TOLERANCE);
    }
    for (c, base) in layer_checks() {
        let err = run(&c, Some(&base), points, &mut rng)?;
        push(c.name, "layer", err, END_TO_END_TOLERANCE);
    }
    push(
        "model",
        "model",
        model_check(points, &mut rng)?,
        END_TO_END_TOLERANCE,
    );

    let shared: Objective = |ls| {
        shared_norm_loss(&SharedNormGroup {
            members: ls.to_vec(),
        })
    };
    let objectives: [(
        &str,
        usize,
        bool,
        Box<dyn Fn(&[LabeledScores]) -> Result<(f64, Vec<LossGrad>)>>,
    ); 5] = [
        (
            "independent_bounds_loss",
            1,
            false,
            Box::new(single(independent_bounds_loss)),
        ),
        (
            "summed_bounds_loss",
            1,
            false,
            Box::new(single(summed_bounds_loss)),
        ),
        ("no_answer_loss", 1, true, Box::new(single(no_answer_loss))),
        ("sigmoid_loss", 1, false, Box::new(single(sigmoid_loss))),
        ("shared_norm_loss", 3, false, Box::new(shared)),
    ];
    for (name, members, with_z, f) in &objectives {
        let err = objective_check(*members, *with_z, points, &mut rng, f.as_ref())?;
        push(name, "objective", err, PRIMITIVE_TOLERANCE);
    }
    Ok(rows)
}
