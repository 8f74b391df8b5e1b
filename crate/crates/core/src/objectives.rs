//! Training losses over boundary scores, with exact gradients.
//!
//! Every loss is evaluated in f64 with log-sum-exp. Start and end terms are
//! summed. The weight of a span `(i, j)` is `e^{s_i + g_j}`, so the sum over
//! all `n²` spans factors as `(Σ e^{s_i})(Σ e^{g_j})`.

use crate::error::{Error, Result};
use crate::layers::ScoreMatrix;

/// Scores for one paragraph with its labeled answer spans. `has_answer` (δ)
/// is true exactly when `spans` is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledScores {
    pub scores: ScoreMatrix,
    /// Inclusive `(start, end)` token spans, sorted and deduplicated.
    pub spans: Vec<(usize, usize)>,
}

impl LabeledScores {
    pub fn new(scores: ScoreMatrix, mut spans: Vec<(usize, usize)>) -> Result<Self> {
        scores.validate()?;
        let n = scores.len();
        if let Some(&(a, b)) = spans.iter().find(|&&(a, b)| a > b || b >= n) {
            return Err(Error::InvalidInput(format!(
                "span ({a}, {b}) invalid for {n} tokens"
            )));
        }
        spans.sort_unstable();
        spans.dedup();
        Ok(LabeledScores { scores, spans })
    }

    pub fn has_answer(&self) -> bool {
        !self.spans.is_empty()
    }

    /// Distinct labeled start tokens, ascending.
    pub fn start_labels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.spans.iter().map(|s| s.0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    pub fn end_labels(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.spans.iter().map(|s| s.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

/// Paragraphs from one context whose start and end softmaxes share a
/// normalizer.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedNormGroup {
    pub members: Vec<LabeledScores>,
}

/// Loss and its gradient with respect to each score.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub d_start: Vec<f64>,
    pub d_end: Vec<f64>,
    pub d_no_answer: Option<f64>,
}

impl LossGrad {
    fn zeros(n: usize) -> Self {
        LossGrad {
            loss: 0.0,
            d_start: vec![0.0; n],
            d_end: vec![0.0; n],
            d_no_answer: None,
        }
    }
}

/// `ln Σ e^{x_i}`; `-∞` for an empty input.
pub fn log_sum_exp(xs: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.into_iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn require_answer(ls: &LabeledScores, loss: &str) -> Result<()> {
    if ls.has_answer() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{loss} needs a paragraph with an answer"
        )))
    }
}

/// `−ln Σ_{k∈A} e^{x_k} + ln Σ_i e^{x_i}` over one or more paragraphs sharing
/// the normalizer. Adds the gradient into `grads[p]`.
fn marginal_nll(xs: &[&[f64]], labels: &[Vec<usize>], grads: &mut [&mut Vec<f64>]) -> f64 {
    let total = log_sum_exp(xs.iter().flat_map(|x| x.iter().copied()));
    let good = log_sum_exp(
        xs.iter()
            .zip(labels)
            .flat_map(|(x, l)| l.iter().map(move |&k| x[k])),
    );
    for (p, x) in xs.iter().enumerate() {
        for (i, &v) in x.iter().enumerate() {
            grads[p][i] += (v - total).exp();
        }
        for &k in &labels[p] {
            grads[p][k] -= (x[k] - good).exp();
        }
    }
    total - good
}

/// Cross-entropy on the first labeled start and end under per-paragraph
/// softmaxes.
pub fn independent_bounds_loss(ls: &LabeledScores) -> Result<LossGrad> {
    require_answer(ls, "independent_bounds_loss")?;
    let (a, b) = ls.spans[0];
    let mut out = LossGrad::zeros(ls.scores.len());
    out.loss = marginal_nll(&[&ls.scores.start], &[vec![a]], &mut [&mut out.d_start])
        + marginal_nll(&[&ls.scores.end], &[vec![b]], &mut [&mut out.d_end]);
    Ok(out)
}

/// Negative log of the total probability of all labeled starts, plus the
/// same for ends.
pub fn summed_bounds_loss(ls: &LabeledScores) -> Result<LossGrad> {
    require_answer(ls, "summed_bounds_loss")?;
    let mut out = LossGrad::zeros(ls.scores.len());
    out.loss = marginal_nll(
        &[&ls.scores.start],
        &[ls.start_labels()],
        &mut [&mut out.d_start],
    ) + marginal_nll(&[&ls.scores.end], &[ls.end_labels()], &mut [&mut out.d_end]);
    Ok(out)
}

/// Summed-bounds loss whose softmax denominators run over every token of
/// every member. Members without an answer only enlarge the denominators.
/// Returns the loss and one gradient per member.
pub fn shared_norm_loss(group: &SharedNormGroup) -> Result<(f64, Vec<LossGrad>)> {
    if group.members.is_empty() {
        return Err(Error::InvalidInput("empty shared-norm group".into()));
    }
    if !group.members.iter().any(LabeledScores::has_answer) {
        return Err(Error::InvalidInput(
            "shared-norm group has no answer paragraph".into(),
        ));
    }
    let mut grads: Vec<LossGrad> = group
        .members
        .iter()
        .map(|m| LossGrad::zeros(m.scores.len()))
        .collect();
    let starts: Vec<&[f64]> = group
        .members
        .iter()
        .map(|m| m.scores.start.as_slice())
        .collect();
    let ends: Vec<&[f64]> = group
        .members
        .iter()
        .map(|m| m.scores.end.as_slice())
        .collect();
    let start_labels: Vec<Vec<usize>> = group
        .members
        .iter()
        .map(LabeledScores::start_labels)
        .collect();
    let end_labels: Vec<Vec<usize>> = group
        .members
        .iter()
        .map(LabeledScores::end_labels)
        .collect();
    let mut ds: Vec<&mut Vec<f64>> = Vec::with_capacity(grads.len());
    let mut de: Vec<&mut Vec<f64>> = Vec::with_capacity(grads.len());
    for g in grads.iter_mut() {
        ds.push(&mut g.d_start);
        de.push(&mut g.d_end);
    }
    let loss =
        marginal_nll(&starts, &start_labels, &mut ds) + marginal_nll(&ends, &end_labels, &mut de);
    Ok((loss, grads))
}

/// Softmax over every span `(i, j)` plus a no-answer option of weight `e^z`.
/// The target is the labeled spans when δ = 1 and the no-answer option when
/// δ = 0.
pub fn no_answer_loss(ls: &LabeledScores) -> Result<LossGrad> {
    let z = ls
        .scores
        .no_answer
        .ok_or_else(|| Error::InvalidInput("no_answer_loss needs a no-answer score".into()))?;
    let s = &ls.scores.start;
    let g = &ls.scores.end;
    let lse_s = log_sum_exp(s.iter().copied());
    let lse_g = log_sum_exp(g.iter().copied());
    let spans = lse_s + lse_g;
    let denom = log_sum_exp([spans, z]);
    let span_mass = (spans - denom).exp();

    let mut out = LossGrad::zeros(s.len());
    for (d, &x) in out.d_start.iter_mut().zip(s) {
        *d = (x - lse_s).exp() * span_mass;
    }
    for (d, &x) in out.d_end.iter_mut().zip(g) {
        *d = (x - lse_g).exp() * span_mass;
    }
    let mut dz = (z - denom).exp();
    if ls.has_answer() {
        let numer = log_sum_exp(ls.spans.iter().map(|&(a, b)| s[a] + g[b]));
        for &(a, b) in &ls.spans {
            let w = (s[a] + g[b] - numer).exp();
            out.d_start[a] -= w;
            out.d_end[b] -= w;
        }
        out.loss = denom - numer;
    } else {
        dz -= 1.0;
        out.loss = softplus(spans - z);
    }
    out.d_no_answer = Some(dz);
    Ok(out)
}

/// Independent binary cross-entropy on `σ(s_i)` for "token i starts an
/// answer", plus the same for ends. Paragraphs without answers have every
/// token as a negative.
pub fn sigmoid_loss(ls: &LabeledScores) -> Result<LossGrad> {
    let n = ls.scores.len();
    let mut out = LossGrad::zeros(n);
    let mut is_start = vec![0.0; n];
    let mut is_end = vec![0.0; n];
    for &(a, b) in &ls.spans {
        is_start[a] = 1.0;
        is_end[b] = 1.0;
    }
    for (x, y, d) in [
        (&ls.scores.start, &is_start, &mut out.d_start),
        (&ls.scores.end, &is_end, &mut out.d_end),
    ] {
        for i in 0..n {
            out.loss += softplus(x[i]) - y[i] * x[i];
            d[i] = sigmoid(x[i]) - y[i];
        }
    }
    Ok(out)
}

/// Unnormalized span score `s_i + g_j`.
pub fn span_confidence(scores: &ScoreMatrix, span: (usize, usize)) -> Result<f64> {
    let (i, j) = span;
    if i > j || j >= scores.len() {
        return Err(Error::InvalidInput(format!(
            "span ({i}, {j}) invalid for {} tokens",
            scores.len()
        )));
    }
    Ok(scores.start[i] + scores.end[j])
}
