//! Span decoding, answer selection across paragraphs, and evaluation.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Real;
use crate::corpus::{parse_lines, PreparedQuestion};
use crate::error::{Error, Result};
use crate::layers::{Model, ScoreMatrix};
use crate::text::{em_score, f1_score};

/// Best span `(i, j)` with `i ≤ j < i + max_len` by `s_i + g_j`, and its
/// score. Ties go to the smallest start, then the smallest end.
pub fn decode_span(scores: &ScoreMatrix, max_len: usize) -> Result<((usize, usize), f64)> {
    scores.validate()?;
    if max_len == 0 {
        return Err(Error::InvalidInput("max_len must be positive".into()));
    }
    let n = scores.len();
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for i in 0..n {
        let si = scores.start[i];
        for j in i..n.min(i + max_len) {
            let v = si + scores.end[j];
            if v > best.1 {
                best = ((i, j), v);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::NonFinite("span scores".into()));
    }
    Ok(best)
}

/// Decoding settings shared by every paragraph of a question.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeOptions {
    pub max_span_len: usize,
    /// Confidence is the span score minus `z` when the model emits one.
    pub subtract_no_answer: bool,
}

impl DecodeOptions {
    pub fn for_model<T: Real>(model: &Model<T>) -> Self {
        DecodeOptions {
            max_span_len: model.config.max_span_len,
            subtract_no_answer: model.config.no_answer_head,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub q_id: String,
    pub span: (usize, usize),
    pub paragraph_id: String,
    pub paragraph_rank: usize,
    pub confidence: f64,
    pub answer_text: String,
}

impl Prediction {
    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            q_id: self.q_id.clone(),
            answer: self.answer_text.clone(),
            confidence: self.confidence,
            paragraph_id: self.paragraph_id.clone(),
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub q_id: String,
    pub answer: String,
    pub confidence: f64,
    pub paragraph_id: String,
}

pub fn parse_predictions_jsonl(text: &str, source: &str) -> Result<Vec<PredictionRecord>> {
    let records: Vec<PredictionRecord> = parse_lines(text, source)?
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    if let Some(r) = records.iter().find(|r| !r.confidence.is_finite()) {
        return Err(Error::NonFinite(format!("confidence for {}", r.q_id)));
    }
    Ok(records)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_predictions_jsonl(&text, &path.display().to_string())
}

/// Model scores for the top `k` paragraphs of `question`, in rank order.
pub fn score_paragraphs<T: Real>(
    model: &Model<T>,
    question: &PreparedQuestion,
    k: usize,
) -> Result<Vec<ScoreMatrix>> {
    question
        .groups
        .iter()
        .take(k)
        .map(|g| model.scores(&question.question.tokens, g.tokens()))
        .collect()
}

/// Best answer among the first `k` paragraphs given their scores. Ties go
/// to the earliest span, then the lowest paragraph rank.
pub fn select_answer(
    question: &PreparedQuestion,
    scores: &[ScoreMatrix],
    k: usize,
    opts: DecodeOptions,
) -> Result<Option<Prediction>> {
    let mut best: Option<(f64, usize, (usize, usize), usize)> = None;
    for (idx, (g, s)) in question.groups.iter().zip(scores).take(k).enumerate() {
        let (span, score) = decode_span(s, opts.max_span_len)?;
        let confidence = match (opts.subtract_no_answer, s.no_answer) {
            (true, Some(z)) => score - z,
            _ => score,
        };
        let better = match best {
            None => true,
            Some((c, rank, _, _)) => confidence > c || (confidence == c && g.rank < rank),
        };
        if better {
            best = Some((confidence, g.rank, span, idx));
        }
    }
    Ok(best.map(|(confidence, rank, span, idx)| {
        let g = &question.groups[idx];
        Prediction {
            q_id: question.q_id.clone(),
            span,
            paragraph_id: g.id(),
            paragraph_rank: rank,
            confidence,
            answer_text: g.text.span_text(span.0, span.1).to_string(),
        }
    }))
}

/// Runs the model on each of the top `k` paragraphs independently and keeps
/// the most confident span.
pub fn multi_paragraph_answer<T: Real>(
    model: &Model<T>,
    question: &PreparedQuestion,
    k: usize,
    opts: DecodeOptions,
) -> Result<Option<Prediction>> {
    if k == 0 {
        return Err(Error::InvalidInput("k must be at least 1".into()));
    }
    let scores = score_paragraphs(model, question, k)?;
    select_answer(question, &scores, k, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub q_id: String,
    pub prediction: Option<String>,
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub em: f64,
    pub f1: f64,
    pub missing: usize,
    pub per_question: Vec<QuestionResult>,
}

/// Mean EM and F1 over `gold` (`(q_id, answers)` pairs). A question without
/// a prediction scores 0 on both.
pub fn evaluate_dataset(
    predictions: &[PredictionRecord],
    gold: &[(String, Vec<String>)],
) -> EvalReport {
    let by_id: HashMap<&str, &PredictionRecord> =
        predictions.iter().map(|p| (p.q_id.as_str(), p)).collect();
    let mut per_question = Vec::with_capacity(gold.len());
    let mut missing = 0;
    for (q_id, answers) in gold {
        let result = match by_id.get(q_id.as_str()) {
            Some(p) => QuestionResult {
                q_id: q_id.clone(),
                prediction: Some(p.answer.clone()),
                em: em_score(&p.answer, answers),
                f1: f1_score(&p.answer, answers),
            },
            None => {
                missing += 1;
                QuestionResult {
                    q_id: q_id.clone(),
                    prediction: None,
                    em: 0.0,
                    f1: 0.0,
                }
            }
        };
        per_question.push(result);
    }
    if missing > 0 {
        log::warn!("{missing} questions have no prediction");
    }
    let n = per_question.len().max(1) as f64;
    EvalReport {
        em: per_question.iter().map(|r| r.em).sum::<f64>() / n,
        f1: per_question.iter().map(|r| r.f1).sum::<f64>() / n,
        missing,
        per_question,
    }
}

pub fn gold_answers(questions: &[PreparedQuestion]) -> Vec<(String, Vec<String>)> {
    questions
        .iter()
        .map(|q| (q.q_id.clone(), q.answers.clone()))
        .collect()
}

/// Predictions for every question with at least one paragraph.
pub fn predict_dataset<T: Real>(
    model: &Model<T>,
    questions: &[PreparedQuestion],
    k: usize,
    opts: DecodeOptions,
) -> Result<Vec<Prediction>> {
    let preds: Vec<Option<Prediction>> = questions
        .par_iter()
        .map(|q| multi_paragraph_answer(model, q, k, opts))
        .collect::<Result<_>>()?;
    Ok(preds.into_iter().flatten().collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub k: usize,
    pub em: f64,
    pub f1: f64,
}

/// EM and F1 when answering from the top `k` paragraphs, for every `k` in
/// `1..=k_max`. Each paragraph is scored once.
pub fn confidence_curve<T: Real>(
    model: &Model<T>,
    questions: &[PreparedQuestion],
    k_max: usize,
    opts: DecodeOptions,
) -> Result<Vec<CurveRow>> {
    let scored: Vec<Vec<ScoreMatrix>> = questions
        .par_iter()
        .map(|q| score_paragraphs(model, q, k_max))
        .collect::<Result<_>>()?;
    curve_from_scores(questions, &scored, k_max, opts)
}

/// The curve from precomputed per-paragraph scores.
pub fn curve_from_scores(
    questions: &[PreparedQuestion],
    scored: &[Vec<ScoreMatrix>],
    k_max: usize,
    opts: DecodeOptions,
) -> Result<Vec<CurveRow>> {
    let gold = gold_answers(questions);
    (1..=k_max)
        .map(|k| {
            let mut preds = Vec::with_capacity(questions.len());
            for (q, s) in questions.iter().zip(scored) {
                if let Some(p) = select_answer(q, s, k, opts)? {
                    preds.push(p.to_record());
                }
            }
            let report = evaluate_dataset(&preds, &gold);
            Ok(CurveRow {
                k,
                em: report.em,
                f1: report.f1,
            })
        })
        .collect()
}

pub fn curve_to_csv(rows: &[CurveRow]) -> String {
    let mut out = String::from("k,em,f1\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.k, r.em, r.f1);
    }
    out
}
