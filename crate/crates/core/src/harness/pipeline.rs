//! The steps behind each CLI command. Pure functions take and return values;
//! the `run_*` wrappers read inputs named by a [`RunConfig`] and write
//! artifacts to its output directory.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::config::{Precision, RunConfig};
use super::synthetic::generate_corpus;
use crate::autodiff::Real;
use crate::corpus::{
    featurize, prepare_question, rank_linear, read_documents, read_prepared, read_questions,
    train_linear_ranker, write_jsonl, Document, DocumentRecord, LinearRanker, PreparedQuestion,
    QuestionRecord,
};
use crate::error::{Error, Result};
use crate::inference::{
    confidence_curve, curve_to_csv, evaluate_dataset, gold_answers, predict_dataset, CurveRow,
    DecodeOptions, EvalReport, PredictionRecord,
};
use crate::layers::{Model, WordVectors};
use crate::sampling::{build_pools, PoolRanker};
use crate::training::{Checkpoint, EpochMetrics, Trainer};

pub const PREPARED_TRAIN: &str = "prepared_train.jsonl";
pub const PREPARED_TEST: &str = "prepared_test.jsonl";
pub const CHECKPOINT: &str = "checkpoint.json";
pub const METRICS: &str = "metrics.jsonl";
pub const PREDICTIONS: &str = "predictions.jsonl";
pub const EVAL_REPORT: &str = "eval.json";
pub const CURVE: &str = "curve.csv";
pub const RANKER: &str = "ranker.json";
pub const RANK_REPORT: &str = "rank_report.json";

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Vec<PreparedQuestion>,
    pub test: Vec<PreparedQuestion>,
}

/// Tokenizes, merges, labels and ranks every question's paragraphs.
pub fn prepare_records(
    documents: &[DocumentRecord],
    questions: &[QuestionRecord],
    merge_target: usize,
    match_cap: usize,
) -> Result<Vec<PreparedQuestion>> {
    let docs: HashMap<String, Document> = documents
        .iter()
        .map(|d| (d.doc_id.clone(), Document::from_record(d)))
        .collect();
    questions
        .iter()
        .map(|q| prepare_question(q, &docs, merge_target, match_cap))
        .collect()
}

/// Rank-0 selection rates of TF-IDF, the first paragraph, and optionally a
/// trained linear ranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub questions: usize,
    pub tfidf_top1: f64,
    pub tfidf_top4: f64,
    pub first_paragraph: f64,
    pub linear_top1: Option<f64>,
}

pub fn selection_report(
    questions: &[PreparedQuestion],
    linear: Option<&LinearRanker>,
) -> SelectionReport {
    let n = questions.len().max(1) as f64;
    let rate = |f: &dyn Fn(&PreparedQuestion) -> bool| {
        questions.iter().filter(|q| f(q)).count() as f64 / n
    };
    SelectionReport {
        questions: questions.len(),
        tfidf_top1: rate(&|q| q.answer_in_top(1)),
        tfidf_top4: rate(&|q| q.answer_in_top(4)),
        first_paragraph: rate(&|q| q.groups.iter().any(|g| g.is_first() && g.has_answer)),
        linear_top1: linear.map(|r| {
            rate(&|q| {
                rank_linear(r, &q.question, q.groups.clone(), 1)
                    .first()
                    .is_some_and(|g| g.has_answer)
            })
        }),
    }
}

/// Fits the linear paragraph ranker on every group of the training questions.
pub fn fit_ranker(train: &[PreparedQuestion]) -> Result<LinearRanker> {
    let examples: Vec<_> = train
        .iter()
        .flat_map(|q| {
            q.groups
                .iter()
                .map(|g| (featurize(&q.question, g), g.has_answer))
        })
        .collect();
    train_linear_ranker(&examples)
}

pub fn new_trainer<T: Real>(cfg: &RunConfig, words: Arc<WordVectors<T>>) -> Result<Trainer<T>> {
    let model = Model::new(cfg.model.clone(), words, cfg.train.seed)?;
    Trainer::new(model, cfg.train.clone())
}

/// Trains for `cfg.epochs` epochs on TF-IDF pools of `train`.
pub fn train_model<T: Real>(
    cfg: &RunConfig,
    train: &[PreparedQuestion],
    words: Arc<WordVectors<T>>,
) -> Result<(Trainer<T>, Vec<EpochMetrics>)> {
    let mut trainer = new_trainer(cfg, words)?;
    let metrics = continue_training(&mut trainer, cfg.epochs, train)?;
    Ok((trainer, metrics))
}

/// Runs epochs until `trainer.epoch` reaches `epochs`.
pub fn continue_training<T: Real>(
    trainer: &mut Trainer<T>,
    epochs: usize,
    train: &[PreparedQuestion],
) -> Result<Vec<EpochMetrics>> {
    let (pools, dropped) = build_pools(train, &trainer.config.effective_plan(), PoolRanker::Tfidf);
    if pools.is_empty() {
        return Err(Error::Degenerate(format!(
            "no trainable questions ({dropped} dropped for lacking an answer paragraph)"
        )));
    }
    if dropped > 0 {
        log::warn!("{dropped} questions dropped: no answer paragraph");
    }
    let mut metrics = Vec::new();
    while trainer.epoch < epochs {
        metrics.push(trainer.train_epoch(&pools)?);
    }
    Ok(metrics)
}

/// Predictions of the weight-averaged model from the top `k` paragraphs.
pub fn evaluate_model<T: Real>(
    model: &Model<T>,
    questions: &[PreparedQuestion],
    k: usize,
) -> Result<(Vec<PredictionRecord>, EvalReport)> {
    let preds: Vec<PredictionRecord> =
        predict_dataset(model, questions, k, DecodeOptions::for_model(model))?
            .iter()
            .map(|p| p.to_record())
            .collect();
    let report = evaluate_dataset(&preds, &gold_answers(questions));
    Ok((preds, report))
}

/// Runs `f` on a thread pool capped at `cfg.workers`.
pub fn with_workers<R: Send>(cfg: &RunConfig, f: impl FnOnce() -> R + Send) -> Result<R> {
    match cfg.workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn create_out_dir(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))
}

fn write_json<S: Serialize>(path: PathBuf, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))
}

/// Writes the synthetic corpus into `cfg.data_dir`.
pub fn run_synth(cfg: &RunConfig) -> Result<()> {
    generate_corpus(&cfg.synthetic)?.write_to(&cfg.data_dir)
}

/// Reads raw documents and questions, writes prepared JSONL.
pub fn run_preprocess(cfg: &RunConfig) -> Result<Dataset> {
    let documents = read_documents(&cfg.resolve(&cfg.documents))?;
    let train = read_questions(&cfg.resolve(&cfg.train_questions))?;
    let test = read_questions(&cfg.resolve(&cfg.test_questions))?;
    let dataset = Dataset {
        train: prepare_records(&documents, &train, cfg.merge_target, cfg.match_cap)?,
        test: prepare_records(&documents, &test, cfg.merge_target, cfg.match_cap)?,
    };
    create_out_dir(cfg)?;
    write_jsonl(&cfg.out_path(PREPARED_TRAIN), &dataset.train)?;
    write_jsonl(&cfg.out_path(PREPARED_TEST), &dataset.test)?;
    Ok(dataset)
}

/// Prepared data from the output directory, preprocessing first if absent.
pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (train, test) = (cfg.out_path(PREPARED_TRAIN), cfg.out_path(PREPARED_TEST));
    if train.exists() && test.exists() {
        Ok(Dataset {
            train: read_prepared(&train)?,
            test: read_prepared(&test)?,
        })
    } else {
        run_preprocess(cfg)
    }
}

pub fn load_vectors<T: Real>(cfg: &RunConfig) -> Result<Arc<WordVectors<T>>> {
    Ok(Arc::new(WordVectors::read(
        &cfg.resolve(&cfg.word_vectors),
        Some(cfg.model.word_dim),
    )?))
}

/// Fits the linear ranker and reports selection rates on the test split.
pub fn run_rank(cfg: &RunConfig) -> Result<SelectionReport> {
    let data = load_dataset(cfg)?;
    let ranker = fit_ranker(&data.train)?;
    let report = selection_report(&data.test, Some(&ranker));
    write_json(cfg.out_path(RANKER), &ranker)?;
    write_json(cfg.out_path(RANK_REPORT), &report)?;
    Ok(report)
}

/// Trains from scratch, or resumes an existing checkpoint in the output
/// directory, and writes the checkpoint and per-epoch metrics.
pub fn run_train(cfg: &RunConfig) -> Result<Vec<EpochMetrics>> {
    match cfg.precision {
        Precision::F32 => train_and_save::<f32>(cfg),
        Precision::F64 => train_and_save::<f64>(cfg),
    }
}

fn train_and_save<T: Real>(cfg: &RunConfig) -> Result<Vec<EpochMetrics>> {
    let data = load_dataset(cfg)?;
    let words = load_vectors::<T>(cfg)?;
    let path = cfg.out_path(CHECKPOINT);
    let mut trainer = if path.exists() {
        let ck = Checkpoint::<T>::load(&path)?;
        ck.expect_config(&cfg.model)?;
        if ck.train_config != cfg.train {
            return Err(Error::CheckpointMismatch(
                "existing checkpoint was trained with a different training config".into(),
            ));
        }
        ck.into_trainer(words)?
    } else {
        new_trainer(cfg, words)?
    };
    let metrics = with_workers(cfg, || {
        continue_training(&mut trainer, cfg.epochs, &data.train)
    })??;
    Checkpoint::from_trainer(&trainer).save(&path)?;
    let mut log = Vec::new();
    if let Ok(existing) = std::fs::read_to_string(cfg.out_path(METRICS)) {
        log.extend(existing.lines().map(String::from));
    }
    for m in &metrics {
        log.push(serde_json::to_string(m)?);
    }
    let metrics_path = cfg.out_path(METRICS);
    let body: String = log.iter().map(|l| format!("{l}\n")).collect();
    std::fs::write(&metrics_path, body).map_err(|e| Error::io(&metrics_path, e))?;
    Ok(metrics)
}

fn load_model<T: Real>(cfg: &RunConfig) -> Result<Model<T>> {
    let ck = Checkpoint::<T>::load(&cfg.out_path(CHECKPOINT))?;
    ck.expect_config(&cfg.model)?;
    Ok(ck.into_trainer(load_vectors(cfg)?)?.averaged_model())
}

/// Predicts the test split from `k_max` paragraphs and scores it.
pub fn run_eval(cfg: &RunConfig) -> Result<EvalReport> {
    match cfg.precision {
        Precision::F32 => eval_and_save::<f32>(cfg),
        Precision::F64 => eval_and_save::<f64>(cfg),
    }
}

fn eval_and_save<T: Real>(cfg: &RunConfig) -> Result<EvalReport> {
    let data = load_dataset(cfg)?;
    let model = load_model::<T>(cfg)?;
    let (preds, report) = with_workers(cfg, || evaluate_model(&model, &data.test, cfg.k_max))??;
    write_jsonl(&cfg.out_path(PREDICTIONS), &preds)?;
    write_json(cfg.out_path(EVAL_REPORT), &report)?;
    Ok(report)
}

/// EM and F1 for every paragraph budget up to `k_max`, written as CSV.
pub fn run_curve(cfg: &RunConfig) -> Result<Vec<CurveRow>> {
    match cfg.precision {
        Precision::F32 => curve_and_save::<f32>(cfg),
        Precision::F64 => curve_and_save::<f64>(cfg),
    }
}

fn curve_and_save<T: Real>(cfg: &RunConfig) -> Result<Vec<CurveRow>> {
    let data = load_dataset(cfg)?;
    let model = load_model::<T>(cfg)?;
    let opts = DecodeOptions::for_model(&model);
    let rows = with_workers(cfg, || {
        confidence_curve(&model, &data.test, cfg.k_max, opts)
    })??;
    let path = cfg.out_path(CURVE);
    std::fs::write(&path, curve_to_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    Ok(rows)
}
