use std::sync::Arc;

use docqa::corpus::{DocumentRecord, QuestionRecord, SEPARATOR};
use docqa::harness::{
    continue_training, generate_corpus, new_trainer, prepare_records, RunConfig, SyntheticSpec,
};
use docqa::layers::Model;
use docqa::objectives::{summed_bounds_loss, LabeledScores};
use docqa::sampling::{build_pool, PoolRanker};
use docqa::training::{merge_sampled, question_gradients, question_rng, TrainingMode};

fn small_run() -> (
    RunConfig,
    Vec<docqa::corpus::PreparedQuestion>,
    Arc<docqa::layers::WordVectors<f32>>,
) {
    let spec = SyntheticSpec {
        train_questions: 20,
        test_questions: 4,
        ..SyntheticSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let mut cfg = RunConfig::desk_synthetic();
    cfg.epochs = 3;
    let cfg = cfg.finalize().unwrap();
    let train = prepare_records(
        &corpus.documents,
        &corpus.train,
        cfg.merge_target,
        cfg.match_cap,
    )
    .unwrap();
    (cfg, train, Arc::new(corpus.vectors.cast()))
}

#[test]
fn same_seed_same_loss_curve() {
    let (cfg, train, words) = small_run();
    let run = || {
        let mut t = new_trainer(&cfg, words.clone()).unwrap();
        continue_training(&mut t, cfg.epochs, &train).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert!((x.mean_loss - y.mean_loss).abs() <= 1e-6);
    }
}

#[test]
fn word_vectors_stay_fixed_and_averaging_leaves_live_weights_alone() {
    let (cfg, train, words) = small_run();
    let before = words.checksum();
    let mut t = new_trainer(&cfg, words.clone()).unwrap();
    continue_training(&mut t, 2, &train).unwrap();
    assert_eq!(t.model.words.checksum(), before);

    let live = t.model.params.checksum();
    let averaged = t.averaged_model();
    let q = &train[0];
    averaged
        .scores(&q.question.tokens, q.groups[0].tokens())
        .unwrap();
    assert_eq!(t.model.params.checksum(), live);
    assert_ne!(averaged.params.checksum(), live);
}

#[test]
fn merged_length_counts_one_separator_per_join() {
    let docs = vec![DocumentRecord {
        doc_id: "d".into(),
        paragraphs: vec!["alpha beta gamma .".into(), "delta epsilon .".into()],
    }];
    let q = QuestionRecord {
        q_id: "q".into(),
        question: "what is epsilon ?".into(),
        doc_ids: vec!["d".into()],
        answers: vec!["epsilon".into()],
    };
    let prepared = prepare_records(&docs, &[q], 5, 8).unwrap();
    let groups = &prepared[0].groups;
    assert_eq!(groups.len(), 2);
    let refs: Vec<_> = groups.iter().collect();
    let (tokens, spans) = merge_sampled(&refs);
    // Groups arrive in rank order; merging restores document order.
    let mut ordered = refs.clone();
    ordered.sort_by_key(|g| g.position);
    let (l1, l2) = (ordered[0].tokens().len(), ordered[1].tokens().len());
    assert_eq!(tokens.len(), l1 + 1 + l2);
    assert_eq!(tokens[l1], SEPARATOR);
    // Spans land on the same word after shifting.
    let later = groups.iter().find(|g| g.has_answer).unwrap();
    let shift = if later.position == 0 { 0 } else { l1 + 1 };
    let expected: Vec<_> = later
        .answer_spans
        .spans
        .iter()
        .map(|&(a, b)| (a + shift, b + shift))
        .collect();
    assert_eq!(spans, expected);
    assert_eq!(tokens[spans[0].0], "epsilon");
}

#[test]
fn single_paragraph_none_mode_is_summed_bounds_loss() {
    let docs = vec![DocumentRecord {
        doc_id: "d".into(),
        paragraphs: vec!["the river ava flows past ironton and the river ava is wide .".into()],
    }];
    let q = QuestionRecord {
        q_id: "q".into(),
        question: "what river flows past ironton ?".into(),
        doc_ids: vec!["d".into()],
        answers: vec!["ava".into()],
    };
    let prepared = prepare_records(&docs, &[q], 400, 8).unwrap();
    let mut cfg = RunConfig::desk_synthetic();
    cfg.train.mode = TrainingMode::None;
    cfg.model.dropout_rate = 0.0;
    let cfg = cfg.finalize().unwrap();
    let corpus = generate_corpus(&SyntheticSpec::default()).unwrap();
    let model = Model::<f64>::new(cfg.model.clone(), Arc::new(corpus.vectors), 3).unwrap();

    let plan = cfg.train.effective_plan();
    let pool = build_pool(&prepared[0], &plan, PoolRanker::Tfidf).unwrap();
    let (loss, _) = question_gradients(
        &model,
        &pool,
        TrainingMode::None,
        &plan,
        &mut question_rng(1, 0, 0),
    )
    .unwrap()
    .unwrap();

    let g = &pool.question.groups[0];
    assert_eq!(g.answer_spans.spans.len(), 2);
    let scores = model
        .scores(&pool.question.question.tokens, g.tokens())
        .unwrap();
    let expected =
        summed_bounds_loss(&LabeledScores::new(scores, g.answer_spans.spans.clone()).unwrap())
            .unwrap()
            .loss;
    assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
}
