//! The nine acceptance criteria. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stdout (bypassing libtest capture) before asserting.
//! Tests hold a shared lock so runtimes are measured without contention.

use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use docqa::harness::{
    continue_training, generate_corpus, gradcheck_suite, new_trainer, prepare_records,
    selection_report, RunConfig, SyntheticSpec,
};
use docqa::inference::{confidence_curve, decode_span, CurveRow, DecodeOptions};
use docqa::layers::ScoreMatrix;
use docqa::objectives::{
    independent_bounds_loss, no_answer_loss, shared_norm_loss, sigmoid_loss, summed_bounds_loss,
    LabeledScores, SharedNormGroup,
};
use docqa::sampling::{build_pool, epoch_sample, PoolRanker, SamplingPlan};
use docqa::text::{em_score, f1_score};
use docqa::training::{ema_swap, Checkpoint, TrainingMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: usize, passed: bool, details: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {n}: {verdict} {details}");
}

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_1_gradient_checks() {
    let _g = serial();
    let t = Instant::now();
    let rows = gradcheck_suite(50, 2024).unwrap();
    let elapsed = t.elapsed();
    let worst_primitive = rows
        .iter()
        .filter(|r| r.group == "primitive" || r.group == "objective")
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let worst_composite = rows
        .iter()
        .filter(|r| r.group == "layer" || r.group == "model")
        .map(|r| r.max_rel_error)
        .fold(0.0, f64::max);
    let failed: Vec<&str> = rows
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name.as_str())
        .collect();
    let passed = failed.is_empty() && elapsed < Duration::from_secs(120);
    report(
        1,
        passed,
        &format!(
            "{} checks x 50 points, worst primitive/objective {worst_primitive:.2e} (< 1e-5), worst layer/model {worst_composite:.2e} (< 1e-4), {:.1}s, failed {failed:?}",
            rows.len(),
            elapsed.as_secs_f64()
        ),
    );
    assert!(passed);
}

fn ls(start: &[f64], end: &[f64], z: Option<f64>, spans: &[(usize, usize)]) -> LabeledScores {
    LabeledScores::new(
        ScoreMatrix::new(start.to_vec(), end.to_vec(), z).unwrap(),
        spans.to_vec(),
    )
    .unwrap()
}

#[test]
fn criterion_2_loss_oracles() {
    let _g = serial();
    let ln2 = std::f64::consts::LN_2;
    // End scores put all end mass on the labeled end, isolating the start term.
    let summed = summed_bounds_loss(&ls(
        &[0.0; 4],
        &[-60.0, 0.0, 0.0, -60.0],
        None,
        &[(1, 1), (2, 2)],
    ))
    .unwrap()
    .loss;
    let two = shared_norm_loss(&SharedNormGroup {
        members: vec![
            ls(&[0.0, 0.0], &[0.0, -80.0], None, &[(0, 0)]),
            ls(&[0.0, 0.0], &[-80.0, -80.0], None, &[]),
        ],
    })
    .unwrap()
    .0;
    let distractor = shared_norm_loss(&SharedNormGroup {
        members: vec![
            ls(&[0.0, 0.0], &[0.0, -80.0], None, &[(0, 0)]),
            ls(&[10.0, 10.0], &[-80.0, -80.0], None, &[]),
        ],
    })
    .unwrap()
    .0;
    let na_pos = no_answer_loss(&ls(&[0.0], &[0.0], Some(0.0), &[(0, 0)]))
        .unwrap()
        .loss;
    let na_neg = no_answer_loss(&ls(&[0.0], &[0.0], Some(0.0), &[]))
        .unwrap()
        .loss;
    // End scores saturate so only the start term remains.
    let sig = sigmoid_loss(&ls(&[0.0, 0.0], &[40.0, -40.0], None, &[(0, 0)]))
        .unwrap()
        .loss;
    let indep = independent_bounds_loss(&ls(&[1.0, 0.0], &[0.0, -80.0], None, &[(0, 0)]))
        .unwrap()
        .loss;

    let checks = [
        ("summed ln 2", summed, ln2),
        ("shared-norm ln 4", two, 4f64.ln()),
        (
            "shared-norm distractor ln(2+2e^10)",
            distractor,
            (2.0 + 2.0 * 10f64.exp()).ln(),
        ),
        ("no-answer delta=1 ln 2", na_pos, ln2),
        ("no-answer delta=0 ln 2", na_neg, ln2),
        ("sigmoid 2 ln 2", sig, 2.0 * ln2),
        ("independent ln(1+e^-1)", indep, (1.0 + (-1f64).exp()).ln()),
    ];
    let worst = checks
        .iter()
        .map(|(_, got, want)| (got - want).abs())
        .fold(0.0, f64::max);
    let passed = worst < 1e-6;
    let values: Vec<String> = checks
        .iter()
        .map(|(n, got, _)| format!("{n}={got:.6}"))
        .collect();
    report(
        2,
        passed,
        &format!("max deviation {worst:.1e} (< 1e-6): {}", values.join(", ")),
    );
    assert!(passed);
}

fn shifted(l: &LabeledScores, c: f64) -> LabeledScores {
    let start: Vec<f64> = l.scores.start.iter().map(|x| x + c).collect();
    let end: Vec<f64> = l.scores.end.iter().map(|x| x + c).collect();
    ls(&start, &end, None, &l.spans)
}

#[test]
fn criterion_3_shift_property() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let constants = [0.1, -0.1, 1.0, -1.0, 10.0, -10.0];
    let (mut worst_invariant, mut smallest_change) = (0.0f64, f64::INFINITY);
    for _ in 0..200 {
        let members: Vec<LabeledScores> = (0..rng.gen_range(2..4))
            .map(|m| {
                let n = rng.gen_range(3..9);
                let s: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let e: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
                let a = rng.gen_range(0..n);
                let spans = if m == 0 || rng.gen_bool(0.5) {
                    vec![(a, rng.gen_range(a..n))]
                } else {
                    vec![]
                };
                ls(&s, &e, None, &spans)
            })
            .collect();
        let target = rng.gen_range(0..members.len());
        let per_paragraph = |ms: &[LabeledScores]| -> (f64, f64) {
            let answered: Vec<&LabeledScores> = ms.iter().filter(|m| m.has_answer()).collect();
            (
                answered
                    .iter()
                    .map(|m| independent_bounds_loss(m).unwrap().loss)
                    .sum(),
                answered
                    .iter()
                    .map(|m| summed_bounds_loss(m).unwrap().loss)
                    .sum(),
            )
        };
        let base = per_paragraph(&members);
        let base_shared = shared_norm_loss(&SharedNormGroup {
            members: members.clone(),
        })
        .unwrap()
        .0;
        for &c in &constants {
            let mut moved = members.clone();
            moved[target] = shifted(&moved[target], c);
            let after = per_paragraph(&moved);
            worst_invariant = worst_invariant
                .max((after.0 - base.0).abs())
                .max((after.1 - base.1).abs());
            let shared = shared_norm_loss(&SharedNormGroup { members: moved })
                .unwrap()
                .0;
            smallest_change = smallest_change.min((shared - base_shared).abs());
        }
    }
    let passed = worst_invariant <= 1e-10 && smallest_change > 0.0;
    report(
        3,
        passed,
        &format!(
            "200 groups x {{±0.1, ±1, ±10}}: per-paragraph losses move at most {worst_invariant:.1e} (<= 1e-10), shared-norm moves at least {smallest_change:.2e} (> 0)"
        ),
    );
    assert!(passed);
}

/// Highest `s_i + g_j` over `i <= j < i + max_len`; ties keep the
/// lexicographically smallest `(i, j)`.
fn brute_force_decode(s: &[f64], g: &[f64], max_len: usize) -> ((usize, usize), f64) {
    let mut best = ((0, 0), f64::NEG_INFINITY);
    for i in 0..s.len() {
        for j in i..s.len().min(i + max_len) {
            let v = s[i] + g[j];
            if v > best.1 {
                best = ((i, j), v);
            }
        }
    }
    best
}

#[test]
fn criterion_4_decode_oracle() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = 0;
    for case in 0..1000 {
        let n = rng.gen_range(1..=50);
        let max_len = [1, 8, 17][case % 3];
        // Every other instance uses small integers so ties are common.
        let draw = |rng: &mut ChaCha8Rng| {
            if case % 2 == 0 {
                rng.gen_range(-5.0..5.0)
            } else {
                rng.gen_range(-3i32..=3) as f64
            }
        };
        let s: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let g: Vec<f64> = (0..n).map(|_| draw(&mut rng)).collect();
        let got = decode_span(
            &ScoreMatrix::new(s.clone(), g.clone(), None).unwrap(),
            max_len,
        )
        .unwrap();
        if got != brute_force_decode(&s, &g, max_len) {
            mismatches += 1;
        }
    }
    let passed = mismatches == 0;
    report(4, passed, &format!("1000 instances (n <= 50, max_len in {{1, 8, 17}}), {mismatches} mismatches in span or score"));
    assert!(passed);
}

/// Exact inclusion probability of each item under sequential weighted draws
/// without replacement, by enumerating every ordered draw sequence.
fn inclusion_probabilities(weights: &[f64], draws: usize) -> Vec<f64> {
    fn walk(weights: &[f64], taken: &mut Vec<usize>, p: f64, draws: usize, out: &mut [f64]) {
        if taken.len() == draws {
            for &i in taken.iter() {
                out[i] += p;
            }
            return;
        }
        let total: f64 = (0..weights.len())
            .filter(|i| !taken.contains(i))
            .map(|i| weights[i])
            .sum();
        for i in 0..weights.len() {
            if !taken.contains(&i) {
                taken.push(i);
                walk(weights, taken, p * weights[i] / total, draws, out);
                taken.pop();
            }
        }
    }
    let mut out = vec![0.0; weights.len()];
    walk(weights, &mut Vec::new(), 1.0, draws, &mut out);
    out
}

#[test]
fn criterion_5_sampling_distribution() {
    let _g = serial();
    let docs = vec![docqa::corpus::DocumentRecord {
        doc_id: "d".into(),
        paragraphs: vec![
            "red fox jumps over".into(),
            "blue fox sleeps here".into(),
            "green fox runs far".into(),
            "grey fox eats now".into(),
        ],
    }];
    let q = docqa::corpus::QuestionRecord {
        q_id: "q".into(),
        question: "which fox jumps ?".into(),
        doc_ids: vec!["d".into()],
        answers: vec!["red".into()],
    };
    let prepared = prepare_records(&docs, &[q], 4, 8).unwrap();
    let plan = SamplingPlan {
        require_answer: false,
        ..SamplingPlan::single_document()
    };
    let pool = build_pool(&prepared[0], &plan, PoolRanker::Tfidf).unwrap();
    assert_eq!(pool.question.groups.len(), 4);

    let weights: Vec<f64> = (0..4)
        .map(|i| if i == pool.flagged { 2.0 } else { 1.0 })
        .collect();
    let exact = inclusion_probabilities(&weights, 2);
    let trials = 100_000;
    let mut counts = [0usize; 4];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..trials {
        for i in epoch_sample(&pool, &plan, &mut rng) {
            counts[i] += 1;
        }
    }
    let freq: Vec<f64> = counts.iter().map(|&c| c as f64 / trials as f64).collect();
    let dev = (freq[pool.flagged] - exact[pool.flagged]).abs();
    let exceeds = (0..4)
        .filter(|&i| i != pool.flagged)
        .all(|i| freq[pool.flagged] > freq[i]);
    let passed = dev <= 0.01 && exceeds;
    report(
        5,
        passed,
        &format!(
            "oversampled paragraph: empirical {:.4} vs exact {:.4} (|diff| {dev:.4} <= 0.01), others {:?}",
            freq[pool.flagged], exact[pool.flagged], freq
        ),
    );
    assert!(passed);
}

fn curve_for(mode: TrainingMode) -> (Vec<CurveRow>, f64, f64, Duration) {
    let t = Instant::now();
    let corpus = generate_corpus(&SyntheticSpec::default()).unwrap();
    let mut cfg = RunConfig::desk_synthetic();
    cfg.train.mode = mode;
    let cfg = cfg.finalize().unwrap();
    let train = prepare_records(
        &corpus.documents,
        &corpus.train,
        cfg.merge_target,
        cfg.match_cap,
    )
    .unwrap();
    let test = prepare_records(
        &corpus.documents,
        &corpus.test,
        cfg.merge_target,
        cfg.match_cap,
    )
    .unwrap();
    let words = Arc::new(corpus.vectors.cast::<f32>());
    let mut trainer = new_trainer(&cfg, words).unwrap();
    let metrics = continue_training(&mut trainer, cfg.epochs, &train).unwrap();
    let model = trainer.averaged_model();
    let rows = confidence_curve(&model, &test, 8, DecodeOptions::for_model(&model)).unwrap();
    (
        rows,
        metrics[0].mean_loss,
        metrics.last().unwrap().mean_loss,
        t.elapsed(),
    )
}

#[test]
fn criterion_6_desk_scale_confidence_curves() {
    let _g = serial();
    let (shared, first_loss, last_loss, t_shared) = curve_for(TrainingMode::SharedNorm);
    let (none, _, _, t_none) = curve_for(TrainingMode::None);
    let em = |rows: &[CurveRow], k: usize| rows[k - 1].em;
    let a = em(&shared, 8) >= em(&shared, 1) - 0.01;
    let b = em(&none, 8) < em(&none, 2);
    let c = em(&shared, 8) >= em(&none, 8) + 0.05;
    let loss_halved = last_loss <= 0.5 * first_loss;
    let runtime = t_shared + t_none;
    let passed = a && b && c && runtime < Duration::from_secs(1800);
    let fmt = |rows: &[CurveRow]| {
        rows.iter()
            .map(|r| format!("{:.2}", r.em))
            .collect::<Vec<_>>()
            .join(" ")
    };
    report(
        6,
        passed,
        &format!(
            "(a) {a} shared-norm EM k=1..8 [{}]; (b) {b} none EM k=1..8 [{}]; (c) {c} gap at k=8 {:.2}; shared-norm loss {first_loss:.3} -> {last_loss:.3}; {:.0}s",
            fmt(&shared),
            fmt(&none),
            em(&shared, 8) - em(&none, 8),
            runtime.as_secs_f64()
        ),
    );
    assert!(loss_halved, "training loss {first_loss} -> {last_loss}");
    assert!(passed);
}

#[test]
fn criterion_7_tfidf_selection() {
    let _g = serial();
    let corpus = generate_corpus(&SyntheticSpec::default()).unwrap();
    let cfg = RunConfig::desk_synthetic();
    let mut questions = corpus.train.clone();
    questions.extend(corpus.test.iter().cloned());
    let prepared = prepare_records(
        &corpus.documents,
        &questions,
        cfg.merge_target,
        cfg.match_cap,
    )
    .unwrap();
    let r = selection_report(&prepared, None);
    let passed = r.tfidf_top1 > r.first_paragraph;
    report(
        7,
        passed,
        &format!(
            "{} questions: tfidf rank-0 answer rate {:.3} vs first paragraph {:.3}; top-4 {:.3}",
            r.questions, r.tfidf_top1, r.first_paragraph, r.tfidf_top4
        ),
    );
    assert!(r.tfidf_top4 >= 0.95);
    assert!(passed);
}

/// Reference normalization: lowercase, drop punctuation, drop standalone
/// articles, collapse whitespace. Written against a hand-listed punctuation
/// set covering every character the generator below can emit.
fn oracle_normalize(s: &str) -> String {
    const PUNCT: &str =
        "!\"#%&'()*,-./:;?@[\\]_{}¡¿«»\u{2018}\u{2019}\u{201C}\u{201D}\u{2013}\u{2014}\u{2026}";
    let lowered = s.to_lowercase();
    let kept: String = lowered.chars().filter(|c| !PUNCT.contains(*c)).collect();
    // Split into runs of word and non-word characters; articles are word runs.
    let mut runs: Vec<(bool, String)> = Vec::new();
    for ch in kept.chars() {
        let word = ch.is_alphanumeric() || ch == '_';
        match runs.last_mut() {
            Some((w, run)) if *w == word => run.push(ch),
            _ => runs.push((word, ch.to_string())),
        }
    }
    let rebuilt: String = runs
        .into_iter()
        .map(|(w, run)| {
            if w && ["a", "an", "the"].contains(&run.as_str()) {
                " ".to_string()
            } else {
                run
            }
        })
        .collect();
    rebuilt.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn oracle_f1(pred: &str, gold: &str) -> f64 {
    let p = oracle_normalize(pred);
    let g = oracle_normalize(gold);
    let mut pt: Vec<&str> = p.split_whitespace().collect();
    let mut gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    pt.sort_unstable();
    gt.sort_unstable();
    let (mut i, mut j, mut common) = (0, 0, 0usize);
    while i < pt.len() && j < gt.len() {
        match pt[i].cmp(gt[j]) {
            std::cmp::Ordering::Equal => {
                common += 1;
                i += 1;
                j += 1;
            }
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn adversarial_string(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 20] = [
        "a",
        "an",
        "the",
        "The",
        "AN",
        "A",
        "Anne",
        "theory",
        "then",
        "cat",
        "Cat",
        "CAT",
        "dog",
        "co-op",
        "U.S.",
        "rock'n'roll",
        "x_y",
        "42",
        "Ærø",
        "naïve",
    ];
    const PUNCT: [&str; 14] = [
        ".", ",", "!", "?", "'", "\"", "(", ")", "-", "\u{2014}", "…", "«", "»", "“",
    ];
    const SYMBOLS: [&str; 3] = ["$", "+", "="];
    const SPACE: [&str; 5] = [" ", "  ", "\t", "\n", " \u{00A0}"];
    let mut s = String::new();
    for _ in 0..rng.gen_range(0..7) {
        match rng.gen_range(0..10) {
            0..=4 => s.push_str(WORDS[rng.gen_range(0..WORDS.len())]),
            5..=6 => s.push_str(PUNCT[rng.gen_range(0..PUNCT.len())]),
            7 => s.push_str(SYMBOLS[rng.gen_range(0..SYMBOLS.len())]),
            _ => {}
        }
        s.push_str(SPACE[rng.gen_range(0..SPACE.len())]);
    }
    s
}

#[test]
fn criterion_8_metric_fidelity() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut disagreements = Vec::new();
    for _ in 0..200 {
        let pred = adversarial_string(&mut rng);
        // Half the golds are perturbations of the prediction, so EM = 1 occurs.
        let gold = if rng.gen_bool(0.5) {
            let mut g = pred.to_uppercase();
            g.push_str(["", " the", ".", "  "][rng.gen_range(0..4)]);
            g
        } else {
            adversarial_string(&mut rng)
        };
        let golds = vec![gold.clone()];
        let em_ref = if oracle_normalize(&pred) == oracle_normalize(&gold) {
            1.0
        } else {
            0.0
        };
        let f1_ref = oracle_f1(&pred, &gold);
        if em_score(&pred, &golds) != em_ref || f1_score(&pred, &golds) != f1_ref {
            disagreements.push((pred, gold));
        }
    }
    let passed = disagreements.is_empty();
    report(
        8,
        passed,
        &format!(
            "200 adversarial pairs, {} disagreements {:?}",
            disagreements.len(),
            disagreements.first()
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    let corpus = generate_corpus(&SyntheticSpec::default()).unwrap();
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
    let words = Arc::new(corpus.vectors.cast::<f32>());
    let run = || {
        let mut trainer = new_trainer(&cfg, words.clone()).unwrap();
        continue_training(&mut trainer, cfg.epochs, &train).unwrap();
        (
            Checkpoint::from_trainer(&trainer).to_json().unwrap(),
            trainer,
        )
    };
    let (first, mut trainer) = run();
    let (second, _) = run();
    let identical = first == second;

    let (live, shadow) = (
        trainer.model.params.checksum(),
        trainer.ema.shadow.checksum(),
    );
    ema_swap(&mut trainer.model.params, &mut trainer.ema).unwrap();
    let swapped =
        trainer.model.params.checksum() == shadow && trainer.ema.shadow.checksum() == live;
    ema_swap(&mut trainer.model.params, &mut trainer.ema).unwrap();
    let restored =
        trainer.model.params.checksum() == live && trainer.ema.shadow.checksum() == shadow;
    let passed = identical && swapped && restored && live != shadow;
    report(
        9,
        passed,
        &format!(
            "seed 7, 3 epochs twice: checkpoints identical {identical} ({} bytes); EMA swap exchanges {swapped}, double swap restores {restored}",
            first.len()
        ),
    );
    assert!(passed);
}
