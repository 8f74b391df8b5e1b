//! Five-feature linear paragraph ranker for multi-document questions.
//!
//! Training is per-group logistic regression on "contains an answer",
//! fit by full-batch gradient descent on standardized features. The learned
//! weights are mapped back to raw feature units so that a ranker can be
//! written by hand (e.g. `(1, 0, 0, 0, 0)` reproduces TF-IDF order).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::tfidf::lower_set;
use super::ParagraphGroup;
use crate::error::{Error, Result};
use crate::text::{is_punctuation, TokenizedText};

const MAX_EPOCHS: usize = 1000;
const TOLERANCE: f64 = 1e-6;
const STEP: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankerFeatures {
    pub neg_tfidf_distance: f64,
    pub is_first: bool,
    pub tokens_before: usize,
    /// Distinct question words present in the group, ignoring case.
    pub q_matches_ci: usize,
    /// Distinct question words present in the group verbatim.
    pub q_matches_cs: usize,
}

impl RankerFeatures {
    pub fn to_array(&self) -> [f64; 5] {
        [
            self.neg_tfidf_distance,
            if self.is_first { 1.0 } else { 0.0 },
            self.tokens_before as f64,
            self.q_matches_ci as f64,
            self.q_matches_cs as f64,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LinearRanker {
    pub weights: [f64; 5],
    pub bias: f64,
}

impl LinearRanker {
    pub fn score(&self, f: &RankerFeatures) -> f64 {
        self.weights
            .iter()
            .zip(f.to_array())
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().all(|w| w.is_finite()) && self.bias.is_finite()
    }
}

fn question_words(question: &TokenizedText) -> BTreeSet<&str> {
    question
        .tokens
        .iter()
        .filter(|t| !t.chars().all(is_punctuation))
        .map(|t| t.as_str())
        .collect()
}

pub fn featurize(question: &TokenizedText, group: &ParagraphGroup) -> RankerFeatures {
    let words = question_words(question);
    let exact: BTreeSet<&str> = group.tokens().iter().map(|t| t.as_str()).collect();
    let lower = lower_set(group.tokens());
    let cs = words.iter().filter(|w| exact.contains(**w)).count();
    let ci = words
        .iter()
        .map(|w| w.to_lowercase())
        .collect::<BTreeSet<_>>()
        .iter()
        .filter(|w| lower.contains(*w))
        .count();
    RankerFeatures {
        neg_tfidf_distance: -group.tfidf_distance,
        is_first: group.is_first(),
        tokens_before: group.tokens_before,
        q_matches_ci: ci.max(cs),
        q_matches_cs: cs,
    }
}

fn mean_loss(xs: &[[f64; 5]], ys: &[f64], w: &[f64; 5], b: f64) -> f64 {
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            // log(1 + e^z) - y z, stable in both tails
            z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
        })
        .sum::<f64>()
        / xs.len() as f64
}

pub fn train_linear_ranker(examples: &[(RankerFeatures, bool)]) -> Result<LinearRanker> {
    let pos = examples.iter().filter(|e| e.1).count();
    if pos == 0 || pos == examples.len() {
        return Err(Error::Degenerate(format!(
            "ranker needs both labels; got {pos} positive of {} examples",
            examples.len()
        )));
    }
    let raw: Vec<[f64; 5]> = examples.iter().map(|e| e.0.to_array()).collect();
    let ys: Vec<f64> = examples
        .iter()
        .map(|e| if e.1 { 1.0 } else { 0.0 })
        .collect();
    let n = raw.len() as f64;

    let mut mean = [0.0; 5];
    let mut std = [0.0; 5];
    for j in 0..5 {
        mean[j] = raw.iter().map(|x| x[j]).sum::<f64>() / n;
        let var = raw.iter().map(|x| (x[j] - mean[j]).powi(2)).sum::<f64>() / n;
        std[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let xs: Vec<[f64; 5]> = raw
        .iter()
        .map(|x| std::array::from_fn(|j| (x[j] - mean[j]) / std[j]))
        .collect();

    let mut w = [0.0; 5];
    let mut b = 0.0;
    let mut prev = mean_loss(&xs, &ys, &w, b);
    for _ in 0..MAX_EPOCHS {
        let mut gw = [0.0; 5];
        let mut gb = 0.0;
        for (x, &y) in xs.iter().zip(&ys) {
            let z: f64 = w.iter().zip(x).map(|(a, c)| a * c).sum::<f64>() + b;
            let p = 1.0 / (1.0 + (-z).exp());
            let d = p - y;
            for j in 0..5 {
                gw[j] += d * x[j];
            }
            gb += d;
        }
        for j in 0..5 {
            w[j] -= STEP * gw[j] / n;
        }
        b -= STEP * gb / n;
        let loss = mean_loss(&xs, &ys, &w, b);
        if (prev - loss).abs() < TOLERANCE {
            break;
        }
        prev = loss;
    }

    let mut weights = [0.0; 5];
    let mut bias = b;
    for j in 0..5 {
        weights[j] = w[j] / std[j];
        bias -= w[j] * mean[j] / std[j];
    }
    let ranker = LinearRanker { weights, bias };
    if !ranker.is_finite() {
        return Err(Error::NonFinite("linear ranker weights".into()));
    }
    Ok(ranker)
}

/// Orders groups by descending ranker score (stable) and keeps the top `k`.
/// Groups must already carry their TF-IDF distance.
pub fn rank_linear(
    ranker: &LinearRanker,
    question: &TokenizedText,
    groups: Vec<ParagraphGroup>,
    k: usize,
) -> Vec<ParagraphGroup> {
    let mut scored: Vec<(f64, ParagraphGroup)> = groups
        .into_iter()
        .map(|g| (ranker.score(&featurize(question, &g)), g))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored
        .into_iter()
        .take(k.max(1))
        .enumerate()
        .map(|(i, (_, mut g))| {
            g.rank = i;
            g
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{merge_paragraphs, tfidf_rank, Document, SEPARATOR};
    use crate::text::tokenize;

    fn group(text: &str, position: usize, distance: f64) -> ParagraphGroup {
        let doc = Document {
            doc_id: "d".into(),
            paragraphs: vec![tokenize(text)],
        };
        let mut g = merge_paragraphs(&doc, 10_000, SEPARATOR).remove(0);
        g.position = position;
        g.tfidf_distance = distance;
        g
    }

    #[test]
    fn feature_definitions() {
        let f = featurize(&tokenize("Tiger"), &group("the tiger sleeps", 0, 0.4));
        assert_eq!(f.to_array(), [-0.4, 1.0, 0.0, 1.0, 0.0]);
        let f = featurize(&tokenize("Tiger"), &group("a Tiger", 3, 0.4));
        assert_eq!((f.q_matches_ci, f.q_matches_cs), (1, 1));
        let f = featurize(&tokenize("Tiger"), &group("nothing", 3, 0.4));
        assert_eq!((f.q_matches_ci, f.q_matches_cs), (0, 0));
    }

    #[test]
    fn hand_weights_order() {
        let q = tokenize("red fox");
        let gs = vec![
            group("red", 0, 0.9),
            group("red fox", 1, 0.1),
            group("Red Fox", 2, 0.5),
        ];
        let r = LinearRanker {
            weights: [0.0, 0.0, 0.0, 1.0, 2.0],
            bias: 0.0,
        };
        // scores: ci + 2 cs = 1+2=3, 2+4=6, 2+0=2
        let out = rank_linear(&r, &q, gs, 3);
        let pos: Vec<usize> = out.iter().map(|g| g.position).collect();
        assert_eq!(pos, vec![1, 0, 2]);
    }

    #[test]
    fn zero_ranker_keeps_order_and_truncates() {
        let q = tokenize("x");
        let gs = vec![group("a", 0, 0.3), group("b", 1, 0.1), group("c", 2, 0.2)];
        let out = rank_linear(&LinearRanker::default(), &q, gs.clone(), 2);
        assert_eq!(
            out.iter().map(|g| g.position).collect::<Vec<_>>(),
            vec![0, 1]
        );
        let all = rank_linear(&LinearRanker::default(), &q, gs, 10);
        assert_eq!(all.len(), 3);
    }

    #[test]
    fn distance_only_weights_reproduce_tfidf_order() {
        let q = tokenize("largest tiger");
        let gs: Vec<ParagraphGroup> = ["tiger cat", "largest tiger", "cat", "tiger"]
            .iter()
            .enumerate()
            .map(|(i, t)| group(t, i, 0.0))
            .collect();
        let by_tfidf = tfidf_rank(&q, gs.clone());
        let mut annotated = gs;
        crate::corpus::annotate_tfidf(&q, &mut annotated);
        let r = LinearRanker {
            weights: [1.0, 0.0, 0.0, 0.0, 0.0],
            bias: 0.0,
        };
        let by_linear = rank_linear(&r, &q, annotated, 10);
        let a: Vec<usize> = by_tfidf.iter().map(|g| g.position).collect();
        let b: Vec<usize> = by_linear.iter().map(|g| g.position).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let f = featurize(&tokenize("x"), &group("x", 0, 0.0));
        assert!(matches!(
            train_linear_ranker(&[(f, true), (f, true)]),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn separable_data_learns_the_signal() {
        let mut ex = Vec::new();
        for i in 0..40 {
            let good = i % 2 == 0;
            let f = RankerFeatures {
                neg_tfidf_distance: if good { -0.2 } else { -0.8 },
                is_first: i % 3 == 0,
                tokens_before: i * 50,
                q_matches_ci: if good { 3 } else { 1 },
                q_matches_cs: if good { 2 } else { 0 },
            };
            ex.push((f, good));
        }
        let r = train_linear_ranker(&ex).unwrap();
        for (f, y) in &ex {
            assert_eq!(r.score(f) > 0.0, *y);
        }
    }
}
