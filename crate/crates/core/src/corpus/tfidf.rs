//! Document-local TF-IDF paragraph ranking.
//!
//! Document frequencies come only from the groups being ranked. Weights are
//! `tf · idf` with `tf` the raw count of a lowercased token and
//! `idf = ln((1 + N) / (1 + df)) + 1`. Terms are kept in a `BTreeMap` so dot
//! products are summed in a fixed order.

use std::collections::{BTreeMap, BTreeSet};

use super::{ParagraphGroup, SEPARATOR};
use crate::text::TokenizedText;

fn term_counts(tokens: &[String]) -> BTreeMap<String, f64> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        if t == SEPARATOR {
            continue;
        }
        *counts.entry(t.to_lowercase()).or_insert(0.0) += 1.0;
    }
    counts
}

fn cosine_distance(q: &BTreeMap<String, f64>, p: &BTreeMap<String, f64>) -> f64 {
    let qn: f64 = q.values().map(|v| v * v).sum::<f64>().sqrt();
    let pn: f64 = p.values().map(|v| v * v).sum::<f64>().sqrt();
    if qn == 0.0 || pn == 0.0 {
        return 1.0;
    }
    let dot: f64 = q.iter().filter_map(|(t, w)| p.get(t).map(|v| w * v)).sum();
    (1.0 - dot / (qn * pn)).clamp(0.0, 2.0)
}

/// Cosine distance between the question and each group, in input order.
pub fn tfidf_distances(question: &TokenizedText, groups: &[ParagraphGroup]) -> Vec<f64> {
    let n = groups.len() as f64;
    let counts: Vec<BTreeMap<String, f64>> =
        groups.iter().map(|g| term_counts(g.tokens())).collect();
    let mut df: BTreeMap<&str, f64> = BTreeMap::new();
    for c in &counts {
        for t in c.keys() {
            *df.entry(t.as_str()).or_insert(0.0) += 1.0;
        }
    }
    let idf = |t: &str| ((1.0 + n) / (1.0 + df.get(t).copied().unwrap_or(0.0))).ln() + 1.0;
    let weigh = |c: &BTreeMap<String, f64>| -> BTreeMap<String, f64> {
        c.iter().map(|(t, &tf)| (t.clone(), tf * idf(t))).collect()
    };
    let q = weigh(&term_counts(&question.tokens));
    counts
        .iter()
        .map(|c| cosine_distance(&q, &weigh(c)))
        .collect()
}

/// Sets `tfidf_distance` on every group without reordering.
pub fn annotate_tfidf(question: &TokenizedText, groups: &mut [ParagraphGroup]) {
    let d = tfidf_distances(question, groups);
    for (g, d) in groups.iter_mut().zip(d) {
        g.tfidf_distance = d;
    }
}

/// Annotates distances and stable-sorts ascending; ties keep input order.
/// `rank` is set to the position in the output.
pub fn tfidf_rank(
    question: &TokenizedText,
    mut groups: Vec<ParagraphGroup>,
) -> Vec<ParagraphGroup> {
    annotate_tfidf(question, &mut groups);
    groups.sort_by(|a, b| a.tfidf_distance.total_cmp(&b.tfidf_distance));
    for (i, g) in groups.iter_mut().enumerate() {
        g.rank = i;
    }
    groups
}

/// Lowercased vocabulary of a token list, used by the ranker features.
pub(crate) fn lower_set(tokens: &[String]) -> BTreeSet<String> {
    tokens.iter().map(|t| t.to_lowercase()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{merge_paragraphs, Document};
    use crate::text::tokenize;

    fn groups(texts: &[&str]) -> Vec<ParagraphGroup> {
        let mut out = Vec::new();
        for (i, t) in texts.iter().enumerate() {
            let single = Document {
                doc_id: "d".into(),
                paragraphs: vec![tokenize(t)],
            };
            let mut g = merge_paragraphs(&single, 10_000, SEPARATOR).remove(0);
            g.position = i;
            out.push(g);
        }
        out
    }

    /// Independent evaluation of the pinned formula for two short groups.
    #[test]
    fn matches_hand_formula() {
        let gs = groups(&["tiger largest", "cat"]);
        let q = tokenize("largest tiger");
        let d = tfidf_distances(&q, &gs);
        // N = 2; df(tiger)=df(largest)=df(cat)=1 → idf = ln(3/2)+1 for all
        // group 0 and the question have identical weight vectors → distance 0
        assert!(d[0].abs() < 1e-12);
        assert!((d[1] - 1.0).abs() < 1e-12);
        let ranked = tfidf_rank(&q, gs);
        assert_eq!(ranked[0].tokens()[0], "tiger");
        assert_eq!(ranked[0].rank, 0);
    }

    #[test]
    fn rare_terms_weigh_more() {
        let gs = groups(&["tiger tiger the", "tiger largest", "tiger cat"]);
        let q = tokenize("largest tiger");
        let ranked = tfidf_rank(&q, gs);
        assert_eq!(ranked[0].tokens()[1], "largest");
    }

    #[test]
    fn singleton() {
        let gs = groups(&["anything at all"]);
        let ranked = tfidf_rank(&tokenize("what"), gs);
        assert_eq!(ranked.len(), 1);
        assert_eq!(ranked[0].rank, 0);
        assert_eq!(ranked[0].tfidf_distance, 1.0);
    }

    #[test]
    fn zero_overlap_keeps_order() {
        let gs = groups(&["a b", "c d", "e f"]);
        let ranked = tfidf_rank(&tokenize("x y"), gs);
        let firsts: Vec<&str> = ranked.iter().map(|g| g.tokens()[0].as_str()).collect();
        assert_eq!(firsts, vec!["a", "c", "e"]);
        assert!(ranked.iter().all(|g| g.tfidf_distance == 1.0));
    }
}
