//! Documents, merged paragraph groups, and paragraph ranking.

mod io;
mod ranker;
mod tfidf;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::{find_answer_spans, tokenize, AnswerSpans, TokenizedText};

pub(crate) use io::parse_lines;
pub use io::{
    parse_documents_jsonl, parse_prepared_jsonl, parse_questions_jsonl, read_documents,
    read_prepared, read_questions, write_jsonl, DocumentRecord, QuestionRecord,
};
pub use ranker::{featurize, rank_linear, train_linear_ranker, LinearRanker, RankerFeatures};
pub use tfidf::{annotate_tfidf, tfidf_distances, tfidf_rank};

/// Token inserted between merged paragraphs. The tokenizer never emits it
/// because `<` and `>` are split off as punctuation.
pub const SEPARATOR: &str = "<sep>";

/// Default merge target in tokens.
pub const DEFAULT_MERGE_TARGET: usize = 400;

#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub doc_id: String,
    pub paragraphs: Vec<TokenizedText>,
}

impl Document {
    pub fn from_record(rec: &DocumentRecord) -> Self {
        Document {
            doc_id: rec.doc_id.clone(),
            paragraphs: rec.paragraphs.iter().map(|p| tokenize(p)).collect(),
        }
    }
}

/// One unit of model input: one or more consecutive paragraphs of a
/// document joined by [`SEPARATOR`] tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParagraphGroup {
    pub source_doc: String,
    /// Index of the group within its document.
    pub position: usize,
    /// Source tokens preceding this group in its document.
    pub tokens_before: usize,
    pub text: TokenizedText,
    pub answer_spans: AnswerSpans,
    pub has_answer: bool,
    pub rank: usize,
    pub tfidf_distance: f64,
}

impl ParagraphGroup {
    pub fn token_count(&self) -> usize {
        self.text.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.text.tokens
    }

    pub fn is_first(&self) -> bool {
        self.position == 0
    }

    /// Stable identifier `doc_id#position`.
    pub fn id(&self) -> String {
        format!("{}#{}", self.source_doc, self.position)
    }

    /// Labels answer spans by normalized exact match and sets `has_answer`.
    pub fn label(&mut self, answers: &[String], max_len: usize) {
        self.answer_spans = find_answer_spans(&self.text, answers, max_len);
        self.has_answer = !self.answer_spans.is_empty();
    }
}

/// Piece of a source paragraph: paragraph index and token range.
struct Piece<'a> {
    para: &'a TokenizedText,
    start: usize,
    end: usize,
}

fn build_text(pieces: &[Piece<'_>], separator: &str) -> TokenizedText {
    let mut raw = String::new();
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    for (k, p) in pieces.iter().enumerate() {
        if k > 0 {
            raw.push(' ');
            spans.push((raw.len(), raw.len() + separator.len()));
            tokens.push(separator.to_string());
            raw.push_str(separator);
            raw.push(' ');
        }
        let base = p.para.char_spans[p.start].0;
        let stop = p.para.char_spans[p.end - 1].1;
        let offset = raw.len();
        raw.push_str(&p.para.raw[base..stop]);
        for i in p.start..p.end {
            let (s, e) = p.para.char_spans[i];
            spans.push((s - base + offset, e - base + offset));
            tokens.push(p.para.tokens[i].clone());
        }
    }
    TokenizedText {
        tokens,
        char_spans: spans,
        raw,
    }
}

/// Greedy left-to-right packing of a document's paragraphs into groups of
/// at most `target` tokens, counting one separator between merged
/// paragraphs. Paragraphs longer than `target` are first cut into
/// consecutive chunks of `target` tokens; chunks then pack like paragraphs.
/// Empty paragraphs are skipped.
pub fn merge_paragraphs(doc: &Document, target: usize, separator: &str) -> Vec<ParagraphGroup> {
    let target = target.max(1);
    let mut pieces = Vec::new();
    for para in &doc.paragraphs {
        let mut start = 0;
        while start < para.len() {
            let end = (start + target).min(para.len());
            pieces.push(Piece { para, start, end });
            start = end;
        }
    }

    let mut groups = Vec::new();
    let mut current: Vec<Piece<'_>> = Vec::new();
    let mut current_len = 0usize;
    let mut consumed = 0usize;
    let mut group_start_tokens = 0usize;
    let flush = |current: &mut Vec<Piece<'_>>, groups: &mut Vec<ParagraphGroup>, before: usize| {
        if current.is_empty() {
            return;
        }
        groups.push(ParagraphGroup {
            source_doc: doc.doc_id.clone(),
            position: groups.len(),
            tokens_before: before,
            text: build_text(current, separator),
            answer_spans: AnswerSpans::default(),
            has_answer: false,
            rank: 0,
            tfidf_distance: 1.0,
        });
        current.clear();
    };

    for piece in pieces {
        let len = piece.end - piece.start;
        if !current.is_empty() && current_len + 1 + len > target {
            flush(&mut current, &mut groups, group_start_tokens);
            current_len = 0;
        }
        if current.is_empty() {
            group_start_tokens = consumed;
            current_len = len;
        } else {
            current_len += 1 + len;
        }
        consumed += len;
        current.push(piece);
    }
    flush(&mut current, &mut groups, group_start_tokens);
    groups
}

/// A question with its labeled, TF-IDF ranked paragraph groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreparedQuestion {
    pub q_id: String,
    pub question: TokenizedText,
    pub answers: Vec<String>,
    pub groups: Vec<ParagraphGroup>,
}

impl PreparedQuestion {
    pub fn answer_in_top(&self, k: usize) -> bool {
        self.groups.iter().take(k).any(|g| g.has_answer)
    }
}

/// Tokenizes, merges, labels and TF-IDF ranks all groups of the question's
/// documents. Unknown document ids are an error.
pub fn prepare_question(
    q: &QuestionRecord,
    docs: &HashMap<String, Document>,
    merge_target: usize,
    match_cap: usize,
) -> Result<PreparedQuestion> {
    let question = tokenize(&q.question);
    let mut groups = Vec::new();
    for id in &q.doc_ids {
        let doc = docs.get(id).ok_or_else(|| {
            Error::InvalidInput(format!(
                "question {} references unknown document {id}",
                q.q_id
            ))
        })?;
        groups.extend(merge_paragraphs(doc, merge_target, SEPARATOR));
    }
    for g in &mut groups {
        g.label(&q.answers, match_cap);
    }
    let groups = if groups.is_empty() {
        groups
    } else {
        tfidf_rank(&question, groups)
    };
    Ok(PreparedQuestion {
        q_id: q.q_id.clone(),
        question,
        answers: q.answers.clone(),
        groups,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc_with_sizes(sizes: &[usize]) -> Document {
        let paragraphs = sizes
            .iter()
            .enumerate()
            .map(|(p, &n)| {
                let words: Vec<String> = (0..n).map(|i| format!("p{p}w{i}")).collect();
                tokenize(&words.join(" "))
            })
            .collect();
        Document {
            doc_id: "d".into(),
            paragraphs,
        }
    }

    #[test]
    fn greedy_packing() {
        let groups = merge_paragraphs(&doc_with_sizes(&[150, 180, 200]), 400, SEPARATOR);
        let sizes: Vec<usize> = groups.iter().map(|g| g.token_count()).collect();
        assert_eq!(sizes, vec![331, 200]);
        let g0 = &groups[0];
        assert_eq!(g0.tokens()[150], SEPARATOR);
        assert_eq!(g0.tokens().iter().filter(|t| *t == SEPARATOR).count(), 1);
        assert!(g0.text.validate());
        assert_eq!(groups[1].tokens_before, 330);
        assert_eq!(groups[1].position, 1);
    }

    #[test]
    fn oversized_paragraph_is_split() {
        let groups = merge_paragraphs(&doc_with_sizes(&[500]), 400, SEPARATOR);
        let sizes: Vec<usize> = groups.iter().map(|g| g.token_count()).collect();
        assert_eq!(sizes, vec![400, 100]);
        assert!(groups.iter().all(|g| g.text.validate()));
        assert_eq!(groups[1].tokens()[0], "p0w400");
    }

    #[test]
    fn single_small_paragraph() {
        let groups = merge_paragraphs(&doc_with_sizes(&[10]), 400, SEPARATOR);
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].token_count(), 10);
        assert!(!groups[0].tokens().iter().any(|t| t == SEPARATOR));
    }

    #[test]
    fn labeling_sets_flag() {
        let doc = Document {
            doc_id: "d".into(),
            paragraphs: vec![tokenize("Gordon returned."), tokenize("Nothing here.")],
        };
        let mut groups = merge_paragraphs(&doc, 3, SEPARATOR);
        for g in &mut groups {
            g.label(&["gordon".to_string()], 8);
        }
        assert!(groups[0].has_answer);
        assert!(!groups[1].has_answer);
    }
}
