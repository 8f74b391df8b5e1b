use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PreparedQuestion;
use crate::error::{Error, Result};

/// `{"doc_id": ..., "paragraphs": [...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub paragraphs: Vec<String>,
}

/// `{"q_id": ..., "question": ..., "doc_ids": [...], "answers": [...]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub q_id: String,
    pub question: String,
    pub doc_ids: Vec<String>,
    pub answers: Vec<String>,
}

/// Parses one JSON value per non-blank line, keeping 1-based line numbers.
pub(crate) fn parse_lines<T: DeserializeOwned>(
    text: &str,
    source: &str,
) -> Result<Vec<(usize, T)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Parse {
            source_name: source.to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push((i + 1, rec));
    }
    Ok(out)
}

fn parse_error(source: &str, line: usize, message: String) -> Error {
    Error::Parse {
        source_name: source.to_string(),
        line,
        message,
    }
}

pub fn parse_documents_jsonl(text: &str, source: &str) -> Result<Vec<DocumentRecord>> {
    let docs: Vec<(usize, DocumentRecord)> = parse_lines(text, source)?;
    let mut seen = HashSet::new();
    for (line, d) in &docs {
        if d.paragraphs.is_empty() {
            return Err(parse_error(
                source,
                *line,
                format!("document {} has no paragraphs", d.doc_id),
            ));
        }
        if !seen.insert(d.doc_id.as_str()) {
            return Err(parse_error(
                source,
                *line,
                format!("duplicate doc_id {}", d.doc_id),
            ));
        }
    }
    Ok(docs.into_iter().map(|(_, d)| d).collect())
}

pub fn parse_questions_jsonl(text: &str, source: &str) -> Result<Vec<QuestionRecord>> {
    let qs: Vec<(usize, QuestionRecord)> = parse_lines(text, source)?;
    for (line, q) in &qs {
        if q.answers.is_empty() || q.answers.iter().all(|a| a.trim().is_empty()) {
            return Err(parse_error(
                source,
                *line,
                format!("question {} has no answers", q.q_id),
            ));
        }
        if q.doc_ids.is_empty() {
            return Err(parse_error(
                source,
                *line,
                format!("question {} has no documents", q.q_id),
            ));
        }
    }
    Ok(qs.into_iter().map(|(_, q)| q).collect())
}

/// Prepared questions as written by the `preprocess` step. Token offsets
/// are checked against each group's raw text.
pub fn parse_prepared_jsonl(text: &str, source: &str) -> Result<Vec<PreparedQuestion>> {
    let qs: Vec<(usize, PreparedQuestion)> = parse_lines(text, source)?;
    for (line, q) in &qs {
        let texts_ok = q.question.validate() && q.groups.iter().all(|g| g.text.validate());
        let spans_ok = q.groups.iter().all(|g| {
            g.has_answer == !g.answer_spans.is_empty()
                && g.answer_spans
                    .spans
                    .iter()
                    .all(|&(s, e)| s <= e && e < g.token_count())
        });
        if !texts_ok || !spans_ok {
            return Err(parse_error(
                source,
                *line,
                format!("question {} is inconsistent", q.q_id),
            ));
        }
    }
    Ok(qs.into_iter().map(|(_, q)| q).collect())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_documents(path: &Path) -> Result<Vec<DocumentRecord>> {
    parse_documents_jsonl(&read(path)?, &path.display().to_string())
}

pub fn read_questions(path: &Path) -> Result<Vec<QuestionRecord>> {
    parse_questions_jsonl(&read(path)?, &path.display().to_string())
}

pub fn read_prepared(path: &Path) -> Result<Vec<PreparedQuestion>> {
    parse_prepared_jsonl(&read(path)?, &path.display().to_string())
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
