//! Tokenization, answer normalization, distant-supervision span labeling
//! and the EM/F1 answer metrics.
//!
//! Normalization follows the SQuAD evaluation script: lowercase, drop
//! punctuation, drop the standalone articles `a`/`an`/`the`, collapse
//! whitespace. The one divergence is the punctuation set, which here is
//! every character in a Unicode `P*` general category instead of Python's
//! ASCII `string.punctuation` (so `$`, `+`, `<` and friends are kept).

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use unicode_general_category::{get_general_category, GeneralCategory};

/// Default maximum span length (in tokens) considered by [`find_answer_spans`].
pub const DEFAULT_MATCH_CAP: usize = 8;

/// A token sequence together with the byte offsets of every token in `raw`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct TokenizedText {
    pub tokens: Vec<String>,
    /// Half-open byte ranges `[start, end)` into `raw`.
    pub char_spans: Vec<(usize, usize)>,
    pub raw: String,
}

impl TokenizedText {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Raw text covering tokens `start..=end`.
    pub fn span_text(&self, start: usize, end: usize) -> &str {
        &self.raw[self.char_spans[start].0..self.char_spans[end].1]
    }

    /// Checks the offset invariants; used when loading untrusted files.
    pub fn validate(&self) -> bool {
        if self.tokens.len() != self.char_spans.len() {
            return false;
        }
        let mut prev_end = 0usize;
        for (i, (tok, &(s, e))) in self.tokens.iter().zip(&self.char_spans).enumerate() {
            if s >= e || (i > 0 && s < prev_end) || e > self.raw.len() {
                return false;
            }
            match self.raw.get(s..e) {
                Some(slice) if slice == tok => {}
                _ => return false,
            }
            prev_end = e;
        }
        true
    }
}

/// Inclusive token spans of labeled answers, sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct AnswerSpans {
    pub spans: Vec<(usize, usize)>,
    pub answer_texts: Vec<String>,
}

impl AnswerSpans {
    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    /// Distinct start positions, ascending.
    pub fn starts(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.spans.iter().map(|s| s.0).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// Distinct end positions, ascending.
    pub fn ends(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.spans.iter().map(|s| s.1).collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

pub fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Whitespace split, then peel leading and trailing punctuation characters
/// off each word as single-character tokens. Internal punctuation stays.
pub fn tokenize(raw: &str) -> TokenizedText {
    let mut tokens = Vec::new();
    let mut spans = Vec::new();
    let mut push = |s: usize, e: usize| {
        tokens.push(raw[s..e].to_string());
        spans.push((s, e));
    };

    let mut word_start: Option<usize> = None;
    let mut words = Vec::new();
    for (i, c) in raw.char_indices() {
        if c.is_whitespace() {
            if let Some(s) = word_start.take() {
                words.push((s, i));
            }
        } else if word_start.is_none() {
            word_start = Some(i);
        }
    }
    if let Some(s) = word_start {
        words.push((s, raw.len()));
    }

    for (ws, we) in words {
        let word = &raw[ws..we];
        let chars: Vec<(usize, char)> = word.char_indices().collect();
        let lead = chars.iter().take_while(|(_, c)| is_punctuation(*c)).count();
        if lead == chars.len() {
            for &(off, c) in &chars {
                push(ws + off, ws + off + c.len_utf8());
            }
            continue;
        }
        let trail = chars
            .iter()
            .rev()
            .take_while(|(_, c)| is_punctuation(*c))
            .count();
        for &(off, c) in &chars[..lead] {
            push(ws + off, ws + off + c.len_utf8());
        }
        let core_start = ws + chars[lead].0;
        let core_end = if trail == 0 {
            we
        } else {
            ws + chars[chars.len() - trail].0
        };
        push(core_start, core_end);
        for &(off, c) in &chars[chars.len() - trail..] {
            push(ws + off, ws + off + c.len_utf8());
        }
    }

    TokenizedText {
        tokens,
        char_spans: spans,
        raw: raw.to_string(),
    }
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Replaces `a`, `an`, `the` bounded by non-word characters with a space,
/// mirroring the regex `\b(a|an|the)\b`.
fn remove_articles(s: &str) -> String {
    let chars: Vec<char> = s.chars().collect();
    let mut out = String::with_capacity(s.len());
    let mut i = 0;
    while i < chars.len() {
        let at_boundary = i == 0 || !is_word_char(chars[i - 1]);
        if at_boundary && is_word_char(chars[i]) {
            let mut j = i;
            while j < chars.len() && is_word_char(chars[j]) {
                j += 1;
            }
            let word: String = chars[i..j].iter().collect();
            if matches!(word.as_str(), "a" | "an" | "the") {
                out.push(' ');
            } else {
                out.push_str(&word);
            }
            i = j;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

pub fn normalize_answer(text: &str) -> String {
    let lowered = text.to_lowercase();
    let no_punc: String = lowered.chars().filter(|c| !is_punctuation(*c)).collect();
    let no_articles = remove_articles(&no_punc);
    no_articles.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn is_punctuation_token(tok: &str) -> bool {
    tok.chars().all(is_punctuation)
}

/// Labels every span (up to `max_len` tokens) whose raw text normalizes to
/// the normalized form of one of `answers`. Spans never begin or end on a
/// token made only of punctuation, so `'Gordon` is labeled once, not twice.
pub fn find_answer_spans(
    context: &TokenizedText,
    answers: &[String],
    max_len: usize,
) -> AnswerSpans {
    let targets: HashSet<String> = answers
        .iter()
        .map(|a| normalize_answer(a))
        .filter(|a| !a.is_empty())
        .collect();
    let mut spans = Vec::new();
    if !targets.is_empty() {
        let n = context.len();
        let punct: Vec<bool> = context
            .tokens
            .iter()
            .map(|t| is_punctuation_token(t))
            .collect();
        for start in 0..n {
            if punct[start] {
                continue;
            }
            for end in start..n.min(start + max_len) {
                if punct[end] {
                    continue;
                }
                let norm = normalize_answer(context.span_text(start, end));
                if !norm.is_empty() && targets.contains(&norm) {
                    spans.push((start, end));
                }
            }
        }
    }
    AnswerSpans {
        spans,
        answer_texts: answers.to_vec(),
    }
}

pub fn em_score(prediction: &str, golds: &[String]) -> f64 {
    let p = normalize_answer(prediction);
    if golds.iter().any(|g| normalize_answer(g) == p) {
        1.0
    } else {
        0.0
    }
}

fn token_f1(prediction: &str, gold: &str) -> f64 {
    let p = normalize_answer(prediction);
    let g = normalize_answer(gold);
    let p_toks: Vec<&str> = p.split_whitespace().collect();
    let g_toks: Vec<&str> = g.split_whitespace().collect();
    match (p_toks.is_empty(), g_toks.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &g_toks {
        *counts.entry(t).or_default() += 1;
    }
    let mut same = 0usize;
    for t in &p_toks {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                same += 1;
            }
        }
    }
    if same == 0 {
        return 0.0;
    }
    let precision = same as f64 / p_toks.len() as f64;
    let recall = same as f64 / g_toks.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

pub fn f1_score(prediction: &str, golds: &[String]) -> f64 {
    golds
        .iter()
        .map(|g| token_f1(prediction, g))
        .fold(0.0, f64::max)
}
