//! Templated question-answering corpus with category lookalikes.
//!
//! Every question reads `what <category> did <Subject> <relation> ?`. Its
//! answer paragraph holds the sentence `<Subject> <relation> <Answer> .`,
//! and that answer string occurs nowhere else in the question's documents.
//! A non-answer paragraph is a distractor with probability
//! `distractor_rate`: it holds `<Other> <relation'> <Lookalike> .` where the
//! lookalike has the asked category and `relation'` is a different relation
//! of that category. All other facts use other categories, so a model that
//! only learned "find the entity of the asked category" is confidently wrong
//! on distractors.
//!
//! Word vectors cluster by role: entities around their category centre,
//! subjects around a shared centre, relations and filler words independent.

use std::collections::HashSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{write_jsonl, DocumentRecord, QuestionRecord};
use crate::error::{Error, Result};
use crate::layers::WordVectors;

const CATEGORIES: [(&str, &str); 6] = [
    ("city", "ton"),
    ("color", "ine"),
    ("animal", "ox"),
    ("metal", "ium"),
    ("river", "ava"),
    ("dance", "ango"),
];

const SYLLABLES: [&str; 16] = [
    "ka", "lo", "mi", "ra", "te", "vu", "so", "ne", "pa", "di", "ro", "zu", "fe", "bi", "go", "ha",
];

const FILLER: [&str; 32] = [
    "the", "of", "and", "a", "in", "was", "it", "for", "on", "with", "as", "by", "at", "from",
    "this", "that", "which", "also", "later", "after", "before", "during", "many", "some", "most",
    "often", "then", "there", "were", "had", "been", "its",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Answer entities across all categories.
    pub vocab_size: usize,
    pub relations_per_category: usize,
    pub subjects: usize,
    pub train_questions: usize,
    pub test_questions: usize,
    pub documents_per_question: usize,
    pub paragraphs_per_document: usize,
    pub min_paragraph_len: usize,
    pub max_paragraph_len: usize,
    pub distractor_rate: f64,
    pub word_dim: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            vocab_size: 240,
            relations_per_category: 3,
            subjects: 150,
            train_questions: 200,
            test_questions: 100,
            documents_per_question: 1,
            paragraphs_per_document: 8,
            min_paragraph_len: 20,
            max_paragraph_len: 30,
            distractor_rate: 0.5,
            word_dim: 24,
            seed: 13,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("subjects", self.subjects),
            ("train_questions", self.train_questions),
            ("documents_per_question", self.documents_per_question),
            ("paragraphs_per_document", self.paragraphs_per_document),
            ("word_dim", self.word_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.vocab_size < 2 * CATEGORIES.len() {
            return Err(Error::Config(format!(
                "vocab_size must be at least {}",
                2 * CATEGORIES.len()
            )));
        }
        if self.relations_per_category < 2 {
            return Err(Error::Config(
                "relations_per_category must be at least 2".into(),
            ));
        }
        if self.subjects < 3 {
            return Err(Error::Config("subjects must be at least 3".into()));
        }
        if self.min_paragraph_len < 12 || self.min_paragraph_len > self.max_paragraph_len {
            return Err(Error::Config(
                "paragraph length range must satisfy 12 <= min <= max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!(
                "distractor_rate must be in [0, 1], got {}",
                self.distractor_rate
            )));
        }
        Ok(())
    }
}

/// Generated corpus: documents, train and test questions, word vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub documents: Vec<DocumentRecord>,
    pub train: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
    pub vectors: WordVectors<f64>,
    /// Per question, the paragraphs (`doc_id`, index) that are distractors.
    pub distractors: Vec<Vec<(String, usize)>>,
}

pub const DOCUMENTS_FILE: &str = "documents.jsonl";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";
pub const VECTORS_FILE: &str = "vectors.txt";

impl SyntheticCorpus {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_jsonl(&dir.join(DOCUMENTS_FILE), &self.documents)?;
        write_jsonl(&dir.join(TRAIN_FILE), &self.train)?;
        write_jsonl(&dir.join(TEST_FILE), &self.test)?;
        let path = dir.join(VECTORS_FILE);
        std::fs::write(&path, self.vectors.to_text()).map_err(|e| Error::io(&path, e))
    }
}

struct Lexicon {
    /// Per category: (noun, entities, relations).
    categories: Vec<(String, Vec<String>, Vec<String>)>,
    subjects: Vec<String>,
}

fn pseudo_word<R: Rng>(
    rng: &mut R,
    syllables: usize,
    suffix: &str,
    used: &mut HashSet<String>,
) -> String {
    loop {
        let mut w: String = (0..syllables)
            .map(|_| *SYLLABLES.choose(rng).expect("syllables"))
            .collect();
        w.push_str(suffix);
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn build_lexicon<R: Rng>(spec: &SyntheticSpec, rng: &mut R) -> Lexicon {
    let mut used: HashSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    used.extend(["what", "did"].map(String::from));
    used.extend(CATEGORIES.iter().map(|c| c.0.to_string()));
    let per_cat = spec.vocab_size / CATEGORIES.len();
    let categories = CATEGORIES
        .iter()
        .map(|&(noun, suffix)| {
            let entities = (0..per_cat)
                .map(|_| pseudo_word(rng, 2, suffix, &mut used))
                .collect();
            let relations = (0..spec.relations_per_category)
                .map(|_| pseudo_word(rng, 2, "s", &mut used))
                .collect();
            (noun.to_string(), entities, relations)
        })
        .collect();
    let subjects = (0..spec.subjects)
        .map(|_| capitalize(&pseudo_word(rng, 3, "", &mut used)))
        .collect();
    Lexicon {
        categories,
        subjects,
    }
}

fn build_vectors<R: Rng>(lex: &Lexicon, dim: usize, rng: &mut R) -> Result<WordVectors<f64>> {
    let random = |rng: &mut R, scale: f64| -> Vec<f64> {
        (0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    };
    let mut pairs: Vec<(String, Vec<f64>)> = Vec::new();
    let subject_centre = random(rng, 0.3);
    for s in &lex.subjects {
        let noise = random(rng, 0.6);
        pairs.push((
            s.clone(),
            subject_centre
                .iter()
                .zip(&noise)
                .map(|(a, b)| a + b)
                .collect(),
        ));
    }
    for (noun, entities, relations) in &lex.categories {
        let centre = random(rng, 0.6);
        let noun_noise = random(rng, 0.1);
        pairs.push((
            noun.clone(),
            centre.iter().zip(&noun_noise).map(|(a, b)| a + b).collect(),
        ));
        for e in entities {
            let noise = random(rng, 0.25);
            pairs.push((
                e.clone(),
                centre.iter().zip(&noise).map(|(a, b)| a + b).collect(),
            ));
        }
        for r in relations {
            pairs.push((r.clone(), random(rng, 0.8)));
        }
    }
    for w in FILLER.iter().chain(&["what", "did", ".", "?"]) {
        pairs.push((w.to_string(), random(rng, 0.5)));
    }
    WordVectors::from_pairs(dim, pairs)
}

fn fact(subject: &str, relation: &str, entity: &str) -> Vec<String> {
    vec![
        subject.to_string(),
        relation.to_string(),
        entity.to_string(),
        ".".to_string(),
    ]
}

/// Key sentences plus 1 or 2 facts from other categories, padded with filler
/// sentences to a length within `min_paragraph_len..=max_paragraph_len`, in shuffled sentence order.
#[allow(clippy::too_many_arguments)]
fn paragraph<R: Rng>(
    rng: &mut R,
    spec: &SyntheticSpec,
    lex: &Lexicon,
    key: Option<Vec<String>>,
    asked_cat: usize,
    forbidden_subject: &str,
    forbidden_entity: &str,
) -> String {
    let target = rng.gen_range(spec.min_paragraph_len..=spec.max_paragraph_len);
    let mut sentences: Vec<Vec<String>> = key.into_iter().collect();
    for _ in 0..rng.gen_range(1..=2) {
        let cat = loop {
            let c = rng.gen_range(0..lex.categories.len());
            if c != asked_cat {
                break c;
            }
        };
        let (_, entities, relations) = &lex.categories[cat];
        let subject = loop {
            let s = lex.subjects.choose(rng).expect("subjects");
            if s != forbidden_subject {
                break s;
            }
        };
        let entity = loop {
            let e = entities.choose(rng).expect("entities");
            if e != forbidden_entity {
                break e;
            }
        };
        sentences.push(fact(
            subject,
            relations.choose(rng).expect("relations"),
            entity,
        ));
    }
    let mut total: usize = sentences.iter().map(Vec::len).sum();
    while total + 2 <= target {
        let len = rng.gen_range(3..=7).min(target - total);
        let mut s: Vec<String> = (0..len - 1)
            .map(|_| FILLER.choose(rng).expect("filler").to_string())
            .collect();
        s.push(".".into());
        total += s.len();
        sentences.push(s);
    }
    sentences.shuffle(rng);
    sentences.concat().join(" ")
}

/// Deterministic in `spec.seed`.
pub fn generate_corpus(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lex = build_lexicon(spec, &mut rng);
    let vectors = build_vectors(&lex, spec.word_dim, &mut rng)?;

    let total = spec.train_questions + spec.test_questions;
    let mut documents = Vec::new();
    let mut questions = Vec::with_capacity(total);
    let mut distractors = Vec::with_capacity(total);
    let paragraphs_total = spec.documents_per_question * spec.paragraphs_per_document;
    for q in 0..total {
        let cat = rng.gen_range(0..lex.categories.len());
        let (noun, entities, relations) = &lex.categories[cat];
        let subject = lex.subjects.choose(&mut rng).expect("subjects").clone();
        let rel_idx = rng.gen_range(0..relations.len());
        let relation = &relations[rel_idx];
        let answer = entities.choose(&mut rng).expect("entities").clone();
        let answer_slot = rng.gen_range(0..paragraphs_total);

        let mut doc_paragraphs = vec![Vec::new(); spec.documents_per_question];
        let mut q_distractors = Vec::new();
        for slot in 0..paragraphs_total {
            let key = if slot == answer_slot {
                Some(fact(&subject, relation, &answer))
            } else if rng.gen::<f64>() < spec.distractor_rate {
                let other = loop {
                    let s = lex.subjects.choose(&mut rng).expect("subjects");
                    if *s != subject {
                        break s.clone();
                    }
                };
                let other_rel = loop {
                    let r = rng.gen_range(0..relations.len());
                    if r != rel_idx {
                        break &relations[r];
                    }
                };
                let lookalike = loop {
                    let e = entities.choose(&mut rng).expect("entities");
                    if *e != answer {
                        break e.clone();
                    }
                };
                let doc = slot / spec.paragraphs_per_document;
                q_distractors.push((format!("q{q}-d{doc}"), slot % spec.paragraphs_per_document));
                Some(fact(&other, other_rel, &lookalike))
            } else {
                None
            };
            let text = paragraph(&mut rng, spec, &lex, key, cat, &subject, &answer);
            doc_paragraphs[slot / spec.paragraphs_per_document].push(text);
        }
        let doc_ids: Vec<String> = (0..spec.documents_per_question)
            .map(|d| format!("q{q}-d{d}"))
            .collect();
        for (id, paragraphs) in doc_ids.iter().zip(doc_paragraphs) {
            documents.push(DocumentRecord {
                doc_id: id.clone(),
                paragraphs,
            });
        }
        questions.push(QuestionRecord {
            q_id: format!("q{q}"),
            question: format!("what {noun} did {subject} {relation} ?"),
            doc_ids,
            answers: vec![answer],
        });
        distractors.push(q_distractors);
    }
    let test = questions.split_off(spec.train_questions);
    Ok(SyntheticCorpus {
        documents,
        train: questions,
        test,
        vectors,
        distractors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    fn small_spec() -> SyntheticSpec {
        SyntheticSpec {
            train_questions: 20,
            test_questions: 5,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn regeneration_is_identical() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&small_spec()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.vectors.to_text(), b.vectors.to_text());
    }

    #[test]
    fn answer_occurs_in_exactly_one_paragraph() {
        let spec = small_spec();
        let c = generate_corpus(&spec).unwrap();
        for q in c.train.iter().chain(&c.test) {
            let answer = &q.answers[0];
            let hits: usize = c
                .documents
                .iter()
                .filter(|d| q.doc_ids.contains(&d.doc_id))
                .flat_map(|d| &d.paragraphs)
                .map(|p| tokenize(p).tokens.iter().filter(|t| *t == answer).count())
                .sum();
            assert_eq!(hits, 1, "{}", q.q_id);
        }
    }

    #[test]
    fn lengths_and_vocabulary_are_covered() {
        let spec = small_spec();
        let c = generate_corpus(&spec).unwrap();
        for d in &c.documents {
            assert_eq!(d.paragraphs.len(), spec.paragraphs_per_document);
            for p in &d.paragraphs {
                let t = tokenize(p);
                assert!(
                    t.len() + 1 >= spec.min_paragraph_len && t.len() <= spec.max_paragraph_len,
                    "{}",
                    t.len()
                );
                assert!(
                    t.tokens.iter().all(|w| c.vectors.lookup(w).is_some()),
                    "{p}"
                );
            }
        }
    }

    #[test]
    fn zero_rate_has_no_lookalikes() {
        let spec = SyntheticSpec {
            distractor_rate: 0.0,
            ..small_spec()
        };
        let c = generate_corpus(&spec).unwrap();
        assert!(c.distractors.iter().all(Vec::is_empty));
        // The only entity of the asked category in the question's documents is the answer.
        let suffix_of = |noun: &str| CATEGORIES.iter().find(|c| c.0 == noun).unwrap().1;
        for q in &c.train {
            let noun = q.question.split_whitespace().nth(1).unwrap();
            let suffix = suffix_of(noun);
            for d in c.documents.iter().filter(|d| q.doc_ids.contains(&d.doc_id)) {
                for p in &d.paragraphs {
                    for w in p.split_whitespace() {
                        if w.ends_with(suffix)
                            && w.chars().next().unwrap().is_lowercase()
                            && w != noun
                        {
                            assert_eq!(w, q.answers[0]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SyntheticSpec::default().validate().is_ok());
        let bad = SyntheticSpec {
            distractor_rate: 1.5,
            ..SyntheticSpec::default()
        };
        assert!(bad.validate().is_err());
    }
}
