//! Seeded synthetic corpora for the desk-scale experiments.
//!
//! The synonym task: every passage belongs to one category and mentions a
//! small set of that category's concept terms, a two-word answer, filler and
//! cue words. Each concept is tied to a cue word from a small shared pool, so
//! a cue says little on its own. Questions name the concepts through a
//! synonym lexicon, name the category through its synonym and carry two of
//! the passage's cues.
//!
//! The planted-answer task: each question has one positive passage that
//! repeats several question words and contains a two-word name, and several
//! negatives that share at most one question word.

use std::collections::BTreeSet;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::qa_dataset::QAPair;

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";
const QUESTION_WORDS: [&str; 4] = ["which", "what", "who", "where"];

/// Draws distinct pronounceable words; every word from one generator is
/// unique, so vocabularies drawn from it never overlap.
struct WordGen {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl WordGen {
    fn new(seed: u64) -> Self {
        let mut used = BTreeSet::new();
        used.extend(QUESTION_WORDS.iter().map(|w| w.to_string()));
        used.extend(["a", "an", "the"].map(String::from));
        WordGen { rng: ChaCha8Rng::seed_from_u64(seed), used }
    }

    fn word(&mut self) -> String {
        loop {
            let syllables = self.rng.random_range(2..=3);
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char);
                w.push(VOWELS[self.rng.random_range(0..VOWELS.len())] as char);
            }
            if self.rng.random_bool(0.5) {
                w.push(CONSONANTS[self.rng.random_range(0..CONSONANTS.len())] as char);
            }
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn words(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.word()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynonymTaskConfig {
    pub passages: usize,
    pub categories: usize,
    pub concepts_per_category: usize,
    pub concepts_per_passage: usize,
    pub filler_vocab: usize,
    /// Tokens per passage; fillers pad every passage to this length.
    pub passage_len: usize,
    /// Size of the shared cue-word pool; every concept is tied to one cue.
    pub cue_vocab: usize,
    /// Extra random cue words per passage on top of its concepts' cues.
    pub cue_noise: usize,
    /// Cue words of the passage's own concepts included in its question.
    pub cues_per_question: usize,
    /// Answers are distinct two-word names over this many first and last
    /// names.
    pub names: usize,
    /// Questions generated for each training passage; held-out passages get
    /// exactly one.
    pub questions_per_passage: usize,
    pub test_questions: usize,
    /// Probability that a passage's answer is also planted in one other
    /// passage.
    pub mention_rate: f64,
    pub seed: u64,
}

impl Default for SynonymTaskConfig {
    fn default() -> Self {
        SynonymTaskConfig {
            passages: 2000,
            categories: 20,
            concepts_per_category: 12,
            concepts_per_passage: 3,
            filler_vocab: 60,
            passage_len: 18,
            cue_vocab: 40,
            cue_noise: 4,
            cues_per_question: 2,
            names: 60,
            questions_per_passage: 2,
            test_questions: 400,
            mention_rate: 0.3,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQa {
    pub documents: Vec<Document>,
    pub train: Vec<QAPair>,
    pub test: Vec<QAPair>,
}

fn n_choose_k(n: usize, k: usize) -> usize {
    (0..k).fold(1usize, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

pub fn synonym_task(cfg: &SynonymTaskConfig) -> Result<SyntheticQa> {
    if cfg.categories == 0 || cfg.passages < cfg.categories {
        return Err(Error::invalid("need at least one passage per category"));
    }
    if cfg.concepts_per_passage == 0 || cfg.concepts_per_passage > cfg.concepts_per_category {
        return Err(Error::invalid("concepts_per_passage must be in 1..=concepts_per_category"));
    }
    let per_category = cfg.passages.div_ceil(cfg.categories);
    if n_choose_k(cfg.concepts_per_category, cfg.concepts_per_passage) < per_category {
        return Err(Error::invalid("too few concept combinations for the passages per category"));
    }
    if cfg.filler_vocab == 0 || cfg.passage_len < 2 * cfg.concepts_per_passage + cfg.cue_noise + 5 {
        return Err(Error::invalid("passage_len must leave room for two fillers"));
    }
    if cfg.cue_vocab == 0 {
        return Err(Error::invalid("cue_vocab must be positive"));
    }
    if cfg.names * cfg.names < cfg.passages {
        return Err(Error::invalid("too few names for distinct answers"));
    }
    if cfg.questions_per_passage == 0 {
        return Err(Error::invalid("questions_per_passage must be at least 1"));
    }
    if cfg.test_questions >= cfg.passages {
        return Err(Error::invalid("test_questions must leave some passages for training"));
    }
    if !(0.0..=1.0).contains(&cfg.mention_rate) {
        return Err(Error::invalid("mention_rate must be in [0, 1]"));
    }

    let mut words = WordGen::new(cfg.seed);
    let category_words = words.words(cfg.categories);
    let category_synonyms = words.words(cfg.categories);
    let terms: Vec<Vec<String>> = (0..cfg.categories).map(|_| words.words(cfg.concepts_per_category)).collect();
    let synonyms: Vec<Vec<String>> = (0..cfg.categories).map(|_| words.words(cfg.concepts_per_category)).collect();
    let cues = words.words(cfg.cue_vocab);
    let fillers = words.words(cfg.filler_vocab);
    let first = words.words(cfg.names);
    let last = words.words(cfg.names);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5359_4e54);
    let cue_of: Vec<Vec<usize>> = (0..cfg.categories)
        .map(|_| (0..cfg.concepts_per_category).map(|_| rng.random_range(0..cfg.cue_vocab)).collect())
        .collect();
    let answers: Vec<String> = sample(&mut rng, cfg.names * cfg.names, cfg.passages)
        .into_iter()
        .map(|i| format!("{} {}", first[i / cfg.names], last[i % cfg.names]))
        .collect();
    let mut bodies: Vec<Vec<String>> = Vec::with_capacity(cfg.passages);
    let mut concepts_of: Vec<(usize, Vec<usize>)> = Vec::with_capacity(cfg.passages);
    let mut seen: BTreeSet<(usize, Vec<usize>)> = BTreeSet::new();
    for i in 0..cfg.passages {
        let cat = i % cfg.categories;
        let combo = loop {
            let mut c = sample(&mut rng, cfg.concepts_per_category, cfg.concepts_per_passage).into_vec();
            c.sort_unstable();
            if seen.insert((cat, c.clone())) {
                break c;
            }
        };
        let mut body = vec![category_words[cat].clone(), answers[i].clone()];
        body.extend(combo.iter().map(|&c| terms[cat][c].clone()));
        body.extend(combo.iter().map(|&c| cues[cue_of[cat][c]].clone()));
        body.extend((0..cfg.cue_noise).map(|_| cues[rng.random_range(0..cues.len())].clone()));
        // Answers are two tokens; the rest are single-token entries.
        while body.len() + 1 < cfg.passage_len {
            body.push(fillers[rng.random_range(0..fillers.len())].clone());
        }
        bodies.push(body);
        concepts_of.push((cat, combo));
    }
    let mut mentioned = vec![false; cfg.passages];
    for i in 0..cfg.passages {
        if rng.random_bool(cfg.mention_rate) {
            let mut other = rng.random_range(0..cfg.passages - 1);
            if other >= i {
                other += 1;
            }
            if std::mem::replace(&mut mentioned[other], true) {
                continue;
            }
            // The two-word answer takes the place of two fillers so the
            // token count is unchanged.
            let body = &mut bodies[other];
            body.truncate(body.len() - 2);
            body.push(answers[i].clone());
        }
    }
    for body in &mut bodies {
        body.shuffle(&mut rng);
    }
    let documents: Vec<Document> = bodies
        .iter()
        .enumerate()
        .map(|(i, b)| Document {
            doc_id: format!("syn-{i:05}"),
            title: String::new(),
            body: b.join(" "),
        })
        .collect();

    let ask = |rng: &mut ChaCha8Rng, i: usize| {
        let (cat, combo) = &concepts_of[i];
        let mut q: Vec<String> = combo.iter().map(|&c| synonyms[*cat][c].clone()).collect();
        q.shuffle(rng);
        let lead = QUESTION_WORDS[rng.random_range(0..QUESTION_WORDS.len())];
        let cue: Vec<&str> = sample(rng, combo.len(), cfg.cues_per_question.min(combo.len()))
            .into_iter()
            .map(|j| cues[cue_of[*cat][combo[j]]].as_str())
            .collect();
        let category = &category_synonyms[*cat];
        QAPair {
            question: format!("{lead} {category} {} {}", q.join(" "), cue.join(" ")),
            answers: vec![answers[i].clone()],
            gold_context: Some(documents[i].body.clone()),
        }
    };
    let mut order: Vec<usize> = (0..cfg.passages).collect();
    order.shuffle(&mut rng);
    let test: Vec<QAPair> = order[..cfg.test_questions].iter().map(|&i| ask(&mut rng, i)).collect();
    let mut train: Vec<QAPair> = order[cfg.test_questions..]
        .iter()
        .flat_map(|&i| std::iter::repeat_n(i, cfg.questions_per_passage))
        .collect::<Vec<_>>()
        .into_iter()
        .map(|i| ask(&mut rng, i))
        .collect();
    train.shuffle(&mut rng);
    Ok(SyntheticQa { documents, train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedTaskConfig {
    pub train_questions: usize,
    pub test_questions: usize,
    /// Candidate passages per question, the positive included.
    pub candidates: usize,
    pub names: usize,
    pub topic_vocab: usize,
    pub filler_vocab: usize,
    pub seed: u64,
}

impl Default for PlantedTaskConfig {
    fn default() -> Self {
        PlantedTaskConfig {
            train_questions: 400,
            test_questions: 200,
            candidates: 8,
            names: 60,
            topic_vocab: 300,
            filler_vocab: 200,
            seed: 11,
        }
    }
}

/// Documents plus, per question, the ids of its candidate documents in a
/// shuffled order (positions index into `documents`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTask {
    pub documents: Vec<Document>,
    pub train: Vec<(QAPair, Vec<usize>)>,
    pub test: Vec<(QAPair, Vec<usize>)>,
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

pub fn planted_answer_task(cfg: &PlantedTaskConfig) -> Result<PlantedTask> {
    if cfg.candidates < 2 || cfg.names < 2 || cfg.topic_vocab < 8 || cfg.filler_vocab == 0 {
        return Err(Error::invalid("planted task needs ≥2 candidates, ≥2 names, ≥8 topic words"));
    }
    let mut words = WordGen::new(cfg.seed);
    let first = words.words(cfg.names);
    let last = words.words(cfg.names);
    let topics = words.words(cfg.topic_vocab);
    let fillers = words.words(cfg.filler_vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x504c_414e);

    let mut documents = Vec::new();
    let mut make_doc = |rng: &mut ChaCha8Rng, shared: &[String], name: &(String, String)| -> usize {
        let mut body: Vec<String> = shared.to_vec();
        let n_topic = rng.random_range(2..=4);
        body.extend((0..n_topic).map(|_| topics[rng.random_range(0..topics.len())].clone()));
        let n_fill = rng.random_range(8..=14);
        body.extend((0..n_fill).map(|_| fillers[rng.random_range(0..fillers.len())].clone()));
        body.shuffle(rng);
        let at = rng.random_range(0..=body.len());
        body.insert(at, format!("{} {}", capitalize(&name.0), capitalize(&name.1)));
        let id = documents.len();
        documents.push(Document {
            doc_id: format!("pl-{id:05}"),
            title: String::new(),
            body: body.join(" "),
        });
        id
    };

    let mut questions = Vec::new();
    for _ in 0..cfg.train_questions + cfg.test_questions {
        let q_topics: Vec<String> = sample(&mut rng, topics.len(), 4)
            .into_iter()
            .map(|i| topics[i].clone())
            .collect();
        let draw_name = |rng: &mut ChaCha8Rng| {
            (
                first[rng.random_range(0..first.len())].clone(),
                last[rng.random_range(0..last.len())].clone(),
            )
        };
        let answer = draw_name(&mut rng);
        let mut cands = vec![make_doc(&mut rng, &q_topics[..3], &answer)];
        for _ in 1..cfg.candidates {
            let mut other = draw_name(&mut rng);
            while other == answer {
                other = draw_name(&mut rng);
            }
            let shared = if rng.random_bool(0.5) { &q_topics[3..4] } else { &q_topics[..0] };
            cands.push(make_doc(&mut rng, shared, &other));
        }
        cands.shuffle(&mut rng);
        let pair = QAPair {
            question: format!("who is linked to {}", q_topics.join(" ")),
            answers: vec![format!("{} {}", capitalize(&answer.0), capitalize(&answer.1))],
            gold_context: None,
        };
        questions.push((pair, cands));
    }
    let test = questions.split_off(cfg.train_questions);
    Ok(PlantedTask { documents, train: questions, test })
}
