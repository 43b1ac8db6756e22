//! Document ingestion: tokenization, fixed-length chunking and the on-disk
//! passage store.

use std::collections::{BTreeSet, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ranking::PassageId;

pub const DEFAULT_CHUNK_SIZE: usize = 100;
pub const PASSAGES_FILE: &str = "passages.jsonl";
pub const STORE_META_FILE: &str = "store_meta.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRule {
    /// Maximal runs of Unicode alphanumeric characters.
    #[default]
    UnicodeAlphanumeric,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    #[serde(default)]
    pub split_rule: SplitRule,
    #[serde(default)]
    pub stopwords: BTreeSet<String>,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            lowercase: true,
            split_rule: SplitRule::UnicodeAlphanumeric,
            stopwords: BTreeSet::new(),
        }
    }
}

/// A token together with its byte span in the source string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpannedToken {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

pub fn tokenize_with_offsets(config: &TokenizerConfig, text: &str) -> Vec<SpannedToken> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let emit = |s: usize, e: usize, out: &mut Vec<SpannedToken>| {
        let raw = &text[s..e];
        let tok = if config.lowercase {
            raw.to_lowercase()
        } else {
            raw.to_string()
        };
        if !tok.is_empty() && !config.stopwords.contains(&tok) {
            out.push(SpannedToken {
                text: tok,
                start: s,
                end: e,
            });
        }
    };
    for (i, ch) in text.char_indices() {
        match (ch.is_alphanumeric(), start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                emit(s, i, &mut out);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        emit(s, text.len(), &mut out);
    }
    out
}

pub fn tokenize(config: &TokenizerConfig, text: &str) -> Vec<String> {
    tokenize_with_offsets(config, text)
        .into_iter()
        .map(|t| t.text)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub title: String,
    #[serde(rename = "text")]
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Passage {
    pub passage_id: PassageId,
    pub doc_id: String,
    pub title: String,
    pub title_tokens: Vec<String>,
    pub body_tokens: Vec<String>,
    /// Source text from the first to the last body token of this chunk.
    pub body_text: String,
    pub ordinal: usize,
}

impl Passage {
    /// Title tokens followed by body tokens: the stream the sparse index
    /// sees. Dense encoders insert a separator id between the two parts.
    pub fn indexed_tokens(&self) -> impl Iterator<Item = &str> {
        self.title_tokens
            .iter()
            .chain(self.body_tokens.iter())
            .map(String::as_str)
    }

    pub fn indexed_len(&self) -> usize {
        self.title_tokens.len() + self.body_tokens.len()
    }
}

/// Splits a document into disjoint chunks of at most `chunk_size` tokens.
/// Passage ids are assigned from `first_pid` upward.
pub fn chunk_document(
    doc: &Document,
    chunk_size: usize,
    config: &TokenizerConfig,
    first_pid: PassageId,
) -> Result<Vec<Passage>> {
    if chunk_size == 0 {
        return Err(Error::invalid("chunk_size must be at least 1"));
    }
    let title_tokens = tokenize(config, &doc.title);
    let tokens = tokenize_with_offsets(config, &doc.body);
    Ok(tokens
        .chunks(chunk_size)
        .enumerate()
        .map(|(ordinal, chunk)| {
            let start = chunk[0].start;
            let end = chunk[chunk.len() - 1].end;
            Passage {
                passage_id: first_pid + ordinal as PassageId,
                doc_id: doc.doc_id.clone(),
                title: doc.title.clone(),
                title_tokens: title_tokens.clone(),
                body_tokens: chunk.iter().map(|t| t.text.clone()).collect(),
                body_text: doc.body[start..end].to_string(),
                ordinal,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreMeta {
    pub chunk_size: usize,
    pub tokenizer: TokenizerConfig,
    pub passage_count: u64,
}

#[derive(Serialize, Deserialize)]
struct PassageRecord {
    pid: PassageId,
    doc: String,
    title: String,
    text: String,
    ord: usize,
}

/// Immutable, id-ordered collection of passages.
#[derive(Debug, Clone, PartialEq)]
pub struct PassageStore {
    passages: Vec<Passage>,
    chunk_size: usize,
    tokenizer: TokenizerConfig,
}

impl PassageStore {
    /// Chunks documents in order. Duplicate ids are rejected.
    pub fn from_documents(
        docs: &[Document],
        chunk_size: usize,
        tokenizer: TokenizerConfig,
    ) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::invalid("chunk_size must be at least 1"));
        }
        let mut seen = HashSet::new();
        for d in docs {
            if d.doc_id.is_empty() {
                return Err(Error::invalid("document id must be non-empty"));
            }
            if !seen.insert(d.doc_id.as_str()) {
                return Err(Error::DuplicateDocId(d.doc_id.clone()));
            }
        }
        // Chunk in parallel with placeholder ids, then renumber in doc order.
        let chunked: Vec<Vec<Passage>> = docs
            .par_iter()
            .map(|d| chunk_document(d, chunk_size, &tokenizer, 0))
            .collect::<Result<_>>()?;
        let mut passages = Vec::new();
        for mut group in chunked {
            for p in group.iter_mut() {
                p.passage_id = passages.len() as PassageId + p.ordinal as PassageId;
            }
            passages.extend(group);
        }
        Ok(PassageStore {
            passages,
            chunk_size,
            tokenizer,
        })
    }

    pub fn len(&self) -> usize {
        self.passages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passages.is_empty()
    }

    pub fn get(&self, pid: PassageId) -> Option<&Passage> {
        self.passages.get(usize::try_from(pid).ok()?)
    }

    pub fn passage(&self, pid: PassageId) -> Result<&Passage> {
        self.get(pid)
            .ok_or_else(|| Error::invalid(format!("passage id {pid} out of range")))
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Passage> {
        self.passages.iter()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }

    pub fn chunk_size(&self) -> usize {
        self.chunk_size
    }

    pub fn tokenizer(&self) -> &TokenizerConfig {
        &self.tokenizer
    }

    pub fn meta(&self) -> StoreMeta {
        StoreMeta {
            chunk_size: self.chunk_size,
            tokenizer: self.tokenizer.clone(),
            passage_count: self.passages.len() as u64,
        }
    }

    /// Writes `passages.jsonl` and `store_meta.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(PASSAGES_FILE);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        for p in &self.passages {
            let rec = PassageRecord {
                pid: p.passage_id,
                doc: p.doc_id.clone(),
                title: p.title.clone(),
                text: p.body_text.clone(),
                ord: p.ordinal,
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Json {
                context: "passage record".into(),
                source: e,
            })?;
            writeln!(out, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        out.flush().map_err(|e| Error::io(&path, e))?;
        write_json(&dir.join(STORE_META_FILE), &self.meta())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: StoreMeta = read_json(&dir.join(STORE_META_FILE))?;
        let path = dir.join(PASSAGES_FILE);
        let mut passages = Vec::new();
        for (lineno, line) in read_lines(&path)? {
            let rec: PassageRecord = serde_json::from_str(&line).map_err(|e| Error::JsonLine {
                path: path.clone(),
                line: lineno,
                message: e.to_string(),
            })?;
            if rec.pid != passages.len() as PassageId {
                return Err(Error::Format(format!(
                    "{}:{lineno}: expected pid {}, found {}",
                    path.display(),
                    passages.len(),
                    rec.pid
                )));
            }
            let body_tokens = tokenize(&meta.tokenizer, &rec.text);
            if body_tokens.is_empty() || body_tokens.len() > meta.chunk_size {
                return Err(Error::Format(format!(
                    "{}:{lineno}: passage has {} tokens (chunk size {})",
                    path.display(),
                    body_tokens.len(),
                    meta.chunk_size
                )));
            }
            passages.push(Passage {
                passage_id: rec.pid,
                title_tokens: tokenize(&meta.tokenizer, &rec.title),
                doc_id: rec.doc,
                title: rec.title,
                body_tokens,
                body_text: rec.text,
                ordinal: rec.ord,
            });
        }
        if passages.len() as u64 != meta.passage_count {
            return Err(Error::Format(format!(
                "store metadata records {} passages, file has {}",
                meta.passage_count,
                passages.len()
            )));
        }
        Ok(PassageStore {
            passages,
            chunk_size: meta.chunk_size,
            tokenizer: meta.tokenizer,
        })
    }
}

/// Reads JSONL documents; malformed lines are reported with their 1-based
/// line number. Blank lines are skipped.
pub fn read_documents(path: &Path) -> Result<Vec<Document>> {
    read_jsonl(path)
}

/// Reads a JSONL corpus and chunks it into a passage store.
pub fn ingest_corpus(
    path: &Path,
    chunk_size: usize,
    tokenizer: TokenizerConfig,
) -> Result<PassageStore> {
    let docs = read_documents(path)?;
    PassageStore::from_documents(&docs, chunk_size, tokenizer)
}

pub(crate) fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_lines(path)?
        .into_iter()
        .map(|(lineno, line)| {
            serde_json::from_str(&line).map_err(|e| Error::JsonLine {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}
