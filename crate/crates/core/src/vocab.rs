use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{read_json, write_json, Passage};
use crate::error::Result;

pub type TokenId = u32;

pub const UNK_ID: TokenId = 0;
/// Separator placed between title and body tokens when encoding a passage.
pub const SEP_ID: TokenId = 1;
const RESERVED: [&str; 2] = ["[UNK]", "[SEP]"];

/// Token-string to id mapping. Ids after the reserved ones follow sorted
/// token order, so the same token set always yields the same ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocab {
    pub fn from_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let set: BTreeSet<&str> = tokens
            .into_iter()
            .filter(|t| !RESERVED.contains(t))
            .collect();
        let all: Vec<String> = RESERVED
            .iter()
            .copied()
            .chain(set)
            .map(str::to_string)
            .collect();
        Self::from_list(all)
    }

    /// Builds a vocabulary over every passage token plus any extra texts
    /// (typically training questions).
    pub fn build<'a>(
        passages: &'a [Passage],
        extra: impl IntoIterator<Item = &'a [String]>,
    ) -> Self {
        let passage_tokens = passages.iter().flat_map(|p| p.indexed_tokens());
        let extra_tokens = extra.into_iter().flatten().map(String::as_str);
        Self::from_tokens(passage_tokens.chain(extra_tokens))
    }

    fn from_list(tokens: Vec<String>) -> Self {
        let ids = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as TokenId))
            .collect();
        Vocab { tokens, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Title ids, separator, body ids.
    pub fn encode_passage(&self, p: &Passage) -> Vec<TokenId> {
        let mut ids = self.encode(&p.title_tokens);
        ids.push(SEP_ID);
        ids.extend(p.body_tokens.iter().map(|t| self.id(t)));
        ids
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(
            path,
            &VocabFile {
                tokens: self.tokens.clone(),
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: VocabFile = read_json(path)?;
        Ok(Self::from_list(file.tokens))
    }
}
