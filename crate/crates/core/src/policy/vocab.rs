//! Whole-word token vocabulary shared by every model in a run.
//!
//! Index 0/1/2 are always `<pad>`/`<bos>`/`<eos>`. Text encodes by
//! whitespace splitting; plans encode action-by-action with no separators
//! since verb arity makes the stream self-delimiting.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{PolicyError, PolicyResult};

/// Index into a [`Vocabulary`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TokenId(pub u32);

impl TokenId {
    pub fn idx(self) -> usize {
        self.0 as usize
    }
}

pub const PAD: TokenId = TokenId(0);
pub const BOS: TokenId = TokenId(1);
pub const EOS: TokenId = TokenId(2);

/// Bijective token/index mapping. `<pad>`, `<bos>`, `<eos>` occupy the first
/// three slots; at least one real token must follow.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, TokenId>,
}

impl Vocabulary {
    pub const SPECIALS: [&'static str; 3] = ["<pad>", "<bos>", "<eos>"];

    /// Build from the non-special tokens, in the given order. Duplicates are
    /// rejected.
    pub fn new(words: impl IntoIterator<Item = String>) -> PolicyResult<Vocabulary> {
        let mut tokens: Vec<String> = Self::SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.extend(words);
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), TokenId(i as u32)).is_some() {
                return Err(PolicyError::DuplicateToken(t.clone()));
            }
        }
        if tokens.len() < 4 {
            return Err(PolicyError::VocabTooSmall(tokens.len()));
        }
        Ok(Vocabulary { tokens, index })
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn token(&self, id: TokenId) -> PolicyResult<&str> {
        self.tokens
            .get(id.idx())
            .map(String::as_str)
            .ok_or_else(|| PolicyError::UnknownToken(format!("<id {}>", id.0)))
    }

    pub fn id(&self, token: &str) -> PolicyResult<TokenId> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| PolicyError::UnknownToken(token.to_string()))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Encode whitespace-separated text, without specials.
    pub fn encode(&self, text: &str) -> PolicyResult<Vec<TokenId>> {
        text.split_whitespace().map(|w| self.id(w)).collect()
    }

    /// Encode a prompt: `<bos>` followed by the text tokens.
    pub fn encode_prompt(&self, text: &str) -> PolicyResult<Vec<TokenId>> {
        let mut ids = vec![BOS];
        ids.extend(self.encode(text)?);
        Ok(ids)
    }

    /// Encode a plan given as canonical action strings, terminated by
    /// `<eos>`.
    pub fn encode_plan(&self, actions: &[String]) -> PolicyResult<Vec<TokenId>> {
        let mut ids = Vec::new();
        for a in actions {
            ids.extend(self.encode(a)?);
        }
        ids.push(EOS);
        Ok(ids)
    }

    /// Decode ids back to a space-joined string, skipping specials.
    pub fn decode(&self, ids: &[TokenId]) -> PolicyResult<String> {
        let mut words = Vec::new();
        for &id in ids {
            let t = self.token(id)?;
            if !Self::SPECIALS.contains(&t) {
                words.push(t);
            }
        }
        Ok(words.join(" "))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// SHA-256 over the newline-joined token list; checkpoints embed this so
    /// weights can never silently load against the wrong vocabulary.
    pub fn sha256(&self) -> String {
        let mut hasher = Sha256::new();
        for t in &self.tokens {
            hasher.update(t.as_bytes());
            hasher.update(b"\n");
        }
        hex(&hasher.finalize())
    }

    /// Rename tokens in place via a substitution table, preserving indices.
    /// Each renamed token inherits its source row in every model that uses
    /// the vocabulary, which is exactly the embedding-transplant rule the
    /// transfer evaluation relies on.
    pub fn substitute(&self, renames: &BTreeMap<String, String>) -> PolicyResult<Vocabulary> {
        let words = self.tokens[3..]
            .iter()
            .map(|t| renames.get(t).unwrap_or(t).clone())
            .collect::<Vec<_>>();
        Vocabulary::new(words)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
