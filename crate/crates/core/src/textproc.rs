//! Tokenization, vocabulary construction and fixed-length integer encoding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

pub const DEFAULT_MAX_LEN: usize = 64;
pub const DEFAULT_MIN_COUNT: usize = 2;

const PUNCTUATION: [char; 6] = ['.', ',', '!', '?', ';', ':'];

/// Lowercases `text`, splits on whitespace and breaks each of `.,!?;:` out into
/// its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for word in text.split_whitespace() {
        let mut current = String::new();
        for ch in word.chars().flat_map(char::to_lowercase) {
            if PUNCTUATION.contains(&ch) {
                if !current.is_empty() {
                    tokens.push(std::mem::take(&mut current));
                }
                tokens.push(ch.to_string());
            } else {
                current.push(ch);
            }
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, usize>,
    tokens: Vec<String>,
    min_count: usize,
}

impl Vocab {
    fn from_ordered(words: Vec<String>, min_count: usize) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(Error::data(format!("invalid vocabulary token {tok:?}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::data(format!("duplicate vocabulary token {tok:?}")));
            }
        }
        Ok(Vocab {
            index,
            tokens,
            min_count,
        })
    }

    /// Rebuilds a vocabulary from its non-special tokens in id order (id = position + 2).
    pub fn from_tokens(words: Vec<String>) -> Result<Self> {
        Self::from_ordered(words, 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    /// Always false: PAD and UNK are present in every vocabulary.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id of `token`, or UNK. The literal PAD token maps to UNK so that text
    /// can never inject padding.
    pub fn id(&self, token: &str) -> usize {
        match self.index.get(token) {
            Some(&id) if id != PAD => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    /// Tokens other than PAD/UNK, in id order.
    pub fn words(&self) -> &[String] {
        &self.tokens[2..]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for w in self.words() {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

/// Keeps tokens seen at least `min_count` times; ids follow descending
/// frequency with ties broken lexicographically.
pub fn build_vocab<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocab> {
    if min_count == 0 {
        return Err(Error::arg("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for tok in doc {
            let tok = tok.as_ref();
            if tok == PAD_TOKEN || tok == UNK_TOKEN {
                continue;
            }
            *counts.entry(tok).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count).collect();
    kept.sort_unstable_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocab::from_ordered(kept.into_iter().map(|(t, _)| t.to_string()).collect(), min_count)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedText {
    pub ids: Vec<usize>,
    /// Token count before truncation.
    pub original_length: usize,
}

impl EncodedText {
    /// Ids at non-PAD positions, in order.
    pub fn content(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().copied().filter(|&id| id != PAD)
    }

    pub fn content_len(&self) -> usize {
        self.content().count()
    }
}

pub fn encode<S: AsRef<str>>(tokens: &[S], vocab: &Vocab, max_len: usize) -> Result<EncodedText> {
    if max_len == 0 {
        return Err(Error::arg("max_len must be at least 1"));
    }
    let mut ids: Vec<usize> = tokens.iter().take(max_len).map(|t| vocab.id(t.as_ref())).collect();
    ids.resize(max_len, PAD);
    Ok(EncodedText {
        ids,
        original_length: tokens.len(),
    })
}

/// Tokenizes and encodes in one step.
pub fn encode_text(text: &str, vocab: &Vocab, max_len: usize) -> Result<EncodedText> {
    encode(&tokenize(text), vocab, max_len)
}
