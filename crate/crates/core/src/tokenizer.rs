//! Pluggable tokenizers.
//!
//! Every pipeline stage works on token ids and only needs a [`TokenizerSpec`]
//! (vocabulary size, EOS id, think-wrapper ids) plus encode/decode. Two
//! built-ins ship: a byte-level tokenizer and a whitespace tokenizer used for
//! small hand-countable fixtures.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type TokenId = u32;

pub const THINK_OPEN: &str = "<think>";
pub const THINK_CLOSE: &str = "</think>";

#[derive(Debug, Error, PartialEq)]
pub enum TokenizerError {
    #[error("token id {0} is outside the vocabulary")]
    OutOfVocab(TokenId),
    #[error("token id {0} is a special token and has no text form")]
    Special(TokenId),
    #[error("decoded bytes are not valid UTF-8 (valid up to byte {valid_up_to})")]
    InvalidUtf8 { valid_up_to: usize },
}

/// Static description of a tokenizer shared by every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenizerSpec {
    pub name: String,
    pub vocab_size: u32,
    pub eos_id: TokenId,
    pub think_open_ids: Vec<TokenId>,
    pub think_close_ids: Vec<TokenId>,
}

impl TokenizerSpec {
    pub fn wrapper_len(&self) -> usize {
        self.think_open_ids.len() + self.think_close_ids.len()
    }
}

/// How the `<think>` / `</think>` wrappers are turned into tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WrapperMode {
    /// Tokenize the literal strings like any other text.
    #[default]
    PlainText,
    /// Reserve one dedicated id per wrapper.
    Special,
}

pub trait Tokenize: Send + Sync {
    fn spec(&self) -> &TokenizerSpec;
    fn encode(&self, text: &str) -> Vec<TokenId>;
    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizerError>;
}

/// UTF-8 bytes as tokens. Ids 0..256 are bytes, 256 is EOS, 257/258 are
/// reserved for the special-mode think wrappers.
#[derive(Debug, Clone)]
pub struct ByteTokenizer {
    spec: TokenizerSpec,
}

const BYTE_EOS: TokenId = 256;
const BYTE_THINK_OPEN: TokenId = 257;
const BYTE_THINK_CLOSE: TokenId = 258;

impl ByteTokenizer {
    pub fn new(mode: WrapperMode) -> Self {
        let (open, close) = match mode {
            WrapperMode::PlainText => (
                THINK_OPEN.bytes().map(TokenId::from).collect(),
                THINK_CLOSE.bytes().map(TokenId::from).collect(),
            ),
            WrapperMode::Special => (vec![BYTE_THINK_OPEN], vec![BYTE_THINK_CLOSE]),
        };
        Self {
            spec: TokenizerSpec {
                name: match mode {
                    WrapperMode::PlainText => "byte".into(),
                    WrapperMode::Special => "byte+special-think".into(),
                },
                vocab_size: 259,
                eos_id: BYTE_EOS,
                think_open_ids: open,
                think_close_ids: close,
            },
        }
    }
}

impl Tokenize for ByteTokenizer {
    fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        text.bytes().map(TokenId::from).collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizerError> {
        let mut bytes = Vec::with_capacity(tokens.len());
        for &t in tokens {
            match t {
                0..=255 => bytes.push(t as u8),
                BYTE_THINK_OPEN => bytes.extend_from_slice(THINK_OPEN.as_bytes()),
                BYTE_THINK_CLOSE => bytes.extend_from_slice(THINK_CLOSE.as_bytes()),
                BYTE_EOS => return Err(TokenizerError::Special(t)),
                _ => return Err(TokenizerError::OutOfVocab(t)),
            }
        }
        String::from_utf8(bytes).map_err(|e| TokenizerError::InvalidUtf8 {
            valid_up_to: e.utf8_error().valid_up_to(),
        })
    }
}

/// Word-level tokenizer over a closed vocabulary. Unknown words map to
/// `<unk>`, which decodes to the literal `<unk>` and re-encodes to itself.
#[derive(Debug, Clone)]
pub struct WhitespaceTokenizer {
    spec: TokenizerSpec,
    words: Vec<String>,
    index: HashMap<String, TokenId>,
}

pub const WS_EOS: &str = "<eos>";
pub const WS_UNK: &str = "<unk>";
const WS_RESERVED: [&str; 4] = [WS_EOS, WS_UNK, THINK_OPEN, THINK_CLOSE];

impl WhitespaceTokenizer {
    /// Builds the vocabulary from `words` in first-appearance order, after the
    /// four reserved entries.
    pub fn new<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut list: Vec<String> = WS_RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = list
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        for w in words {
            let w = w.as_ref();
            if !index.contains_key(w) {
                index.insert(w.to_string(), list.len() as TokenId);
                list.push(w.to_string());
            }
        }
        let open = index[THINK_OPEN];
        let close = index[THINK_CLOSE];
        Self {
            spec: TokenizerSpec {
                name: "whitespace".into(),
                vocab_size: list.len() as u32,
                eos_id: index[WS_EOS],
                think_open_ids: vec![open],
                think_close_ids: vec![close],
            },
            words: list,
            index,
        }
    }

    /// Vocabulary covering every whitespace-separated word of `texts`.
    pub fn from_texts<'a, I>(texts: I) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        Self::new(texts.into_iter().flat_map(str::split_whitespace))
    }

    /// Words after the reserved entries, i.e. what [`WhitespaceTokenizer::new`] needs to
    /// rebuild this tokenizer.
    pub fn vocabulary(&self) -> &[String] {
        &self.words[WS_RESERVED.len()..]
    }
}

impl Tokenize for WhitespaceTokenizer {
    fn spec(&self) -> &TokenizerSpec {
        &self.spec
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        let unk = self.index[WS_UNK];
        text.split_whitespace()
            .map(|w| self.index.get(w).copied().unwrap_or(unk))
            .collect()
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizerError> {
        let mut out = Vec::with_capacity(tokens.len());
        for &t in tokens {
            if t == self.spec.eos_id {
                return Err(TokenizerError::Special(t));
            }
            let word = self
                .words
                .get(t as usize)
                .ok_or(TokenizerError::OutOfVocab(t))?;
            out.push(word.as_str());
        }
        Ok(out.join(" "))
    }
}

/// Serializable description of a built-in tokenizer, enough to rebuild it in
/// a later stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TokenizerConfig {
    Byte {
        #[serde(default)]
        wrapper: WrapperMode,
    },
    Whitespace {
        vocab: Vec<String>,
    },
}

#[derive(Debug, Clone)]
pub enum BuiltinTokenizer {
    Byte(ByteTokenizer),
    Whitespace(WhitespaceTokenizer),
}

impl BuiltinTokenizer {
    pub fn from_config(config: &TokenizerConfig) -> Self {
        match config {
            TokenizerConfig::Byte { wrapper } => Self::Byte(ByteTokenizer::new(*wrapper)),
            TokenizerConfig::Whitespace { vocab } => {
                Self::Whitespace(WhitespaceTokenizer::new(vocab))
            }
        }
    }

    pub fn config(&self) -> TokenizerConfig {
        match self {
            Self::Byte(t) => TokenizerConfig::Byte {
                wrapper: if t.spec.think_open_ids.len() == 1 {
                    WrapperMode::Special
                } else {
                    WrapperMode::PlainText
                },
            },
            Self::Whitespace(t) => TokenizerConfig::Whitespace {
                vocab: t.vocabulary().to_vec(),
            },
        }
    }
}

impl Tokenize for BuiltinTokenizer {
    fn spec(&self) -> &TokenizerSpec {
        match self {
            Self::Byte(t) => t.spec(),
            Self::Whitespace(t) => t.spec(),
        }
    }

    fn encode(&self, text: &str) -> Vec<TokenId> {
        match self {
            Self::Byte(t) => t.encode(text),
            Self::Whitespace(t) => t.encode(text),
        }
    }

    fn decode(&self, tokens: &[TokenId]) -> Result<String, TokenizerError> {
        match self {
            Self::Byte(t) => t.decode(tokens),
            Self::Whitespace(t) => t.decode(tokens),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_plain_wrappers_are_literal_bytes() {
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        assert_eq!(t.spec().think_open_ids, t.encode("<think>"));
        assert_eq!(t.spec().think_close_ids.len(), 8);
        assert!(t.spec().eos_id < t.spec().vocab_size);
    }

    #[test]
    fn byte_special_wrappers_decode_to_tags() {
        let t = ByteTokenizer::new(WrapperMode::Special);
        assert_eq!(t.spec().think_open_ids, vec![257]);
        assert_eq!(t.decode(&[257, 104, 258]).unwrap(), "<think>h</think>");
        assert_eq!(t.decode(&[256]), Err(TokenizerError::Special(256)));
    }

    #[test]
    fn byte_decode_rejects_split_codepoint() {
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        let toks = t.encode("é");
        assert!(matches!(
            t.decode(&toks[..1]),
            Err(TokenizerError::InvalidUtf8 { .. })
        ));
    }

    #[test]
    fn whitespace_counts_and_unknowns() {
        let t = WhitespaceTokenizer::from_texts(["a b", "b c d"]);
        assert_eq!(t.spec().vocab_size, 4 + 4);
        assert_eq!(t.encode("a  b\tz").len(), 3);
        assert_eq!(t.decode(&t.encode("a z")).unwrap(), "a <unk>");
        let rebuilt = WhitespaceTokenizer::new(t.vocabulary());
        assert_eq!(rebuilt.spec(), t.spec());
    }

    proptest! {
        #[test]
        fn byte_round_trip(s in "\\PC{0,64}") {
            let t = ByteTokenizer::new(WrapperMode::PlainText);
            let toks = t.encode(&s);
            prop_assert_eq!(t.encode(&t.decode(&toks).unwrap()), toks);
        }

        #[test]
        fn whitespace_round_trip(words in proptest::collection::vec("[a-z]{1,4}", 0..20), probe in proptest::collection::vec("[a-z]{1,4}", 0..20)) {
            let t = WhitespaceTokenizer::new(&words);
            let toks = t.encode(&probe.join(" "));
            prop_assert_eq!(t.encode(&t.decode(&toks).unwrap()), toks);
        }
    }
}
