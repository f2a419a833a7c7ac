//! Real-document store: JSONL ingestion, tokenization, persistence and
//! length-based validation splits.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arena::{self, ArenaError};
use crate::tokenizer::{TokenId, Tokenize, TokenizerConfig, TokenizerSpec};

pub const CORPUS_INDEX_VERSION: u32 = 1;
pub const CORPUS_BIN: &str = "corpus.bin";
pub const CORPUS_INDEX: &str = "corpus.index.json";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("line {line}: malformed JSON: {message}")]
    MalformedLine { line: usize, message: String },
    #[error("line {line}: duplicate document id {doc_id:?}")]
    DuplicateId { line: usize, doc_id: String },
    #[error("line {line}: token id {token} invalid (vocab {vocab_size}, eos {eos_id})")]
    BadTokenId {
        line: usize,
        token: TokenId,
        vocab_size: u32,
        eos_id: TokenId,
    },
    #[error(transparent)]
    Arena(#[from] ArenaError),
    #[error("corpus index: {0}")]
    Index(#[from] serde_json::Error),
    #[error("corpus index and arena disagree: {0}")]
    Inconsistent(String),
    #[error("cannot split {0} document(s) into two halves")]
    TooFewToSplit(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub tokens: Vec<TokenId>,
}

impl Document {
    pub fn token_len(&self) -> usize {
        self.tokens.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub total_tokens: u64,
    pub mean_len: f64,
    pub median_len: f64,
    pub skipped_empty: usize,
}

#[derive(Debug, Deserialize)]
struct InputLine {
    #[serde(default)]
    id: Option<String>,
    text: String,
    #[serde(default)]
    token_ids: Option<Vec<TokenId>>,
}

/// Immutable, ordered set of tokenized documents. Order is file order.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub tokenizer: TokenizerSpec,
    pub tokenizer_config: Option<TokenizerConfig>,
    docs: Vec<Document>,
    by_id: HashMap<String, usize>,
    skipped_empty: usize,
}

impl Corpus {
    pub fn from_documents(
        tokenizer: TokenizerSpec,
        docs: Vec<Document>,
    ) -> Result<Self, CorpusError> {
        let mut by_id = HashMap::with_capacity(docs.len());
        for (i, d) in docs.iter().enumerate() {
            if by_id.insert(d.doc_id.clone(), i).is_some() {
                return Err(CorpusError::DuplicateId {
                    line: i + 1,
                    doc_id: d.doc_id.clone(),
                });
            }
        }
        Ok(Self {
            tokenizer,
            tokenizer_config: None,
            docs,
            by_id,
            skipped_empty: 0,
        })
    }

    pub fn ingest(
        path: &Path,
        tokenizer: &dyn Tokenize,
        limit: Option<usize>,
    ) -> Result<Self, CorpusError> {
        Self::ingest_reader(fs::File::open(path)?, tokenizer, limit)
    }

    /// Parses one JSON object per line. Tokenization runs in parallel and is
    /// merged back in line order.
    pub fn ingest_reader<R: Read>(
        reader: R,
        tokenizer: &dyn Tokenize,
        limit: Option<usize>,
    ) -> Result<Self, CorpusError> {
        let spec = tokenizer.spec().clone();
        let mut parsed: Vec<(usize, InputLine)> = Vec::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: InputLine =
                serde_json::from_str(&line).map_err(|e| CorpusError::MalformedLine {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            parsed.push((idx, rec));
        }

        let tokenized: Vec<Result<Option<Document>, CorpusError>> = parsed
            .into_par_iter()
            .map(|(idx, rec)| {
                if rec.text.is_empty() {
                    return Ok(None);
                }
                let tokens = match rec.token_ids {
                    Some(ids) => {
                        if let Some(&bad) = ids
                            .iter()
                            .find(|&&t| t >= spec.vocab_size || t == spec.eos_id)
                        {
                            return Err(CorpusError::BadTokenId {
                                line: idx + 1,
                                token: bad,
                                vocab_size: spec.vocab_size,
                                eos_id: spec.eos_id,
                            });
                        }
                        ids
                    }
                    None => tokenizer.encode(&rec.text),
                };
                if tokens.is_empty() {
                    return Ok(None);
                }
                Ok(Some(Document {
                    doc_id: rec.id.unwrap_or_else(|| format!("{idx:08}")),
                    text: rec.text,
                    tokens,
                }))
            })
            .collect();

        let mut docs = Vec::new();
        let mut skipped_empty = 0;
        let mut seen = HashSet::new();
        for (line, r) in tokenized.into_iter().enumerate() {
            if limit.is_some_and(|l| docs.len() >= l) {
                break;
            }
            match r? {
                Some(doc) => {
                    if !seen.insert(doc.doc_id.clone()) {
                        return Err(CorpusError::DuplicateId {
                            line: line + 1,
                            doc_id: doc.doc_id,
                        });
                    }
                    docs.push(doc);
                }
                None => skipped_empty += 1,
            }
        }
        if skipped_empty > 0 {
            log::warn!("skipped {skipped_empty} empty document(s) during ingest");
        }
        let mut corpus = Self::from_documents(spec, docs)?;
        corpus.skipped_empty = skipped_empty;
        Ok(corpus)
    }

    pub fn docs(&self) -> &[Document] {
        &self.docs
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.by_id.get(doc_id).map(|&i| &self.docs[i])
    }

    pub fn total_tokens(&self) -> u64 {
        self.docs.iter().map(|d| d.token_len() as u64).sum()
    }

    /// Content hash over ids and tokens, in corpus order. Downstream
    /// artifacts record it to detect mixed-provenance inputs.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.tokenizer.name.as_bytes());
        for d in &self.docs {
            h.update((d.doc_id.len() as u64).to_le_bytes());
            h.update(d.doc_id.as_bytes());
            h.update((d.tokens.len() as u64).to_le_bytes());
            for t in &d.tokens {
                h.update(t.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn stats(&self) -> CorpusStats {
        let n = self.docs.len();
        let total = self.total_tokens();
        let mut lens: Vec<usize> = self.docs.iter().map(Document::token_len).collect();
        lens.sort_unstable();
        let median = match n {
            0 => 0.0,
            _ if n % 2 == 1 => lens[n / 2] as f64,
            _ => (lens[n / 2 - 1] + lens[n / 2]) as f64 / 2.0,
        };
        CorpusStats {
            doc_count: n,
            total_tokens: total,
            mean_len: if n == 0 { 0.0 } else { total as f64 / n as f64 },
            median_len: median,
            skipped_empty: self.skipped_empty,
        }
    }

    /// Writes `corpus.bin` and `corpus.index.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<CorpusFiles, CorpusError> {
        fs::create_dir_all(dir)?;
        let mut all = Vec::with_capacity(self.total_tokens() as usize);
        let mut entries = Vec::with_capacity(self.docs.len());
        for d in &self.docs {
            entries.push(IndexEntry {
                doc_id: d.doc_id.clone(),
                offset: all.len() as u64,
                len: d.token_len() as u64,
                text: d.text.clone(),
            });
            all.extend_from_slice(&d.tokens);
        }
        let index = CorpusIndex {
            format_version: CORPUS_INDEX_VERSION,
            tokenizer: self.tokenizer.clone(),
            tokenizer_config: self.tokenizer_config.clone(),
            stats: self.stats(),
            docs: entries,
        };
        let files = CorpusFiles::in_dir(dir);
        arena::write_arena(&files.bin, &all)?;
        arena::write_atomic(&files.index, &serde_json::to_vec_pretty(&index)?)?;
        Ok(files)
    }

    pub fn read(dir: &Path) -> Result<Self, CorpusError> {
        let files = CorpusFiles::in_dir(dir);
        Self::read_files(&files.bin, &files.index)
    }

    pub fn read_files(bin: &Path, index: &Path) -> Result<Self, CorpusError> {
        let tokens = arena::read_arena(bin)?;
        let index: CorpusIndex = serde_json::from_slice(&fs::read(index)?)?;
        if index.format_version != CORPUS_INDEX_VERSION {
            return Err(CorpusError::Inconsistent(format!(
                "unsupported index version {}",
                index.format_version
            )));
        }
        let mut docs = Vec::with_capacity(index.docs.len());
        for e in index.docs {
            let end = e.offset + e.len;
            if end > tokens.len() as u64 {
                return Err(CorpusError::Inconsistent(format!(
                    "{} spans past the arena end",
                    e.doc_id
                )));
            }
            docs.push(Document {
                doc_id: e.doc_id,
                text: e.text,
                tokens: tokens[e.offset as usize..end as usize].to_vec(),
            });
        }
        let mut corpus = Self::from_documents(index.tokenizer, docs)?;
        corpus.tokenizer_config = index.tokenizer_config;
        corpus.skipped_empty = index.stats.skipped_empty;
        Ok(corpus)
    }
}

#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub bin: PathBuf,
    pub index: PathBuf,
}

impl CorpusFiles {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            bin: dir.join(CORPUS_BIN),
            index: dir.join(CORPUS_INDEX),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CorpusIndex {
    format_version: u32,
    tokenizer: TokenizerSpec,
    #[serde(default)]
    tokenizer_config: Option<TokenizerConfig>,
    stats: CorpusStats,
    docs: Vec<IndexEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    doc_id: String,
    offset: u64,
    len: u64,
    text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitCriterion {
    All,
    ShortHalf,
    LongHalf,
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationSplit {
    pub split_id: String,
    pub doc_ids: Vec<String>,
    pub criterion: SplitCriterion,
}

impl ValidationSplit {
    pub fn all(corpus: &Corpus) -> Self {
        Self {
            split_id: "all".into(),
            doc_ids: corpus.docs.iter().map(|d| d.doc_id.clone()).collect(),
            criterion: SplitCriterion::All,
        }
    }

    pub fn external(split_id: impl Into<String>, doc_ids: Vec<String>) -> Self {
        Self {
            split_id: split_id.into(),
            doc_ids,
            criterion: SplitCriterion::External,
        }
    }
}

/// Halves a validation set by token length. Documents are ordered by
/// `(token_len, doc_id)`; with an odd count the extra document goes to the
/// short half.
pub fn make_length_split(
    validation: &Corpus,
) -> Result<(ValidationSplit, ValidationSplit), CorpusError> {
    let n = validation.len();
    if n < 2 {
        return Err(CorpusError::TooFewToSplit(n));
    }
    let mut order: Vec<&Document> = validation.docs.iter().collect();
    order.sort_by(|a, b| {
        a.token_len()
            .cmp(&b.token_len())
            .then_with(|| a.doc_id.cmp(&b.doc_id))
    });
    let short_n = n.div_ceil(2);
    if n % 2 == 1 {
        log::info!("odd validation size {n}: short half holds the extra document");
    }
    let ids = |docs: &[&Document]| docs.iter().map(|d| d.doc_id.clone()).collect();
    Ok((
        ValidationSplit {
            split_id: "short_half".into(),
            doc_ids: ids(&order[..short_n]),
            criterion: SplitCriterion::ShortHalf,
        },
        ValidationSplit {
            split_id: "long_half".into(),
            doc_ids: ids(&order[short_n..]),
            criterion: SplitCriterion::LongHalf,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{ByteTokenizer, WhitespaceTokenizer, WrapperMode};
    use proptest::prelude::*;

    fn ws() -> WhitespaceTokenizer {
        WhitespaceTokenizer::from_texts(["a b c d e f g h i"])
    }

    fn corpus_with_lengths(lens: &[usize]) -> Corpus {
        let docs = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| Document {
                doc_id: format!("d{i:03}"),
                text: "x".into(),
                tokens: vec![1; l],
            })
            .collect();
        Corpus::from_documents(ByteTokenizer::new(WrapperMode::PlainText).spec().clone(), docs)
            .unwrap()
    }

    #[test]
    fn hand_counted_fixture() {
        let input = "{\"text\":\"a b\"}\n{\"text\":\"a b c\"}\n{\"text\":\"a b c d\"}\n";
        let c = Corpus::ingest_reader(input.as_bytes(), &ws(), None).unwrap();
        assert_eq!(c.total_tokens(), 9);
        let s = c.stats();
        assert_eq!(s.doc_count, 3);
        assert_eq!(s.median_len, 3.0);
        assert_eq!(c.docs()[0].doc_id, "00000000");
        assert_eq!(c.docs()[2].doc_id, "00000002");
    }

    #[test]
    fn empty_file_gives_empty_corpus() {
        let c = Corpus::ingest_reader("".as_bytes(), &ws(), None).unwrap();
        assert_eq!(c.len(), 0);
        assert_eq!(c.total_tokens(), 0);
    }

    #[test]
    fn malformed_line_is_named() {
        let input = "{\"text\":\"a\"}\n{not json\n";
        match Corpus::ingest_reader(input.as_bytes(), &ws(), None) {
            Err(CorpusError::MalformedLine { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_text_is_skipped_and_counted() {
        let input = "{\"text\":\"\"}\n{\"id\":\"k\",\"text\":\"a\"}\n";
        let c = Corpus::ingest_reader(input.as_bytes(), &ws(), None).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.stats().skipped_empty, 1);
        assert!(c.get("k").is_some());
    }

    #[test]
    fn pretokenized_ids_bypass_tokenizer() {
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        let ok = "{\"text\":\"zz\",\"token_ids\":[5,6,7]}\n";
        let c = Corpus::ingest_reader(ok.as_bytes(), &t, None).unwrap();
        assert_eq!(c.docs()[0].tokens, vec![5, 6, 7]);
        let eos = "{\"text\":\"zz\",\"token_ids\":[5,256]}\n";
        assert!(matches!(
            Corpus::ingest_reader(eos.as_bytes(), &t, None),
            Err(CorpusError::BadTokenId { token: 256, .. })
        ));
    }

    #[test]
    fn duplicate_ids_rejected_and_limit_respected() {
        let dup = "{\"id\":\"a\",\"text\":\"a\"}\n{\"id\":\"a\",\"text\":\"b\"}\n";
        assert!(matches!(
            Corpus::ingest_reader(dup.as_bytes(), &ws(), None),
            Err(CorpusError::DuplicateId { .. })
        ));
        let c = Corpus::ingest_reader(dup.as_bytes(), &ws(), Some(1)).unwrap();
        assert_eq!(c.len(), 1);
    }

    #[test]
    fn persisted_corpus_is_byte_identical() {
        let t = ByteTokenizer::new(WrapperMode::PlainText);
        let input = "{\"text\":\"hello world\"}\n{\"id\":\"x\",\"text\":\"second doc\"}\n";
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let c1 = Corpus::ingest_reader(input.as_bytes(), &t, None).unwrap();
        let c2 = Corpus::ingest_reader(input.as_bytes(), &t, None).unwrap();
        let f1 = c1.write(a.path()).unwrap();
        let f2 = c2.write(b.path()).unwrap();
        assert_eq!(fs::read(&f1.bin).unwrap(), fs::read(&f2.bin).unwrap());
        assert_eq!(fs::read(&f1.index).unwrap(), fs::read(&f2.index).unwrap());
        let back = Corpus::read(a.path()).unwrap();
        assert_eq!(back.docs(), c1.docs());
    }

    #[test]
    fn split_hand_example() {
        let c = corpus_with_lengths(&[20, 1, 30, 3, 10, 2]);
        let (short, long) = make_length_split(&c).unwrap();
        assert_eq!(short.doc_ids, vec!["d001", "d005", "d003"]);
        assert_eq!(long.doc_ids, vec!["d004", "d000", "d002"]);
    }

    #[test]
    fn split_ties_and_errors() {
        let c = corpus_with_lengths(&[5, 5]);
        let (short, long) = make_length_split(&c).unwrap();
        assert_eq!(short.doc_ids, vec!["d000"]);
        assert_eq!(long.doc_ids, vec!["d001"]);
        assert!(matches!(
            make_length_split(&corpus_with_lengths(&[4])),
            Err(CorpusError::TooFewToSplit(1))
        ));
        let (s, l) = make_length_split(&corpus_with_lengths(&[1, 2, 3])).unwrap();
        assert_eq!((s.doc_ids.len(), l.doc_ids.len()), (2, 1));
    }

    proptest! {
        #[test]
        fn split_partitions_by_length(lens in proptest::collection::vec(1usize..50, 2..60)) {
            let c = corpus_with_lengths(&lens);
            let (short, long) = make_length_split(&c).unwrap();
            prop_assert_eq!(short.doc_ids.len() + long.doc_ids.len(), lens.len());
            prop_assert!(short.doc_ids.len() - long.doc_ids.len() <= 1);
            let len_of = |id: &String| c.get(id).unwrap().token_len();
            let max_short = short.doc_ids.iter().map(len_of).max().unwrap();
            let min_long = long.doc_ids.iter().map(len_of).min().unwrap();
            prop_assert!(max_short <= min_long);
            let mut all: Vec<_> = short.doc_ids.iter().chain(&long.doc_ids).cloned().collect();
            all.sort();
            all.dedup();
            prop_assert_eq!(all.len(), lens.len());
        }

        #[test]
        fn total_equals_sum_of_lengths(lens in proptest::collection::vec(0usize..40, 0..30)) {
            let c = corpus_with_lengths(&lens);
            prop_assert_eq!(c.total_tokens(), lens.iter().sum::<usize>() as u64);
        }
    }
}
