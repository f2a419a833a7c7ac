//! Flat token arena: a versioned binary file of little-endian `u32` token ids.
//!
//! Layout: `b"MDTA"`, `u32` format version, `u64` token count, then the tokens.
//! Offsets into the arena are kept in a JSON index written next to it.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::tokenizer::TokenId;

pub const ARENA_MAGIC: &[u8; 4] = b"MDTA";
pub const ARENA_VERSION: u32 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum ArenaError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{0}: bad magic header, not a token arena")]
    BadMagic(String),
    #[error("{path}: unsupported arena version {found}")]
    Version { path: String, found: u32 },
    #[error("{path}: header says {expected} tokens, payload holds {found}")]
    Truncated {
        path: String,
        expected: u64,
        found: u64,
    },
}

pub fn encode_arena(tokens: &[TokenId]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + tokens.len() * 4);
    out.extend_from_slice(ARENA_MAGIC);
    out.extend_from_slice(&ARENA_VERSION.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    for t in tokens {
        out.extend_from_slice(&t.to_le_bytes());
    }
    out
}

pub fn decode_arena(bytes: &[u8], path: &str) -> Result<Vec<TokenId>, ArenaError> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != ARENA_MAGIC {
        return Err(ArenaError::BadMagic(path.to_string()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ARENA_VERSION {
        return Err(ArenaError::Version {
            path: path.to_string(),
            found: version,
        });
    }
    let expected = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let payload = &bytes[HEADER_LEN..];
    if payload.len() as u64 != expected * 4 {
        return Err(ArenaError::Truncated {
            path: path.to_string(),
            expected,
            found: payload.len() as u64 / 4,
        });
    }
    Ok(payload
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

pub fn write_arena(path: &Path, tokens: &[TokenId]) -> Result<(), ArenaError> {
    write_atomic(path, &encode_arena(tokens)).map_err(|source| ArenaError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_arena(path: &Path) -> Result<Vec<TokenId>, ArenaError> {
    let bytes = fs::read(path).map_err(|source| ArenaError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_arena(&bytes, &path.display().to_string())
}

/// Writes via a sibling temp file and rename so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_header() {
        assert!(matches!(
            decode_arena(b"NOPE\x01\0\0\0\0\0\0\0\0\0\0\0", "x"),
            Err(ArenaError::BadMagic(_))
        ));
        let mut bytes = encode_arena(&[1, 2, 3]);
        bytes.truncate(bytes.len() - 4);
        assert!(matches!(
            decode_arena(&bytes, "x"),
            Err(ArenaError::Truncated { expected: 3, .. })
        ));
    }

    proptest! {
        #[test]
        fn round_trip(tokens in proptest::collection::vec(any::<u32>(), 0..200)) {
            prop_assert_eq!(decode_arena(&encode_arena(&tokens), "t").unwrap(), tokens);
        }
    }
}
