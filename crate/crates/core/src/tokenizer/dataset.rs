//! Token dataset files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "SYMTOKDS"
//! version  u32      1
//! count    u32      number of records
//! record*  { id_len: u32, file_id: [u8; id_len] (UTF-8),
//!            n_tokens: u32, ids: [u32; n_tokens] }
//! ```
//!
//! A JSON sidecar (`<file>.vocab.json`) lists the token strings in id order
//! together with the tokenizer configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::vocab::{Token, Vocab, VocabConfig};
use super::{TokenSequence, TokenizerError};
use crate::util::atomic_write;

const MAGIC: &[u8; 8] = b"SYMTOKDS";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenRecord {
    pub file_id: String,
    pub tokens: TokenSequence,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TokenDataset {
    pub records: Vec<TokenRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VocabSidecar {
    pub version: u32,
    pub tokens: Vec<String>,
    pub config: VocabConfig,
}

pub fn sidecar_path(dataset: &Path) -> PathBuf {
    let mut name = dataset.file_name().unwrap_or_default().to_os_string();
    name.push(".vocab.json");
    dataset.with_file_name(name)
}

impl TokenDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.file_id.len() as u32).to_le_bytes());
            out.extend_from_slice(r.file_id.as_bytes());
            out.extend_from_slice(&(r.tokens.len() as u32).to_le_bytes());
            for id in r.tokens.ids() {
                out.extend_from_slice(&id.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TokenizerError> {
        let bad = |m: &str| TokenizerError::Dataset(m.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8], TokenizerError> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated dataset"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let u32_of = |b: &[u8]| u32::from_le_bytes(b.try_into().expect("4 bytes"));
        let version = u32_of(take(4)?);
        if version != VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let count = u32_of(take(4)?) as usize;
        let mut records = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let id_len = u32_of(take(4)?) as usize;
            let file_id = String::from_utf8(take(id_len)?.to_vec()).map_err(|_| bad("file id not UTF-8"))?;
            let n = u32_of(take(4)?) as usize;
            let raw = take(n.checked_mul(4).ok_or_else(|| bad("length overflow"))?)?;
            let ids = raw.chunks_exact(4).map(u32_of).collect::<Vec<_>>();
            records.push(TokenRecord {
                file_id,
                tokens: TokenSequence::from(ids),
            });
        }
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(TokenDataset { records })
    }

    /// Writes the dataset and its vocab sidecar, each atomically.
    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<(), TokenizerError> {
        atomic_write(path, &self.to_bytes())?;
        let sidecar = VocabSidecar {
            version: VERSION,
            tokens: vocab.token_strings(),
            config: vocab.config().clone(),
        };
        let json = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        atomic_write(&sidecar_path(path), &json)?;
        Ok(())
    }

    /// Loads a dataset and rebuilds its vocabulary, checking the sidecar token
    /// list matches the rebuilt ids exactly and every record id is in range.
    pub fn load(path: &Path) -> Result<(Self, Vocab), TokenizerError> {
        let data = Self::from_bytes(&std::fs::read(path)?)?;
        let sidecar: VocabSidecar = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)
            .map_err(|e| TokenizerError::Dataset(format!("vocab sidecar: {e}")))?;
        let vocab = Vocab::build(sidecar.config)?;
        let rebuilt = vocab.token_strings();
        if rebuilt != sidecar.tokens || sidecar.tokens.iter().any(|s| Token::parse(s).is_none()) {
            return Err(TokenizerError::Dataset(
                "sidecar token list does not match its configuration".into(),
            ));
        }
        for r in &data.records {
            r.tokens.validate(&vocab)?;
        }
        Ok((data, vocab))
    }
}
