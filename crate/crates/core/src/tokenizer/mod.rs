//! Bar/position event tokenization of piano scores.

mod codec;
mod dataset;
mod vocab;

pub use codec::{decode, encode, quantize, random_crop, QuantizedNote};
pub use dataset::{sidecar_path, TokenDataset, TokenRecord, VocabSidecar};
pub use vocab::{velocity_bin, Token, TokenKind, Vocab, VocabConfig, PAD_ID};

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("empty range in tokenizer config: {0}")]
    EmptyRange(String),
    #[error("invalid tokenizer config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} outside vocabulary of {size}")]
    OutOfVocab { id: u32, size: usize },
    #[error("dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A stream of vocabulary ids.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<u32> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn push(&mut self, id: u32) {
        self.0.push(id);
    }

    pub fn validate(&self, vocab: &Vocab) -> Result<(), TokenizerError> {
        match self.0.iter().find(|&&id| id as usize >= vocab.len()) {
            Some(&id) => Err(TokenizerError::OutOfVocab { id, size: vocab.len() }),
            None => Ok(()),
        }
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}
