use rand::Rng;
use serde::{Deserialize, Serialize};

use super::GrpoError;
use crate::tokenizer::{Token, TokenDataset, TokenKind, TokenSequence, Vocab};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptSource {
    /// `[BOS, Bar, TimeSig, Tempo]` with meter and tempo drawn uniformly.
    #[default]
    Procedural,
    /// The first `prompt_len` tokens of a uniformly chosen training file.
    Dataset { prompt_len: usize },
}

pub fn procedural_prompt<R: Rng + ?Sized>(rng: &mut R, vocab: &Vocab) -> TokenSequence {
    let sigs = vocab.ids_of_kind(TokenKind::TimeSig);
    let tempos = vocab.ids_of_kind(TokenKind::Tempo);
    let bos = vocab.id(Token::Bos).expect("BOS in vocab");
    let bar = vocab.id(Token::Bar).expect("Bar in vocab");
    let sig = sigs[rng.random_range(0..sigs.len())];
    let tempo = tempos[rng.random_range(0..tempos.len())];
    TokenSequence::from(vec![bos, bar, sig, tempo])
}

/// Prefix of a uniformly chosen non-empty record. Token streams open with
/// `BOS, Bar`, so every prefix starts on a bar boundary.
pub fn dataset_prompt<R: Rng + ?Sized>(dataset: &TokenDataset, rng: &mut R, prompt_len: usize) -> Result<TokenSequence, GrpoError> {
    let usable: Vec<&TokenSequence> = dataset.records.iter().map(|r| &r.tokens).filter(|t| !t.is_empty()).collect();
    if usable.is_empty() {
        return Err(GrpoError::Prompt("dataset has no non-empty records".into()));
    }
    let ids = usable[rng.random_range(0..usable.len())].ids();
    Ok(TokenSequence::from(ids[..ids.len().min(prompt_len.max(1))].to_vec()))
}
