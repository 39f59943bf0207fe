use std::fmt;
use std::path::Path;

use serde_json::json;

/// Failure reported to the user as `{"error": {"kind", "message"}}`.
#[derive(Debug)]
pub struct CliError {
    pub kind: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(kind: &'static str, message: impl Into<String>) -> Self {
        CliError {
            kind,
            message: message.into(),
        }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new("config", message)
    }

    pub fn missing(what: &str, path: &Path) -> Self {
        Self::new("missing-input", format!("{what} {} does not exist", path.display()))
    }

    pub fn io(path: &Path, e: impl fmt::Display) -> Self {
        Self::new("io", format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> String {
        json!({ "error": { "kind": self.kind, "message": self.message } }).to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

macro_rules! kind_from {
    ($($ty:ty => $kind:literal),* $(,)?) => {
        $(impl From<$ty> for CliError {
            fn from(e: $ty) -> Self {
                CliError::new($kind, e.to_string())
            }
        })*
    };
}

kind_from! {
    symtune_core::corpus::CorpusError => "corpus",
    symtune_core::features::FeatureError => "features",
    symtune_core::grpo::GrpoError => "tune",
    symtune_core::midi::MidiError => "midi",
    symtune_core::model::ModelError => "model",
    symtune_core::render::RenderError => "render",
    symtune_core::scorer::ScoreError => "score",
    symtune_core::tokenizer::TokenizerError => "tokenizer",
}
