use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{source_name}, record {record}: {message}")]
    Malformed {
        source_name: String,
        record: usize,
        message: String,
    },

    #[error("duplicate dialogue id `{0}`")]
    DuplicateId(String),

    #[error("dialogue `{dialogue}`, turn {turn}: reserved token `{token}` inside an utterance")]
    ReservedToken {
        dialogue: String,
        turn: usize,
        token: String,
    },

    #[error("dialogue `{dialogue}`, turn {turn}: empty {side} utterance")]
    EmptyUtterance {
        dialogue: String,
        turn: usize,
        side: &'static str,
    },

    #[error("dialogue `{0}` has no turns")]
    NoTurns(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("split sizes {train}+{valid}+{test} do not sum to corpus length {len}")]
    SplitSizes {
        train: usize,
        valid: usize,
        test: usize,
        len: usize,
    },

    #[error("labeled split has {labeled:?} (train, valid, test) but {requested:?} was requested")]
    LabeledSplitConflict {
        labeled: (usize, usize, usize),
        requested: (usize, usize, usize),
    },

    #[error("knowledge base is empty")]
    EmptyKb,

    #[error("duplicate restaurant name `{0}` in knowledge base")]
    DuplicateName(String),

    #[error("unknown slot `{0}`")]
    UnknownSlot(String),

    #[error("{source_name}, record {record}: unparsable coordinates `{value}`")]
    Coordinates {
        source_name: String,
        record: usize,
        value: String,
    },

    #[error("template needs {needed} distinct records but only {available} are available")]
    NotEnoughRecords { needed: usize, available: usize },

    #[error("augmentation budget {budget} exceeds the {available} distinct (template, assignment) combinations")]
    BudgetTooLarge { budget: usize, available: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    IdOutOfRange { id: u32, size: usize },

    #[error("{0}")]
    Vocabulary(String),

    #[error("length mismatch: {hypotheses} hypotheses vs {references} references")]
    LengthMismatch { hypotheses: usize, references: usize },

    #[error("no Likert records")]
    EmptyLikert,

    #[error("Likert score {0} is not one of 1, 3, 5")]
    LikertScore(u8),

    #[error("report needs at least one row")]
    EmptyReport,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn malformed(source_name: &str, record: usize, message: impl Into<String>) -> Self {
        Error::Malformed {
            source_name: source_name.to_string(),
            record,
            message: message.into(),
        }
    }
}
