use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid concept set: {0}")]
    InvalidConceptSet(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("concept sets differ: {0}")]
    ConceptMismatch(String),

    #[error("concept `{concept}` has an all-zero feature row; cosine distance is undefined")]
    ZeroRow { concept: String },

    #[error("verification answers incomplete: {0}")]
    Verification(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("too few triplets: {0}")]
    TooFewTriplets(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("{} concept pair(s) have no rating: {}", .0.len(), fmt_pairs(.0))]
    MissingPairs(Vec<(String, String)>),

    #[error("respondent `{respondent}` has zero rating variance")]
    ZeroVariance { respondent: String },

    #[error("configuration has zero variance (all rows identical)")]
    DegenerateConfiguration,

    #[error("unparseable response: {raw:?}")]
    Unparseable { raw: String },

    #[error("missing prompt binding `{0}`")]
    MissingBinding(String),

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("unknown session `{0}`")]
    UnknownSession(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("out-of-order submission: expected trial {expected}, got {got}")]
    OutOfOrder { expected: usize, got: usize },

    #[error("invalid payload: {0}")]
    InvalidPayload(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn fmt_pairs(pairs: &[(String, String)]) -> String {
    pairs
        .iter()
        .map(|(a, b)| format!("({a}, {b})"))
        .collect::<Vec<_>>()
        .join(", ")
}

impl Error {
    /// Stable machine-readable identifier, used by the CLI and the HTTP API.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidConceptSet(_) => "invalid_concept_set",
            Error::Invariant(_) => "invariant",
            Error::ConceptMismatch(_) => "concept_mismatch",
            Error::ZeroRow { .. } => "zero_row",
            Error::Verification(_) => "verification",
            Error::OutOfRange(_) => "out_of_range",
            Error::Empty(_) => "empty",
            Error::TooFewTriplets(_) => "too_few_triplets",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::MissingPairs(_) => "missing_pairs",
            Error::ZeroVariance { .. } => "zero_variance",
            Error::DegenerateConfiguration => "degenerate_configuration",
            Error::Unparseable { .. } => "unparseable",
            Error::MissingBinding(_) => "missing_binding",
            Error::Transport(_) => "transport",
            Error::UnknownSession(_) => "unknown_session",
            Error::Conflict(_) => "conflict",
            Error::OutOfOrder { .. } => "out_of_order",
            Error::InvalidPayload(_) => "invalid_payload",
            Error::Parse(_) => "parse",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
