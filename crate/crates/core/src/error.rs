use thiserror::Error;

use crate::model::CampaignKey;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("campaign index {0} out of range 0..=99")]
    InvalidCampaign(u32),
    #[error("alpha {0} is the organic sentinel and has no network/campaign decoding")]
    NotDecodable(u32),
    #[error("user {user} is not mature for a {window_days}-day window")]
    MaturityViolation { user: u64, window_days: u32 },
    #[error("invalid user record {user}: {reason}")]
    InvalidUser { user: u64, reason: String },
    #[error("layout parse error: {0}")]
    LayoutParse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("cannot fit buckets: no spenders in population")]
    DegenerateFit,
    #[error("duplicate postback for user {0}")]
    DuplicatePostback(u64),
    #[error("postback references unknown user {0}")]
    UnknownUser(u64),
    #[error("inconsistent developer totals at conversion value {value}: totals {total} < paid {paid}")]
    InconsistentTotals { value: u8, total: u64, paid: u64 },
    #[error("matrix already has privacy applied")]
    AlreadyPrivatized,
    #[error("matrix carries suppressed mass; plain attribution needs an unsuppressed matrix")]
    SuppressedMatrix,
    #[error("matrix has no privacy applied; null-aware attribution expects a privatized matrix")]
    NotPrivatized,
    #[error("no revenue profile for conversion value {0}")]
    MissingProfile(u8),
    #[error("lambda {0} outside [0, 1]")]
    InvalidLambda(f64),
    #[error("attribution domains differ: {0:?} missing")]
    Alignment(CampaignKey),
    #[error("all aggregation weights are zero")]
    UndefinedWeights,
    #[error("baseline error is zero; normalization undefined")]
    DegenerateBaseline,
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}:{line}: {reason}")]
    Parse {
        path: String,
        line: u64,
        reason: String,
    },
    #[error("event references unknown user {user_id} ({path}:{line})")]
    DanglingEvent {
        user_id: u64,
        path: String,
        line: u64,
    },
    #[error("benchmark cell {cell}: {source}")]
    Cell {
        cell: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the CLI's JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidCampaign(_) => "invalid_campaign",
            Error::NotDecodable(_) => "not_decodable",
            Error::MaturityViolation { .. } => "maturity_violation",
            Error::InvalidUser { .. } => "invalid_user",
            Error::LayoutParse(_) => "layout_parse",
            Error::Schema(_) => "schema",
            Error::DegenerateFit => "degenerate_fit",
            Error::DuplicatePostback(_) => "duplicate_postback",
            Error::UnknownUser(_) => "unknown_user",
            Error::InconsistentTotals { .. } => "inconsistent_totals",
            Error::AlreadyPrivatized => "already_privatized",
            Error::SuppressedMatrix => "suppressed_matrix",
            Error::NotPrivatized => "not_privatized",
            Error::MissingProfile(_) => "missing_profile",
            Error::InvalidLambda(_) => "invalid_lambda",
            Error::Alignment(_) => "alignment",
            Error::UndefinedWeights => "undefined_weights",
            Error::DegenerateBaseline => "degenerate_baseline",
            Error::Config(_) => "config",
            Error::Parse { .. } => "parse",
            Error::DanglingEvent { .. } => "dangling_event",
            Error::Cell { .. } => "cell",
            Error::Io(_) => "io",
            Error::Csv(_) => "csv",
            Error::Json(_) => "json",
        }
    }
}
