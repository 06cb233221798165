use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: no data rows")]
    EmptyInput,

    #[error("missing column `{0}` in header")]
    MissingColumn(String),

    #[error("malformed row {row}: {msg}")]
    MalformedRow { row: u64, msg: String },

    #[error("duplicate observation for unit `{unit}` at time {time}")]
    DuplicateKey { unit: String, time: i64 },

    #[error("unit `{unit}` has inconsistent treated_group across periods")]
    InconsistentTreatment { unit: String },

    #[error("invalid panel: {0}")]
    InvalidPanel(String),

    #[error("panel is unbalanced: {missing} missing (unit, time) cells")]
    Unbalanced { missing: usize },

    #[error("pre-trends length {requested} out of range: maximum feasible length is {max}")]
    WindowOutOfRange { requested: i64, max: i64 },

    #[error("design is collinear after fixed-effect absorption; offending regressors: {}", names.join(", "))]
    Collinear { names: Vec<String> },

    #[error("standard errors unavailable: residual degrees of freedom {df_resid} < 1")]
    SeUnavailable { df_resid: i64 },

    #[error("unknown regressor `{0}`")]
    UnknownRegressor(String),

    #[error("invalid design: {0}")]
    InvalidDesign(String),

    #[error("cluster-robust covariance needs at least 2 clusters, found {0}")]
    SingleCluster(usize),

    #[error("period {0} not present in the panel")]
    MissingPeriod(i64),

    #[error("expected exactly 2 periods, found {0}")]
    WrongPeriodCount(usize),

    #[error("candidate list is empty")]
    EmptyCandidates,

    #[error("non-finite MSE at pre-trends length {0}")]
    NonFiniteMse(usize),

    #[error("candidate and estimate lists disagree: {0}")]
    CandidateMismatch(String),

    #[error("estimation failed at pre-trends length {ell}: {source}")]
    CandidateFailed {
        ell: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("pre-trends length {0} not in oracle domain")]
    UnknownLength(usize),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for problems with user-supplied input (files, flags, configs) as
    /// opposed to failures inside estimation.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::EmptyInput
                | Error::MissingColumn(_)
                | Error::MalformedRow { .. }
                | Error::DuplicateKey { .. }
                | Error::InconsistentTreatment { .. }
                | Error::InvalidPanel(_)
                | Error::Unbalanced { .. }
                | Error::WindowOutOfRange { .. }
                | Error::MissingPeriod(_)
                | Error::WrongPeriodCount(_)
                | Error::InvalidConfig(_)
                | Error::Io(_)
                | Error::Csv(_)
        )
    }
}
