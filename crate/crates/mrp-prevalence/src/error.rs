use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("{path}: expected header `{expected}`, found `{found}`")]
    BadHeader {
        path: String,
        expected: String,
        found: String,
    },

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: unknown {field} level {value:?}; allowed levels: {allowed}")]
    UnknownLevel {
        row: usize,
        field: &'static str,
        value: String,
        allowed: String,
    },

    #[error("row {row}: week {week} outside the study range {first}..={last}")]
    WeekOutOfRange {
        row: usize,
        week: i32,
        first: i32,
        last: i32,
    },

    #[error("unknown week {week}; the model covers weeks {first}..={last}")]
    UnknownWeek { week: i32, first: i32, last: i32 },

    #[error("poststratification table {name:?}: missing cells: {missing}")]
    MissingCells { name: String, missing: String },

    #[error("poststratification table {name:?}: duplicate cell {cell} (row {row})")]
    DuplicateCell {
        name: String,
        cell: String,
        row: usize,
    },

    #[error("poststratification table {name:?} has zero total population")]
    EmptyTable { name: String },

    #[error("invalid week range: first ({first}) must not exceed last ({last})")]
    InvalidWeekRange { first: i32, last: i32 },

    #[error("invalid parameter draw: {0}")]
    InvalidDraw(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("config file {path}: {message}")]
    ConfigParse { path: String, message: String },

    #[error("log posterior is not finite at an interior point ({0}); this is an implementation bug")]
    NonFiniteDensity(String),

    #[error("log posterior is not finite at the initial point; re-initialize the chains elsewhere")]
    NonFiniteInit,

    #[error("need at least {needed} {what}, got {got}")]
    TooFew {
        needed: usize,
        got: usize,
        what: &'static str,
    },

    #[error("no posterior draws supplied")]
    EmptyDraws,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("series {name:?} has no usable observations")]
    EmptySeries { name: String },

    #[error("insufficient overlap between series {a:?} and {b:?} at lag {lag}: {got} overlapping differenced weeks, minimum is {needed}")]
    InsufficientOverlap {
        a: String,
        b: String,
        lag: i32,
        got: usize,
        needed: usize,
    },

    #[error("density is non-finite on the entire grid")]
    DegenerateGrid,

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
