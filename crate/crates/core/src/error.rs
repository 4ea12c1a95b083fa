use std::path::PathBuf;

use thiserror::Error;

/// Every failure the toolkit can report.
///
/// Each variant carries a stable machine-readable code (see [`Error::code`])
/// and a distinct process exit status (see [`Error::exit_code`]).
#[derive(Debug, Error)]
pub enum Error {
    // score matrices and labeled collections
    #[error("entry ({row}, {col}) is negative: {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },
    #[error("entry ({row}, {col}) exceeds 1: {value}")]
    EntryAboveOne { row: usize, col: usize, value: f64 },
    #[error("row {row} sums to {sum}, outside tolerance {tolerance:e}")]
    RowSumOutOfTolerance { row: usize, sum: f64, tolerance: f64 },
    #[error("need at least 2 classes, got {0}")]
    TooFewClasses(usize),
    #[error("row {row} has {found} entries, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("non-finite value at ({row}, {col})")]
    NonFiniteInput { row: usize, col: usize },
    #[error("length mismatch: {what} ({left} vs {right})")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("duplicate sample id '{0}'")]
    DuplicateSampleId(String),
    #[error("label {label} of sample '{id}' is outside [0, {num_classes})")]
    LabelOutOfRange { id: String, label: usize, num_classes: usize },
    #[error("sample '{0}' has an unknown label")]
    UnknownLabel(String),

    // splits
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    RatiosDoNotSumToOne([f64; 4]),
    #[error("duplicate id '{0}' in split input")]
    DuplicateIds(String),
    #[error("sample '{0}' has no label but stratification was requested")]
    UnknownLabelWithStratification(String),
    #[error("sample '{0}' is missing from the split manifest")]
    IdMissingFromManifest(String),
    #[error("id '{0}' collides after namespacing")]
    DuplicateIdAfterNamespacing(String),

    // conformal
    #[error("calibration set is empty")]
    EmptyCalibrationSet,
    #[error("alpha {0} must lie strictly between 0 and 1")]
    AlphaOutOfRange(f64),
    #[error("class count mismatch: expected {expected}, found {found}")]
    ClassCountMismatch { expected: usize, found: usize },

    // ensemble
    #[error("ensembling needs at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("model {model} id sequence differs from model 0 at row {row}")]
    IdSequenceMismatch { model: usize, row: usize },
    #[error("model {model} disagrees on the label of sample '{id}'")]
    LabelMismatch { model: usize, id: String },
    #[error("bad ensemble weights: {0}")]
    BadWeights(String),
    #[error("model {model} does not cover the same id set: {detail}")]
    IdSetMismatch { model: usize, detail: String },

    // metrics
    #[error("test set is empty")]
    EmptyTestSet,
    #[error("histogram needs at least one bin")]
    ZeroBins,

    // simulator
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),

    // io
    #[error("{path}: missing or malformed header: {detail}")]
    MissingHeader { path: PathBuf, detail: String },
    #[error("{path}: line {line}: non-numeric cell '{cell}'")]
    NonNumericCell { path: PathBuf, line: u64, cell: String },
    #[error("{path}: line {line}: {detail}")]
    MalformedRow { path: PathBuf, line: u64, detail: String },
    #[error("malformed set cell '{0}'")]
    MalformedSetCell(String),
    #[error("format_version '{found}' is not supported (expected '{expected}')")]
    SchemaVersionMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    InFile { path: PathBuf, source: Box<Error> },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Attach a file path to an error raised while decoding that file.
    pub(crate) fn in_file(self, path: impl Into<PathBuf>) -> Self {
        match self {
            e @ (Error::InFile { .. }
            | Error::Io { .. }
            | Error::Csv { .. }
            | Error::Json { .. }
            | Error::MissingHeader { .. }
            | Error::NonNumericCell { .. }
            | Error::MalformedRow { .. }) => e,
            e => Error::InFile { path: path.into(), source: Box::new(e) },
        }
    }

    /// The innermost error, with file context stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::InFile { source, .. } => source.root(),
            e => e,
        }
    }

    /// Stable upper-case identifier, used in `ERROR <code>: <detail>` lines.
    pub fn code(&self) -> &'static str {
        self.root().info().0
    }

    /// Process exit status for this error. Never 0, 1 or 2.
    pub fn exit_code(&self) -> i32 {
        self.root().info().1
    }

    fn info(&self) -> (&'static str, i32) {
        match self {
            Error::NegativeEntry { .. } => ("NEGATIVE_ENTRY", 10),
            Error::EntryAboveOne { .. } => ("ENTRY_ABOVE_ONE", 11),
            Error::RowSumOutOfTolerance { .. } => ("ROW_SUM_OUT_OF_TOLERANCE", 12),
            Error::TooFewClasses(_) => ("TOO_FEW_CLASSES", 13),
            Error::RaggedRow { .. } => ("RAGGED_ROW", 14),
            Error::NonFiniteInput { .. } => ("NON_FINITE_INPUT", 15),
            Error::LengthMismatch { .. } => ("LENGTH_MISMATCH", 16),
            Error::DuplicateSampleId(_) => ("DUPLICATE_SAMPLE_ID", 17),
            Error::LabelOutOfRange { .. } => ("LABEL_OUT_OF_RANGE", 18),
            Error::UnknownLabel(_) => ("UNKNOWN_LABEL", 19),
            Error::RatiosDoNotSumToOne(_) => ("RATIOS_DO_NOT_SUM_TO_ONE", 20),
            Error::DuplicateIds(_) => ("DUPLICATE_IDS", 21),
            Error::UnknownLabelWithStratification(_) => ("UNKNOWN_LABEL_WITH_STRATIFICATION", 22),
            Error::IdMissingFromManifest(_) => ("ID_MISSING_FROM_MANIFEST", 23),
            Error::DuplicateIdAfterNamespacing(_) => ("DUPLICATE_ID_AFTER_NAMESPACING", 24),
            Error::EmptyCalibrationSet => ("EMPTY_CALIBRATION_SET", 30),
            Error::AlphaOutOfRange(_) => ("ALPHA_OUT_OF_RANGE", 31),
            Error::ClassCountMismatch { .. } => ("CLASS_COUNT_MISMATCH", 32),
            Error::TooFewModels(_) => ("TOO_FEW_MODELS", 40),
            Error::IdSequenceMismatch { .. } => ("ID_SEQUENCE_MISMATCH", 41),
            Error::LabelMismatch { .. } => ("LABEL_MISMATCH", 42),
            Error::BadWeights(_) => ("BAD_WEIGHTS", 43),
            Error::IdSetMismatch { .. } => ("ID_SET_MISMATCH", 44),
            Error::EmptyTestSet => ("EMPTY_TEST_SET", 50),
            Error::ZeroBins => ("ZERO_BINS", 51),
            Error::InvalidConfig(_) => ("INVALID_CONFIG", 60),
            Error::MissingHeader { .. } => ("MISSING_HEADER", 70),
            Error::NonNumericCell { .. } => ("NON_NUMERIC_CELL", 71),
            Error::MalformedRow { .. } => ("MALFORMED_ROW", 72),
            Error::MalformedSetCell(_) => ("MALFORMED_SET_CELL", 73),
            Error::SchemaVersionMismatch { .. } => ("SCHEMA_VERSION_MISMATCH", 74),
            Error::Json { .. } => ("MALFORMED_JSON", 75),
            Error::Csv { .. } => ("MALFORMED_CSV", 76),
            Error::Io { .. } => ("IO", 77),
            Error::InFile { source, .. } => source.info(),
        }
    }

    /// `(code, exit status, meaning)` for every error kind, for `--help`.
    pub fn catalog() -> &'static [(&'static str, i32, &'static str)] {
        &[
            ("NEGATIVE_ENTRY", 10, "a probability is negative"),
            ("ENTRY_ABOVE_ONE", 11, "a probability exceeds 1"),
            ("ROW_SUM_OUT_OF_TOLERANCE", 12, "a score row does not sum to 1"),
            ("TOO_FEW_CLASSES", 13, "fewer than 2 classes"),
            ("RAGGED_ROW", 14, "row length differs from the header"),
            ("NON_FINITE_INPUT", 15, "NaN or infinite value"),
            ("LENGTH_MISMATCH", 16, "inputs have different lengths"),
            ("DUPLICATE_SAMPLE_ID", 17, "a sample id appears twice"),
            ("LABEL_OUT_OF_RANGE", 18, "label outside [0, K)"),
            ("UNKNOWN_LABEL", 19, "operation needs a known label"),
            ("RATIOS_DO_NOT_SUM_TO_ONE", 20, "bad split ratios"),
            ("DUPLICATE_IDS", 21, "duplicate id in split input"),
            ("UNKNOWN_LABEL_WITH_STRATIFICATION", 22, "stratified split needs labels"),
            ("ID_MISSING_FROM_MANIFEST", 23, "sample not in manifest"),
            ("DUPLICATE_ID_AFTER_NAMESPACING", 24, "merged ids collide"),
            ("EMPTY_CALIBRATION_SET", 30, "no calibration rows"),
            ("ALPHA_OUT_OF_RANGE", 31, "alpha outside (0, 1)"),
            ("CLASS_COUNT_MISMATCH", 32, "inputs disagree on K"),
            ("TOO_FEW_MODELS", 40, "ensemble needs >= 2 models"),
            ("ID_SEQUENCE_MISMATCH", 41, "models list samples in different order"),
            ("LABEL_MISMATCH", 42, "models disagree on a label"),
            ("BAD_WEIGHTS", 43, "invalid ensemble weights"),
            ("ID_SET_MISMATCH", 44, "models cover different samples"),
            ("EMPTY_TEST_SET", 50, "nothing to evaluate"),
            ("ZERO_BINS", 51, "histogram bin count is 0"),
            ("INVALID_CONFIG", 60, "invalid simulator config"),
            ("MISSING_HEADER", 70, "missing or malformed CSV header"),
            ("NON_NUMERIC_CELL", 71, "a numeric cell failed to parse"),
            ("MALFORMED_ROW", 72, "a CSV row is malformed"),
            ("MALFORMED_SET_CELL", 73, "prediction-set cell not canonical"),
            ("SCHEMA_VERSION_MISMATCH", 74, "unsupported format_version"),
            ("MALFORMED_JSON", 75, "JSON does not match the schema"),
            ("MALFORMED_CSV", 76, "CSV could not be parsed"),
            ("IO", 77, "file could not be read or written"),
        ]
    }
}
