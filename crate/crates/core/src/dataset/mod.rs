//! Event ingestion, next-day example construction and train/validation/test splitting.

mod events;
mod examples;
mod pipeline;
mod split;

pub use events::{
    format_timestamp, ingest_logs, parse_timestamp, read_events, sort_events, write_events, ContentType, IngestReport,
    InteractionEvent, LogFormat,
};
pub use examples::{build_examples, candidate_rows, ExampleRow, ExampleSet, LabeledExample, CONNECTION_WINDOW_DAYS};
pub use pipeline::{example_dates, prepare, DatasetConfig, EncodedExamples, PreparedData};
pub use split::{downsample_negatives, split, SplitIndices, SplitSpec};

use crate::features::{FeatureError, FeatureSchema, FieldSpec};

/// Field names of the standard schema.
pub mod fields {
    pub const USER_ID: &str = "user_id";
    pub const CONTENT_ID: &str = "content_id";
    pub const CONTENT_TYPE: &str = "content_type";
    pub const DAY: &str = "day";
    pub const MONTH: &str = "month";
    pub const CONNECTION_FREQUENCY: &str = "connection_frequency";
    pub const CONTENT_TOTAL_CLICKS: &str = "content_total_clicks";
    pub const USER_CONTENT_CLICKS: &str = "user_content_clicks";
}

/// Five categorical fields followed by three numeric ones.
pub fn default_schema() -> FeatureSchema {
    use fields::*;
    FeatureSchema::new(vec![
        FieldSpec::categorical(USER_ID),
        FieldSpec::categorical(CONTENT_ID),
        FieldSpec::categorical(CONTENT_TYPE),
        FieldSpec::categorical(DAY),
        FieldSpec::categorical(MONTH),
        FieldSpec::numeric(CONNECTION_FREQUENCY),
        FieldSpec::numeric(CONTENT_TOTAL_CLICKS),
        FieldSpec::numeric(USER_CONTENT_CLICKS),
    ])
    .expect("static schema is valid")
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read `{path}`: {message}")]
    Io { path: String, message: String },
    #[error("bad log header: {0}")]
    BadHeader(String),
    #[error("{malformed} of {total} log rows are malformed (limit {threshold})")]
    TooManyMalformed { malformed: usize, total: usize, threshold: f64 },
    #[error("no {content_type} examples on test date {date}")]
    EmptyTestSlice { content_type: ContentType, date: chrono::NaiveDate },
    #[error("invalid split: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
}
