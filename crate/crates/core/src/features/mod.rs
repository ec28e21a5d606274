//! Feature schema, per-field vocabularies, row encoding and embedding lookup.

mod embed;
mod encode;
mod schema;
mod vocab;

pub use embed::embed_batch;
pub use encode::{fit_numeric_stats, EncodedRow, Encoder, FieldSource, NumericStats, RawRow, RawValue};
pub use schema::{FeatureSchema, FieldKind, FieldSpec};
pub use vocab::{build_vocabs, FieldVocab, VocabSet, OOV_INDEX};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FeatureError {
    #[error("row is missing field `{0}`")]
    MissingField(String),
    #[error("duplicate field `{0}` in schema")]
    DuplicateField(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("field `{field}` expects a number, got `{value}`")]
    InvalidNumeric { field: String, value: String },
    #[error("no vocabulary for categorical field `{0}`")]
    MissingVocabulary(String),
    #[error("no standardization statistics for numeric field `{0}`")]
    MissingStats(String),
}
