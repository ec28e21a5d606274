use std::collections::BTreeSet;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use super::events::{ContentType, InteractionEvent};
use super::examples::{build_examples, ExampleSet};
use super::split::{downsample_negatives, split, SplitIndices, SplitSpec};
use super::{fields, DatasetError};
use crate::features::{build_vocabs, fit_numeric_stats, Encoder, FeatureSchema, FieldSource, RawValue};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Reference days before the cutoff that yield training examples. Older
    /// events still contribute to features.
    pub example_window_days: u32,
    /// Negatives kept per positive in the training split; `0` keeps all.
    pub negative_ratio: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { example_window_days: 21, negative_ratio: 4.0 }
    }
}

/// Flat, model-ready batch storage.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EncodedExamples {
    pub num_categorical: usize,
    pub num_numeric: usize,
    /// `len * num_categorical` vocabulary indices.
    pub categorical: Vec<u32>,
    /// `len * num_numeric` standardized values.
    pub numeric: Vec<f32>,
    pub labels: Vec<f32>,
    /// Index into the source set's `users`.
    pub users: Vec<u32>,
    /// Index into the source set's `contents`.
    pub contents: Vec<u32>,
    /// Fingerprint of the sized schema the rows were encoded with.
    pub schema_fingerprint: String,
}

impl EncodedExamples {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_positive(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0.5).count()
    }

    pub fn as_batch(&self) -> crate::models::BatchInput<'_> {
        crate::models::BatchInput { len: self.len(), categorical: &self.categorical, numeric: &self.numeric }
    }

    pub fn encode(encoder: &Encoder, set: &ExampleSet, indices: &[usize]) -> Result<Self, DatasetError> {
        let schema = encoder.schema();
        let mut out = EncodedExamples {
            num_categorical: schema.num_categorical(),
            num_numeric: schema.num_numeric(),
            schema_fingerprint: schema.fingerprint(),
            ..Default::default()
        };
        out.categorical.reserve(indices.len() * out.num_categorical);
        out.numeric.reserve(indices.len() * out.num_numeric);
        for &i in indices {
            encoder.encode_into(&set.row(i), &mut out.categorical, &mut out.numeric)?;
            let e = &set.examples[i];
            out.labels.push(if e.label { 1.0 } else { 0.0 });
            out.users.push(e.user);
            out.contents.push(e.content);
        }
        Ok(out)
    }

    /// Rows `start..end` as an owned batch.
    pub fn slice(&self, start: usize, end: usize) -> EncodedExamples {
        self.gather(&(start..end).collect::<Vec<_>>())
    }

    pub fn gather(&self, rows: &[usize]) -> EncodedExamples {
        let (nc, nn) = (self.num_categorical, self.num_numeric);
        let mut out = EncodedExamples {
            num_categorical: nc,
            num_numeric: nn,
            schema_fingerprint: self.schema_fingerprint.clone(),
            ..Default::default()
        };
        for &r in rows {
            out.categorical.extend_from_slice(&self.categorical[r * nc..(r + 1) * nc]);
            out.numeric.extend_from_slice(&self.numeric[r * nn..(r + 1) * nn]);
            out.labels.push(self.labels[r]);
            out.users.push(self.users[r]);
            out.contents.push(self.contents[r]);
        }
        out
    }
}

/// Event view that hides content ids of other types, so the `content_id`
/// vocabulary only holds items of the modeled type.
struct TypedEvent<'a> {
    event: &'a InteractionEvent,
    content_type: ContentType,
}

impl FieldSource for TypedEvent<'_> {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        if field == fields::CONTENT_ID && self.event.content_type != self.content_type {
            return None;
        }
        self.event.raw(field)
    }
}

/// Everything needed to train and evaluate one content type.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub content_type: ContentType,
    pub set: ExampleSet,
    pub indices: SplitIndices,
    pub encoder: Encoder,
    pub train: EncodedExamples,
    pub validation: EncodedExamples,
    pub test: EncodedExamples,
}

/// Reference dates that produce examples: the window before the cutoff plus the test day.
pub fn example_dates(spec: &SplitSpec, cfg: &DatasetConfig) -> Vec<NaiveDate> {
    let mut dates = BTreeSet::new();
    for back in 1..=u64::from(cfg.example_window_days) {
        dates.insert(spec.train_cutoff_date - Days::new(back));
    }
    dates.insert(spec.test_date);
    dates.into_iter().collect()
}

/// Builds, splits, downsamples and encodes the examples of one content type.
/// Vocabularies see only pre-cutoff events; numeric statistics see only the
/// (downsampled) training split.
pub fn prepare(
    events: &[InteractionEvent],
    content_type: ContentType,
    schema: &FeatureSchema,
    spec: &SplitSpec,
    cfg: &DatasetConfig,
) -> Result<PreparedData, DatasetError> {
    spec.validate()?;
    let set = build_examples(events, content_type, &example_dates(spec, cfg));
    let mut indices = split(&set, spec)?;
    if cfg.negative_ratio > 0.0 {
        indices.train = downsample_negatives(&set, &indices.train, cfg.negative_ratio, spec.seed ^ 0x5eed);
    }
    if indices.train.is_empty() {
        return Err(DatasetError::InvalidSplit(format!("no {content_type} training examples before the cutoff")));
    }
    let history = events
        .iter()
        .filter(|e| e.date() < spec.train_cutoff_date)
        .map(|event| TypedEvent { event, content_type });
    let vocabs = build_vocabs(history, schema);
    let stats = fit_numeric_stats(set.rows(&indices.train), schema)?;
    let encoder = Encoder::new(schema.clone(), vocabs, stats)?;
    let train = EncodedExamples::encode(&encoder, &set, &indices.train)?;
    let validation = EncodedExamples::encode(&encoder, &set, &indices.validation)?;
    let test = EncodedExamples::encode(&encoder, &set, &indices.test)?;
    log::info!(
        "{content_type}: {} train ({} pos), {} validation, {} test examples",
        train.len(),
        train.num_positive(),
        validation.len(),
        test.len()
    );
    Ok(PreparedData { content_type, set, indices, encoder, train, validation, test })
}
