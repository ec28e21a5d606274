use std::borrow::Cow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::schema::{FeatureSchema, FieldKind};
use super::vocab::VocabSet;
use super::FeatureError;

/// A raw, unencoded field value.
#[derive(Clone, Debug, PartialEq)]
pub enum RawValue<'a> {
    Text(Cow<'a, str>),
    Number(f64),
}

/// Anything that can supply raw field values by name.
pub trait FieldSource {
    fn raw(&self, field: &str) -> Option<RawValue<'_>>;
}

impl<S: FieldSource + ?Sized> FieldSource for &S {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        (**self).raw(field)
    }
}

/// Owned map-backed row, mostly for tests and interop.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawRow {
    values: BTreeMap<String, RawValue<'static>>,
}

impl RawRow {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(mut self, field: &str, value: &str) -> Self {
        self.values.insert(field.to_string(), RawValue::Text(Cow::Owned(value.to_string())));
        self
    }

    pub fn number(mut self, field: &str, value: f64) -> Self {
        self.values.insert(field.to_string(), RawValue::Number(value));
        self
    }
}

impl FieldSource for RawRow {
    fn raw(&self, field: &str) -> Option<RawValue<'_>> {
        self.values.get(field).map(|v| match v {
            RawValue::Text(t) => RawValue::Text(Cow::Borrowed(t.as_ref())),
            RawValue::Number(x) => RawValue::Number(*x),
        })
    }
}

/// Training-split mean and standard deviation of one numeric field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumericStats {
    pub mean: f64,
    pub std: f64,
}

impl NumericStats {
    pub fn standardize(&self, x: f64) -> f64 {
        (x - self.mean) / self.std
    }
}

fn numeric_value(field: &str, raw: RawValue<'_>) -> Result<f64, FeatureError> {
    let x = match raw {
        RawValue::Number(x) => x,
        RawValue::Text(t) => t
            .trim()
            .parse::<f64>()
            .map_err(|_| FeatureError::InvalidNumeric { field: field.to_string(), value: t.into_owned() })?,
    };
    if x.is_finite() {
        Ok(x)
    } else {
        Err(FeatureError::InvalidNumeric { field: field.to_string(), value: x.to_string() })
    }
}

/// Fits per-field mean and population standard deviation. Degenerate
/// (constant or empty) fields get `std = 1` so standardization stays finite.
pub fn fit_numeric_stats<S: FieldSource>(
    rows: impl IntoIterator<Item = S>,
    schema: &FeatureSchema,
) -> Result<BTreeMap<String, NumericStats>, FeatureError> {
    let names: Vec<&str> = schema.numeric().map(|f| f.name.as_str()).collect();
    let mut sums = vec![(0usize, 0.0f64, 0.0f64); names.len()];
    for row in rows {
        for (name, acc) in names.iter().zip(sums.iter_mut()) {
            let raw = row.raw(name).ok_or_else(|| FeatureError::MissingField(name.to_string()))?;
            let x = numeric_value(name, raw)?;
            acc.0 += 1;
            acc.1 += x;
            acc.2 += x * x;
        }
    }
    Ok(names
        .into_iter()
        .zip(sums)
        .map(|(name, (n, s, ss))| {
            let (mean, std) = if n == 0 {
                (0.0, 1.0)
            } else {
                let mean = s / n as f64;
                let var = (ss / n as f64 - mean * mean).max(0.0);
                let std = var.sqrt();
                (mean, if std > 1e-12 && std.is_finite() { std } else { 1.0 })
            };
            (name.to_string(), NumericStats { mean, std })
        })
        .collect())
}

/// One encoded row: a vocabulary index per categorical field and a
/// standardized value per numeric field, both in schema order.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedRow {
    pub categorical: Vec<u32>,
    pub numeric: Vec<f32>,
}

/// Stateless row encoder; safe to share across threads once built.
#[derive(Clone, Debug)]
pub struct Encoder {
    schema: FeatureSchema,
    vocabs: VocabSet,
    stats: BTreeMap<String, NumericStats>,
}

impl Encoder {
    pub fn new(
        schema: FeatureSchema,
        vocabs: VocabSet,
        stats: BTreeMap<String, NumericStats>,
    ) -> Result<Self, FeatureError> {
        for f in schema.fields() {
            match f.kind {
                FieldKind::Categorical if vocabs.get(&f.name).is_none() => {
                    return Err(FeatureError::MissingVocabulary(f.name.clone()))
                }
                FieldKind::Numeric if !stats.contains_key(&f.name) => {
                    return Err(FeatureError::MissingStats(f.name.clone()))
                }
                _ => {}
            }
        }
        let schema = vocabs.sized_schema(&schema);
        Ok(Encoder { schema, vocabs, stats })
    }

    /// Schema with vocabulary sizes filled in.
    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn vocabs(&self) -> &VocabSet {
        &self.vocabs
    }

    pub fn stats(&self) -> &BTreeMap<String, NumericStats> {
        &self.stats
    }

    pub fn encode_row<S: FieldSource + ?Sized>(&self, row: &S) -> Result<EncodedRow, FeatureError> {
        let mut categorical = Vec::with_capacity(self.schema.num_categorical());
        let mut numeric = Vec::with_capacity(self.schema.num_numeric());
        self.encode_into(row, &mut categorical, &mut numeric)?;
        Ok(EncodedRow { categorical, numeric })
    }

    /// Appends the encoding of `row` to flat buffers. On error nothing is appended.
    pub fn encode_into<S: FieldSource + ?Sized>(
        &self,
        row: &S,
        categorical: &mut Vec<u32>,
        numeric: &mut Vec<f32>,
    ) -> Result<(), FeatureError> {
        let (c0, n0) = (categorical.len(), numeric.len());
        let result = self.encode_fields(row, categorical, numeric);
        if result.is_err() {
            categorical.truncate(c0);
            numeric.truncate(n0);
        }
        result
    }

    fn encode_fields<S: FieldSource + ?Sized>(
        &self,
        row: &S,
        categorical: &mut Vec<u32>,
        numeric: &mut Vec<f32>,
    ) -> Result<(), FeatureError> {
        for f in self.schema.fields() {
            let raw = row.raw(&f.name).ok_or_else(|| FeatureError::MissingField(f.name.clone()))?;
            match f.kind {
                FieldKind::Categorical => {
                    let vocab = self.vocabs.get(&f.name).expect("checked at construction");
                    let idx = match raw {
                        RawValue::Text(t) => vocab.index_of(&t),
                        RawValue::Number(x) => vocab.index_of(&x.to_string()),
                    };
                    categorical.push(idx);
                }
                FieldKind::Numeric => {
                    let x = numeric_value(&f.name, raw)?;
                    numeric.push(self.stats[&f.name].standardize(x) as f32);
                }
            }
        }
        Ok(())
    }
}
