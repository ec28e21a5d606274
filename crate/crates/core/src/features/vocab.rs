use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use super::encode::{FieldSource, RawValue};
use super::schema::FeatureSchema;

/// Index reserved in every vocabulary for values not seen at build time.
pub const OOV_INDEX: u32 = 0;

/// Bijection between the known values of one categorical field and `1..len()`,
/// with index 0 reserved for out-of-vocabulary values.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct FieldVocab {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl From<Vec<String>> for FieldVocab {
    fn from(values: Vec<String>) -> Self {
        FieldVocab::from_values(values)
    }
}

impl From<FieldVocab> for Vec<String> {
    fn from(v: FieldVocab) -> Self {
        v.values
    }
}

impl FieldVocab {
    /// Sorts and deduplicates `values` before assigning indices `1..`.
    pub fn from_values(values: impl IntoIterator<Item = String>) -> Self {
        let sorted: BTreeSet<String> = values.into_iter().collect();
        let values: Vec<String> = sorted.into_iter().collect();
        let index = values.iter().enumerate().map(|(i, v)| (v.clone(), i as u32 + 1)).collect();
        FieldVocab { values, index }
    }

    /// Size including the OOV slot.
    pub fn len(&self) -> usize {
        self.values.len() + 1
    }

    /// True when only the OOV slot exists.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, value: &str) -> u32 {
        self.index.get(value).copied().unwrap_or(OOV_INDEX)
    }

    pub fn value_of(&self, index: u32) -> Option<&str> {
        match index {
            OOV_INDEX => None,
            i => self.values.get(i as usize - 1).map(String::as_str),
        }
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }
}

/// Vocabularies for every categorical field of a schema, keyed by field name.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabSet {
    vocabs: BTreeMap<String, FieldVocab>,
}

impl VocabSet {
    pub fn get(&self, field: &str) -> Option<&FieldVocab> {
        self.vocabs.get(field)
    }

    pub fn insert(&mut self, field: &str, vocab: FieldVocab) {
        self.vocabs.insert(field.to_string(), vocab);
    }

    pub fn size_of(&self, field: &str) -> Option<usize> {
        self.vocabs.get(field).map(FieldVocab::len)
    }

    /// The schema with every categorical field's vocabulary size filled in.
    pub fn sized_schema(&self, schema: &FeatureSchema) -> FeatureSchema {
        schema.with_vocab_sizes(|name| self.size_of(name))
    }
}

/// Collects the distinct values of each categorical field. Rows that lack a
/// categorical field simply contribute nothing to it.
pub fn build_vocabs<S: FieldSource>(rows: impl IntoIterator<Item = S>, schema: &FeatureSchema) -> VocabSet {
    let names: Vec<&str> = schema.categorical().map(|f| f.name.as_str()).collect();
    let mut seen: Vec<BTreeSet<String>> = vec![BTreeSet::new(); names.len()];
    for row in rows {
        for (name, set) in names.iter().zip(seen.iter_mut()) {
            match row.raw(name) {
                Some(RawValue::Text(t)) => {
                    if !set.contains(t.as_ref()) {
                        set.insert(t.into_owned());
                    }
                }
                Some(RawValue::Number(x)) => {
                    set.insert(x.to_string());
                }
                None => {}
            }
        }
    }
    let mut out = VocabSet::default();
    for (name, set) in names.into_iter().zip(seen) {
        out.insert(name, FieldVocab::from_values(set));
    }
    out
}
