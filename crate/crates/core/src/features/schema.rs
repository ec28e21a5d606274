use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::FeatureError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Categorical,
    Numeric,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    /// Vocabulary size including the OOV slot; known once vocabularies are built.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
}

impl FieldSpec {
    pub fn categorical(name: &str) -> Self {
        FieldSpec { name: name.to_string(), kind: FieldKind::Categorical, vocab_size: None }
    }

    pub fn numeric(name: &str) -> Self {
        FieldSpec { name: name.to_string(), kind: FieldKind::Numeric, vocab_size: None }
    }
}

/// Ordered field declarations. Order is significant: it fixes the row layout of
/// encoded batches and the parameter layout of checkpoints.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<FieldSpec>", into = "Vec<FieldSpec>")]
pub struct FeatureSchema {
    fields: Vec<FieldSpec>,
}

impl TryFrom<Vec<FieldSpec>> for FeatureSchema {
    type Error = FeatureError;

    fn try_from(fields: Vec<FieldSpec>) -> Result<Self, Self::Error> {
        FeatureSchema::new(fields)
    }
}

impl From<FeatureSchema> for Vec<FieldSpec> {
    fn from(schema: FeatureSchema) -> Self {
        schema.fields
    }
}

impl FeatureSchema {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, FeatureError> {
        let mut seen = HashSet::new();
        for f in &fields {
            if !seen.insert(f.name.as_str()) {
                return Err(FeatureError::DuplicateField(f.name.clone()));
            }
            if f.kind == FieldKind::Numeric && f.vocab_size.is_some() {
                return Err(FeatureError::InvalidSchema(format!("numeric field {} has a vocabulary size", f.name)));
            }
        }
        Ok(FeatureSchema { fields })
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn categorical(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.kind == FieldKind::Categorical)
    }

    pub fn numeric(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.kind == FieldKind::Numeric)
    }

    pub fn num_categorical(&self) -> usize {
        self.categorical().count()
    }

    pub fn num_numeric(&self) -> usize {
        self.numeric().count()
    }

    /// Vocabulary sizes of the categorical fields, in field order.
    pub fn vocab_sizes(&self) -> Result<Vec<usize>, FeatureError> {
        self.categorical()
            .map(|f| f.vocab_size.ok_or_else(|| FeatureError::MissingVocabulary(f.name.clone())))
            .collect()
    }

    pub fn with_vocab_sizes(&self, sizes: impl Fn(&str) -> Option<usize>) -> Self {
        let fields = self
            .fields
            .iter()
            .map(|f| FieldSpec {
                vocab_size: match f.kind {
                    FieldKind::Categorical => sizes(&f.name),
                    FieldKind::Numeric => None,
                },
                ..f.clone()
            })
            .collect();
        FeatureSchema { fields }
    }

    /// Short stable hash of names, kinds, order and vocabulary sizes.
    pub fn fingerprint(&self) -> String {
        let canonical = serde_json::to_vec(&self.fields).expect("schema serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
