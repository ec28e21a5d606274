//! Run configuration: one TOML file describing a complete experiment.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{fields, ContentType, DatasetConfig, SplitSpec};
use crate::features::{FeatureSchema, FieldKind, FieldSpec};
use crate::models::ModelSettings;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;
use crate::CtrError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    /// Run directory; every artifact is written below it.
    pub workdir: PathBuf,
    /// Event log; defaults to `<workdir>/data/events.csv`.
    #[serde(default)]
    pub logs: Option<PathBuf>,
}

/// Epochs per content type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpochMap {
    pub drug: usize,
    pub drug_family: usize,
    pub video_chapter: usize,
    pub video_module: usize,
}

impl Default for EpochMap {
    fn default() -> Self {
        EpochMap { drug: 10, drug_family: 10, video_chapter: 20, video_module: 35 }
    }
}

impl EpochMap {
    pub fn get(&self, content_type: ContentType) -> usize {
        match content_type {
            ContentType::Drug => self.drug,
            ContentType::DrugFamily => self.drug_family,
            ContentType::VideoChapter => self.video_chapter,
            ContentType::VideoModule => self.video_module,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub early_stopping_patience: Option<usize>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSettings {
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            seed: t.seed,
            early_stopping_patience: t.early_stopping_patience,
        }
    }
}

fn default_country() -> String {
    "synthetic".into()
}

fn default_content_types() -> Vec<ContentType> {
    ContentType::ALL.to_vec()
}

fn default_max_malformed() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Dataset tag shown in report rows.
    #[serde(default = "default_country")]
    pub country: String,
    pub paths: Paths,
    #[serde(default = "default_content_types")]
    pub content_types: Vec<ContentType>,
    /// Feature fields; defaults to the standard eight-field schema.
    #[serde(default)]
    pub schema: Option<Vec<FieldSpec>>,
    pub split: SplitSpec,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_max_malformed")]
    pub max_malformed_fraction: f64,
    #[serde(default)]
    pub model: ModelSettings,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub epochs: EpochMap,
    #[serde(default)]
    pub synth: Option<SynthConfig>,
}

const KNOWN_FIELDS: [(&str, FieldKind); 8] = [
    (fields::USER_ID, FieldKind::Categorical),
    (fields::CONTENT_ID, FieldKind::Categorical),
    (fields::CONTENT_TYPE, FieldKind::Categorical),
    (fields::DAY, FieldKind::Categorical),
    (fields::MONTH, FieldKind::Categorical),
    (fields::CONNECTION_FREQUENCY, FieldKind::Numeric),
    (fields::CONTENT_TOTAL_CLICKS, FieldKind::Numeric),
    (fields::USER_CONTENT_CLICKS, FieldKind::Numeric),
];

impl RunConfig {
    /// Parses and validates; relative paths are resolved against the file's directory.
    pub fn load(path: &Path) -> Result<Self, CtrError> {
        let text = fs::read_to_string(path).map_err(|e| CtrError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self, CtrError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CtrError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn resolve_paths(&mut self, base: &Path) {
        if self.paths.workdir.is_relative() {
            self.paths.workdir = base.join(&self.paths.workdir);
        }
        if let Some(logs) = &self.paths.logs {
            if logs.is_relative() {
                self.paths.logs = Some(base.join(logs));
            }
        }
    }

    pub fn validate(&self) -> Result<(), CtrError> {
        self.split.validate()?;
        self.feature_schema()?;
        if self.content_types.is_empty() {
            return Err(CtrError::Config("content_types must not be empty".into()));
        }
        if !(0.0..=1.0).contains(&self.max_malformed_fraction) {
            return Err(CtrError::Config("max_malformed_fraction must be in [0, 1]".into()));
        }
        if self.dataset.negative_ratio < 0.0 || !self.dataset.negative_ratio.is_finite() {
            return Err(CtrError::Config("dataset.negative_ratio must be >= 0".into()));
        }
        for ct in &self.content_types {
            self.train_config(*ct).validate()?;
        }
        for arch in crate::models::Architecture::ALL {
            self.model.for_architecture(arch).validate()?;
        }
        if let Some(s) = &self.synth {
            s.validate()?;
        }
        Ok(())
    }

    pub fn feature_schema(&self) -> Result<FeatureSchema, CtrError> {
        let Some(fields) = &self.schema else {
            return Ok(crate::dataset::default_schema());
        };
        for f in fields {
            match KNOWN_FIELDS.iter().find(|(n, _)| *n == f.name) {
                None => return Err(CtrError::Config(format!("unknown feature field `{}`", f.name))),
                Some((_, kind)) if *kind != f.kind => {
                    return Err(CtrError::Config(format!("field `{}` must be {:?}", f.name, kind)))
                }
                _ => {}
            }
        }
        Ok(FeatureSchema::new(fields.clone())?)
    }

    pub fn train_config(&self, content_type: ContentType) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.get(content_type),
            batch_size: self.train.batch_size,
            learning_rate: self.train.learning_rate,
            seed: self.train.seed,
            early_stopping_patience: self.train.early_stopping_patience,
        }
    }

    pub fn logs_path(&self) -> PathBuf {
        self.paths.logs.clone().unwrap_or_else(|| self.paths.workdir.join("data").join("events.csv"))
    }

    /// Applies `--seed`: every seed in the config takes the given value.
    pub fn override_seed(&mut self, seed: u64) {
        self.train.seed = seed;
        self.split.seed = seed;
        if let Some(s) = &mut self.synth {
            s.seed = seed;
        }
    }

    /// SHA-256 of the canonical serialized config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(json))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[paths]
workdir = "run"

[split]
train_cutoff_date = "2021-03-01"
test_date = "2021-03-01"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.epochs.get(ContentType::VideoModule), 35);
        assert_eq!(cfg.split.validation_fraction, 0.2);
        assert_eq!(cfg.feature_schema().unwrap().fields().len(), 8);
        assert_eq!(cfg.train_config(ContentType::Drug).batch_size, 256);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml(&format!("{MINIMAL}\n[train]\nbatchsize = 3\n")).unwrap_err();
        assert!(matches!(err, CtrError::Config(_)));
        let err = RunConfig::from_toml(&format!("colour = 1\n{MINIMAL}")).unwrap_err();
        assert!(matches!(err, CtrError::Config(_)));
    }

    #[test]
    fn bad_split_is_a_config_error() {
        let text = MINIMAL.replace("test_date = \"2021-03-01\"", "test_date = \"2021-02-01\"");
        assert!(matches!(RunConfig::from_toml(&text), Err(CtrError::Config(_))));
    }

    #[test]
    fn round_trips_through_toml() {
        let cfg = RunConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(RunConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }
}
