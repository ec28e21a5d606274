use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Architecture {
    Pnn,
    DeepFm,
    XDeepFm,
    Difm,
}

impl Architecture {
    /// Report column order.
    pub const ALL: [Architecture; 4] = [Architecture::Pnn, Architecture::DeepFm, Architecture::XDeepFm, Architecture::Difm];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::Pnn => "pnn",
            Architecture::DeepFm => "deepfm",
            Architecture::XDeepFm => "xdeepfm",
            Architecture::Difm => "difm",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Architecture::Pnn => "PNN",
            Architecture::DeepFm => "DeepFM",
            Architecture::XDeepFm => "xDeepFM",
            Architecture::Difm => "DIFM",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown model `{s}` (expected pnn, deepfm, xdeepfm or difm)"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub embedding_dim: usize,
    pub hidden_units: Vec<usize>,
    pub activation: Activation,
    pub dropout: f64,
    pub cin_layer_sizes: Vec<usize>,
    pub attention_head_size: usize,
    pub attention_heads: usize,
}

impl ModelConfig {
    pub fn new(architecture: Architecture) -> Self {
        ModelSettings::default().for_architecture(architecture)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::InvalidConfig(m));
        if self.embedding_dim == 0 {
            return fail("embedding_dim must be positive".into());
        }
        if self.hidden_units.is_empty() || self.hidden_units.contains(&0) {
            return fail(format!("hidden_units must be non-empty and positive, got {:?}", self.hidden_units));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.architecture == Architecture::XDeepFm && (self.cin_layer_sizes.is_empty() || self.cin_layer_sizes.contains(&0)) {
            return fail("xdeepfm needs at least one CIN layer of positive size".into());
        }
        if self.architecture == Architecture::Difm && (self.attention_head_size == 0 || self.attention_heads == 0) {
            return fail("difm needs a positive attention head size and head count".into());
        }
        Ok(())
    }
}

/// Shared hyperparameters from which per-architecture configs are derived.
/// `dropout` and `activation` override the per-architecture defaults when set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    pub embedding_dim: usize,
    pub hidden_units: Vec<usize>,
    pub cin_layer_sizes: Vec<usize>,
    pub attention_head_size: usize,
    pub attention_heads: usize,
    pub dropout: Option<f64>,
    pub activation: Option<Activation>,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings {
            embedding_dim: 8,
            hidden_units: vec![256, 128, 64],
            cin_layer_sizes: vec![16, 16],
            attention_head_size: 32,
            attention_heads: 1,
            dropout: None,
            activation: None,
        }
    }
}

impl ModelSettings {
    pub fn for_architecture(&self, architecture: Architecture) -> ModelConfig {
        let (dropout, activation) = match architecture {
            Architecture::Pnn | Architecture::DeepFm => (0.0, Activation::Relu),
            Architecture::XDeepFm => (0.5, Activation::Relu),
            Architecture::Difm => (0.5, Activation::Tanh),
        };
        ModelConfig {
            architecture,
            embedding_dim: self.embedding_dim,
            hidden_units: self.hidden_units.clone(),
            activation: self.activation.unwrap_or(activation),
            dropout: self.dropout.unwrap_or(dropout),
            cin_layer_sizes: self.cin_layer_sizes.clone(),
            attention_head_size: self.attention_head_size,
            attention_heads: self.attention_heads,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn per_architecture_defaults() {
        let pnn = ModelConfig::new(Architecture::Pnn);
        assert_eq!(pnn.hidden_units, vec![256, 128, 64]);
        assert_eq!((pnn.dropout, pnn.activation), (0.0, Activation::Relu));
        let x = ModelConfig::new(Architecture::XDeepFm);
        assert_eq!((x.dropout, x.activation), (0.5, Activation::Relu));
        let d = ModelConfig::new(Architecture::Difm);
        assert_eq!((d.dropout, d.activation, d.attention_head_size), (0.5, Activation::Tanh, 32));
    }

    #[test]
    fn parses_names() {
        assert_eq!("xDeepFM".parse::<Architecture>().unwrap(), Architecture::XDeepFm);
        assert!("dcn".parse::<Architecture>().is_err());
    }
}
