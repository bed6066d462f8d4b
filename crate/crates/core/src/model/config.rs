use std::str::FromStr;

use thiserror::Error;

use super::{StackLayer, Summary, SummaryRow};
use crate::layers::{Activation, LayerSpec};
use crate::vectorizer::VectorizerConfig;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("line {line}: expected `key=value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("bad value {value:?} for `{key}`")]
    BadValue { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Hyperparameters of the detector. Defaults reproduce the reference
/// architecture (4,936,609 parameters).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub max_tokens: usize,
    pub ngram_order: usize,
    pub embed_dim: usize,
    pub sequence_length: usize,
    pub lstm_hidden: usize,
    pub attn_heads: usize,
    pub attn_key_dim: usize,
    pub ffn_dim: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
    pub conv_stride: usize,
    pub dense_units: usize,
    pub dropout_rate: f64,
    pub block_dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            max_tokens: 75_000,
            ngram_order: 1,
            embed_dim: 64,
            sequence_length: 1024,
            lstm_hidden: 32,
            attn_heads: 2,
            attn_key_dim: 64,
            ffn_dim: 32,
            conv_filters: 128,
            conv_kernel: 7,
            conv_stride: 3,
            dense_units: 128,
            dropout_rate: 0.5,
            block_dropout: 0.1,
            seed: 0,
        }
    }
}

pub(crate) fn parse_value<V: FromStr>(key: &str, value: &str) -> Result<V, ConfigError> {
    value.trim().parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
    })
}

/// Iterates `key=value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> impl Iterator<Item = Result<(usize, &str, &str), ConfigError>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            return None;
        }
        Some(match line.split_once('=') {
            Some((k, v)) => Ok((i + 1, k.trim(), v.trim())),
            None => Err(ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            }),
        })
    })
}

impl ModelConfig {
    pub const KEYS: [&'static str; 15] = [
        "max_tokens",
        "ngram_order",
        "embed_dim",
        "sequence_length",
        "lstm_hidden",
        "attn_heads",
        "attn_key_dim",
        "ffn_dim",
        "conv_filters",
        "conv_kernel",
        "conv_stride",
        "dense_units",
        "dropout_rate",
        "block_dropout",
        "seed",
    ];

    /// Sets one field by name. Returns `Ok(false)` for keys this config does
    /// not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        match key {
            "max_tokens" => self.max_tokens = parse_value(key, value)?,
            "ngram_order" => self.ngram_order = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "sequence_length" => self.sequence_length = parse_value(key, value)?,
            "lstm_hidden" => self.lstm_hidden = parse_value(key, value)?,
            "attn_heads" => self.attn_heads = parse_value(key, value)?,
            "attn_key_dim" => self.attn_key_dim = parse_value(key, value)?,
            "ffn_dim" => self.ffn_dim = parse_value(key, value)?,
            "conv_filters" => self.conv_filters = parse_value(key, value)?,
            "conv_kernel" => self.conv_kernel = parse_value(key, value)?,
            "conv_stride" => self.conv_stride = parse_value(key, value)?,
            "dense_units" => self.dense_units = parse_value(key, value)?,
            "dropout_rate" => self.dropout_rate = parse_value(key, value)?,
            "block_dropout" => self.block_dropout = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_kv(&self) -> String {
        let values = [
            self.max_tokens.to_string(),
            self.ngram_order.to_string(),
            self.embed_dim.to_string(),
            self.sequence_length.to_string(),
            self.lstm_hidden.to_string(),
            self.attn_heads.to_string(),
            self.attn_key_dim.to_string(),
            self.ffn_dim.to_string(),
            self.conv_filters.to_string(),
            self.conv_kernel.to_string(),
            self.conv_stride.to_string(),
            self.dense_units.to_string(),
            self.dropout_rate.to_string(),
            self.block_dropout.to_string(),
            self.seed.to_string(),
        ];
        Self::KEYS
            .iter()
            .zip(values)
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn from_kv(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for entry in parse_kv_lines(text) {
            let (_, key, value) = entry?;
            if !cfg.set(key, value)? {
                return Err(ConfigError::UnknownKey(key.to_string()));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("max_tokens", self.max_tokens),
            ("ngram_order", self.ngram_order),
            ("embed_dim", self.embed_dim),
            ("sequence_length", self.sequence_length),
            ("lstm_hidden", self.lstm_hidden),
            ("attn_heads", self.attn_heads),
            ("attn_key_dim", self.attn_key_dim),
            ("ffn_dim", self.ffn_dim),
            ("conv_filters", self.conv_filters),
            ("conv_kernel", self.conv_kernel),
            ("conv_stride", self.conv_stride),
            ("dense_units", self.dense_units),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(ConfigError::Invalid(format!("{k} must be positive")));
        }
        if self.max_tokens < 3 {
            return Err(ConfigError::Invalid("max_tokens must be >= 3".into()));
        }
        for (k, r) in [
            ("dropout_rate", self.dropout_rate),
            ("block_dropout", self.block_dropout),
        ] {
            if !(0.0..1.0).contains(&r) {
                return Err(ConfigError::Invalid(format!("{k} must be in [0, 1)")));
            }
        }
        if self.sequence_length < self.conv_kernel {
            return Err(ConfigError::Invalid(format!(
                "sequence_length {} is shorter than conv_kernel {}",
                self.sequence_length, self.conv_kernel
            )));
        }
        Ok(())
    }

    pub fn vectorizer(&self) -> VectorizerConfig {
        VectorizerConfig {
            max_tokens: self.max_tokens,
            ngram_order: self.ngram_order,
            sequence_length: self.sequence_length,
        }
    }

    /// The layer stack in forward order.
    pub fn layers(&self) -> Vec<StackLayer> {
        let width = 2 * self.lstm_hidden;
        vec![
            StackLayer {
                name: "embedding",
                display: "embedding",
                spec: LayerSpec::Embedding {
                    vocab: self.max_tokens,
                    dim: self.embed_dim,
                },
            },
            StackLayer {
                name: "bilstm",
                display: "bidirectional",
                spec: LayerSpec::BiLstm {
                    input: self.embed_dim,
                    hidden: self.lstm_hidden,
                },
            },
            StackLayer {
                name: "tblock",
                display: "transformer_block",
                spec: LayerSpec::TransformerBlock {
                    dim: width,
                    heads: self.attn_heads,
                    key_dim: self.attn_key_dim,
                    ffn_dim: self.ffn_dim,
                    dropout: self.block_dropout,
                },
            },
            StackLayer {
                name: "conv1d",
                display: "conv1d",
                spec: LayerSpec::Conv1D {
                    in_channels: width,
                    filters: self.conv_filters,
                    kernel: self.conv_kernel,
                    stride: self.conv_stride,
                },
            },
            StackLayer {
                name: "global_max_pooling1d",
                display: "global_max_pooling1d",
                spec: LayerSpec::GlobalMaxPool,
            },
            StackLayer {
                name: "dense",
                display: "dense_2",
                spec: LayerSpec::Dense {
                    input: self.conv_filters,
                    units: self.dense_units,
                    activation: Activation::Relu,
                },
            },
            StackLayer {
                name: "dropout",
                display: "dropout_2",
                spec: LayerSpec::Dropout {
                    rate: self.dropout_rate,
                },
            },
            StackLayer {
                name: "predictions",
                display: "predictions",
                spec: LayerSpec::Dense {
                    input: self.dense_units,
                    units: 1,
                    activation: Activation::Sigmoid,
                },
            },
        ]
    }

    /// Layer table computed from shapes alone; no parameters are allocated.
    pub fn summary(&self) -> Result<Summary, ConfigError> {
        self.validate()?;
        let mut shape = vec![self.sequence_length];
        let mut rows = vec![SummaryRow {
            name: "input_1".into(),
            kind: "InputLayer".into(),
            output_shape: shape.clone(),
            params: 0,
        }];
        for layer in self.layers() {
            shape = layer
                .spec
                .output_shape(&shape)
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            rows.push(SummaryRow {
                name: layer.display.into(),
                kind: layer.spec.kind_name().into(),
                output_shape: shape.clone(),
                params: layer.spec.param_count(),
            });
        }
        let total = rows.iter().map(|r| r.params).sum();
        Ok(Summary { rows, total })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kv_round_trip() {
        let cfg = ModelConfig {
            dropout_rate: 0.37,
            seed: 99,
            ..ModelConfig::default()
        };
        assert_eq!(ModelConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn kv_errors() {
        assert_eq!(
            ModelConfig::from_kv("bogus=1").unwrap_err(),
            ConfigError::UnknownKey("bogus".into())
        );
        assert!(matches!(
            ModelConfig::from_kv("embed_dim=x"),
            Err(ConfigError::BadValue { .. })
        ));
        assert!(matches!(
            ModelConfig::from_kv("# comment\n\nembed_dim"),
            Err(ConfigError::Syntax { line: 3, .. })
        ));
        assert!(matches!(
            ModelConfig::from_kv("dropout_rate=1.0"),
            Err(ConfigError::Invalid(_))
        ));
    }
}
