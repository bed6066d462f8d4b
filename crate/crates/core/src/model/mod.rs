//! The detector network: embedding, BiLSTM, transformer block, Conv1D,
//! global max pooling, dense(relu), dropout and a sigmoid prediction head.

mod config;
mod container;

use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};
use crate::layers::{
    self, Activation, AttentionParams, BiLstmParams, Conv1dParams, DenseParams, LayerError, LayerSpec, LstmParams,
    Mode, TransformerBlockParams,
};
use crate::textprep::{clean, CleanConfig};
use crate::vectorizer::{encode, VectorizerConfig, VectorizerError, Vocabulary};

pub(crate) use config::parse_value;
pub use config::{parse_kv_lines, ConfigError, ModelConfig};
pub use container::{FORMAT_VERSION, MAGIC};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("vocabulary has {vocab} entries but the embedding holds {max_tokens}")]
    VocabTooLarge { vocab: usize, max_tokens: usize },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error("container version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt container: {0}")]
    CorruptContainer(String),
    #[error("container truncated inside tensor {0:?}")]
    TruncatedTensor(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<TensorError> for ModelError {
    fn from(e: TensorError) -> Self {
        ModelError::Layer(e.into())
    }
}

impl From<VectorizerError> for ModelError {
    fn from(e: VectorizerError) -> Self {
        ModelError::CorruptContainer(e.to_string())
    }
}

/// A layer in stack order. `name` prefixes the layer's parameter names.
#[derive(Debug, Clone, PartialEq)]
pub struct StackLayer {
    pub name: &'static str,
    pub display: &'static str,
    pub spec: LayerSpec,
}

/// Named parameter tensors in stack order (`<layer>/<role>`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> ParamStore<T> {
    pub fn new(entries: Vec<(String, Tensor<T>)>) -> Self {
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|(_, t)| t)
    }

    pub fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor<T>> {
        self.entries.iter_mut().map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn total_params(&self) -> usize {
        self.tensors().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self.entries.iter().map(|(n, t)| (n.clone(), t.cast())).collect(),
        }
    }

    /// Records every tensor as a differentiable leaf, in store order.
    pub fn attach(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Records every tensor as a constant (inference).
    pub fn attach_frozen(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors().map(|t| tape.constant(t.clone())).collect()
    }
}

/// Tape handles for every parameter, grouped per layer.
#[derive(Debug, Clone, Copy)]
pub struct GraphParams {
    pub embedding: Var,
    pub bilstm: BiLstmParams,
    pub block: TransformerBlockParams,
    pub conv: Conv1dParams,
    pub dense: DenseParams,
    pub predictions: DenseParams,
}

impl GraphParams {
    /// Binds handles given in [`ParamStore`] order.
    pub fn bind(config: &ModelConfig, vars: &[Var]) -> Result<Self, ModelError> {
        let expected: usize = config.layers().iter().map(|l| l.spec.param_shapes().len()).sum();
        if vars.len() != expected {
            return Err(ModelError::CorruptContainer(format!(
                "expected {expected} parameter tensors, got {}",
                vars.len()
            )));
        }
        let mut it = vars.iter().copied();
        let mut next = || it.next().expect("length checked");
        let embedding = next();
        let mut lstm = || LstmParams {
            kernel: next(),
            recurrent: next(),
            bias: next(),
        };
        let bilstm = BiLstmParams {
            forward: lstm(),
            backward: lstm(),
        };
        let attention = AttentionParams {
            q_kernel: next(),
            q_bias: next(),
            k_kernel: next(),
            k_bias: next(),
            v_kernel: next(),
            v_bias: next(),
            o_kernel: next(),
            o_bias: next(),
            heads: config.attn_heads,
            key_dim: config.attn_key_dim,
        };
        let block = TransformerBlockParams {
            attention,
            ln1_gamma: next(),
            ln1_beta: next(),
            ffn1_kernel: next(),
            ffn1_bias: next(),
            ffn2_kernel: next(),
            ffn2_bias: next(),
            ln2_gamma: next(),
            ln2_beta: next(),
            dropout: config.block_dropout,
        };
        let conv = Conv1dParams {
            kernel: next(),
            bias: next(),
            kernel_width: config.conv_kernel,
            stride: config.conv_stride,
        };
        let dense = DenseParams {
            kernel: next(),
            bias: next(),
        };
        let predictions = DenseParams {
            kernel: next(),
            bias: next(),
        };
        Ok(Self {
            embedding,
            bilstm,
            block,
            conv,
            dense,
            predictions,
        })
    }
}

/// Full forward pass for one encoded sequence; returns the `[1, 1]`
/// probability that the text is AI-generated.
pub fn forward_graph<T: Real>(
    config: &ModelConfig,
    tape: &mut Tape<T>,
    p: &GraphParams,
    ids: &[usize],
    mode: &mut Mode<'_>,
) -> Result<Var, ModelError> {
    let x = layers::embedding_forward(tape, p.embedding, ids)?;
    let x = layers::bilstm_forward(tape, &p.bilstm, x)?;
    let x = layers::transformer_block_forward(tape, &p.block, x, mode)?;
    let x = layers::conv1d_forward(tape, &p.conv, x)?;
    let x = layers::global_max_pool(tape, x)?;
    let x = layers::dense_forward(tape, &p.dense, x, Activation::Relu)?;
    let x = layers::dropout_forward(tape, x, config.dropout_rate, mode)?;
    Ok(layers::dense_forward(tape, &p.predictions, x, Activation::Sigmoid)?)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryRow {
    pub name: String,
    pub kind: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub total: usize,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = |s: &[usize]| {
            let dims: Vec<String> = s.iter().map(usize::to_string).collect();
            format!("(None, {})", dims.join(", "))
        };
        writeln!(f, "{:<44}{:<24}{:>10}", "Layer (type)", "Output Shape", "Param #")?;
        writeln!(f, "{}", "=".repeat(78))?;
        for r in &self.rows {
            let label = format!("{} ({})", r.name, r.kind);
            writeln!(f, "{:<44}{:<24}{:>10}", label, shape(&r.output_shape), r.params)?;
        }
        writeln!(f, "{}", "=".repeat(78))?;
        write!(f, "Total params: {}", grouped(self.total))
    }
}

/// `4936609` -> `4,936,609`.
fn grouped(n: usize) -> String {
    let digits = n.to_string();
    let mut out = String::with_capacity(digits.len() + digits.len() / 3);
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    config: ModelConfig,
    vocabulary: Vocabulary,
    params: ParamStore<f32>,
}

/// Initializes every parameter from `config.seed`.
pub fn build_detector(config: ModelConfig, vocab: Vocabulary) -> Result<DetectorModel, ModelError> {
    config.validate()?;
    if vocab.len() > config.max_tokens {
        return Err(ModelError::VocabTooLarge {
            vocab: vocab.len(),
            max_tokens: config.max_tokens,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut entries = Vec::new();
    for layer in config.layers() {
        for p in layer.spec.param_shapes() {
            entries.push((
                format!("{}/{}", layer.name, p.role),
                p.init.tensor::<f32>(&p.shape, &mut rng),
            ));
        }
    }
    Ok(DetectorModel {
        config,
        vocabulary: vocab,
        params: ParamStore::new(entries),
    })
}

impl DetectorModel {
    /// Assembles a model from parts, checking names and shapes against the
    /// configuration.
    pub fn from_parts(
        config: ModelConfig,
        vocabulary: Vocabulary,
        params: ParamStore<f32>,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        if vocabulary.len() > config.max_tokens {
            return Err(ModelError::VocabTooLarge {
                vocab: vocabulary.len(),
                max_tokens: config.max_tokens,
            });
        }
        let expected: Vec<(String, Vec<usize>)> = config
            .layers()
            .iter()
            .flat_map(|l| {
                l.spec
                    .param_shapes()
                    .into_iter()
                    .map(move |p| (format!("{}/{}", l.name, p.role), p.shape))
            })
            .collect();
        let actual: Vec<(String, Vec<usize>)> = params
            .iter()
            .map(|(n, t)| (n.to_string(), t.shape().to_vec()))
            .collect();
        if expected != actual {
            return Err(ModelError::CorruptContainer(
                "parameter names or shapes do not match the configuration".into(),
            ));
        }
        Ok(Self {
            config,
            vocabulary,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocabulary
    }

    pub fn params(&self) -> &ParamStore<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamStore<f32>) {
        debug_assert_eq!(self.params.len(), params.len());
        self.params = params;
    }

    pub fn summarize(&self) -> Summary {
        self.config.summary().expect("validated at construction")
    }

    pub fn encode_text(&self, raw: &str) -> Vec<usize> {
        let cleaned = clean(raw, &CleanConfig::default());
        encode(&self.vocabulary, &cleaned, &self.config.vectorizer())
    }

    /// Inference-mode probability for an already encoded sequence.
    pub fn predict_ids(&self, ids: &[usize]) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.attach_frozen(&mut tape);
        let graph = GraphParams::bind(&self.config, &vars)?;
        let out = forward_graph(&self.config, &mut tape, &graph, ids, &mut Mode::Infer)?;
        Ok(f64::from(tape.value(out).data()[0]))
    }

    /// Inference-mode probabilities for many sequences, sharing one tape.
    pub fn predict_many(&self, batch: &[&[usize]]) -> Result<Vec<f64>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.params.attach_frozen(&mut tape);
        let graph = GraphParams::bind(&self.config, &vars)?;
        let base = tape.len();
        let mut out = Vec::with_capacity(batch.len());
        for ids in batch {
            let p = forward_graph(&self.config, &mut tape, &graph, ids, &mut Mode::Infer)?;
            out.push(f64::from(tape.value(p).data()[0]));
            tape.truncate(base);
        }
        Ok(out)
    }

    /// Probability that `raw_text` is AI-generated.
    pub fn predict(&self, raw_text: &str) -> Result<f64, ModelError> {
        self.predict_ids(&self.encode_text(raw_text))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        std::fs::write(path, container::encode(self)).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        container::decode(&bytes)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        container::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        container::decode(bytes)
    }

    pub fn vectorizer_config(&self) -> VectorizerConfig {
        self.config.vectorizer()
    }
}
