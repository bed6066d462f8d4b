//! Layer blocks of the detector: embedding, bidirectional LSTM, transformer
//! block, strided Conv1D, global max pooling, dense and dropout.
//!
//! Each layer has a [`LayerSpec`] (hyperparameters, parameter shapes,
//! closed-form parameter count, output shape) and a forward function that
//! records its computation on a [`Tape`]. Inputs are single examples:
//! sequences are `[L, C]` and vectors are `[1, C]`.

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::autodiff::{Real, Tape, Tensor, TensorError, Var};

pub const LAYER_NORM_EPSILON: f64 = 1e-6;
pub const EMBEDDING_INIT_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LayerError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence of length {len} is shorter than kernel width {kernel}")]
    InputTooShort { len: usize, kernel: usize },
    #[error("pooling over an empty sequence")]
    EmptySequence,
}

pub type Result<T, E = LayerError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Uniform(f64),
    Glorot { fan_in: usize, fan_out: usize },
}

impl Init {
    pub fn tensor<T: Real>(&self, shape: &[usize], rng: &mut dyn RngCore) -> Tensor<T> {
        let uniform =
            |limit: f64, rng: &mut dyn RngCore| Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-limit..limit)));
        match *self {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::full(shape, T::one()),
            Init::Uniform(limit) => uniform(limit, rng),
            Init::Glorot { fan_in, fan_out } => uniform((6.0 / (fan_in + fan_out) as f64).sqrt(), rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamShape {
    pub role: &'static str,
    pub shape: Vec<usize>,
    pub init: Init,
}

fn param(role: &'static str, shape: Vec<usize>, init: Init) -> ParamShape {
    ParamShape { role, shape, init }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Embedding {
        vocab: usize,
        dim: usize,
    },
    BiLstm {
        input: usize,
        hidden: usize,
    },
    TransformerBlock {
        dim: usize,
        heads: usize,
        key_dim: usize,
        ffn_dim: usize,
        dropout: f64,
    },
    Conv1D {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    GlobalMaxPool,
    Dense {
        input: usize,
        units: usize,
        activation: Activation,
    },
    Dropout {
        rate: f64,
    },
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Embedding { .. } => "Embedding",
            LayerSpec::BiLstm { .. } => "Bidirectional",
            LayerSpec::TransformerBlock { .. } => "TransformerBlock",
            LayerSpec::Conv1D { .. } => "Conv1D",
            LayerSpec::GlobalMaxPool => "GlobalMaxPooling1D",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Dropout { .. } => "Dropout",
        }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Embedding { vocab, dim } => vocab * dim,
            LayerSpec::BiLstm { input, hidden } => 2 * 4 * (input + hidden + 1) * hidden,
            LayerSpec::TransformerBlock {
                dim: d,
                heads,
                key_dim,
                ffn_dim: f,
                ..
            } => {
                let hk = heads * key_dim;
                3 * (d * hk + hk) + (hk * d + d) + (d * f + f) + (f * d + d) + 2 * (2 * d)
            }
            LayerSpec::Conv1D {
                in_channels,
                filters,
                kernel,
                ..
            } => in_channels * filters * kernel + filters,
            LayerSpec::GlobalMaxPool | LayerSpec::Dropout { .. } => 0,
            LayerSpec::Dense { input, units, .. } => input * units + units,
        }
    }

    /// Parameter tensors in storage order.
    pub fn param_shapes(&self) -> Vec<ParamShape> {
        let glorot = |fan_in, fan_out| Init::Glorot { fan_in, fan_out };
        match *self {
            LayerSpec::Embedding { vocab, dim } => {
                vec![param("table", vec![vocab, dim], Init::Uniform(EMBEDDING_INIT_LIMIT))]
            }
            LayerSpec::BiLstm { input, hidden } => {
                let g = 4 * hidden;
                vec![
                    param("fw_kernel", vec![input, g], glorot(input, g)),
                    param("fw_recurrent", vec![hidden, g], glorot(hidden, g)),
                    param("fw_bias", vec![g], Init::Zeros),
                    param("bw_kernel", vec![input, g], glorot(input, g)),
                    param("bw_recurrent", vec![hidden, g], glorot(hidden, g)),
                    param("bw_bias", vec![g], Init::Zeros),
                ]
            }
            LayerSpec::TransformerBlock {
                dim: d,
                heads,
                key_dim,
                ffn_dim: f,
                ..
            } => {
                let hk = heads * key_dim;
                vec![
                    param("q_kernel", vec![d, hk], glorot(d, hk)),
                    param("q_bias", vec![hk], Init::Zeros),
                    param("k_kernel", vec![d, hk], glorot(d, hk)),
                    param("k_bias", vec![hk], Init::Zeros),
                    param("v_kernel", vec![d, hk], glorot(d, hk)),
                    param("v_bias", vec![hk], Init::Zeros),
                    param("o_kernel", vec![hk, d], glorot(hk, d)),
                    param("o_bias", vec![d], Init::Zeros),
                    param("ln1_gamma", vec![d], Init::Ones),
                    param("ln1_beta", vec![d], Init::Zeros),
                    param("ffn1_kernel", vec![d, f], glorot(d, f)),
                    param("ffn1_bias", vec![f], Init::Zeros),
                    param("ffn2_kernel", vec![f, d], glorot(f, d)),
                    param("ffn2_bias", vec![d], Init::Zeros),
                    param("ln2_gamma", vec![d], Init::Ones),
                    param("ln2_beta", vec![d], Init::Zeros),
                ]
            }
            LayerSpec::Conv1D {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                // [W, C_in, C_out] flattened to [W * C_in, C_out]
                param(
                    "kernel",
                    vec![kernel * in_channels, filters],
                    glorot(kernel * in_channels, kernel * filters),
                ),
                param("bias", vec![filters], Init::Zeros),
            ],
            LayerSpec::GlobalMaxPool | LayerSpec::Dropout { .. } => vec![],
            LayerSpec::Dense { input, units, .. } => vec![
                param("kernel", vec![input, units], glorot(input, units)),
                param("bias", vec![units], Init::Zeros),
            ],
        }
    }

    /// Per-example output shape for a per-example input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let bad = |expected: Vec<usize>| -> LayerError {
            TensorError::ShapeMismatch {
                op: self.kind_name(),
                lhs: input.to_vec(),
                rhs: expected,
            }
            .into()
        };
        match (self, input) {
            (LayerSpec::Embedding { dim, .. }, [len]) => Ok(vec![*len, *dim]),
            (LayerSpec::BiLstm { input: d, hidden }, [len, c]) if c == d => Ok(vec![*len, 2 * hidden]),
            (LayerSpec::TransformerBlock { dim, .. }, [len, c]) if c == dim => Ok(vec![*len, *dim]),
            (
                LayerSpec::Conv1D {
                    in_channels,
                    filters,
                    kernel,
                    stride,
                },
                [len, c],
            ) if c == in_channels => {
                if len < kernel {
                    return Err(LayerError::InputTooShort {
                        len: *len,
                        kernel: *kernel,
                    });
                }
                Ok(vec![conv_output_len(*len, *kernel, *stride), *filters])
            }
            (LayerSpec::GlobalMaxPool, [len, c]) => {
                if *len == 0 {
                    return Err(LayerError::EmptySequence);
                }
                Ok(vec![*c])
            }
            (LayerSpec::Dense { input: i, units, .. }, [c]) if c == i => Ok(vec![*units]),
            (LayerSpec::Dropout { .. }, s) => Ok(s.to_vec()),
            (LayerSpec::Embedding { .. }, _) => Err(bad(vec![0])),
            (LayerSpec::BiLstm { input: d, .. }, _) => Err(bad(vec![0, *d])),
            (LayerSpec::TransformerBlock { dim, .. }, _) => Err(bad(vec![0, *dim])),
            (LayerSpec::Conv1D { in_channels, .. }, _) => Err(bad(vec![0, *in_channels])),
            (LayerSpec::GlobalMaxPool, _) => Err(bad(vec![0, 0])),
            (LayerSpec::Dense { input: i, .. }, _) => Err(bad(vec![*i])),
        }
    }
}

/// Output length of a valid (unpadded) strided convolution.
pub fn conv_output_len(len: usize, kernel: usize, stride: usize) -> usize {
    (len - kernel) / stride + 1
}

/// Training mode carries the generator used for dropout masks.
pub enum Mode<'a> {
    Infer,
    Train(&'a mut dyn RngCore),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

pub fn embedding_forward<T: Real>(tape: &mut Tape<T>, table: Var, ids: &[usize]) -> Result<Var> {
    Ok(tape.gather_rows(table, ids)?)
}

#[derive(Debug, Clone, Copy)]
pub struct LstmParams {
    pub kernel: Var,
    pub recurrent: Var,
    pub bias: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct BiLstmParams {
    pub forward: LstmParams,
    pub backward: LstmParams,
}

/// Stacks `[1, H]` rows into `[n, H]`.
fn stack_rows<T: Real>(tape: &mut Tape<T>, rows: &[Var]) -> Result<Var> {
    let cols = rows
        .iter()
        .map(|&r| tape.transpose(r))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let stacked = tape.concat(&cols)?;
    Ok(tape.transpose(stacked)?)
}

/// One LSTM direction over `x: [L, D]`, gate order (i, f, g, o). With
/// `reverse` the sequence is consumed last-to-first; outputs are always
/// returned in original time order as `[L, H]`.
pub fn lstm_forward<T: Real>(tape: &mut Tape<T>, p: &LstmParams, x: Var, reverse: bool) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ks = tape.shape(p.kernel).to_vec();
    let rs = tape.shape(p.recurrent).to_vec();
    if xs.len() != 2 || ks.len() != 2 || ks[0] != xs[1] || rs.len() != 2 || rs[1] != ks[1] || ks[1] != 4 * rs[0] {
        return Err(TensorError::ShapeMismatch {
            op: "lstm",
            lhs: xs,
            rhs: ks,
        }
        .into());
    }
    let (len, hidden) = (xs[0], rs[0]);

    let xw = tape.matmul(x, p.kernel)?;
    let xw = tape.add(xw, p.bias)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut c = tape.constant(Tensor::zeros(&[1, hidden]));
    let mut outputs = vec![h; len];
    let steps: Vec<usize> = if reverse {
        (0..len).rev().collect()
    } else {
        (0..len).collect()
    };
    for t in steps {
        let xt = tape.slice(xw, 0, t, t + 1)?;
        let hu = tape.matmul(h, p.recurrent)?;
        let z = tape.add(xt, hu)?;
        let zi = tape.slice(z, 1, 0, hidden)?;
        let zf = tape.slice(z, 1, hidden, 2 * hidden)?;
        let zg = tape.slice(z, 1, 2 * hidden, 3 * hidden)?;
        let zo = tape.slice(z, 1, 3 * hidden, 4 * hidden)?;
        let i = tape.sigmoid(zi)?;
        let f = tape.sigmoid(zf)?;
        let g = tape.tanh(zg)?;
        let o = tape.sigmoid(zo)?;
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let tc = tape.tanh(c)?;
        h = tape.mul(o, tc)?;
        outputs[t] = h;
    }
    stack_rows(tape, &outputs)
}

/// `[L, D] -> [L, 2H]`: forward and reversed directions concatenated per step.
pub fn bilstm_forward<T: Real>(tape: &mut Tape<T>, p: &BiLstmParams, x: Var) -> Result<Var> {
    let fw = lstm_forward(tape, &p.forward, x, false)?;
    let bw = lstm_forward(tape, &p.backward, x, true)?;
    Ok(tape.concat(&[fw, bw])?)
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionParams {
    pub q_kernel: Var,
    pub q_bias: Var,
    pub k_kernel: Var,
    pub k_bias: Var,
    pub v_kernel: Var,
    pub v_bias: Var,
    pub o_kernel: Var,
    pub o_bias: Var,
    pub heads: usize,
    pub key_dim: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct TransformerBlockParams {
    pub attention: AttentionParams,
    pub ln1_gamma: Var,
    pub ln1_beta: Var,
    pub ffn1_kernel: Var,
    pub ffn1_bias: Var,
    pub ffn2_kernel: Var,
    pub ffn2_bias: Var,
    pub ln2_gamma: Var,
    pub ln2_beta: Var,
    pub dropout: f64,
}

fn affine<T: Real>(tape: &mut Tape<T>, x: Var, kernel: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, kernel)?;
    Ok(tape.add(xw, bias)?)
}

/// Multi-head scaled dot-product self-attention over `x: [L, D]`. Returns
/// the projected output `[L, D]` and each head's `[L, L]` weights.
pub fn multi_head_attention<T: Real>(tape: &mut Tape<T>, p: &AttentionParams, x: Var) -> Result<(Var, Vec<Var>)> {
    let q = affine(tape, x, p.q_kernel, p.q_bias)?;
    let k = affine(tape, x, p.k_kernel, p.k_bias)?;
    let v = affine(tape, x, p.v_kernel, p.v_bias)?;
    let scale = T::one() / T::from_usize(p.key_dim).unwrap().sqrt();
    let mut heads = Vec::with_capacity(p.heads);
    let mut weights = Vec::with_capacity(p.heads);
    for h in 0..p.heads {
        let (a, b) = (h * p.key_dim, (h + 1) * p.key_dim);
        let qh = tape.slice(q, 1, a, b)?;
        let kh = tape.slice(k, 1, a, b)?;
        let vh = tape.slice(v, 1, a, b)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scores = tape.scale(scores, scale)?;
        let w = tape.softmax(scores)?;
        heads.push(tape.matmul(w, vh)?);
        weights.push(w);
    }
    let joined = tape.concat(&heads)?;
    Ok((affine(tape, joined, p.o_kernel, p.o_bias)?, weights))
}

/// Normalizes each row of `x: [L, D]` to zero mean and unit variance, then
/// applies the per-feature gain and bias.
pub fn layer_norm<T: Real>(tape: &mut Tape<T>, x: Var, gamma: Var, beta: Var) -> Result<Var> {
    let axis = tape.shape(x).len() - 1;
    let mean = tape.mean(x, Some(axis))?;
    let centered = tape.sub(x, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean(sq, Some(axis))?;
    let eps = tape.constant(Tensor::scalar(T::lit(LAYER_NORM_EPSILON)));
    let var = tape.add(var, eps)?;
    // (var + eps)^(-1/2)
    let log_var = tape.log(var)?;
    let half = tape.scale(log_var, T::lit(-0.5))?;
    let inv_std = tape.exp(half)?;
    let normed = tape.mul(centered, inv_std)?;
    let scaled = tape.mul(normed, gamma)?;
    Ok(tape.add(scaled, beta)?)
}

/// Attention and feed-forward sublayers, each followed by dropout, a
/// residual add and layer normalization.
pub fn transformer_block_forward<T: Real>(
    tape: &mut Tape<T>,
    p: &TransformerBlockParams,
    x: Var,
    mode: &mut Mode<'_>,
) -> Result<Var> {
    let (attn, _) = multi_head_attention(tape, &p.attention, x)?;
    let attn = dropout_forward(tape, attn, p.dropout, mode)?;
    let res1 = tape.add(x, attn)?;
    let out1 = layer_norm(tape, res1, p.ln1_gamma, p.ln1_beta)?;
    let hidden = affine(tape, out1, p.ffn1_kernel, p.ffn1_bias)?;
    let hidden = tape.relu(hidden)?;
    let ffn = affine(tape, hidden, p.ffn2_kernel, p.ffn2_bias)?;
    let ffn = dropout_forward(tape, ffn, p.dropout, mode)?;
    let res2 = tape.add(out1, ffn)?;
    layer_norm(tape, res2, p.ln2_gamma, p.ln2_beta)
}

#[derive(Debug, Clone, Copy)]
pub struct Conv1dParams {
    /// `[W * C_in, C_out]`
    pub kernel: Var,
    pub bias: Var,
    pub kernel_width: usize,
    pub stride: usize,
}

/// Valid strided 1-D cross-correlation with relu: `[L, C_in] -> [L_out, C_out]`.
pub fn conv1d_forward<T: Real>(tape: &mut Tape<T>, p: &Conv1dParams, x: Var) -> Result<Var> {
    let xs = tape.shape(x).to_vec();
    let ks = tape.shape(p.kernel).to_vec();
    if xs.len() != 2 || ks.len() != 2 || ks[0] != p.kernel_width * xs[1] || p.stride == 0 {
        return Err(TensorError::ShapeMismatch {
            op: "conv1d",
            lhs: xs,
            rhs: ks,
        }
        .into());
    }
    let len = xs[0];
    if len < p.kernel_width {
        return Err(LayerError::InputTooShort {
            len,
            kernel: p.kernel_width,
        });
    }
    let out_len = conv_output_len(len, p.kernel_width, p.stride);
    let taps = (0..p.kernel_width)
        .map(|w| {
            let rows: Vec<usize> = (0..out_len).map(|t| w + t * p.stride).collect();
            tape.gather_rows(x, &rows)
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let windows = tape.concat(&taps)?;
    let z = affine(tape, windows, p.kernel, p.bias)?;
    Ok(tape.relu(z)?)
}

/// Per-channel maximum over positions: `[L, C] -> [1, C]`.
pub fn global_max_pool<T: Real>(tape: &mut Tape<T>, x: Var) -> Result<Var> {
    match tape.shape(x) {
        [0, _] => Err(LayerError::EmptySequence),
        [_, _] => Ok(tape.max_axis(x, 0)?),
        s => Err(TensorError::ShapeMismatch {
            op: "global_max_pool",
            lhs: s.to_vec(),
            rhs: vec![],
        }
        .into()),
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DenseParams {
    pub kernel: Var,
    pub bias: Var,
}

pub fn dense_forward<T: Real>(tape: &mut Tape<T>, p: &DenseParams, x: Var, activation: Activation) -> Result<Var> {
    let z = affine(tape, x, p.kernel, p.bias)?;
    Ok(match activation {
        Activation::Linear => z,
        Activation::Relu => tape.relu(z)?,
        Activation::Sigmoid => tape.sigmoid(z)?,
    })
}

/// Inverted dropout: identity in inference, otherwise zeroes each element
/// with probability `rate` and scales survivors by `1 / (1 - rate)`.
pub fn dropout_forward<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Result<Var> {
    let rng = match mode {
        Mode::Train(rng) if rate > 0.0 => rng,
        _ => return Ok(x),
    };
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(
        tape.shape(x),
        |_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        },
    );
    let mask = tape.constant(mask);
    Ok(tape.mul(x, mask)?)
}
