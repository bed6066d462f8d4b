//! Finite-difference checks shared by the gradient suite and the
//! acceptance runner. Each returns `(name, max relative error)`.

use aitd::autodiff::{finite_difference_check_many, Tape, Tensor, TensorError, Var};
use aitd::corpus::Label;
use aitd::layers::{self, Activation, LayerSpec, Mode};
use aitd::model::{build_detector, GraphParams, ModelConfig};
use aitd::training::batch_loss;
use aitd::vectorizer::build_vocabulary;
use rand_chacha::ChaCha8Rng;

use super::{layer, micro_config, model, random, rng, weighted_sum};

/// Step for layer and model checks: large enough that rounding noise in
/// the forward pass stays small, small enough that the curvature term of
/// the central difference does too.
pub const LAYER_EPS: f64 = 3e-5;
pub const PRIMITIVE_EPS: f64 = 1e-5;

/// `(analytic, numeric)` gradient magnitudes.
pub type KeyBias = Vec<(f64, f64)>;

type Check = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var, TensorError>>;

/// Largest analytic and numeric gradient magnitudes over `points[index]`.
pub fn gradient_magnitudes(f: &Check, points: &[Tensor<f64>], index: usize, eps: f64) -> (f64, f64) {
    let eval = |pts: &[Tensor<f64>]| {
        let mut t = Tape::new();
        let vars: Vec<Var> = pts.iter().map(|p| t.leaf(p.clone())).collect();
        let out = f(&mut t, &vars).unwrap();
        let value = t.value(out).data()[0];
        (t, vars, out, value)
    };
    let (tape, vars, out, _) = eval(points);
    let grads = tape.backward(out).unwrap();
    let analytic = grads
        .get(vars[index])
        .map_or(0.0, |g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut work = points.to_vec();
    let mut numeric = 0.0f64;
    for i in 0..points[index].len() {
        let orig = points[index].data()[i];
        work[index].data_mut()[i] = orig + eps;
        let up = eval(&work).3;
        work[index].data_mut()[i] = orig - eps;
        let down = eval(&work).3;
        work[index].data_mut()[i] = orig;
        numeric = numeric.max(((up - down) / (2.0 * eps)).abs());
    }
    (analytic, numeric)
}

/// Attention output is invariant to the key bias: it adds the same
/// `q . b` to every score in a row, which softmax cancels. Its gradient is
/// identically zero, so a relative error is pure rounding noise. The
/// returned checks hold that tensor fixed, and [`key_bias_gradient`]
/// bounds it absolutely instead.
const KEY_BIAS: usize = 4;

fn freeze(f: Check, points: &[Tensor<f64>], frozen: usize) -> (Check, Vec<Tensor<f64>>) {
    let fixed = points[frozen].clone();
    let free: Vec<Tensor<f64>> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != frozen)
        .map(|(_, p)| p.clone())
        .collect();
    let g: Check = Box::new(move |t, v| {
        let c = t.constant(fixed.clone());
        let mut all = v.to_vec();
        all.insert(frozen, c);
        f(t, &all)
    });
    (g, free)
}

fn run(name: &str, f: Check, points: Vec<Tensor<f64>>, eps: f64) -> (String, f64) {
    let err = finite_difference_check_many(f, &points, eps).unwrap_or_else(|e| panic!("{name}: {e}"));
    (name.to_string(), err)
}

fn params_for(spec: &LayerSpec, r: &mut ChaCha8Rng) -> Vec<Tensor<f64>> {
    spec.param_shapes()
        .iter()
        .map(|p| random(&p.shape, r, -0.8, 0.8, 0.0))
        .collect()
}

/// Each primitive at ten random points.
pub fn primitive_checks() -> Vec<(String, f64)> {
    let mut out = Vec::new();
    for trial in 0..10u64 {
        let mut r = rng(100 + trial);
        let a = random(&[3, 4], &mut r, -1.5, 1.5, 0.0);
        let b = random(&[4, 2], &mut r, -1.5, 1.5, 0.0);
        let row = random(&[4], &mut r, -1.5, 1.5, 0.0);
        let same = random(&[3, 4], &mut r, -1.5, 1.5, 0.0);
        let w34 = random(&[3, 4], &mut r, -1.0, 1.0, 0.0);
        let w32 = random(&[3, 2], &mut r, -1.0, 1.0, 0.0);
        let kinky = random(&[3, 4], &mut r, -1.5, 1.5, 1e-3);
        let positive = random(&[3, 4], &mut r, 0.2, 2.0, 0.0);
        let inner = random(&[3, 4], &mut r, 0.1, 0.9, 0.0);
        let wide = random(&[3, 6], &mut r, -1.0, 1.0, 0.0);
        let w43 = random(&[4, 3], &mut r, -1.0, 1.0, 0.0);
        let w31 = random(&[3, 1], &mut r, -1.0, 1.0, 0.0);
        let w14 = random(&[1, 4], &mut r, -1.0, 1.0, 0.0);
        let w1 = random(&[1], &mut r, -1.0, 1.0, 0.0);
        let w_gather = random(&[5, 4], &mut r, -1.0, 1.0, 0.0);
        let w32b = random(&[3, 2], &mut r, -1.0, 1.0, 0.0);
        // distinct values per row with a clear gap, so max has no tie
        let mut distinct = random(&[3, 4], &mut r, -1.0, 1.0, 0.0);
        for (i, v) in distinct.data_mut().iter_mut().enumerate() {
            *v += (i % 4) as f64 * 0.5;
        }

        macro_rules! unary {
            ($name:expr, $x:expr, $w:expr, |$t:ident, $v:ident| $body:expr) => {{
                let w = $w.clone();
                out.push(run(
                    $name,
                    Box::new(move |$t: &mut Tape<f64>, vs: &[Var]| {
                        let $v = vs[0];
                        let y = $body?;
                        weighted_sum($t, y, &w)
                    }),
                    vec![$x.clone()],
                    PRIMITIVE_EPS,
                ));
            }};
        }
        macro_rules! binary {
            ($name:expr, $x:expr, $y:expr, $w:expr, |$t:ident, $u:ident, $v:ident| $body:expr) => {{
                let w = $w.clone();
                out.push(run(
                    $name,
                    Box::new(move |$t: &mut Tape<f64>, vs: &[Var]| {
                        let ($u, $v) = (vs[0], vs[1]);
                        let y = $body?;
                        weighted_sum($t, y, &w)
                    }),
                    vec![$x.clone(), $y.clone()],
                    PRIMITIVE_EPS,
                ));
            }};
        }

        binary!("matmul", a, b, w32, |t, x, y| t.matmul(x, y));
        binary!("add", a, same, w34, |t, x, y| t.add(x, y));
        binary!("add broadcast", a, row, w34, |t, x, y| t.add(x, y));
        binary!("sub broadcast", a, row, w34, |t, x, y| t.sub(x, y));
        binary!("mul", a, same, w34, |t, x, y| t.mul(x, y));
        binary!("mul broadcast", a, row, w34, |t, x, y| t.mul(x, y));
        binary!(
            "concat",
            a,
            wide,
            random(&[3, 10], &mut rng(trial), -1.0, 1.0, 0.0),
            |t, x, y| t.concat(&[x, y])
        );
        unary!("scale", a, w34, |t, x| t.scale(x, -1.7));
        unary!("tanh", a, w34, |t, x| t.tanh(x));
        unary!("sigmoid", a, w34, |t, x| t.sigmoid(x));
        unary!("relu", kinky, w34, |t, x| t.relu(x));
        unary!("exp", a, w34, |t, x| t.exp(x));
        unary!("log", positive, w34, |t, x| t.log(x));
        unary!("clamp", inner, w34, |t, x| t.clamp(x, 1e-7, 1.0 - 1e-7));
        unary!("softmax", a, w34, |t, x| t.softmax(x));
        unary!("slice", a, w32b, |t, x| t.slice(x, 1, 1, 3));
        unary!("transpose", a, w43, |t, x| t.transpose(x));
        unary!("mean axis 1", a, w31, |t, x| t.mean(x, Some(1)));
        unary!("mean axis 0", a, w14, |t, x| t.mean(x, Some(0)));
        unary!("mean all", a, w1, |t, x| t.mean(x, None));
        unary!("max axis 1", distinct, w31, |t, x| t.max_axis(x, 1));
        unary!("gather rows", a, w_gather, |t, x| t.gather_rows(x, &[2, 0, 2, 1, 1]));
    }
    out
}

/// Every layer with inputs and parameters as checked points, plus the
/// `(analytic, numeric)` key-bias gradient magnitudes of the attention and
/// transformer-block checks.
pub fn layer_checks() -> (Vec<(String, f64)>, KeyBias) {
    let mut r = rng(7);
    let mut out = Vec::new();
    let mut key_bias = Vec::new();
    let (len, dim) = (6, 4);

    let emb = LayerSpec::Embedding { vocab: 7, dim };
    let w = random(&[5, dim], &mut r, -1.0, 1.0, 0.0);
    out.push(run(
        "embedding",
        Box::new(move |t, v| {
            let y = layers::embedding_forward(t, v[0], &[1, 3, 3, 0, 6]).map_err(layer)?;
            weighted_sum(t, y, &w)
        }),
        params_for(&emb, &mut r),
        LAYER_EPS,
    ));

    let hidden = 3;
    let lstm = LayerSpec::BiLstm { input: dim, hidden };
    for reverse in [false, true] {
        let w = random(&[len, hidden], &mut r, -1.0, 1.0, 0.0);
        let mut pts = vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)];
        pts.extend(params_for(&lstm, &mut r).into_iter().take(3));
        out.push(run(
            if reverse { "lstm reverse" } else { "lstm forward" },
            Box::new(move |t, v| {
                let p = layers::LstmParams {
                    kernel: v[1],
                    recurrent: v[2],
                    bias: v[3],
                };
                let y = layers::lstm_forward(t, &p, v[0], reverse).map_err(layer)?;
                weighted_sum(t, y, &w)
            }),
            pts,
            LAYER_EPS,
        ));
    }
    let w = random(&[len, 2 * hidden], &mut r, -1.0, 1.0, 0.0);
    let mut pts = vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)];
    pts.extend(params_for(&lstm, &mut r));
    out.push(run(
        "bilstm",
        Box::new(move |t, v| {
            let lstm = |o: usize| layers::LstmParams {
                kernel: v[o],
                recurrent: v[o + 1],
                bias: v[o + 2],
            };
            let p = layers::BiLstmParams {
                forward: lstm(1),
                backward: lstm(4),
            };
            let y = layers::bilstm_forward(t, &p, v[0]).map_err(layer)?;
            weighted_sum(t, y, &w)
        }),
        pts,
        LAYER_EPS,
    ));

    let (heads, key_dim) = (2, 3);
    let block = LayerSpec::TransformerBlock {
        dim,
        heads,
        key_dim,
        ffn_dim: 5,
        dropout: 0.1,
    };
    let attention = move |v: &[Var]| layers::AttentionParams {
        q_kernel: v[1],
        q_bias: v[2],
        k_kernel: v[3],
        k_bias: v[4],
        v_kernel: v[5],
        v_bias: v[6],
        o_kernel: v[7],
        o_bias: v[8],
        heads,
        key_dim,
    };
    let w = random(&[len, dim], &mut r, -1.0, 1.0, 0.0);
    let mut pts = vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)];
    pts.extend(params_for(&block, &mut r).into_iter().take(8));
    let mha: Check = Box::new(move |t, v| {
        let (y, _) = layers::multi_head_attention(t, &attention(v), v[0]).map_err(layer)?;
        weighted_sum(t, y, &w)
    });
    key_bias.push(gradient_magnitudes(&mha, &pts, KEY_BIAS, LAYER_EPS));
    let (mha, pts) = freeze(mha, &pts, KEY_BIAS);
    out.push(run("multi-head attention", mha, pts, LAYER_EPS));

    let w = random(&[len, dim], &mut r, -1.0, 1.0, 0.0);
    let pts = vec![
        random(&[len, dim], &mut r, -1.0, 1.0, 0.0),
        random(&[dim], &mut r, 0.5, 1.5, 0.0),
        random(&[dim], &mut r, -0.5, 0.5, 0.0),
    ];
    out.push(run(
        "layer norm",
        Box::new(move |t, v| {
            let y = layers::layer_norm(t, v[0], v[1], v[2]).map_err(layer)?;
            weighted_sum(t, y, &w)
        }),
        pts,
        LAYER_EPS,
    ));

    let w = random(&[len, dim], &mut r, -1.0, 1.0, 0.0);
    let mut pts = vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)];
    pts.extend(params_for(&block, &mut r));
    let block_check: Check = Box::new(move |t, v| {
        let p = layers::TransformerBlockParams {
            attention: attention(v),
            ln1_gamma: v[9],
            ln1_beta: v[10],
            ffn1_kernel: v[11],
            ffn1_bias: v[12],
            ffn2_kernel: v[13],
            ffn2_bias: v[14],
            ln2_gamma: v[15],
            ln2_beta: v[16],
            dropout: 0.1,
        };
        let y = layers::transformer_block_forward(t, &p, v[0], &mut Mode::Infer).map_err(layer)?;
        weighted_sum(t, y, &w)
    });
    key_bias.push(gradient_magnitudes(&block_check, &pts, KEY_BIAS, LAYER_EPS));
    let (block_check, pts) = freeze(block_check, &pts, KEY_BIAS);
    out.push(run("transformer block", block_check, pts, LAYER_EPS));

    for stride in [1, 2] {
        let (kernel, filters) = (3, 5);
        let conv = LayerSpec::Conv1D {
            in_channels: dim,
            filters,
            kernel,
            stride,
        };
        let l_out = layers::conv_output_len(len, kernel, stride);
        let w = random(&[l_out, filters], &mut r, -1.0, 1.0, 0.0);
        let mut pts = vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)];
        pts.extend(params_for(&conv, &mut r));
        out.push(run(
            if stride == 1 {
                "conv1d stride 1"
            } else {
                "conv1d stride 2"
            },
            Box::new(move |t, v| {
                let p = layers::Conv1dParams {
                    kernel: v[1],
                    bias: v[2],
                    kernel_width: kernel,
                    stride,
                };
                let y = layers::conv1d_forward(t, &p, v[0]).map_err(layer)?;
                weighted_sum(t, y, &w)
            }),
            pts,
            LAYER_EPS,
        ));
    }

    let w = random(&[1, dim], &mut r, -1.0, 1.0, 0.0);
    let mut x = random(&[len, dim], &mut r, -1.0, 1.0, 0.0);
    for (i, v) in x.data_mut().iter_mut().enumerate() {
        *v += (i / dim) as f64 * 0.3 * if i % 2 == 0 { 1.0 } else { -1.0 };
    }
    out.push(run(
        "global max pool",
        Box::new(move |t, v| {
            let y = layers::global_max_pool(t, v[0]).map_err(layer)?;
            weighted_sum(t, y, &w)
        }),
        vec![x],
        LAYER_EPS,
    ));

    for activation in [Activation::Linear, Activation::Relu, Activation::Sigmoid] {
        let dense = LayerSpec::Dense {
            input: dim,
            units: 3,
            activation,
        };
        let w = random(&[1, 3], &mut r, -1.0, 1.0, 0.0);
        let mut pts = vec![random(&[1, dim], &mut r, -1.0, 1.0, 0.0)];
        pts.extend(params_for(&dense, &mut r));
        out.push(run(
            match activation {
                Activation::Linear => "dense linear",
                Activation::Relu => "dense relu",
                Activation::Sigmoid => "dense sigmoid",
            },
            Box::new(move |t, v| {
                let p = layers::DenseParams {
                    kernel: v[1],
                    bias: v[2],
                };
                let y = layers::dense_forward(t, &p, v[0], activation).map_err(layer)?;
                weighted_sum(t, y, &w)
            }),
            pts,
            LAYER_EPS,
        ));
    }

    let w = random(&[len, dim], &mut r, -1.0, 1.0, 0.0);
    out.push(run(
        "dropout (inference)",
        Box::new(move |t, v| {
            let y = layers::dropout_forward(t, v[0], 0.5, &mut Mode::Infer).map_err(layer)?;
            weighted_sum(t, y, &w)
        }),
        vec![random(&[len, dim], &mut r, -1.0, 1.0, 0.0)],
        LAYER_EPS,
    ));
    (out, key_bias)
}

/// Full micro detector (vocabulary 20, sequence length 8) through mean BCE
/// on a two-example batch, differentiated with respect to every parameter.
pub fn full_model_check() -> (String, f64) {
    let config = micro_config();
    let texts = ["alpha beta gamma delta", "beta gamma epsilon zeta eta theta"];
    let vocab = build_vocabulary(&texts, &config.vectorizer()).unwrap();
    let mut detector = build_detector(config.clone(), vocab).unwrap();
    // Random biases so no relu unit sits exactly at its kink.
    let mut r = rng(11);
    for t in detector.params_mut().tensors_mut() {
        for v in t.data_mut() {
            *v += rand::Rng::gen_range(&mut r, -0.3f32..0.3);
        }
    }
    let ids: Vec<Vec<usize>> = texts.iter().map(|t| detector.encode_text(t)).collect();
    let points: Vec<Tensor<f64>> = detector.params().cast::<f64>().tensors().cloned().collect();
    let cfg: ModelConfig = config;
    let f = move |t: &mut Tape<f64>, v: &[Var]| {
        let graph = GraphParams::bind(&cfg, v).map_err(model)?;
        let batch = [(ids[0].as_slice(), Label::Human), (ids[1].as_slice(), Label::Ai)];
        batch_loss(&cfg, t, &graph, &batch, &mut Mode::Infer).map_err(model)
    };
    run("full detector + BCE", Box::new(f), points, LAYER_EPS)
}
