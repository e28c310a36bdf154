//! Layer definitions, recorded forward passes, and model construction.

mod serialize;

pub use serialize::{load_model, save_model};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::DocumentMatrix;
use crate::error::{Error, Result};
use crate::mat::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
    Softmax,
}

impl Activation {
    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|&v| v.max(0.0)).collect(),
            Activation::Tanh => z.iter().map(|&v| v.tanh()).collect(),
            Activation::Sigmoid => z.iter().map(|&v| sigmoid(v)).collect(),
            Activation::Identity => z.to_vec(),
            Activation::Softmax => softmax(z),
        }
    }

    /// Derivative w.r.t. the pre-activation, expressed from the
    /// post-activation value. Not defined for softmax, which is always
    /// fused with cross-entropy.
    pub fn derivative_from_output(&self, out: f64) -> f64 {
        match self {
            Activation::Relu => {
                if out > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - out * out,
            Activation::Sigmoid => out * (1.0 - out),
            Activation::Identity => 1.0,
            Activation::Softmax => panic!("softmax derivative is fused with the loss"),
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

/// Fully-connected layer; weight is in_dim x out_dim.
#[derive(Debug, Clone)]
pub struct DenseParams {
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
}

/// 1-D convolution with same padding. The weight is a dense map over the
/// flattened kernel window: (kernel * in_dim) x filters.
#[derive(Debug, Clone)]
pub struct Conv1dParams {
    pub kernel: usize,
    pub in_dim: usize,
    pub filters: usize,
    pub w: Mat,
    pub b: Vec<f64>,
    pub activation: Activation,
}

/// One direction of an LSTM layer. Gate order everywhere is i, f, o, g.
#[derive(Debug, Clone)]
pub struct LstmDirParams {
    pub in_dim: usize,
    pub units: usize,
    pub wx: [Mat; 4], // in_dim x units, per gate
    pub wh: [Mat; 4], // units x units, per gate
    pub b: [Vec<f64>; 4],
}

#[derive(Debug, Clone)]
pub struct BiLstmParams {
    pub fwd: LstmDirParams,
    pub bwd: LstmDirParams,
}

impl BiLstmParams {
    pub fn units(&self) -> usize {
        self.fwd.units
    }
}

#[derive(Debug, Clone)]
#[allow(clippy::large_enum_variant)] // only ever held in a short Vec
pub enum Layer {
    Dense(DenseParams),
    Conv1d(Conv1dParams),
    GlobalAvgPool,
    BiLstm(BiLstmParams),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Conv1d(_) => "conv1d",
            Layer::GlobalAvgPool => "global_avg_pool",
            Layer::BiLstm(_) => "bilstm",
        }
    }

    /// Append parameters in declared order; the same order is used by
    /// serialization, optimizers, and gradient checking.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        match self {
            Layer::Dense(p) => {
                out.extend_from_slice(p.w.data());
                out.extend_from_slice(&p.b);
            }
            Layer::Conv1d(p) => {
                out.extend_from_slice(p.w.data());
                out.extend_from_slice(&p.b);
            }
            Layer::GlobalAvgPool => {}
            Layer::BiLstm(p) => {
                for dir in [&p.fwd, &p.bwd] {
                    for m in &dir.wx {
                        out.extend_from_slice(m.data());
                    }
                    for m in &dir.wh {
                        out.extend_from_slice(m.data());
                    }
                    for b in &dir.b {
                        out.extend_from_slice(b);
                    }
                }
            }
        }
    }

    pub fn unflatten_from(&mut self, src: &[f64], pos: &mut usize) {
        fn take<'a>(src: &'a [f64], pos: &mut usize, n: usize) -> &'a [f64] {
            let s = &src[*pos..*pos + n];
            *pos += n;
            s
        }
        match self {
            Layer::Dense(p) => {
                let n = p.w.data().len();
                p.w.data_mut().copy_from_slice(take(src, pos, n));
                let n = p.b.len();
                p.b.copy_from_slice(take(src, pos, n));
            }
            Layer::Conv1d(p) => {
                let n = p.w.data().len();
                p.w.data_mut().copy_from_slice(take(src, pos, n));
                let n = p.b.len();
                p.b.copy_from_slice(take(src, pos, n));
            }
            Layer::GlobalAvgPool => {}
            Layer::BiLstm(p) => {
                for dir in [&mut p.fwd, &mut p.bwd] {
                    for m in &mut dir.wx {
                        let n = m.data().len();
                        m.data_mut().copy_from_slice(take(src, pos, n));
                    }
                    for m in &mut dir.wh {
                        let n = m.data().len();
                        m.data_mut().copy_from_slice(take(src, pos, n));
                    }
                    for b in &mut dir.b {
                        let n = b.len();
                        b.copy_from_slice(take(src, pos, n));
                    }
                }
            }
        }
    }

    pub fn param_count(&self) -> usize {
        let mut v = Vec::new();
        self.flatten_into(&mut v);
        v.len()
    }

    /// A structurally identical layer with all parameters zeroed, used as
    /// a gradient accumulator.
    pub fn zero_like(&self) -> Layer {
        let mut l = self.clone();
        let count = l.param_count();
        let mut pos = 0;
        l.unflatten_from(&vec![0.0; count], &mut pos);
        l
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchName {
    Bilstm,
    Cnn,
    CnnBilstm,
}

impl std::str::FromStr for ArchName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilstm" => Ok(ArchName::Bilstm),
            "cnn" => Ok(ArchName::Cnn),
            "cnn_bilstm" | "cnn-bilstm" => Ok(ArchName::CnnBilstm),
            other => Err(Error::config(format!("unknown architecture '{other}'"))),
        }
    }
}

impl std::fmt::Display for ArchName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            ArchName::Bilstm => "bilstm",
            ArchName::Cnn => "cnn",
            ArchName::CnnBilstm => "cnn_bilstm",
        };
        f.write_str(s)
    }
}

/// Architecture widths; defaults follow the reference setups, tests use
/// tiny values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyper {
    pub bilstm_units: (usize, usize),
    pub dense_hidden: usize,
    pub conv_filters: usize,
    pub conv_kernel: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            bilstm_units: (64, 32),
            dense_hidden: 64,
            conv_filters: 128,
            conv_kernel: 5,
        }
    }
}

impl Hyper {
    pub fn tiny() -> Self {
        Hyper {
            bilstm_units: (8, 4),
            dense_hidden: 16,
            conv_filters: 8,
            conv_kernel: 3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    pub arch: ArchName,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hyper: Hyper,
    pub seed: u64,
}

impl Model {
    pub fn params_to_vec(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for l in &self.layers {
            l.flatten_into(&mut v);
        }
        v
    }

    pub fn params_from_vec(&mut self, src: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if src.len() != expected {
            return Err(Error::Shape {
                context: "params_from_vec".into(),
                expected: expected.to_string(),
                got: src.len().to_string(),
            });
        }
        let mut pos = 0;
        for l in &mut self.layers {
            l.unflatten_from(src, &mut pos);
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.param_count()).sum()
    }
}

fn glorot_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = rng.random_range(-limit..limit);
    }
    m
}

fn dense(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize, activation: Activation) -> Layer {
    Layer::Dense(DenseParams {
        w: glorot_mat(rng, in_dim, out_dim),
        b: vec![0.0; out_dim],
        activation,
    })
}

fn conv1d(rng: &mut ChaCha8Rng, in_dim: usize, filters: usize, kernel: usize) -> Layer {
    Layer::Conv1d(Conv1dParams {
        kernel,
        in_dim,
        filters,
        w: glorot_mat(rng, kernel * in_dim, filters),
        b: vec![0.0; filters],
        activation: Activation::Relu,
    })
}

fn lstm_dir(rng: &mut ChaCha8Rng, in_dim: usize, units: usize) -> LstmDirParams {
    LstmDirParams {
        in_dim,
        units,
        wx: std::array::from_fn(|_| glorot_mat(rng, in_dim, units)),
        wh: std::array::from_fn(|_| glorot_mat(rng, units, units)),
        b: std::array::from_fn(|_| vec![0.0; units]),
    }
}

fn bilstm(rng: &mut ChaCha8Rng, in_dim: usize, units: usize) -> Layer {
    Layer::BiLstm(BiLstmParams {
        fwd: lstm_dir(rng, in_dim, units),
        bwd: lstm_dir(rng, in_dim, units),
    })
}

/// Construct a model with seeded Glorot-uniform weights and zero biases.
pub fn build_model(
    arch: ArchName,
    input_dim: usize,
    num_classes: usize,
    hyper: Hyper,
    seed: u64,
) -> Result<Model> {
    if input_dim == 0 || num_classes == 0 {
        return Err(Error::config("input dim and class count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (u1, u2) = hyper.bilstm_units;
    let layers = match arch {
        ArchName::Bilstm => vec![
            bilstm(&mut rng, input_dim, u1),
            bilstm(&mut rng, 2 * u1, u2),
            dense(&mut rng, 2 * u2, hyper.dense_hidden, Activation::Relu),
            dense(
                &mut rng,
                hyper.dense_hidden,
                num_classes,
                Activation::Softmax,
            ),
        ],
        ArchName::Cnn => vec![
            conv1d(&mut rng, input_dim, hyper.conv_filters, hyper.conv_kernel),
            Layer::GlobalAvgPool,
            dense(
                &mut rng,
                hyper.conv_filters,
                num_classes,
                Activation::Softmax,
            ),
        ],
        // conv feeds the recurrence directly; pooling before a BiLSTM
        // would collapse the sequence it needs
        ArchName::CnnBilstm => vec![
            conv1d(&mut rng, input_dim, hyper.conv_filters, hyper.conv_kernel),
            bilstm(&mut rng, hyper.conv_filters, u1),
            bilstm(&mut rng, 2 * u1, u2),
            dense(&mut rng, 2 * u2, hyper.dense_hidden, Activation::Relu),
            dense(
                &mut rng,
                hyper.dense_hidden,
                num_classes,
                Activation::Softmax,
            ),
        ],
    };
    Ok(Model {
        layers,
        arch,
        input_dim,
        num_classes,
        hyper,
        seed,
    })
}

/// Per-timestep LSTM record; gate order i, f, o, g. `g_pre` holds the
/// candidate's pre-activation, needed by relevance propagation.
#[derive(Debug, Clone)]
pub struct LstmStep {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub g_pre: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

/// One LSTM direction's trace, in processing order (step 0 first).
#[derive(Debug, Clone)]
pub struct LstmDirTrace {
    pub steps: Vec<LstmStep>,
}

#[derive(Debug, Clone)]
pub enum LayerTrace {
    Dense {
        input: Vec<f64>,
        pre: Vec<f64>,
        out: Vec<f64>,
    },
    Conv {
        input: Mat,
        pre: Mat,
        out: Mat,
    },
    Pool {
        input: Mat,
        out: Vec<f64>,
    },
    BiLstm {
        input: Mat,
        fwd: LstmDirTrace,
        bwd: LstmDirTrace,
        out: Mat,
    },
    /// Sequence-to-vector handoff before a dense head: forward half at
    /// the last unmasked step, backward half at step 0.
    TakeFinal {
        t_fwd: usize,
        units: usize,
        out: Vec<f64>,
    },
}

#[derive(Debug, Clone)]
pub struct ActivationTrace {
    pub entries: Vec<LayerTrace>,
    pub real_len: usize,
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
    pub score: f64,
}

/// Dense forward: z_j[k] = sum_i z_i[i] * w[i][k] + b[k], then activation.
pub fn forward_dense(p: &DenseParams, input: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if input.len() != p.w.rows() {
        return Err(Error::Shape {
            context: "dense".into(),
            expected: p.w.rows().to_string(),
            got: input.len().to_string(),
        });
    }
    let mut pre = p.w.vec_mul(input);
    for (z, b) in pre.iter_mut().zip(&p.b) {
        *z += *b;
    }
    let out = p.activation.apply(&pre);
    Ok((pre, out))
}

/// Same-padded 1-D convolution over the unmasked prefix; rows outside the
/// sequence act as zeros.
pub fn forward_conv1d(p: &Conv1dParams, seq: &Mat) -> Result<(Mat, Mat)> {
    if seq.cols() != p.in_dim {
        return Err(Error::Shape {
            context: "conv1d".into(),
            expected: p.in_dim.to_string(),
            got: seq.cols().to_string(),
        });
    }
    let t_len = seq.rows();
    let pad = (p.kernel - 1) / 2;
    let mut pre = Mat::zeros(t_len, p.filters);
    for t in 0..t_len {
        for f in 0..p.filters {
            let mut acc = p.b[f];
            for kk in 0..p.kernel {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    continue; // zero padding
                }
                let row = seq.row(src as usize);
                for (d, &x) in row.iter().enumerate() {
                    acc += x * p.w.get(kk * p.in_dim + d, f);
                }
            }
            pre.set(t, f, acc);
        }
    }
    let mut out = pre.clone();
    for t in 0..t_len {
        let row = out.row_mut(t);
        let activated = p.activation.apply(row);
        row.copy_from_slice(&activated);
    }
    Ok((pre, out))
}

/// Mean over the rows of `seq` (all rows are real positions here; masked
/// padding never enters the layer stack).
pub fn forward_global_avg_pool(seq: &Mat) -> Result<Vec<f64>> {
    if seq.rows() == 0 {
        return Err(Error::data("global average pool over an empty sequence"));
    }
    let t = seq.rows() as f64;
    let mut out = vec![0.0; seq.cols()];
    for r in 0..seq.rows() {
        for (o, &v) in out.iter_mut().zip(seq.row(r)) {
            *o += v / t;
        }
    }
    Ok(out)
}

/// One LSTM cell step. Gates are sigmoid, candidate is tanh.
pub fn forward_lstm_cell(p: &LstmDirParams, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> LstmStep {
    let affine = |gate: usize| -> Vec<f64> {
        let mut z = p.wx[gate].vec_mul(x);
        let zh = p.wh[gate].vec_mul(h_prev);
        for ((z, zh), b) in z.iter_mut().zip(&zh).zip(&p.b[gate]) {
            *z += *zh + *b;
        }
        z
    };
    let i: Vec<f64> = affine(0).iter().map(|&v| sigmoid(v)).collect();
    let f: Vec<f64> = affine(1).iter().map(|&v| sigmoid(v)).collect();
    let o: Vec<f64> = affine(2).iter().map(|&v| sigmoid(v)).collect();
    let g_pre = affine(3);
    let g: Vec<f64> = g_pre.iter().map(|&v| v.tanh()).collect();
    let c: Vec<f64> = (0..p.units)
        .map(|k| f[k] * c_prev[k] + i[k] * g[k])
        .collect();
    let h: Vec<f64> = (0..p.units).map(|k| o[k] * c[k].tanh()).collect();
    LstmStep {
        i,
        f,
        o,
        g,
        g_pre,
        c,
        h,
    }
}

fn run_lstm_dir(p: &LstmDirParams, seq: &Mat, reversed: bool) -> LstmDirTrace {
    let t_len = seq.rows();
    let mut steps = Vec::with_capacity(t_len);
    let mut h = vec![0.0; p.units];
    let mut c = vec![0.0; p.units];
    for s in 0..t_len {
        let pos = if reversed { t_len - 1 - s } else { s };
        let step = forward_lstm_cell(p, seq.row(pos), &h, &c);
        h = step.h.clone();
        c = step.c.clone();
        steps.push(step);
    }
    LstmDirTrace { steps }
}

/// Bidirectional LSTM over the sequence: per-timestep concatenation of
/// the forward and backward hidden states (forward half first).
pub fn forward_bilstm(p: &BiLstmParams, seq: &Mat) -> (LstmDirTrace, LstmDirTrace, Mat) {
    let t_len = seq.rows();
    let units = p.units();
    let fwd = run_lstm_dir(&p.fwd, seq, false);
    let bwd = run_lstm_dir(&p.bwd, seq, true);
    let mut out = Mat::zeros(t_len, 2 * units);
    for t in 0..t_len {
        out.row_mut(t)[..units].copy_from_slice(&fwd.steps[t].h);
        // backward step s processed position t_len-1-s
        out.row_mut(t)[units..].copy_from_slice(&bwd.steps[t_len - 1 - t].h);
    }
    (fwd, bwd, out)
}

enum FlowState {
    Seq(Mat),
    Vec(Vec<f64>),
}

/// Forward pass over a document matrix, recording every layer.
pub fn forward_model(model: &Model, doc: &DocumentMatrix) -> Result<(Prediction, ActivationTrace)> {
    let real_len = doc.real_len();
    if real_len == 0 {
        return Err(Error::data("document has no unmasked tokens"));
    }
    // operate on the contiguous unmasked prefix
    let mut seq = Mat::zeros(real_len, doc.values.cols());
    for t in 0..real_len {
        seq.row_mut(t).copy_from_slice(doc.values.row(t));
    }

    let mut state = FlowState::Seq(seq);
    let mut entries = Vec::new();

    for layer in &model.layers {
        state = match (layer, state) {
            (Layer::Dense(p), FlowState::Seq(seq)) => {
                // implicit sequence-to-vector handoff before a dense head
                let units = seq.cols() / 2;
                let t_fwd = seq.rows() - 1;
                let mut v = vec![0.0; seq.cols()];
                v[..units].copy_from_slice(&seq.row(t_fwd)[..units]);
                v[units..].copy_from_slice(&seq.row(0)[units..]);
                entries.push(LayerTrace::TakeFinal {
                    t_fwd,
                    units,
                    out: v.clone(),
                });
                let (pre, out) = forward_dense(p, &v)?;
                entries.push(LayerTrace::Dense {
                    input: v,
                    pre: pre.clone(),
                    out: out.clone(),
                });
                FlowState::Vec(out)
            }
            (Layer::Dense(p), FlowState::Vec(v)) => {
                let (pre, out) = forward_dense(p, &v)?;
                entries.push(LayerTrace::Dense {
                    input: v,
                    pre,
                    out: out.clone(),
                });
                FlowState::Vec(out)
            }
            (Layer::Conv1d(p), FlowState::Seq(seq)) => {
                let (pre, out) = forward_conv1d(p, &seq)?;
                entries.push(LayerTrace::Conv {
                    input: seq,
                    pre,
                    out: out.clone(),
                });
                FlowState::Seq(out)
            }
            (Layer::GlobalAvgPool, FlowState::Seq(seq)) => {
                let out = forward_global_avg_pool(&seq)?;
                entries.push(LayerTrace::Pool {
                    input: seq,
                    out: out.clone(),
                });
                FlowState::Vec(out)
            }
            (Layer::BiLstm(p), FlowState::Seq(seq)) => {
                let (fwd, bwd, out) = forward_bilstm(p, &seq);
                entries.push(LayerTrace::BiLstm {
                    input: seq,
                    fwd,
                    bwd,
                    out: out.clone(),
                });
                FlowState::Seq(out)
            }
            (l, _) => {
                return Err(Error::Shape {
                    context: l.kind_name().into(),
                    expected: "compatible flow state".into(),
                    got: "sequence/vector mismatch".into(),
                })
            }
        };
    }

    let (logits, probabilities) = match entries.last() {
        Some(LayerTrace::Dense { pre, out, .. }) => (pre.clone(), out.clone()),
        _ => {
            return Err(Error::Shape {
                context: "model".into(),
                expected: "final dense softmax layer".into(),
                got: "other".into(),
            })
        }
    };
    let predicted_class = argmax(&probabilities);
    let score = logits[predicted_class];
    Ok((
        Prediction {
            logits,
            probabilities,
            predicted_class,
            score,
        },
        ActivationTrace { entries, real_len },
    ))
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
