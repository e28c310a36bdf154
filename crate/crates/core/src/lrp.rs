//! Layer-wise relevance propagation: redistribute a prediction score
//! backward through a recorded forward trace to per-token relevances.
//!
//! Every affine map uses the epsilon-stabilized message rule
//!   R_{i<-j} = (z_i w_ij + (eps*sign(z_j) + delta*b_j)/N)
//!              / (z_j + eps*sign(z_j)) * R_j
//! with sign(0) := +1 and N the neuron count of the lower layer feeding
//! neuron j. Multiplicative gates in recurrent cells carry zero
//! relevance; relevance follows the cell-state signal path.

use serde::{Deserialize, Serialize};

use crate::embedding::DocumentMatrix;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{
    forward_model, ActivationTrace, BiLstmParams, Conv1dParams, DenseParams, Layer, LayerTrace,
    LstmDirParams, LstmDirTrace, Model, Prediction,
};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LrpConfig {
    pub epsilon: f64,
    /// 1.0 redistributes each bias share to lower neurons, 0.0 leaks it.
    pub delta: f64,
}

impl Default for LrpConfig {
    fn default() -> Self {
        LrpConfig {
            epsilon: 0.001,
            delta: 1.0,
        }
    }
}

impl LrpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::config("lrp epsilon must be positive"));
        }
        if self.delta != 0.0 && self.delta != 1.0 {
            return Err(Error::config("lrp delta must be 0 or 1"));
        }
        Ok(())
    }
}

#[inline]
fn sign(v: f64) -> f64 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Relevance attributed to non-token inputs, kept visible so
/// conservation stays auditable.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Sinks {
    /// zero-padding positions at convolution boundaries
    pub boundary: f64,
    /// initial recurrent hidden/cell states
    pub initial_state: f64,
    /// bias shares not redistributed (delta = 0 only)
    pub bias_leak: f64,
}

impl Sinks {
    pub fn total(&self) -> f64 {
        self.boundary + self.initial_state + self.bias_leak
    }
}

/// Per-token relevance for a target class.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TokenRelevance {
    pub token: String,
    pub position: usize,
    pub relevance: f64,
}

/// Epsilon-rule redistribution through a dense layer. `r_out` aligns
/// with the layer's pre-activations `pre`. Returns the lower-layer
/// relevance and the bias leak (nonzero only for delta = 0).
pub fn lrp_dense(
    p: &DenseParams,
    input: &[f64],
    pre: &[f64],
    r_out: &[f64],
    cfg: &LrpConfig,
) -> (Vec<f64>, f64) {
    let n = input.len() as f64;
    let mut r_in = vec![0.0; input.len()];
    let mut leak = 0.0;
    for j in 0..pre.len() {
        let r_j = r_out[j];
        if r_j == 0.0 {
            continue;
        }
        let stab = cfg.epsilon * sign(pre[j]);
        let denom = pre[j] + stab;
        let share = (stab + cfg.delta * p.b[j]) / n;
        for i in 0..input.len() {
            let contrib = input[i] * p.w.get(i, j);
            r_in[i] += (contrib + share) / denom * r_j;
        }
        leak += (1.0 - cfg.delta) * p.b[j] / denom * r_j;
    }
    (r_in, leak)
}

/// Proportional redistribution: share_j = z_jk / sum_j z_jk * R_k with
/// an epsilon-stabilized denominator. Equals the dense rule with
/// delta = 0 and zero bias in the epsilon -> 0 limit.
pub fn lrp_proportional(contributions: &[f64], r_k: f64, epsilon: f64) -> Vec<f64> {
    let total: f64 = contributions.iter().sum();
    let denom = total + epsilon * sign(total);
    contributions.iter().map(|&z| z / denom * r_k).collect()
}

/// Relevance through a same-padded conv layer. Each output neuron
/// redistributes over its kernel*in_dim window slots; slots outside the
/// sequence feed the boundary sink.
pub fn lrp_conv1d(
    p: &Conv1dParams,
    input: &Mat,
    pre: &Mat,
    r_out: &Mat,
    cfg: &LrpConfig,
) -> (Mat, f64, f64) {
    let t_len = input.rows();
    let pad = (p.kernel - 1) / 2;
    let n = (p.kernel * p.in_dim) as f64;
    let mut r_in = Mat::zeros(t_len, p.in_dim);
    let mut boundary = 0.0;
    let mut leak = 0.0;
    for t in 0..t_len {
        for f in 0..p.filters {
            let r_j = r_out.get(t, f);
            if r_j == 0.0 {
                continue;
            }
            let z_j = pre.get(t, f);
            let stab = cfg.epsilon * sign(z_j);
            let denom = z_j + stab;
            let share = (stab + cfg.delta * p.b[f]) / n;
            for kk in 0..p.kernel {
                let src = t as isize + kk as isize - pad as isize;
                if src < 0 || src >= t_len as isize {
                    // the whole slot's message is the additive share
                    boundary += p.in_dim as f64 * share / denom * r_j;
                    continue;
                }
                let src = src as usize;
                for d in 0..p.in_dim {
                    let contrib = input.get(src, d) * p.w.get(kk * p.in_dim + d, f);
                    r_in.add_at(src, d, (contrib + share) / denom * r_j);
                }
            }
            leak += (1.0 - cfg.delta) * p.b[f] / denom * r_j;
        }
    }
    (r_in, boundary, leak)
}

/// Relevance through global average pooling, treated as a linear map
/// with weights 1/T and zero bias.
pub fn lrp_pool(input: &Mat, out: &[f64], r_out: &[f64], cfg: &LrpConfig) -> Mat {
    let t_len = input.rows();
    let n = t_len as f64;
    let mut r_in = Mat::zeros(t_len, input.cols());
    for f in 0..input.cols() {
        let r_j = r_out[f];
        if r_j == 0.0 {
            continue;
        }
        let z_j = out[f];
        let stab = cfg.epsilon * sign(z_j);
        let denom = z_j + stab;
        let share = stab / n;
        for t in 0..t_len {
            let contrib = input.get(t, f) / n;
            r_in.add_at(t, f, (contrib + share) / denom * r_j);
        }
    }
    r_in
}

/// Relevance through one LSTM direction.
///
/// Rules: all of R(h_t) flows to c_t (output gate zero); nonlinearities
/// are transparent; R(c_t) splits between f*c_prev and i*g by the
/// stabilized proportion (gates zero); the candidate's affine map
/// distributes to x_t and h_{t-1} by the epsilon rule; recurrent
/// relevance accumulates backward over time; the initial state's share
/// lands in the sink.
#[allow(clippy::too_many_arguments)]
fn lrp_lstm_dir(
    p: &LstmDirParams,
    input: &Mat,
    trace: &LstmDirTrace,
    r_h_seq: &Mat, // T x 2u relevance on the bilstm output
    col_off: usize,
    reversed: bool,
    cfg: &LrpConfig,
    r_in: &mut Mat,
) -> (f64, f64, f64) {
    let t_len = input.rows();
    let units = p.units;
    let n_affine = (p.in_dim + units) as f64;
    let pos_of = |s: usize| if reversed { t_len - 1 - s } else { s };

    let mut initial_sink = 0.0;
    let mut leak = 0.0;
    let gate_relevance = 0.0; // gates receive none by construction

    let mut r_c = vec![0.0; units]; // relevance flowing into c at step s
    let mut r_h_future = vec![0.0; units]; // relevance into h_s from step s+1
    for s in (0..t_len).rev() {
        let step = &trace.steps[s];
        let pos = pos_of(s);
        let x = input.row(pos);
        let c_prev: Option<&[f64]> = if s == 0 {
            None
        } else {
            Some(&trace.steps[s - 1].c)
        };
        let h_prev: Option<&[f64]> = if s == 0 {
            None
        } else {
            Some(&trace.steps[s - 1].h)
        };

        let mut r_c_prev = vec![0.0; units];
        let mut r_h_prev = vec![0.0; units];
        for k in 0..units {
            // rule (a): h relevance flows entirely to the cell state
            let r_total = r_h_seq.get(pos, col_off + k) + r_h_future[k] + r_c[k];
            if r_total == 0.0 {
                continue;
            }
            // rule (c): split c_t = f*c_prev + i*g between its two
            // summands (zero bias, N = 2)
            let cp = c_prev.map_or(0.0, |c| c[k]);
            let z_j = step.c[k];
            let stab = cfg.epsilon * sign(z_j);
            let denom = z_j + stab;
            let share = stab / 2.0;
            let msg_cprev = (step.f[k] * cp + share) / denom * r_total;
            let r_g = (step.i[k] * step.g[k] + share) / denom * r_total;
            if s == 0 {
                initial_sink += msg_cprev;
            } else {
                r_c_prev[k] = msg_cprev;
            }

            // rule (d): candidate affine map g_pre = Wx x + Wh h_prev + b
            if r_g != 0.0 {
                let z_g = step.g_pre[k];
                let stab_g = cfg.epsilon * sign(z_g);
                let denom_g = z_g + stab_g;
                let share_g = (stab_g + cfg.delta * p.b[3][k]) / n_affine;
                for (d, &xv) in x.iter().enumerate() {
                    let contrib = xv * p.wx[3].get(d, k);
                    r_in.add_at(pos, d, (contrib + share_g) / denom_g * r_g);
                }
                for m in 0..units {
                    let hv = h_prev.map_or(0.0, |h| h[m]);
                    let contrib = hv * p.wh[3].get(m, k);
                    let msg = (contrib + share_g) / denom_g * r_g;
                    if s == 0 {
                        initial_sink += msg;
                    } else {
                        r_h_prev[m] += msg;
                    }
                }
                leak += (1.0 - cfg.delta) * p.b[3][k] / denom_g * r_g;
            }
        }
        r_c = r_c_prev;
        r_h_future = r_h_prev;
    }
    (initial_sink, leak, gate_relevance)
}

/// Outcome of one LSTM-layer redistribution, with gate accounting.
pub struct LstmLrpResult {
    pub r_in: Mat,
    pub initial_state: f64,
    pub bias_leak: f64,
    /// total relevance assigned to gate neurons; exactly zero by rule
    pub gate_relevance: f64,
}

/// Relevance through a bidirectional LSTM layer. The two directions are
/// processed independently over their halves of `r_out` and their input
/// relevances summed.
pub fn lrp_bilstm(
    p: &BiLstmParams,
    input: &Mat,
    fwd: &LstmDirTrace,
    bwd: &LstmDirTrace,
    r_out: &Mat,
    cfg: &LrpConfig,
) -> LstmLrpResult {
    let units = p.units();
    let mut r_in = Mat::zeros(input.rows(), p.fwd.in_dim);
    let (s1, l1, g1) = lrp_lstm_dir(&p.fwd, input, fwd, r_out, 0, false, cfg, &mut r_in);
    let (s2, l2, g2) = lrp_lstm_dir(&p.bwd, input, bwd, r_out, units, true, cfg, &mut r_in);
    LstmLrpResult {
        r_in,
        initial_state: s1 + s2,
        bias_leak: l1 + l2,
        gate_relevance: g1 + g2,
    }
}

/// Collapse a T x d input-relevance matrix to per-token scalars.
pub fn lrp_embedding(r_in: &Mat, tokens: &[String]) -> Vec<TokenRelevance> {
    (0..r_in.rows())
        .map(|t| TokenRelevance {
            token: tokens[t].clone(),
            position: t,
            relevance: r_in.row(t).iter().sum(),
        })
        .collect()
}

/// A full explanation pass: token relevances plus conservation
/// diagnostics.
#[derive(Debug, Clone)]
pub struct ExplanationResult {
    pub token_relevances: Vec<TokenRelevance>,
    pub prediction: Prediction,
    pub target_class: usize,
    /// pre-softmax logit of the target class; the relevance budget
    pub f_c: f64,
    pub sinks: Sinks,
    /// |sum(relevances) + sinks - f_c| / max(|f_c|, 1e-9)
    pub conservation_residual: f64,
    pub gate_relevance: f64,
}

/// Redistribute the target class's pre-softmax logit through a recorded
/// trace down to the input matrix.
pub fn relevance_from_trace(
    model: &Model,
    trace: &ActivationTrace,
    prediction: &Prediction,
    target_class: usize,
    cfg: &LrpConfig,
) -> Result<(Mat, Sinks, f64, f64)> {
    cfg.validate()?;
    if target_class >= model.num_classes {
        return Err(Error::config(format!(
            "target class {target_class} outside 0..{}",
            model.num_classes
        )));
    }
    let f_c = prediction.logits[target_class];

    let mut sinks = Sinks::default();
    let mut gate_relevance = 0.0;
    let mut r_vec: Vec<f64> = prediction
        .logits
        .iter()
        .enumerate()
        .map(|(j, _)| if j == target_class { f_c } else { 0.0 })
        .collect();
    let mut r_seq: Option<Mat> = None;

    let mut trace_iter = trace.entries.iter().rev().peekable();
    for layer in model.layers.iter().rev() {
        let entry = trace_iter.next().ok_or_else(|| Error::Numeric {
            layer: layer.kind_name().into(),
            message: "trace exhausted".into(),
        })?;
        match (layer, entry) {
            (Layer::Dense(p), LayerTrace::Dense { input, pre, .. }) => {
                let (r_in, leak) = lrp_dense(p, input, pre, &r_vec, cfg);
                sinks.bias_leak += leak;
                r_vec = r_in;
                if let Some(LayerTrace::TakeFinal { t_fwd, units, .. }) = trace_iter.peek() {
                    let (t_fwd, units) = (*t_fwd, *units);
                    trace_iter.next();
                    let mut seq = Mat::zeros(t_fwd + 1, 2 * units);
                    seq.row_mut(t_fwd)[..units].copy_from_slice(&r_vec[..units]);
                    for (c, &v) in r_vec[units..].iter().enumerate() {
                        seq.add_at(0, units + c, v);
                    }
                    r_seq = Some(seq);
                }
            }
            (Layer::GlobalAvgPool, LayerTrace::Pool { input, out }) => {
                r_seq = Some(lrp_pool(input, out, &r_vec, cfg));
            }
            (Layer::Conv1d(p), LayerTrace::Conv { input, pre, .. }) => {
                let r_out = r_seq.take().ok_or_else(|| Error::Numeric {
                    layer: "conv1d".into(),
                    message: "missing sequence relevance".into(),
                })?;
                let (r_in, boundary, leak) = lrp_conv1d(p, input, pre, &r_out, cfg);
                sinks.boundary += boundary;
                sinks.bias_leak += leak;
                r_seq = Some(r_in);
            }
            (
                Layer::BiLstm(p),
                LayerTrace::BiLstm {
                    input, fwd, bwd, ..
                },
            ) => {
                let r_out = r_seq.take().ok_or_else(|| Error::Numeric {
                    layer: "bilstm".into(),
                    message: "missing sequence relevance".into(),
                })?;
                let res = lrp_bilstm(p, input, fwd, bwd, &r_out, cfg);
                sinks.initial_state += res.initial_state;
                sinks.bias_leak += res.bias_leak;
                gate_relevance += res.gate_relevance;
                r_seq = Some(res.r_in);
            }
            (l, _) => {
                return Err(Error::Numeric {
                    layer: l.kind_name().into(),
                    message: "trace does not match layer stack".into(),
                })
            }
        }
    }

    let r_input = r_seq.ok_or_else(|| Error::Numeric {
        layer: "input".into(),
        message: "relevance did not reach the input".into(),
    })?;
    Ok((r_input, sinks, f_c, gate_relevance))
}

/// Forward with trace, then full backward redistribution; the default
/// target is the predicted class.
pub fn explain_prediction(
    model: &Model,
    doc: &DocumentMatrix,
    tokens: &[String],
    target_class: Option<usize>,
    cfg: &LrpConfig,
) -> Result<ExplanationResult> {
    if tokens.is_empty() {
        return Err(Error::data("cannot explain an empty document"));
    }
    let (prediction, trace) = forward_model(model, doc)?;
    let target = target_class.unwrap_or(prediction.predicted_class);
    let (r_input, sinks, f_c, gate_relevance) =
        relevance_from_trace(model, &trace, &prediction, target, cfg)?;
    let token_relevances = lrp_embedding(&r_input, tokens);

    let total: f64 = token_relevances.iter().map(|t| t.relevance).sum::<f64>() + sinks.total();
    let conservation_residual = (total - f_c).abs() / f_c.abs().max(1e-9);
    Ok(ExplanationResult {
        token_relevances,
        prediction,
        target_class: target,
        f_c,
        sinks,
        conservation_residual,
        gate_relevance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::nn::{build_model, Activation, ArchName, Hyper};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> LrpConfig {
        LrpConfig::default()
    }

    #[test]
    fn dense_messages_match_hand_evaluation() {
        // z_i=(1,1), w=((0.5),(0.5)), b=0, z_j=1, R_j=1, eps=0.001,
        // delta=1, N=2 -> each message (0.5 + 0.0005)/1.001
        let p = DenseParams {
            w: Mat::from_rows(vec![vec![0.5], vec![0.5]]),
            b: vec![0.0],
            activation: Activation::Identity,
        };
        let (r_in, leak) = lrp_dense(&p, &[1.0, 1.0], &[1.0], &[1.0], &cfg());
        let expected = (0.5 + 0.0005) / 1.001;
        assert!((r_in[0] - expected).abs() < 1e-12);
        assert!((r_in[1] - expected).abs() < 1e-12);
        assert!(
            (r_in[0] + r_in[1] - 1.0).abs() < 1e-12,
            "messages sum to R_j"
        );
        assert_eq!(leak, 0.0);
    }

    #[test]
    fn dense_zero_relevance_propagates_zero() {
        let p = DenseParams {
            w: Mat::from_rows(vec![vec![0.3], vec![-0.2]]),
            b: vec![0.1],
            activation: Activation::Identity,
        };
        let (r_in, leak) = lrp_dense(&p, &[1.0, 2.0], &[0.0], &[0.0], &cfg());
        assert!(r_in.iter().all(|&r| r == 0.0));
        assert_eq!(leak, 0.0);
    }

    // brute-force double-loop evaluation of the message formula
    fn dense_oracle(
        w: &Mat,
        b: &[f64],
        input: &[f64],
        pre: &[f64],
        r_out: &[f64],
        eps: f64,
        delta: f64,
    ) -> Vec<f64> {
        let n = input.len() as f64;
        let mut r_in = vec![0.0; input.len()];
        for i in 0..input.len() {
            for j in 0..pre.len() {
                let s = if pre[j] >= 0.0 { 1.0 } else { -1.0 };
                let num = input[i] * w.get(i, j) + (eps * s + delta * b[j]) / n;
                r_in[i] += num / (pre[j] + eps * s) * r_out[j];
            }
        }
        r_in
    }

    #[test]
    fn dense_conservation_on_random_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let in_dim = rng.random_range(2..10);
            let out_dim = rng.random_range(1..8);
            let mut w = Mat::zeros(in_dim, out_dim);
            for v in w.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
            let b: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-0.5..0.5)).collect();
            let input: Vec<f64> = (0..in_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let p = DenseParams {
                w,
                b,
                activation: Activation::Identity,
            };
            let (pre, _) = crate::nn::forward_dense(&p, &input).unwrap();
            let r_out: Vec<f64> = (0..out_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (r_in, _) = lrp_dense(&p, &input, &pre, &r_out, &cfg());
            let sum_in: f64 = r_in.iter().sum();
            let sum_out: f64 = r_out.iter().sum();
            let rel = (sum_in - sum_out).abs() / sum_out.abs().max(1e-12);
            assert!(rel < 1e-10, "conservation violated: {rel}");

            let oracle = dense_oracle(&p.w, &p.b, &input, &pre, &r_out, 0.001, 1.0);
            for (a, o) in r_in.iter().zip(&oracle) {
                assert!((a - o).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn proportional_hand_cases() {
        let r = lrp_proportional(&[2.0, 2.0], 1.0, 1e-12);
        assert!((r[0] - 0.5).abs() < 1e-9);
        assert!((r[1] - 0.5).abs() < 1e-9);

        let r = lrp_proportional(&[3.0], 0.7, 1e-12);
        assert!((r[0] - 0.7).abs() < 1e-9);
    }

    #[test]
    fn proportional_equals_dense_delta0_in_epsilon_limit() {
        let contribs = [0.4, -0.1, 0.9];
        let input = [1.0, 1.0, 1.0];
        let w = Mat::from_rows(vec![vec![0.4], vec![-0.1], vec![0.9]]);
        let p = DenseParams {
            w,
            b: vec![0.0],
            activation: Activation::Identity,
        };
        let z_j: f64 = contribs.iter().sum();
        let small = LrpConfig {
            epsilon: 1e-9,
            delta: 0.0,
        };
        let (dense, _) = lrp_dense(&p, &input, &[z_j], &[1.0], &small);
        let prop = lrp_proportional(&contribs, 1.0, 1e-9);
        for (a, b) in dense.iter().zip(&prop) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn conv_kernel_one_equals_per_position_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let mut w = Mat::zeros(3, 2);
        for v in w.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let b = vec![0.2, -0.1];
        let p = Conv1dParams {
            kernel: 1,
            in_dim: 3,
            filters: 2,
            w: w.clone(),
            b: b.clone(),
            activation: Activation::Identity,
        };
        let mut input = Mat::zeros(4, 3);
        for v in input.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (pre, _) = crate::nn::forward_conv1d(&p, &input).unwrap();
        let mut r_out = Mat::zeros(4, 2);
        for v in r_out.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (r_in, boundary, _) = lrp_conv1d(&p, &input, &pre, &r_out, &cfg());
        assert_eq!(boundary, 0.0);

        let dense = DenseParams {
            w,
            b,
            activation: Activation::Identity,
        };
        for t in 0..4 {
            let (dr, _) = lrp_dense(&dense, input.row(t), pre.row(t), r_out.row(t), &cfg());
            for d in 0..3 {
                assert!((r_in.get(t, d) - dr[d]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_conservation_with_boundary_sink() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut w = Mat::zeros(3 * 2, 3);
        for v in w.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let p = Conv1dParams {
            kernel: 3,
            in_dim: 2,
            filters: 3,
            w,
            b: vec![0.1, -0.3, 0.2],
            activation: Activation::Identity,
        };
        let mut input = Mat::zeros(5, 2);
        for v in input.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (pre, _) = crate::nn::forward_conv1d(&p, &input).unwrap();
        let mut r_out = Mat::zeros(5, 3);
        for v in r_out.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let (r_in, boundary, leak) = lrp_conv1d(&p, &input, &pre, &r_out, &cfg());
        assert_eq!(leak, 0.0);
        let sum_in: f64 = r_in.data().iter().sum::<f64>() + boundary;
        let sum_out: f64 = r_out.data().iter().sum();
        let rel = (sum_in - sum_out).abs() / sum_out.abs().max(1e-12);
        assert!(rel < 1e-8, "conv conservation: {rel}");
        assert!(
            boundary != 0.0,
            "boundary sink should collect padding shares"
        );
    }

    #[test]
    fn pool_equal_inputs_equal_shares_and_conservation() {
        let input = Mat::from_rows(vec![vec![2.0], vec![2.0], vec![2.0]]);
        let out = crate::nn::forward_global_avg_pool(&input).unwrap();
        let r = lrp_pool(&input, &out, &[0.9], &cfg());
        assert!((r.get(0, 0) - r.get(1, 0)).abs() < 1e-12);
        assert!((r.get(1, 0) - r.get(2, 0)).abs() < 1e-12);
        let total: f64 = r.data().iter().sum();
        assert!((total - 0.9).abs() < 1e-12, "exact conservation");
    }

    #[test]
    fn pool_zero_input_gets_only_epsilon_share() {
        let input = Mat::from_rows(vec![vec![0.0], vec![3.0], vec![3.0]]);
        let out = crate::nn::forward_global_avg_pool(&input).unwrap();
        let r = lrp_pool(&input, &out, &[1.0], &cfg());
        // zero contributor receives exactly the eps/N share
        let expected = (0.001 / 3.0) / (2.0 + 0.001);
        assert!((r.get(0, 0) - expected).abs() < 1e-12);
    }

    fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
        let mut m = Mat::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.random_range(-scale..scale);
        }
        m
    }

    #[test]
    fn lstm_conservation_and_gate_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for trial in 0..10 {
            let in_dim = 3;
            let units = 2;
            let p = BiLstmParams {
                fwd: LstmDirParams {
                    in_dim,
                    units,
                    wx: std::array::from_fn(|_| random_mat(&mut rng, in_dim, units, 0.8)),
                    wh: std::array::from_fn(|_| random_mat(&mut rng, units, units, 0.8)),
                    b: std::array::from_fn(|_| {
                        (0..units).map(|_| rng.random_range(-0.3..0.3)).collect()
                    }),
                },
                bwd: LstmDirParams {
                    in_dim,
                    units,
                    wx: std::array::from_fn(|_| random_mat(&mut rng, in_dim, units, 0.8)),
                    wh: std::array::from_fn(|_| random_mat(&mut rng, units, units, 0.8)),
                    b: std::array::from_fn(|_| {
                        (0..units).map(|_| rng.random_range(-0.3..0.3)).collect()
                    }),
                },
            };
            let input = random_mat(&mut rng, 4, in_dim, 1.0);
            let (fwd, bwd, _out) = crate::nn::forward_bilstm(&p, &input);
            let r_out = random_mat(&mut rng, 4, 2 * units, 1.0);
            let res = lrp_bilstm(&p, &input, &fwd, &bwd, &r_out, &cfg());
            let injected: f64 = r_out.data().iter().sum();
            let recovered: f64 =
                res.r_in.data().iter().sum::<f64>() + res.initial_state + res.bias_leak;
            let rel = (recovered - injected).abs() / injected.abs().max(1e-12);
            assert!(rel < 1e-6, "trial {trial}: lstm conservation {rel}");
            assert_eq!(res.gate_relevance, 0.0);
        }
    }

    #[test]
    fn lstm_zero_relevance_in_zero_out() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = BiLstmParams {
            fwd: LstmDirParams {
                in_dim: 2,
                units: 2,
                wx: std::array::from_fn(|_| random_mat(&mut rng, 2, 2, 0.8)),
                wh: std::array::from_fn(|_| random_mat(&mut rng, 2, 2, 0.8)),
                b: std::array::from_fn(|_| vec![0.0; 2]),
            },
            bwd: LstmDirParams {
                in_dim: 2,
                units: 2,
                wx: std::array::from_fn(|_| random_mat(&mut rng, 2, 2, 0.8)),
                wh: std::array::from_fn(|_| random_mat(&mut rng, 2, 2, 0.8)),
                b: std::array::from_fn(|_| vec![0.0; 2]),
            },
        };
        let input = random_mat(&mut rng, 3, 2, 1.0);
        let (fwd, bwd, _) = crate::nn::forward_bilstm(&p, &input);
        let r_out = Mat::zeros(3, 4);
        let res = lrp_bilstm(&p, &input, &fwd, &bwd, &r_out, &cfg());
        assert!(res.r_in.data().iter().all(|&v| v == 0.0));
        assert_eq!(res.initial_state, 0.0);
    }

    #[test]
    fn saturated_gates_route_relevance_to_input() {
        // T=1: i ~= 1, f ~= 0, o ~= 1 forced by large biases; all input
        // relevance lands on x_1 (plus the eps share of the split)
        let big = 50.0;
        let units = 1;
        let in_dim = 2;
        let dir = LstmDirParams {
            in_dim,
            units,
            wx: [
                Mat::zeros(in_dim, units),
                Mat::zeros(in_dim, units),
                Mat::zeros(in_dim, units),
                Mat::from_rows(vec![vec![0.7], vec![-0.4]]),
            ],
            wh: std::array::from_fn(|_| Mat::zeros(units, units)),
            b: [vec![big], vec![-big], vec![big], vec![0.0]],
        };
        let p = BiLstmParams {
            fwd: dir.clone(),
            bwd: dir,
        };
        let input = Mat::from_rows(vec![vec![0.8, 0.5]]);
        let (fwd, bwd, out) = crate::nn::forward_bilstm(&p, &input);
        let mut r_out = Mat::zeros(1, 2);
        r_out.set(0, 0, out.get(0, 0)); // inject on the fwd half only
        let res = lrp_bilstm(&p, &input, &fwd, &bwd, &r_out, &cfg());
        let input_total: f64 = res.r_in.data().iter().sum();
        let injected = out.get(0, 0);
        // initial-state share only carries the eps-stabilizer crumbs
        assert!(res.initial_state.abs() < 1e-2 * injected.abs());
        assert!((input_total + res.initial_state - injected).abs() < 1e-9);
    }

    #[test]
    fn embedding_rowsum_and_budget() {
        let mut r = Mat::zeros(2, 3);
        r.row_mut(0).copy_from_slice(&[0.1, -0.02, 0.05]);
        let tokens: Vec<String> = vec!["alkali".into(), "acid".into()];
        let tr = lrp_embedding(&r, &tokens);
        assert!((tr[0].relevance - 0.13).abs() < 1e-12);
        assert_eq!(tr[1].relevance, 0.0);
        assert_eq!(tr[0].token, "alkali");
    }

    fn explain_random_model(arch: ArchName, seed: u64, cfg: &LrpConfig) -> ExplanationResult {
        let table = EmbeddingTable::synthetic(8, 300);
        let tokens: Vec<String> = ["alkali", "soluble", "polymer", "acid", "stiffness"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let doc = table.embed_document(&tokens, 5).unwrap();
        let model = build_model(arch, 8, 4, Hyper::tiny(), seed).unwrap();
        explain_prediction(&model, &doc, &tokens, None, cfg).unwrap()
    }

    #[test]
    fn end_to_end_conservation_all_architectures() {
        for arch in [ArchName::Bilstm, ArchName::Cnn, ArchName::CnnBilstm] {
            for seed in [1, 2, 3] {
                let res = explain_random_model(arch, seed, &cfg());
                assert!(
                    res.conservation_residual < 1e-5,
                    "{arch} seed {seed}: residual {}",
                    res.conservation_residual
                );
            }
        }
    }

    #[test]
    fn delta_zero_reports_bias_leak() {
        let c = LrpConfig {
            epsilon: 0.001,
            delta: 0.0,
        };
        // trained-free random model has zero biases; perturb via a conv
        // arch trained step is overkill, check the residual still closes
        let res = explain_random_model(ArchName::Cnn, 5, &c);
        assert!(res.conservation_residual < 1e-5);
    }

    #[test]
    fn zero_relevance_budget_gives_all_zero() {
        let table = EmbeddingTable::synthetic(8, 300);
        let tokens: Vec<String> = vec!["power".into(), "modem".into()];
        let doc = table.embed_document(&tokens, 2).unwrap();
        let model = build_model(ArchName::Cnn, 8, 3, Hyper::tiny(), 8).unwrap();
        let (mut pred, trace) = forward_model(&model, &doc).unwrap();
        // force a zero budget for class 0 and keep the trace
        pred.logits[0] = 0.0;
        let (r_in, sinks, f_c, _) = relevance_from_trace(&model, &trace, &pred, 0, &cfg()).unwrap();
        assert_eq!(f_c, 0.0);
        assert!(r_in.data().iter().all(|&v| v == 0.0));
        assert_eq!(sinks.total(), 0.0);
    }

    #[test]
    fn relevance_is_linear_in_injected_budget() {
        // scaling the target logit with a fixed trace scales every token
        // relevance exactly, since the rules are linear in R_j
        let table = EmbeddingTable::synthetic(8, 300);
        let tokens: Vec<String> = vec!["alkali".into(), "acid".into(), "ether".into()];
        let doc = table.embed_document(&tokens, 3).unwrap();
        let model = build_model(ArchName::Bilstm, 8, 3, Hyper::tiny(), 21).unwrap();
        let (pred, trace) = forward_model(&model, &doc).unwrap();
        let (r1, ..) = relevance_from_trace(&model, &trace, &pred, 1, &cfg()).unwrap();

        let lambda = 2.5;
        let mut scaled = pred.clone();
        scaled.logits[1] *= lambda;
        let (r2, ..) = relevance_from_trace(&model, &trace, &scaled, 1, &cfg()).unwrap();
        for (a, b) in r1.data().iter().zip(r2.data()) {
            let rel = (b - lambda * a).abs() / (lambda * a).abs().max(1e-12);
            assert!(rel < 1e-9, "linearity off: {rel}");
        }
    }

    #[test]
    fn determinism_bit_identical() {
        let a = explain_random_model(ArchName::CnnBilstm, 33, &cfg());
        let b = explain_random_model(ArchName::CnnBilstm, 33, &cfg());
        for (x, y) in a.token_relevances.iter().zip(&b.token_relevances) {
            assert_eq!(x.relevance, y.relevance);
        }
    }

    #[test]
    fn empty_document_is_an_error() {
        let table = EmbeddingTable::synthetic(8, 300);
        let tokens: Vec<String> = vec!["x".into()];
        let doc = table.embed_document(&tokens, 1).unwrap();
        let model = build_model(ArchName::Cnn, 8, 2, Hyper::tiny(), 1).unwrap();
        assert!(explain_prediction(&model, &doc, &[], None, &cfg()).is_err());
    }
}
