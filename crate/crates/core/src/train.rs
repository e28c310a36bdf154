//! Optimization and evaluation: hand-derived backward passes, SGD/Adam,
//! the training loop, and confusion-matrix metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::mat::Mat;
use crate::nn::{forward_model, Activation, ActivationTrace, Layer, LayerTrace, Model, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub max_len: usize,
    /// Per-class loss weights; length must equal the class count.
    pub class_weights: Option<Vec<f64>>,
    /// Early stopping on validation macro-F1; 0 disables early stopping.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            batch_size: 16,
            learning_rate: 1e-3,
            optimizer: Optimizer::default(),
            seed: 42,
            max_len: 256,
            class_weights: None,
            patience: 3,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("epochs and batch size must be positive"));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::config("learning rate must be positive"));
        }
        if let Some(w) = &self.class_weights {
            if w.len() != num_classes {
                return Err(Error::config(format!(
                    "class_weights has length {}, expected {num_classes}",
                    w.len()
                )));
            }
        }
        Ok(())
    }
}

/// -weight * log(prob[gold]), probability floored at 1e-12.
pub fn cross_entropy_loss(probabilities: &[f64], gold: usize, weight: f64) -> f64 {
    -weight * probabilities[gold].max(1e-12).ln()
}

/// Gradient of the loss w.r.t. every model parameter, in
/// `params_to_vec` order.
pub fn backward(
    model: &Model,
    trace: &ActivationTrace,
    prediction: &Prediction,
    gold: usize,
    weight: f64,
) -> Result<(f64, Vec<f64>)> {
    let loss = cross_entropy_loss(&prediction.probabilities, gold, weight);

    // softmax + cross-entropy fused: d(pre) = weight * (p - onehot)
    let k = prediction.probabilities.len();
    let mut upstream_vec: Vec<f64> = (0..k)
        .map(|j| weight * (prediction.probabilities[j] - if j == gold { 1.0 } else { 0.0 }))
        .collect();
    let mut upstream_seq: Option<Mat> = None;

    let mut layer_grads: Vec<Layer> = Vec::with_capacity(model.layers.len());

    // the trace carries TakeFinal entries that have no layer; walk both
    // in reverse, consuming trace entries as they appear
    let mut trace_iter = trace.entries.iter().rev().peekable();
    for layer in model.layers.iter().rev() {
        let entry = trace_iter.next().ok_or_else(|| Error::Numeric {
            layer: layer.kind_name().into(),
            message: "trace exhausted".into(),
        })?;
        match (layer, entry) {
            (Layer::Dense(p), LayerTrace::Dense { input, pre: _, out }) => {
                // upstream_vec is d/d(out) for hidden layers, d/d(pre)
                // for the fused softmax head
                let d_pre: Vec<f64> = if p.activation == Activation::Softmax {
                    upstream_vec.clone()
                } else {
                    out.iter()
                        .zip(&upstream_vec)
                        .map(|(&o, &g)| g * p.activation.derivative_from_output(o))
                        .collect()
                };
                let mut gw = Mat::zeros(p.w.rows(), p.w.cols());
                gw.add_outer(input, &d_pre);
                let grads = Layer::Dense(crate::nn::DenseParams {
                    w: gw,
                    b: d_pre.clone(),
                    activation: p.activation,
                });
                upstream_vec = p.w.vec_mul_t(&d_pre);
                layer_grads.push(grads);

                // a TakeFinal entry may precede this dense layer
                if let Some(LayerTrace::TakeFinal { t_fwd, units, .. }) = trace_iter.peek() {
                    let (t_fwd, units) = (*t_fwd, *units);
                    trace_iter.next();
                    let mut seq = Mat::zeros(t_fwd + 1, 2 * units);
                    seq.row_mut(t_fwd)[..units].copy_from_slice(&upstream_vec[..units]);
                    for (c, &v) in upstream_vec[units..].iter().enumerate() {
                        seq.add_at(0, units + c, v);
                    }
                    upstream_seq = Some(seq);
                }
            }
            (Layer::GlobalAvgPool, LayerTrace::Pool { input, .. }) => {
                let t_len = input.rows();
                let mut seq = Mat::zeros(t_len, input.cols());
                for t in 0..t_len {
                    for (c, &g) in upstream_vec.iter().enumerate() {
                        seq.set(t, c, g / t_len as f64);
                    }
                }
                upstream_seq = Some(seq);
                layer_grads.push(Layer::GlobalAvgPool);
            }
            (Layer::Conv1d(p), LayerTrace::Conv { input, pre: _, out }) => {
                let d_out = upstream_seq.take().ok_or_else(|| Error::Numeric {
                    layer: "conv1d".into(),
                    message: "missing sequence gradient".into(),
                })?;
                let t_len = input.rows();
                let pad = (p.kernel - 1) / 2;
                let mut gw = Mat::zeros(p.w.rows(), p.w.cols());
                let mut gb = vec![0.0; p.filters];
                let mut d_in = Mat::zeros(t_len, p.in_dim);
                for t in 0..t_len {
                    for f in 0..p.filters {
                        let g =
                            d_out.get(t, f) * p.activation.derivative_from_output(out.get(t, f));
                        if g == 0.0 {
                            continue;
                        }
                        gb[f] += g;
                        for kk in 0..p.kernel {
                            let src = t as isize + kk as isize - pad as isize;
                            if src < 0 || src >= t_len as isize {
                                continue;
                            }
                            let src = src as usize;
                            for d in 0..p.in_dim {
                                gw.add_at(kk * p.in_dim + d, f, input.get(src, d) * g);
                                d_in.add_at(src, d, p.w.get(kk * p.in_dim + d, f) * g);
                            }
                        }
                    }
                }
                upstream_seq = Some(d_in);
                layer_grads.push(Layer::Conv1d(crate::nn::Conv1dParams {
                    kernel: p.kernel,
                    in_dim: p.in_dim,
                    filters: p.filters,
                    w: gw,
                    b: gb,
                    activation: p.activation,
                }));
            }
            (
                Layer::BiLstm(p),
                LayerTrace::BiLstm {
                    input, fwd, bwd, ..
                },
            ) => {
                let d_out = upstream_seq.take().ok_or_else(|| Error::Numeric {
                    layer: "bilstm".into(),
                    message: "missing sequence gradient".into(),
                })?;
                let units = p.units();
                let t_len = input.rows();

                // per-direction d(h) in processing order
                let mut d_in = Mat::zeros(t_len, p.fwd.in_dim);
                let gf = lstm_dir_backward(&p.fwd, input, fwd, &d_out, units, false, &mut d_in);
                let gb = lstm_dir_backward(&p.bwd, input, bwd, &d_out, units, true, &mut d_in);
                upstream_seq = Some(d_in);
                layer_grads.push(Layer::BiLstm(crate::nn::BiLstmParams { fwd: gf, bwd: gb }));
            }
            (l, _) => {
                return Err(Error::Numeric {
                    layer: l.kind_name().into(),
                    message: "trace does not match layer stack".into(),
                })
            }
        }
    }

    layer_grads.reverse();
    let mut flat = Vec::with_capacity(model.param_count());
    for g in &layer_grads {
        g.flatten_into(&mut flat);
    }

    if !loss.is_finite() {
        return Err(Error::Numeric {
            layer: "loss".into(),
            message: format!("non-finite loss {loss}"),
        });
    }
    for (layer, g) in model.layers.iter().zip(&layer_grads) {
        let mut v = Vec::new();
        g.flatten_into(&mut v);
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric {
                layer: layer.kind_name().into(),
                message: "non-finite gradient".into(),
            });
        }
    }
    Ok((loss, flat))
}

/// BPTT through one LSTM direction. `d_out` is the full T x 2*units
/// output gradient; this direction reads its half. Input gradients
/// accumulate into `d_in` at sequence positions.
fn lstm_dir_backward(
    p: &crate::nn::LstmDirParams,
    input: &Mat,
    trace: &crate::nn::LstmDirTrace,
    d_out: &Mat,
    units: usize,
    reversed: bool,
    d_in: &mut Mat,
) -> crate::nn::LstmDirParams {
    let t_len = input.rows();
    let mut grads = crate::nn::LstmDirParams {
        in_dim: p.in_dim,
        units: p.units,
        wx: std::array::from_fn(|_| Mat::zeros(p.in_dim, p.units)),
        wh: std::array::from_fn(|_| Mat::zeros(p.units, p.units)),
        b: std::array::from_fn(|_| vec![0.0; p.units]),
    };
    let col_off = if reversed { units } else { 0 };
    let pos_of = |s: usize| if reversed { t_len - 1 - s } else { s };

    let mut dh_next = vec![0.0; units];
    let mut dc_next = vec![0.0; units];
    for s in (0..t_len).rev() {
        let step = &trace.steps[s];
        let pos = pos_of(s);
        let x = input.row(pos);
        let (h_prev, c_prev): (&[f64], &[f64]) = if s == 0 {
            (&[], &[])
        } else {
            (&trace.steps[s - 1].h, &trace.steps[s - 1].c)
        };

        let mut dh = dh_next.clone();
        for k in 0..units {
            dh[k] += d_out.get(pos, col_off + k);
        }

        let mut d_gate_pre = [
            vec![0.0; units],
            vec![0.0; units],
            vec![0.0; units],
            vec![0.0; units],
        ];
        let mut dc_prev = vec![0.0; units];
        for k in 0..units {
            let tanh_c = step.c[k].tanh();
            let d_o = dh[k] * tanh_c;
            let dc = dh[k] * step.o[k] * (1.0 - tanh_c * tanh_c) + dc_next[k];
            let cp = if s == 0 { 0.0 } else { c_prev[k] };
            let d_i = dc * step.g[k];
            let d_f = dc * cp;
            let d_g = dc * step.i[k];
            d_gate_pre[0][k] = d_i * step.i[k] * (1.0 - step.i[k]);
            d_gate_pre[1][k] = d_f * step.f[k] * (1.0 - step.f[k]);
            d_gate_pre[2][k] = d_o * step.o[k] * (1.0 - step.o[k]);
            d_gate_pre[3][k] = d_g * (1.0 - step.g[k] * step.g[k]);
            dc_prev[k] = dc * step.f[k];
        }

        let mut dh_prev = vec![0.0; units];
        for gate in 0..4 {
            let dg = &d_gate_pre[gate];
            grads.wx[gate].add_outer(x, dg);
            if s > 0 {
                grads.wh[gate].add_outer(h_prev, dg);
            }
            for (b, &g) in grads.b[gate].iter_mut().zip(dg) {
                *b += g;
            }
            let dx = p.wx[gate].vec_mul_t(dg);
            for (d, v) in dx.iter().enumerate() {
                d_in.add_at(pos, d, *v);
            }
            let dhp = p.wh[gate].vec_mul_t(dg);
            for (a, b) in dh_prev.iter_mut().zip(&dhp) {
                *a += *b;
            }
        }
        dh_next = dh_prev;
        dc_next = dc_prev;
    }
    grads
}

/// Adam/SGD state over the flat parameter vector.
pub struct OptimizerState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl OptimizerState {
    pub fn new(param_count: usize) -> Self {
        OptimizerState {
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
            t: 0,
        }
    }

    pub fn apply(&mut self, params: &mut [f64], grads: &[f64], optimizer: Optimizer, lr: f64) {
        match optimizer {
            Optimizer::Sgd => {
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                self.t += 1;
                let t = self.t as i32;
                let bc1 = 1.0 - beta1.powi(t);
                let bc2 = 1.0 - beta2.powi(t);
                for i in 0..params.len() {
                    self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grads[i];
                    self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grads[i] * grads[i];
                    let m_hat = self.m[i] / bc1;
                    let v_hat = self.v[i] / bc2;
                    params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
    }
}

/// Pre-embedded training sample.
pub struct Sample {
    pub doc: crate::embedding::DocumentMatrix,
    pub label: usize,
}

pub fn embed_dataset(ds: &Dataset, table: &EmbeddingTable, max_len: usize) -> Result<Vec<Sample>> {
    ds.documents
        .iter()
        .map(|d| {
            Ok(Sample {
                doc: table.embed_document(&d.tokens, max_len.min(d.tokens.len()).max(1))?,
                label: d.label,
            })
        })
        .collect()
}

/// One averaged mini-batch step. Returns the mean batch loss.
pub fn train_step(
    model: &mut Model,
    batch: &[&Sample],
    config: &TrainConfig,
    state: &mut OptimizerState,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::data("empty batch"));
    }
    let mut total_loss = 0.0;
    let mut grad_sum = vec![0.0; model.param_count()];
    for sample in batch {
        let weight = config
            .class_weights
            .as_ref()
            .map_or(1.0, |w| w[sample.label]);
        let (pred, trace) = forward_model(model, &sample.doc)?;
        let (loss, grads) = backward(model, &trace, &pred, sample.label, weight)?;
        total_loss += loss;
        crate::mat::add_assign(&mut grad_sum, &grads);
    }
    let n = batch.len() as f64;
    for g in &mut grad_sum {
        *g /= n;
    }
    if config.learning_rate > 0.0 {
        let mut params = model.params_to_vec();
        state.apply(
            &mut params,
            &grad_sum,
            config.optimizer,
            config.learning_rate,
        );
        model.params_from_vec(&params)?;
    }
    Ok(total_loss / n)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Metrics {
    pub per_class_precision: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub per_class_f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// confusion[gold][pred]
    pub confusion: Vec<Vec<usize>>,
    /// classes where a zero denominator forced a 0 metric
    pub zero_denominator_classes: Vec<usize>,
}

/// Train with deterministic shuffling, optional early stopping on
/// validation macro-F1, retaining the best-validation parameters.
pub fn train(
    model: &mut Model,
    train_samples: &[Sample],
    valid_samples: &[Sample],
    config: &TrainConfig,
) -> Result<Vec<EpochRecord>> {
    config.validate(model.num_classes)?;
    if train_samples.is_empty() {
        return Err(Error::data("empty training set"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut state = OptimizerState::new(model.param_count());
    let mut history = Vec::with_capacity(config.epochs);
    let mut best_f1 = f64::NEG_INFINITY;
    let mut best_params = model.params_to_vec();
    let mut epochs_since_best = 0usize;

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &train_samples[i]).collect();
            epoch_loss += train_step(model, &batch, config, &mut state)?;
            batches += 1;
        }
        epoch_loss /= batches as f64;

        let val = evaluate_samples(model, valid_samples)?;
        history.push(EpochRecord {
            epoch,
            train_loss: epoch_loss,
            val_macro_f1: val.macro_f1,
        });

        if val.macro_f1 > best_f1 {
            best_f1 = val.macro_f1;
            best_params = model.params_to_vec();
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if config.patience > 0 && epochs_since_best >= config.patience {
                break;
            }
        }
    }

    model.params_from_vec(&best_params)?;
    Ok(history)
}

pub fn evaluate_samples(model: &Model, samples: &[Sample]) -> Result<Metrics> {
    if samples.is_empty() {
        return Err(Error::data("empty evaluation set"));
    }
    let k = model.num_classes;
    let mut confusion = vec![vec![0usize; k]; k];
    for s in samples {
        if s.label >= k {
            return Err(Error::data(format!(
                "label {} outside model's {k} classes",
                s.label
            )));
        }
        let (pred, _) = forward_model(model, &s.doc)?;
        confusion[s.label][pred.predicted_class] += 1;
    }
    Ok(metrics_from_confusion(&confusion))
}

/// Precision/recall/F1 per class and macro, from a confusion matrix
/// indexed [gold][pred]. Zero denominators yield 0 and flag the class.
pub fn metrics_from_confusion(confusion: &[Vec<usize>]) -> Metrics {
    let k = confusion.len();
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut f1 = vec![0.0; k];
    let mut zero_flags = Vec::new();
    for c in 0..k {
        let tp = confusion[c][c];
        let fp: usize = (0..k).filter(|&g| g != c).map(|g| confusion[g][c]).sum();
        let fn_: usize = (0..k).filter(|&p| p != c).map(|p| confusion[c][p]).sum();
        let mut flagged = false;
        precision[c] = if tp + fp == 0 {
            flagged = true;
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        recall[c] = if tp + fn_ == 0 {
            flagged = true;
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        f1[c] = if precision[c] + recall[c] == 0.0 {
            flagged = true;
            0.0
        } else {
            2.0 * precision[c] * recall[c] / (precision[c] + recall[c])
        };
        if flagged {
            zero_flags.push(c);
        }
    }
    let kf = k as f64;
    Metrics {
        macro_precision: precision.iter().sum::<f64>() / kf,
        macro_recall: recall.iter().sum::<f64>() / kf,
        macro_f1: f1.iter().sum::<f64>() / kf,
        per_class_precision: precision,
        per_class_recall: recall,
        per_class_f1: f1,
        confusion: confusion.to_vec(),
        zero_denominator_classes: zero_flags,
    }
}

/// Metrics from parallel gold/pred label slices.
pub fn metrics_from_labels(gold: &[usize], pred: &[usize], k: usize) -> Metrics {
    assert_eq!(gold.len(), pred.len());
    let mut confusion = vec![vec![0usize; k]; k];
    for (&g, &p) in gold.iter().zip(pred) {
        confusion[g][p] += 1;
    }
    metrics_from_confusion(&confusion)
}

/// TSV report mirroring the class-wise table: class, precision, recall,
/// f1, plus a macro row.
pub fn metrics_report(metrics: &Metrics, class_names: &[String]) -> String {
    let mut out = String::from("class\tprecision\trecall\tf1\n");
    for (c, name) in class_names.iter().enumerate() {
        let _ = writeln!(
            out,
            "{name}\t{:.4}\t{:.4}\t{:.4}",
            metrics.per_class_precision[c], metrics.per_class_recall[c], metrics.per_class_f1[c]
        );
    }
    let _ = writeln!(
        out,
        "macro\t{:.4}\t{:.4}\t{:.4}",
        metrics.macro_precision, metrics.macro_recall, metrics.macro_f1
    );
    out
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,loss,val_macro_f1\n");
    for r in history {
        let _ = writeln!(out, "{},{:.6},{:.6}", r.epoch, r.train_loss, r.val_macro_f1);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::EmbeddingTable;
    use crate::nn::{build_model, ArchName, Hyper};

    #[test]
    fn cross_entropy_known_values() {
        assert_eq!(cross_entropy_loss(&[1.0, 0.0], 0, 1.0), 0.0);
        let uniform = vec![1.0 / 9.0; 9];
        assert!((cross_entropy_loss(&uniform, 4, 1.0) - 9f64.ln()).abs() < 1e-12);
        assert!((cross_entropy_loss(&[0.5, 0.5], 0, 2.0) - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    fn toy_samples(table: &EmbeddingTable, n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| {
                let word = if i % 2 == 0 { "acid" } else { "modem" };
                let tokens: Vec<String> = vec![word.into(), format!("w{i}")];
                Sample {
                    doc: table.embed_document(&tokens, 3).unwrap(),
                    label: i % 2,
                }
            })
            .collect()
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let table = EmbeddingTable::synthetic(8, 200);
        let samples = toy_samples(&table, 4);
        let mut model = build_model(ArchName::Cnn, 8, 2, Hyper::tiny(), 3).unwrap();
        let before = model.params_to_vec();
        let config = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        // learning_rate 0 fails validate; call train_step directly
        let mut state = OptimizerState::new(model.param_count());
        let batch: Vec<&Sample> = samples.iter().collect();
        train_step(&mut model, &batch, &config, &mut state).unwrap();
        assert_eq!(model.params_to_vec(), before);
    }

    #[test]
    fn gradient_is_linear_in_sample_weight() {
        let table = EmbeddingTable::synthetic(8, 200);
        let samples = toy_samples(&table, 2);
        let model = build_model(ArchName::Cnn, 8, 2, Hyper::tiny(), 3).unwrap();
        let (_, g0) = {
            let (p, t) = forward_model(&model, &samples[0].doc).unwrap();
            backward(&model, &t, &p, samples[0].label, 1.0).unwrap()
        };
        let (_, g0w) = {
            let (p, t) = forward_model(&model, &samples[0].doc).unwrap();
            backward(&model, &t, &p, samples[0].label, 2.0).unwrap()
        };
        for (a, b) in g0.iter().zip(&g0w) {
            assert!((2.0 * a - b).abs() < 1e-10, "gradient not linear in weight");
        }
    }

    #[test]
    fn evaluate_matches_hand_confusion() {
        // gold (0,0,1,1), pred (0,1,1,1)
        let m = metrics_from_labels(&[0, 0, 1, 1], &[0, 1, 1, 1], 2);
        assert!((m.per_class_precision[0] - 1.0).abs() < 1e-12);
        assert!((m.per_class_recall[0] - 0.5).abs() < 1e-12);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class_precision[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((m.per_class_recall[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_predictions_all_ones() {
        let m = metrics_from_labels(&[0, 1, 2, 0], &[0, 1, 2, 0], 3);
        assert_eq!(m.macro_f1, 1.0);
        assert_eq!(m.macro_precision, 1.0);
        assert!(m.zero_denominator_classes.is_empty());
    }

    #[test]
    fn zero_denominator_flags_class() {
        // class 2 never appears in gold or pred
        let m = metrics_from_labels(&[0, 1], &[0, 1], 3);
        assert_eq!(m.per_class_f1[2], 0.0);
        assert_eq!(m.zero_denominator_classes, vec![2]);
    }

    #[test]
    fn confusion_sums_to_set_size() {
        let m = metrics_from_labels(&[0, 1, 1, 0, 2], &[0, 0, 1, 2, 2], 3);
        let total: usize = m.confusion.iter().flatten().sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn metrics_equal_per_sample_tally() {
        // independent tally oracle
        let gold = [0usize, 1, 2, 1, 0, 2, 2, 1];
        let pred = [0usize, 2, 2, 1, 1, 2, 0, 1];
        let m = metrics_from_labels(&gold, &pred, 3);
        for c in 0..3 {
            let tp = gold
                .iter()
                .zip(&pred)
                .filter(|(&g, &p)| g == c && p == c)
                .count() as f64;
            let pred_c = pred.iter().filter(|&&p| p == c).count() as f64;
            let gold_c = gold.iter().filter(|&&g| g == c).count() as f64;
            assert!((m.per_class_precision[c] - tp / pred_c).abs() < 1e-12);
            assert!((m.per_class_recall[c] - tp / gold_c).abs() < 1e-12);
        }
    }

    #[test]
    fn training_is_deterministic_and_patience_zero_runs_all_epochs() {
        let table = EmbeddingTable::synthetic(8, 200);
        let samples = toy_samples(&table, 8);
        let valid = toy_samples(&table, 4);
        let config = TrainConfig {
            epochs: 5,
            batch_size: 4,
            patience: 0,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let mut m1 = build_model(ArchName::Cnn, 8, 2, Hyper::tiny(), 3).unwrap();
        let h1 = train(&mut m1, &samples, &valid, &config).unwrap();
        assert_eq!(h1.len(), 5);
        let mut m2 = build_model(ArchName::Cnn, 8, 2, Hyper::tiny(), 3).unwrap();
        let h2 = train(&mut m2, &samples, &valid, &config).unwrap();
        for (a, b) in h1.iter().zip(&h2) {
            assert_eq!(a.train_loss, b.train_loss);
            assert_eq!(a.val_macro_f1, b.val_macro_f1);
        }
    }

    #[test]
    fn loss_mostly_non_increasing_on_fixed_batch() {
        let table = EmbeddingTable::synthetic(8, 200);
        let samples = toy_samples(&table, 4);
        let batch: Vec<&Sample> = samples.iter().collect();
        let config = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 0.05,
            ..TrainConfig::default()
        };
        let mut model = build_model(ArchName::Bilstm, 8, 2, Hyper::tiny(), 5).unwrap();
        let mut state = OptimizerState::new(model.param_count());
        let mut losses = Vec::new();
        for _ in 0..40 {
            losses.push(train_step(&mut model, &batch, &config, &mut state).unwrap());
        }
        let increases = losses.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        assert!(
            increases * 20 <= losses.len(),
            "{increases} increases over {} steps",
            losses.len()
        );
    }
}
