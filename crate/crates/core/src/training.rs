//! Softmax classifier head, cross-entropy cost, Adam and the mini-batch loop.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::adjoint::{gradients_from_batch, ParamGrads};
use crate::data::{LabeledDataset, SplitDataset};
use crate::error::{check_dim, Error, Result};
use crate::network::{augment_batch, propagate, ModelParams};
use crate::numerics::{dot, gemm, matvec, matvec_t, outer, Matrix, RngState, Transpose, Vector};

/// Affine map `y ↦ W y + μ` followed by softmax.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    /// `C × d̂`.
    pub w: Matrix,
    pub mu: Vector,
}

impl ClassifierHead {
    pub fn zeros(classes: usize, width: usize) -> Self {
        ClassifierHead {
            w: Matrix::zeros(classes, width),
            mu: vec![0.0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.mu.len()
    }

    pub fn logits(&self, y: &[f64]) -> Result<Vector> {
        let mut z = matvec(&self.w, y)?;
        z.iter_mut().zip(&self.mu).for_each(|(a, b)| *a += b);
        Ok(z)
    }
}

/// Smallest probability fed to the logarithm.
pub const PROBABILITY_FLOOR: f64 = 1e-300;

pub fn softmax(z: &[f64]) -> Vector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vector = z.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `ln softmax(z)`, floored at `ln 1e-300`.
fn log_softmax(z: &[f64]) -> Vector {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let floor = PROBABILITY_FLOOR.ln();
    z.iter().map(|x| (x - lse).max(floor)).collect()
}

/// Index of the largest entry; ties go to the smallest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Predicted class of final features `y`. The softmax is monotone, so the
/// argmax of the logits is the argmax of the probabilities.
pub fn classify(head: &ClassifierHead, y: &[f64]) -> Result<usize> {
    Ok(argmax(&head.logits(y)?))
}

/// `−1ᵀ[c ∘ log H(W y + μ)]` for a probability vector `c`.
pub fn cross_entropy(head: &ClassifierHead, y: &[f64], c: &[f64]) -> Result<f64> {
    let z = head.logits(y)?;
    check_dim("cross_entropy target", z.len(), c.len())?;
    Ok(-dot(c, &log_softmax(&z)))
}

/// Gradients of [`cross_entropy`] with respect to `W`, `μ` and `y`.
///
/// With `r = H(W y + μ) − c`: `dW = r yᵀ`, `dμ = r`, `dy = Wᵀ r`.
pub fn head_grads(head: &ClassifierHead, y: &[f64], c: &[f64]) -> Result<(Matrix, Vector, Vector)> {
    let z = head.logits(y)?;
    check_dim("head_grads target", z.len(), c.len())?;
    let r: Vector = softmax(&z).iter().zip(c).map(|(h, c)| h - c).collect();
    let dy = matvec_t(&head.w, &r)?;
    Ok((outer(&r, y), r, dy))
}

/// Batched head pass: summed cost, correct count and unscaled gradients.
pub(crate) struct HeadBackward {
    pub cost: f64,
    pub correct: usize,
    pub dw: Matrix,
    pub dmu: Vector,
    /// Terminal adjoint `p^[L] = Wᵀ r`, one row per sample.
    pub dy: Matrix,
}

fn batch_logits(head: &ClassifierHead, y: &Matrix) -> Result<Matrix> {
    let mut z = Matrix::zeros(y.rows(), head.classes());
    gemm(1.0, y, Transpose::No, &head.w, Transpose::Yes, 0.0, &mut z)?;
    z.add_row_vector(&head.mu)?;
    Ok(z)
}

fn check_labels(head: &ClassifierHead, rows: usize, labels: &[usize]) -> Result<()> {
    check_dim("labels per batch", rows, labels.len())?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= head.classes()) {
        return Err(Error::dims("label index", head.classes(), bad));
    }
    Ok(())
}

pub(crate) fn batch_head_backward(head: &ClassifierHead, y: &Matrix, labels: &[usize]) -> Result<HeadBackward> {
    check_labels(head, y.rows(), labels)?;
    let z = batch_logits(head, y)?;
    let mut r = Matrix::zeros(y.rows(), head.classes());
    let mut cost = 0.0;
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        let zn = z.row(n);
        cost -= log_softmax(zn)[label];
        if argmax(zn) == label {
            correct += 1;
        }
        let rn = r.row_mut(n);
        rn.copy_from_slice(&softmax(zn));
        rn[label] -= 1.0;
    }
    let mut dw = Matrix::zeros(head.classes(), y.cols());
    gemm(1.0, &r, Transpose::Yes, y, Transpose::No, 0.0, &mut dw)?;
    let mut dy = Matrix::zeros(y.rows(), y.cols());
    gemm(1.0, &r, Transpose::No, &head.w, Transpose::No, 0.0, &mut dy)?;
    Ok(HeadBackward {
        cost,
        correct,
        dmu: r.column_sums(),
        dw,
        dy,
    })
}

/// Summed cross-entropy of a batch of final features.
pub(crate) fn batch_cost(head: &ClassifierHead, y: &Matrix, labels: &[usize]) -> Result<f64> {
    Ok(batch_cost_and_correct(head, y, labels)?.0)
}

fn batch_cost_and_correct(head: &ClassifierHead, y: &Matrix, labels: &[usize]) -> Result<(f64, usize)> {
    check_labels(head, y.rows(), labels)?;
    let z = batch_logits(head, y)?;
    let mut cost = 0.0;
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        cost -= log_softmax(z.row(n))[label];
        if argmax(z.row(n)) == label {
            correct += 1;
        }
    }
    Ok((cost, correct))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: ParamGrads,
    v: ParamGrads,
}

impl AdamState {
    pub fn new(config: AdamConfig, model: &ModelParams) -> Self {
        AdamState {
            config,
            step: 0,
            m: ParamGrads::zeros_like(model),
            v: ParamGrads::zeros_like(model),
        }
    }
}

/// One bias-corrected Adam update of every parameter block.
pub fn adam_step(state: &mut AdamState, model: &mut ModelParams, grads: &ParamGrads) -> Result<()> {
    let shapes_match = model
        .slices()
        .iter()
        .zip(grads.slices())
        .all(|(p, g)| p.len() == g.len())
        && model.slices().len() == grads.slices().len();
    if !shapes_match {
        return Err(Error::InvalidConfig("gradient shapes do not match the model".into()));
    }
    state.step += 1;
    let AdamConfig { lr, beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let params = model.slices_mut();
    let ms = state.m.slices_mut();
    let vs = state.v.slices_mut();
    for (((p, g), m), v) in params.into_iter().zip(grads.slices()).zip(ms).zip(vs) {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
            v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// How the per-epoch training-set metrics are obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMetrics {
    /// Re-evaluate the whole training set after each epoch.
    #[default]
    Full,
    /// Average over the mini-batches of the epoch, each measured just before
    /// its update. Saves one forward pass over the training set per epoch.
    Running,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Stop once the validation cost has not improved for this many epochs.
    pub early_stopping: Option<usize>,
    pub train_metrics: TrainMetrics,
    /// Rows per forward pass during evaluation.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 40,
            batch_size: 5,
            adam: AdamConfig::default(),
            early_stopping: None,
            train_metrics: TrainMetrics::Full,
            eval_batch: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Percent.
    pub train_acc: f64,
    pub val_acc: f64,
    /// Mean cross-entropy.
    pub train_cost: f64,
    pub val_cost: f64,
    /// Wall time since training started.
    pub seconds: f64,
}

impl EpochMetrics {
    /// Equality ignoring wall time.
    pub fn same_values(&self, other: &EpochMetrics) -> bool {
        self.epoch == other.epoch
            && self.train_acc.to_bits() == other.train_acc.to_bits()
            && self.val_acc.to_bits() == other.val_acc.to_bits()
            && self.train_cost.to_bits() == other.train_cost.to_bits()
            && self.val_cost.to_bits() == other.val_cost.to_bits()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub epochs: Vec<EpochMetrics>,
}

impl Metrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Accuracy (percent) and mean cost of `model` on `ds`.
pub fn evaluate(model: &ModelParams, ds: &LabeledDataset, chunk: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim("dataset dimension", model.spec.input_dim, ds.dim)?;
    let chunk = chunk.max(1);
    let mut cost = 0.0;
    let mut correct = 0;
    for start in (0..ds.len()).step_by(chunk) {
        let end = (start + chunk).min(ds.len());
        let x_hat = augment_batch(&ds.samples[start..end], model.width())?;
        let y = propagate(model, &x_hat)?;
        let (c, k) = batch_cost_and_correct(&model.head, &y, &ds.labels[start..end])?;
        cost += c;
        correct += k;
    }
    let n = ds.len() as f64;
    Ok((100.0 * correct as f64 / n, cost / n))
}

/// Mini-batch Adam training.
///
/// Row 0 of the returned metrics is the evaluation before any update. Each
/// epoch draws a fresh permutation from `rng`. `on_epoch` sees every row as
/// soon as it is recorded, so callers can persist partial progress.
pub fn train(
    mut model: ModelParams,
    data: &SplitDataset,
    config: &TrainConfig,
    rng: &mut RngState,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(ModelParams, Metrics)> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be at least 1".into()));
    }
    model.check_shapes()?;
    check_dim("dataset dimension", model.spec.input_dim, data.train.dim)?;
    check_dim("dataset classes", model.spec.classes, data.train.classes)?;

    let started = Instant::now();
    let mut metrics = Metrics::default();
    let mut record = |m: EpochMetrics, metrics: &mut Metrics| {
        on_epoch(&m);
        metrics.epochs.push(m);
    };

    let (train_acc, train_cost) = evaluate(&model, &data.train, config.eval_batch)?;
    let (val_acc, val_cost) = evaluate(&model, &data.val, config.eval_batch)?;
    record(
        EpochMetrics {
            epoch: 0,
            train_acc,
            val_acc,
            train_cost,
            val_cost,
            seconds: started.elapsed().as_secs_f64(),
        },
        &mut metrics,
    );

    let mut adam = AdamState::new(config.adam, &model);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut best_val = val_cost;
    let mut stale = 0;
    let batch_scale_of = |n: usize| 1.0 / n as f64;

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut run_cost = 0.0;
        let mut run_correct = 0;
        for (batch_index, idx) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = idx.iter().map(|&i| data.train.samples[i].as_slice()).collect();
            let labels: Vec<usize> = idx.iter().map(|&i| data.train.labels[i]).collect();
            let x_hat = augment_batch(&inputs, model.width())?;
            let (cost, grads, correct) =
                gradients_from_batch(&model, &x_hat, &labels, batch_scale_of(idx.len()))?;
            if !cost.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite {
                    epoch,
                    batch: batch_index,
                    value: cost,
                });
            }
            run_cost += cost;
            run_correct += correct;
            adam_step(&mut adam, &mut model, &grads)?;
        }

        let (train_acc, train_cost) = match config.train_metrics {
            TrainMetrics::Full => evaluate(&model, &data.train, config.eval_batch)?,
            TrainMetrics::Running => {
                let n = data.train.len() as f64;
                (100.0 * run_correct as f64 / n, run_cost / n)
            }
        };
        let (val_acc, val_cost) = evaluate(&model, &data.val, config.eval_batch)?;
        if !val_cost.is_finite() {
            return Err(Error::NonFinite {
                epoch,
                batch: usize::MAX,
                value: val_cost,
            });
        }
        record(
            EpochMetrics {
                epoch,
                train_acc,
                val_acc,
                train_cost,
                val_cost,
                seconds: started.elapsed().as_secs_f64(),
            },
            &mut metrics,
        );

        if let Some(patience) = config.early_stopping {
            if val_cost < best_val {
                best_val = val_cost;
                stale = 0;
            } else {
                stale += 1;
                if stale >= patience {
                    break;
                }
            }
        }
    }
    Ok((model, metrics))
}
