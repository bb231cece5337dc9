//! Mini-batch training: seeded shuffling, Adam with bias correction, and
//! global-norm gradient clipping.
//!
//! Split models train on the union of the real set X and the support set
//! X_s, concatenated and shuffled jointly; each datum carries its own
//! is-support flag into the loss. Per-datum noise is pre-drawn serially, so
//! the optional parallel fan-out over a batch reduces gradients in index
//! order and reproduces the single-threaded run bitwise.

use thiserror::Error;

use crate::field::{Dataset, Datum, Provenance};
use crate::models::{LossBreakdown, Model, ModelError, ModelKind, ParamSet};
use crate::rng::RngStream;
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{kind} requires a support dataset")]
    MissingSupport { kind: &'static str },
    #[error("vrnn takes no support set")]
    UnexpectedSupport,
    #[error("training data geometry {x:?} does not match support geometry {xs:?}")]
    SupportGeometryMismatch { x: Vec<usize>, xs: Vec<usize> },
    #[error("cannot train on an empty dataset")]
    EmptyDataset,
    #[error("batch size {batch_size} is invalid for {available} data")]
    BadBatchSize { batch_size: usize, available: usize },
    #[error("learning rate must be positive, got {lr}")]
    BadLearningRate { lr: f64 },
    #[error("gradient count {got} does not match parameter count {expected}")]
    GradCountMismatch { expected: usize, got: usize },
}

/// Adam moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(params: &ParamSet) -> Self {
        let zeros: Vec<Tensor> = params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update over all parameters.
pub fn adam_step(
    state: &mut AdamState,
    params: &mut ParamSet,
    grads: &[Tensor],
    lr: f64,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::GradCountMismatch {
            expected: params.len(),
            got: grads.len(),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for ((theta, g), (m, v)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        if theta.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: theta.shape().to_vec(),
                rhs: g.shape().to_vec(),
            }
            .into());
        }
        let md = m.data_mut();
        let vd = v.data_mut();
        let td = theta.data_mut();
        for i in 0..td.len() {
            let gi = g.data()[i];
            md[i] = state.beta1 * md[i] + (1.0 - state.beta1) * gi;
            vd[i] = state.beta2 * vd[i] + (1.0 - state.beta2) * gi * gi;
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            td[i] -= lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Scale gradients in place so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm: f64 = grads
        .iter()
        .map(|g| g.data().iter().map(|v| v * v).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; recurrent unrolls can spike early on.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10,
            learning_rate: 1e-3,
            epochs: 200,
            seed: 0,
            clip_norm: 5.0,
        }
    }
}

/// A datum's slot within one epoch: index into the combined ordering and
/// its support flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchItem {
    pub index: usize,
    pub is_support: bool,
}

// Stream ids inside the training seed: one shuffle stream per epoch, and a
// single serial stream for reparameterization noise.
const EPS_STREAM: u64 = 0;
const SHUFFLE_STREAM_BASE: u64 = 1 << 32;

/// Deterministic epoch batches: all of X then X_s shuffled jointly, cut
/// into `batch_size` chunks with the final short batch kept.
pub fn epoch_batches(
    n_real: usize,
    n_support: usize,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<BatchItem>>, TrainError> {
    let total = n_real + n_support;
    if total == 0 {
        return Err(TrainError::EmptyDataset);
    }
    if batch_size == 0 || batch_size > total {
        return Err(TrainError::BadBatchSize {
            batch_size,
            available: total,
        });
    }
    let mut items: Vec<BatchItem> = (0..total)
        .map(|index| BatchItem {
            index,
            is_support: index >= n_real,
        })
        .collect();
    let mut rng = RngStream::substream(seed, SHUFFLE_STREAM_BASE + epoch as u64);
    rng.shuffle(&mut items);
    Ok(items.chunks(batch_size).map(<[BatchItem]>::to_vec).collect())
}

/// Per-epoch mean loss components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub breakdown: LossBreakdown,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    /// Dataset-mean loss per epoch, in epoch order.
    pub history: Vec<EpochLoss>,
    /// Parameters at the epoch with the lowest mean total loss.
    pub best_params: ParamSet,
    pub best_epoch: usize,
}

fn batch_grads(
    model: &Model,
    batch: &[(&Datum, bool, crate::models::EpsDraws)],
) -> Result<(Vec<(LossBreakdown, Vec<Tensor>)>,), TrainError> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        let results: Result<Vec<_>, ModelError> = batch
            .par_iter()
            .map(|(datum, is_support, eps)| model.loss_and_grads(datum, *is_support, eps))
            .collect();
        Ok((results?,))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let results: Result<Vec<_>, ModelError> = batch
            .iter()
            .map(|(datum, is_support, eps)| model.loss_and_grads(datum, *is_support, eps))
            .collect();
        Ok((results?,))
    }
}

/// Mini-batch Adam over `epochs` passes. The support set is mandatory for
/// the split models and rejected for the VRNN. Parameters are updated in
/// place; the report carries the loss history and the best checkpoint.
pub fn train(
    model: &mut Model,
    x: &Dataset,
    x_s: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainReport, TrainError> {
    match (model.kind(), x_s) {
        (ModelKind::Vrnn, Some(_)) => return Err(TrainError::UnexpectedSupport),
        (ModelKind::Svrnn, None) => {
            return Err(TrainError::MissingSupport { kind: "svrnn" });
        }
        (ModelKind::Svae, None) => {
            return Err(TrainError::MissingSupport { kind: "svae" });
        }
        _ => {}
    }
    if x.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(xs) = x_s {
        let xg = vec![x.horizon(), x.n_g()];
        let sg = vec![xs.horizon(), xs.n_g()];
        if xg != sg {
            return Err(TrainError::SupportGeometryMismatch { x: xg, xs: sg });
        }
    }
    if cfg.learning_rate <= 0.0 {
        return Err(TrainError::BadLearningRate {
            lr: cfg.learning_rate,
        });
    }

    let combined: Vec<(&Datum, bool)> = x
        .data()
        .iter()
        .map(|d| (d, d.provenance() == Provenance::Support))
        .chain(
            x_s.into_iter()
                .flat_map(|xs| xs.data().iter().map(|d| (d, true))),
        )
        .collect();
    let n_real = x.len();
    let n_support = x_s.map_or(0, Dataset::len);
    let total = combined.len();

    let mut adam = AdamState::new(&model.params);
    let mut eps_rng = RngStream::substream(cfg.seed, EPS_STREAM);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut best_total = f64::INFINITY;

    for epoch in 1..=cfg.epochs {
        let batches = epoch_batches(n_real, n_support, cfg.batch_size, cfg.seed, epoch)?;
        let mut epoch_sum = LossBreakdown::zero();
        for batch in &batches {
            let with_eps: Vec<(&Datum, bool, crate::models::EpsDraws)> = batch
                .iter()
                .map(|item| {
                    let (datum, is_support) = combined[item.index];
                    (datum, is_support, model.draw_eps(&mut eps_rng))
                })
                .collect();
            let (results,) = batch_grads(model, &with_eps)?;

            let mut grads: Vec<Tensor> = model
                .params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            let inv = 1.0 / results.len() as f64;
            for (breakdown, item_grads) in &results {
                epoch_sum.add(breakdown);
                for (acc, g) in grads.iter_mut().zip(item_grads) {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b * inv;
                    }
                }
            }
            clip_global_norm(&mut grads, cfg.clip_norm);
            adam_step(&mut adam, &mut model.params, &grads, cfg.learning_rate)?;
        }
        epoch_sum.scale(1.0 / total as f64);
        history.push(EpochLoss {
            epoch,
            breakdown: epoch_sum,
        });
        if epoch_sum.total < best_total {
            best_total = epoch_sum.total;
            best_epoch = epoch;
            best_params = model.params.clone();
        }
    }

    Ok(TrainReport {
        history,
        best_params,
        best_epoch,
    })
}
