//! Losses, the Adam optimiser and the training loops for both tasks.

mod adam;
mod losses;
mod mri;
mod wireless;

pub use adam::Adam;
pub use losses::{complex_l1_loss, physics_loss_mri, supervised_param_loss};
pub use mri::{evaluate_mri_nmse, train_mri};
pub use wireless::{evaluate_peil_ser, train_wireless};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::guard::LabelGuard;
use crate::params::{Bound, ParamStore};
use crate::tensor::{RealTensor, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Reconstruction loss through the fixed operator; labels are never read.
    #[default]
    Peil,
    /// Parameter-label loss on the same pipeline.
    Supervised,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Wireless,
    Mri,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub mode: Mode,
    pub task: Task,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optional cap on optimiser steps across all epochs.
    pub max_steps: Option<usize>,
    /// Physics-loss weight.
    pub gamma: f64,
    /// Double-well weight.
    pub beta: f64,
    /// Global gradient-norm clip applied before each update.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::wireless()
    }
}

impl TrainingConfig {
    pub fn wireless() -> Self {
        Self {
            mode: Mode::Peil,
            task: Task::Wireless,
            lr: 1e-3,
            batch_size: 16,
            epochs: 24,
            max_steps: None,
            gamma: 0.0,
            beta: 5.0,
            clip_norm: Some(1.0),
            seed: 0,
        }
    }

    pub fn mri() -> Self {
        Self {
            task: Task::Mri,
            batch_size: 8,
            epochs: 30,
            gamma: 0.1,
            ..Self::wireless()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::ConfigInvalid("lr must be > 0 and batch_size >= 1".into()));
        }
        if self.task == Task::Wireless && self.gamma != 0.0 {
            return Err(Error::ConfigInvalid("gamma must be 0 for the wireless task".into()));
        }
        if !(self.gamma >= 0.0) || !(self.beta >= 0.0) {
            return Err(Error::ConfigInvalid("gamma and beta must be >= 0".into()));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(Error::ConfigInvalid("clip_norm must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 0 is the state before any update.
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    /// Validation SER (wireless) or NMSE (MRI), when a validation set is given.
    pub val_metric: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Batch-mean loss per optimiser step.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<EpochMetrics>,
    /// Label reads refused by the guard.
    pub label_violations: usize,
}

impl TrainReport {
    pub fn steps(&self) -> usize {
        self.step_losses.len()
    }
}

/// Sums per-frame gradients into `acc`.
pub(crate) fn accumulate(acc: &mut [RealTensor], grads: &[RealTensor]) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += y);
    }
}

pub(crate) fn zero_grads(params: &ParamStore) -> Vec<RealTensor> {
    params.tensors().iter().map(|t| RealTensor::zeros(t.shape())).collect()
}

/// Scales `grads` in place by `s`, then clips the global norm to `clip`.
pub(crate) fn finish_grads(grads: &mut [RealTensor], s: f64, clip: Option<f64>) {
    for g in grads.iter_mut() {
        g.data_mut().iter_mut().for_each(|v| *v *= s);
    }
    if let Some(c) = clip {
        let norm = grads.iter().flat_map(|g| g.data()).map(|v| v * v).sum::<f64>().sqrt();
        if norm > c {
            let r = c / norm;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= r);
            }
        }
    }
}

/// Epoch visiting order.
pub(crate) fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    idx
}

/// Shared mini-batch loop: per-frame tapes, batch-mean gradients, optional
/// clipping, Adam, and an epoch-level validation metric (epoch 0 included).
pub(crate) fn run_loop(
    cfg: &TrainingConfig,
    n: usize,
    params: &mut ParamStore,
    eps_div: f64,
    guard: &LabelGuard,
    val_metric: impl Fn(&ParamStore) -> Result<Option<f64>>,
    frame_loss: impl for<'t> Fn(&'t Tape, &Bound<'t>, usize) -> Result<Var<'t>>,
) -> Result<TrainReport> {
    let mut opt = Adam::new(params, cfg.lr);
    let mut report = TrainReport::default();
    report.epochs.push(EpochMetrics {
        epoch: 0,
        steps: 0,
        train_loss: f64::NAN,
        val_metric: val_metric(params)?,
    });
    let budget = cfg.max_steps.unwrap_or(usize::MAX);
    'outer: for epoch in 1..=cfg.epochs {
        let order = epoch_order(n, cfg.seed, epoch);
        let mut epoch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            if report.steps() >= budget {
                break 'outer;
            }
            let mut grads = zero_grads(params);
            let mut loss_sum = 0.0;
            for &i in batch {
                let tape = Tape::with_eps_div(eps_div);
                let bound = params.bind(&tape, true);
                let loss = frame_loss(&tape, &bound, i).inspect_err(|_| {
                    report.label_violations = guard.violations();
                })?;
                tape.backward(loss)?;
                loss_sum += loss.item();
                accumulate(&mut grads, &bound.grads());
            }
            finish_grads(&mut grads, 1.0 / batch.len() as f64, cfg.clip_norm);
            opt.step(params, &grads)?;
            if !params.all_finite() {
                return Err(Error::NumericalBreakdown(format!(
                    "non-finite parameters at step {}",
                    report.steps() + 1
                )));
            }
            let l = loss_sum / batch.len() as f64;
            report.step_losses.push(l);
            epoch_losses.push(l);
        }
        report.epochs.push(EpochMetrics {
            epoch,
            steps: report.steps(),
            train_loss: epoch_losses.iter().sum::<f64>() / epoch_losses.len().max(1) as f64,
            val_metric: val_metric(params)?,
        });
    }
    report.label_violations = guard.violations();
    Ok(report)
}
