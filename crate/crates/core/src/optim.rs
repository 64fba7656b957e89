//! SGD and Adam, the fixed-weight training pass, and the controller that
//! adapts optimizer and epoch count between reweighting iterations.

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::models::{Batch, Model};
use crate::rng::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates. Sized lazily on the first step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub epochs_per_iteration: usize,
    pub batch_size: usize,
    /// `Some` exactly when `kind` is Adam.
    pub adam: Option<AdamMoments>,
    pub hyper: AdamHyper,
    pub consecutive_successes: usize,
}

impl OptimizerState {
    pub fn sgd(learning_rate: f64, epochs: usize, batch_size: usize) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            learning_rate,
            epochs_per_iteration: epochs,
            batch_size,
            adam: None,
            hyper: AdamHyper::default(),
            consecutive_successes: 0,
        }
    }

    pub fn adam(learning_rate: f64, epochs: usize, batch_size: usize) -> Self {
        Self { kind: OptimizerKind::Adam, adam: Some(AdamMoments::default()), ..Self::sgd(learning_rate, epochs, batch_size) }
    }

    /// The gentle start: SGD at the policy's learning rate and minimum epochs.
    pub fn initial(policy: &ControllerPolicy) -> Self {
        Self::sgd(policy.sgd_lr, policy.epochs_min, policy.batch_size)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate must be nonnegative, got {}", self.learning_rate)));
        }
        if self.epochs_per_iteration == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if self.adam.is_some() != (self.kind == OptimizerKind::Adam) {
            return Err(Error::invalid("Adam moments present without Adam, or missing with it"));
        }
        Ok(())
    }
}

/// `θ ← θ - η g` on trainable entries.
pub fn sgd_step(theta: &mut [f64], grad: &[f64], lr: f64, trainable: &[bool]) {
    for ((t, g), &on) in theta.iter_mut().zip(grad).zip(trainable) {
        if on {
            *t -= lr * g;
        }
    }
}

/// One bias-corrected Adam update on trainable entries.
pub fn adam_step(
    theta: &mut [f64],
    grad: &[f64],
    moments: &mut AdamMoments,
    lr: f64,
    hyper: &AdamHyper,
    trainable: &[bool],
) {
    if moments.first.len() != theta.len() {
        moments.first = vec![0.0; theta.len()];
        moments.second = vec![0.0; theta.len()];
        moments.step = 0;
    }
    moments.step += 1;
    let c1 = 1.0 - hyper.beta1.powi(moments.step as i32);
    let c2 = 1.0 - hyper.beta2.powi(moments.step as i32);
    for k in 0..theta.len() {
        if !trainable[k] {
            continue;
        }
        let g = grad[k];
        moments.first[k] = hyper.beta1 * moments.first[k] + (1.0 - hyper.beta1) * g;
        moments.second[k] = hyper.beta2 * moments.second[k] + (1.0 - hyper.beta2) * g * g;
        let mh = moments.first[k] / c1;
        let vh = moments.second[k] / c2;
        theta[k] -= lr * mh / (vh.sqrt() + hyper.eps);
    }
}

fn trainable_mask(model: &Model) -> Vec<bool> {
    let mut mask = vec![true; model.theta().len()];
    for b in &model.params().layout {
        if b.is_frozen() {
            mask[b.range()].iter_mut().for_each(|v| *v = false);
        }
    }
    mask
}

/// `epochs_per_iteration` passes of minibatch updates on `L_N(θ; m)` with
/// fixed weights. Epoch `e` shuffles with substream `e` of `seed`.
///
/// Returns the trained model, the updated optimizer and the full-data
/// weighted loss after training.
pub fn run_reweighted_training(
    model: &Model,
    dataset: &Dataset,
    weights: &[f64],
    opt: &OptimizerState,
    seed: u64,
) -> Result<(Model, OptimizerState, f64)> {
    opt.validate()?;
    if weights.len() != dataset.len() {
        return Err(Error::DimensionMismatch { expected: dataset.len(), got: weights.len() });
    }
    let mask = trainable_mask(model);
    let mut model = model.clone();
    let mut opt = opt.clone();
    let n = dataset.len();
    let bs = opt.batch_size.min(n);
    for epoch in 0..opt.epochs_per_iteration {
        let order = SeedStream::substream(seed, epoch as u64).permutation(n);
        for (b, idx) in order.chunks(bs).enumerate() {
            let batch = Batch { inputs: dataset.inputs(), labels: dataset.labels(), weights, indices: Some(idx) };
            let (_, grad) = model.weighted_loss_gradient(batch).map_err(|e| with_context(e, epoch, b))?;
            let lr = opt.learning_rate;
            let theta = model.theta_mut();
            match opt.kind {
                OptimizerKind::Sgd => sgd_step(theta, &grad, lr, &mask),
                OptimizerKind::Adam => {
                    let moments = opt.adam.get_or_insert_with(AdamMoments::default);
                    adam_step(theta, &grad, moments, lr, &opt.hyper, &mask);
                }
            }
            if let Some(i) = model.theta().iter().position(|v| !v.is_finite()) {
                return Err(Error::NumericalOverflow {
                    block: model.params().block_of_index(i).to_string(),
                    context: format!("parameters after epoch {epoch} batch {b}"),
                });
            }
        }
    }
    let loss = model.weighted_loss(Batch::full(dataset.inputs(), dataset.labels(), weights))?;
    Ok((model, opt, loss))
}

fn with_context(e: Error, epoch: usize, batch: usize) -> Error {
    match e {
        Error::NumericalOverflow { block, context } => {
            Error::NumericalOverflow { block, context: format!("{context} at epoch {epoch} batch {batch}") }
        }
        other => other,
    }
}

/// Tuning of the optimizer-adaptation rules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerPolicy {
    pub sgd_lr: f64,
    pub adam_lr_ratio: f64,
    pub epochs_min: usize,
    pub epochs_max: usize,
    pub epoch_growth: f64,
    /// Relative L1 change in the sample coefficients below which epochs may grow.
    pub m_change_threshold: f64,
    pub batch_size: usize,
}

impl Default for ControllerPolicy {
    fn default() -> Self {
        Self {
            sgd_lr: 1e-3,
            adam_lr_ratio: 0.1,
            epochs_min: 1,
            epochs_max: 32,
            epoch_growth: 2.0,
            m_change_threshold: 0.1,
            batch_size: 256,
        }
    }
}

impl ControllerPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.sgd_lr > 0.0) {
            return Err(Error::invalid("sgd_lr must be positive"));
        }
        if !(self.adam_lr_ratio > 0.0 && self.adam_lr_ratio < 1.0) {
            return Err(Error::invalid("adam_lr_ratio must lie in (0, 1)"));
        }
        if self.epochs_min == 0 || self.epochs_min > self.epochs_max {
            return Err(Error::invalid("need 1 <= epochs_min <= epochs_max"));
        }
        if !(self.epoch_growth > 1.0) {
            return Err(Error::invalid("epoch_growth must exceed 1"));
        }
        if !(self.m_change_threshold > 0.0) {
            return Err(Error::invalid("m_change_threshold must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Action {
    Continue,
    /// Roll parameters back to the last checkpoint and restart with SGD.
    RestoreAndResetSGD,
}

/// `Σ|new - old| / Σ|old|`; infinite when `old` is all zero and `new` is not.
pub fn relative_l1_change(old: &[f64], new: &[f64]) -> f64 {
    let diff: f64 = old.iter().zip(new).map(|(a, b)| (a - b).abs()).sum();
    let base: f64 = old.iter().map(|a| a.abs()).sum();
    if base > 0.0 {
        diff / base
    } else if diff == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Adapts the optimizer after one iteration.
///
/// A drop in the monitored support error, or a small change in the sample
/// coefficients, lengthens the next training pass; otherwise it shortens.
/// SGD at the epoch ceiling hands over to Adam at a reduced rate. Adam that
/// makes the support error worse is rolled back to SGD.
pub fn controller_update(
    policy: &ControllerPolicy,
    opt: &OptimizerState,
    prev_rsn: f64,
    new_rsn: f64,
    m_rel_change: f64,
    checkpoint_available: bool,
) -> (OptimizerState, Action) {
    let mut next = opt.clone();
    let clamp = |e: usize| e.clamp(policy.epochs_min, policy.epochs_max);
    let shrunk = |e: usize| clamp((e as f64 / policy.epoch_growth).floor() as usize);

    if opt.kind == OptimizerKind::Adam && new_rsn > prev_rsn {
        next.kind = OptimizerKind::Sgd;
        next.learning_rate = policy.sgd_lr;
        next.adam = None;
        next.epochs_per_iteration = clamp(opt.epochs_per_iteration / 2);
        next.consecutive_successes = 0;
        let action = if checkpoint_available { Action::RestoreAndResetSGD } else { Action::Continue };
        return (next, action);
    }

    let success = new_rsn < prev_rsn;
    next.consecutive_successes = if success { opt.consecutive_successes + 1 } else { 0 };
    next.epochs_per_iteration = if success || m_rel_change < policy.m_change_threshold {
        clamp(((opt.epochs_per_iteration as f64) * policy.epoch_growth).round() as usize)
    } else {
        shrunk(opt.epochs_per_iteration)
    };
    if next.kind == OptimizerKind::Sgd && next.epochs_per_iteration == policy.epochs_max {
        next.kind = OptimizerKind::Adam;
        next.learning_rate = policy.sgd_lr * policy.adam_lr_ratio;
        next.adam = Some(AdamMoments::default());
    }
    (next, Action::Continue)
}
