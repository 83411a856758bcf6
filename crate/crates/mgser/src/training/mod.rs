//! Optimization loop, early stopping, metrics, and the
//! leave-one-session-out cross-validation harness.

mod cv;
mod metrics;

pub use cv::{format_cv_summary, format_fold_report, run_cv, CvReport, CvSample, FoldReport};
pub use metrics::{unweighted_accuracy, unweighted_accuracy_lenient};

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::diffcore::{DiffError, Mode, Param, Scalar, Tensor};
use crate::models::{Architecture, Features, Model, ModelError, ModelSpec};
use crate::rng::seeded;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("contract error: {0}")]
    Contract(String),
    #[error("class {class} absent from labels")]
    ClassAbsent { class: usize },
    #[error("empty {0} set")]
    EmptySet(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Diff(#[from] DiffError),
}

impl TrainError {
    /// True for NaN-loss or degenerate layer-weight aborts.
    pub fn is_numerical(&self) -> bool {
        matches!(self, TrainError::Numerical(_))
            | matches!(
                self,
                TrainError::Model(ModelError::Gran(crate::granularity::GranError::Diff(
                    DiffError::DegenerateWeights { .. }
                )))
            )
    }
}

/// Training settings. The learning rate defaults to 1e-3 for FF-based
/// architectures and 5e-5 for transformer-based ones unless overridden.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
    pub repeats: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: None,
            batch_size: 32,
            max_epochs: 100,
            patience: 10,
            val_fraction: 0.10,
            seed: 0,
            repeats: 5,
        }
    }
}

impl TrainConfig {
    pub fn effective_lr(&self, arch: Architecture) -> f64 {
        self.learning_rate.unwrap_or(if arch.is_transformer_based() {
            5e-5
        } else {
            1e-3
        })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Contract("batch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) || self.val_fraction <= 0.0 {
            return Err(TrainError::Contract(format!(
                "validation fraction {} outside (0, 1)",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

/// Bias-corrected Adam over one model's parameter list.
pub struct Adam<T: Scalar> {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first_moment: Vec<Tensor<T>>,
    second_moment: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[Param<T>], learning_rate: f64) -> Self {
        Adam {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first_moment: params
                .iter()
                .map(|p| Tensor::zeros(&p.value().shape().to_vec()))
                .collect(),
            second_moment: params
                .iter()
                .map(|p| Tensor::zeros(&p.value().shape().to_vec()))
                .collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently stored on the parameters.
    /// A parameter with no gradient is treated as having zero gradient.
    pub fn step(&mut self, params: &[Param<T>]) -> Result<(), TrainError> {
        if params.len() != self.first_moment.len() {
            return Err(TrainError::Contract(format!(
                "optimizer built for {} parameters, given {}",
                self.first_moment.len(),
                params.len()
            )));
        }
        self.step += 1;
        let b1 = T::from_f64(self.beta1);
        let b2 = T::from_f64(self.beta2);
        let one = T::one();
        let corr1 = T::from_f64(1.0 - self.beta1.powi(self.step as i32));
        let corr2 = T::from_f64(1.0 - self.beta2.powi(self.step as i32));
        let lr = T::from_f64(self.learning_rate);
        let eps = T::from_f64(self.eps);
        for (i, p) in params.iter().enumerate() {
            let mut value = p.value();
            let grad = match p.grad() {
                Some(g) => g,
                None => continue, // zero gradient: moments decay, update is zero at start
            };
            if grad.shape() != value.shape() {
                return Err(TrainError::Contract(format!(
                    "gradient shape {:?} does not match parameter {} shape {:?}",
                    grad.shape(),
                    p.name,
                    value.shape()
                )));
            }
            let m = &mut self.first_moment[i];
            let v = &mut self.second_moment[i];
            for j in 0..value.len() {
                let g = grad.data()[j];
                let mj = b1 * m.data()[j] + (one - b1) * g;
                let vj = b2 * v.data()[j] + (one - b2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let m_hat = mj / corr1;
                let v_hat = vj / corr2;
                value.data_mut()[j] = value.data()[j] - lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.set_value(value);
        }
        Ok(())
    }
}

/// Early stopping on a validation metric: strict improvement resets the
/// counter, a tie counts as non-improvement.
pub struct EarlyStopper {
    patience: usize,
    best_metric: f64,
    best_epoch: usize,
    epochs_since_best: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    Stop,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best_metric: f64::NEG_INFINITY,
            best_epoch: 0,
            epochs_since_best: 0,
        }
    }

    /// Returns the decision and whether this epoch improved the best.
    pub fn update(&mut self, epoch: usize, metric: f64) -> (StopDecision, bool) {
        let improved = metric > self.best_metric;
        if improved {
            self.best_metric = metric;
            self.best_epoch = epoch;
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        let decision = if self.epochs_since_best >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        };
        (decision, improved)
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_metric(&self) -> f64 {
        self.best_metric
    }
}

/// One utterance ready for training: features plus class label.
pub struct Sample {
    pub features: Features<f32>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_ua: f64,
    pub val_loss: f64,
    pub val_ua: f64,
}

pub struct TrainOutcome {
    pub model: Model<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_ua: f64,
}

/// Mean eval-mode loss and per-utterance predictions on a sample set.
pub fn evaluate(model: &Model<f32>, samples: &[Sample]) -> Result<(f64, Vec<usize>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptySet("evaluation".into()));
    }
    let mut rng = seeded(0);
    let mut loss_sum = 0.0;
    let mut predictions = Vec::with_capacity(samples.len());
    // batches only bound the graph size; eval-mode results are per-utterance
    for chunk in samples.chunks(64) {
        let batch: Vec<(&Features<f32>, usize)> =
            chunk.iter().map(|s| (&s.features, s.label)).collect();
        let (loss, preds) = model.batch_loss(&batch, Mode::Eval, &mut rng)?;
        loss_sum += loss.value().item() as f64 * chunk.len() as f64;
        predictions.extend(preds);
    }
    Ok((loss_sum / samples.len() as f64, predictions))
}

/// Mini-batch training with per-epoch validation, early stopping on
/// validation UA, and best-epoch weight restoration.
pub fn train_model(
    spec: &ModelSpec,
    train: &[Sample],
    val: &[Sample],
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train.is_empty() {
        return Err(TrainError::EmptySet("training".into()));
    }
    if val.is_empty() {
        return Err(TrainError::EmptySet("validation".into()));
    }
    for c in 0..spec.classes {
        if !train.iter().any(|s| s.label == c) {
            return Err(TrainError::ClassAbsent { class: c });
        }
    }

    let model = Model::<f32>::new(spec, config.seed)?;
    let mut adam = Adam::new(model.store().params(), config.effective_lr(spec.arch));
    let mut rng = seeded(config.seed);
    let mut stopper = EarlyStopper::new(config.patience.max(1));
    let mut history = Vec::new();
    let mut best_snapshot = model.store().snapshot();
    let mut indices: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        indices.shuffle(&mut rng);
        let mut train_loss = 0.0f64;
        let mut train_preds = vec![0usize; train.len()];
        let mut train_labels = vec![0usize; train.len()];
        for batch_idx in indices.chunks(config.batch_size) {
            let batch: Vec<(&Features<f32>, usize)> = batch_idx
                .iter()
                .map(|&i| (&train[i].features, train[i].label))
                .collect();
            let (loss, preds) = model.batch_loss(&batch, Mode::Train, &mut rng)?;
            let loss_value = loss.value().item() as f64;
            if !loss_value.is_finite() {
                return Err(TrainError::Numerical(format!(
                    "NaN/Inf loss at epoch {epoch}"
                )));
            }
            train_loss += loss_value * batch_idx.len() as f64;
            for (&i, p) in batch_idx.iter().zip(preds) {
                train_preds[i] = p;
                train_labels[i] = train[i].label;
            }
            loss.backward()?;
            adam.step(model.store().params())?;
        }
        train_loss /= train.len() as f64;
        let (train_ua, _) = unweighted_accuracy_lenient(&train_preds, &train_labels, spec.classes);

        let (val_loss, val_preds) = evaluate(&model, val)?;
        let val_labels: Vec<usize> = val.iter().map(|s| s.label).collect();
        let (val_ua, _) = unweighted_accuracy_lenient(&val_preds, &val_labels, spec.classes);
        history.push(EpochRecord {
            epoch,
            train_loss,
            train_ua,
            val_loss,
            val_ua,
        });

        let (decision, improved) = stopper.update(epoch, val_ua);
        if improved {
            best_snapshot = model.store().snapshot();
        }
        if decision == StopDecision::Stop {
            break;
        }
    }

    model.store().restore(&best_snapshot);
    Ok(TrainOutcome {
        model,
        history,
        best_epoch: stopper.best_epoch(),
        best_val_ua: stopper.best_metric(),
    })
}
