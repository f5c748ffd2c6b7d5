//! Local training (ClientUpdate), evaluation and FedAvg.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::{accumulate, example_loss};
use super::{DatasetPartition, Example, LearningError, ModelLayout, ModelParams};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Learning rate.
    pub eta: f64,
    pub batch_size: usize,
    /// Local epochs per call of [`client_update`].
    pub local_epochs: usize,
    /// Fraction of clients sampled per round, in (0, 1].
    pub client_fraction: f64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self { eta: 0.05, batch_size: 10, local_epochs: 3, client_fraction: 1.0 }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<(), LearningError> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(LearningError::InvalidHyperParams(format!("eta must be finite and >= 0, got {}", self.eta)));
        }
        if self.batch_size == 0 {
            return Err(LearningError::InvalidHyperParams("batch_size must be >= 1".into()));
        }
        if self.local_epochs == 0 {
            return Err(LearningError::InvalidHyperParams("local_epochs must be >= 1".into()));
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return Err(LearningError::InvalidHyperParams(format!(
                "client_fraction must be in (0, 1], got {}",
                self.client_fraction
            )));
        }
        Ok(())
    }
}

fn check_data(layout: &ModelLayout, examples: &[Example]) -> Result<(), LearningError> {
    for e in examples {
        if e.features.len() != layout.inputs() {
            return Err(LearningError::DataMismatch(format!(
                "example has {} features, model expects {}",
                e.features.len(),
                layout.inputs()
            )));
        }
        if let Some(classes) = layout.classes() {
            if e.label >= classes {
                return Err(LearningError::DataMismatch(format!("label {} out of range for {classes} classes", e.label)));
            }
        }
    }
    Ok(())
}

/// Mean loss over `batch` and its gradient.
pub fn loss_and_gradient(w: &ModelParams, batch: &[&Example]) -> (f64, Vec<f64>) {
    let layout = w.layout();
    let mut grad = vec![0.0; w.len()];
    let scale = 1.0 / batch.len() as f64;
    let loss = batch
        .iter()
        .map(|e| accumulate(&layout, w.values(), &e.features, e.label, scale, &mut grad))
        .sum::<f64>()
        * scale;
    (loss, grad)
}

/// Mean loss and gradient over a whole partition.
pub fn full_batch_gradient(w: &ModelParams, data: &DatasetPartition) -> Result<(f64, Vec<f64>), LearningError> {
    check_data(&w.layout(), &data.examples)?;
    let batch: Vec<&Example> = data.examples.iter().collect();
    Ok(loss_and_gradient(w, &batch))
}

/// Runs `local_epochs` epochs of shuffled minibatch SGD for drone `k`
/// starting from `w`. The input is not modified.
pub fn client_update(
    k: usize,
    w: &ModelParams,
    part: &DatasetPartition,
    hp: &HyperParams,
    seed: u64,
) -> Result<ModelParams, LearningError> {
    hp.validate()?;
    check_data(&w.layout(), &part.examples)?;
    let mut out = w.clone();
    let mut rng = seed::rng(seed);
    let mut order: Vec<usize> = (0..part.size()).collect();
    for epoch in 0..hp.local_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let batch: Vec<&Example> = chunk.iter().map(|&i| &part.examples[i]).collect();
            let (loss, grad) = loss_and_gradient(&out, &batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(LearningError::Diverged { drone: k, epoch });
            }
            for (v, g) in out.values_mut().iter_mut().zip(&grad) {
                *v -= hp.eta * g;
            }
            if !out.is_finite() {
                return Err(LearningError::Diverged { drone: k, epoch });
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub loss: f64,
}

/// Accuracy and mean loss of `w` on `data`.
pub fn evaluate(w: &ModelParams, data: &DatasetPartition) -> Evaluation {
    let layout = w.layout();
    let (loss, correct) = data.examples.iter().fold((0.0, 0usize), |(loss, correct), e| {
        let (l, ok) = example_loss(&layout, w.values(), &e.features, e.label);
        (loss + l, correct + usize::from(ok))
    });
    let n = data.size() as f64;
    Evaluation { accuracy: correct as f64 / n, loss: loss / n }
}

/// Weighted average of parameter vectors; weights are normalised by their
/// sum.
pub fn weighted_average(contributions: &[(&ModelParams, f64)]) -> Result<ModelParams, LearningError> {
    let (first, _) = contributions.first().ok_or(LearningError::EmptyAggregation)?;
    let layout = first.layout();
    for (w, weight) in contributions {
        if w.layout() != layout || w.len() != first.len() {
            return Err(LearningError::LayoutMismatch(format!(
                "{} vs {}",
                w.layout().descriptor(),
                layout.descriptor()
            )));
        }
        if !(*weight > 0.0 && weight.is_finite()) {
            return Err(LearningError::InvalidWeight(format!("{weight}")));
        }
    }
    let total: f64 = contributions.iter().map(|(_, weight)| weight).sum();
    let mut values = vec![0.0; first.len()];
    for (w, weight) in contributions {
        let share = weight / total;
        for (acc, v) in values.iter_mut().zip(w.values()) {
            *acc += share * v;
        }
    }
    Ok(ModelParams::from_raw(layout, values, first.bytes_per_value()))
}

/// FedAvg: `sum_k (n_k / n) w_k` with `n = sum_k n_k`.
pub fn fedavg_aggregate(contributions: &[(&ModelParams, usize)]) -> Result<ModelParams, LearningError> {
    if let Some((_, n)) = contributions.iter().find(|(_, n)| *n == 0) {
        return Err(LearningError::InvalidWeight(format!("sample count {n}")));
    }
    let weighted: Vec<(&ModelParams, f64)> = contributions.iter().map(|(w, n)| (*w, *n as f64)).collect();
    weighted_average(&weighted)
}
