//! Online logistic models and the adaptive ensemble that wraps them.
//!
//! Each source owns one [`EnsembleState`]. Records are processed
//! prequentially: the current output model predicts a record before any
//! member trains on it, and the per-batch verification accuracy decides
//! which member becomes the output model for the next batch. Confirmed
//! drifts make room for a model trained only on fresh data.

use serde::{Deserialize, Serialize};

use crate::data::{Batch, DataRecord, NormalizationStats};
use crate::error::LearnerError;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    /// Segment the model was created in.
    pub created_at: usize,
    /// Creation order within the ensemble; breaks `created_at` ties.
    pub serial: u64,
    pub last_verification_accuracy: Option<f64>,
}

impl LinearModel {
    pub fn zeros(dims: usize, created_at: usize) -> Self {
        Self {
            weights: vec![0.0; dims],
            bias: 0.0,
            created_at,
            serial: 0,
            last_verification_accuracy: None,
        }
    }

    fn check(&self, x: &[f64]) -> Result<(), LearnerError> {
        if x.len() != self.weights.len() {
            return Err(LearnerError::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias
    }

    /// P(y = 1 | x).
    pub fn predict(&self, x: &[f64]) -> Result<f64, LearnerError> {
        self.check(x)?;
        Ok(sigmoid(self.logit(x)))
    }

    pub fn predict_label(&self, x: &[f64]) -> Result<u8, LearnerError> {
        Ok(u8::from(self.predict(x)? >= 0.5))
    }

    /// Gradient of the log loss with respect to `(weights, bias)`.
    pub fn gradient(&self, x: &[f64], y: u8) -> Result<(Vec<f64>, f64), LearnerError> {
        let residual = self.predict(x)? - f64::from(y);
        Ok((x.iter().map(|v| residual * v).collect(), residual))
    }

    /// Negative log-likelihood of a single labelled example.
    pub fn log_loss(&self, x: &[f64], y: u8) -> Result<f64, LearnerError> {
        self.check(x)?;
        let z = self.logit(x);
        // log(1 + e^z) - y z, written to stay finite for large |z|
        let softplus = if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() };
        Ok(softplus - f64::from(y) * z)
    }

    /// One log-loss gradient step.
    pub fn sgd_update(&mut self, x: &[f64], y: u8, lr: f64) -> Result<(), LearnerError> {
        debug_assert!(lr > 0.0);
        let (grad, grad_bias) = self.gradient(x, y)?;
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * g;
        }
        self.bias -= lr * grad_bias;
        Ok(())
    }

    /// Weights followed by the bias.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.push(self.bias);
        p
    }
}

/// The output model's parameters after one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSnapshot {
    pub source: String,
    pub segment: usize,
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    /// Maximum number of members.
    pub capacity: usize,
    pub learning_rate: f64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self { capacity: 5, learning_rate: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probability: f64,
    pub label: u8,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Output-model predictions, one per record, made before training.
    pub predictions: Vec<Prediction>,
    pub snapshot: ParameterSnapshot,
    /// Prequential accuracy of the output model on this batch.
    pub accuracy: Option<f64>,
    pub drift_confirmed: bool,
    pub added_model: bool,
    /// `created_at` of the member that was evicted, if any.
    pub evicted: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleState {
    pub source_id: String,
    pub models: Vec<LinearModel>,
    pub output_index: usize,
    pub config: EnsembleConfig,
    next_serial: u64,
}

impl EnsembleState {
    /// Starts with a single zero-initialized member.
    pub fn new(source_id: &str, dims: usize, config: EnsembleConfig) -> Self {
        assert!(config.capacity >= 1, "ensemble capacity must be positive");
        Self {
            source_id: source_id.to_string(),
            models: vec![LinearModel::zeros(dims, 0)],
            output_index: 0,
            config,
            next_serial: 1,
        }
    }

    pub fn output_model(&self) -> &LinearModel {
        &self.models[self.output_index]
    }

    pub fn snapshot(&self, segment: usize) -> ParameterSnapshot {
        ParameterSnapshot {
            source: self.source_id.clone(),
            segment,
            params: self.output_model().params(),
        }
    }

    /// Processes one batch prequentially.
    ///
    /// For each record the normalization stats absorb it, the output model
    /// predicts it, `on_outcome(record_index, record, correct)` is told
    /// whether that prediction was right and returns `true` when it confirms
    /// a drift, and finally every member trains on it. Afterwards each
    /// member's prequential accuracy on the batch becomes its verification
    /// accuracy and the most accurate one becomes the output model.
    pub fn step<F>(
        &mut self,
        batch: &Batch,
        stats: &mut NormalizationStats,
        mut on_outcome: F,
    ) -> Result<StepOutcome, LearnerError>
    where
        F: FnMut(usize, &DataRecord, bool) -> bool,
    {
        if batch.source_id != self.source_id {
            return Err(LearnerError::WrongSource {
                batch: batch.source_id.clone(),
                ensemble: self.source_id.clone(),
            });
        }
        if batch.is_empty() {
            return Ok(StepOutcome {
                predictions: Vec::new(),
                snapshot: self.snapshot(batch.segment_index),
                accuracy: None,
                drift_confirmed: false,
                added_model: false,
                evicted: None,
            });
        }

        let lr = self.config.learning_rate;
        let dims = self.models[0].weights.len();
        let mut inputs = Vec::with_capacity(batch.size());
        let mut predictions = Vec::with_capacity(batch.size());
        let mut hits = vec![0usize; self.models.len()];
        let mut confirmed = false;

        for (i, rec) in batch.records.iter().enumerate() {
            if rec.x.len() != dims {
                return Err(LearnerError::DimensionMismatch { expected: dims, found: rec.x.len() });
            }
            stats.observe(&rec.x);
            let x = stats.normalize(&rec.x);
            for (m, model) in self.models.iter().enumerate() {
                let p = model.predict(&x)?;
                let label = u8::from(p >= 0.5);
                if label == rec.y {
                    hits[m] += 1;
                }
                if m == self.output_index {
                    predictions.push(Prediction { probability: p, label, correct: label == rec.y });
                }
            }
            let correct = predictions[i].correct;
            confirmed |= on_outcome(i, rec, correct);
            for model in &mut self.models {
                model.sgd_update(&x, rec.y, lr)?;
            }
            inputs.push(x);
        }

        let n = batch.size() as f64;
        for (model, h) in self.models.iter_mut().zip(&hits) {
            model.last_verification_accuracy = Some(*h as f64 / n);
        }
        let accuracy = Some(hits[self.output_index] as f64 / n);

        let mut added_model = false;
        let mut evicted = None;
        if confirmed || self.models.len() < self.config.capacity {
            let mut fresh = LinearModel::zeros(dims, batch.segment_index);
            fresh.serial = self.next_serial;
            self.next_serial += 1;
            for (x, rec) in inputs.iter().zip(&batch.records) {
                fresh.sgd_update(x, rec.y, lr)?;
            }
            let fresh_hits = inputs
                .iter()
                .zip(&batch.records)
                .filter(|(x, rec)| fresh.predict_label(x).map(|l| l == rec.y).unwrap_or(false))
                .count();
            fresh.last_verification_accuracy = Some(fresh_hits as f64 / n);
            if self.models.len() >= self.config.capacity {
                let weakest = self.weakest();
                evicted = Some(self.models[weakest].created_at);
                self.models.remove(weakest);
            }
            self.models.push(fresh);
            added_model = true;
        }
        self.output_index = self.strongest();

        Ok(StepOutcome {
            predictions,
            snapshot: self.snapshot(batch.segment_index),
            accuracy,
            drift_confirmed: confirmed,
            added_model,
            evicted,
        })
    }

    fn accuracy_of(m: &LinearModel) -> f64 {
        m.last_verification_accuracy.unwrap_or(f64::NEG_INFINITY)
    }

    /// Highest verification accuracy; ties go to the most recently created.
    fn strongest(&self) -> usize {
        let mut best = 0;
        for (i, m) in self.models.iter().enumerate().skip(1) {
            let (a, b) = (Self::accuracy_of(m), Self::accuracy_of(&self.models[best]));
            let newer = (m.created_at, m.serial) > (self.models[best].created_at, self.models[best].serial);
            if a > b || (a == b && newer) {
                best = i;
            }
        }
        best
    }

    /// Lowest verification accuracy; ties go to the oldest.
    fn weakest(&self) -> usize {
        let mut worst = 0;
        for (i, m) in self.models.iter().enumerate().skip(1) {
            let (a, b) = (Self::accuracy_of(m), Self::accuracy_of(&self.models[worst]));
            let older = (m.created_at, m.serial) < (self.models[worst].created_at, self.models[worst].serial);
            if a < b || (a == b && older) {
                worst = i;
            }
        }
        worst
    }
}
