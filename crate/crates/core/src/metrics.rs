//! Objective prosody metrics: mean absolute error of pitch and energy.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::TrainingSample;
use crate::encoder::ModelError;
use crate::model::{forward, AblationMode, ModelParams};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("cannot compute a metric over zero samples")]
    Empty,
    #[error("length mismatch: {predictions} predictions vs {targets} targets")]
    LengthMismatch { predictions: usize, targets: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    if predictions.len() != targets.len() {
        return Err(MetricError::LengthMismatch {
            predictions: predictions.len(),
            targets: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(MetricError::Empty);
    }
    let sum: f64 = predictions.iter().zip(targets).map(|(p, t)| (p - t).abs()).sum();
    Ok(sum / predictions.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mae_pitch: f64,
    pub mae_energy: f64,
    pub n_samples: usize,
    /// `(|pitch error|, |energy error|)` per sample, in input order.
    pub residuals: Vec<(f64, f64)>,
}

impl MetricReport {
    pub fn from_residuals(residuals: Vec<(f64, f64)>) -> Result<Self, MetricError> {
        if residuals.is_empty() {
            return Err(MetricError::Empty);
        }
        let n = residuals.len() as f64;
        let mae_pitch = residuals.iter().map(|r| r.0).sum::<f64>() / n;
        let mae_energy = residuals.iter().map(|r| r.1).sum::<f64>() / n;
        Ok(Self {
            mae_pitch,
            mae_energy,
            n_samples: residuals.len(),
            residuals,
        })
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>12}", "metric", "value")?;
        writeln!(f, "{:<10} {:>12.6}", "MAE-P", self.mae_pitch)?;
        writeln!(f, "{:<10} {:>12.6}", "MAE-E", self.mae_energy)?;
        write!(f, "{:<10} {:>12}", "samples", self.n_samples)
    }
}

/// Runs the model on every sample and aggregates absolute errors.
pub fn evaluate(
    params: &ModelParams,
    mode: AblationMode,
    samples: &[TrainingSample<'_>],
) -> Result<MetricReport, MetricError> {
    evaluate_parallel(params, mode, samples, 1)
}

/// [`evaluate`] fanned out over `jobs` threads. Residual order, and hence the
/// report, is identical for every `jobs`.
pub fn evaluate_parallel(
    params: &ModelParams,
    mode: AblationMode,
    samples: &[TrainingSample<'_>],
    jobs: usize,
) -> Result<MetricReport, MetricError> {
    if samples.is_empty() {
        return Err(MetricError::Empty);
    }
    let residual = |s: &TrainingSample<'_>| -> Result<(f64, f64), ModelError> {
        let c = forward(s, params, mode)?;
        Ok((
            (c.pitch_hat - s.current.pitch_target).abs(),
            (c.energy_hat - s.current.energy_target).abs(),
        ))
    };
    let jobs = jobs.clamp(1, samples.len());
    let residuals: Vec<(f64, f64)> = if jobs == 1 {
        samples.iter().map(residual).collect::<Result<_, _>>()?
    } else {
        let chunk = samples.len().div_ceil(jobs);
        std::thread::scope(|scope| {
            let handles: Vec<_> = samples
                .chunks(chunk)
                .map(|part| scope.spawn(move || part.iter().map(residual).collect::<Result<Vec<_>, _>>()))
                .collect();
            let mut all = Vec::with_capacity(samples.len());
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, ModelError>(all)
        })?
    };
    MetricReport::from_residuals(residuals)
}
