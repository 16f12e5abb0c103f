//! Seeded mini-batch training and the four-way ablation harness.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Dataset, TrainingSample};
use crate::encoder::{EncoderOptions, ModelError};
use crate::metrics::{evaluate, MetricError};
use crate::model::{backward_into, forward, sample_loss, AblationMode, Gradients, ModelParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{0} set has no training samples")]
    EmptySet(&'static str),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: {what} became {value}")]
    Diverged {
        epoch: usize,
        what: &'static str,
        value: f64,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub d_model: usize,
    pub d_hidden: usize,
    /// `None` keeps the whole preceding dialogue.
    pub max_history: Option<usize>,
    pub ablation: AblationMode,
    pub optimizer: Optimizer,
    pub encoder: EncoderOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 200,
            batch_size: 16,
            seed: 0,
            d_model: 256,
            d_hidden: 64,
            max_history: None,
            ablation: AblationMode::Full,
            optimizer: Optimizer::default(),
            encoder: EncoderOptions::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and >= 0");
        }
        if self.epochs == 0 || self.batch_size == 0 || self.d_model == 0 || self.d_hidden == 0 {
            return bad("epochs, batch_size, d_model and d_hidden must be >= 1");
        }
        if self.max_history == Some(0) {
            return bad("max_history must be >= 1");
        }
        if self.encoder.passes == 0 {
            return bad("encoder.passes must be >= 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub params: ModelParams,
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, params: &ModelParams) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        let adam = matches!(kind, Optimizer::Adam { .. });
        Self {
            kind,
            lr,
            step: 0,
            m: if adam { zeros() } else { Vec::new() },
            v: if adam { zeros() } else { Vec::new() },
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &Gradients) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => params.add_scaled(grads, -self.lr),
            Optimizer::Adam { beta1, beta2, epsilon } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(&mut self.m)
                    .zip(&mut self.v)
                {
                    for k in 0..p.len() {
                        m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                        v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                        let m_hat = m[k] / c1;
                        let v_hat = v[k] / c2;
                        p[k] -= self.lr * m_hat / (v_hat.sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

/// Mean per-sample loss, summed in sample order.
pub fn mean_loss(params: &ModelParams, mode: AblationMode, samples: &[TrainingSample<'_>]) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    for s in samples {
        sum += sample_loss(&forward(s, params, mode)?, s);
    }
    Ok(sum / samples.len() as f64)
}

/// Trains from a seeded initialization. The same config, data and seed
/// always produce the same parameters and loss history.
pub fn train(config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome, TrainError> {
    train_with(config, train_set, val_set, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    config: &TrainConfig,
    train_set: &Dataset,
    val_set: &Dataset,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let samples = train_set.samples(config.max_history);
    let val_samples = val_set.samples(config.max_history);
    if samples.is_empty() {
        return Err(TrainError::EmptySet("training"));
    }
    if val_samples.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    let mode = config.ablation;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(
        &train_set.dims,
        train_set.n_speakers,
        config.d_model,
        config.d_hidden,
        config.encoder,
        &mut rng,
    );
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate, &params);
    let mut grads = params.zeros_like();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = vec![0.0; samples.len()];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, 0usize, params.clone());

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|v| *v = 0.0);
            }
            let scale = 1.0 / batch.len() as f64;
            for &i in batch {
                let s = &samples[i];
                let cache = forward(s, &params, mode)?;
                losses[i] = sample_loss(&cache, s);
                if !losses[i].is_finite() {
                    return Err(TrainError::Diverged {
                        epoch,
                        what: "training loss",
                        value: losses[i],
                    });
                }
                backward_into(s, &params, mode, &cache, scale, &mut grads)?;
            }
            opt.apply(&mut params, &grads);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let val_loss = mean_loss(&params, mode, &val_samples)?;
        if !val_loss.is_finite() || !params.is_finite() {
            return Err(TrainError::Diverged {
                epoch,
                what: "validation loss",
                value: val_loss,
            });
        }
        let log = EpochLog {
            epoch,
            train_loss,
            val_loss,
        };
        tracing::debug!(epoch, train_loss, val_loss, mode = %mode, "epoch");
        on_epoch(&log);
        history.push(log);
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone());
        }
    }
    tracing::info!(mode = %mode, best_epoch = best.1, best_val = best.0, "training finished");
    Ok(TrainOutcome {
        params: best.2,
        history,
        best_epoch: best.1,
    })
}

/// One seed's data for the ablation harness.
#[derive(Debug, Clone)]
pub struct AblationRun {
    pub seed: u64,
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl AblationRun {
    /// 8:1:1 split of `dataset` in file order.
    pub fn from_dataset(seed: u64, dataset: &Dataset) -> Self {
        let mut parts = dataset.split(&[8, 1, 1]).into_iter();
        Self {
            seed,
            train: parts.next().unwrap(),
            val: parts.next().unwrap(),
            test: parts.next().unwrap(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub mae_pitch: f64,
    pub mae_energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub mae_pitch: f64,
    pub mae_energy: f64,
    /// Sample standard deviation across seeds (0 for a single seed).
    pub mae_pitch_std: f64,
    pub mae_energy_std: f64,
    pub per_seed: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, mode: AblationMode) -> &AblationRow {
        self.rows.iter().find(|r| r.mode == mode).expect("all four modes present")
    }
}

impl fmt::Display for AblationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<8} {:>10} {:>10} {:>10} {:>10}",
            "mode", "MAE-P", "±", "MAE-E", "±"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<8} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
                r.mode.name(),
                r.mae_pitch,
                r.mae_pitch_std,
                r.mae_energy,
                r.mae_energy_std
            )?;
        }
        Ok(())
    }
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Trains and evaluates all four modes on every run, using each run's seed
/// for every mode.
pub fn run_ablation_suite(config: &TrainConfig, runs: &[AblationRun]) -> Result<AblationTable, TrainError> {
    if runs.is_empty() {
        return Err(TrainError::Config("ablation needs at least one run".into()));
    }
    let mut rows = Vec::with_capacity(4);
    for mode in AblationMode::ALL {
        let mut per_seed = Vec::with_capacity(runs.len());
        for run in runs {
            let cfg = TrainConfig {
                seed: run.seed,
                ablation: mode,
                ..config.clone()
            };
            let outcome = train(&cfg, &run.train, &run.val)?;
            let test = run.test.samples(cfg.max_history);
            let report = evaluate(&outcome.params, mode, &test)?;
            tracing::info!(mode = %mode, seed = run.seed, mae_p = report.mae_pitch, mae_e = report.mae_energy, "ablation run");
            per_seed.push(SeedResult {
                seed: run.seed,
                mae_pitch: report.mae_pitch,
                mae_energy: report.mae_energy,
            });
        }
        let (mae_pitch, mae_pitch_std) = mean_std(&per_seed.iter().map(|r| r.mae_pitch).collect::<Vec<_>>());
        let (mae_energy, mae_energy_std) = mean_std(&per_seed.iter().map(|r| r.mae_energy).collect::<Vec<_>>());
        rows.push(AblationRow {
            mode,
            mae_pitch,
            mae_energy,
            mae_pitch_std,
            mae_energy_std,
            per_seed,
        });
    }
    Ok(AblationTable { rows })
}
