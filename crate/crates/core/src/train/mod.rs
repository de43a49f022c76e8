//! Loss, metrics, baselines and the early-stopping training loop.

mod baselines;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::data::{denormalize, Prepared, Window};
use crate::error::{Error, Result};
use crate::models::Model;
use crate::tensor::{Adam, AdamConfig, Tape, Tensor, Var};

pub use baselines::{baseline_ha, baseline_nf};
pub use metrics::{metrics, per_horizon_metrics, Metrics, MAPE_EPS};

/// Mean absolute error; the subgradient at zero error is zero.
pub fn mae_loss(tape: &Tape, pred: Var, target: Var) -> Result<Var> {
    let (ps, ts) = (tape.shape(pred), tape.shape(target));
    if ps != ts {
        return Err(Error::shape("mae_loss", &ps, &ts));
    }
    let diff = tape.sub(pred, target)?;
    let abs = tape.abs(diff);
    Ok(tape.mean(abs))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Use every `train_stride`-th training window (1 = all).
    pub train_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 5e-4,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            train_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0
            || self.max_epochs == 0
            || self.patience == 0
            || self.train_stride == 0
        {
            return Err(Error::Config(
                "batch size, epochs, patience and train stride must be positive".into(),
            ));
        }
        if self.patience > self.max_epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds max epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Denormalized forecasts of a window set and their scores.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub per_horizon: Vec<Metrics>,
    /// Raw-space forecasts `[W, horizon, N, C]`.
    pub predictions: Tensor,
    /// Memory attention `[W, m]` for memory variants.
    pub attention: Option<Tensor>,
}

const EVAL_CHUNK: usize = 64;

/// Forecast `windows` in parallel chunks and score them in raw units.
pub fn evaluate(model: &Model, prep: &Prepared, windows: &[Window]) -> Result<Evaluation> {
    if windows.is_empty() {
        return Err(Error::contract("no windows to evaluate"));
    }
    let chunks: Vec<(Tensor, Option<Tensor>)> = windows
        .par_chunks(EVAL_CHUNK)
        .map(|ws| {
            let batch = prep.batch(ws)?;
            let pred = model.predict(&batch.inputs, &batch.covariates)?;
            Ok((pred.values, pred.attention))
        })
        .collect::<Result<_>>()?;
    let mut values =
        Vec::with_capacity(windows.len() * chunks[0].0.numel() / chunks[0].0.shape()[0]);
    let mut attention: Option<Vec<f64>> = chunks[0].1.as_ref().map(|_| Vec::new());
    for (v, a) in &chunks {
        values.extend_from_slice(v.data());
        if let (Some(all), Some(a)) = (attention.as_mut(), a) {
            all.extend_from_slice(a.data());
        }
    }
    let mut shape = chunks[0].0.shape().to_vec();
    shape[0] = windows.len();
    let normalized = Tensor::new(&shape, values)?;
    let predictions = denormalize(&normalized, &prep.stats)?;
    let targets = prep.raw_targets(windows)?;
    let attention = match attention {
        Some(a) => {
            let m = a.len() / windows.len();
            Some(Tensor::new(&[windows.len(), m], a)?)
        }
        None => None,
    };
    Ok(Evaluation {
        metrics: metrics(predictions.data(), targets.data(), MAPE_EPS)?,
        per_horizon: per_horizon_metrics(&predictions, &targets, MAPE_EPS)?,
        predictions,
        attention,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub variant: String,
    pub param_count: usize,
    /// Mean training loss (normalized MAE) per epoch.
    pub train_loss: Vec<f64>,
    /// Validation MAE in raw units per epoch.
    pub val_mae: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_mae: f64,
    pub test: Metrics,
    pub test_per_horizon: Vec<Metrics>,
    #[serde(skip)]
    pub seconds: f64,
}

/// One epoch of minibatch Adam on normalized MAE. Returns the mean
/// per-window loss.
fn run_epoch(
    model: &mut Model,
    prep: &Prepared,
    windows: &[Window],
    batch_size: usize,
    adam: &mut Adam,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for (b, ws) in windows.chunks(batch_size).enumerate() {
        let batch = prep.batch(ws)?;
        let tape = Tape::new();
        let binding = model.store().bind(&tape);
        let x = tape.constant(batch.inputs);
        let c = tape.constant(batch.covariates);
        let y = tape.constant(batch.targets);
        let out = model.forward(&tape, &binding, x, c)?;
        let loss = mae_loss(&tape, out.forecast, y)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {}, batch {}",
                epoch + 1,
                b + 1
            )));
        }
        let grads = tape.backward(loss)?;
        let g = model.store().gradients(&binding, &grads);
        drop(tape);
        let frozen = model.store().frozen_mask();
        adam.step_each(model.store_mut().values_mut(), &g, &frozen)?;
        total += value * ws.len() as f64;
    }
    Ok(total / windows.len() as f64)
}

/// Train with early stopping on validation MAE, restore the best
/// parameters and score the test windows.
pub fn train(model: &mut Model, prep: &Prepared, config: &TrainConfig) -> Result<TrainReport> {
    config.validate()?;
    let started = Instant::now();
    let mut windows: Vec<Window> = prep
        .train
        .iter()
        .step_by(config.train_stride)
        .copied()
        .collect();
    if windows.is_empty() || prep.val.is_empty() || prep.test.is_empty() {
        return Err(Error::contract(format!(
            "need windows in every split (train {}, val {}, test {})",
            windows.len(),
            prep.val.len(),
            prep.test.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(AdamConfig {
        lr: config.lr,
        ..AdamConfig::default()
    });
    let mut train_loss = Vec::new();
    let mut val_mae = Vec::new();
    let mut best = (f64::INFINITY, 0, model.store().values());
    for epoch in 0..config.max_epochs {
        windows.shuffle(&mut rng);
        let loss = run_epoch(model, prep, &windows, config.batch_size, &mut adam, epoch)?;
        let val = evaluate(model, prep, &prep.val)?.metrics.mae;
        log::info!(
            "{} epoch {}: train loss {loss:.5}, val MAE {val:.4}",
            model.kind(),
            epoch + 1
        );
        train_loss.push(loss);
        val_mae.push(val);
        if val < best.0 {
            best = (val, epoch, model.store().values());
        } else if epoch - best.1 >= config.patience {
            break;
        }
    }
    let (best_val_mae, best_epoch, values) = best;
    model.store_mut().load_values(values)?;
    let test = evaluate(model, prep, &prep.test)?;
    Ok(TrainReport {
        variant: model.kind().name().to_string(),
        param_count: model.param_count(),
        train_loss,
        val_mae,
        best_epoch: best_epoch + 1,
        best_val_mae,
        test: test.metrics,
        test_per_horizon: test.per_horizon,
        seconds: started.elapsed().as_secs_f64(),
    })
}
