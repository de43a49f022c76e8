use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Targets with magnitude below this (raw units) are left out of MAPE.
pub const MAPE_EPS: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    /// Percent; `None` when no target passes the mask.
    pub mape: Option<f64>,
}

/// RMSE, MAE and masked MAPE over paired values.
pub fn metrics(pred: &[f64], target: &[f64], mape_eps: f64) -> Result<Metrics> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::shape("metrics", &[pred.len()], &[target.len()]));
    }
    let n = pred.len() as f64;
    let (mut se, mut ae, mut pe, mut masked) = (0.0, 0.0, 0.0, 0usize);
    for (&p, &t) in pred.iter().zip(target) {
        let e = p - t;
        se += e * e;
        ae += e.abs();
        if t.abs() >= mape_eps {
            pe += (e / t).abs();
            masked += 1;
        }
    }
    Ok(Metrics {
        rmse: (se / n).sqrt(),
        mae: ae / n,
        mape: (masked > 0).then(|| 100.0 * pe / masked as f64),
    })
}

/// Metrics per forecast step of `[W, horizon, ..]` tensors.
pub fn per_horizon_metrics(pred: &Tensor, target: &Tensor, mape_eps: f64) -> Result<Vec<Metrics>> {
    if pred.shape() != target.shape() || pred.ndim() < 2 {
        return Err(Error::shape(
            "per_horizon_metrics",
            pred.shape(),
            target.shape(),
        ));
    }
    let (w, h) = (pred.shape()[0], pred.shape()[1]);
    let frame = pred.numel() / (w * h);
    (0..h)
        .map(|step| {
            let gather = |t: &Tensor| -> Vec<f64> {
                (0..w)
                    .flat_map(|i| {
                        let at = (i * h + step) * frame;
                        t.data()[at..at + frame].to_vec()
                    })
                    .collect()
            };
            metrics(&gather(pred), &gather(target), mape_eps)
        })
        .collect()
}
