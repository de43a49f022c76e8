use std::ops::Range;

use crate::data::{dims3, TemporalCovariates, Window};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Historical average: each target slot is forecast by the training mean
/// of its (region, channel) at the same position in the week. Positions
/// never seen in training fall back to the training mean of the channel.
/// Returns raw-space forecasts `[W, horizon, N, C]`.
pub fn baseline_ha(
    raw: &Tensor,
    covariates: &TemporalCovariates,
    train: Range<usize>,
    windows: &[Window],
) -> Result<Tensor> {
    let (t, n, c) = dims3(raw)?;
    if covariates.slots() != t || train.end > t || train.is_empty() {
        return Err(Error::contract(
            "training range or covariates do not match the tensor",
        ));
    }
    let week = 7 * covariates.slots_per_day;
    let frame = n * c;
    let mut sums = vec![0.0; week * frame];
    let mut counts = vec![0usize; week];
    let mut channel_sum = vec![0.0; c];
    let position = |s: usize| {
        covariates
            .slot_of_week(s)
            .ok_or_else(|| Error::contract(format!("slot {s} has no calendar position")))
    };
    for s in train.clone() {
        let pos = position(s)?;
        counts[pos] += 1;
        let row = &raw.data()[s * frame..(s + 1) * frame];
        for (acc, x) in sums[pos * frame..(pos + 1) * frame].iter_mut().zip(row) {
            *acc += x;
        }
        for (k, x) in row.iter().enumerate() {
            channel_sum[k % c] += x;
        }
    }
    let channel_mean: Vec<f64> = channel_sum
        .iter()
        .map(|s| s / (train.len() * n) as f64)
        .collect();
    let Some(first) = windows.first() else {
        return Err(Error::contract("no windows to forecast"));
    };
    let mut out = Vec::with_capacity(windows.len() * first.horizon * frame);
    for w in windows {
        for s in w.targets() {
            let pos = position(s)?;
            if counts[pos] == 0 {
                for k in 0..frame {
                    out.push(channel_mean[k % c]);
                }
            } else {
                let k = counts[pos] as f64;
                out.extend(sums[pos * frame..(pos + 1) * frame].iter().map(|x| x / k));
            }
        }
    }
    Tensor::new(&[windows.len(), first.horizon, n, c], out)
}

/// Naive forecast: every step repeats the last observed slot.
pub fn baseline_nf(raw: &Tensor, windows: &[Window]) -> Result<Tensor> {
    let (_, n, c) = dims3(raw)?;
    let frame = n * c;
    let Some(first) = windows.first() else {
        return Err(Error::contract("no windows to forecast"));
    };
    let mut out = Vec::with_capacity(windows.len() * first.horizon * frame);
    for w in windows {
        let last = w.last_input();
        let row = &raw.data()[last * frame..(last + 1) * frame];
        for _ in 0..w.horizon {
            out.extend_from_slice(row);
        }
    }
    Tensor::new(&[windows.len(), first.horizon, n, c], out)
}
