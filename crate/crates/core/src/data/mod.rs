//! Mobility tensors, calendar covariates, synthetic event data, chronological
//! splits, sliding windows, normalization and the `MMT1` file format.

mod io;
mod synthetic;

use std::ops::Range;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use io::{decode_dataset, encode_dataset, read_dataset, write_dataset};
pub use synthetic::{
    calendar_covariates, generate_synthetic, standard_script, Event, EventKind, EventScript,
    Recovery, SyntheticConfig,
};

/// Observations `T x N x C` in raw units.
#[derive(Clone, Debug, PartialEq)]
pub struct MobilityTensor {
    pub values: Tensor,
    pub slot_minutes: usize,
}

impl MobilityTensor {
    pub fn new(values: Tensor, slot_minutes: usize) -> Result<Self> {
        if values.ndim() != 3 {
            return Err(Error::contract(format!(
                "mobility tensor must be T x N x C, got {:?}",
                values.shape()
            )));
        }
        if slot_minutes == 0 || 1440 % slot_minutes != 0 {
            return Err(Error::contract(format!(
                "slot length {slot_minutes} min must divide a day"
            )));
        }
        Ok(MobilityTensor {
            values,
            slot_minutes,
        })
    }

    pub fn slots(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn nodes(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn slots_per_day(&self) -> usize {
        1440 / self.slot_minutes
    }
}

/// One-hot calendar rows `T x v`: time of day, day of week, month, holiday.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalCovariates {
    pub values: Tensor,
    pub slots_per_day: usize,
}

impl TemporalCovariates {
    /// Row width for a given number of slots per day.
    pub fn width_for(slots_per_day: usize) -> usize {
        slots_per_day + 7 + 12 + 1
    }

    pub fn new(values: Tensor, slots_per_day: usize) -> Result<Self> {
        let want = Self::width_for(slots_per_day);
        if values.ndim() != 2 || values.shape()[1] != want {
            return Err(Error::shape("covariates", values.shape(), &[0, want]));
        }
        Ok(TemporalCovariates {
            values,
            slots_per_day,
        })
    }

    pub fn slots(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    fn row(&self, t: usize) -> &[f64] {
        let v = self.width();
        &self.values.data()[t * v..(t + 1) * v]
    }

    fn hot(block: &[f64]) -> Option<usize> {
        block.iter().position(|&x| x == 1.0)
    }

    pub fn time_of_day(&self, t: usize) -> Option<usize> {
        Self::hot(&self.row(t)[..self.slots_per_day])
    }

    pub fn day_of_week(&self, t: usize) -> Option<usize> {
        let s = self.slots_per_day;
        Self::hot(&self.row(t)[s..s + 7])
    }

    pub fn month(&self, t: usize) -> Option<usize> {
        let s = self.slots_per_day + 7;
        Self::hot(&self.row(t)[s..s + 12])
    }

    pub fn is_holiday(&self, t: usize) -> bool {
        self.row(t)[self.width() - 1] == 1.0
    }

    /// Position within the week, `day_of_week * slots_per_day + time_of_day`.
    pub fn slot_of_week(&self, t: usize) -> Option<usize> {
        Some(self.day_of_week(t)? * self.slots_per_day + self.time_of_day(t)?)
    }
}

/// Observations together with their calendar.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub tensor: MobilityTensor,
    pub covariates: TemporalCovariates,
}

impl Dataset {
    pub fn new(tensor: MobilityTensor, covariates: TemporalCovariates) -> Result<Self> {
        if tensor.slots() != covariates.slots() {
            return Err(Error::contract(format!(
                "{} observation slots but {} covariate rows",
                tensor.slots(),
                covariates.slots()
            )));
        }
        if tensor.slots_per_day() != covariates.slots_per_day {
            return Err(Error::contract(
                "covariate layout does not match the slot length",
            ));
        }
        Ok(Dataset { tensor, covariates })
    }
}

/// Contiguous train, validation and test slot ranges.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Splits {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Split `slots` chronologically 7:1:2, rounding the first two parts down.
pub fn split_chrono(slots: usize) -> Result<Splits> {
    if slots < 10 {
        return Err(Error::contract(format!(
            "need at least 10 slots to split 7:1:2, got {slots}"
        )));
    }
    let train = slots * 7 / 10;
    let val = slots / 10;
    Ok(Splits {
        train: 0..train,
        val: train..train + val,
        test: train + val..slots,
    })
}

/// A sliding window starting at `start`: inputs cover
/// `start..start+input_len`, targets the following `horizon` slots, and
/// covariates both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start: usize,
    pub input_len: usize,
    pub horizon: usize,
}

impl Window {
    pub fn inputs(&self) -> Range<usize> {
        self.start..self.start + self.input_len
    }

    pub fn targets(&self) -> Range<usize> {
        self.start + self.input_len..self.end()
    }

    pub fn covariates(&self) -> Range<usize> {
        self.start..self.end()
    }

    pub fn end(&self) -> usize {
        self.start + self.input_len + self.horizon
    }

    /// Index of the last observed slot.
    pub fn last_input(&self) -> usize {
        self.start + self.input_len - 1
    }
}

/// Stride-1 windows lying entirely inside `range`. A range shorter than
/// `input_len + horizon` yields no windows and logs a warning.
pub fn make_windows(range: Range<usize>, input_len: usize, horizon: usize) -> Vec<Window> {
    let need = input_len + horizon;
    if range.len() < need || input_len == 0 || horizon == 0 {
        log::warn!(
            "range {range:?} is shorter than one window ({input_len} + {horizon} slots); no windows produced"
        );
        return Vec::new();
    }
    (range.start..=range.end - need)
        .map(|start| Window {
            start,
            input_len,
            horizon,
        })
        .collect()
}

/// Smallest standard deviation used when scaling a channel.
pub const STD_FLOOR: f64 = 1e-8;

/// Per-channel mean and (floored) population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    /// Statistics over `range` of a `T x N x C` tensor.
    pub fn from_range(values: &Tensor, range: Range<usize>) -> Result<Self> {
        let (t, n, c) = dims3(values)?;
        if range.is_empty() || range.end > t {
            return Err(Error::contract(format!(
                "statistics range {range:?} is empty or exceeds {t} slots"
            )));
        }
        let rows = &values.data()[range.start * n * c..range.end * n * c];
        let count = (range.len() * n) as f64;
        let mut mean = vec![0.0; c];
        for row in rows.chunks_exact(c) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; c];
        for row in rows.chunks_exact(c) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let std = var
            .iter()
            .map(|v| (v / count).sqrt().max(STD_FLOOR))
            .collect();
        Ok(ChannelStats { mean, std })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    fn check(&self, x: &Tensor) -> Result<()> {
        if x.shape().last() != Some(&self.channels()) {
            return Err(Error::shape("channel stats", x.shape(), &[self.channels()]));
        }
        Ok(())
    }
}

/// Per-channel z-score of any tensor whose last axis is the channel axis.
pub fn normalize(x: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    stats.check(x)?;
    let c = stats.channels();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = (*v - m) / s;
        }
    }
    Ok(out)
}

pub fn denormalize(x: &Tensor, stats: &ChannelStats) -> Result<Tensor> {
    stats.check(x)?;
    let c = stats.channels();
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for ((v, m), s) in row.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *v = *v * s + m;
        }
    }
    Ok(out)
}

pub(crate) fn dims3(values: &Tensor) -> Result<(usize, usize, usize)> {
    match values.shape() {
        &[t, n, c] => Ok((t, n, c)),
        s => Err(Error::contract(format!(
            "expected a T x N x C tensor, got {s:?}"
        ))),
    }
}

/// A dataset split, normalized with training statistics and windowed.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub splits: Splits,
    pub stats: ChannelStats,
    /// Normalized `T x N x C` observations.
    pub normalized: Tensor,
    /// Raw `T x N x C` observations.
    pub raw: Tensor,
    pub covariates: TemporalCovariates,
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

/// Tensors for a batch of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, input_len, N, C]`, normalized.
    pub inputs: Tensor,
    /// `[B, input_len + horizon, v]`.
    pub covariates: Tensor,
    /// `[B, horizon, N, C]`, normalized.
    pub targets: Tensor,
}

impl Prepared {
    pub fn new(dataset: &Dataset, input_len: usize, horizon: usize) -> Result<Self> {
        let raw = dataset.tensor.values.clone();
        let splits = split_chrono(dataset.tensor.slots())?;
        let stats = ChannelStats::from_range(&raw, splits.train.clone())?;
        let normalized = normalize(&raw, &stats)?;
        Ok(Prepared {
            train: make_windows(splits.train.clone(), input_len, horizon),
            val: make_windows(splits.val.clone(), input_len, horizon),
            test: make_windows(splits.test.clone(), input_len, horizon),
            splits,
            stats,
            normalized,
            raw,
            covariates: dataset.covariates.clone(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.raw.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.raw.shape()[2]
    }

    pub fn batch(&self, windows: &[Window]) -> Result<Batch> {
        let first = windows
            .first()
            .ok_or_else(|| Error::contract("cannot build an empty batch"))?;
        let (alpha, beta) = (first.input_len, first.horizon);
        let (n, c) = (self.nodes(), self.channels());
        let v = self.covariates.width();
        let frame = n * c;
        let src = self.normalized.data();
        let cov = self.covariates.values.data();
        let mut inputs = Vec::with_capacity(windows.len() * alpha * frame);
        let mut targets = Vec::with_capacity(windows.len() * beta * frame);
        let mut covs = Vec::with_capacity(windows.len() * (alpha + beta) * v);
        for w in windows {
            if (w.input_len, w.horizon) != (alpha, beta) {
                return Err(Error::contract(
                    "windows in a batch must share their lengths",
                ));
            }
            inputs.extend_from_slice(&src[w.inputs().start * frame..w.inputs().end * frame]);
            targets.extend_from_slice(&src[w.targets().start * frame..w.targets().end * frame]);
            covs.extend_from_slice(&cov[w.covariates().start * v..w.covariates().end * v]);
        }
        let b = windows.len();
        Ok(Batch {
            inputs: Tensor::new(&[b, alpha, n, c], inputs)?,
            covariates: Tensor::new(&[b, alpha + beta, v], covs)?,
            targets: Tensor::new(&[b, beta, n, c], targets)?,
        })
    }

    /// Raw targets `[B, horizon, N, C]` of `windows`.
    pub fn raw_targets(&self, windows: &[Window]) -> Result<Tensor> {
        let first = windows
            .first()
            .ok_or_else(|| Error::contract("no windows"))?;
        let frame = self.nodes() * self.channels();
        let mut data = Vec::with_capacity(windows.len() * first.horizon * frame);
        for w in windows {
            data.extend_from_slice(
                &self.raw.data()[w.targets().start * frame..w.targets().end * frame],
            );
        }
        Tensor::new(
            &[windows.len(), first.horizon, self.nodes(), self.channels()],
            data,
        )
    }
}
