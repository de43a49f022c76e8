use std::fs;
use std::path::Path;

use super::{Dataset, MobilityTensor, TemporalCovariates};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"MMT1";
const VERSION: u32 = 1;

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let t = &data.tensor;
    let mut e = Encoder::new();
    e.magic(MAGIC)
        .u32(VERSION)
        .dim(t.slots())
        .dim(t.nodes())
        .dim(t.channels())
        .dim(data.covariates.width())
        .dim(t.slot_minutes)
        .f64s(t.values.data())
        .f64s(data.covariates.values.data());
    e.finish()
}

/// Decode an `MMT1` buffer. Sizes are validated against the header before
/// any tensor is built.
pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut d = Decoder::new(bytes);
    d.expect_magic(MAGIC)?;
    let version = d.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported dataset version {version}"),
        });
    }
    let t = d.dim("T")?;
    let n = d.dim("N")?;
    let c = d.dim("C")?;
    let v_at = d.offset();
    let v = d.dim("v")?;
    let minutes_at = d.offset();
    let minutes = d.dim("slot minutes")?;
    if t == 0 || n == 0 || c == 0 {
        return Err(Error::Format {
            offset: 8,
            message: format!("zero dimension in header (T={t}, N={n}, C={c})"),
        });
    }
    if minutes == 0 || 1440 % minutes != 0 {
        return Err(Error::Format {
            offset: minutes_at,
            message: format!("slot length {minutes} min does not divide a day"),
        });
    }
    let spd = 1440 / minutes;
    if v != TemporalCovariates::width_for(spd) {
        return Err(Error::Format {
            offset: v_at,
            message: format!(
                "covariate width {v} does not match {} for {minutes}-minute slots",
                TemporalCovariates::width_for(spd)
            ),
        });
    }
    let values = d.f64s(t * n * c, "observations")?;
    let covs = d.f64s(t * v, "covariates")?;
    d.finish()?;
    let tensor = MobilityTensor::new(Tensor::new(&[t, n, c], values)?, minutes)?;
    let covariates = TemporalCovariates::new(Tensor::new(&[t, v], covs)?, spd)?;
    Dataset::new(tensor, covariates)
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    fs::write(path, encode_dataset(data))?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}
