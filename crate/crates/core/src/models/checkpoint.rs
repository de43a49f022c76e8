//! `EANW` model checkpoints: spec, named parameters in registry order, and
//! the memory snapshot when the variant has one.

use std::fs;
use std::path::Path;

use super::{Model, VariantKind, VariantSpec};
use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::memory::{decode_memory, encode_memory};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EANW";
const VERSION: u32 = 1;

fn spec_fields(s: &VariantSpec) -> [usize; 14] {
    [
        s.nodes,
        s.channels,
        s.input_len,
        s.horizon,
        s.hidden,
        s.order,
        s.layers,
        s.slots,
        s.memory_width,
        s.spatial_embed,
        s.modal_embed,
        s.cov_width,
        s.cov_embed,
        s.identity_modal as usize,
    ]
}

pub fn encode_checkpoint(model: &Model) -> Vec<u8> {
    let mut e = Encoder::new();
    e.magic(MAGIC).u32(VERSION).u32(model.spec.kind.code());
    for f in spec_fields(&model.spec) {
        e.dim(f);
    }
    e.u64(model.spec.seed);
    e.dim(model.store.len());
    for p in model.store.iter() {
        e.string(&p.name)
            .u32(p.trainable as u32)
            .dim(p.value.ndim());
        for &d in p.value.shape() {
            e.dim(d);
        }
        e.f64s(p.value.data());
    }
    match &model.memory {
        Some(bank) => {
            let snap = encode_memory(&model.store, bank);
            e.u32(1).u64(snap.len() as u64).bytes(&snap);
        }
        None => {
            e.u32(0);
        }
    }
    e.finish()
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Model> {
    let mut d = Decoder::new(bytes);
    d.expect_magic(MAGIC)?;
    let version = d.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let kind_at = d.offset();
    let kind = VariantKind::from_code(d.u32("variant")?).ok_or_else(|| Error::Format {
        offset: kind_at,
        message: "unknown variant code".into(),
    })?;
    let mut f = [0usize; 14];
    for v in f.iter_mut() {
        *v = d.dim("spec field")?;
    }
    let spec = VariantSpec {
        kind,
        nodes: f[0],
        channels: f[1],
        input_len: f[2],
        horizon: f[3],
        hidden: f[4],
        order: f[5],
        layers: f[6],
        slots: f[7],
        memory_width: f[8],
        spatial_embed: f[9],
        modal_embed: f[10],
        cov_width: f[11],
        cov_embed: f[12],
        identity_modal: f[13] != 0,
        seed: d.u64("seed")?,
    };
    let spec_end = d.offset();
    let mut model = Model::new(spec).map_err(|e| Error::Format {
        offset: spec_end,
        message: format!("invalid model spec: {e}"),
    })?;

    let count_at = d.offset();
    let count = d.dim("parameter count")?;
    if count != model.store.len() {
        return Err(Error::Format {
            offset: count_at,
            message: format!(
                "{count} parameters stored, architecture has {}",
                model.store.len()
            ),
        });
    }
    let mut values = Vec::with_capacity(count);
    let mut trainable = Vec::with_capacity(count);
    for expected in model.store.iter() {
        let at = d.offset();
        let name = d.string("parameter name")?;
        if name != expected.name {
            return Err(Error::Format {
                offset: at,
                message: format!("expected parameter '{}', found '{name}'", expected.name),
            });
        }
        trainable.push(d.u32("trainable flag")? != 0);
        let ndim = d.dim("rank")?;
        let shape_at = d.offset();
        let shape = (0..ndim)
            .map(|_| d.dim("dimension"))
            .collect::<Result<Vec<_>>>()?;
        if shape != expected.value.shape() {
            return Err(Error::Format {
                offset: shape_at,
                message: format!(
                    "parameter '{name}' has shape {shape:?}, expected {:?}",
                    expected.value.shape()
                ),
            });
        }
        let numel = shape.iter().product();
        values.push(Tensor::new(&shape, d.f64s(numel, "parameter values")?)?);
    }
    let has_memory = d.u32("memory flag")? != 0;
    let snapshot = if has_memory {
        let len = d.u64("memory length")? as usize;
        let at = d.offset();
        let snap = decode_memory(d.bytes(len, "memory snapshot")?).map_err(|e| match e {
            Error::Format { offset, message } => Error::Format {
                offset: at + offset,
                message,
            },
            other => other,
        })?;
        Some(snap)
    } else {
        None
    };
    d.finish()?;
    if has_memory != model.memory.is_some() {
        return Err(d.error("memory section does not match the variant"));
    }

    model.store.load_values(values)?;
    let ids: Vec<_> = model.store.ids().collect();
    for (id, t) in ids.into_iter().zip(trainable) {
        model.store.set_trainable(id, t);
    }
    if let (Some(snap), Some(bank)) = (snapshot, &model.memory) {
        let [r, w, b] = bank.snapshot_ids();
        let store = &model.store;
        if store.value(r) != &snap.records
            || store.value(w) != &snap.query_weight
            || store.value(b) != &snap.query_bias
        {
            return Err(d.error("embedded memory snapshot disagrees with stored parameters"));
        }
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    decode_checkpoint(&fs::read(path)?)
}
