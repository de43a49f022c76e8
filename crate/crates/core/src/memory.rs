//! Attention over a bank of learnable prototype records, the dynamic filter
//! generator driven by it, and snapshot transfer of a trained bank.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::codec::{Decoder, Encoder};
use crate::error::{Error, Result};
use crate::params::{Binding, ParamId, ParamStore};
use crate::recurrent::CellKernels;
use crate::tensor::{Tape, Tensor, Var};

const SNAPSHOT_MAGIC: &[u8; 4] = b"EAMB";
const SNAPSHOT_VERSION: u32 = 1;

/// Denominator floor of the filter normalization.
pub const FN_EPS: f64 = 1e-6;

/// Parameter handles of a memory bank: `slots x width` records, a
/// `query_dim x width` query projection with bias, and an optional value
/// projection applied to the read-out.
#[derive(Clone, Debug)]
pub struct MemoryBank {
    pub records: ParamId,
    pub query_weight: ParamId,
    pub query_bias: ParamId,
    pub value: Option<(ParamId, ParamId)>,
    pub slots: usize,
    pub width: usize,
    pub query_dim: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct BoundMemory {
    pub records: Var,
    pub query_weight: Var,
    pub query_bias: Var,
    pub value: Option<(Var, Var)>,
    pub query_dim: usize,
}

/// Result of a memory read for a batch of queries.
#[derive(Clone, Copy, Debug)]
pub struct MemoryReadout {
    /// `[B, width]`, or `[B, value_dim]` when a value projection is present.
    pub value: Var,
    /// Attention over records, `[B, slots]`; rows sum to one.
    pub attention: Var,
}

impl MemoryBank {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        slots: usize,
        width: usize,
        query_dim: usize,
        value_dim: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if slots == 0 || width == 0 || query_dim == 0 || value_dim == Some(0) {
            return Err(Error::contract(
                "memory slots, width and query size must be positive",
            ));
        }
        let records = store.register(
            format!("{prefix}.records"),
            Tensor::uniform(&[slots, width], (3.0 / width as f64).sqrt(), rng),
        );
        let query_weight = store.register(
            format!("{prefix}.query.weight"),
            Tensor::glorot(query_dim, width, rng),
        );
        let query_bias = store.register(format!("{prefix}.query.bias"), Tensor::zeros(&[width]));
        let value = value_dim.map(|dv| {
            let w = store.register(
                format!("{prefix}.value.weight"),
                Tensor::glorot(width, dv, rng),
            );
            let b = store.register(format!("{prefix}.value.bias"), Tensor::zeros(&[dv]));
            (w, b)
        });
        Ok(MemoryBank {
            records,
            query_weight,
            query_bias,
            value,
            slots,
            width,
            query_dim,
        })
    }

    pub fn bind(&self, binding: &Binding) -> BoundMemory {
        BoundMemory {
            records: binding.var(self.records),
            query_weight: binding.var(self.query_weight),
            query_bias: binding.var(self.query_bias),
            value: self.value.map(|(w, b)| (binding.var(w), binding.var(b))),
            query_dim: self.query_dim,
        }
    }

    /// Parameters covered by snapshots and by freezing.
    pub fn snapshot_ids(&self) -> [ParamId; 3] {
        [self.records, self.query_weight, self.query_bias]
    }
}

/// Query the bank with `features`. A leading axis is treated as the batch
/// when the remaining axes flatten to the query size; otherwise the whole
/// tensor is one query.
pub fn memory_query(tape: &Tape, mem: &BoundMemory, features: Var) -> Result<MemoryReadout> {
    let shape = tape.shape(features);
    let numel: usize = shape.iter().product();
    let batch = if shape.len() >= 2 && numel / shape[0] == mem.query_dim {
        shape[0]
    } else if numel == mem.query_dim {
        1
    } else {
        return Err(Error::shape("memory_query", &shape, &[mem.query_dim]));
    };
    let flat = tape.reshape(features, &[batch, mem.query_dim])?;
    let query = tape.matmul(flat, mem.query_weight)?;
    let query = tape.add_bias(query, mem.query_bias)?;
    let records_t = tape.transpose(mem.records)?;
    let scores = tape.matmul(query, records_t)?;
    let attention = tape.softmax_rows(scores);
    let mut value = tape.matmul(attention, mem.records)?;
    if let Some((w, b)) = mem.value {
        value = tape.matmul(value, w)?;
        value = tape.add_bias(value, b)?;
    }
    Ok(MemoryReadout { value, attention })
}

/// Standardize each row of `v` (divisor `max(std, 1e-6)`), then apply a
/// scalar gain and shift.
pub fn filter_normalize(tape: &Tape, v: Var, gain: Var, shift: Var) -> Result<Var> {
    let z = tape.standardize_rows(v, FN_EPS)?;
    let scaled = tape.mul(z, gain)?;
    tape.add(scaled, shift)
}

/// One generated kernel group: the update, reset and candidate kernels of
/// one recurrent cell.
#[derive(Clone, Debug)]
pub struct FilterGroup {
    pub gain: ParamId,
    pub shift: ParamId,
    pub head: ParamId,
    /// Shape of each of the three kernels, `(K+1) x p x q`.
    pub kernel_shape: [usize; 3],
}

impl FilterGroup {
    pub fn output_len(&self) -> usize {
        3 * self.kernel_shape.iter().product::<usize>()
    }
}

/// Maps a memory read-out to per-sample kernels for a list of cells.
#[derive(Clone, Debug)]
pub struct FilterGenerator {
    pub proj: ParamId,
    pub groups: Vec<FilterGroup>,
    pub width: usize,
    pub hidden_width: usize,
}

impl FilterGenerator {
    /// Head weights are scaled so generated kernels start at the same
    /// spread as the static Glorot init of an equal-shaped kernel.
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        hidden_width: usize,
        kernel_shapes: &[[usize; 3]],
        rng: &mut R,
    ) -> Result<Self> {
        if width == 0 || hidden_width < 2 {
            return Err(Error::contract(
                "filter generator needs width >= 1 and hidden width >= 2",
            ));
        }
        let proj = store.register(
            format!("{prefix}.proj"),
            Tensor::glorot(width, hidden_width, rng),
        );
        let groups = kernel_shapes
            .iter()
            .enumerate()
            .map(|(g, &kernel_shape)| {
                let [k1, p, q] = kernel_shape;
                let gain = store.register(format!("{prefix}.group{g}.gain"), Tensor::scalar(1.0));
                let shift = store.register(format!("{prefix}.group{g}.shift"), Tensor::scalar(0.0));
                let bound = (6.0 / (hidden_width * (k1 * p + q)) as f64).sqrt();
                let len = 3 * k1 * p * q;
                let head = store.register(
                    format!("{prefix}.group{g}.head"),
                    Tensor::uniform(&[hidden_width, len], bound, rng),
                );
                FilterGroup {
                    gain,
                    shift,
                    head,
                    kernel_shape,
                }
            })
            .collect();
        Ok(FilterGenerator {
            proj,
            groups,
            width,
            hidden_width,
        })
    }
}

/// Generate kernels for every group from `readout` (`[B, width]`). Each
/// returned entry carries per-sample kernels with a leading batch axis.
pub fn generate_filters(
    tape: &Tape,
    binding: &Binding,
    gen: &FilterGenerator,
    readout: Var,
) -> Result<Vec<CellKernels>> {
    let shape = tape.shape(readout);
    if shape.len() != 2 || shape[1] != gen.width {
        return Err(Error::shape("generate_filters", &shape, &[0, gen.width]));
    }
    let batch = shape[0];
    let hidden = tape.matmul(readout, binding.var(gen.proj))?;
    gen.groups
        .iter()
        .map(|g| {
            let z = filter_normalize(tape, hidden, binding.var(g.gain), binding.var(g.shift))?;
            let flat = tape.matmul(z, binding.var(g.head))?;
            let per = g.kernel_shape.iter().product::<usize>();
            let [k1, p, q] = g.kernel_shape;
            let mut parts = [readout; 3];
            for (i, part) in parts.iter_mut().enumerate() {
                let s = tape.slice(flat, 1, i * per, per)?;
                *part = tape.reshape(s, &[batch, k1, p, q])?;
            }
            CellKernels::from_raw(tape, parts[0], parts[1], parts[2])
        })
        .collect()
}

/// How an imported bank participates in later training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransferMode {
    /// Loaded values are fixed.
    Freeze,
    /// Loaded values initialize further training.
    Retrain,
}

impl std::str::FromStr for TransferMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "freeze" => Ok(TransferMode::Freeze),
            "retrain" => Ok(TransferMode::Retrain),
            other => Err(Error::Config(format!(
                "unknown transfer mode '{other}', expected freeze or retrain"
            ))),
        }
    }
}

/// Encode the bank's records and query projection.
pub fn encode_memory(store: &ParamStore, bank: &MemoryBank) -> Vec<u8> {
    let mut e = Encoder::new();
    e.magic(SNAPSHOT_MAGIC)
        .u32(SNAPSHOT_VERSION)
        .dim(bank.slots)
        .dim(bank.width)
        .dim(bank.query_dim);
    for id in bank.snapshot_ids() {
        e.f64s(store.value(id).data());
    }
    e.finish()
}

/// Decoded snapshot contents.
#[derive(Clone, Debug, PartialEq)]
pub struct MemorySnapshot {
    pub records: Tensor,
    pub query_weight: Tensor,
    pub query_bias: Tensor,
}

pub fn decode_memory(bytes: &[u8]) -> Result<MemorySnapshot> {
    let mut d = Decoder::new(bytes);
    d.expect_magic(SNAPSHOT_MAGIC)?;
    let version = d.u32("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported memory snapshot version {version}"),
        });
    }
    let m = d.dim("m")?;
    let w = d.dim("D")?;
    let qd = d.dim("d_flat")?;
    if m == 0 || w == 0 || qd == 0 {
        return Err(d.error("zero dimension in memory header"));
    }
    let records = Tensor::new(&[m, w], d.f64s(m * w, "records")?)?;
    let query_weight = Tensor::new(&[qd, w], d.f64s(qd * w, "query weight")?)?;
    let query_bias = Tensor::new(&[w], d.f64s(w, "query bias")?)?;
    d.finish()?;
    Ok(MemorySnapshot {
        records,
        query_weight,
        query_bias,
    })
}

pub fn export_memory(store: &ParamStore, bank: &MemoryBank, path: &Path) -> Result<()> {
    fs::write(path, encode_memory(store, bank))?;
    Ok(())
}

/// Load a snapshot into `bank`. Nothing is modified unless the whole file
/// decodes and its dimensions match the bank.
pub fn apply_memory(
    store: &mut ParamStore,
    bank: &MemoryBank,
    snapshot: MemorySnapshot,
    mode: TransferMode,
) -> Result<()> {
    let (m, w) = (snapshot.records.shape()[0], snapshot.records.shape()[1]);
    let qd = snapshot.query_weight.shape()[0];
    if (m, w, qd) != (bank.slots, bank.width, bank.query_dim) {
        return Err(Error::IncompatibleMemory {
            file_m: m,
            file_d: w,
            file_flat: qd,
            model_m: bank.slots,
            model_d: bank.width,
            model_flat: bank.query_dim,
        });
    }
    let values = [snapshot.records, snapshot.query_weight, snapshot.query_bias];
    for (id, value) in bank.snapshot_ids().into_iter().zip(values) {
        store.set_value(id, value)?;
        store.set_trainable(id, mode == TransferMode::Retrain);
    }
    Ok(())
}

pub fn import_memory(
    store: &mut ParamStore,
    bank: &MemoryBank,
    path: &Path,
    mode: TransferMode,
) -> Result<()> {
    let bytes = fs::read(path)?;
    apply_memory(store, bank, decode_memory(&bytes)?, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{grad_check, Adam, AdamConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn bank(store: &mut ParamStore, m: usize, d: usize, qd: usize, seed: u64) -> MemoryBank {
        MemoryBank::register(store, "mem", m, d, qd, None, &mut rng(seed)).unwrap()
    }

    fn query_features(b: usize, rows: usize, cols: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[b, rows, cols], 1.0, &mut rng(seed))
    }

    #[test]
    fn identical_records_give_uniform_attention() {
        let mut store = ParamStore::new();
        let mb = bank(&mut store, 4, 3, 6, 1);
        let r = [0.3, -1.2, 2.0];
        let records = Tensor::new(&[4, 3], r.repeat(4)).unwrap();
        store.set_value(mb.records, records).unwrap();
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let f = tape.constant(query_features(2, 2, 3, 9));
        let out = memory_query(&tape, &mb.bind(&binding), f).unwrap();
        for a in tape.value(out.attention).data() {
            assert!((a - 0.25).abs() < 1e-15);
        }
        let v = tape.value(out.value);
        for row in v.data().chunks(3) {
            for (x, y) in row.iter().zip(r) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn dominant_record_saturates_attention() {
        let mut store = ParamStore::new();
        let mb = bank(&mut store, 3, 2, 2, 2);
        store
            .set_value(
                mb.records,
                Tensor::new(&[3, 2], vec![50.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap(),
            )
            .unwrap();
        store.set_value(mb.query_weight, Tensor::eye(2)).unwrap();
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let f = tape.constant(Tensor::new(&[1, 2], vec![1.0, 0.0]).unwrap());
        let out = memory_query(&tape, &mb.bind(&binding), f).unwrap();
        let phi = tape.value(out.attention);
        assert!((phi.data()[0] - 1.0).abs() < 1e-12);
        let v = tape.value(out.value);
        assert!((v.data()[0] - 50.0).abs() < 1e-9 && v.data()[1].abs() < 1e-9);
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let mut store = ParamStore::new();
        let mb = bank(&mut store, 8, 16, 12, 3);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let f = tape.constant(query_features(5, 3, 4, 4).map(|x| x * 20.0));
        let out = memory_query(&tape, &mb.bind(&binding), f).unwrap();
        for row in tape.value(out.attention).data().chunks(8) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn query_size_mismatch_is_a_shape_error() {
        let mut store = ParamStore::new();
        let mb = bank(&mut store, 2, 2, 7, 3);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let f = tape.constant(query_features(2, 2, 3, 1));
        assert!(matches!(
            memory_query(&tape, &mb.bind(&binding), f),
            Err(Error::Shape {
                op: "memory_query",
                ..
            })
        ));
    }

    #[test]
    fn memory_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        MemoryBank::register(&mut store, "mem", 4, 5, 6, Some(3), &mut rng(5)).unwrap();
        let feats = query_features(3, 2, 3, 6);
        let weights = Tensor::uniform(&[3, 3], 1.0, &mut rng(7));
        let mut params = store.values();
        params.push(feats);
        let loss_of = |p: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
            let tape = Tape::new();
            let vars: Vec<Var> = p.iter().map(|t| tape.param(t)).collect();
            let bm = BoundMemory {
                records: vars[0],
                query_weight: vars[1],
                query_bias: vars[2],
                value: Some((vars[3], vars[4])),
                query_dim: 6,
            };
            let out = memory_query(&tape, &bm, vars[5])?;
            let w = tape.constant(weights.clone());
            let weighted = tape.mul(out.value, w)?;
            let phi_sq = tape.mul(out.attention, out.attention)?;
            let a = tape.sum(weighted);
            let b = tape.sum(phi_sq);
            let loss = tape.add(a, b)?;
            Ok((tape, loss, vars))
        };
        let (tape, loss, vars) = loss_of(&params).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        for (i, g) in analytic.iter().enumerate() {
            assert!(
                g.data().iter().any(|x| x.abs() > 1e-8),
                "no gradient reached input {i}"
            );
        }
        let report = grad_check(
            &params,
            &analytic,
            |p| {
                let (tape, loss, _) = loss_of(p)?;
                let v = tape.value(loss).item();
                Ok(v)
            },
            60,
            1e-5,
            11,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    fn normalize_values(v: &[f64], gain: f64, shift: f64) -> Vec<f64> {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, v.len()], v.to_vec()).unwrap());
        let g = tape.constant(Tensor::scalar(gain));
        let s = tape.constant(Tensor::scalar(shift));
        let out = filter_normalize(&tape, x, g, s).unwrap();
        let data = tape.value(out).data().to_vec();
        data
    }

    #[test]
    fn normalize_fixed_points() {
        assert_eq!(normalize_values(&[1.0, -1.0], 1.0, 0.0), vec![1.0, -1.0]);
        assert_eq!(normalize_values(&[5.0, 5.0, 5.0], 2.0, 0.7), vec![0.7; 3]);
    }

    #[test]
    fn normalize_statistics_follow_gain_and_shift() {
        let mut r = rng(12);
        for len in [8, 16, 33] {
            let v: Vec<f64> = (0..len).map(|_| r.random_range(-4.0..9.0)).collect();
            let (gain, shift) = (r.random_range(-3.0..3.0), r.random_range(-2.0..2.0));
            let out = normalize_values(&v, gain, shift);
            let n = len as f64;
            let mean = out.iter().map(|x| x - shift).sum::<f64>() / n;
            let var = out.iter().map(|x| (x - shift - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-8);
            assert!((var.sqrt() - gain.abs()).abs() < 1e-6);
            assert!((var - gain * gain).abs() < 1e-8);
        }
    }

    #[test]
    fn normalize_rejects_single_element() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::new(&[1, 1], vec![3.0]).unwrap());
        let g = tape.constant(Tensor::scalar(1.0));
        assert!(filter_normalize(&tape, x, g, g).is_err());
    }

    fn generator(store: &mut ParamStore, shapes: &[[usize; 3]], seed: u64) -> FilterGenerator {
        FilterGenerator::register(store, "gen", 6, 6, shapes, &mut rng(seed)).unwrap()
    }

    #[test]
    fn zero_readout_gives_zero_kernels() {
        let mut store = ParamStore::new();
        let gen = generator(&mut store, &[[2, 5, 3], [2, 6, 3]], 1);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let v = tape.constant(Tensor::zeros(&[2, 6]));
        let kernels = generate_filters(&tape, &binding, &gen, v).unwrap();
        assert_eq!(kernels.len(), 2);
        for k in &kernels {
            assert!(tape.value(k.gates).data().iter().all(|&x| x == 0.0));
            assert!(tape.value(k.candidate).data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn generated_kernels_match_static_layout() {
        let shapes = [[4, 7, 3], [4, 6, 3]];
        let mut store = ParamStore::new();
        let gen = generator(&mut store, &shapes, 2);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let v = tape.constant(Tensor::uniform(&[3, 6], 1.0, &mut rng(3)));
        let kernels = generate_filters(&tape, &binding, &gen, v).unwrap();
        for (k, [k1, p, q]) in kernels.iter().zip(shapes) {
            assert_eq!(tape.shape(k.gates), vec![3, k1 * p, 2 * q]);
            assert_eq!(tape.shape(k.candidate), vec![3, k1 * p, q]);
        }
        for (g, [k1, p, q]) in gen.groups.iter().zip(shapes) {
            let mut static_store = ParamStore::new();
            let before = static_store.count();
            crate::recurrent::GcruCell::register(
                &mut static_store,
                "c",
                p - q,
                q,
                k1 - 1,
                true,
                &mut rng(0),
            );
            let static_kernels = static_store.count() - before - 3 * q;
            assert_eq!(g.output_len(), static_kernels);
        }
    }

    #[test]
    fn distinct_readouts_give_distinct_kernels() {
        let mut store = ParamStore::new();
        let gen = generator(&mut store, &[[2, 4, 2]], 4);
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let v = tape.constant(Tensor::uniform(&[2, 6], 1.0, &mut rng(5)));
        let k = &generate_filters(&tape, &binding, &gen, v).unwrap()[0];
        let c = tape.value(k.candidate);
        let n = c.numel() / 2;
        let diff = c.data()[..n]
            .iter()
            .zip(&c.data()[n..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff > 1e-6);
    }

    #[test]
    fn generator_gradients_match_finite_differences() {
        let mut store = ParamStore::new();
        let gen = generator(&mut store, &[[2, 3, 2]], 6);
        let v0 = Tensor::uniform(&[2, 6], 1.0, &mut rng(7));
        let mut params = store.values();
        params.push(v0);
        let n_store = store.len();
        let run = |p: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
            let tape = Tape::new();
            let mut s = store.clone();
            s.load_values(p[..n_store].to_vec())?;
            let binding = s.bind_all(&tape);
            let v = tape.param(&p[n_store]);
            let k = &generate_filters(&tape, &binding, &gen, v)?[0];
            let g = tape.tanh(k.gates);
            let a = tape.sum(g);
            let sq = tape.mul(k.candidate, k.candidate)?;
            let b = tape.sum(sq);
            let loss = tape.add(a, b)?;
            let mut vars = binding.vars().to_vec();
            vars.push(v);
            Ok((tape, loss, vars))
        };
        let (tape, loss, vars) = run(&params).unwrap();
        let grads = tape.backward(loss).unwrap();
        let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get_or_zeros(v)).collect();
        let report = grad_check(
            &params,
            &analytic,
            |p| {
                let (tape, loss, _) = run(p)?;
                let v = tape.value(loss).item();
                Ok(v)
            },
            60,
            1e-5,
            3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    #[test]
    fn snapshot_round_trip_reproduces_outputs_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.eamb");
        let mut a = ParamStore::new();
        let ma = bank(&mut a, 4, 5, 6, 1);
        export_memory(&a, &ma, &path).unwrap();
        let mut b = ParamStore::new();
        let mb = bank(&mut b, 4, 5, 6, 99);
        import_memory(&mut b, &mb, &path, TransferMode::Freeze).unwrap();
        let feats = query_features(2, 2, 3, 4);
        let read = |s: &ParamStore, m: &MemoryBank| {
            let tape = Tape::new();
            let binding = s.bind(&tape);
            let f = tape.constant(feats.clone());
            let out = memory_query(&tape, &m.bind(&binding), f).unwrap();
            let v = tape.value(out.value).clone();
            v
        };
        assert_eq!(read(&a, &ma), read(&b, &mb));
        for id in mb.snapshot_ids() {
            assert!(!b.get(id).trainable);
        }
    }

    #[test]
    fn mismatched_snapshot_is_rejected_without_partial_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.eamb");
        let mut a = ParamStore::new();
        let ma = bank(&mut a, 4, 5, 6, 1);
        export_memory(&a, &ma, &path).unwrap();
        let mut b = ParamStore::new();
        let mb = bank(&mut b, 3, 5, 6, 2);
        let before = b.clone();
        let err = import_memory(&mut b, &mb, &path, TransferMode::Retrain).unwrap_err();
        match err {
            Error::IncompatibleMemory {
                file_m, model_m, ..
            } => assert_eq!((file_m, model_m), (4, 3)),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(b, before);
    }

    #[test]
    fn truncated_snapshot_reports_offset() {
        let mut a = ParamStore::new();
        let ma = bank(&mut a, 2, 2, 2, 1);
        let bytes = encode_memory(&a, &ma);
        let err = decode_memory(&bytes[..bytes.len() - 4]).unwrap_err();
        assert!(matches!(err, Error::Format { offset, .. } if offset == 20 + 8 * 8));
    }

    fn one_step(store: &mut ParamStore, m: &MemoryBank) {
        let tape = Tape::new();
        let binding = store.bind(&tape);
        let f = tape.constant(query_features(2, 2, 3, 8));
        let out = memory_query(&tape, &m.bind(&binding), f).unwrap();
        let loss = tape.sum(out.value);
        let grads = tape.backward(loss).unwrap();
        let g = store.gradients(&binding, &grads);
        let frozen = store.frozen_mask();
        let mut adam = Adam::new(AdamConfig::default());
        adam.step_each(store.values_mut(), &g, &frozen).unwrap();
    }

    #[test]
    fn retrain_updates_records_and_freeze_keeps_them() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.eamb");
        let mut src = ParamStore::new();
        let ms = bank(&mut src, 4, 5, 6, 1);
        export_memory(&src, &ms, &path).unwrap();

        for (mode, should_change) in [(TransferMode::Retrain, true), (TransferMode::Freeze, false)]
        {
            let mut s = ParamStore::new();
            let m = bank(&mut s, 4, 5, 6, 3);
            import_memory(&mut s, &m, &path, mode).unwrap();
            let before = s.value(m.records).clone();
            for _ in 0..3 {
                one_step(&mut s, &m);
            }
            assert_eq!(s.value(m.records) != &before, should_change, "{mode:?}");
        }
    }
}
