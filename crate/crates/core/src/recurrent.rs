//! Graph-convolutional GRU cells, stacked encoders/decoders and pyramidal
//! sequence merging.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::{flatten_kernel, propagate, ConvKernel};
use crate::params::{Binding, ParamId, ParamStore};
use crate::tensor::{Tape, Tensor, Var};

/// Parameter handles of one GCRU cell. Kernels are absent when they are
/// generated per sequence instead of stored.
#[derive(Clone, Debug)]
pub struct GcruCell {
    pub kernels: Option<[ParamId; 3]>,
    pub biases: [ParamId; 3],
    pub input_dim: usize,
    pub hidden: usize,
    pub order: usize,
}

/// Kernels ready for [`gcru_step`]: update and reset kernels fused into one
/// `(K+1)(p+q) x 2q` matrix, the candidate kernel as `(K+1)(p+q) x q`.
/// Either may carry a leading batch axis for per-sample kernels.
#[derive(Clone, Copy, Debug)]
pub struct CellKernels {
    pub gates: Var,
    pub candidate: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct CellBiases {
    pub gates: Var,
    pub candidate: Var,
}

/// A cell bound to a tape for one forward pass.
#[derive(Clone, Debug)]
pub struct BoundCell {
    pub kernels: Option<CellKernels>,
    pub biases: CellBiases,
    pub hidden: usize,
    pub order: usize,
}

impl GcruCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        input_dim: usize,
        hidden: usize,
        order: usize,
        static_kernels: bool,
        rng: &mut R,
    ) -> Self {
        let p = input_dim + hidden;
        let kernels = static_kernels.then(|| {
            ["update", "reset", "candidate"].map(|gate| {
                let k = ConvKernel::init(order, p, hidden, rng);
                store.register(format!("{prefix}.{gate}.kernel"), k.into_theta())
            })
        });
        let biases = ["update", "reset", "candidate"]
            .map(|gate| store.register(format!("{prefix}.{gate}.bias"), Tensor::zeros(&[hidden])));
        GcruCell {
            kernels,
            biases,
            input_dim,
            hidden,
            order,
        }
    }

    /// Shape of each of the three gate kernels, `(K+1) x (p+q) x q`.
    pub fn kernel_shape(&self) -> [usize; 3] {
        [self.order + 1, self.input_dim + self.hidden, self.hidden]
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_shape().iter().product()
    }

    pub fn bind(&self, tape: &Tape, binding: &Binding) -> Result<BoundCell> {
        let kernels = match self.kernels {
            Some([u, r, c]) => Some(CellKernels::from_raw(
                tape,
                binding.var(u),
                binding.var(r),
                binding.var(c),
            )?),
            None => None,
        };
        let [bu, br, bc] = self.biases.map(|id| binding.var(id));
        Ok(BoundCell {
            kernels,
            biases: CellBiases {
                gates: tape.concat(&[bu, br], 0)?,
                candidate: bc,
            },
            hidden: self.hidden,
            order: self.order,
        })
    }
}

impl CellKernels {
    /// Fuse raw `(K+1) x p x q` kernels (or `B x (K+1) x p x q` stacks).
    pub fn from_raw(tape: &Tape, update: Var, reset: Var, candidate: Var) -> Result<Self> {
        let u = flatten_kernel(tape, update)?;
        let r = flatten_kernel(tape, reset)?;
        let c = flatten_kernel(tape, candidate)?;
        let axis = tape.shape(u).len() - 1;
        Ok(CellKernels {
            gates: tape.concat(&[u, r], axis)?,
            candidate: c,
        })
    }
}

/// One GCRU update:
///
/// ```text
/// u = sigmoid([X, H] *G Θu + bu)
/// r = sigmoid([X, H] *G Θr + br)
/// C = tanh([X, r ⊙ H] *G ΘC + bC)
/// H' = u ⊙ H + (1 - u) ⊙ C
/// ```
///
/// `x` is `[B, n, p]`, `h_prev` is `[B, n, q]`.
pub fn gcru_step(
    tape: &Tape,
    x: Var,
    h_prev: Var,
    topo: Var,
    kernels: &CellKernels,
    biases: &CellBiases,
    order: usize,
) -> Result<Var> {
    Ok(gcru_step_parts(tape, x, h_prev, topo, kernels, biases, order)?.hidden)
}

/// Intermediate values of one [`gcru_step`].
#[derive(Clone, Copy, Debug)]
pub struct GcruParts {
    pub update: Var,
    pub reset: Var,
    pub candidate: Var,
    pub hidden: Var,
}

pub fn gcru_step_parts(
    tape: &Tape,
    x: Var,
    h_prev: Var,
    topo: Var,
    kernels: &CellKernels,
    biases: &CellBiases,
    order: usize,
) -> Result<GcruParts> {
    let hs = tape.shape(h_prev);
    let q = *hs
        .last()
        .ok_or_else(|| Error::contract("hidden state must have rank >= 1"))?;
    let axis = hs.len() - 1;

    let xh = tape.concat(&[x, h_prev], axis)?;
    let stacked = propagate(tape, xh, topo, order)?;
    let gates = tape.matmul(stacked, kernels.gates)?;
    let gates = tape.add_bias(gates, biases.gates)?;
    let gates = tape.sigmoid(gates);
    let u = tape.slice(gates, axis, 0, q)?;
    let r = tape.slice(gates, axis, q, q)?;

    let rh = tape.mul(r, h_prev)?;
    let xrh = tape.concat(&[x, rh], axis)?;
    let stacked = propagate(tape, xrh, topo, order)?;
    let cand = tape.matmul(stacked, kernels.candidate)?;
    let cand = tape.add_bias(cand, biases.candidate)?;
    let cand = tape.tanh(cand);

    // u ⊙ H + (1 - u) ⊙ C, written as C + u ⊙ (H - C)
    let diff = tape.sub(h_prev, cand)?;
    let keep = tape.mul(u, diff)?;
    let hidden = tape.add(cand, keep)?;
    Ok(GcruParts {
        update: u,
        reset: r,
        candidate: cand,
        hidden,
    })
}

impl BoundCell {
    pub fn step(
        &self,
        tape: &Tape,
        x: Var,
        h_prev: Var,
        topo: Var,
        kernels: Option<&CellKernels>,
    ) -> Result<Var> {
        let kernels = kernels
            .or(self.kernels.as_ref())
            .ok_or_else(|| Error::contract("cell has no static kernels and none were supplied"))?;
        gcru_step(tape, x, h_prev, topo, kernels, &self.biases, self.order)
    }

    fn zero_state(&self, tape: &Tape, like: Var) -> Var {
        let mut shape = tape.shape(like);
        *shape.last_mut().expect("rank >= 1") = self.hidden;
        tape.constant(Tensor::zeros(&shape))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StackConfig {
    pub layers: usize,
    /// Number of consecutive steps merged between encoder layers (1 = off).
    pub pyramid_factor: usize,
    pub hidden: usize,
}

impl StackConfig {
    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.layers == 0 || self.pyramid_factor == 0 || self.hidden == 0 {
            return Err(Error::contract(
                "layers, pyramid factor and hidden size must be positive",
            ));
        }
        let div = self.pyramid_factor.pow(self.layers as u32 - 1);
        if seq_len == 0 || !seq_len.is_multiple_of(div) {
            return Err(Error::contract(format!(
                "input length {seq_len} must be divisible by {}^(L-1) = {div} for a pyramidal encoder with L = {}",
                self.pyramid_factor, self.layers
            )));
        }
        Ok(())
    }

    /// Input width of encoder layer `l` (0-based) given the first layer's.
    pub fn encoder_input_dim(&self, layer: usize, first: usize) -> usize {
        if layer == 0 {
            first
        } else {
            self.hidden * self.pyramid_factor
        }
    }
}

/// Concatenate adjacent pairs of a hidden sequence on the feature axis:
/// `[H_0, H_1, H_2, H_3, ..] -> [[H_0, H_1], [H_2, H_3], ..]`.
pub fn pyramid_merge(tape: &Tape, seq: &[Var]) -> Result<Vec<Var>> {
    merge_steps(tape, seq, 2)
}

/// Concatenate every `factor` consecutive steps on the feature axis.
pub fn merge_steps(tape: &Tape, seq: &[Var], factor: usize) -> Result<Vec<Var>> {
    if factor == 0 || seq.is_empty() || !seq.len().is_multiple_of(factor) {
        return Err(Error::contract(format!(
            "cannot merge a length-{} sequence by {factor}; the input length must be divisible by factor^(L-1)",
            seq.len()
        )));
    }
    if factor == 1 {
        return Ok(seq.to_vec());
    }
    let axis = tape.shape(seq[0]).len() - 1;
    seq.chunks_exact(factor)
        .map(|group| tape.concat(group, axis))
        .collect()
}

#[derive(Clone, Debug)]
pub struct Encoded {
    /// Last hidden state of each layer, bottom first.
    pub final_states: Vec<Var>,
    /// Last hidden state of the top layer.
    pub top: Var,
}

/// Run the encoder stack over `inputs` (time-major, each `[B, n, p]`).
/// Layer `l` consumes layer `l-1`'s output sequence after merging every
/// `pyramid_factor` steps.
pub fn encode(
    tape: &Tape,
    cells: &[BoundCell],
    inputs: &[Var],
    topo: Var,
    config: &StackConfig,
    overrides: Option<&[CellKernels]>,
) -> Result<Encoded> {
    config.validate(inputs.len())?;
    if cells.len() != config.layers {
        return Err(Error::contract(format!(
            "stack has {} cells but {} layers configured",
            cells.len(),
            config.layers
        )));
    }
    let mut seq = inputs.to_vec();
    let mut final_states = Vec::with_capacity(cells.len());
    for (l, cell) in cells.iter().enumerate() {
        if l > 0 {
            seq = merge_steps(tape, &seq, config.pyramid_factor)?;
        }
        let mut h = cell.zero_state(tape, seq[0]);
        let kernels = overrides.map(|o| &o[l]);
        let mut outputs = Vec::with_capacity(seq.len());
        for &x in &seq {
            h = cell.step(tape, x, h, topo, kernels)?;
            outputs.push(h);
        }
        final_states.push(h);
        seq = outputs;
    }
    let top = *final_states.last().expect("at least one layer");
    Ok(Encoded { final_states, top })
}

/// One multi-layer decoding step without merging. Returns the top hidden
/// state and the new per-layer states.
pub fn decode_step(
    tape: &Tape,
    cells: &[BoundCell],
    x_in: Var,
    states: &[Var],
    topo: Var,
    overrides: Option<&[CellKernels]>,
) -> Result<(Var, Vec<Var>)> {
    if states.len() != cells.len() {
        return Err(Error::contract(format!(
            "{} decoder states for {} layers",
            states.len(),
            cells.len()
        )));
    }
    let mut input = x_in;
    let mut next = Vec::with_capacity(cells.len());
    for (l, cell) in cells.iter().enumerate() {
        let h = cell.step(tape, input, states[l], topo, overrides.map(|o| &o[l]))?;
        next.push(h);
        input = h;
    }
    Ok((input, next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain GRU on one row: gates from dense weights over [x, h].
    #[allow(clippy::too_many_arguments)]
    fn plain_gru(
        x: &[f64],
        h: &[f64],
        wu: &Tensor,
        wr: &Tensor,
        wc: &Tensor,
        bu: &[f64],
        br: &[f64],
        bc: &[f64],
    ) -> Vec<f64> {
        let q = h.len();
        let p = x.len();
        let dense = |input: &[f64], w: &Tensor, b: &[f64], j: usize| {
            let mut s = b[j];
            for (i, v) in input.iter().enumerate() {
                s += v * w.at(&[0, i, j]);
            }
            s
        };
        let xh: Vec<f64> = x.iter().chain(h).copied().collect();
        let u: Vec<f64> = (0..q).map(|j| sigmoid(dense(&xh, wu, bu, j))).collect();
        let r: Vec<f64> = (0..q).map(|j| sigmoid(dense(&xh, wr, br, j))).collect();
        let mut xrh = x.to_vec();
        xrh.extend((0..q).map(|j| r[j] * h[j]));
        assert_eq!(xrh.len(), p + q);
        (0..q)
            .map(|j| {
                let c = dense(&xrh, wc, bc, j).tanh();
                u[j] * h[j] + (1.0 - u[j]) * c
            })
            .collect()
    }

    fn bound_cell(
        tape: &Tape,
        store: &mut ParamStore,
        p: usize,
        q: usize,
        k: usize,
        seed: u64,
    ) -> (GcruCell, BoundCell) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = GcruCell::register(store, "c", p, q, k, true, &mut rng);
        for id in cell.biases {
            let b = Tensor::uniform(&[q], 0.5, &mut rng);
            store.set_value(id, b).unwrap();
        }
        let binding = store.bind(tape);
        let bound = cell.bind(tape, &binding).unwrap();
        (cell, bound)
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cell = GcruCell::register(&mut store, "c", 2, 3, 2, true, &mut rng);
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let binding = store.bind(&tape);
        let bound = cell.bind(&tape, &binding).unwrap();
        let x = tape.constant(Tensor::uniform(&[1, 4, 2], 1.0, &mut rng));
        let h0 = Tensor::uniform(&[1, 4, 3], 1.0, &mut rng);
        let h = tape.constant(h0.clone());
        let topo = tape.constant(Tensor::full(&[4, 4], 0.25));
        let out = bound.step(&tape, x, h, topo, None).unwrap();
        let want = h0.map(|v| 0.5 * v);
        assert!(tape.value(out).max_abs_diff(&want) < 1e-15);
    }

    #[test]
    fn order_zero_identity_topology_is_a_plain_gru() {
        let (p, q, n) = (3, 4, 5);
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let (cell, bound) = bound_cell(&tape, &mut store, p, q, 0, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = Tensor::uniform(&[1, n, p], 1.0, &mut rng);
        let h = Tensor::uniform(&[1, n, q], 1.0, &mut rng);
        let xv = tape.constant(x.clone());
        let hv = tape.constant(h.clone());
        let topo = tape.constant(Tensor::eye(n));
        let out = bound.step(&tape, xv, hv, topo, None).unwrap();
        let out = tape.value(out).clone();

        let [ku, kr, kc] = cell.kernels.unwrap().map(|id| store.value(id).clone());
        let [bu, br, bc] = cell.biases.map(|id| store.value(id).data().to_vec());
        for i in 0..n {
            let want = plain_gru(
                &x.data()[i * p..(i + 1) * p],
                &h.data()[i * q..(i + 1) * q],
                &ku,
                &kr,
                &kc,
                &bu,
                &br,
                &bc,
            );
            for j in 0..q {
                assert!((out.at(&[0, i, j]) - want[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn hidden_is_convex_combination_and_gates_in_unit_interval() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let (_, bound) = bound_cell(&tape, &mut store, 3, 4, 2, 5);
        let kernels = bound.kernels.unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let x = tape.constant(Tensor::uniform(&[2, 5, 3], 3.0, &mut rng));
            let h0 = Tensor::uniform(&[2, 5, 4], 1.0, &mut rng);
            let h = tape.constant(h0.clone());
            let mut edges = crate::graph::AdaptiveEdges::init(5, 3, &mut rng);
            let topo = tape.constant(edges.topology().unwrap().clone());
            let parts = gcru_step_parts(&tape, x, h, topo, &kernels, &bound.biases, 2).unwrap();
            for g in [parts.update, parts.reset] {
                assert!(tape.value(g).data().iter().all(|&v| v > 0.0 && v < 1.0));
            }
            let out = tape.value(parts.hidden).clone();
            let cand = tape.value(parts.candidate).clone();
            for ((o, a), b) in out.data().iter().zip(h0.data()).zip(cand.data()) {
                assert!(*o >= a.min(*b) - 1e-12 && *o <= a.max(*b) + 1e-12);
            }
        }
    }

    #[test]
    fn pyramid_shape_law_and_inverse() {
        let tape = Tape::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let seq: Vec<Var> = (0..8)
            .map(|_| tape.constant(Tensor::uniform(&[1, 3, 32], 1.0, &mut rng)))
            .collect();
        let merged = pyramid_merge(&tape, &seq).unwrap();
        assert_eq!(merged.len(), 4);
        assert_eq!(tape.shape(merged[0]), vec![1, 3, 64]);
        for (t, &m) in merged.iter().enumerate() {
            let a = tape.slice(m, 2, 0, 32).unwrap();
            let b = tape.slice(m, 2, 32, 32).unwrap();
            assert_eq!(*tape.value(a), *tape.value(seq[2 * t]));
            assert_eq!(*tape.value(b), *tape.value(seq[2 * t + 1]));
        }
        let odd: Vec<Var> = seq[..7].to_vec();
        let err = pyramid_merge(&tape, &odd).unwrap_err();
        assert!(err.to_string().contains("divisible"));
    }

    #[test]
    fn constant_sequence_merges_to_duplicated_features() {
        let tape = Tape::new();
        let v = tape.constant(Tensor::new(&[1, 1, 2], vec![1.0, 2.0]).unwrap());
        let merged = pyramid_merge(&tape, &[v, v, v, v]).unwrap();
        for m in merged {
            assert_eq!(tape.value(m).data(), &[1.0, 2.0, 1.0, 2.0]);
        }
    }

    fn two_layer_cells(store: &mut ParamStore, p: usize, q: usize, factor: usize) -> Vec<GcruCell> {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = StackConfig {
            layers: 2,
            pyramid_factor: factor,
            hidden: q,
        };
        (0..2)
            .map(|l| {
                GcruCell::register(
                    store,
                    &format!("l{l}"),
                    cfg.encoder_input_dim(l, p),
                    q,
                    1,
                    true,
                    &mut rng,
                )
            })
            .collect()
    }

    fn bind_all(tape: &Tape, store: &ParamStore, cells: &[GcruCell]) -> Vec<BoundCell> {
        let binding = store.bind(tape);
        cells
            .iter()
            .map(|c| c.bind(tape, &binding).unwrap())
            .collect()
    }

    #[test]
    fn pyramidal_encoder_shapes() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let cells = two_layer_cells(&mut store, 3, 4, 2);
        let cells = bind_all(&tape, &store, &cells);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let inputs: Vec<Var> = (0..8)
            .map(|_| tape.constant(Tensor::uniform(&[2, 5, 3], 1.0, &mut rng)))
            .collect();
        let topo = tape.constant(Tensor::full(&[5, 5], 0.2));
        let cfg = StackConfig {
            layers: 2,
            pyramid_factor: 2,
            hidden: 4,
        };
        let enc = encode(&tape, &cells, &inputs, topo, &cfg, None).unwrap();
        assert_eq!(enc.final_states.len(), 2);
        assert_eq!(tape.shape(enc.top), vec![2, 5, 4]);
        let bad = StackConfig { layers: 3, ..cfg };
        assert!(bad.validate(6).is_err());
    }

    #[test]
    fn single_layer_encoder_is_the_unrolled_loop() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let (_, cell) = bound_cell(&tape, &mut store, 3, 4, 2, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let inputs: Vec<Var> = (0..5)
            .map(|_| tape.constant(Tensor::uniform(&[1, 4, 3], 1.0, &mut rng)))
            .collect();
        let topo = tape.constant(Tensor::full(&[4, 4], 0.25));
        let cfg = StackConfig {
            layers: 1,
            pyramid_factor: 1,
            hidden: 4,
        };
        let enc = encode(
            &tape,
            std::slice::from_ref(&cell),
            &inputs,
            topo,
            &cfg,
            None,
        )
        .unwrap();
        let mut h = tape.constant(Tensor::zeros(&[1, 4, 4]));
        for &x in &inputs {
            h = cell.step(&tape, x, h, topo, None).unwrap();
        }
        assert_eq!(*tape.value(enc.top), *tape.value(h));
    }

    #[test]
    fn unit_factor_matches_direct_stacked_gcru() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let cells = two_layer_cells(&mut store, 3, 4, 1);
        let cells = bind_all(&tape, &store, &cells);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let inputs: Vec<Var> = (0..6)
            .map(|_| tape.constant(Tensor::uniform(&[1, 5, 3], 1.0, &mut rng)))
            .collect();
        let topo = tape.constant(Tensor::full(&[5, 5], 0.2));
        let cfg = StackConfig {
            layers: 2,
            pyramid_factor: 1,
            hidden: 4,
        };
        let enc = encode(&tape, &cells, &inputs, topo, &cfg, None).unwrap();
        let mut h1 = tape.constant(Tensor::zeros(&[1, 5, 4]));
        let mut h2 = h1;
        for &x in &inputs {
            h1 = cells[0].step(&tape, x, h1, topo, None).unwrap();
            h2 = cells[1].step(&tape, h1, h2, topo, None).unwrap();
        }
        assert_eq!(*tape.value(enc.top), *tape.value(h2));
        assert_eq!(*tape.value(enc.final_states[0]), *tape.value(h1));
    }

    #[test]
    fn zero_weight_decoder_halves_geometrically() {
        let tape = Tape::new();
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cells: Vec<GcruCell> = [3, 4]
            .iter()
            .enumerate()
            .map(|(l, &p)| {
                GcruCell::register(&mut store, &format!("d{l}"), p, 4, 2, true, &mut rng)
            })
            .collect();
        for id in store.ids().collect::<Vec<_>>() {
            let shape = store.value(id).shape().to_vec();
            store.set_value(id, Tensor::zeros(&shape)).unwrap();
        }
        let cells = bind_all(&tape, &store, &cells);
        let topo = tape.constant(Tensor::full(&[5, 5], 0.2));
        let init = [
            Tensor::uniform(&[1, 5, 4], 1.0, &mut rng),
            Tensor::uniform(&[1, 5, 4], 1.0, &mut rng),
        ];
        let mut states: Vec<Var> = init.iter().map(|t| tape.constant(t.clone())).collect();
        let x = tape.constant(Tensor::zeros(&[1, 5, 3]));
        let mut tops = Vec::new();
        for _ in 0..8 {
            let (top, next) = decode_step(&tape, &cells, x, &states, topo, None).unwrap();
            assert_eq!(tape.shape(top), vec![1, 5, 4]);
            tops.push(top);
            states = next;
        }
        for (step, &top) in tops.iter().enumerate() {
            let factor = 0.5f64.powi(step as i32 + 1);
            let want = init[1].map(|v| v * factor);
            assert!(tape.value(top).max_abs_diff(&want) < 1e-15);
        }
    }

    #[test]
    fn encoder_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let mut store = ParamStore::new();
            let cells = two_layer_cells(&mut store, 3, 4, 2);
            let cells = bind_all(&tape, &store, &cells);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let inputs: Vec<Var> = (0..8)
                .map(|_| tape.constant(Tensor::uniform(&[1, 5, 3], 1.0, &mut rng)))
                .collect();
            let topo = tape.constant(Tensor::full(&[5, 5], 0.2));
            let cfg = StackConfig {
                layers: 2,
                pyramid_factor: 2,
                hidden: 4,
            };
            let enc = encode(&tape, &cells, &inputs, topo, &cfg, None).unwrap();
            let v = tape.value(enc.top).clone();
            v
        };
        let (a, b) = (run(), run());
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
