//! The five-variant forecasting ladder.
//!
//! Every variant encodes an input window with stacked GCRU cells over a
//! learned region graph and decodes the horizon autoregressively:
//!
//! | variant       | covariates | modal branch | memory                  |
//! |---------------|------------|--------------|-------------------------|
//! | `ST-Net`      | no         | no           | no                      |
//! | `ST-Net+Tcov` | yes        | no           | no                      |
//! | `ST-Net+Mem`  | no         | no           | read-out per decode step |
//! | `HMINet`      | yes        | yes          | no                      |
//! | `EAST-Net`    | yes        | yes          | generates decoder kernels |
//!
//! `EAST-Net` additionally merges adjacent encoder steps between layers.

mod checkpoint;

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::adaptive_topology;
use crate::memory::{generate_filters, memory_query, FilterGenerator, MemoryBank};
use crate::params::{Binding, ParamId, ParamStore};
use crate::recurrent::{decode_step, encode, BoundCell, CellKernels, GcruCell, StackConfig};
use crate::tensor::{grad_check, GradCheckReport, Tape, Tensor, Var};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum VariantKind {
    StNet,
    StNetTcov,
    StNetMem,
    HmiNet,
    EastNet,
}

impl VariantKind {
    pub const ALL: [VariantKind; 5] = [
        VariantKind::StNet,
        VariantKind::StNetTcov,
        VariantKind::StNetMem,
        VariantKind::HmiNet,
        VariantKind::EastNet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantKind::StNet => "ST-Net",
            VariantKind::StNetTcov => "ST-Net+Tcov",
            VariantKind::StNetMem => "ST-Net+Mem",
            VariantKind::HmiNet => "HMINet",
            VariantKind::EastNet => "EAST-Net",
        }
    }

    pub(crate) fn code(self) -> u32 {
        self as u32
    }

    pub(crate) fn from_code(code: u32) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn uses_covariates(self) -> bool {
        matches!(
            self,
            VariantKind::StNetTcov | VariantKind::HmiNet | VariantKind::EastNet
        )
    }

    pub fn has_modal_branch(self) -> bool {
        matches!(self, VariantKind::HmiNet | VariantKind::EastNet)
    }

    pub fn has_memory(self) -> bool {
        matches!(self, VariantKind::StNetMem | VariantKind::EastNet)
    }

    pub fn pyramid_factor(self) -> usize {
        if self == VariantKind::EastNet {
            2
        } else {
            1
        }
    }
}

impl fmt::Display for VariantKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantKind {
    type Err = Error;

    /// Case-insensitive; `-`, `_`, `+` and spaces are ignored, so
    /// `EAST-Net`, `eastnet` and `east_net` all parse.
    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !matches!(c, '-' | '_' | '+' | ' '))
            .collect::<String>()
            .to_ascii_lowercase();
        match key.as_str() {
            "stnet" => Ok(VariantKind::StNet),
            "stnettcov" => Ok(VariantKind::StNetTcov),
            "stnetmem" => Ok(VariantKind::StNetMem),
            "hminet" => Ok(VariantKind::HmiNet),
            "eastnet" => Ok(VariantKind::EastNet),
            _ => Err(Error::Config(format!(
                "unknown variant '{s}', expected one of ST-Net, ST-Net+Tcov, ST-Net+Mem, HMINet, EAST-Net"
            ))),
        }
    }
}

/// Architecture and initialization seed of one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub kind: VariantKind,
    /// Regions `N`.
    pub nodes: usize,
    /// Channels `C`.
    pub channels: usize,
    pub input_len: usize,
    pub horizon: usize,
    pub hidden: usize,
    /// Graph-convolution order `K`.
    pub order: usize,
    pub layers: usize,
    /// Memory records `m`.
    pub slots: usize,
    /// Memory record width `D`.
    pub memory_width: usize,
    pub spatial_embed: usize,
    pub modal_embed: usize,
    /// Calendar feature width `v`.
    pub cov_width: usize,
    /// Projected calendar width `v'`.
    pub cov_embed: usize,
    /// HMINet only: replace the modal branch by a fixed identity so the
    /// output head reduces to the single-branch form.
    pub identity_modal: bool,
    pub seed: u64,
}

impl VariantSpec {
    /// Standard hyperparameters for the given data dimensions.
    pub fn new(kind: VariantKind, nodes: usize, channels: usize, cov_width: usize) -> Self {
        VariantSpec {
            kind,
            nodes,
            channels,
            input_len: 8,
            horizon: 8,
            hidden: 32,
            order: 3,
            layers: 2,
            slots: 8,
            memory_width: 16,
            spatial_embed: 20,
            modal_embed: 3,
            cov_width,
            cov_embed: 2,
            identity_modal: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("N", self.nodes),
            ("C", self.channels),
            ("input length", self.input_len),
            ("horizon", self.horizon),
            ("hidden size", self.hidden),
            ("layers", self.layers),
            ("m", self.slots),
            ("D", self.memory_width),
            ("spatial embedding", self.spatial_embed),
            ("modal embedding", self.modal_embed),
            ("v", self.cov_width),
            ("v'", self.cov_embed),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::contract(format!("{name} must be positive")));
        }
        if self.kind == VariantKind::EastNet && self.memory_width < 2 {
            return Err(Error::contract(
                "D must be at least 2 for filter normalization",
            ));
        }
        if self.identity_modal && self.kind != VariantKind::HmiNet {
            return Err(Error::contract(
                "identity modal view is only defined for HMINet",
            ));
        }
        self.stack().validate(self.input_len)
    }

    pub fn stack(&self) -> StackConfig {
        StackConfig {
            layers: self.layers,
            pyramid_factor: self.kind.pyramid_factor(),
            hidden: self.hidden,
        }
    }

    fn step_extra(&self) -> usize {
        if self.kind.uses_covariates() {
            self.cov_embed
        } else {
            0
        }
    }
}

/// One recurrent branch over a learned graph.
#[derive(Clone, Debug)]
pub struct Branch {
    pub source: ParamId,
    pub target: ParamId,
    pub encoder: Vec<GcruCell>,
    pub decoder: Vec<GcruCell>,
    pub nodes: usize,
}

impl Branch {
    #[allow(clippy::too_many_arguments)]
    fn register(
        store: &mut ParamStore,
        prefix: &str,
        nodes: usize,
        embed: usize,
        input_dim: usize,
        spec: &VariantSpec,
        static_decoder: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (embed as f64).sqrt();
        let source = store.register(
            format!("{prefix}.edges.source"),
            Tensor::uniform(&[nodes, embed], bound, rng),
        );
        let target = store.register(
            format!("{prefix}.edges.target"),
            Tensor::uniform(&[nodes, embed], bound, rng),
        );
        let stack = spec.stack();
        let encoder = (0..spec.layers)
            .map(|l| {
                GcruCell::register(
                    store,
                    &format!("{prefix}.enc{l}"),
                    stack.encoder_input_dim(l, input_dim),
                    spec.hidden,
                    spec.order,
                    true,
                    rng,
                )
            })
            .collect();
        let decoder = (0..spec.layers)
            .map(|l| {
                let p = if l == 0 { input_dim } else { spec.hidden };
                GcruCell::register(
                    store,
                    &format!("{prefix}.dec{l}"),
                    p,
                    spec.hidden,
                    spec.order,
                    static_decoder,
                    rng,
                )
            })
            .collect();
        Branch {
            source,
            target,
            encoder,
            decoder,
            nodes,
        }
    }

    fn bind(&self, tape: &Tape, binding: &Binding) -> Result<BoundBranch> {
        Ok(BoundBranch {
            topo: adaptive_topology(tape, binding.var(self.source), binding.var(self.target))?,
            encoder: self
                .encoder
                .iter()
                .map(|c| c.bind(tape, binding))
                .collect::<Result<_>>()?,
            decoder: self
                .decoder
                .iter()
                .map(|c| c.bind(tape, binding))
                .collect::<Result<_>>()?,
        })
    }
}

struct BoundBranch {
    topo: Var,
    encoder: Vec<BoundCell>,
    decoder: Vec<BoundCell>,
}

/// An assembled variant with its parameter registry.
#[derive(Clone, Debug)]
pub struct Model {
    spec: VariantSpec,
    store: ParamStore,
    spatial: Branch,
    modal: Option<Branch>,
    covariates: Option<ParamId>,
    memory: Option<MemoryBank>,
    generator: Option<FilterGenerator>,
    output: ParamId,
}

/// Tape handles produced by [`Model::forward`].
#[derive(Clone, Copy, Debug)]
pub struct ForwardOutput {
    /// `[B, horizon, N, C]` in normalized space.
    pub forecast: Var,
    /// `[B, m]` memory attention for memory variants. For `ST-Net+Mem` it
    /// is averaged over decode steps.
    pub attention: Option<Var>,
}

/// Evaluated forecasts for a batch of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[B, horizon, N, C]`.
    pub values: Tensor,
    pub attention: Option<Tensor>,
}

/// Forecast of one window, `horizon x N x C`, normalized space.
#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    pub values: Tensor,
}

/// Project calendar rows `[.., v]` to `[.., v']` with a bias-free linear map.
pub fn embed_tcov(tape: &Tape, covs: Var, proj: Var) -> Result<Var> {
    let (cs, ps) = (tape.shape(covs), tape.shape(proj));
    if ps.len() != 2 || cs.last() != Some(&ps[0]) {
        return Err(Error::shape("embed_tcov", &cs, &ps));
    }
    tape.matmul(covs, proj)
}

/// Link prediction between region and mode states: `H_sp W Hᵀ_mo`, giving
/// `[B, N, C]` from `[B, N, q]`, `q x q` and `[B, C, q]`.
pub fn fuse_views(tape: &Tape, spatial: Var, weight: Var, modal: Var) -> Result<Var> {
    let left = tape.matmul(spatial, weight)?;
    let right = tape.transpose(modal)?;
    tape.matmul(left, right)
}

/// Build a variant with deterministic seeded initialization.
pub fn build_variant(spec: VariantSpec) -> Result<Model> {
    Model::new(spec)
}

impl Model {
    pub fn new(spec: VariantSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let kind = spec.kind;
        let extra = spec.step_extra();
        let q = spec.hidden;
        let static_decoder = kind != VariantKind::EastNet;

        let spatial = Branch::register(
            &mut store,
            "spatial",
            spec.nodes,
            spec.spatial_embed,
            spec.channels + extra,
            &spec,
            static_decoder,
            &mut rng,
        );
        let modal = (kind.has_modal_branch() && !spec.identity_modal).then(|| {
            Branch::register(
                &mut store,
                "modal",
                spec.channels,
                spec.modal_embed,
                spec.nodes + extra,
                &spec,
                static_decoder,
                &mut rng,
            )
        });
        let covariates = kind.uses_covariates().then(|| {
            store.register(
                "covariates.proj",
                Tensor::zeros(&[spec.cov_width, spec.cov_embed]),
            )
        });
        let memory = match kind {
            VariantKind::StNetMem => Some(MemoryBank::register(
                &mut store,
                "memory",
                spec.slots,
                spec.memory_width,
                spec.nodes * q,
                Some(spec.nodes * q),
                &mut rng,
            )?),
            VariantKind::EastNet => Some(MemoryBank::register(
                &mut store,
                "memory",
                spec.slots,
                spec.memory_width,
                (spec.nodes + spec.channels) * q,
                None,
                &mut rng,
            )?),
            _ => None,
        };
        let generator = if kind == VariantKind::EastNet {
            let shapes: Vec<[usize; 3]> = spatial
                .decoder
                .iter()
                .chain(modal.iter().flat_map(|m| m.decoder.iter()))
                .map(|c| c.kernel_shape())
                .collect();
            Some(FilterGenerator::register(
                &mut store,
                "generator",
                spec.memory_width,
                spec.memory_width,
                &shapes,
                &mut rng,
            )?)
        } else {
            None
        };
        let output_shape = match kind {
            VariantKind::StNetMem => [2 * q, spec.channels],
            VariantKind::HmiNet | VariantKind::EastNet if !spec.identity_modal => [q, q],
            _ => [q, spec.channels],
        };
        let output = store.register(
            "output.weight",
            Tensor::glorot(output_shape[0], output_shape[1], &mut rng),
        );
        Ok(Model {
            spec,
            store,
            spatial,
            modal,
            covariates,
            memory,
            generator,
            output,
        })
    }

    pub fn spec(&self) -> &VariantSpec {
        &self.spec
    }

    pub fn kind(&self) -> VariantKind {
        self.spec.kind
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn memory_bank(&self) -> Option<&MemoryBank> {
        self.memory.as_ref()
    }

    pub fn spatial_branch(&self) -> &Branch {
        &self.spatial
    }

    pub fn modal_branch(&self) -> Option<&Branch> {
        self.modal.as_ref()
    }

    pub fn covariate_projection(&self) -> Option<ParamId> {
        self.covariates
    }

    pub fn output_weight(&self) -> ParamId {
        self.output
    }

    fn check_inputs(&self, inputs: &[usize], covs: &[usize]) -> Result<usize> {
        let s = &self.spec;
        let want_x = [
            inputs.first().copied().unwrap_or(0),
            s.input_len,
            s.nodes,
            s.channels,
        ];
        if inputs.len() != 4 || inputs != want_x || inputs[0] == 0 {
            return Err(Error::shape("forward inputs", inputs, &want_x));
        }
        let want_c = [inputs[0], s.input_len + s.horizon, s.cov_width];
        if covs != want_c {
            return Err(Error::shape("forward covariates", covs, &want_c));
        }
        Ok(inputs[0])
    }

    /// Run the model on a batch: `inputs` is `[B, input_len, N, C]` and
    /// `covs` is `[B, input_len + horizon, v]`, both normalized.
    pub fn forward(
        &self,
        tape: &Tape,
        binding: &Binding,
        inputs: Var,
        covs: Var,
    ) -> Result<ForwardOutput> {
        let s = self.spec;
        let batch = self.check_inputs(&tape.shape(inputs), &tape.shape(covs))?;
        let (n, c, q) = (s.nodes, s.channels, s.hidden);
        let start = tape.len();
        let mut marks: Vec<(usize, String)> = Vec::new();

        let cov_embed = match self.covariates {
            Some(w) => Some(embed_tcov(tape, covs, binding.var(w))?),
            None => None,
        };
        let step_cov = |t: usize| -> Result<Option<Var>> {
            match cov_embed {
                Some(e) => {
                    let row = tape.slice(e, 1, t, 1)?;
                    Ok(Some(tape.reshape(row, &[batch, s.cov_embed])?))
                }
                None => Ok(None),
            }
        };
        let with_cov = |x: Var, cov: Option<Var>, rows: usize| -> Result<Var> {
            match cov {
                Some(e) => {
                    let rep = tape.repeat(e, 1, rows)?;
                    tape.concat(&[x, rep], 2)
                }
                None => Ok(x),
            }
        };

        let spatial = self.spatial.bind(tape, binding)?;
        let modal = match &self.modal {
            Some(m) => Some(m.bind(tape, binding)?),
            None => None,
        };
        marks.push((tape.len(), "parameter binding".into()));

        let mut sp_seq = Vec::with_capacity(s.input_len);
        let mut mo_seq = Vec::with_capacity(s.input_len);
        let mut last_obs = None;
        for t in 0..s.input_len {
            let xt = tape.slice(inputs, 1, t, 1)?;
            let xt = tape.reshape(xt, &[batch, n, c])?;
            let cov = step_cov(t)?;
            sp_seq.push(with_cov(xt, cov, n)?);
            if modal.is_some() {
                let xm = tape.transpose(xt)?;
                mo_seq.push(with_cov(xm, cov, c)?);
            }
            last_obs = Some(xt);
        }
        let stack = s.stack();
        let enc_sp = encode(tape, &spatial.encoder, &sp_seq, spatial.topo, &stack, None)?;
        let enc_mo = match &modal {
            Some(m) => Some(encode(tape, &m.encoder, &mo_seq, m.topo, &stack, None)?),
            None => None,
        };
        marks.push((tape.len(), "encoder".into()));

        let mut attention = None;
        let (sp_over, mo_over) = match (&self.generator, &self.memory, &enc_mo) {
            (Some(gen), Some(bank), Some(enc_mo)) => {
                let feats = tape.concat(&[enc_sp.top, enc_mo.top], 1)?;
                let read = memory_query(tape, &bank.bind(binding), feats)?;
                attention = Some(read.attention);
                let mut kernels = generate_filters(tape, binding, gen, read.value)?;
                let mo: Vec<CellKernels> = kernels.split_off(s.layers);
                (Some(kernels), Some(mo))
            }
            _ => (None, None),
        };
        marks.push((tape.len(), "memory query".into()));

        let w_out = binding.var(self.output);
        let mem_bound = match (self.kind(), &self.memory) {
            (VariantKind::StNetMem, Some(bank)) => Some(bank.bind(binding)),
            _ => None,
        };
        let mut states_sp = enc_sp.final_states.clone();
        let mut states_mo = enc_mo.as_ref().map(|e| e.final_states.clone());
        let mut prev = last_obs.expect("input_len >= 1");
        let mut outputs = Vec::with_capacity(s.horizon);
        let mut attn_sum: Option<Var> = None;
        for step in 0..s.horizon {
            let cov = step_cov(s.input_len + step)?;
            let sp_in = with_cov(prev, cov, n)?;
            let (h_sp, next) = decode_step(
                tape,
                &spatial.decoder,
                sp_in,
                &states_sp,
                spatial.topo,
                sp_over.as_deref(),
            )?;
            states_sp = next;
            let out = if let (Some(m), Some(states)) = (&modal, states_mo.as_mut()) {
                let mo_in = with_cov(tape.transpose(prev)?, cov, c)?;
                let (h_mo, next) =
                    decode_step(tape, &m.decoder, mo_in, states, m.topo, mo_over.as_deref())?;
                *states = next;
                fuse_views(tape, h_sp, w_out, h_mo)?
            } else if let Some(mem) = &mem_bound {
                let read = memory_query(tape, mem, h_sp)?;
                let v = tape.reshape(read.value, &[batch, n, q])?;
                attn_sum = Some(match attn_sum {
                    Some(a) => tape.add(a, read.attention)?,
                    None => read.attention,
                });
                let joined = tape.concat(&[h_sp, v], 2)?;
                tape.matmul(joined, w_out)?
            } else {
                tape.matmul(h_sp, w_out)?
            };
            outputs.push(tape.reshape(out, &[batch, 1, n, c])?);
            prev = out;
            marks.push((tape.len(), format!("decode step {}", step + 1)));
        }
        if let Some(a) = attn_sum {
            attention = Some(tape.scale(a, 1.0 / s.horizon as f64));
        }
        let forecast = tape.concat(&outputs, 1)?;
        marks.push((tape.len(), "output".into()));

        if let Some((idx, op)) = tape.first_non_finite() {
            if idx >= start {
                let phase = marks
                    .iter()
                    .find(|(end, _)| idx < *end)
                    .map_or("output", |(_, label)| label.as_str());
                return Err(Error::Numeric(format!(
                    "non-finite value in {} forward pass, {phase} ({op} at tape node {idx})",
                    s.kind
                )));
            }
        }
        Ok(ForwardOutput {
            forecast,
            attention,
        })
    }

    /// Evaluate a batch without tracking gradients.
    pub fn predict(&self, inputs: &Tensor, covs: &Tensor) -> Result<Prediction> {
        let tape = Tape::new();
        let binding = self.store.bind(&tape);
        let x = tape.constant(inputs.clone());
        let cv = tape.constant(covs.clone());
        let out = self.forward(&tape, &binding, x, cv)?;
        let values = tape.value(out.forecast).clone();
        let attention = out.attention.map(|a| tape.value(a).clone());
        Ok(Prediction { values, attention })
    }

    /// Forecast a single window: `inputs` is `input_len x N x C`, `covs` is
    /// `(input_len + horizon) x v`.
    pub fn forecast(&self, inputs: &Tensor, covs: &Tensor) -> Result<Forecast> {
        let mut xs = vec![1];
        xs.extend_from_slice(inputs.shape());
        let mut cs = vec![1];
        cs.extend_from_slice(covs.shape());
        let pred = self.predict(&inputs.reshape(&xs)?, &covs.reshape(&cs)?)?;
        let s = &self.spec;
        Ok(Forecast {
            values: pred.values.reshape(&[s.horizon, s.nodes, s.channels])?,
        })
    }
}

/// Compare backpropagated gradients of a smooth probe loss with central
/// finite differences over every parameter, frozen ones included.
pub fn gradient_check(
    model: &Model,
    inputs: &Tensor,
    covs: &Tensor,
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let s = &model.spec;
    let weights = Tensor::uniform(
        &[inputs.shape()[0], s.horizon, s.nodes, s.channels],
        1.0,
        &mut rng,
    );
    let run = |store: &ParamStore| -> Result<(Tape, Var, Binding)> {
        let tape = Tape::new();
        let binding = store.bind_all(&tape);
        let x = tape.constant(inputs.clone());
        let cv = tape.constant(covs.clone());
        let out = model.forward(&tape, &binding, x, cv)?;
        let w = tape.constant(weights.clone());
        let lin = tape.mul(out.forecast, w)?;
        let sq = tape.mul(out.forecast, out.forecast)?;
        let a = tape.mean(lin);
        let b = tape.mean(sq);
        let loss = tape.add(a, tape.scale(b, 0.5))?;
        Ok((tape, loss, binding))
    };
    let (tape, loss, binding) = run(&model.store)?;
    let grads = tape.backward(loss)?;
    let analytic = model.store.gradients(&binding, &grads);
    let params = model.store.values();
    let mut scratch = model.store.clone();
    grad_check(
        &params,
        &analytic,
        |p| {
            scratch.load_values(p.to_vec())?;
            let (tape, loss, _) = run(&scratch)?;
            let v = tape.value(loss).item();
            Ok(v)
        },
        n_probes,
        h,
        seed,
    )
}

#[cfg(test)]
mod tests;
