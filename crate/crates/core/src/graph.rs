//! Learned graph topology and K-order graph convolution.
//!
//! The topology is derived from a pair of node embeddings as
//! `softmax(relu(E Fᵀ))`, row-normalized, with no forced self loops: the
//! `k = 0` term of the convolution already carries each node's own signal.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Pair of learnable node embeddings and the topology derived from them.
#[derive(Clone, Debug)]
pub struct AdaptiveEdges {
    source: Tensor,
    target: Tensor,
    cached: Option<Tensor>,
}

impl AdaptiveEdges {
    pub fn new(source: Tensor, target: Tensor) -> Result<Self> {
        if source.ndim() != 2 || source.shape() != target.shape() {
            return Err(Error::shape(
                "adaptive_edges",
                source.shape(),
                target.shape(),
            ));
        }
        Ok(AdaptiveEdges {
            source,
            target,
            cached: None,
        })
    }

    /// Embeddings drawn uniformly from `[-1/sqrt(mu), 1/sqrt(mu)]`.
    pub fn init<R: Rng + ?Sized>(nodes: usize, mu: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (mu as f64).sqrt();
        AdaptiveEdges {
            source: Tensor::uniform(&[nodes, mu], bound, rng),
            target: Tensor::uniform(&[nodes, mu], bound, rng),
            cached: None,
        }
    }

    pub fn nodes(&self) -> usize {
        self.source.shape()[0]
    }

    pub fn source(&self) -> &Tensor {
        &self.source
    }

    pub fn target(&self) -> &Tensor {
        &self.target
    }

    pub fn set_embeddings(&mut self, source: Tensor, target: Tensor) -> Result<()> {
        *self = AdaptiveEdges::new(source, target)?;
        Ok(())
    }

    /// Row-stochastic topology, cached until the embeddings change.
    pub fn topology(&mut self) -> Result<&Tensor> {
        if self.cached.is_none() {
            let tape = Tape::new();
            let e = tape.constant(self.source.clone());
            let f = tape.constant(self.target.clone());
            let topo = adaptive_topology(&tape, e, f)?;
            self.cached = Some(tape.value(topo).clone());
        }
        Ok(self.cached.as_ref().expect("cached topology"))
    }
}

/// `softmax(relu(E Fᵀ))` on the tape.
pub fn adaptive_topology(tape: &Tape, source: Var, target: Var) -> Result<Var> {
    let (s, t) = (tape.shape(source), tape.shape(target));
    if s.len() != 2 || s != t {
        return Err(Error::shape("adaptive_topology", &s, &t));
    }
    let ft = tape.transpose(target)?;
    let logits = tape.matmul(source, ft)?;
    let logits = tape.relu(logits);
    Ok(tape.softmax_rows(logits))
}

/// Graph-convolution kernel `Θ` of shape `(K+1) x p x q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    theta: Tensor,
}

impl ConvKernel {
    pub fn new(theta: Tensor) -> Result<Self> {
        if theta.ndim() != 3 {
            return Err(Error::contract(format!(
                "kernel must be (K+1) x p x q, got {:?}",
                theta.shape()
            )));
        }
        Ok(ConvKernel { theta })
    }

    /// Glorot-style uniform init scaled by the number of summed terms.
    pub fn init<R: Rng + ?Sized>(order: usize, p: usize, q: usize, rng: &mut R) -> Self {
        let bound = (6.0 / ((order + 1) * p + q) as f64).sqrt();
        ConvKernel {
            theta: Tensor::uniform(&[order + 1, p, q], bound, rng),
        }
    }

    pub fn order(&self) -> usize {
        self.theta.shape()[0] - 1
    }

    pub fn input_dim(&self) -> usize {
        self.theta.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.theta.shape()[2]
    }

    pub fn theta(&self) -> &Tensor {
        &self.theta
    }

    pub fn into_theta(self) -> Tensor {
        self.theta
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: Var) -> Var {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Stack `[X, P X, .., Pᴷ X]` along the feature axis, giving
/// `[.., n, (K+1) p]`. Powers are applied iteratively, `Pᵏ X = P (Pᵏ⁻¹ X)`.
pub fn propagate(tape: &Tape, x: Var, topo: Var, order: usize) -> Result<Var> {
    let xs = tape.shape(x);
    let ts = tape.shape(topo);
    if xs.len() < 2 || ts != [xs[xs.len() - 2], xs[xs.len() - 2]] {
        return Err(Error::shape("graph_conv", &xs, &ts));
    }
    if order == 0 {
        return Ok(x);
    }
    let mut terms = Vec::with_capacity(order + 1);
    terms.push(x);
    for _ in 0..order {
        let prev = *terms.last().expect("nonempty");
        terms.push(tape.matmul(topo, prev)?);
    }
    tape.concat(&terms, xs.len() - 1)
}

/// View a `(K+1) x p x q` kernel (or a `B x (K+1) x p x q` stack) as the
/// `(K+1)p x q` matrix that multiplies the output of [`propagate`].
pub fn flatten_kernel(tape: &Tape, kernel: Var) -> Result<Var> {
    let ks = tape.shape(kernel);
    match ks.len() {
        3 => tape.reshape(kernel, &[ks[0] * ks[1], ks[2]]),
        4 => tape.reshape(kernel, &[ks[0], ks[1] * ks[2], ks[3]]),
        _ => Err(Error::contract(format!(
            "kernel must be rank 3 or 4, got {ks:?}"
        ))),
    }
}

/// `σ(Σ_k Pᵏ X W_k)`.
///
/// `x` is `[.., n, p]`; `topo` is `n x n`; `kernel` is either a shared
/// `(K+1) x p x q` tensor or a per-sample `B x (K+1) x p x q` stack when
/// `x` is `B x n x p`. The K+1 terms are evaluated as one product of the
/// stacked propagations with the stacked kernel.
pub fn graph_conv(
    tape: &Tape,
    x: Var,
    topo: Var,
    kernel: Var,
    activation: Activation,
) -> Result<Var> {
    let xs = tape.shape(x);
    let ks = tape.shape(kernel);
    let p = *xs.last().unwrap_or(&0);
    let (terms, kp) = match ks.len() {
        3 => (ks[0], ks[1]),
        4 if xs.len() == 3 && ks[0] == xs[0] => (ks[1], ks[2]),
        _ => return Err(Error::shape("graph_conv", &xs, &ks)),
    };
    if kp != p {
        return Err(Error::shape("graph_conv", &xs, &ks));
    }
    let stacked = propagate(tape, x, topo, terms - 1)?;
    let flat = flatten_kernel(tape, kernel)?;
    let out = tape.matmul(stacked, flat)?;
    Ok(activation.apply(tape, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn matpow(p: &Tensor, k: usize) -> Tensor {
        let n = p.shape()[0];
        let mut out = Tensor::eye(n);
        for _ in 0..k {
            out = out.matmul(p).unwrap();
        }
        out
    }

    fn brute_force(x: &Tensor, topo: &Tensor, theta: &Tensor) -> Tensor {
        let (terms, p, q) = (theta.shape()[0], theta.shape()[1], theta.shape()[2]);
        let n = x.shape()[0];
        let mut out = Tensor::zeros(&[n, q]);
        for k in 0..terms {
            let w =
                Tensor::new(&[p, q], theta.data()[k * p * q..(k + 1) * p * q].to_vec()).unwrap();
            let term = matpow(topo, k).matmul(x).unwrap().matmul(&w).unwrap();
            for (o, t) in out.data_mut().iter_mut().zip(term.data()) {
                *o += t;
            }
        }
        out
    }

    fn random_topology(n: usize, rng: &mut ChaCha8Rng) -> Tensor {
        let mut edges = AdaptiveEdges::init(n, 4, rng);
        edges.topology().unwrap().clone()
    }

    #[test]
    fn zero_embeddings_give_uniform_rows() {
        let mut edges = AdaptiveEdges::new(Tensor::zeros(&[4, 3]), Tensor::zeros(&[4, 3])).unwrap();
        let topo = edges.topology().unwrap();
        assert!(topo.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn saturated_logits_give_near_identity() {
        let e = Tensor::from_rows(&[&[10.0_f64.sqrt()], &[-(10.0_f64.sqrt())]]).unwrap();
        let mut edges = AdaptiveEdges::new(e.clone(), e).unwrap();
        // E Fᵀ = [[10, -10], [-10, 10]]
        let topo = edges.topology().unwrap().clone();
        assert!((topo.at(&[0, 0]) - 1.0).abs() < 1e-4);
        assert!((topo.at(&[1, 1]) - 1.0).abs() < 1e-4);
        assert!(topo.at(&[0, 1]) < 1e-4);
    }

    #[test]
    fn topology_cache_refreshes_on_new_embeddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut edges = AdaptiveEdges::init(3, 2, &mut rng);
        let before = edges.topology().unwrap().clone();
        edges
            .set_embeddings(Tensor::zeros(&[3, 2]), Tensor::zeros(&[3, 2]))
            .unwrap();
        let after = edges.topology().unwrap().clone();
        assert_ne!(before, after);
        assert!(edges
            .set_embeddings(Tensor::zeros(&[3, 2]), Tensor::zeros(&[4, 2]))
            .is_err());
    }

    #[test]
    fn order_zero_is_a_linear_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::uniform(&[5, 3], 1.0, &mut rng);
        let theta = Tensor::uniform(&[1, 3, 2], 1.0, &mut rng);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(random_topology(5, &mut rng));
        let kv = tape.constant(theta.clone());
        let out = graph_conv(&tape, xv, tv, kv, Activation::Identity).unwrap();
        let want = x.matmul(&theta.reshape(&[3, 2]).unwrap()).unwrap();
        assert_eq!(*tape.value(out), want);
    }

    #[test]
    fn identity_topology_sums_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = Tensor::uniform(&[4, 3], 1.0, &mut rng);
        let theta = Tensor::uniform(&[4, 3, 2], 1.0, &mut rng);
        let mut wsum = Tensor::zeros(&[3, 2]);
        for k in 0..4 {
            for i in 0..6 {
                wsum.data_mut()[i] += theta.data()[k * 6 + i];
            }
        }
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(Tensor::eye(4));
        let kv = tape.constant(theta);
        let out = graph_conv(&tape, xv, tv, kv, Activation::Identity).unwrap();
        assert!(tape.value(out).max_abs_diff(&x.matmul(&wsum).unwrap()) < 1e-12);
    }

    #[test]
    fn matches_power_series_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..=5 {
            let x = Tensor::uniform(&[n, 3], 1.0, &mut rng);
            let topo = random_topology(n, &mut rng);
            let theta = Tensor::uniform(&[4, 3, 2], 1.0, &mut rng);
            let tape = Tape::new();
            let xv = tape.constant(x.clone());
            let tv = tape.constant(topo.clone());
            let kv = tape.constant(theta.clone());
            let out = graph_conv(&tape, xv, tv, kv, Activation::Identity).unwrap();
            let want = brute_force(&x, &topo, &theta);
            assert!(tape.value(out).max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn per_sample_kernels_match_individual_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Tensor::uniform(&[2, 4, 3], 1.0, &mut rng);
        let topo = random_topology(4, &mut rng);
        let kernels = Tensor::uniform(&[2, 3, 3, 5], 1.0, &mut rng);
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let tv = tape.constant(topo.clone());
        let kv = tape.constant(kernels.clone());
        let out = graph_conv(&tape, xv, tv, kv, Activation::Identity).unwrap();
        let out = tape.value(out).clone();
        for b in 0..2 {
            let xb = Tensor::new(&[4, 3], x.data()[b * 12..(b + 1) * 12].to_vec()).unwrap();
            let kb =
                Tensor::new(&[3, 3, 5], kernels.data()[b * 45..(b + 1) * 45].to_vec()).unwrap();
            let want = brute_force(&xb, &topo, &kb);
            let got = Tensor::new(&[4, 5], out.data()[b * 20..(b + 1) * 20].to_vec()).unwrap();
            assert!(got.max_abs_diff(&want) < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 2]));
        let topo = tape.constant(Tensor::eye(4));
        let k = tape.constant(Tensor::zeros(&[2, 2, 2]));
        assert!(graph_conv(&tape, x, topo, k, Activation::Identity).is_err());
        let topo = tape.constant(Tensor::eye(3));
        let bad_k = tape.constant(Tensor::zeros(&[2, 5, 2]));
        assert!(graph_conv(&tape, x, topo, bad_k, Activation::Identity).is_err());
        let e = tape.constant(Tensor::zeros(&[3, 2]));
        let f = tape.constant(Tensor::zeros(&[4, 2]));
        assert!(adaptive_topology(&tape, e, f).is_err());
    }
}
