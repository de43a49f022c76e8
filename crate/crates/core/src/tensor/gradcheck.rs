use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// (parameter index, flat element index) of the worst probe.
    pub worst: (usize, usize),
    pub probes: usize,
}

/// Compare `analytic` gradients against central finite differences of
/// `loss` at `n_probes` sampled coordinates.
///
/// Probes cycle through the parameter tensors so every tensor is visited
/// before any is visited twice; the element within a tensor is drawn from
/// a ChaCha stream seeded with `seed`. The error at a coordinate is
/// `|analytic - fd| / max(1, |analytic|)`.
pub fn grad_check<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    mut loss: F,
    n_probes: usize,
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[Tensor]) -> Result<f64>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::contract(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    if n_probes == 0 || params.is_empty() {
        return Err(Error::contract(
            "grad_check needs at least one probe and one parameter",
        ));
    }
    if analytic.len() != params.len() {
        return Err(Error::contract(
            "one analytic gradient per parameter required",
        ));
    }
    for (p, g) in params.iter().zip(analytic) {
        if p.shape() != g.shape() {
            return Err(Error::shape("grad_check", p.shape(), g.shape()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: (0, 0),
        probes: n_probes,
    };
    for probe in 0..n_probes {
        let pi = probe % params.len();
        let ei = rng.random_range(0..params[pi].numel());
        let x0 = params[pi].data()[ei];

        let mut eval = |x: f64, work: &mut Vec<Tensor>| -> Result<f64> {
            work[pi].data_mut()[ei] = x;
            let l = loss(work)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss {l} at parameter {pi}, element {ei} (value {x})"
                )));
            }
            Ok(l)
        };
        let up = eval(x0 + h, &mut work)?;
        let down = eval(x0 - h, &mut work)?;
        work[pi].data_mut()[ei] = x0;

        let fd = (up - down) / (2.0 * h);
        let a = analytic[pi].data()[ei];
        let rel = (a - fd).abs() / a.abs().max(1.0);
        if rel >= report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (pi, ei);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn linear_model_is_exact() {
        let w = Tensor::new(&[2, 2], vec![0.3, -0.1, 0.7, 0.2]).unwrap();
        let x = Tensor::new(&[2, 1], vec![1.5, -0.5]).unwrap();
        let run = |p: &[Tensor]| -> Result<(f64, Vec<Tensor>)> {
            let tape = Tape::new();
            let wv = tape.param(&p[0]);
            let xv = tape.constant(x.clone());
            let y = tape.matmul(wv, xv)?;
            let loss = tape.sum(y);
            let g = tape.backward(loss)?;
            let l = tape.value(loss).item();
            Ok((l, vec![g.get_or_zeros(wv)]))
        };
        let (_, grads) = run(std::slice::from_ref(&w)).unwrap();
        let report = grad_check(&[w], &grads, |p| Ok(run(p)?.0), 8, 1e-5, 1).unwrap();
        assert!(report.max_rel_error < 1e-10, "{report:?}");
    }

    #[test]
    fn rejects_out_of_range_step() {
        let w = [Tensor::scalar(1.0)];
        assert!(grad_check(&w, &w, |_| Ok(0.0), 1, 1e-2, 0).is_err());
    }

    #[test]
    fn non_finite_loss_names_the_coordinate() {
        let w = [Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap()];
        let err = grad_check(&w, &w, |_| Ok(f64::NAN), 1, 1e-5, 0).unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("parameter 0")));
    }
}
