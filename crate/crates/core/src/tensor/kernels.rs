//! Matrix-product kernels and the broadcasting plan shared by the plain and
//! taped matmul.

use crate::error::{Error, Result};

/// Operand layout for [`gemm`]: whether `a` and/or `b` are read transposed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GemmLayout {
    NN,
    NT,
    TN,
}

/// `c = a' * b' + beta * c`, with `a'` of size `m x k` and `b'` of size
/// `k x n` after applying the layout. All buffers are row-major and
/// contiguous.
pub fn gemm(
    layout: GemmLayout,
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k, "gemm lhs size");
    assert_eq!(b.len(), k * n, "gemm rhs size");
    assert_eq!(c.len(), m * n, "gemm out size");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = match layout {
        GemmLayout::TN => (1, m as isize),
        _ => (k as isize, 1),
    };
    let (rsb, csb) = match layout {
        GemmLayout::NT => (1, k as isize),
        _ => (n as isize, 1),
    };
    // SAFETY: the asserts above guarantee every strided access stays
    // within the three slices, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Broadcast {
    /// `[.., m, p] x [p, q]`: the right operand is shared.
    SharedRight,
    /// `[m, p] x [.., p, q]`: the left operand is shared.
    SharedLeft,
    /// `[.., m, p] x [.., p, q]` with equal leading dims.
    Batched,
}

#[derive(Clone, Debug)]
pub(crate) struct MatmulPlan {
    pub mode: Broadcast,
    pub batch: usize,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
}

impl MatmulPlan {
    pub fn new(a: &[usize], b: &[usize]) -> Result<Self> {
        if a.len() < 2 || b.len() < 2 {
            return Err(Error::shape("matmul", a, b));
        }
        let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
        let (kb, n) = (b[b.len() - 2], b[b.len() - 1]);
        if k != kb {
            return Err(Error::shape("matmul", a, b));
        }
        let a_lead = &a[..a.len() - 2];
        let b_lead = &b[..b.len() - 2];
        let (mode, lead) = match (a_lead.is_empty(), b_lead.is_empty()) {
            (_, true) => (Broadcast::SharedRight, a_lead),
            (true, false) => (Broadcast::SharedLeft, b_lead),
            (false, false) if a_lead == b_lead => (Broadcast::Batched, a_lead),
            _ => return Err(Error::shape("matmul", a, b)),
        };
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        Ok(MatmulPlan {
            mode,
            batch: lead.iter().product(),
            m,
            k,
            n,
            out_shape,
        })
    }

    pub fn out_numel(&self) -> usize {
        self.batch * self.m * self.n
    }

    pub fn forward(&self, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        match self.mode {
            Broadcast::SharedRight => gemm(GemmLayout::NN, self.batch * m, k, n, a, b, 0.0, out),
            Broadcast::SharedLeft => {
                for (bi, oi) in b.chunks_exact(k * n).zip(out.chunks_exact_mut(m * n)) {
                    gemm(GemmLayout::NN, m, k, n, a, bi, 0.0, oi);
                }
            }
            Broadcast::Batched => {
                for ((ai, bi), oi) in a
                    .chunks_exact(m * k)
                    .zip(b.chunks_exact(k * n))
                    .zip(out.chunks_exact_mut(m * n))
                {
                    gemm(GemmLayout::NN, m, k, n, ai, bi, 0.0, oi);
                }
            }
        }
    }

    /// Accumulate `dA += dC * B^T`.
    pub fn backward_lhs(&self, dc: &[f64], b: &[f64], da: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        match self.mode {
            Broadcast::SharedRight => gemm(GemmLayout::NT, self.batch * m, n, k, dc, b, 1.0, da),
            Broadcast::SharedLeft => {
                for (dci, bi) in dc.chunks_exact(m * n).zip(b.chunks_exact(k * n)) {
                    gemm(GemmLayout::NT, m, n, k, dci, bi, 1.0, da);
                }
            }
            Broadcast::Batched => {
                for ((dci, bi), dai) in dc
                    .chunks_exact(m * n)
                    .zip(b.chunks_exact(k * n))
                    .zip(da.chunks_exact_mut(m * k))
                {
                    gemm(GemmLayout::NT, m, n, k, dci, bi, 1.0, dai);
                }
            }
        }
    }

    /// Accumulate `dB += A^T * dC`.
    pub fn backward_rhs(&self, dc: &[f64], a: &[f64], db: &mut [f64]) {
        let (m, k, n) = (self.m, self.k, self.n);
        match self.mode {
            Broadcast::SharedRight => gemm(GemmLayout::TN, k, self.batch * m, n, a, dc, 1.0, db),
            Broadcast::SharedLeft => {
                for (dci, dbi) in dc.chunks_exact(m * n).zip(db.chunks_exact_mut(k * n)) {
                    gemm(GemmLayout::TN, k, m, n, a, dci, 1.0, dbi);
                }
            }
            Broadcast::Batched => {
                for ((dci, ai), dbi) in dc
                    .chunks_exact(m * n)
                    .zip(a.chunks_exact(m * k))
                    .zip(db.chunks_exact_mut(k * n))
                {
                    gemm(GemmLayout::TN, k, m, n, ai, dci, 1.0, dbi);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(x: &[f64], r: usize, c: usize) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        super::super::transpose_into(x, &mut t, r, c);
        t
    }

    #[test]
    fn layouts_agree_with_naive_product() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.11).cos()).collect();
        let want = naive(&a, &b, m, k, n);

        let mut c = vec![0.0; m * n];
        gemm(GemmLayout::NN, m, k, n, &a, &b, 0.0, &mut c);
        let err = c
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);

        let at = transpose(&a, m, k);
        gemm(GemmLayout::TN, m, k, n, &at, &b, 0.0, &mut c);
        let err = c
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);

        let bt = transpose(&b, k, n);
        gemm(GemmLayout::NT, m, k, n, &a, &bt, 0.0, &mut c);
        let err = c
            .iter()
            .zip(&want)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
    }

    #[test]
    fn plan_rejects_inner_mismatch_and_unequal_batches() {
        assert!(MatmulPlan::new(&[2, 3], &[4, 5]).is_err());
        assert!(MatmulPlan::new(&[2, 2, 3], &[3, 3, 5]).is_err());
        assert_eq!(
            MatmulPlan::new(&[7, 2, 3], &[3, 5]).unwrap().out_shape,
            vec![7, 2, 5]
        );
        assert_eq!(
            MatmulPlan::new(&[2, 3], &[7, 3, 5]).unwrap().out_shape,
            vec![7, 2, 5]
        );
        assert_eq!(
            MatmulPlan::new(&[7, 2, 3], &[7, 3, 5]).unwrap().mode,
            Broadcast::Batched
        );
    }
}
