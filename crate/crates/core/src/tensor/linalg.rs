use nalgebra::DMatrix;

use super::Tensor;
use crate::error::{Error, Result};

/// `c = alpha * op(a) * op(b) + beta * c` on row-major slices.
///
/// `op(a)` is `m x k`, `op(b)` is `k x n`; the transpose flags say whether the
/// stored buffers are the transposes. Thin wrapper over `matrixmultiply`.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    a_trans: bool,
    b: &[f64],
    b_trans: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_trans { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_trans { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices are exactly m*k, k*n and m*n long (asserted above)
    // and the strides address row-major (or transposed) layouts within them.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
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

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 || a.cols() != b.rows() {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, 1.0, a.data(), false, b.data(), false, 0.0, &mut out);
    Tensor::new(&[m, n], out)
}

fn to_na(t: &Tensor) -> DMatrix<f64> {
    DMatrix::from_row_slice(t.rows(), t.cols(), t.data())
}

fn from_na(m: &DMatrix<f64>) -> Tensor {
    Tensor::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

/// Minimum-norm least-squares solution `W` of `A W ≈ Y`.
///
/// Among all minimizers of `‖A W − Y‖_F`, returns the one with the smallest
/// Frobenius norm (the pseudoinverse solution). Singular values below
/// `max(n, p) · ε · σ_max` are treated as zero. Tall systems are first
/// reduced by a QR factorization, which does not change the minimizer set.
pub fn lstsq_min_norm(a: &Tensor, y: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || y.shape().len() != 2 || a.rows() != y.rows() {
        return Err(Error::shape("lstsq_min_norm", a.shape(), y.shape()));
    }
    let (n, p) = (a.rows(), a.cols());
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("empty least-squares system".into()));
    }
    if !a.is_finite() || !y.is_finite() {
        return Err(Error::NonFinite("lstsq_min_norm"));
    }
    let mut a_na = to_na(a);
    let mut y_na = to_na(y);
    if n > 2 * p {
        let qr = a_na.qr();
        let q = qr.q();
        y_na = q.transpose() * y_na;
        a_na = qr.r();
    }
    let svd = a_na.svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = n.max(p) as f64 * f64::EPSILON * smax;
    let u = svd.u.as_ref().expect("u requested");
    let vt = svd.v_t.as_ref().expect("v_t requested");
    let uty = u.transpose() * y_na;
    let mut scaled = uty;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        let inv = if s > tol { 1.0 / s } else { 0.0 };
        scaled.row_mut(i).scale_mut(inv);
    }
    let w = vt.transpose() * scaled;
    Ok(from_na(&w))
}
