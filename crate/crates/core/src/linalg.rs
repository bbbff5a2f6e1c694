//! Dense complex linear algebra shared by the numerical modules.
//!
//! Tensors live in `ndarray` containers; decompositions are delegated to
//! `faer` with sequential parallelism so that results are bit-reproducible.

use faer::{Mat, MatRef, Side};
use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);

fn to_faer(a: &ArrayView2<C64>) -> Mat<C64> {
    Mat::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)])
}

fn from_faer(m: MatRef<'_, C64>) -> Array2<C64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Matrix product `a · b`.
pub fn matmul(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    assert_eq!(a.ncols(), b.nrows(), "matmul inner dimensions");
    if a.nrows() * a.ncols() * b.ncols() < 4096 {
        return a.dot(b);
    }
    let fa = to_faer(a);
    let fb = to_faer(b);
    let prod = fa.as_ref() * fb.as_ref();
    from_faer(prod.as_ref())
}

/// Thin singular value decomposition `a = u · diag(s) · vh`.
pub struct Svd {
    pub u: Array2<C64>,
    pub s: Vec<f64>,
    pub vh: Array2<C64>,
}

impl Svd {
    /// Keeps only the leading `k` singular triplets.
    pub fn truncate(self, k: usize) -> Svd {
        let k = k.min(self.s.len());
        Svd {
            u: self.u.slice(ndarray::s![.., ..k]).to_owned(),
            s: self.s[..k].to_vec(),
            vh: self.vh.slice(ndarray::s![..k, ..]).to_owned(),
        }
    }

    /// `diag(s) · vh`
    pub fn s_vh(&self) -> Array2<C64> {
        let mut out = self.vh.clone();
        for (mut row, &s) in out.rows_mut().into_iter().zip(&self.s) {
            row.mapv_inplace(|z| z * s);
        }
        out
    }

    /// `u · diag(s)`
    pub fn u_s(&self) -> Array2<C64> {
        let mut out = self.u.clone();
        for (mut col, &s) in out.columns_mut().into_iter().zip(&self.s) {
            col.mapv_inplace(|z| z * s);
        }
        out
    }
}

pub fn svd(a: &ArrayView2<C64>) -> Result<Svd> {
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::NonFinite("svd input".into()));
    }
    let fa = to_faer(a);
    let dec = fa
        .thin_svd()
        .map_err(|e| Error::LinearAlgebra(format!("svd did not converge: {e:?}")))?;
    let s_diag = dec.S();
    let s: Vec<f64> = (0..s_diag.dim()).map(|i| s_diag[i].re).collect();
    let u = from_faer(dec.U());
    let v = dec.V();
    let vh = Array2::from_shape_fn((v.ncols(), v.nrows()), |(i, j)| v[(j, i)].conj());
    Ok(Svd { u, s, vh })
}

/// Eigen-decomposition of a Hermitian matrix; eigenvalues ascending,
/// eigenvectors in the columns of the returned matrix.
pub fn hermitian_eigh(a: &ArrayView2<C64>) -> Result<(Vec<f64>, Array2<C64>)> {
    let fa = to_faer(a);
    let dec = fa
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("eigendecomposition failed: {e:?}")))?;
    let s = dec.S();
    let vals = (0..s.dim()).map(|i| s[i].re).collect();
    Ok((vals, from_faer(dec.U())))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(a: &ArrayView2<C64>) -> Result<Vec<f64>> {
    if a.nrows() == 2 {
        // closed form keeps the d = 2 hot paths allocation free
        let p = a[(0, 0)].re;
        let q = a[(1, 1)].re;
        let off = a[(0, 1)].norm();
        let mean = 0.5 * (p + q);
        let half = (0.25 * (p - q) * (p - q) + off * off).sqrt();
        return Ok(vec![mean - half, mean + half]);
    }
    let fa = to_faer(a);
    fa.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("eigenvalues failed: {e:?}")))
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &ArrayView2<C64>, b: &ArrayView2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    Array2::from_shape_fn((ar * br, ac * bc), |(i, j)| {
        a[(i / br, j / bc)] * b[(i % br, j % bc)]
    })
}

pub fn identity(n: usize) -> Array2<C64> {
    Array2::from_shape_fn((n, n), |(i, j)| if i == j { ONE } else { ZERO })
}

fn one_norm(a: &Array2<C64>) -> f64 {
    a.columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a truncated Taylor series.
///
/// The argument is scaled to 1-norm at most 1/2, where the series is summed
/// until the next term falls below the unit roundoff relative to the sum.
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "expm of non-square matrix");
    let norm = one_norm(a);
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.mapv(|z| z / 2f64.powi(squarings));

    let mut sum = identity(n);
    let mut term = identity(n);
    for k in 1..40 {
        term = term.dot(&scaled).mapv(|z| z / k as f64);
        sum += &term;
        if one_norm(&term) <= 1e-18 * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.dot(&sum);
    }
    sum
}
