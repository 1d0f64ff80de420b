//! Dense linear-algebra helpers shared by the engines.
//!
//! Everything here operates on `ndarray` matrices of a [`ComplexScalar`].
//! Factorizations go through LAPACK; the only nontrivial algorithm
//! implemented locally is the scaling-and-squaring matrix exponential.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{Inverse, JobSvd, SVDDC};
use num_traits::{Float, One, Zero};
use thiserror::Error;

use crate::scalar::ComplexScalar;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("LAPACK call failed: {0}")]
    Backend(#[from] ndarray_linalg::error::LinalgError),

    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("power iteration did not converge within {max_iter} iterations")]
    PowerIterationDiverged { max_iter: usize },
}

pub type LinalgResult<T> = Result<T, LinalgError>;

/// Kronecker product `a ⊗ b`.
pub fn kron<A: ComplexScalar>(a: &ArrayView2<A>, b: &ArrayView2<A>) -> Array2<A> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            block.zip_mut_with(b, |o, &bkl| *o = aij * bkl);
        }
    }
    out
}

/// Conjugate transpose.
pub fn dagger<A: ComplexScalar>(a: &ArrayView2<A>) -> Array2<A> {
    a.t().mapv(|x| x.conj())
}

/// Complex identity matrix.
pub fn identity<A: ComplexScalar>(dim: usize) -> Array2<A> {
    Array2::from_diag_elem(dim, A::one())
}

/// Frobenius norm.
pub fn frobenius_norm<A: ComplexScalar>(a: &ArrayView2<A>) -> A::Real {
    a.iter()
        .map(|x| x.abs_sq())
        .fold(A::Real::zero(), |acc, v| acc + v)
        .sqrt()
}

/// 2-norm of a complex vector.
pub fn vector_norm<A: ComplexScalar>(v: &ndarray::ArrayView1<A>) -> A::Real {
    v.iter()
        .map(|x| x.abs_sq())
        .fold(A::Real::zero(), |acc, s| acc + s)
        .sqrt()
}

/// Trace of a square matrix.
pub fn trace<A: ComplexScalar>(a: &ArrayView2<A>) -> A {
    a.diag().iter().copied().fold(A::zero(), |acc, v| acc + v)
}

/// Dimension above which [`spectral_norm`] switches from a dense SVD to power
/// iteration; 2^12 rows corresponds to a 12-qubit operator support.
const DENSE_SPECTRAL_LIMIT: usize = 1 << 12;
const POWER_ITER_TOL: f64 = 1e-8;
const POWER_ITER_MAX: usize = 10_000;

/// Spectral norm (largest singular value).
///
/// Dense SVD up to [`DENSE_SPECTRAL_LIMIT`] rows, power iteration on `A†A`
/// above that.
pub fn spectral_norm<A: ComplexScalar>(a: &ArrayView2<A>) -> LinalgResult<A::Real> {
    if a.nrows() <= DENSE_SPECTRAL_LIMIT && a.ncols() <= DENSE_SPECTRAL_LIMIT {
        let (_, s, _) = a.to_owned().svddc(JobSvd::None)?;
        return Ok(s.iter().copied().fold(A::Real::zero(), |m, v| if v > m { v } else { m }));
    }
    power_iteration_norm(a)
}

fn power_iteration_norm<A: ComplexScalar>(a: &ArrayView2<A>) -> LinalgResult<A::Real> {
    let n = a.ncols();
    let tol = A::real_from_f64(POWER_ITER_TOL);
    // Deterministic non-degenerate start vector.
    let mut v: Array1<A> = Array1::from_shape_fn(n, |k| {
        A::from_re(1.0 + 0.37 * ((k * 2654435761) % 97) as f64 / 97.0)
    });
    let mut norm = vector_norm::<A>(&v.view());
    v.mapv_inplace(|x| x / A::from_real(norm));
    let ah = dagger(a);
    let mut prev = A::Real::zero();
    for _ in 0..POWER_ITER_MAX {
        let w = a.dot(&v);
        let w = ah.dot(&w);
        norm = vector_norm::<A>(&w.view());
        if norm == A::Real::zero() {
            return Ok(A::Real::zero());
        }
        let sigma = norm.sqrt();
        v = w.mapv(|x| x / A::from_real(norm));
        let delta = if sigma > prev { sigma - prev } else { prev - sigma };
        let floor = if sigma > A::Real::one() { sigma } else { A::Real::one() };
        if delta <= tol * floor {
            return Ok(sigma);
        }
        prev = sigma;
    }
    Err(LinalgError::PowerIterationDiverged { max_iter: POWER_ITER_MAX })
}

// Padé-13 coefficients for the scaling-and-squaring exponential.
const PADE13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];
const PADE13_THETA: f64 = 5.371920351148152;

/// Matrix exponential via Padé-13 with scaling and squaring.
pub fn expm<A: ComplexScalar>(a: &ArrayView2<A>) -> LinalgResult<Array2<A>> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(LinalgError::NotSquare { rows, cols });
    }
    let norm1 = a.mapv(|x| x).norm_l1_to_l1_operator();
    let scale = if norm1 > PADE13_THETA {
        (norm1 / PADE13_THETA).log2().ceil() as i32
    } else {
        0
    };
    let factor = A::from_re(0.5f64.powi(scale));
    let a_scaled = a.mapv(|x| x * factor);

    let dim = rows;
    let id = identity::<A>(dim);
    let a2 = a_scaled.dot(&a_scaled);
    let a4 = a2.dot(&a2);
    let a6 = a2.dot(&a4);

    let b = |k: usize| A::from_re(PADE13[k]);
    let u_inner = a6.mapv(|x| x * b(13)) + &a4.mapv(|x| x * b(11)) + &a2.mapv(|x| x * b(9));
    let u_poly = a6.dot(&u_inner)
        + &a6.mapv(|x| x * b(7))
        + &a4.mapv(|x| x * b(5))
        + &a2.mapv(|x| x * b(3))
        + &id.mapv(|x| x * b(1));
    let u = a_scaled.dot(&u_poly);

    let v_inner = a6.mapv(|x| x * b(12)) + &a4.mapv(|x| x * b(10)) + &a2.mapv(|x| x * b(8));
    let v = a6.dot(&v_inner)
        + &a6.mapv(|x| x * b(6))
        + &a4.mapv(|x| x * b(4))
        + &a2.mapv(|x| x * b(2))
        + &id.mapv(|x| x * b(0));

    let num = &v + &u;
    let den = &v - &u;
    let mut result = den.inv()?.dot(&num);
    for _ in 0..scale {
        result = result.dot(&result);
    }
    Ok(result)
}

trait L1OperatorNorm {
    fn norm_l1_to_l1_operator(&self) -> f64;
}

impl<A: ComplexScalar> L1OperatorNorm for Array2<A> {
    /// Maximum column sum of absolute values, as an `f64`.
    fn norm_l1_to_l1_operator(&self) -> f64 {
        self.columns()
            .into_iter()
            .map(|c| {
                c.iter()
                    .map(|x| A::real_to_f64(x.abs()))
                    .sum::<f64>()
            })
            .fold(0.0, f64::max)
    }
}
