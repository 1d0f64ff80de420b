//! Density matrices and their row-major vectorization.

use ndarray::{Array1, Array2, ArrayView2};
use num_traits::Zero;
use ndarray_linalg::Eigh;
use thiserror::Error;

use crate::linalg::{dagger, frobenius_norm, trace};
use crate::pauli::PauliString;
use crate::scalar::ComplexScalar;

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("matrix shape {rows}x{cols} is not a power-of-two square")]
    BadShape { rows: usize, cols: usize },

    #[error("vector length {len} is not a power of four")]
    BadVectorLength { len: usize },

    #[error("not Hermitian: ||rho - rho^dag||_F = {0:.3e}")]
    NotHermitian(f64),

    #[error("trace deviates from one by {0:.3e}")]
    BadTrace(f64),

    #[error("not positive semidefinite: min eigenvalue {0:.3e}")]
    NotPositive(f64),

    #[error(transparent)]
    Linalg(#[from] ndarray_linalg::error::LinalgError),
}

pub type DensityResult<T> = Result<T, DensityError>;

/// A validated `2^N x 2^N` density matrix.
#[derive(Debug, Clone)]
pub struct DensityMatrix<A: ComplexScalar> {
    n: usize,
    data: Array2<A>,
}

impl<A: ComplexScalar> DensityMatrix<A> {
    /// Validates Hermiticity, unit trace and positivity before wrapping.
    pub fn new(data: Array2<A>) -> DensityResult<Self> {
        let out = Self::from_raw_unchecked(data)?;
        out.validate()?;
        Ok(out)
    }

    /// Wraps without the (eigendecomposition-backed) validity checks; used by
    /// the integrators, which maintain the invariants dynamically.
    pub fn from_raw_unchecked(data: Array2<A>) -> DensityResult<Self> {
        let (rows, cols) = data.dim();
        if rows != cols || !rows.is_power_of_two() {
            return Err(DensityError::BadShape { rows, cols });
        }
        let n = rows.trailing_zeros() as usize;
        Ok(Self { n, data })
    }

    /// Hermiticity / trace / positivity checks at the module tolerances.
    pub fn validate(&self) -> DensityResult<()> {
        let herm = frobenius_norm::<A>(&(&self.data - &dagger(&self.data.view())).view());
        if A::real_to_f64(herm) > HERMITICITY_TOL {
            return Err(DensityError::NotHermitian(A::real_to_f64(herm)));
        }
        let tr = trace(&self.data.view());
        let dev = (tr - A::one()).abs();
        if A::real_to_f64(dev) > TRACE_TOL {
            return Err(DensityError::BadTrace(A::real_to_f64(dev)));
        }
        let (evals, _) = self.data.eigh(ndarray_linalg::UPLO::Lower)?;
        let min = evals
            .iter()
            .copied()
            .fold(A::Real::zero(), |m, v| if v < m { v } else { m });
        if A::real_to_f64(min) < -POSITIVITY_TOL {
            return Err(DensityError::NotPositive(A::real_to_f64(min)));
        }
        Ok(())
    }

    /// Pure state `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &ndarray::ArrayView1<A>) -> DensityResult<Self> {
        let dim = psi.len();
        let data = Array2::from_shape_fn((dim, dim), |(i, j)| psi[i] * psi[j].conj());
        Self::from_raw_unchecked(data)
    }

    /// Product of single-site density matrices.
    pub fn product(locals: &[Array2<A>]) -> DensityResult<Self> {
        let mut data = Array2::from_diag_elem(1, A::one());
        for l in locals {
            if l.dim() != (2, 2) {
                return Err(DensityError::BadShape { rows: l.nrows(), cols: l.ncols() });
            }
            data = crate::linalg::kron(&data.view(), &l.view());
        }
        Self::new(data)
    }

    /// `|00…0⟩⟨00…0|`.
    pub fn ground(n: usize) -> Self {
        let dim = 1usize << n;
        let mut data = Array2::zeros((dim, dim));
        data[[0, 0]] = A::one();
        Self { n, data }
    }

    /// `I / 2^N`.
    pub fn maximally_mixed(n: usize) -> Self {
        let dim = 1usize << n;
        let data = Array2::from_diag_elem(dim, A::from_re(1.0 / dim as f64));
        Self { n, data }
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &Array2<A> {
        &self.data
    }

    pub fn into_data(self) -> Array2<A> {
        self.data
    }

    pub fn trace(&self) -> A {
        trace(&self.data.view())
    }

    /// `Tr(Pρ)` for a Pauli string.
    pub fn expect_pauli(&self, op: &PauliString<A>) -> A {
        // Tr(Pρ) = Σ_b ⟨b|Pρ|b⟩; apply P to each column of ρ and read the
        // matching entry.
        let dim = self.data.nrows();
        let mut acc = A::zero();
        let mut scratch = Array1::zeros(dim);
        for j in 0..dim {
            scratch.fill(A::zero());
            op.accumulate_apply(&self.data.column(j), self.n, &mut scratch);
            acc += scratch[j];
        }
        acc
    }

    pub fn frobenius_distance(&self, other: &Self) -> A::Real {
        frobenius_norm::<A>(&(&self.data - &other.data).view())
    }
}

/// The vectorized density `|ρ⟩⟩`, length `4^N`.
#[derive(Debug, Clone)]
pub struct VectorizedDensity<A: ComplexScalar> {
    n: usize,
    data: Array1<A>,
}

impl<A: ComplexScalar> VectorizedDensity<A> {
    pub fn new(data: Array1<A>) -> DensityResult<Self> {
        let len = data.len();
        let n2 = len.trailing_zeros() as usize;
        if !len.is_power_of_two() || n2 % 2 != 0 {
            return Err(DensityError::BadVectorLength { len });
        }
        Ok(Self { n: n2 / 2, data })
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &Array1<A> {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut Array1<A> {
        &mut self.data
    }

    pub fn into_data(self) -> Array1<A> {
        self.data
    }

    /// Trace read off the diagonal entries.
    pub fn trace(&self) -> A {
        let dim = 1usize << self.n;
        (0..dim).fold(A::zero(), |acc, i| acc + self.data[i * dim + i])
    }

    /// View as the `2^N x 2^N` matrix it encodes.
    pub fn as_matrix(&self) -> ArrayView2<'_, A> {
        let dim = 1usize << self.n;
        self.data.view().into_shape_with_order((dim, dim)).expect("length is 4^N")
    }
}

/// Row-major vectorization: `(i, j) → i·2^N + j`.
pub fn vectorize<A: ComplexScalar>(rho: &DensityMatrix<A>) -> VectorizedDensity<A> {
    let n = rho.sites();
    let data = rho
        .data()
        .iter()
        .copied()
        .collect::<Array1<A>>();
    VectorizedDensity { n, data }
}

/// Inverse of [`vectorize`]; re-validates the result.
pub fn unvectorize<A: ComplexScalar>(v: &VectorizedDensity<A>) -> DensityResult<DensityMatrix<A>> {
    let dim = 1usize << v.sites();
    let data = Array2::from_shape_vec((dim, dim), v.data.to_vec())
        .map_err(|_| DensityError::BadVectorLength { len: v.data.len() })?;
    DensityMatrix::new(data)
}
