//! Operator decompositions: the SVD form of jump operators with an
//! exponentiated diagonal factor, and the normalized Hermitian /
//! non-Hermitian split of effective generators.

use ndarray::{Array1, Array2, ArrayView2};
use ndarray_linalg::{JobSvd, SVDDC};
use num_traits::{Float, Zero};
use thiserror::Error;

use crate::linalg::{dagger, frobenius_norm, identity, spectral_norm, LinalgError};
use crate::model::LindbladModel;
use crate::scalar::ComplexScalar;

#[derive(Debug, Error)]
pub enum DecomposeError {
    #[error("jump operator is zero")]
    ZeroOperator,

    #[error("accuracy epsilon must lie in (0, 1), got {0}")]
    BadEpsilon(f64),

    #[error("lower-bound violation: expectation of D^2 must be positive, got {0}")]
    LowerBoundViolation(f64),

    #[error("degenerate operator: input is zero")]
    DegenerateOperator,

    #[error("operator too large for a dense split: {0} sites")]
    TooLarge(usize),

    #[error(transparent)]
    Linalg(#[from] LinalgError),

    #[error(transparent)]
    Backend(#[from] ndarray_linalg::error::LinalgError),
}

pub type DecomposeResult<T> = Result<T, DecomposeError>;

/// Relative threshold below which a singular value counts as zero.
const SINGULAR_ZERO_REL: f64 = 1e-12;

/// SVD factorization `L = U · diag(a) · V` together with the diagonal
/// exponent `H_D T_D` reproducing `diag(a) ≈ exp(-H_D T_D)`.
///
/// Singular values are stored ascending, so zero modes come first and the
/// exponent starts with its `b`-scaled entries.
#[derive(Debug, Clone)]
pub struct JumpDecomposition<A: ComplexScalar> {
    /// Left unitary factor.
    pub u: Array2<A>,
    /// Right unitary factor (`L = U D V`, not `V†`).
    pub v: Array2<A>,
    /// Singular values `a_j ≥ 0`, ascending.
    pub singular_values: Array1<A::Real>,
    /// Diagonal of `H_D T_D`: `-ln(a_j)` for nonzero `a_j`, `b` otherwise.
    pub exponent: Array1<A::Real>,
    /// Cutoff constant applied on the zero singular values.
    pub b: A::Real,
}

impl<A: ComplexScalar> JumpDecomposition<A> {
    /// `exp(-H_D T_D)` as a diagonal vector.
    pub fn effective_diagonal(&self) -> Array1<A::Real> {
        self.exponent.mapv(|e| (-e).exp())
    }

    /// `U · exp(-H_D T_D) · V`, the approximation of the original operator.
    pub fn reconstruct(&self) -> Array2<A> {
        let d = self.effective_diagonal();
        let mut ud = self.u.clone();
        for (j, mut col) in ud.columns_mut().into_iter().enumerate() {
            let f = A::from_real(d[j]);
            col.mapv_inplace(|x| x * f);
        }
        ud.dot(&self.v)
    }

    /// `U · diag(a) · V`, the exact operator.
    pub fn exact(&self) -> Array2<A> {
        let mut ud = self.u.clone();
        for (j, mut col) in ud.columns_mut().into_iter().enumerate() {
            let f = A::from_real(self.singular_values[j]);
            col.mapv_inplace(|x| x * f);
        }
        ud.dot(&self.v)
    }
}

/// Decompose a local jump operator as `U D V` and build the diagonal
/// exponent with cutoff `b = ln(1/ε) + ln(1/⟨D²⟩)` on the zero singular
/// values. Guarantees `‖D - exp(-H_D T_D)‖ ≤ ε` whenever `⟨D²⟩ ≥
/// expectation_d2`.
pub fn decompose_jump<A: ComplexScalar>(
    l: &ArrayView2<A>,
    epsilon: f64,
    expectation_d2: f64,
) -> DecomposeResult<JumpDecomposition<A>> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(DecomposeError::BadEpsilon(epsilon));
    }
    if !(expectation_d2 > 0.0) {
        return Err(DecomposeError::LowerBoundViolation(expectation_d2));
    }
    let norm = frobenius_norm::<A>(l);
    if norm == A::Real::zero() {
        return Err(DecomposeError::ZeroOperator);
    }
    let (u_opt, s, vt_opt) = l.to_owned().svddc(JobSvd::All)?;
    let u = u_opt.expect("JobSvd::All returns U");
    let vt = vt_opt.expect("JobSvd::All returns V^T");

    // reorder ascending: zero modes first
    let k = s.len();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| s[i].partial_cmp(&s[j]).expect("singular values are finite"));
    let mut u_sorted = Array2::zeros(u.dim());
    let mut v_sorted = Array2::zeros(vt.dim());
    let mut s_sorted = Array1::zeros(k);
    for (new, &old) in order.iter().enumerate() {
        u_sorted.column_mut(new).assign(&u.column(old));
        v_sorted.row_mut(new).assign(&vt.row(old));
        s_sorted[new] = s[old];
    }

    let b = A::real_from_f64((1.0 / epsilon).ln() + (1.0 / expectation_d2).ln());
    let s_max = s_sorted[k - 1];
    let zero_cut = s_max * A::real_from_f64(SINGULAR_ZERO_REL);
    let exponent = s_sorted.mapv(|a| if a <= zero_cut { b } else { -a.ln() });

    Ok(JumpDecomposition {
        u: u_sorted,
        v: v_sorted,
        singular_values: s_sorted,
        exponent,
        b,
    })
}

/// Result of [`normalize_split`]: `H / n = λ₁H₁ - iλ₂H₂` with `λ₁² + λ₂² = 1`
/// and `‖H₁‖ = ‖H₂‖ = 1` in spectral norm, where `n = √(‖P‖² + ‖Q‖²)` for the
/// Hermitian part `P` and the (Hermitian) coefficient `Q` of the
/// anti-Hermitian part.
#[derive(Debug, Clone)]
pub struct NormalizedSplit<A: ComplexScalar> {
    pub lambda1: A::Real,
    pub h1: Array2<A>,
    pub lambda2: A::Real,
    pub h2: Array2<A>,
    /// Overall normalization applied to the input.
    pub norm: A::Real,
    /// Set when the input was purely Hermitian and `h2` is the zero operator.
    pub hermitian_only: bool,
}

impl<A: ComplexScalar> NormalizedSplit<A> {
    /// `λ₁H₁ - iλ₂H₂`, which reconstructs the normalized input.
    pub fn reconstruct(&self) -> Array2<A> {
        let l1 = A::from_real(self.lambda1);
        let l2 = A::from_real(self.lambda2) * A::i();
        self.h1.mapv(|x| x * l1) - self.h2.mapv(|x| x * l2)
    }
}

/// Split an operator into normalized Hermitian and non-Hermitian parts.
pub fn normalize_split<A: ComplexScalar>(
    h_eff: &ArrayView2<A>,
) -> DecomposeResult<NormalizedSplit<A>> {
    let dim = h_eff.nrows();
    let hd = dagger(h_eff);
    let half = A::from_re(0.5);
    // H = P - iQ with P, Q Hermitian
    let p = (h_eff.to_owned() + &hd).mapv(|x| x * half);
    let q = (h_eff.to_owned() - &hd).mapv(|x| x * half * A::i());
    let p_norm = spectral_norm::<A>(&p.view())?;
    let q_norm = spectral_norm::<A>(&q.view())?;
    if p_norm == A::Real::zero() && q_norm == A::Real::zero() {
        return Err(DecomposeError::DegenerateOperator);
    }
    let norm = (p_norm * p_norm + q_norm * q_norm).sqrt();
    let hermitian_only = q_norm == A::Real::zero();
    let h1 = if p_norm > A::Real::zero() {
        p.mapv(|x| x / A::from_real(p_norm))
    } else {
        Array2::zeros((dim, dim))
    };
    let h2 = if hermitian_only {
        Array2::zeros((dim, dim))
    } else {
        q.mapv(|x| x / A::from_real(q_norm))
    };
    Ok(NormalizedSplit {
        lambda1: p_norm / norm,
        h1,
        lambda2: q_norm / norm,
        h2,
        norm,
        hermitian_only,
    })
}

/// Dense no-jump generator of the model as an operator:
/// `H - (iγ/2) Σ_k α_k L_k†L_k`.
///
/// The state-dependent expectation offset in the trajectory engine is a
/// multiple of the identity and is omitted here.
pub fn effective_hamiltonian<A: ComplexScalar>(
    model: &LindbladModel<A>,
) -> DecomposeResult<Array2<A>> {
    let n = model.sites();
    if n > 12 {
        return Err(DecomposeError::TooLarge(n));
    }
    let mut h = model
        .hamiltonian
        .densify()
        .map_err(|_| DecomposeError::TooLarge(n))?;
    let half_gamma = A::from_real(model.gamma) * A::from_re(0.5);
    for ch in &model.channels {
        let ldag_l = crate::model::LocalOperator::dense(
            ch.operator.support(),
            ch.operator.dagger_product_on_support(),
        )
        .expect("support of a valid channel")
        .densify(n);
        let w = half_gamma * A::from_real(ch.alpha) * A::i();
        h.zip_mut_with(&ldag_l, |acc, &k| *acc -= w * k);
    }
    Ok(h)
}

/// True when all `L_k†L_k` terms commute pairwise (checked densely on the
/// joint supports, which must stay within 12 sites).
pub fn channels_commute<A: ComplexScalar>(model: &LindbladModel<A>) -> DecomposeResult<bool> {
    let n = model.sites();
    if n > 12 {
        return Err(DecomposeError::TooLarge(n));
    }
    let dense: Vec<Array2<A>> = model
        .channels
        .iter()
        .map(|ch| {
            crate::model::LocalOperator::dense(
                ch.operator.support(),
                ch.operator.dagger_product_on_support(),
            )
            .expect("support of a valid channel")
            .densify(n)
        })
        .collect();
    let tol = A::real_from_f64(1e-12);
    for i in 0..dense.len() {
        for j in i + 1..dense.len() {
            let comm = dense[i].dot(&dense[j]) - dense[j].dot(&dense[i]);
            if frobenius_norm::<A>(&comm.view()) > tol {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[allow(dead_code)]
fn unitarity_defect<A: ComplexScalar>(u: &ArrayView2<A>) -> A::Real {
    let prod = dagger(u).dot(&u.to_owned());
    frobenius_norm::<A>(&(&prod - &identity::<A>(u.ncols())).view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::boundary_driven_ising;
    use crate::pauli::{sigma_plus, PauliAxis};
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn raising_operator_decomposition_matches_worked_form() {
        let l = sigma_plus::<C64>();
        let d = decompose_jump(&l.view(), 1e-6, 1.0).unwrap();
        // ascending order puts the zero mode first: U = I and V = X up to
        // per-mode phases, H_D T_D = b (Z + I)/2
        assert_abs_diff_eq!(d.singular_values[0], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(d.singular_values[1], 1.0, epsilon = 1e-14);
        let id = identity::<C64>(2);
        let x = PauliAxis::X.matrix::<C64>();
        let abs_of = |m: &Array2<C64>| m.mapv(|v| C64::new(v.norm(), 0.0));
        assert!(frobenius_norm::<C64>(&(&abs_of(&d.u) - &id).view()) < 1e-12);
        assert!(frobenius_norm::<C64>(&(&abs_of(&d.v) - &x).view()) < 1e-12);
        assert_abs_diff_eq!(d.exponent[0], d.b, epsilon = 1e-14);
        assert_abs_diff_eq!(d.exponent[1], 0.0, epsilon = 1e-14);
        // phases cancel in the product
        let err = frobenius_norm::<C64>(&(&d.exact() - &sigma_plus::<C64>()).view());
        assert!(err < 1e-13);
    }

    #[test]
    fn identity_jump_needs_no_cutoff() {
        let l = identity::<C64>(2);
        let d = decompose_jump(&l.view(), 1e-4, 1.0).unwrap();
        assert!(d.exponent.iter().all(|&e| e.abs() < 1e-14));
        let err = frobenius_norm::<C64>(&(&d.reconstruct() - &l).view());
        assert!(err < 1e-13);
    }

    #[test]
    fn cutoff_bound_verified_by_direct_evaluation() {
        // L = diag(0.5, 0), eps = 1e-3, <D^2> = 0.25 -> b = ln(1000) + ln(4)
        let l = array![[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let d = decompose_jump(&l.view(), 1e-3, 0.25).unwrap();
        assert_abs_diff_eq!(d.b, 1000f64.ln() + 4f64.ln(), epsilon = 1e-12);
        // brute-force 2x2 evaluation of ‖D - exp(-H_D T_D)‖ (diagonal, so the
        // spectral norm is the max entry deviation)
        let deviation = d
            .singular_values
            .iter()
            .zip(d.effective_diagonal().iter())
            .map(|(&a, &e)| (a - e).abs())
            .fold(0.0, f64::max);
        assert!(deviation <= 1e-3, "deviation {deviation} above epsilon");
    }

    #[test]
    fn rejects_invalid_inputs() {
        let l = sigma_plus::<C64>();
        assert!(matches!(
            decompose_jump(&l.view(), 0.0, 1.0),
            Err(DecomposeError::BadEpsilon(_))
        ));
        assert!(matches!(
            decompose_jump(&l.view(), 1e-3, 0.0),
            Err(DecomposeError::LowerBoundViolation(_))
        ));
        let zero = Array2::<C64>::zeros((2, 2));
        assert!(matches!(
            decompose_jump(&zero.view(), 1e-3, 1.0),
            Err(DecomposeError::ZeroOperator)
        ));
    }

    #[test]
    fn reconstruction_invariant_on_random_operators() {
        let mut seed = 23u64;
        let mut rand = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..10 {
            let l = Array2::from_shape_fn((4, 4), |_| c(rand(), rand()));
            let eps = 1e-8;
            let d = decompose_jump(&l.view(), eps, 1.0).unwrap();
            // unitarity
            assert!(unitarity_defect::<C64>(&d.u.view()) < 1e-10);
            assert!(unitarity_defect::<C64>(&d.v.view()) < 1e-10);
            // exact reconstruction from the singular values
            let err = frobenius_norm::<C64>(&(&d.exact() - &l).view());
            assert!(err < 1e-12, "exact reconstruction off by {err}");
            // nonzero singular values are reproduced exactly by the exponent
            for (&a, &e) in d.singular_values.iter().zip(d.exponent.iter()) {
                if a > 1e-10 {
                    assert_abs_diff_eq!((-e).exp(), a, epsilon = 1e-14);
                }
            }
            // reconstruction within eps on the support
            let err = spectral_norm::<C64>(&(&d.reconstruct() - &l).view()).unwrap();
            assert!(err <= eps * 1.0001, "reconstruction error {err} above {eps}");
        }
    }

    #[test]
    fn equal_norm_parts_split_evenly() {
        // H = X - iZ: lambda1 = lambda2 = 1/sqrt(2), H1 = X, H2 = Z
        let x = PauliAxis::X.matrix::<C64>();
        let z = PauliAxis::Z.matrix::<C64>();
        let h = &x - &z.mapv(|v| v * C64::i());
        let split = normalize_split(&h.view()).unwrap();
        let inv_sqrt2 = 1.0 / 2f64.sqrt();
        assert_abs_diff_eq!(split.lambda1, inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(split.lambda2, inv_sqrt2, epsilon = 1e-12);
        assert!(frobenius_norm::<C64>(&(&split.h1 - &x).view()) < 1e-12);
        assert!(frobenius_norm::<C64>(&(&split.h2 - &z).view()) < 1e-12);
        assert!(!split.hermitian_only);
    }

    #[test]
    fn hermitian_input_flagged() {
        let x = PauliAxis::X.matrix::<C64>();
        let split = normalize_split(&x.view()).unwrap();
        assert!(split.hermitian_only);
        assert_abs_diff_eq!(split.lambda1, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(split.lambda2, 0.0, epsilon = 1e-14);
        assert!(split.h2.iter().all(|&v| v == C64::new(0.0, 0.0)));
        let zero = Array2::<C64>::zeros((3, 3));
        assert!(matches!(
            normalize_split(&zero.view()),
            Err(DecomposeError::DegenerateOperator)
        ));
    }

    #[test]
    fn split_reconstructs_random_operators() {
        let mut seed = 31u64;
        let mut rand = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..10 {
            let h = Array2::from_shape_fn((8, 8), |_| c(rand(), rand()));
            let split = normalize_split(&h.view()).unwrap();
            assert_abs_diff_eq!(
                split.lambda1 * split.lambda1 + split.lambda2 * split.lambda2,
                1.0,
                epsilon = 1e-12
            );
            let rebuilt = split.reconstruct();
            let scaled = h.mapv(|x| x / C64::new(split.norm, 0.0));
            let err = spectral_norm::<C64>(&(&rebuilt - &scaled).view()).unwrap();
            assert!(err < 1e-10, "split reconstruction off by {err}");
            assert_abs_diff_eq!(
                spectral_norm::<C64>(&split.h1.view()).unwrap(),
                1.0,
                epsilon = 1e-10
            );
            assert_abs_diff_eq!(
                spectral_norm::<C64>(&split.h2.view()).unwrap(),
                1.0,
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn effective_hamiltonian_split_cross_checked_densely() {
        // N=3 Ising with boundary channels, gamma = 0.5, mu = 0
        let model = boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.5, 0.0).unwrap();
        let h_eff = effective_hamiltonian(&model).unwrap();
        let split = normalize_split(&h_eff.view()).unwrap();
        // dense spectral-norm oracle: P = H, Q = (gamma/2) sum alpha L†L
        let h = model.hamiltonian.densify().unwrap();
        let mut q = Array2::<C64>::zeros((8, 8));
        for ch in &model.channels {
            let k = crate::model::LocalOperator::dense(
                ch.operator.support(),
                ch.operator.dagger_product_on_support(),
            )
            .unwrap()
            .densify(3);
            q = q + k.mapv(|v| v * C64::new(0.5 * model.gamma * ch.alpha, 0.0));
        }
        let p_norm = spectral_norm::<C64>(&h.view()).unwrap();
        let q_norm = spectral_norm::<C64>(&q.view()).unwrap();
        let norm = (p_norm * p_norm + q_norm * q_norm).sqrt();
        assert_abs_diff_eq!(split.lambda1, p_norm / norm, epsilon = 1e-10);
        assert_abs_diff_eq!(split.lambda2, q_norm / norm, epsilon = 1e-10);
    }

    #[test]
    fn boundary_channels_commute() {
        let model = boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.5, 0.5).unwrap();
        assert!(channels_commute(&model).unwrap());
        // |0⟩⟨+| on the same site as σ⁺ gives L†L = |+⟩⟨+| which fails to
        // commute with |0⟩⟨0|
        let h = crate::operator::build_ising_hamiltonian::<C64>(2, 1.0, 0.0, 0.0).unwrap();
        let s = 1.0 / 2f64.sqrt();
        let skew = array![[c(s, 0.0), c(s, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]];
        let chs = vec![
            crate::model::JumpChannel::new(
                crate::model::LocalOperator::dense(vec![0], skew).unwrap(),
                1.0,
                0.0,
            )
            .unwrap(),
            crate::model::JumpChannel::new(crate::model::LocalOperator::raise(0), 1.0, 0.0)
                .unwrap(),
        ];
        let model =
            crate::model::LindbladModel::new(h, chs, 1.0, crate::model::Schedule::Constant)
                .unwrap();
        assert!(!channels_commute(&model).unwrap());
    }
}
