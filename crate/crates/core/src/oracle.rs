//! Ground-truth integration of the master equation at small site counts.
//!
//! Two integration paths share one RK4 core:
//!
//! - linear models (`η = 0`) evolve the vectorized density under the
//!   Liouvillian superoperator, dense up to 6 sites and matrix-free up to 10;
//! - models with `η > 0` evolve the density matrix directly, with the
//!   state-dependent drift term evaluated at every stage (dense operators,
//!   up to 6 sites).
//!
//! The drift expectation defaults to `⟨L†L⟩`, the unique first-order reading
//! under which the renormalized post-selected state keeps unit trace; the
//! `⟨LL†⟩` variant is kept behind [`DriftForm::LLdag`] for comparison and is
//! not trace-preserving for non-normal jump operators.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use ndarray_linalg::Eig;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::density::{DensityError, DensityMatrix};
use crate::linalg::{dagger, kron, trace};
use crate::model::LindbladModel;
use crate::scalar::ComplexScalar;

/// Dense superoperators are built up to this many sites.
pub const DENSE_SITE_LIMIT: usize = 6;
/// Matrix-free application is supported up to this many sites.
pub const MATRIX_FREE_SITE_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("nonlinear model: some channel has eta > 0; integrate_master_equation handles it, the linear Liouvillian does not")]
    NonlinearModel,

    #[error("{n} sites exceed the {limit}-site limit for this mode")]
    TooLarge { n: usize, limit: usize },

    #[error("state has {state} sites but the model has {model}")]
    SiteMismatch { state: usize, model: usize },

    #[error("step too large: keep probability {p_keep:.3e} is not positive at dt = {dt:.3e}")]
    StepTooLarge { p_keep: f64, dt: f64 },

    #[error("trace drifted by {drift:.3e} at t = {t:.4}; retry with dt = {suggested_dt:.3e}")]
    TraceDrift { t: f64, drift: f64, suggested_dt: f64 },

    #[error("integration horizon must satisfy T >= dt > 0, got T = {t_final}, dt = {dt}")]
    BadHorizon { t_final: f64, dt: f64 },

    #[error(transparent)]
    Density(#[from] DensityError),

    #[error(transparent)]
    Backend(#[from] ndarray_linalg::error::LinalgError),
}

pub type OracleResult<T> = Result<T, OracleError>;

/// Which expectation value enters the nonlinear drift term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DriftForm {
    /// `⟨L†L⟩ ρ` — trace-preserving.
    #[default]
    LdagL,
    /// `⟨LL†⟩ ρ` — kept for comparison; not trace-preserving for
    /// non-normal `L`.
    LLdag,
}

/// Options for [`integrate_master_equation`].
#[derive(Debug, Clone)]
pub struct MasterEquationOptions {
    pub drift_form: DriftForm,
    /// Renormalize the trace after every step. Off by default: trace drift is
    /// itself a diagnostic.
    pub renormalize_trace: bool,
    /// Error out when `|Tr ρ - 1|` exceeds this.
    pub trace_tol: f64,
}

impl Default for MasterEquationOptions {
    fn default() -> Self {
        Self { drift_form: DriftForm::default(), renormalize_trace: false, trace_tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiouvillianMode {
    Dense,
    MatrixFree,
}

/// The Liouvillian of a linear (`η = 0`) model, split into its Hamiltonian
/// part and the dissipator scaled by `γ(t)` so one build serves every time.
pub struct LiouvillianAction<A: ComplexScalar> {
    model: LindbladModel<A>,
    time: A::Real,
    mode: LiouvillianMode,
    /// `(Ĥ, D̂)` with `L̂(t) = Ĥ + γ(t) D̂`; present in dense mode.
    dense: Option<(Array2<A>, Array2<A>)>,
    /// Channel data for the matrix-free path: `(L, L†, L†L)` on the support.
    channels: Vec<MatrixFreeChannel<A>>,
}

struct MatrixFreeChannel<A: ComplexScalar> {
    sites: Vec<usize>,
    l: Array2<A>,
    l_dag: Array2<A>,
    k: Array2<A>,
    alpha: A::Real,
}

/// Build the Liouvillian superoperator action for a linear model at time `t`.
///
/// Row-major vectorization: left multiplication by `M` is `M ⊗ I`, right
/// multiplication is `I ⊗ Mᵀ`, so
/// `L̂ = -i(H⊗I - I⊗Hᵀ) + γ Σ_k α_k (L⊗L̄ - ½ L†L⊗I - ½ I⊗(L†L)ᵀ)`.
pub fn build_liouvillian<A: ComplexScalar>(
    model: &LindbladModel<A>,
    t: A::Real,
) -> OracleResult<LiouvillianAction<A>> {
    let model = model.resolve_protocol();
    if !model.is_linear() {
        return Err(OracleError::NonlinearModel);
    }
    let n = model.sites();
    if n > MATRIX_FREE_SITE_LIMIT {
        return Err(OracleError::TooLarge { n, limit: MATRIX_FREE_SITE_LIMIT });
    }
    let mode = if n <= DENSE_SITE_LIMIT {
        LiouvillianMode::Dense
    } else {
        LiouvillianMode::MatrixFree
    };

    let channels: Vec<MatrixFreeChannel<A>> = model
        .channels
        .iter()
        .map(|ch| {
            let l = ch.operator.dense_on_support();
            let l_dag = dagger(&l.view());
            let k = l_dag.dot(&l);
            MatrixFreeChannel { sites: ch.operator.support(), l, l_dag, k, alpha: ch.alpha }
        })
        .collect();

    let dense = if mode == LiouvillianMode::Dense {
        let dim = 1usize << n;
        let id = crate::linalg::identity::<A>(dim);
        let h = model
            .hamiltonian
            .densify()
            .map_err(|_| OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT })?;
        let minus_i = A::zero() - A::i();
        let h_super = (kron(&h.view(), &id.view()) - kron(&id.view(), &h.t().view()))
            .mapv(|x| x * minus_i);
        let mut d_super = Array2::zeros((dim * dim, dim * dim));
        let half = A::from_re(0.5);
        for ch in &model.channels {
            let alpha = A::from_real(ch.alpha);
            let l_full = ch.operator.densify(n);
            let l_conj = l_full.mapv(|x| x.conj());
            let k_full = dagger(&l_full.view()).dot(&l_full);
            let jump = kron(&l_full.view(), &l_conj.view());
            let left = kron(&k_full.view(), &id.view());
            let right = kron(&id.view(), &k_full.t().view());
            d_super.zip_mut_with(&jump, |acc, &v| *acc += alpha * v);
            d_super.zip_mut_with(&left, |acc, &v| *acc -= alpha * half * v);
            d_super.zip_mut_with(&right, |acc, &v| *acc -= alpha * half * v);
        }
        Some((h_super, d_super))
    } else {
        None
    };

    Ok(LiouvillianAction { model, time: t, mode, dense, channels })
}

impl<A: ComplexScalar> LiouvillianAction<A> {
    pub fn mode(&self) -> LiouvillianMode {
        self.mode
    }

    pub fn sites(&self) -> usize {
        self.model.sites()
    }

    /// `L̂(t)` as a dense matrix (dense mode only).
    pub fn dense_matrix(&self) -> Option<Array2<A>> {
        let (h, d) = self.dense.as_ref()?;
        let g = A::from_real(self.model.gamma_at(self.time));
        Some(h + &d.mapv(|x| x * g))
    }

    /// Apply at the build-time `t`.
    pub fn apply(&self, v: &ArrayView1<A>) -> Array1<A> {
        self.apply_at(self.time, v)
    }

    /// Apply `L̂(t)` to a vectorized density.
    pub fn apply_at(&self, t: A::Real, v: &ArrayView1<A>) -> Array1<A> {
        let gamma = self.model.gamma_at(t);
        if let Some((h, d)) = &self.dense {
            let mut out = h.dot(v);
            let dv = d.dot(v);
            let g = A::from_real(gamma);
            out.zip_mut_with(&dv, |o, &x| *o += g * x);
            return out;
        }
        self.apply_matrix_free(gamma, v)
    }

    fn apply_matrix_free(&self, gamma: A::Real, v: &ArrayView1<A>) -> Array1<A> {
        let n = self.model.sites();
        let dim = 1usize << n;
        let rho = v.view().into_shape_with_order((dim, dim)).expect("4^N vector");
        let mut out = Array2::<A>::zeros((dim, dim));

        // -i (H rho - rho H), column by column for the left product and row
        // by row for the right one
        let minus_i = A::zero() - A::i();
        let mut h_rho = Array2::<A>::zeros((dim, dim));
        let mut dst = Array1::zeros(dim);
        for term in self.model.hamiltonian.terms() {
            if term.coefficient() == A::zero() {
                continue;
            }
            for j in 0..dim {
                let col = rho.column(j).to_owned();
                dst.fill(A::zero());
                term.accumulate_apply(&col.view(), n, &mut dst);
                h_rho.column_mut(j).zip_mut_with(&dst, |o, &x| *o += x);
            }
        }
        out.zip_mut_with(&h_rho, |o, &x| *o += minus_i * x);
        // rho H = (H† rho†)† = (H rho†)† for Hermitian H
        let rho_dag = dagger(&rho);
        let mut h_rho_dag = Array2::<A>::zeros((dim, dim));
        for term in self.model.hamiltonian.terms() {
            if term.coefficient() == A::zero() {
                continue;
            }
            for j in 0..dim {
                let col = rho_dag.column(j).to_owned();
                dst.fill(A::zero());
                term.accumulate_apply(&col.view(), n, &mut dst);
                h_rho_dag.column_mut(j).zip_mut_with(&dst, |o, &x| *o += x);
            }
        }
        let rho_h = dagger(&h_rho_dag.view());
        out.zip_mut_with(&rho_h, |o, &x| *o -= minus_i * x);

        // dissipators
        let g = A::from_real(gamma);
        let half = A::from_re(0.5);
        for ch in &self.channels {
            let alpha = A::from_real(ch.alpha);
            let w = g * alpha;
            // L rho L†
            let mut tmp = Array2::<A>::zeros((dim, dim));
            left_apply_local(&ch.l.view(), &ch.sites, n, &rho, &mut tmp);
            let mut jump = Array2::<A>::zeros((dim, dim));
            right_apply_local(&ch.l_dag.view(), &ch.sites, n, &tmp.view(), &mut jump);
            out.zip_mut_with(&jump, |o, &x| *o += w * x);
            // -1/2 {K, rho}
            let mut krho = Array2::<A>::zeros((dim, dim));
            left_apply_local(&ch.k.view(), &ch.sites, n, &rho, &mut krho);
            out.zip_mut_with(&krho, |o, &x| *o -= w * half * x);
            let mut rhok = Array2::<A>::zeros((dim, dim));
            right_apply_local(&ch.k.view(), &ch.sites, n, &rho, &mut rhok);
            out.zip_mut_with(&rhok, |o, &x| *o -= w * half * x);
        }

        out.into_shape_with_order(dim * dim).expect("dim^2 vector")
    }
}

/// `out += M ρ` for a local `M` on `sites`.
fn left_apply_local<A: ComplexScalar>(
    m: &ArrayView2<A>,
    sites: &[usize],
    n: usize,
    rho: &ArrayView2<A>,
    out: &mut Array2<A>,
) {
    let dim = rho.nrows();
    let mut dst = Array1::zeros(dim);
    for j in 0..dim {
        let col = rho.column(j).to_owned();
        dst.fill(A::zero());
        crate::model::accumulate_apply_dense_local(m, sites, n, &col.view(), &mut dst);
        out.column_mut(j).zip_mut_with(&dst, |o, &x| *o += x);
    }
}

/// `out += ρ M` for a local `M` on `sites`: row `i` of the result is
/// `Mᵀ · (row i of ρ)`.
fn right_apply_local<A: ComplexScalar>(
    m: &ArrayView2<A>,
    sites: &[usize],
    n: usize,
    rho: &ArrayView2<A>,
    out: &mut Array2<A>,
) {
    let mt = m.t().to_owned();
    let dim = rho.nrows();
    let mut dst = Array1::zeros(dim);
    for i in 0..dim {
        let row = rho.row(i).to_owned();
        dst.fill(A::zero());
        crate::model::accumulate_apply_dense_local(&mt.view(), sites, n, &row.view(), &mut dst);
        out.row_mut(i).zip_mut_with(&dst, |o, &x| *o += x);
    }
}

/// Sampled points of a master-equation run.
#[derive(Debug)]
pub struct MasterEquationRun<A: ComplexScalar> {
    pub times: Vec<A::Real>,
    pub states: Vec<DensityMatrix<A>>,
}

/// RK4 integration of `∂_t ρ = -i[H,ρ] + γ(t) N[ρ]` up to `t_final`,
/// sampling at the grid points nearest to `sample_times` (ascending).
pub fn integrate_master_equation<A: ComplexScalar>(
    model: &LindbladModel<A>,
    rho0: &DensityMatrix<A>,
    t_final: A::Real,
    dt: A::Real,
    options: &MasterEquationOptions,
    sample_times: &[A::Real],
) -> OracleResult<MasterEquationRun<A>> {
    let mut times = Vec::with_capacity(sample_times.len());
    let mut states = Vec::with_capacity(sample_times.len());
    let mut pending = sample_times.iter().copied().peekable();
    let half_step = A::real_to_f64(dt) * 0.5;
    integrate_master_equation_observed(model, rho0, t_final, dt, options, |t, rho| {
        while let Some(&want) = pending.peek() {
            if A::real_to_f64(t) + half_step >= A::real_to_f64(want) {
                times.push(t);
                states.push(
                    DensityMatrix::from_raw_unchecked(rho.to_owned())
                        .expect("square power-of-two state"),
                );
                pending.next();
            } else {
                break;
            }
        }
    })?;
    Ok(MasterEquationRun { times, states })
}

/// Observer-driven variant of [`integrate_master_equation`]; the observer is
/// invoked at `t = 0` and after every accepted step.
pub fn integrate_master_equation_observed<A: ComplexScalar>(
    model: &LindbladModel<A>,
    rho0: &DensityMatrix<A>,
    t_final: A::Real,
    dt: A::Real,
    options: &MasterEquationOptions,
    mut observer: impl FnMut(A::Real, &ArrayView2<A>),
) -> OracleResult<DensityMatrix<A>> {
    let model = model.resolve_protocol();
    if rho0.sites() != model.sites() {
        return Err(OracleError::SiteMismatch { state: rho0.sites(), model: model.sites() });
    }
    let dt_f = A::real_to_f64(dt);
    let t_f = A::real_to_f64(t_final);
    if !(dt_f > 0.0) || t_f < dt_f {
        return Err(OracleError::BadHorizon { t_final: t_f, dt: dt_f });
    }
    let steps = (t_f / dt_f).round() as usize;

    if model.is_linear() {
        integrate_linear(&model, rho0, steps, dt, options, &mut observer)
    } else {
        integrate_nonlinear(&model, rho0, steps, dt, options, &mut observer)
    }
}

fn integrate_linear<A: ComplexScalar>(
    model: &LindbladModel<A>,
    rho0: &DensityMatrix<A>,
    steps: usize,
    dt: A::Real,
    options: &MasterEquationOptions,
    observer: &mut impl FnMut(A::Real, &ArrayView2<A>),
) -> OracleResult<DensityMatrix<A>> {
    let n = model.sites();
    let dim = 1usize << n;
    let action = build_liouvillian(model, A::Real::zero())?;
    let mut v: Array1<A> = crate::density::vectorize(rho0).into_data();
    let dt_f = A::real_to_f64(dt);
    let sixth = A::from_re(dt_f / 6.0);
    let half = A::from_re(dt_f / 2.0);
    let full = A::from_re(dt_f);
    let two = A::from_re(2.0);

    let as_matrix = |v: &Array1<A>| -> Array2<A> {
        Array2::from_shape_vec((dim, dim), v.to_vec()).expect("4^N layout")
    };
    observer(A::Real::zero(), &as_matrix(&v).view());

    for step in 0..steps {
        let t0 = A::real_from_f64(step as f64 * dt_f);
        let t_half = A::real_from_f64(step as f64 * dt_f + dt_f / 2.0);
        let t1 = A::real_from_f64((step + 1) as f64 * dt_f);
        let k1 = action.apply_at(t0, &v.view());
        let mut stage = v.clone();
        stage.zip_mut_with(&k1, |s, &k| *s += half * k);
        let k2 = action.apply_at(t_half, &stage.view());
        stage.assign(&v);
        stage.zip_mut_with(&k2, |s, &k| *s += half * k);
        let k3 = action.apply_at(t_half, &stage.view());
        stage.assign(&v);
        stage.zip_mut_with(&k3, |s, &k| *s += full * k);
        let k4 = action.apply_at(t1, &stage.view());
        for (((vi, &a), (&b, &c)), &d) in v
            .iter_mut()
            .zip(k1.iter())
            .zip(k2.iter().zip(k3.iter()))
            .zip(k4.iter())
        {
            *vi += sixth * (a + two * b + two * c + d);
        }

        let tr: A = (0..dim).fold(A::zero(), |acc, i| acc + v[i * dim + i]);
        let drift = A::real_to_f64((tr - A::one()).abs());
        if drift > options.trace_tol {
            return Err(OracleError::TraceDrift {
                t: A::real_to_f64(t1),
                drift,
                suggested_dt: dt_f / 2.0,
            });
        }
        if options.renormalize_trace {
            let inv = A::one() / tr;
            v.mapv_inplace(|x| x * inv);
        }
        observer(t1, &as_matrix(&v).view());
    }
    let rho = as_matrix(&v);
    Ok(DensityMatrix::from_raw_unchecked(rho)?)
}

struct NonlinearWorkspace<A: ComplexScalar> {
    h: Array2<A>,
    channels: Vec<DenseChannel<A>>,
}

struct DenseChannel<A: ComplexScalar> {
    l: Array2<A>,
    l_dag: Array2<A>,
    k: Array2<A>,
    k_alt: Array2<A>,
    alpha: A::Real,
    eta: A::Real,
}

fn nonlinear_workspace<A: ComplexScalar>(
    model: &LindbladModel<A>,
) -> OracleResult<NonlinearWorkspace<A>> {
    let n = model.sites();
    if n > DENSE_SITE_LIMIT {
        return Err(OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT });
    }
    let h = model
        .hamiltonian
        .densify()
        .map_err(|_| OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT })?;
    let channels = model
        .channels
        .iter()
        .map(|ch| {
            let l = ch.operator.densify(n);
            let l_dag = dagger(&l.view());
            let k = l_dag.dot(&l);
            let k_alt = l.dot(&l_dag);
            DenseChannel { l, l_dag, k, k_alt, alpha: ch.alpha, eta: ch.eta }
        })
        .collect();
    Ok(NonlinearWorkspace { h, channels })
}

fn nonlinear_rhs<A: ComplexScalar>(
    ws: &NonlinearWorkspace<A>,
    gamma: A::Real,
    drift_form: DriftForm,
    rho: &Array2<A>,
) -> Array2<A> {
    let minus_i = A::zero() - A::i();
    let h_rho = ws.h.dot(rho);
    let rho_h = rho.dot(&ws.h);
    let mut out = (h_rho - rho_h).mapv(|x| x * minus_i);
    let g = A::from_real(gamma);
    let half = A::from_re(0.5);
    for ch in &ws.channels {
        let alpha = A::from_real(ch.alpha);
        let w = g * alpha;
        let one_minus_eta = A::from_re(1.0 - A::real_to_f64(ch.eta));
        let eta = A::from_real(ch.eta);
        // (1 - η) L ρ L†
        let jump = ch.l.dot(rho).dot(&ch.l_dag);
        out.zip_mut_with(&jump, |o, &x| *o += w * one_minus_eta * x);
        // -1/2 {L†L, ρ}
        let k_rho = ch.k.dot(rho);
        let rho_k = rho.dot(&ch.k);
        out.zip_mut_with(&k_rho, |o, &x| *o -= w * half * x);
        out.zip_mut_with(&rho_k, |o, &x| *o -= w * half * x);
        // + η ⟨·⟩ ρ
        if ch.eta > A::Real::zero() {
            let expectation = match drift_form {
                DriftForm::LdagL => trace(&ch.k.dot(rho).view()),
                DriftForm::LLdag => trace(&ch.k_alt.dot(rho).view()),
            };
            let coeff = w * eta * expectation;
            out.zip_mut_with(rho, |o, &x| *o += coeff * x);
        }
    }
    out
}

fn integrate_nonlinear<A: ComplexScalar>(
    model: &LindbladModel<A>,
    rho0: &DensityMatrix<A>,
    steps: usize,
    dt: A::Real,
    options: &MasterEquationOptions,
    observer: &mut impl FnMut(A::Real, &ArrayView2<A>),
) -> OracleResult<DensityMatrix<A>> {
    let ws = nonlinear_workspace(model)?;
    let dt_f = A::real_to_f64(dt);
    let sixth = A::from_re(dt_f / 6.0);
    let half = A::from_re(0.5 * dt_f);
    let full = A::from_re(dt_f);
    let two = A::from_re(2.0);
    let mut rho = rho0.data().clone();
    observer(A::Real::zero(), &rho.view());

    for step in 0..steps {
        let t0 = step as f64 * dt_f;
        let g0 = model.gamma_at(A::real_from_f64(t0));
        let gh = model.gamma_at(A::real_from_f64(t0 + dt_f / 2.0));
        let g1 = model.gamma_at(A::real_from_f64(t0 + dt_f));

        let k1 = nonlinear_rhs(&ws, g0, options.drift_form, &rho);
        let mut stage = rho.clone();
        stage.zip_mut_with(&k1, |s, &k| *s += half * k);
        let k2 = nonlinear_rhs(&ws, gh, options.drift_form, &stage);
        stage.assign(&rho);
        stage.zip_mut_with(&k2, |s, &k| *s += half * k);
        let k3 = nonlinear_rhs(&ws, gh, options.drift_form, &stage);
        stage.assign(&rho);
        stage.zip_mut_with(&k3, |s, &k| *s += full * k);
        let k4 = nonlinear_rhs(&ws, g1, options.drift_form, &stage);
        ndarray::Zip::from(&mut rho)
            .and(&k1)
            .and(&k2)
            .and(&k3)
            .and(&k4)
            .for_each(|r, &a, &b, &c, &d| *r += sixth * (a + two * b + two * c + d));

        let t1 = (step + 1) as f64 * dt_f;
        let tr = trace(&rho.view());
        let drift = A::real_to_f64((tr - A::one()).abs());
        if drift > options.trace_tol {
            return Err(OracleError::TraceDrift { t: t1, drift, suggested_dt: dt_f / 2.0 });
        }
        if options.renormalize_trace {
            let inv = A::one() / tr;
            rho.mapv_inplace(|x| x * inv);
        }
        observer(A::real_from_f64(t1), &rho.view());
    }
    Ok(DensityMatrix::from_raw_unchecked(rho)?)
}

/// One step of the three-outcome instrument: no click / undetected jump /
/// detected-and-discarded jump. Discarded outcomes are dropped, the kept
/// state renormalized, and `p_keep = 1 - Σ_k γ α_k η_k δt ⟨L†L⟩ + O(δt²)`
/// returned alongside.
///
/// The no-click Kraus operator is the exactly exponentiated non-Hermitian
/// propagator `exp(-(iH + ½γΣα L†L) δt)` and jumps are inserted at the step
/// midpoint, so a single step tracks the master equation to `O(δt³)`. With
/// `η = 0` nothing is discarded and `p_keep` is exactly one.
pub fn kraus_instrument_step<A: ComplexScalar>(
    model: &LindbladModel<A>,
    rho: &DensityMatrix<A>,
    dt: A::Real,
) -> OracleResult<(DensityMatrix<A>, A::Real)> {
    let model = model.resolve_protocol();
    if rho.sites() != model.sites() {
        return Err(OracleError::SiteMismatch { state: rho.sites(), model: model.sites() });
    }
    let ws = nonlinear_workspace(&model)?;
    let n = model.sites();
    let dim = 1usize << n;
    let dt_f = A::real_to_f64(dt);
    let gamma = model.gamma_at(A::Real::zero());
    let g = A::from_real(gamma);

    // G = iH + 1/2 γ Σ α L†L; K0 = exp(-G dt)
    let mut generator = ws.h.mapv(|h| A::i() * h);
    for ch in &ws.channels {
        let w = g * A::from_real(ch.alpha) * A::from_re(0.5);
        generator.zip_mut_with(&ch.k, |o, &k| *o += w * k);
    }
    let k0 = crate::linalg::expm(&generator.mapv(|x| x * A::from_re(-dt_f)).view())
        .map_err(|_| OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT })?;
    let e_half = crate::linalg::expm(&generator.mapv(|x| x * A::from_re(-dt_f / 2.0)).view())
        .map_err(|_| OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT })?;

    let mut kept = k0.dot(rho.data()).dot(&dagger(&k0.view()));
    // Strang sandwich: jumps act on E_half ρ E_half†, expanded to second
    // order so double jumps within one step are accounted for
    let e_half_dag = dagger(&e_half.view());
    let mid = e_half.dot(rho.data()).dot(&e_half_dag);
    let gamma_f = A::real_to_f64(gamma);
    let mut kept_jumps = Array2::<A>::zeros((dim, dim));
    let mut all_jumps = Array2::<A>::zeros((dim, dim));
    let singles: Vec<(Array2<A>, f64, f64)> = ws
        .channels
        .iter()
        .map(|ch| {
            let jump = ch.l.dot(&mid).dot(&ch.l_dag);
            let w = gamma_f * A::real_to_f64(ch.alpha) * dt_f;
            (jump, w, A::real_to_f64(ch.eta))
        })
        .collect();
    for (jump, w, eta) in &singles {
        kept_jumps.zip_mut_with(jump, |o, &x| *o += A::from_re(w * (1.0 - eta)) * x);
        all_jumps.zip_mut_with(jump, |o, &x| *o += A::from_re(*w) * x);
    }
    for (jump, w, eta) in &singles {
        for ch2 in &ws.channels {
            let double = ch2.l.dot(jump).dot(&ch2.l_dag);
            let w2 = gamma_f * A::real_to_f64(ch2.alpha) * dt_f;
            let eta2 = A::real_to_f64(ch2.eta);
            let kept_w = 0.5 * w * w2 * (1.0 - eta) * (1.0 - eta2);
            let all_w = 0.5 * w * w2;
            kept_jumps.zip_mut_with(&double, |o, &x| *o += A::from_re(kept_w) * x);
            all_jumps.zip_mut_with(&double, |o, &x| *o += A::from_re(all_w) * x);
        }
    }
    let sandwich =
        |m: &Array2<A>| -> A::Real { trace(&e_half.dot(m).dot(&e_half_dag).view()).re() };
    let kept_jump_trace = sandwich(&kept_jumps);
    let all_jump_trace = sandwich(&all_jumps);
    let kept_sandwiched = e_half.dot(&kept_jumps).dot(&e_half_dag);
    kept.zip_mut_with(&kept_sandwiched, |o, &x| *o += x);
    let discarded_trace = all_jump_trace - kept_jump_trace;
    let kept_trace = trace(&kept.view()).re();
    let total = kept_trace + discarded_trace;
    if !(A::real_to_f64(kept_trace) > 0.0) || !(A::real_to_f64(total) > 0.0) {
        return Err(OracleError::StepTooLarge { p_keep: A::real_to_f64(kept_trace), dt: dt_f });
    }
    let p_keep = kept_trace / total;
    let inv = A::from_real(A::Real::one() / kept_trace);
    kept.mapv_inplace(|x| x * inv);
    Ok((DensityMatrix::from_raw_unchecked(kept)?, p_keep))
}

/// Spectral gap of the (dense) Liouvillian and the mixing-time estimate
/// `1/Δ`.
#[derive(Debug, Clone)]
pub struct SpectralGap<R> {
    pub delta: R,
    pub mixing_estimate: R,
    /// Number of (numerically) zero eigenvalues.
    pub zero_multiplicity: usize,
    /// False when the steady state is degenerate; the gap is then reported
    /// against the whole zero eigenspace.
    pub unique_steady_state: bool,
}

/// Eigenvalues with `|λ|` below this (relative to the spectral radius) count
/// as steady-state modes.
const GAP_ZERO_TOL: f64 = 1e-9;

pub fn liouvillian_spectral_gap<A: ComplexScalar>(
    model: &LindbladModel<A>,
) -> OracleResult<SpectralGap<A::Real>> {
    let n = model.sites();
    if n > DENSE_SITE_LIMIT {
        return Err(OracleError::TooLarge { n, limit: DENSE_SITE_LIMIT });
    }
    let action = build_liouvillian(model, A::Real::zero())?;
    let dense = action.dense_matrix().expect("dense mode at small n");
    let (evals, _) = dense.eig()?;
    let scale = evals
        .iter()
        .map(|l| A::real_to_f64(l.abs()))
        .fold(0.0, f64::max)
        .max(1.0);
    let tol = GAP_ZERO_TOL * scale;
    let zero_multiplicity = evals
        .iter()
        .filter(|l| A::real_to_f64(l.abs()) <= tol)
        .count();
    let max_re_nonzero = evals
        .iter()
        .filter(|l| A::real_to_f64(l.abs()) > tol)
        .map(|l| A::real_to_f64(l.re()))
        .fold(f64::NEG_INFINITY, f64::max);
    let delta = if max_re_nonzero.is_finite() { (-max_re_nonzero).max(0.0) } else { 0.0 };
    let mixing_estimate = if delta > tol { 1.0 / delta } else { f64::INFINITY };
    Ok(SpectralGap {
        delta: A::real_from_f64(delta),
        mixing_estimate: A::real_from_f64(mixing_estimate),
        zero_multiplicity,
        unique_steady_state: zero_multiplicity <= 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::VectorizedDensity;
    use crate::linalg::{expm, frobenius_norm};
    use crate::model::{boundary_driven_ising, JumpChannel, LindbladModel, Schedule};
    use crate::pauli::{PauliAxis, PauliString};
    use crate::C64;
    use approx::assert_abs_diff_eq;
    use ndarray_linalg::Eigh;

    fn single_site_damping(gamma: f64, eta: f64) -> LindbladModel<C64> {
        let h = crate::operator::SpinChainHamiltonian::from_terms(1, vec![]).unwrap();
        let channels =
            vec![JumpChannel::new(crate::model::LocalOperator::lower(0), 1.0, eta).unwrap()];
        LindbladModel::new(h, channels, gamma, Schedule::Constant).unwrap()
    }

    fn excited_qubit() -> DensityMatrix<C64> {
        let mut rho = Array2::<C64>::zeros((2, 2));
        rho[[1, 1]] = C64::new(1.0, 0.0);
        DensityMatrix::new(rho).unwrap()
    }

    #[test]
    fn amplitude_damping_spectrum() {
        let model = single_site_damping(1.0, 0.0);
        let action = build_liouvillian(&model, 0.0).unwrap();
        let dense = action.dense_matrix().unwrap();
        let (evals, _) = dense.eig().unwrap();
        let mut re: Vec<f64> = evals.iter().map(|l| l.re).collect();
        re.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [-1.0, -0.5, -0.5, 0.0];
        for (v, e) in re.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(v, e, epsilon = 1e-12);
        }
        let gap = liouvillian_spectral_gap(&model).unwrap();
        assert_abs_diff_eq!(gap.delta, 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(gap.mixing_estimate, 2.0, epsilon = 1e-9);
        assert!(gap.unique_steady_state);
    }

    #[test]
    fn closed_system_liouvillian_is_anti_hermitian() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.0, 0.5).unwrap();
        let action = build_liouvillian(&model, 0.0).unwrap();
        let dense = action.dense_matrix().unwrap();
        let anti = &dense + &dagger(&dense.view());
        assert!(frobenius_norm::<C64>(&anti.view()) < 1e-12);
        let gap = liouvillian_spectral_gap(&model).unwrap();
        assert_eq!(gap.delta, 0.0);
        assert!(gap.mixing_estimate.is_infinite());
    }

    #[test]
    fn nonlinear_model_rejected_by_linear_builder() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5)
            .unwrap()
            .with_uniform_eta(0.5)
            .unwrap();
        assert!(matches!(
            build_liouvillian(&model, 0.0),
            Err(OracleError::NonlinearModel)
        ));
    }

    #[test]
    fn dense_and_matrix_free_agree() {
        let model = boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.3, 0.5).unwrap();
        let action = build_liouvillian(&model, 0.0).unwrap();
        let dense = action.dense_matrix().unwrap();
        let mut seed = 41u64;
        let mut rand = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        for _ in 0..3 {
            let v = Array1::from_shape_fn(64, |_| C64::new(rand(), rand()));
            let via_dense = dense.dot(&v);
            let via_free = action.apply_matrix_free(0.3, &v.view());
            let diff: f64 = via_dense
                .iter()
                .zip(via_free.iter())
                .map(|(a, b)| (a - b).norm())
                .sum();
            assert!(diff < 1e-10, "dense vs matrix-free deviation {diff}");
        }
    }

    #[test]
    fn closed_system_matches_unitary_evolution() {
        let model = boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.0, 0.5).unwrap();
        let rho0 = DensityMatrix::<C64>::ground(3);
        let t_final = 5.0;
        let run = integrate_master_equation(
            &model,
            &rho0,
            t_final,
            5e-4,
            &MasterEquationOptions::default(),
            &[t_final],
        )
        .unwrap();
        let h = model.hamiltonian.densify().unwrap();
        let u = expm(&h.mapv(|x| x * C64::new(0.0, -t_final)).view()).unwrap();
        let expected = u.dot(rho0.data()).dot(&dagger(&u.view()));
        let diff = frobenius_norm::<C64>(&(&expected - run.states[0].data()).view());
        assert!(diff < 1e-8, "unitary limit deviates by {diff}");
    }

    #[test]
    fn single_qubit_decay_matches_closed_form() {
        // H = 0, L = σ⁻, γ = 1, ρ0 = |1⟩⟨1|: decay toward |0⟩ (Z = +1),
        // so ⟨Z⟩(t) = 1 - 2e^{-γt}
        let model = single_site_damping(1.0, 0.0);
        let run = integrate_master_equation(
            &model,
            &excited_qubit(),
            2.0,
            1e-3,
            &MasterEquationOptions::default(),
            &[0.5, 1.0, 2.0],
        )
        .unwrap();
        for (t, rho) in run.times.iter().zip(run.states.iter()) {
            let z = rho.expect_pauli(&PauliString::single(0, PauliAxis::Z)).re;
            let expected = 1.0 - 2.0 * (-t).exp();
            assert_abs_diff_eq!(z, expected, epsilon = 1e-8);
        }
    }

    #[test]
    fn trace_and_hermiticity_preserved_for_eta_half() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5)
            .unwrap()
            .with_uniform_eta(0.5)
            .unwrap();
        let rho0 = DensityMatrix::<C64>::ground(2);
        let mut worst_trace: f64 = 0.0;
        let mut worst_herm: f64 = 0.0;
        let rho_final = integrate_master_equation_observed(
            &model,
            &rho0,
            2.0,
            1e-3,
            &MasterEquationOptions::default(),
            |_, rho| {
                let tr = trace(&rho.view());
                worst_trace = worst_trace.max((tr - C64::new(1.0, 0.0)).norm());
                let herm = frobenius_norm::<C64>(&(rho - &dagger(rho)).view());
                worst_herm = worst_herm.max(herm);
            },
        )
        .unwrap();
        assert!(worst_trace < 1e-8, "trace drift {worst_trace}");
        assert!(worst_herm < 1e-9, "hermiticity loss {worst_herm}");
        let (evals, _) = rho_final.data().eigh(ndarray_linalg::UPLO::Lower).unwrap();
        assert!(evals.iter().all(|&e| e > -1e-7));
    }

    #[test]
    fn eta_one_preserves_purity_from_pure_state() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5)
            .unwrap()
            .with_uniform_eta(1.0)
            .unwrap();
        let rho0 = DensityMatrix::<C64>::ground(2);
        let run = integrate_master_equation(
            &model,
            &rho0,
            2.0,
            1e-3,
            &MasterEquationOptions::default(),
            &[2.0],
        )
        .unwrap();
        let rho = run.states[0].data();
        let purity = trace(&rho.dot(rho).view()).re;
        assert_abs_diff_eq!(purity, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn kraus_step_keep_probability() {
        // N=1, L = σ⁻, η = 1, γ = 1, ρ = |1⟩⟨1|: p_keep = 1 - dt·α + O(dt²)
        let model = single_site_damping(1.0, 1.0);
        let dt = 1e-3;
        let (_, p_keep) = kraus_instrument_step(&model, &excited_qubit(), dt).unwrap();
        assert_abs_diff_eq!(p_keep, 1.0 - dt, epsilon = 1e-5);
    }

    #[test]
    fn kraus_step_with_eta_zero_keeps_everything() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5).unwrap();
        let rho = DensityMatrix::<C64>::ground(2);
        let (_, p_keep) = kraus_instrument_step(&model, &rho, 1e-3).unwrap();
        // O(dt²) deviation only, from the quadratic K0 terms
        assert_abs_diff_eq!(p_keep, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn kraus_reduced_map_is_cptp_to_first_order() {
        // Choi matrix of the full (undiscarded) instrument map at η=0:
        // min eigenvalue ≥ -O(dt²)
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5).unwrap();
        let dt = 1e-3;
        let dim = 4usize;
        let ws = nonlinear_workspace(&model).unwrap();
        let g = C64::new(model.gamma, 0.0);
        let mut k0 = crate::linalg::identity::<C64>(dim);
        let i_dt = C64::new(0.0, dt);
        k0.zip_mut_with(&ws.h, |o, &h| *o -= i_dt * h);
        for ch in &ws.channels {
            let w = g * C64::new(0.5 * dt * ch.alpha, 0.0);
            k0.zip_mut_with(&ch.k, |o, &k| *o -= w * k);
        }
        let mut choi = Array2::<C64>::zeros((dim * dim, dim * dim));
        for i in 0..dim {
            for j in 0..dim {
                let mut e = Array2::<C64>::zeros((dim, dim));
                e[[i, j]] = C64::new(1.0, 0.0);
                let mut mapped = k0.dot(&e).dot(&dagger(&k0.view()));
                for ch in &ws.channels {
                    let w = g * C64::new(dt * ch.alpha, 0.0);
                    let jump = ch.l.dot(&e).dot(&ch.l_dag);
                    mapped.zip_mut_with(&jump, |o, &x| *o += w * x);
                }
                for a in 0..dim {
                    for b in 0..dim {
                        choi[[i * dim + a, j * dim + b]] = mapped[[a, b]];
                    }
                }
            }
        }
        let (evals, _) = choi.eigh(ndarray_linalg::UPLO::Lower).unwrap();
        let min = evals.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -10.0 * dt * dt, "Choi min eigenvalue {min}");
    }

    #[test]
    fn instrument_steps_agree_with_rk4() {
        // 500 Kraus steps at dt=1e-3 vs RK4 at T=0.5, Frobenius 1e-4, η=0.5
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5)
            .unwrap()
            .with_uniform_eta(0.5)
            .unwrap();
        let dt = 1e-3;
        let mut rho = DensityMatrix::<C64>::ground(2);
        for _ in 0..500 {
            let (next, _) = kraus_instrument_step(&model, &rho, dt).unwrap();
            rho = next;
        }
        let rk4 = integrate_master_equation(
            &model,
            &DensityMatrix::<C64>::ground(2),
            0.5,
            dt,
            &MasterEquationOptions::default(),
            &[0.5],
        )
        .unwrap();
        let diff = rho.frobenius_distance(&rk4.states[0]);
        assert!(diff < 1e-4, "instrument vs RK4 deviation {diff}");
    }

    #[test]
    fn boundary_driven_steady_state_from_null_vector() {
        let model = boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.1, 0.5).unwrap();
        let action = build_liouvillian(&model, 0.0).unwrap();
        let dense = action.dense_matrix().unwrap();
        let (evals, vecs) = dense.eig().unwrap();
        let (idx, _) = evals
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| a.norm().partial_cmp(&b.norm()).unwrap())
            .unwrap();
        assert!(evals[idx].norm() < 1e-10);
        let v = vecs.column(idx).to_owned();
        let steady = VectorizedDensity::new(v).unwrap();
        let tr = steady.trace();
        let rho_ss = steady.as_matrix().mapv(|x| x / tr);
        let rho_ss = DensityMatrix::from_raw_unchecked(rho_ss).unwrap();
        let z0 = rho_ss.expect_pauli(&PauliString::single(0, PauliAxis::Z)).re;
        assert!(z0.abs() > 1e-3, "boundary magnetization {z0}");
        // long-time RK4 approaches the same state
        let run = integrate_master_equation(
            &model,
            &DensityMatrix::<C64>::ground(3),
            100.0,
            1e-3,
            &MasterEquationOptions::default(),
            &[100.0],
        )
        .unwrap();
        let diff = run.states[0].frobenius_distance(&rho_ss);
        assert!(diff < 1e-3, "RK4 vs null vector deviation {diff}");
    }

    #[test]
    fn gap_increases_with_dissipation_on_small_chain() {
        let g1 = liouvillian_spectral_gap(
            &boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.1, 0.5).unwrap(),
        )
        .unwrap();
        let g2 = liouvillian_spectral_gap(
            &boundary_driven_ising::<C64>(3, 1.0, -2.0, -2.0, 0.3, 0.5).unwrap(),
        )
        .unwrap();
        assert!(g2.delta > g1.delta, "gap not increasing: {} vs {}", g1.delta, g2.delta);
    }

    #[test]
    fn literal_drift_form_differs_for_non_normal_jumps() {
        // for σ± channels ⟨LL†⟩ ≠ ⟨L†L⟩, so the alternate form loses trace
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.5, 0.5)
            .unwrap()
            .with_uniform_eta(0.5)
            .unwrap();
        let rho0 = DensityMatrix::<C64>::ground(2);
        let literal = MasterEquationOptions {
            drift_form: DriftForm::LLdag,
            trace_tol: 1e9,
            ..Default::default()
        };
        let run = integrate_master_equation(&model, &rho0, 1.0, 1e-3, &literal, &[1.0]).unwrap();
        let tr = run.states[0].trace().re;
        assert!(
            (tr - 1.0).abs() > 1e-3,
            "alternate drift unexpectedly preserved trace: {tr}"
        );
    }

    #[test]
    fn superoperator_matches_direct_rhs() {
        let model = boundary_driven_ising::<C64>(2, 1.0, -2.0, -2.0, 0.7, 0.5).unwrap();
        let rho0 = DensityMatrix::<C64>::ground(2);
        let v0 = crate::density::vectorize(&rho0);
        let action = build_liouvillian(&model, 0.0).unwrap();
        let lv = action.apply(&v0.data().view());
        let ws = nonlinear_workspace(&model).unwrap();
        let direct = nonlinear_rhs(&ws, 0.7, DriftForm::LdagL, rho0.data());
        let diff: f64 = lv
            .iter()
            .zip(direct.iter())
            .map(|(a, b)| (a - b).norm())
            .sum();
        assert!(diff < 1e-12, "superoperator vs direct rhs deviation {diff}");
    }

    #[test]
    fn trace_drift_error_carries_suggestion() {
        // the alternate drift form does not preserve trace for σ± channels,
        // so the default tolerance trips and suggests halving dt
        let model = single_site_damping(1.0, 0.5);
        let opts = MasterEquationOptions { drift_form: DriftForm::LLdag, ..Default::default() };
        let err = integrate_master_equation(&model, &excited_qubit(), 1.0, 0.1, &opts, &[1.0]);
        match err {
            Err(OracleError::TraceDrift { suggested_dt, .. }) => {
                assert_abs_diff_eq!(suggested_dt, 0.05, epsilon = 1e-12);
            }
            other => panic!("expected trace drift, got {other:?}"),
        }
    }
}
