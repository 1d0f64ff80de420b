//! Stochastic quantum-jump unraveling on pure states.
//!
//! Between jumps the state follows the norm-preserving nonlinear form of the
//! no-jump generator,
//! `d|ψ⟩/dt = -iH|ψ⟩ - (γ/2) Σ_k α_k (L_k†L_k - ⟨L_k†L_k⟩)|ψ⟩`,
//! integrated with RK4 and renormalized every step. Jump times are drawn by
//! co-integrating the survival function `Q = exp(-∫ P_jp)` with
//! `P_jp = γ Σ_k (1-η_k) α_k ⟨L_k†L_k⟩` until it crosses a uniform draw; the
//! crossing is located by bisection. A detected-and-discarded fraction `η_k`
//! suppresses the jump rate; the matching post-selection weight
//! `w(t) = exp(-γ Σ_k η_k α_k ∫ ⟨L_k†L_k⟩ ds)` accumulates along the no-jump
//! segments so that weighted ensemble averages stay unbiased for the
//! renormalized (nonlinear) master equation. With `η = 0` every weight is 1
//! and the scheme is the standard unraveling.
//!
//! Trajectories are independent work items; [`run_ensemble`] fans them out
//! over a seed-stream RNG so results are bit-identical for a fixed seed at
//! any worker count.

use ndarray::{Array1, Array2, ArrayView1};
use num_traits::{Float, One, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use std::hash::{Hash, Hasher};
use thiserror::Error;

use crate::decompose::JumpDecomposition;
use crate::linalg::vector_norm;
use crate::model::{LindbladModel, LocalOperator};
use crate::pauli::PauliString;
use crate::scalar::ComplexScalar;

/// Dense operator caches are built up to this many sites.
pub const TRAJECTORY_SITE_LIMIT: usize = 10;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("{n} sites exceed the {limit}-site trajectory engine limit")]
    TooLarge { n: usize, limit: usize },

    #[error("state has {state} sites but the model has {model}")]
    SiteMismatch { state: usize, model: usize },

    #[error("step too large: total jump probability {p_total:.3e} ≥ 1 at dt = {dt:.3e}")]
    StepTooLarge { p_total: f64, dt: f64 },

    #[error("dark state: norm collapsed below 1e-12 during no-jump evolution")]
    DarkState,

    #[error("impossible jump: channel {channel} annihilates the state")]
    ImpossibleJump { channel: usize },

    #[error("state vector must have length 2^n, got {0}")]
    BadLength(usize),

    #[error("need at least one trajectory")]
    NoTrajectories,
}

pub type TrajectoryResult<T> = Result<T, TrajectoryError>;

/// A normalized pure state on `n` sites.
#[derive(Debug, Clone)]
pub struct StateVector<A: ComplexScalar> {
    n: usize,
    amplitudes: Array1<A>,
}

impl<A: ComplexScalar> StateVector<A> {
    /// Wraps and normalizes.
    pub fn new(amplitudes: Array1<A>) -> TrajectoryResult<Self> {
        let len = amplitudes.len();
        if !len.is_power_of_two() {
            return Err(TrajectoryError::BadLength(len));
        }
        let n = len.trailing_zeros() as usize;
        let mut out = Self { n, amplitudes };
        out.renormalize()?;
        Ok(out)
    }

    /// `|00…0⟩`.
    pub fn ground(n: usize) -> Self {
        let mut amplitudes = Array1::zeros(1usize << n);
        amplitudes[0] = A::one();
        Self { n, amplitudes }
    }

    /// Computational basis state `|bits⟩` (site 0 is the most significant
    /// bit).
    pub fn basis(n: usize, index: usize) -> Self {
        let mut amplitudes = Array1::zeros(1usize << n);
        amplitudes[index] = A::one();
        Self { n, amplitudes }
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn amplitudes(&self) -> &Array1<A> {
        &self.amplitudes
    }

    pub fn norm(&self) -> A::Real {
        vector_norm::<A>(&self.amplitudes.view())
    }

    fn renormalize(&mut self) -> TrajectoryResult<()> {
        let norm = self.norm();
        if A::real_to_f64(norm) < 1e-12 {
            return Err(TrajectoryError::DarkState);
        }
        let inv = A::from_real(A::Real::one() / norm);
        self.amplitudes.mapv_inplace(|x| x * inv);
        Ok(())
    }

    /// `⟨ψ|P|ψ⟩` for a Pauli string.
    pub fn expect_pauli(&self, op: &PauliString<A>) -> A {
        let mut applied = Array1::zeros(self.amplitudes.len());
        op.accumulate_apply(&self.amplitudes.view(), self.n, &mut applied);
        inner(&self.amplitudes.view(), &applied.view())
    }

    /// Hash of the amplitude bit patterns, for reproducibility checks.
    pub fn content_hash(&self) -> u64 {
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        for a in self.amplitudes.iter() {
            A::real_to_f64(a.re()).to_bits().hash(&mut hasher);
            A::real_to_f64(a.im()).to_bits().hash(&mut hasher);
        }
        hasher.finish()
    }
}

fn inner<A: ComplexScalar>(a: &ArrayView1<A>, b: &ArrayView1<A>) -> A {
    a.iter()
        .zip(b.iter())
        .fold(A::zero(), |acc, (&x, &y)| acc + x.conj() * y)
}

/// Per-channel jump probabilities over one short step.
#[derive(Debug, Clone)]
pub struct JumpProbabilities<R> {
    /// `δp_k = δt α_k ⟨L_k†L_k⟩`.
    pub per_channel: Vec<R>,
    /// `P_jp δt = γ Σ_k (1-η_k) δp_k`.
    pub total: R,
}

struct EngineChannel<A: ComplexScalar> {
    op: LocalOperator<A>,
    /// `L†L` on the channel support.
    k_local: Array2<A>,
    sites: Vec<usize>,
    alpha: A::Real,
    eta: A::Real,
}

/// Cached dense/local operators for one model; shared read-only across
/// trajectories.
pub struct QuantumJumpEngine<A: ComplexScalar> {
    model: LindbladModel<A>,
    n: usize,
    dim: usize,
    /// Dense Hamiltonian up to 6 sites, term-wise application above.
    h_dense: Option<Array2<A>>,
    channels: Vec<EngineChannel<A>>,
}

impl<A: ComplexScalar> QuantumJumpEngine<A> {
    pub fn new(model: &LindbladModel<A>) -> TrajectoryResult<Self> {
        let model = model.resolve_protocol();
        let n = model.sites();
        if n > TRAJECTORY_SITE_LIMIT {
            return Err(TrajectoryError::TooLarge { n, limit: TRAJECTORY_SITE_LIMIT });
        }
        let h_dense = if n <= 6 { model.hamiltonian.densify().ok() } else { None };
        let channels = model
            .channels
            .iter()
            .map(|ch| EngineChannel {
                op: ch.operator.clone(),
                k_local: ch.operator.dagger_product_on_support(),
                sites: ch.operator.support(),
                alpha: ch.alpha,
                eta: ch.eta,
            })
            .collect();
        Ok(Self { model: model.clone(), n, dim: 1usize << n, h_dense, channels })
    }

    pub fn sites(&self) -> usize {
        self.n
    }

    pub fn model(&self) -> &LindbladModel<A> {
        &self.model
    }

    /// `⟨ψ|L_k†L_k|ψ⟩` per channel.
    fn channel_expectations(&self, psi: &ArrayView1<A>) -> Vec<A::Real> {
        self.channels
            .iter()
            .map(|ch| {
                let mut applied = Array1::zeros(self.dim);
                crate::model::accumulate_apply_dense_local(
                    &ch.k_local.view(),
                    &ch.sites,
                    self.n,
                    psi,
                    &mut applied,
                );
                inner(psi, &applied.view()).re()
            })
            .collect()
    }

    /// `-iH|ψ⟩ - (γ/2) Σ α_k (K_k - ⟨K_k⟩)|ψ⟩` into `out`.
    fn no_jump_rhs(&self, t: A::Real, psi: &ArrayView1<A>, out: &mut Array1<A>) {
        out.fill(A::zero());
        if let Some(h) = &self.h_dense {
            let hpsi = h.dot(psi);
            out.zip_mut_with(&hpsi, |o, &x| *o += x);
        } else {
            for term in self.model.hamiltonian.terms() {
                if term.coefficient() != A::zero() {
                    term.accumulate_apply(psi, self.n, out);
                }
            }
        }
        let minus_i = A::zero() - A::i();
        out.mapv_inplace(|x| x * minus_i);

        let gamma = self.model.gamma_at(t);
        if gamma == A::Real::zero() || self.channels.is_empty() {
            return;
        }
        let half_gamma = A::from_real(gamma) * A::from_re(0.5);
        let norm_sq = psi.iter().map(|x| x.abs_sq()).fold(A::Real::zero(), |a, b| a + b);
        for ch in &self.channels {
            let mut k_psi = Array1::zeros(self.dim);
            crate::model::accumulate_apply_dense_local(
                &ch.k_local.view(),
                &ch.sites,
                self.n,
                psi,
                &mut k_psi,
            );
            // ⟨K⟩ on the (possibly mid-stage, unnormalized) state
            let expectation = inner(psi, &k_psi.view()).re() / norm_sq;
            let alpha = A::from_real(ch.alpha);
            let shift = A::from_real(expectation);
            ndarray::Zip::from(out.view_mut())
                .and(&k_psi)
                .and(psi)
                .for_each(|o, &kp, &p| *o -= half_gamma * alpha * (kp - shift * p));
        }
    }

    /// One RK4 step of the no-jump evolution, renormalized.
    fn no_jump_step(
        &self,
        psi: &StateVector<A>,
        t: A::Real,
        dt: A::Real,
        buf: &mut StepBuffers<A>,
    ) -> TrajectoryResult<StateVector<A>> {
        let dt_f = A::real_to_f64(dt);
        let half = A::from_re(dt_f / 2.0);
        let full = A::from_re(dt_f);
        let sixth = A::from_re(dt_f / 6.0);
        let two = A::from_re(2.0);
        let t_half = A::real_from_f64(A::real_to_f64(t) + dt_f / 2.0);
        let t_full = A::real_from_f64(A::real_to_f64(t) + dt_f);

        let v = &psi.amplitudes;
        self.no_jump_rhs(t, &v.view(), &mut buf.k1);
        buf.stage.assign(v);
        ndarray::Zip::from(&mut buf.stage).and(&buf.k1).for_each(|s, &k| *s += half * k);
        self.no_jump_rhs(t_half, &buf.stage.view(), &mut buf.k2);
        buf.stage.assign(v);
        ndarray::Zip::from(&mut buf.stage).and(&buf.k2).for_each(|s, &k| *s += half * k);
        self.no_jump_rhs(t_half, &buf.stage.view(), &mut buf.k3);
        buf.stage.assign(v);
        ndarray::Zip::from(&mut buf.stage).and(&buf.k3).for_each(|s, &k| *s += full * k);
        self.no_jump_rhs(t_full, &buf.stage.view(), &mut buf.k4);

        let mut next = v.clone();
        ndarray::Zip::from(&mut next)
            .and(&buf.k1)
            .and(&buf.k2)
            .and(&buf.k3)
            .and(&buf.k4)
            .for_each(|o, &a, &b, &c, &d| *o += sixth * (a + two * b + two * c + d));
        StateVector::new(next)
    }
}

struct StepBuffers<A: ComplexScalar> {
    k1: Array1<A>,
    k2: Array1<A>,
    k3: Array1<A>,
    k4: Array1<A>,
    stage: Array1<A>,
}

impl<A: ComplexScalar> StepBuffers<A> {
    fn new(dim: usize) -> Self {
        Self {
            k1: Array1::zeros(dim),
            k2: Array1::zeros(dim),
            k3: Array1::zeros(dim),
            k4: Array1::zeros(dim),
            stage: Array1::zeros(dim),
        }
    }
}

/// Per-channel `δp_k` and the kept-jump total `P_jp δt` for one step.
pub fn jump_probabilities<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi: &StateVector<A>,
    t: A::Real,
    dt: A::Real,
) -> TrajectoryResult<JumpProbabilities<A::Real>> {
    if psi.sites() != engine.n {
        return Err(TrajectoryError::SiteMismatch { state: psi.sites(), model: engine.n });
    }
    let expectations = engine.channel_expectations(&psi.amplitudes.view());
    let gamma = engine.model.gamma_at(t);
    let per_channel: Vec<A::Real> = engine
        .channels
        .iter()
        .zip(&expectations)
        .map(|(ch, &e)| dt * ch.alpha * e)
        .collect();
    let total = engine
        .channels
        .iter()
        .zip(&per_channel)
        .fold(A::Real::zero(), |acc, (ch, &dp)| {
            acc + gamma * (A::Real::one() - ch.eta) * dp
        });
    if A::real_to_f64(total) >= 1.0 {
        return Err(TrajectoryError::StepTooLarge {
            p_total: A::real_to_f64(total),
            dt: A::real_to_f64(dt),
        });
    }
    Ok(JumpProbabilities { per_channel, total })
}

/// Deterministic no-jump evolution from `t0` to `t1`.
pub fn evolve_no_jump<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi: &StateVector<A>,
    t0: A::Real,
    t1: A::Real,
    dt: A::Real,
) -> TrajectoryResult<StateVector<A>> {
    if psi.sites() != engine.n {
        return Err(TrajectoryError::SiteMismatch { state: psi.sites(), model: engine.n });
    }
    let mut buf = StepBuffers::new(engine.dim);
    let mut state = psi.clone();
    let mut t = A::real_to_f64(t0);
    let t_end = A::real_to_f64(t1);
    let dt_f = A::real_to_f64(dt);
    while t < t_end - 1e-15 {
        let step = dt_f.min(t_end - t);
        state = engine.no_jump_step(&state, A::real_from_f64(t), A::real_from_f64(step), &mut buf)?;
        t += step;
    }
    Ok(state)
}

/// State after a jump through channel `k`: `L_k|ψ⟩` renormalized.
pub fn apply_jump<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi: &StateVector<A>,
    channel: usize,
) -> TrajectoryResult<StateVector<A>> {
    let ch = &engine.channels[channel];
    let jumped = ch.op.apply(&psi.amplitudes.view(), engine.n);
    let norm = vector_norm::<A>(&jumped.view());
    if A::real_to_f64(norm) < 1e-12 {
        return Err(TrajectoryError::ImpossibleJump { channel });
    }
    StateVector::new(jumped)
}

/// Same jump routed through the SVD decomposition path
/// `U · exp(-H_D T_D) · V`, used to cross-check [`apply_jump`].
pub fn apply_jump_via_decomposition<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi: &StateVector<A>,
    channel: usize,
    decomposition: &JumpDecomposition<A>,
) -> TrajectoryResult<StateVector<A>> {
    let ch = &engine.channels[channel];
    let effective = decomposition.reconstruct();
    let op = LocalOperator::dense(ch.sites.clone(), effective)
        .expect("decomposition matches channel support");
    let jumped = op.apply(&psi.amplitudes.view(), engine.n);
    let norm = vector_norm::<A>(&jumped.view());
    if A::real_to_f64(norm) < 1e-12 {
        return Err(TrajectoryError::ImpossibleJump { channel });
    }
    StateVector::new(jumped)
}

/// Outcome of [`sample_jump_time`].
pub enum JumpOutcome<A: ComplexScalar> {
    /// A kept jump fires at `tau` through `channel`; `state` is `ψ(τ⁻)`.
    Jump { tau: A::Real, channel: usize, state: StateVector<A> },
    /// Survival persisted to the horizon.
    Survived { state: StateVector<A> },
}

/// Draw the next jump time on `[t0, horizon]` by co-integrating the no-jump
/// evolution and the survival integral until `Q = u`, locating the crossing
/// by bisection to `dt/100`.
pub fn sample_jump_time<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi: &StateVector<A>,
    t0: A::Real,
    horizon: A::Real,
    dt: A::Real,
    rng: &mut impl Rng,
) -> TrajectoryResult<JumpOutcome<A>> {
    let mut walker = TrajectoryWalker::new(engine, psi.clone(), t0, dt, rng)?;
    match walker.advance_to(horizon, rng)? {
        Some((tau, channel, state)) => Ok(JumpOutcome::Jump { tau, channel, state }),
        None => Ok(JumpOutcome::Survived { state: walker.state }),
    }
}

/// Incremental trajectory walker: owns the state, survival integral and
/// post-selection weight between jumps.
struct TrajectoryWalker<'e, A: ComplexScalar> {
    engine: &'e QuantumJumpEngine<A>,
    state: StateVector<A>,
    t: f64,
    dt: f64,
    buf: StepBuffers<A>,
    /// `-ln u` for the current no-jump segment.
    target: f64,
    /// Accumulated `∫ P_jp`.
    survival: f64,
    /// Accumulated `γ Σ η α ⟨K⟩` integral (log-weight).
    log_weight: f64,
    /// Kept-jump intensity at the current state.
    intensity: f64,
    /// Weight-decay integrand at the current state.
    weight_rate: f64,
}

impl<'e, A: ComplexScalar> TrajectoryWalker<'e, A> {
    fn new(
        engine: &'e QuantumJumpEngine<A>,
        state: StateVector<A>,
        t0: A::Real,
        dt: A::Real,
        rng: &mut impl Rng,
    ) -> TrajectoryResult<Self> {
        if state.sites() != engine.n {
            return Err(TrajectoryError::SiteMismatch { state: state.sites(), model: engine.n });
        }
        let t = A::real_to_f64(t0);
        let (intensity, weight_rate) = rates(engine, &state, t);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..=1.0);
        Ok(Self {
            engine,
            state,
            t,
            dt: A::real_to_f64(dt),
            buf: StepBuffers::new(engine.dim),
            target: -u.ln(),
            survival: 0.0,
            log_weight: 0.0,
            intensity,
            weight_rate,
        })
    }

    /// Advance until the next kept jump or `horizon`, whichever comes first.
    /// Returns the jump `(τ, channel, ψ(τ⁻))` if one fired. The walker's own
    /// state is the post-jump state in that case.
    fn advance_to(
        &mut self,
        horizon: A::Real,
        rng: &mut impl Rng,
    ) -> TrajectoryResult<Option<(A::Real, usize, StateVector<A>)>> {
        let t_end = A::real_to_f64(horizon);
        while self.t < t_end - 1e-15 {
            let step = self.dt.min(t_end - self.t);
            let prev_state = self.state.clone();
            let prev_intensity = self.intensity;
            let prev_weight_rate = self.weight_rate;

            let next = self.engine.no_jump_step(
                &self.state,
                A::real_from_f64(self.t),
                A::real_from_f64(step),
                &mut self.buf,
            )?;
            let (next_intensity, next_weight_rate) = rates(self.engine, &next, self.t + step);
            let seg = 0.5 * (prev_intensity + next_intensity) * step;

            if self.survival + seg < self.target {
                self.survival += seg;
                self.log_weight += 0.5 * (prev_weight_rate + next_weight_rate) * step;
                self.state = next;
                self.intensity = next_intensity;
                self.weight_rate = next_weight_rate;
                self.t += step;
                continue;
            }

            // crossing inside this step: bisect to dt/100
            let need = self.target - self.survival;
            let mut lo = 0.0f64;
            let mut hi = step;
            let tol = self.dt / 100.0;
            let mut state_at = next;
            let mut intensity_at = next_intensity;
            let mut weight_rate_at = next_weight_rate;
            while hi - lo > tol {
                let midpoint = 0.5 * (lo + hi);
                let candidate = self.engine.no_jump_step(
                    &prev_state,
                    A::real_from_f64(self.t),
                    A::real_from_f64(midpoint),
                    &mut self.buf,
                )?;
                let (ci, cw) = rates(self.engine, &candidate, self.t + midpoint);
                let acc = 0.5 * (prev_intensity + ci) * midpoint;
                if acc < need {
                    lo = midpoint;
                } else {
                    hi = midpoint;
                    state_at = candidate;
                    intensity_at = ci;
                    weight_rate_at = cw;
                }
            }
            let tau = self.t + hi;
            self.log_weight += 0.5 * (prev_weight_rate + weight_rate_at) * hi;

            // select the channel with weight (1-η_k) γ α_k ⟨K_k⟩ at ψ(τ⁻)
            let expectations = self.engine.channel_expectations(&state_at.amplitudes.view());
            let gamma = A::real_to_f64(self.engine.model.gamma_at(A::real_from_f64(tau)));
            let weights: Vec<f64> = self
                .engine
                .channels
                .iter()
                .zip(&expectations)
                .map(|(ch, &e)| {
                    gamma
                        * (1.0 - A::real_to_f64(ch.eta))
                        * A::real_to_f64(ch.alpha)
                        * A::real_to_f64(e)
                })
                .collect();
            let total: f64 = weights.iter().sum();
            let mut draw = rng.gen::<f64>() * total;
            let mut channel = weights.len() - 1;
            for (k, w) in weights.iter().enumerate() {
                if draw < *w {
                    channel = k;
                    break;
                }
                draw -= w;
            }

            let pre_jump = state_at.clone();
            self.state = apply_jump(self.engine, &state_at, channel)?;
            self.t = tau;
            let (i2, w2) = rates(self.engine, &self.state, self.t);
            self.intensity = i2;
            self.weight_rate = w2;
            self.survival = 0.0;
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..=1.0);
            self.target = -u.ln();
            let _ = intensity_at;
            return Ok(Some((A::real_from_f64(tau), channel, pre_jump)));
        }
        Ok(None)
    }

    fn weight(&self) -> f64 {
        (-self.log_weight).exp()
    }
}

/// Kept-jump intensity `P_jp` and weight-decay rate at `(t, ψ)`.
fn rates<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    state: &StateVector<A>,
    t: f64,
) -> (f64, f64) {
    let expectations = engine.channel_expectations(&state.amplitudes.view());
    let gamma = A::real_to_f64(engine.model.gamma_at(A::real_from_f64(t)));
    let mut intensity = 0.0;
    let mut weight_rate = 0.0;
    for (ch, e) in engine.channels.iter().zip(&expectations) {
        let alpha = A::real_to_f64(ch.alpha);
        let eta = A::real_to_f64(ch.eta);
        let rate = gamma * alpha * A::real_to_f64(*e);
        intensity += (1.0 - eta) * rate;
        weight_rate += eta * rate;
    }
    (intensity, weight_rate)
}

/// Event log and sampled observables of one trajectory.
#[derive(Debug, Clone)]
pub struct TrajectoryRecord {
    /// RNG stream index this trajectory was drawn from.
    pub stream: u64,
    /// `(time, channel)` of every kept jump, strictly increasing in time.
    pub jumps: Vec<(f64, usize)>,
    /// `samples[obs][time_index]`.
    pub samples: Vec<Vec<f64>>,
    /// Post-selection weight at each sample time (all 1 for `η = 0`).
    pub weights: Vec<f64>,
    /// Hash of the final state amplitudes.
    pub final_state_hash: u64,
}

/// Run a single trajectory, sampling `observables` at `sample_times`.
pub fn run_trajectory<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi0: &StateVector<A>,
    sample_times: &[A::Real],
    dt: A::Real,
    observables: &[PauliString<A>],
    stream: u64,
    seed: u64,
) -> TrajectoryResult<TrajectoryRecord> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    let mut walker = TrajectoryWalker::new(engine, psi0.clone(), A::Real::zero(), dt, &mut rng)?;
    let mut jumps = Vec::new();
    let mut samples = vec![Vec::with_capacity(sample_times.len()); observables.len()];
    let mut weights = Vec::with_capacity(sample_times.len());

    for &t_sample in sample_times {
        loop {
            match walker.advance_to(t_sample, &mut rng)? {
                Some((tau, channel, _)) => jumps.push((A::real_to_f64(tau), channel)),
                None => break,
            }
        }
        for (obs, series) in observables.iter().zip(samples.iter_mut()) {
            series.push(A::real_to_f64(walker.state.expect_pauli(obs).re()));
        }
        weights.push(walker.weight());
    }

    Ok(TrajectoryRecord {
        stream,
        jumps,
        samples,
        weights,
        final_state_hash: walker.state.content_hash(),
    })
}

/// Weighted ensemble average of one observable with its standard error.
#[derive(Debug, Clone)]
pub struct EnsembleEstimate {
    pub label: String,
    pub times: Vec<f64>,
    pub means: Vec<f64>,
    pub standard_errors: Vec<f64>,
    pub trajectories: usize,
}

/// Jump-count bookkeeping across the ensemble.
#[derive(Debug, Clone)]
pub struct JumpStatistics {
    pub mean_jump_count: f64,
    pub max_jump_count: usize,
    /// Coarse linear-in-T scale `γ T Σ_k α_k (1-η_k)`.
    pub rate_scale_hint: f64,
}

#[derive(Debug)]
pub struct EnsembleRun {
    pub estimates: Vec<EnsembleEstimate>,
    pub jump_statistics: JumpStatistics,
}

/// Run `trajectories` independent trajectories in parallel and average.
///
/// Trajectory `r` uses RNG stream `r+1` of `seed`, so the result is
/// bit-identical for a fixed seed regardless of the worker count. Averages
/// are weighted by the post-selection weights; for `η = 0` this reduces to
/// the plain mean with standard error `stdev/√R`.
pub fn run_ensemble<A: ComplexScalar>(
    engine: &QuantumJumpEngine<A>,
    psi0: &StateVector<A>,
    t_final: A::Real,
    dt: A::Real,
    trajectories: usize,
    observables: &[PauliString<A>],
    sample_times: &[A::Real],
    seed: u64,
) -> TrajectoryResult<EnsembleRun> {
    if trajectories == 0 {
        return Err(TrajectoryError::NoTrajectories);
    }
    let _ = t_final;
    let records: Vec<TrajectoryRecord> = (0..trajectories as u64)
        .into_par_iter()
        .map(|r| run_trajectory(engine, psi0, sample_times, dt, observables, r, seed))
        .collect::<TrajectoryResult<Vec<_>>>()?;

    let n_times = sample_times.len();
    let mut estimates = Vec::with_capacity(observables.len());
    for (oi, obs) in observables.iter().enumerate() {
        let mut means = Vec::with_capacity(n_times);
        let mut errs = Vec::with_capacity(n_times);
        for ti in 0..n_times {
            let (mean, err) = weighted_mean_stderr(
                records.iter().map(|r| (r.weights[ti], r.samples[oi][ti])),
                trajectories,
            );
            means.push(mean);
            errs.push(err);
        }
        estimates.push(EnsembleEstimate {
            label: obs.label(),
            times: sample_times.iter().map(|&t| A::real_to_f64(t)).collect(),
            means,
            standard_errors: errs,
            trajectories,
        });
    }

    let total_jumps: usize = records.iter().map(|r| r.jumps.len()).sum();
    let max_jumps = records.iter().map(|r| r.jumps.len()).max().unwrap_or(0);
    let gamma = A::real_to_f64(engine.model.gamma);
    let rate_scale: f64 = engine
        .channels
        .iter()
        .map(|ch| A::real_to_f64(ch.alpha) * (1.0 - A::real_to_f64(ch.eta)))
        .sum::<f64>()
        * gamma
        * A::real_to_f64(t_final);
    Ok(EnsembleRun {
        estimates,
        jump_statistics: JumpStatistics {
            mean_jump_count: total_jumps as f64 / trajectories as f64,
            max_jump_count: max_jumps,
            rate_scale_hint: rate_scale,
        },
    })
}

/// Ratio-estimator mean and linearized standard error; reduces to
/// `stdev/√R` for unit weights.
fn weighted_mean_stderr(pairs: impl Iterator<Item = (f64, f64)>, count: usize) -> (f64, f64) {
    let mut w_sum = 0.0;
    let mut wx_sum = 0.0;
    let mut data = Vec::with_capacity(count);
    for (w, x) in pairs {
        w_sum += w;
        wx_sum += w * x;
        data.push((w, x));
    }
    let mean = wx_sum / w_sum;
    if count < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = data.iter().map(|(w, x)| (w * (x - mean)).powi(2)).sum();
    let err = (ss * count as f64 / (count as f64 - 1.0)).sqrt() / w_sum;
    (mean, err)
}
