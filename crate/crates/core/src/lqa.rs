//! Local quantum annealing: the semiclassical cost, its derivatives and
//! forward rollouts.
//!
//! Each spin is a product state parametrized by an unbounded `w_i` through
//! `φ_i = (π/2)·tanh(w_i)`, with `z_i = sin φ_i` and `x_i = cos φ_i`. The cost
//!
//! ```text
//! C(w; s, γ) = s·γ·(zᵀJz + hᵀz) − (1 − s)·Σ x_i
//! ```
//!
//! interpolates from the transverse-field term at `s = 0` to the problem
//! term at `s = 1`. A rollout applies `w ← w − η(t)·∇C(w; t/τ, γ(t))` for
//! `t = 0..=τ`, i.e. `τ + 1` updates.

use std::f64::consts::FRAC_PI_2;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::ising::{dot, ising_energy, IsingInstance, SpinConfig};

/// Rollouts abort once any `|w_i|` exceeds this.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Relaxed spin parameters with cached angle projections.
#[derive(Clone, Debug, PartialEq)]
pub struct RelaxedState {
    w: Vec<f64>,
    tanh: Vec<f64>,
    z: Vec<f64>,
    x: Vec<f64>,
}

impl RelaxedState {
    pub fn new(w: Vec<f64>) -> Self {
        let n = w.len();
        let mut state = RelaxedState {
            w,
            tanh: vec![0.0; n],
            z: vec![0.0; n],
            x: vec![0.0; n],
        };
        state.refresh();
        state
    }

    pub fn zeros(n: usize) -> Self {
        RelaxedState::new(vec![0.0; n])
    }

    fn refresh(&mut self) {
        for i in 0..self.w.len() {
            let t = self.w[i].tanh();
            let (z, x) = (FRAC_PI_2 * t).sin_cos();
            self.tanh[i] = t;
            self.z[i] = z;
            self.x[i] = x;
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn w(&self) -> &[f64] {
        &self.w
    }

    pub fn into_w(self) -> Vec<f64> {
        self.w
    }

    pub fn z(&self) -> &[f64] {
        &self.z
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Angles `φ_i`.
    pub fn phi(&self) -> Vec<f64> {
        self.tanh.iter().map(|t| FRAC_PI_2 * t).collect()
    }

    /// `dφ_i/dw_i = (π/2)(1 − tanh² w_i)`.
    fn dphi(&self, i: usize) -> f64 {
        FRAC_PI_2 * (1.0 - self.tanh[i] * self.tanh[i])
    }

    /// `w ← w − step·direction`, then refresh the cached projections.
    pub fn descend(&mut self, step: f64, direction: &[f64]) {
        for (w, d) in self.w.iter_mut().zip(direction) {
            *w -= step * d;
        }
        self.refresh();
    }

    pub fn set_w(&mut self, w: &[f64]) {
        self.w.copy_from_slice(w);
        self.refresh();
    }

    pub(crate) fn check_finite(&self, step: usize) -> Result<()> {
        if self
            .w
            .iter()
            .any(|w| !w.is_finite() || w.abs() > DIVERGENCE_LIMIT)
        {
            return Err(Error::Divergence { step });
        }
        Ok(())
    }
}

fn check_s(s: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&s) {
        return Err(Error::Domain(format!(
            "annealing parameter s = {s} outside [0, 1]"
        )));
    }
    Ok(())
}

/// Cost and derivatives at one state, sharing the single `J·z` product.
///
/// All reductions use [`dot`], so results are independent of thread count.
#[derive(Clone, Debug)]
pub struct CostTerms<'a> {
    inst: &'a IsingInstance,
    state: &'a RelaxedState,
    /// `2(Jz)_i + h_i`: derivative of the problem term with respect to `z_i`.
    field: Vec<f64>,
    /// `zᵀJz + hᵀz`.
    problem: f64,
}

impl<'a> CostTerms<'a> {
    pub fn new(inst: &'a IsingInstance, state: &'a RelaxedState) -> Result<Self> {
        inst.check_len("relaxed state", state.len())?;
        let n = inst.n();
        let mut jz = vec![0.0; n];
        inst.couple_into(&state.z, &mut jz);
        let problem = dot(&state.z, &jz) + dot(inst.fields(), &state.z);
        let field = jz
            .iter()
            .zip(inst.fields())
            .map(|(&v, &h)| 2.0 * v + h)
            .collect();
        Ok(CostTerms {
            inst,
            state,
            field,
            problem,
        })
    }

    /// `zᵀJz + hᵀz`.
    pub fn problem_energy(&self) -> f64 {
        self.problem
    }

    pub fn cost(&self, s: f64, gamma: f64) -> Result<f64> {
        check_s(s)?;
        let transverse: f64 = self.state.x.iter().sum();
        Ok(s * gamma * self.problem - (1.0 - s) * transverse)
    }

    pub fn gradient(&self, s: f64, gamma: f64) -> Result<Vec<f64>> {
        check_s(s)?;
        let st = &self.state;
        Ok((0..st.len())
            .map(|i| (s * gamma * self.field[i] * st.x[i] + (1.0 - s) * st.z[i]) * st.dphi(i))
            .collect())
    }

    /// `∂C/∂γ`.
    pub fn dgamma(&self, s: f64) -> Result<f64> {
        check_s(s)?;
        Ok(s * self.problem)
    }

    /// `∂²C/∂γ∂w`.
    pub fn grad_dgamma(&self, s: f64) -> Result<Vec<f64>> {
        check_s(s)?;
        let st = &self.state;
        Ok((0..st.len())
            .map(|i| s * self.field[i] * st.x[i] * st.dphi(i))
            .collect())
    }

    /// Hessian-vector product `∇²C·v` with one extra `J` product.
    ///
    /// Off-diagonal part `2sγ·c_i a_i·(J(c⊙a⊙v))_i` with `c = cos φ`,
    /// `a = dφ/dw`; the diagonal collects the second derivatives of
    /// `φ_i(w_i)` since `J_ii = 0`.
    pub fn hvp(&self, s: f64, gamma: f64, v: &[f64]) -> Result<Vec<f64>> {
        check_s(s)?;
        self.inst.check_len("hvp direction", v.len())?;
        let st = &self.state;
        let n = st.len();
        let a: Vec<f64> = (0..n).map(|i| st.dphi(i)).collect();
        let cav: Vec<f64> = (0..n).map(|i| st.x[i] * a[i] * v[i]).collect();
        let mut jcav = vec![0.0; n];
        self.inst.couple_into(&cav, &mut jcav);
        let sg = s * gamma;
        Ok((0..n)
            .map(|i| {
                let (z, c, t) = (st.z[i], st.x[i], st.tanh[i]);
                let b = self.field[i];
                let diag = a[i] * a[i] * ((1.0 - s) * c - sg * b * z)
                    - 2.0 * t * a[i] * (sg * b * c + (1.0 - s) * z);
                2.0 * sg * c * a[i] * jcav[i] + diag * v[i]
            })
            .collect())
    }
}

/// `C(w; s, γ)`.
pub fn cost(state: &RelaxedState, inst: &IsingInstance, s: f64, gamma: f64) -> Result<f64> {
    CostTerms::new(inst, state)?.cost(s, gamma)
}

/// `∇_w C`.
pub fn cost_gradient(
    state: &RelaxedState,
    inst: &IsingInstance,
    s: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    CostTerms::new(inst, state)?.gradient(s, gamma)
}

/// `∇²_w C · v`.
pub fn cost_hvp(
    state: &RelaxedState,
    inst: &IsingInstance,
    s: f64,
    gamma: f64,
    v: &[f64],
) -> Result<Vec<f64>> {
    CostTerms::new(inst, state)?.hvp(s, gamma, v)
}

/// `∂(∇_w C)/∂γ`; independent of `γ`.
pub fn cost_grad_dgamma(
    state: &RelaxedState,
    inst: &IsingInstance,
    s: f64,
    _gamma: f64,
) -> Result<Vec<f64>> {
    CostTerms::new(inst, state)?.grad_dgamma(s)
}

/// `∂C/∂γ = s(zᵀJz + hᵀz)`.
pub fn cost_dgamma(state: &RelaxedState, inst: &IsingInstance, s: f64, _gamma: f64) -> Result<f64> {
    CostTerms::new(inst, state)?.dgamma(s)
}

/// `σ_i = +1` if `w_i ≥ 0`, else −1.
pub fn sign_readout(w: &[f64]) -> SpinConfig {
    SpinConfig::new(w.iter().map(|&v| if v >= 0.0 { 1 } else { -1 }).collect())
        .expect("readout yields ±1")
}

/// Linear schedule `s(t) = t/τ`, with `s(0) = 0` when `τ = 0`.
pub fn anneal_s(t: usize, tau: usize) -> f64 {
    if tau == 0 {
        0.0
    } else {
        t as f64 / tau as f64
    }
}

/// Per-step `η(t)` and `γ(t)` for `t = 0..=τ`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnnealSchedule {
    eta: Vec<f64>,
    gamma: Vec<f64>,
}

impl AnnealSchedule {
    pub fn new(eta: Vec<f64>, gamma: Vec<f64>) -> Result<Self> {
        if eta.is_empty() || eta.len() != gamma.len() {
            return Err(Error::InvalidConfig(format!(
                "schedule needs equal, nonzero lengths; got eta {} and gamma {}",
                eta.len(),
                gamma.len()
            )));
        }
        if let Some(v) = eta
            .iter()
            .chain(&gamma)
            .find(|v| !(v.is_finite() && **v > 0.0))
        {
            return Err(Error::InvalidConfig(format!(
                "schedule entries must be finite and positive, found {v}"
            )));
        }
        Ok(AnnealSchedule { eta, gamma })
    }

    pub fn constant(tau: usize, eta: f64, gamma: f64) -> Result<Self> {
        AnnealSchedule::new(vec![eta; tau + 1], vec![gamma; tau + 1])
    }

    pub fn tau(&self) -> usize {
        self.eta.len() - 1
    }

    pub fn eta(&self) -> &[f64] {
        &self.eta
    }

    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    /// Leading `depth + 1` entries as a schedule of annealing time `depth`.
    pub fn truncated(&self, depth: usize) -> Result<Self> {
        if depth > self.tau() {
            return Err(Error::InvalidConfig(format!(
                "depth {depth} exceeds schedule tau {}",
                self.tau()
            )));
        }
        Ok(AnnealSchedule {
            eta: self.eta[..=depth].to_vec(),
            gamma: self.gamma[..=depth].to_vec(),
        })
    }
}

/// Observables of one state along a rollout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepObservables {
    pub t: usize,
    pub s: f64,
    /// `E_w/N`: the cost at `(s, γ)` of this step.
    pub e_w_per_spin: f64,
    /// `E_ising/N` of the sign readout.
    pub e_ising_per_spin: f64,
}

/// Observables at `t = 0..=τ+1`. Entry `t ≤ τ` describes `w(t)` under
/// `(s(t), γ(t))`; entry `τ + 1` describes the final state under `(1, γ(τ))`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    pub steps: Vec<StepObservables>,
    /// `w(0..=τ+1)` when requested.
    pub snapshots: Option<Vec<Vec<f64>>>,
}

impl TrajectoryRecord {
    pub fn final_step(&self) -> &StepObservables {
        self.steps.last().expect("nonempty trajectory")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub record: TrajectoryRecord,
    pub final_w: Vec<f64>,
}

fn observe(
    inst: &IsingInstance,
    state: &RelaxedState,
    t: usize,
    s: f64,
    gamma: f64,
) -> Result<StepObservables> {
    observe_with(inst, state, t, s, cost(state, inst, s, gamma)?)
}

fn observe_with(
    inst: &IsingInstance,
    state: &RelaxedState,
    t: usize,
    s: f64,
    e_w: f64,
) -> Result<StepObservables> {
    let n = inst.n() as f64;
    let e_ising = ising_energy(inst, &sign_readout(state.w()))?;
    Ok(StepObservables {
        t,
        s,
        e_w_per_spin: e_w / n,
        e_ising_per_spin: e_ising / n,
    })
}

/// Plain gradient-descent rollout under a time-dependent schedule.
pub fn lqa_run(
    inst: &IsingInstance,
    w0: &[f64],
    sched: &AnnealSchedule,
    record_snapshots: bool,
) -> Result<Rollout> {
    gd_rollout(inst, w0, sched, true, record_snapshots)
}

/// Final state of [`lqa_run`] without per-step observables.
pub fn lqa_final_state(
    inst: &IsingInstance,
    w0: &[f64],
    sched: &AnnealSchedule,
) -> Result<Vec<f64>> {
    Ok(gd_rollout(inst, w0, sched, false, false)?.final_w)
}

fn gd_rollout(
    inst: &IsingInstance,
    w0: &[f64],
    sched: &AnnealSchedule,
    with_observables: bool,
    record_snapshots: bool,
) -> Result<Rollout> {
    inst.check_len("initial state", w0.len())?;
    let tau = sched.tau();
    let mut state = RelaxedState::new(w0.to_vec());
    let mut steps = Vec::with_capacity(if with_observables { tau + 2 } else { 0 });
    let mut snaps = record_snapshots.then(|| Vec::with_capacity(tau + 2));
    for t in 0..=tau {
        let s = anneal_s(t, tau);
        let gamma = sched.gamma[t];
        if let Some(v) = snaps.as_mut() {
            v.push(state.w().to_vec());
        }
        let terms = CostTerms::new(inst, &state)?;
        let grad = terms.gradient(s, gamma)?;
        if with_observables {
            let e_w = terms.cost(s, gamma)?;
            steps.push(observe_with(inst, &state, t, s, e_w)?);
        }
        state.descend(sched.eta[t], &grad);
        state.check_finite(t)?;
    }
    if with_observables {
        steps.push(observe(inst, &state, tau + 1, 1.0, sched.gamma[tau])?);
    }
    if let Some(v) = snaps.as_mut() {
        v.push(state.w().to_vec());
    }
    Ok(Rollout {
        record: TrajectoryRecord {
            steps,
            snapshots: snaps,
        },
        final_w: state.into_w(),
    })
}

/// Rollout with Adam (standard moments, bias correction) as the inner
/// optimizer, a constant `γ` and the linear `s(t) = t/τ`.
pub fn lqa_adam_run(
    inst: &IsingInstance,
    w0: &[f64],
    tau: usize,
    step_size: f64,
    gamma: f64,
) -> Result<Rollout> {
    adam_rollout(inst, w0, tau, step_size, gamma, true)
}

/// Final state of [`lqa_adam_run`] without per-step observables.
pub fn lqa_adam_final_state(
    inst: &IsingInstance,
    w0: &[f64],
    tau: usize,
    step_size: f64,
    gamma: f64,
) -> Result<Vec<f64>> {
    Ok(adam_rollout(inst, w0, tau, step_size, gamma, false)?.final_w)
}

fn adam_rollout(
    inst: &IsingInstance,
    w0: &[f64],
    tau: usize,
    step_size: f64,
    gamma: f64,
    with_observables: bool,
) -> Result<Rollout> {
    inst.check_len("initial state", w0.len())?;
    if tau < 1 {
        return Err(Error::InvalidConfig("Adam rollout needs tau >= 1".into()));
    }
    if !(step_size.is_finite() && step_size > 0.0 && gamma.is_finite() && gamma > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "step size {step_size} and gamma {gamma} must be finite and positive"
        )));
    }
    let mut state = RelaxedState::new(w0.to_vec());
    let mut adam = Adam::new(step_size, inst.n());
    let mut w = w0.to_vec();
    let mut steps = Vec::with_capacity(if with_observables { tau + 2 } else { 0 });
    for t in 0..=tau {
        let s = anneal_s(t, tau);
        let terms = CostTerms::new(inst, &state)?;
        let grad = terms.gradient(s, gamma)?;
        if with_observables {
            let e_w = terms.cost(s, gamma)?;
            steps.push(observe_with(inst, &state, t, s, e_w)?);
        }
        adam.update(&mut w, &grad);
        state.set_w(&w);
        state.check_finite(t)?;
    }
    if with_observables {
        steps.push(observe(inst, &state, tau + 1, 1.0, gamma)?);
    }
    Ok(Rollout {
        record: TrajectoryRecord {
            steps,
            snapshots: None,
        },
        final_w: w,
    })
}
