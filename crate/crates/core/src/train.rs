//! Deep-unfolded training of the per-step schedule `{η(t), γ(t)}`.
//!
//! The loss at depth `t` is the batch mean of `C(w(t+1); 1, γ(t))`, where
//! `w(t+1)` is the output of a depth-`t` rollout with `s(t') = t'/t`.
//! Parameter gradients come from an adjoint recursion over the stored
//! rollout states:
//!
//! ```text
//! λ(t+1) = ∇C(w(t+1); 1, γ(t))
//! ∂L/∂η(t') = −λ(t'+1)ᵀ ∇C(w(t'); s(t'), γ(t'))
//! ∂L/∂γ(t') = −η(t') λ(t'+1)ᵀ ∂_γ∇C(w(t'); s(t'))      (+ ∂C/∂γ at t' = t)
//! λ(t')     = λ(t'+1) − η(t') ∇²C(w(t'); s(t'), γ(t')) λ(t'+1)
//! ```
//!
//! Only Hessian-vector products are needed, so one backward step costs a
//! single extra `J` product.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::ising::{dot, generate_sk, IsingInstance};
use crate::lqa::{anneal_s, AnnealSchedule, CostTerms, RelaxedState};
use crate::rng::{Purpose, RngContract, StreamKey};

/// Lower bound applied to every trained parameter after an update.
pub const POSITIVITY_FLOOR: f64 = 1e-8;

/// How training instances are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// One fixed instance; only the initial points are resampled.
    OneInstance,
    /// Fresh instances every epoch.
    Ensemble,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::OneInstance => "one_instance",
            Strategy::Ensemble => "ensemble",
        })
    }
}

fn default_reset_moments() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    /// Spin count of training instances.
    pub n: usize,
    /// Annealing time (number of steps minus one).
    pub tau: usize,
    /// Epochs per incremental stage.
    pub n_epoch: usize,
    /// Items per batch.
    pub batch_size: usize,
    pub eta0: f64,
    pub gamma0: f64,
    /// Half-width of the uniform initial points.
    pub f: f64,
    /// Learning rate of the outer Adam.
    pub outer_lr: f64,
    pub strategy: Strategy,
    pub master_seed: u64,
    /// Zero the outer Adam moments at each stage boundary.
    #[serde(default = "default_reset_moments")]
    pub reset_moments: bool,
}

impl TrainConfig {
    /// N = 1000, τ = 20, 5000 epochs, |D| = 200, η₀ = 0.1, γ₀ = 1, f = 0.5,
    /// outer learning rate 1e-3.
    pub fn reference(strategy: Strategy, master_seed: u64) -> Self {
        TrainConfig {
            n: 1000,
            tau: 20,
            n_epoch: 5000,
            batch_size: 200,
            eta0: 0.1,
            gamma0: 1.0,
            f: 0.5,
            outer_lr: 1e-3,
            strategy,
            master_seed,
            reset_moments: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n < 2 {
            return bad(format!("n must be >= 2, got {}", self.n));
        }
        if self.tau < 1 {
            return bad("tau must be >= 1".into());
        }
        if self.n_epoch < 1 || self.batch_size < 1 {
            return bad("n_epoch and batch_size must be >= 1".into());
        }
        for (name, v) in [("eta0", self.eta0), ("gamma0", self.gamma0), ("f", self.f)] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be finite and positive, got {v}"));
            }
        }
        if !(self.outer_lr.is_finite() && self.outer_lr >= 0.0) {
            return bad(format!(
                "outer_lr must be finite and >= 0, got {}",
                self.outer_lr
            ));
        }
        Ok(())
    }

    fn global_epoch(&self, stage: usize, epoch: usize) -> u64 {
        ((stage - 1) * self.n_epoch + (epoch - 1)) as u64
    }
}

/// `w_i = (2u_i − 1)·f` with `u_i ~ Unif[0, 1)`.
pub fn init_w0<R: Rng + ?Sized>(n: usize, f: f64, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| (2.0 * rng.random::<f64>() - 1.0) * f)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub inst: Arc<IsingInstance>,
    pub w0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Deterministic batch generator for a training configuration.
///
/// Instance seeds and initial points come from streams keyed by
/// `(master_seed, epoch_index, item_index)`.
#[derive(Clone, Debug)]
pub struct BatchSource {
    n: usize,
    batch_size: usize,
    f: f64,
    strategy: Strategy,
    contract: RngContract,
    fixed: Option<Arc<IsingInstance>>,
}

impl BatchSource {
    pub fn new(config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        let contract = RngContract::new(config.master_seed);
        let fixed = match config.strategy {
            Strategy::OneInstance => Some(Arc::new(generate_sk(
                config.n,
                one_instance_seed(config.master_seed),
            )?)),
            Strategy::Ensemble => None,
        };
        Ok(BatchSource {
            n: config.n,
            batch_size: config.batch_size,
            f: config.f,
            strategy: config.strategy,
            contract,
            fixed,
        })
    }

    /// Instance seed of item `item` at `epoch` under the ensemble strategy.
    pub fn ensemble_seed(&self, epoch: u64, item: usize) -> u64 {
        self.contract.derive_u64(
            StreamKey::new(Purpose::TrainInstance)
                .epoch(epoch)
                .item(item as u64)
                .restart(1),
        )
    }

    /// The training instance of the one-instance strategy.
    pub fn fixed_instance(&self) -> Option<&Arc<IsingInstance>> {
        self.fixed.as_ref()
    }

    pub fn make_batch(&self, epoch: u64) -> Result<Batch> {
        let items = (0..self.batch_size)
            .into_par_iter()
            .map(|d| {
                let inst = match (&self.fixed, self.strategy) {
                    (Some(inst), _) => Arc::clone(inst),
                    (None, _) => Arc::new(generate_sk(self.n, self.ensemble_seed(epoch, d))?),
                };
                let mut rng = self.contract.stream(
                    StreamKey::new(Purpose::TrainInit)
                        .epoch(epoch)
                        .item(d as u64),
                );
                let w0 = init_w0(self.n, self.f, &mut rng);
                Ok(BatchItem { inst, w0 })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch { items })
    }
}

/// Seed of the fixed instance used by one-instance training.
pub fn one_instance_seed(master_seed: u64) -> u64 {
    RngContract::new(master_seed).derive_u64(StreamKey::new(Purpose::TrainInstance))
}

pub fn make_batch(config: &TrainConfig, epoch_index: u64) -> Result<Batch> {
    BatchSource::new(config)?.make_batch(epoch_index)
}

/// States `w(0..=depth+1)` of a depth-`depth` rollout.
pub fn unroll(inst: &IsingInstance, w0: &[f64], sched: &AnnealSchedule) -> Result<Vec<Vec<f64>>> {
    inst.check_len("initial state", w0.len())?;
    let depth = sched.tau();
    let mut state = RelaxedState::new(w0.to_vec());
    let mut snaps = Vec::with_capacity(depth + 2);
    snaps.push(w0.to_vec());
    for t in 0..=depth {
        let grad = CostTerms::new(inst, &state)?.gradient(anneal_s(t, depth), sched.gamma()[t])?;
        state.descend(sched.eta()[t], &grad);
        state.check_finite(t)?;
        snaps.push(state.w().to_vec());
    }
    Ok(snaps)
}

/// Final cost `C(w(depth+1); 1, γ(depth))` of one rollout.
pub fn final_cost(
    inst: &IsingInstance,
    snapshots: &[Vec<f64>],
    sched: &AnnealSchedule,
) -> Result<f64> {
    let last = snapshots
        .last()
        .ok_or_else(|| Error::InvalidConfig("empty rollout".into()))?;
    CostTerms::new(inst, &RelaxedState::new(last.clone()))?.cost(1.0, sched.gamma()[sched.tau()])
}

/// `∂L/∂η(t')` and `∂L/∂γ(t')` for `t' = 0..=depth`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleGradients {
    pub d_eta: Vec<f64>,
    pub d_gamma: Vec<f64>,
}

impl ScheduleGradients {
    fn zeros(len: usize) -> Self {
        ScheduleGradients {
            d_eta: vec![0.0; len],
            d_gamma: vec![0.0; len],
        }
    }

    fn is_finite(&self) -> bool {
        self.d_eta
            .iter()
            .chain(&self.d_gamma)
            .all(|v| v.is_finite())
    }
}

/// Adjoint pass for one rollout; returns the item's loss and gradients.
pub fn item_backward(
    inst: &IsingInstance,
    snapshots: &[Vec<f64>],
    sched: &AnnealSchedule,
) -> Result<(f64, ScheduleGradients)> {
    let depth = sched.tau();
    if snapshots.len() != depth + 2 {
        return Err(Error::DimensionMismatch {
            what: "rollout snapshots",
            expected: depth + 2,
            got: snapshots.len(),
        });
    }
    let (eta, gamma) = (sched.eta(), sched.gamma());
    let mut grads = ScheduleGradients::zeros(depth + 1);

    let last = RelaxedState::new(snapshots[depth + 1].clone());
    let terms = CostTerms::new(inst, &last)?;
    let loss = terms.cost(1.0, gamma[depth])?;
    let mut lambda = terms.gradient(1.0, gamma[depth])?;
    grads.d_gamma[depth] += terms.dgamma(1.0)?;

    for t in (0..=depth).rev() {
        let s = anneal_s(t, depth);
        let state = RelaxedState::new(snapshots[t].clone());
        let terms = CostTerms::new(inst, &state)?;
        let g = terms.gradient(s, gamma[t])?;
        grads.d_eta[t] -= dot(&lambda, &g);
        grads.d_gamma[t] -= eta[t] * dot(&lambda, &terms.grad_dgamma(s)?);
        let hl = terms.hvp(s, gamma[t], &lambda)?;
        for (l, h) in lambda.iter_mut().zip(&hl) {
            *l -= eta[t] * h;
        }
    }
    if !loss.is_finite() || !grads.is_finite() {
        return Err(Error::Divergence { step: depth + 1 });
    }
    Ok((loss, grads))
}

/// Batch-mean gradients from stored rollouts, reduced in item order.
pub fn backward(
    batch: &Batch,
    snapshots: &[Vec<Vec<f64>>],
    sched: &AnnealSchedule,
) -> Result<ScheduleGradients> {
    if snapshots.len() != batch.len() || batch.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "snapshots per batch item",
            expected: batch.len(),
            got: snapshots.len(),
        });
    }
    let per_item = batch
        .items
        .par_iter()
        .zip(snapshots.par_iter())
        .map(|(item, snaps)| item_backward(&item.inst, snaps, sched).map(|(_, g)| g))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_gradients(&per_item, sched.tau() + 1))
}

fn mean_gradients(items: &[ScheduleGradients], len: usize) -> ScheduleGradients {
    let mut acc = ScheduleGradients::zeros(len);
    for g in items {
        for t in 0..len {
            acc.d_eta[t] += g.d_eta[t];
            acc.d_gamma[t] += g.d_gamma[t];
        }
    }
    let k = items.len() as f64;
    acc.d_eta
        .iter_mut()
        .chain(acc.d_gamma.iter_mut())
        .for_each(|v| *v /= k);
    acc
}

/// Depth-`depth` loss: batch mean of the final cost. `sched` must cover
/// at least `depth + 1` steps; longer schedules are truncated.
pub fn loss(batch: &Batch, sched: &AnnealSchedule, depth: usize) -> Result<f64> {
    let sched = sched.truncated(depth)?;
    if batch.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let costs = batch
        .items
        .par_iter()
        .enumerate()
        .map(|(d, item)| {
            unroll(&item.inst, &item.w0, &sched)
                .and_then(|snaps| final_cost(&item.inst, &snaps, &sched))
                .map_err(|e| tag_item(e, d))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

fn tag_item(e: Error, item: usize) -> Error {
    match e {
        Error::Divergence { step } => Error::ItemDivergence { item, step },
        other => other,
    }
}

/// Loss and gradients of one epoch, with divergent items dropped.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochGradients {
    pub loss: f64,
    pub grads: ScheduleGradients,
    /// `(item, step)` of every dropped item.
    pub dropped: Vec<(usize, usize)>,
}

/// Forward and backward for every item in parallel; the mean runs over the
/// items that stayed finite, in index order. Fails only if all diverge.
pub fn epoch_gradients(batch: &Batch, sched: &AnnealSchedule) -> Result<EpochGradients> {
    let results: Vec<Result<(f64, ScheduleGradients)>> = batch
        .items
        .par_iter()
        .map(|item| {
            let snaps = unroll(&item.inst, &item.w0, sched)?;
            item_backward(&item.inst, &snaps, sched)
        })
        .collect();
    let mut kept = Vec::with_capacity(results.len());
    let mut dropped = Vec::new();
    let mut total = 0.0;
    for (d, r) in results.into_iter().enumerate() {
        match r {
            Ok((l, g)) => {
                total += l;
                kept.push(g);
            }
            Err(Error::Divergence { step }) => dropped.push((d, step)),
            Err(e) => return Err(e),
        }
    }
    if kept.is_empty() {
        let (item, step) = dropped.first().copied().unwrap_or((0, 0));
        return Err(Error::ItemDivergence { item, step });
    }
    Ok(EpochGradients {
        loss: total / kept.len() as f64,
        grads: mean_gradients(&kept, sched.tau() + 1),
        dropped,
    })
}

/// `Θ_τ` with the outer optimizer state. Parameters are stored interleaved
/// as `[η(0), γ(0), η(1), γ(1), …]` so that a stage trains a prefix.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableSchedule {
    params: Vec<f64>,
    pub adam: Adam,
}

impl TrainableSchedule {
    pub fn constant(tau: usize, eta0: f64, gamma0: f64, outer_lr: f64) -> Self {
        let params = (0..=tau).flat_map(|_| [eta0, gamma0]).collect::<Vec<_>>();
        let len = params.len();
        TrainableSchedule {
            params,
            adam: Adam::new(outer_lr, len),
        }
    }

    pub fn from_schedule(sched: &AnnealSchedule, adam: Adam) -> Result<Self> {
        let params: Vec<f64> = sched
            .eta()
            .iter()
            .zip(sched.gamma())
            .flat_map(|(&e, &g)| [e, g])
            .collect();
        if adam.m.len() != params.len() || adam.v.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer moments",
                expected: params.len(),
                got: adam.m.len(),
            });
        }
        Ok(TrainableSchedule { params, adam })
    }

    /// Interleaved `[η(0), γ(0), η(1), γ(1), …]` with optimizer state.
    pub fn from_params(params: Vec<f64>, adam: Adam) -> Result<Self> {
        if params.len() < 2 || !params.len().is_multiple_of(2) {
            return Err(Error::InvalidSize(format!(
                "interleaved schedule needs an even length >= 2, got {}",
                params.len()
            )));
        }
        if params.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(Error::Domain("schedule parameters must be positive".into()));
        }
        if adam.m.len() != params.len() || adam.v.len() != params.len() {
            return Err(Error::DimensionMismatch {
                what: "optimizer moments",
                expected: params.len(),
                got: adam.m.len(),
            });
        }
        Ok(TrainableSchedule { params, adam })
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn tau(&self) -> usize {
        self.params.len() / 2 - 1
    }

    pub fn eta(&self, t: usize) -> f64 {
        self.params[2 * t]
    }

    pub fn gamma(&self, t: usize) -> f64 {
        self.params[2 * t + 1]
    }

    pub fn schedule(&self) -> AnnealSchedule {
        let eta = (0..=self.tau()).map(|t| self.eta(t)).collect();
        let gamma = (0..=self.tau()).map(|t| self.gamma(t)).collect();
        AnnealSchedule::new(eta, gamma).expect("parameters stay positive")
    }
}

/// One Adam step on `{η(t'), γ(t')}` for the `t'` covered by `grads`;
/// results are clamped at [`POSITIVITY_FLOOR`].
pub fn outer_adam_step(
    theta: &mut TrainableSchedule,
    grads: &ScheduleGradients,
    outer_lr: f64,
) -> Result<()> {
    let len = grads.d_eta.len();
    if len != grads.d_gamma.len() || len == 0 || len > theta.tau() + 1 {
        return Err(Error::DimensionMismatch {
            what: "schedule gradients",
            expected: theta.tau() + 1,
            got: len,
        });
    }
    if !grads.is_finite() {
        return Err(Error::Domain("non-finite schedule gradient".into()));
    }
    let flat: Vec<f64> = grads
        .d_eta
        .iter()
        .zip(&grads.d_gamma)
        .flat_map(|(&e, &g)| [e, g])
        .collect();
    theta.adam.lr = outer_lr;
    theta.adam.update(&mut theta.params, &flat);
    for p in &mut theta.params[..flat.len()] {
        if *p < POSITIVITY_FLOOR {
            *p = POSITIVITY_FLOOR;
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossEntry {
    pub stage: usize,
    pub epoch: usize,
    pub loss: f64,
    /// Items dropped from this epoch's mean after diverging.
    pub dropped: usize,
}

/// Stage-by-stage trainer; stage `t` trains `Θ_t` at depth `t`, warm
/// started from stage `t − 1`.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    source: BatchSource,
    theta: TrainableSchedule,
    completed_stage: usize,
    log: Vec<LossEntry>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        let source = BatchSource::new(&config)?;
        let theta =
            TrainableSchedule::constant(config.tau, config.eta0, config.gamma0, config.outer_lr);
        Ok(Trainer {
            config,
            source,
            theta,
            completed_stage: 0,
            log: Vec::new(),
        })
    }

    /// Continue from the state reached after `completed_stage` stages.
    pub fn resume(
        config: TrainConfig,
        theta: TrainableSchedule,
        completed_stage: usize,
        log: Vec<LossEntry>,
    ) -> Result<Self> {
        let source = BatchSource::new(&config)?;
        if theta.tau() != config.tau {
            return Err(Error::InvalidConfig(format!(
                "resumed schedule has tau {} but config has tau {}",
                theta.tau(),
                config.tau
            )));
        }
        if completed_stage > config.tau {
            return Err(Error::InvalidConfig(format!(
                "completed stage {completed_stage} exceeds tau {}",
                config.tau
            )));
        }
        Ok(Trainer {
            config,
            source,
            theta,
            completed_stage,
            log,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn source(&self) -> &BatchSource {
        &self.source
    }

    pub fn theta(&self) -> &TrainableSchedule {
        &self.theta
    }

    pub fn completed_stage(&self) -> usize {
        self.completed_stage
    }

    pub fn log(&self) -> &[LossEntry] {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.completed_stage >= self.config.tau
    }

    /// Runs the next stage. Returns `false` once all stages are done.
    pub fn run_stage(&mut self) -> Result<bool> {
        if self.is_done() {
            return Ok(false);
        }
        let stage = self.completed_stage + 1;
        if self.config.reset_moments {
            self.theta.adam.reset();
        }
        for epoch in 1..=self.config.n_epoch {
            let batch = self
                .source
                .make_batch(self.config.global_epoch(stage, epoch))?;
            let sched = self.theta.schedule().truncated(stage)?;
            let eg = epoch_gradients(&batch, &sched)?;
            outer_adam_step(&mut self.theta, &eg.grads, self.config.outer_lr)?;
            self.log.push(LossEntry {
                stage,
                epoch,
                loss: eg.loss,
                dropped: eg.dropped.len(),
            });
        }
        self.completed_stage = stage;
        Ok(true)
    }

    pub fn finish(mut self) -> Result<TrainOutcome> {
        while self.run_stage()? {}
        Ok(TrainOutcome {
            theta: self.theta,
            log: self.log,
        })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub theta: TrainableSchedule,
    pub log: Vec<LossEntry>,
}

/// Full incremental training for `config`.
pub fn incremental_train(config: TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(config)?.finish()
}
