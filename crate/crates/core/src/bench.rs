//! Experiment harness: trajectories, crossover times, generalization to
//! unseen instances and sizes, and finite-size scaling of the final energy.
//!
//! All randomness is keyed by `(master_seed, purpose, n, instance, restart)`
//! and all aggregation runs in index order, so tables are byte-identical
//! for any thread count.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::Table;
use crate::ising::{
    brute_force_ground_state, generate_sk, ising_energy, IsingInstance, BRUTE_FORCE_LIMIT,
};
use crate::lqa::{
    anneal_s, lqa_adam_final_state, lqa_adam_run, lqa_final_state, lqa_run, sign_readout,
    AnnealSchedule, Rollout,
};
use crate::rng::{Purpose, RngContract, StreamKey};
use crate::search::{tune_lqa_adam, tune_lqa_gd, TuneSettings};
use crate::train::init_w0;

/// Ground-state energy per spin of the SK model in the thermodynamic limit
/// (Parisi), doubled because energies count each pair `i ≠ j` twice.
pub const E_GS_PER_SPIN: f64 = -1.526;
/// Reference decay exponent of the residual energy, fit window 50 ≤ N ≤ 300.
pub const REFERENCE_OMEGA: f64 = 0.623;
/// Reference decay exponent of the SD of `E_ising/N`, fit window 50 ≤ N ≤ 1000.
pub const REFERENCE_OMEGA_S: f64 = 0.694;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExperimentKind {
    Trajectory,
    Crossover,
    Generalization,
    Scaling,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Trajectory => "trajectory",
            ExperimentKind::Crossover => "crossover",
            ExperimentKind::Generalization => "generalization",
            ExperimentKind::Scaling => "scaling",
        }
    }
}

/// A solver entry of an experiment roster.
#[derive(Clone, Debug, PartialEq)]
pub enum SolverSpec {
    /// Trained schedules: one per size, with an optional shared fallback.
    Dulqa {
        label: String,
        shared: Option<AnnealSchedule>,
        per_size: BTreeMap<usize, AnnealSchedule>,
    },
    /// Constant-step GD with `γ = 1`; `None` means tuned by random search.
    LqaGd { eta: Option<f64> },
    /// LQA-Adam with `γ = 1`; `None` means tuned by random search.
    LqaAdam { step_size: Option<f64> },
}

impl SolverSpec {
    pub fn dulqa(label: &str, schedule: AnnealSchedule) -> Self {
        SolverSpec::Dulqa {
            label: label.to_string(),
            shared: Some(schedule),
            per_size: BTreeMap::new(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            SolverSpec::Dulqa { label, .. } => format!("dulqa_{label}"),
            SolverSpec::LqaGd { .. } => "lqa_gd".into(),
            SolverSpec::LqaAdam { .. } => "lqa_adam".into(),
        }
    }

    fn is_dulqa(&self) -> bool {
        matches!(self, SolverSpec::Dulqa { .. })
    }

    fn schedule_for(&self, n: usize) -> Result<&AnnealSchedule> {
        match self {
            SolverSpec::Dulqa {
                label,
                shared,
                per_size,
            } => per_size.get(&n).or(shared.as_ref()).ok_or_else(|| {
                Error::InvalidConfig(format!("no DULQA schedule `{label}` for n = {n}"))
            }),
            _ => Err(Error::InvalidConfig("not a DULQA entry".into())),
        }
    }

    /// Resolves the entry for instance `inst` at annealing time `tau`,
    /// tuning on `inst` when no parameter is given.
    fn resolve(&self, inst: &IsingInstance, tau: usize, tune: &TuneSettings) -> Result<Solver> {
        let tune = TuneSettings {
            tau,
            ..tune.clone()
        };
        Ok(match self {
            SolverSpec::Dulqa { .. } => {
                let sched = self.schedule_for(inst.n())?;
                if sched.tau() != tau {
                    return Err(Error::InvalidConfig(format!(
                        "DULQA schedule has tau {} but the experiment uses tau {tau}",
                        sched.tau()
                    )));
                }
                Solver::Dulqa(sched.clone())
            }
            SolverSpec::LqaGd { eta: Some(eta) } => Solver::Gd { tau, eta: *eta },
            SolverSpec::LqaGd { eta: None } => Solver::Gd {
                tau,
                eta: tune_lqa_gd(
                    &[inst],
                    &TuneSettings {
                        bounds: crate::search::GD_BOUNDS,
                        ..tune
                    },
                )?
                .best,
            },
            SolverSpec::LqaAdam { step_size: Some(s) } => Solver::Adam { tau, step_size: *s },
            SolverSpec::LqaAdam { step_size: None } => Solver::Adam {
                tau,
                step_size: tune_lqa_adam(
                    &[inst],
                    &TuneSettings {
                        bounds: crate::search::ADAM_BOUNDS,
                        ..tune
                    },
                )?
                .best,
            },
        })
    }
}

/// A ready-to-run solver.
#[derive(Clone, Debug, PartialEq)]
pub enum Solver {
    Dulqa(AnnealSchedule),
    Gd { tau: usize, eta: f64 },
    Adam { tau: usize, step_size: f64 },
}

impl Solver {
    /// The tuned or fixed scalar parameter of a baseline.
    pub fn parameter(&self) -> Option<f64> {
        match self {
            Solver::Dulqa(_) => None,
            Solver::Gd { eta, .. } => Some(*eta),
            Solver::Adam { step_size, .. } => Some(*step_size),
        }
    }

    pub fn rollout(&self, inst: &IsingInstance, w0: &[f64]) -> Result<Rollout> {
        match self {
            Solver::Dulqa(s) => lqa_run(inst, w0, s, false),
            Solver::Gd { tau, eta } => {
                lqa_run(inst, w0, &AnnealSchedule::constant(*tau, *eta, 1.0)?, false)
            }
            Solver::Adam { tau, step_size } => lqa_adam_run(inst, w0, *tau, *step_size, 1.0),
        }
    }

    /// Final `E_ising/N`.
    pub fn final_energy(&self, inst: &IsingInstance, w0: &[f64]) -> Result<f64> {
        let w = match self {
            Solver::Dulqa(s) => lqa_final_state(inst, w0, s)?,
            Solver::Gd { tau, eta } => {
                lqa_final_state(inst, w0, &AnnealSchedule::constant(*tau, *eta, 1.0)?)?
            }
            Solver::Adam { tau, step_size } => {
                lqa_adam_final_state(inst, w0, *tau, *step_size, 1.0)?
            }
        };
        Ok(ising_energy(inst, &sign_readout(&w))? / inst.n() as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub sizes: Vec<usize>,
    /// Annealing time of the trained schedules (and of every solver except
    /// in the crossover sweep).
    pub tau: usize,
    /// Baseline annealing times swept by the crossover experiment.
    pub taus: Vec<usize>,
    pub restarts: usize,
    pub instances: usize,
    pub tune_budget: usize,
    pub tune_restarts: usize,
    pub f: f64,
    pub master_seed: u64,
    pub roster: Vec<SolverSpec>,
    /// Use brute-force ground states instead of [`E_GS_PER_SPIN`].
    pub exact_gs: bool,
    pub residual_fit: (usize, usize),
    pub sd_fit: (usize, usize),
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, master_seed: u64) -> Self {
        ExperimentSpec {
            kind,
            sizes: vec![100],
            tau: 20,
            taus: vec![20],
            restarts: 20,
            instances: 1,
            tune_budget: crate::search::DEFAULT_BUDGET,
            tune_restarts: 20,
            f: 0.5,
            master_seed,
            roster: Vec::new(),
            exact_gs: false,
            residual_fit: (50, 300),
            sd_fit: (50, 1000),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.roster.is_empty() {
            return bad("solver roster is empty".into());
        }
        if self.sizes.is_empty() || self.sizes.iter().any(|&n| n < 2) {
            return bad("sizes must be nonempty with every n >= 2".into());
        }
        if self.restarts < 1 || self.instances < 1 || self.tune_budget < 1 || self.tune_restarts < 1
        {
            return bad("restarts, instances, tune_budget and tune_restarts must be >= 1".into());
        }
        if self.tau < 1 || self.taus.iter().any(|&t| t < 1) {
            return bad("annealing times must be >= 1".into());
        }
        if !(self.f.is_finite() && self.f > 0.0) {
            return bad(format!("f must be positive, got {}", self.f));
        }
        for entry in &self.roster {
            if let SolverSpec::Dulqa {
                label,
                shared,
                per_size,
            } = entry
            {
                for s in shared.iter().chain(per_size.values()) {
                    if s.tau() != self.tau {
                        return bad(format!(
                            "checkpoint `{label}` has tau {} but the experiment uses tau {}",
                            s.tau(),
                            self.tau
                        ));
                    }
                }
                for &n in &self.sizes {
                    entry.schedule_for(n)?;
                }
            }
        }
        if self.exact_gs && self.sizes.iter().any(|&n| n > BRUTE_FORCE_LIMIT) {
            return bad(format!("exact_gs needs every n <= {BRUTE_FORCE_LIMIT}"));
        }
        match self.kind {
            ExperimentKind::Crossover | ExperimentKind::Trajectory
                if !self.roster.iter().any(SolverSpec::is_dulqa) =>
            {
                bad(format!("{} needs a DULQA entry", self.kind.name()))
            }
            ExperimentKind::Scaling if !self.roster.iter().any(SolverSpec::is_dulqa) => {
                bad("scaling needs a DULQA entry".into())
            }
            _ => Ok(()),
        }
    }

    fn contract(&self) -> RngContract {
        RngContract::new(self.master_seed)
    }

    /// Held-out test instance `idx` of size `n`.
    pub fn test_instance(&self, n: usize, idx: usize) -> Result<IsingInstance> {
        let key = StreamKey::new(Purpose::TestInstance)
            .epoch(n as u64)
            .item(idx as u64);
        generate_sk(n, self.contract().derive_u64(key))
    }

    /// Initial point of restart `r` on instance `idx` of size `n`.
    pub fn restart_point(&self, n: usize, idx: usize, r: usize) -> Vec<f64> {
        let key = StreamKey::new(Purpose::Restart)
            .epoch(n as u64)
            .item(idx as u64)
            .restart(r as u64);
        init_w0(n, self.f, &mut self.contract().stream(key))
    }

    fn tune_settings(&self, n: usize, idx: usize, tau: usize) -> TuneSettings {
        let key = StreamKey::new(Purpose::SearchTrial)
            .epoch(n as u64)
            .item(idx as u64)
            .restart(tau as u64);
        TuneSettings {
            tau,
            restarts: self.tune_restarts,
            budget: self.tune_budget,
            seed: self.contract().derive_u64(key),
            f: self.f,
            bounds: crate::search::GD_BOUNDS,
        }
    }
}

/// Arithmetic mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Running minimum over restarts (entry `k` is the minimum of the first `k + 1`).
pub fn prefix_minima(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(f64::INFINITY, |m, &x| {
            *m = m.min(x);
            Some(*m)
        })
        .collect()
}

fn run_restarts(
    solver: &Solver,
    inst: &IsingInstance,
    starts: &[Vec<f64>],
) -> Result<Vec<Rollout>> {
    starts
        .par_iter()
        .map(|w0| solver.rollout(inst, w0))
        .collect()
}

fn final_energies(solver: &Solver, inst: &IsingInstance, starts: &[Vec<f64>]) -> Result<Vec<f64>> {
    starts
        .par_iter()
        .map(|w0| solver.final_energy(inst, w0))
        .collect()
}

/// Per-step statistics of one solver across restarts.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrajectory {
    pub label: String,
    pub parameter: Option<f64>,
    pub s: Vec<f64>,
    pub e_w_mean: Vec<f64>,
    pub e_w_sd: Vec<f64>,
    pub e_ising_mean: Vec<f64>,
    pub e_ising_sd: Vec<f64>,
    /// Final `E_ising/N` of each restart.
    pub finals: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryResult {
    pub solvers: Vec<SolverTrajectory>,
    pub table: Table,
}

/// Per-step `E_w/N` and `E_ising/N` of every solver over seeded restarts on
/// held-out instance 0 of `sizes[0]`, with the transverse-field reference
/// `−(1 − s)`.
pub fn trajectory_experiment(spec: &ExperimentSpec) -> Result<TrajectoryResult> {
    spec.validate()?;
    let n = spec.sizes[0];
    let inst = spec.test_instance(n, 0)?;
    let starts: Vec<Vec<f64>> = (0..spec.restarts)
        .map(|r| spec.restart_point(n, 0, r))
        .collect();
    let mut table = Table::new(&[
        "t",
        "solver",
        "n",
        "tau",
        "s",
        "reference",
        "e_w_mean",
        "e_w_sd",
        "e_ising_mean",
        "e_ising_sd",
    ]);
    let mut solvers = Vec::new();
    for entry in &spec.roster {
        let solver = entry.resolve(&inst, spec.tau, &spec.tune_settings(n, 0, spec.tau))?;
        let runs = run_restarts(&solver, &inst, &starts)?;
        let steps = runs[0].record.steps.len();
        let col = |t: usize, f: fn(&crate::lqa::StepObservables) -> f64| -> Vec<f64> {
            runs.iter().map(|r| f(&r.record.steps[t])).collect()
        };
        let mut tr = SolverTrajectory {
            label: entry.label(),
            parameter: solver.parameter(),
            s: Vec::new(),
            e_w_mean: Vec::new(),
            e_w_sd: Vec::new(),
            e_ising_mean: Vec::new(),
            e_ising_sd: Vec::new(),
            finals: runs
                .iter()
                .map(|r| r.record.final_step().e_ising_per_spin)
                .collect(),
        };
        for t in 0..steps {
            let ew = col(t, |o| o.e_w_per_spin);
            let ei = col(t, |o| o.e_ising_per_spin);
            let s = runs[0].record.steps[t].s;
            tr.s.push(s);
            tr.e_w_mean.push(mean(&ew));
            tr.e_w_sd.push(population_sd(&ew));
            tr.e_ising_mean.push(mean(&ei));
            tr.e_ising_sd.push(population_sd(&ei));
            table.push(vec![
                t.into(),
                tr.label.clone().into(),
                n.into(),
                spec.tau.into(),
                s.into(),
                (-(1.0 - s)).into(),
                tr.e_w_mean[t].into(),
                tr.e_w_sd[t].into(),
                tr.e_ising_mean[t].into(),
                tr.e_ising_sd[t].into(),
            ]);
        }
        if let Some(p) = tr.parameter {
            table.note(format!("param.{}", tr.label), crate::io::fmt_real(p));
        }
        solvers.push(tr);
    }
    Ok(TrajectoryResult { solvers, table })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossoverRow {
    pub tau: usize,
    pub label: String,
    pub parameter: f64,
    pub mean_e_ising: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossoverResult {
    /// Minimum over restarts of the DULQA final `E_ising/N` at `spec.tau`.
    pub dulqa_min: f64,
    pub rows: Vec<CrossoverRow>,
    /// Smallest swept `τ` with `ΔE ≤ 0`, per baseline.
    pub crossover: Vec<(String, Option<usize>)>,
    pub table: Table,
}

/// `ΔE(τ) = mean E_ising/N of a baseline re-tuned at τ − min E_ising/N of
/// DULQA at the reference τ`, on held-out instance 0.
pub fn crossover_experiment(spec: &ExperimentSpec) -> Result<CrossoverResult> {
    spec.validate()?;
    let n = spec.sizes[0];
    let inst = spec.test_instance(n, 0)?;
    let starts: Vec<Vec<f64>> = (0..spec.restarts)
        .map(|r| spec.restart_point(n, 0, r))
        .collect();
    let dulqa_entry = spec
        .roster
        .iter()
        .find(|e| e.is_dulqa())
        .expect("validated");
    let dulqa = dulqa_entry.resolve(&inst, spec.tau, &spec.tune_settings(n, 0, spec.tau))?;
    let dulqa_min = final_energies(&dulqa, &inst, &starts)?
        .into_iter()
        .fold(f64::INFINITY, f64::min);

    let mut table = Table::new(&["tau", "solver", "n", "parameter", "e_ising_mean", "delta"]);
    table.note("dulqa_solver", dulqa_entry.label());
    table.note("dulqa_tau", spec.tau.to_string());
    table.note("dulqa_min_e_ising", crate::io::fmt_real(dulqa_min));
    let mut rows = Vec::new();
    let mut crossover = Vec::new();
    for entry in spec.roster.iter().filter(|e| !e.is_dulqa()) {
        let mut first = None;
        for &tau in &spec.taus {
            let solver = entry.resolve(&inst, tau, &spec.tune_settings(n, 0, tau))?;
            let m = mean(&final_energies(&solver, &inst, &starts)?);
            let row = CrossoverRow {
                tau,
                label: entry.label(),
                parameter: solver.parameter().expect("baseline"),
                mean_e_ising: m,
                delta: m - dulqa_min,
            };
            if row.delta <= 0.0 && first.is_none() {
                first = Some(tau);
            }
            table.push(vec![
                tau.into(),
                row.label.clone().into(),
                n.into(),
                row.parameter.into(),
                m.into(),
                row.delta.into(),
            ]);
            rows.push(row);
        }
        table.note(
            format!("crossover.{}", entry.label()),
            first.map_or_else(|| "not reached".to_string(), |t| t.to_string()),
        );
        crossover.push((entry.label(), first));
    }
    Ok(CrossoverResult {
        dulqa_min,
        rows,
        crossover,
        table,
    })
}

/// Statistics over test instances for one `(n, solver)` pair.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationSeries {
    pub n: usize,
    pub label: String,
    /// Mean over instances of the per-instance restart mean, per step.
    pub mean: Vec<f64>,
    /// Population SD over instances, per step.
    pub sd: Vec<f64>,
}

impl GeneralizationSeries {
    pub fn final_mean(&self) -> f64 {
        *self.mean.last().expect("nonempty")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneralizationResult {
    pub series: Vec<GeneralizationSeries>,
    pub table: Table,
}

/// DULQA with fixed schedules against baselines tuned per test instance,
/// on `instances` fresh instances for every size in `sizes`.
pub fn generalization_experiment(spec: &ExperimentSpec) -> Result<GeneralizationResult> {
    spec.validate()?;
    let mut table = Table::new(&["n", "t", "solver", "tau", "e_ising_mean", "e_ising_sd"]);
    let mut series = Vec::new();
    for &n in &spec.sizes {
        let insts = (0..spec.instances)
            .map(|k| spec.test_instance(n, k))
            .collect::<Result<Vec<_>>>()?;
        for entry in &spec.roster {
            // per instance: restart-mean E_ising/N at every step
            let per_instance = insts
                .iter()
                .enumerate()
                .map(|(k, inst)| {
                    let solver =
                        entry.resolve(inst, spec.tau, &spec.tune_settings(n, k, spec.tau))?;
                    let starts: Vec<Vec<f64>> = (0..spec.restarts)
                        .map(|r| spec.restart_point(n, k, r))
                        .collect();
                    let runs = run_restarts(&solver, inst, &starts)?;
                    let steps = runs[0].record.steps.len();
                    Ok((0..steps)
                        .map(|t| {
                            let v: Vec<f64> = runs
                                .iter()
                                .map(|r| r.record.steps[t].e_ising_per_spin)
                                .collect();
                            mean(&v)
                        })
                        .collect::<Vec<f64>>())
                })
                .collect::<Result<Vec<_>>>()?;
            let steps = per_instance[0].len();
            let mut s = GeneralizationSeries {
                n,
                label: entry.label(),
                mean: Vec::with_capacity(steps),
                sd: Vec::with_capacity(steps),
            };
            for t in 0..steps {
                let v: Vec<f64> = per_instance.iter().map(|p| p[t]).collect();
                s.mean.push(mean(&v));
                s.sd.push(population_sd(&v));
                table.push(vec![
                    n.into(),
                    t.into(),
                    s.label.clone().into(),
                    spec.tau.into(),
                    s.mean[t].into(),
                    s.sd[t].into(),
                ]);
            }
            series.push(s);
        }
    }
    Ok(GeneralizationResult { series, table })
}

/// Least-squares power law `y = prefactor · n^(−exponent)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerLawFit {
    /// Decay rate (positive when `y` decreases with `n`).
    pub exponent: f64,
    pub prefactor: f64,
    pub r_squared: f64,
    pub range: (usize, usize),
    pub points: usize,
}

/// Ordinary least squares on `(ln n, ln y)` for points with
/// `range.0 ≤ n ≤ range.1`.
pub fn power_law_fit(points: &[(usize, f64)], range: (usize, usize)) -> Result<PowerLawFit> {
    let sel: Vec<(f64, f64)> = points
        .iter()
        .filter(|(n, _)| (range.0..=range.1).contains(n))
        .map(|&(n, y)| {
            if y > 0.0 && y.is_finite() {
                Ok(((n as f64).ln(), y.ln()))
            } else {
                Err(Error::FitDomain(format!(
                    "value {y} at n = {n} is not positive"
                )))
            }
        })
        .collect::<Result<_>>()?;
    if sel.len() < 2 {
        return Err(Error::FitDomain(format!(
            "need at least 2 points in [{}, {}], found {}",
            range.0,
            range.1,
            sel.len()
        )));
    }
    let k = sel.len() as f64;
    let mx = sel.iter().map(|p| p.0).sum::<f64>() / k;
    let my = sel.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = sel.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = sel.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = sel.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::FitDomain("all points share the same n".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = sel
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(PowerLawFit {
        exponent: -slope,
        prefactor: intercept.exp(),
        r_squared,
        range,
        points: sel.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub instances: usize,
    /// Mean over instances of the min-over-restarts `E_ising/N`.
    pub mean_e_ising: f64,
    /// Population SD of the same per-instance minima.
    pub sd_e_ising: f64,
    /// `mean_e_ising − E_GS/N` (or the mean gap to exact ground states).
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingResult {
    pub label: String,
    pub rows: Vec<ScalingRow>,
    /// Fit of the residual energy (`ω`); `Err` carries why no fit exists.
    pub omega: std::result::Result<PowerLawFit, String>,
    /// Fit of the SD (`ω_s`).
    pub omega_s: std::result::Result<PowerLawFit, String>,
}

/// Turns per-instance minima (and optional exact ground states per spin)
/// into scaling statistics.
pub fn scaling_row(n: usize, minima: &[f64], exact_gs: Option<&[f64]>) -> ScalingRow {
    let m = mean(minima);
    let residual = match exact_gs {
        Some(gs) => {
            let gaps: Vec<f64> = minima.iter().zip(gs).map(|(e, g)| e - g).collect();
            mean(&gaps)
        }
        None => m - E_GS_PER_SPIN,
    };
    ScalingRow {
        n,
        instances: minima.len(),
        mean_e_ising: m,
        sd_e_ising: population_sd(minima),
        residual,
    }
}

pub fn fit_scaling(
    label: String,
    rows: Vec<ScalingRow>,
    residual_fit: (usize, usize),
    sd_fit: (usize, usize),
) -> ScalingResult {
    let res_pts: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.residual)).collect();
    let sd_pts: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.sd_e_ising)).collect();
    ScalingResult {
        label,
        omega: power_law_fit(&res_pts, residual_fit).map_err(|e| e.to_string()),
        omega_s: power_law_fit(&sd_pts, sd_fit).map_err(|e| e.to_string()),
        rows,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub results: Vec<ScalingResult>,
    pub table: Table,
}

/// For each DULQA entry and size: per test instance the minimum final
/// `E_ising/N` over restarts, then mean, SD and residual over instances,
/// and power-law fits of residual and SD against `n`.
pub fn scaling_experiment(spec: &ExperimentSpec) -> Result<ScalingReport> {
    spec.validate()?;
    let mut table = Table::new(&[
        "solver",
        "n",
        "tau",
        "instances",
        "restarts",
        "e_ising_mean",
        "e_ising_sd",
        "residual",
    ]);
    table.note(
        "e_gs_per_spin",
        if spec.exact_gs {
            "exact".to_string()
        } else {
            crate::io::fmt_real(E_GS_PER_SPIN)
        },
    );
    table.note(
        "reference.omega",
        format!("{REFERENCE_OMEGA} (fit 50..=300)"),
    );
    table.note(
        "reference.omega_s",
        format!("{REFERENCE_OMEGA_S} (fit 50..=1000)"),
    );
    let mut results = Vec::new();
    for entry in spec.roster.iter().filter(|e| e.is_dulqa()) {
        if let SolverSpec::Dulqa { per_size, .. } = entry {
            for &n in &spec.sizes {
                if !per_size.contains_key(&n) {
                    table.note(format!("shared_checkpoint.{}.n{n}", entry.label()), "true");
                }
            }
        }
        let mut rows = Vec::new();
        for &n in &spec.sizes {
            let insts = (0..spec.instances)
                .map(|k| spec.test_instance(n, k))
                .collect::<Result<Vec<_>>>()?;
            let solver = entry.resolve(&insts[0], spec.tau, &spec.tune_settings(n, 0, spec.tau))?;
            let jobs: Vec<(usize, usize)> = (0..spec.instances)
                .flat_map(|k| (0..spec.restarts).map(move |r| (k, r)))
                .collect();
            let energies = jobs
                .par_iter()
                .map(|&(k, r)| solver.final_energy(&insts[k], &spec.restart_point(n, k, r)))
                .collect::<Result<Vec<f64>>>()?;
            let minima: Vec<f64> = energies
                .chunks(spec.restarts)
                .map(|c| c.iter().copied().fold(f64::INFINITY, f64::min))
                .collect();
            let gs = if spec.exact_gs {
                Some(
                    insts
                        .par_iter()
                        .map(|i| brute_force_ground_state(i).map(|g| g.energy / n as f64))
                        .collect::<Result<Vec<f64>>>()?,
                )
            } else {
                None
            };
            let row = scaling_row(n, &minima, gs.as_deref());
            table.push(vec![
                entry.label().into(),
                n.into(),
                spec.tau.into(),
                row.instances.into(),
                spec.restarts.into(),
                row.mean_e_ising.into(),
                row.sd_e_ising.into(),
                row.residual.into(),
            ]);
            rows.push(row);
        }
        let result = fit_scaling(entry.label(), rows, spec.residual_fit, spec.sd_fit);
        for (name, fit) in [("omega", &result.omega), ("omega_s", &result.omega_s)] {
            let value = match fit {
                Ok(f) => format!(
                    "{} prefactor={} r2={} range={}..={}",
                    crate::io::fmt_real(f.exponent),
                    crate::io::fmt_real(f.prefactor),
                    crate::io::fmt_real(f.r_squared),
                    f.range.0,
                    f.range.1
                ),
                Err(e) => format!("unavailable ({e})"),
            };
            table.note(format!("fit.{}.{name}", result.label), value);
        }
        results.push(result);
    }
    Ok(ScalingReport { results, table })
}

/// Reference column value for step `t` of a `τ`-step anneal.
pub fn transverse_reference(t: usize, tau: usize) -> f64 {
    -(1.0 - anneal_s(t.min(tau), tau))
}
