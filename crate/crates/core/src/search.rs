//! Random-search tuning of the baseline LQA step sizes.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::ising::{ising_energy, IsingInstance};
use crate::lqa::{lqa_adam_final_state, lqa_final_state, sign_readout, AnnealSchedule};
use crate::rng::{Purpose, RngContract, StreamKey};
use crate::train::init_w0;

pub const DEFAULT_BUDGET: usize = 50;
pub const GD_BOUNDS: (f64, f64) = (1e-3, 10.0);
pub const ADAM_BOUNDS: (f64, f64) = (1e-4, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    Uniform,
    LogUniform,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub distribution: Distribution,
    pub lower: f64,
    pub upper: f64,
}

impl ParamSpec {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        match self.distribution {
            Distribution::Uniform => self.lower + u * (self.upper - self.lower),
            Distribution::LogUniform => {
                let (lo, hi) = (self.lower.ln(), self.upper.ln());
                (lo + u * (hi - lo)).exp()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidConfig(
                "search space has no parameters".into(),
            ));
        }
        for p in &params {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower < p.upper) {
                return Err(Error::InvalidConfig(format!(
                    "parameter {} needs finite lower < upper, got [{}, {}]",
                    p.name, p.lower, p.upper
                )));
            }
            if p.distribution == Distribution::LogUniform && p.lower <= 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "log-uniform parameter {} needs lower > 0",
                    p.name
                )));
            }
        }
        Ok(SearchSpace { params })
    }

    pub fn single(name: &str, distribution: Distribution, lower: f64, upper: f64) -> Result<Self> {
        SearchSpace::new(vec![ParamSpec {
            name: name.to_string(),
            distribution,
            lower,
            upper,
        }])
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }
}

/// Named parameter values in search-space order.
#[derive(Clone, Debug, PartialEq)]
pub struct Params(pub Vec<(String, f64)>);

impl Params {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub params: Params,
    /// Non-finite objective values are stored as `+∞`.
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SearchResult {
    pub best_params: Params,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

/// Evaluates `budget` i.i.d. draws from `space` and returns the minimizer
/// (lowest trial index on ties). Trial `i` draws from its own stream, so the
/// trial list does not depend on evaluation order.
pub fn random_search<F>(
    objective: F,
    space: &SearchSpace,
    budget: usize,
    seed: u64,
) -> Result<SearchResult>
where
    F: Fn(&Params) -> f64 + Sync,
{
    if budget < 1 {
        return Err(Error::InvalidConfig("search budget must be >= 1".into()));
    }
    let contract = RngContract::new(seed);
    let trials: Vec<Trial> = (0..budget)
        .into_par_iter()
        .map(|i| {
            let mut rng = contract.stream(StreamKey::new(Purpose::SearchTrial).item(i as u64));
            let params = Params(
                space
                    .params
                    .iter()
                    .map(|p| (p.name.clone(), p.sample(&mut rng)))
                    .collect(),
            );
            let value = objective(&params);
            Trial {
                params,
                objective: if value.is_finite() {
                    value
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();
    let mut best = 0;
    for (i, t) in trials.iter().enumerate() {
        if t.objective < trials[best].objective {
            best = i;
        }
    }
    Ok(SearchResult {
        best_params: trials[best].params.clone(),
        best_objective: trials[best].objective,
        trials,
    })
}

/// Settings shared by the baseline tuners.
#[derive(Clone, Debug, PartialEq)]
pub struct TuneSettings {
    pub tau: usize,
    pub restarts: usize,
    pub budget: usize,
    pub seed: u64,
    /// Half-width of the uniform initial points.
    pub f: f64,
    /// Log-uniform bounds of the tuned step size.
    pub bounds: (f64, f64),
}

impl TuneSettings {
    pub fn gd(tau: usize, restarts: usize, budget: usize, seed: u64) -> Self {
        TuneSettings {
            tau,
            restarts,
            budget,
            seed,
            f: 0.5,
            bounds: GD_BOUNDS,
        }
    }

    pub fn adam(tau: usize, restarts: usize, budget: usize, seed: u64) -> Self {
        TuneSettings {
            bounds: ADAM_BOUNDS,
            ..TuneSettings::gd(tau, restarts, budget, seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if self.restarts < 1 {
            return Err(Error::InvalidConfig("tuning needs restarts >= 1".into()));
        }
        Ok(())
    }

    /// Initial points shared by every trial: instance `k`, restart `r`.
    fn initial_points(&self, instances: &[&IsingInstance]) -> Vec<Vec<Vec<f64>>> {
        let contract = RngContract::new(self.seed);
        instances
            .iter()
            .enumerate()
            .map(|(k, inst)| {
                (0..self.restarts)
                    .map(|r| {
                        let key = StreamKey::new(Purpose::TuneRestart)
                            .item(k as u64)
                            .restart(r as u64);
                        init_w0(inst.n(), self.f, &mut contract.stream(key))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TuneResult {
    pub name: &'static str,
    pub best: f64,
    pub search: SearchResult,
}

fn mean_final_energy<F>(instances: &[&IsingInstance], starts: &[Vec<Vec<f64>>], run: F) -> f64
where
    F: Fn(&IsingInstance, &[f64]) -> Result<Vec<f64>>,
{
    let mut total = 0.0;
    let mut count = 0usize;
    for (inst, ws) in instances.iter().zip(starts) {
        for w0 in ws {
            let Ok(w) = run(inst, w0) else {
                return f64::INFINITY;
            };
            let e = ising_energy(inst, &sign_readout(&w)).expect("matching sizes");
            total += e / inst.n() as f64;
            count += 1;
        }
    }
    total / count as f64
}

/// Tunes the constant GD step size `η` (with `γ = 1`) to minimize the mean
/// final `E_ising/N` over instances and restarts.
pub fn tune_lqa_gd(instances: &[&IsingInstance], settings: &TuneSettings) -> Result<TuneResult> {
    settings.validate()?;
    let space = SearchSpace::single(
        "eta",
        Distribution::LogUniform,
        settings.bounds.0,
        settings.bounds.1,
    )?;
    let starts = settings.initial_points(instances);
    let tau = settings.tau;
    let search = random_search(
        |p| {
            let eta = p.get("eta").expect("eta");
            let Ok(sched) = AnnealSchedule::constant(tau, eta, 1.0) else {
                return f64::INFINITY;
            };
            mean_final_energy(instances, &starts, |inst, w0| {
                lqa_final_state(inst, w0, &sched)
            })
        },
        &space,
        settings.budget,
        settings.seed,
    )?;
    Ok(TuneResult {
        name: "eta",
        best: search.best_params.get("eta").expect("eta"),
        search,
    })
}

/// Tunes the Adam step size (with `γ = 1`) the same way.
pub fn tune_lqa_adam(instances: &[&IsingInstance], settings: &TuneSettings) -> Result<TuneResult> {
    settings.validate()?;
    let space = SearchSpace::single(
        "step_size",
        Distribution::LogUniform,
        settings.bounds.0,
        settings.bounds.1,
    )?;
    let starts = settings.initial_points(instances);
    let tau = settings.tau;
    let search = random_search(
        |p| {
            let step = p.get("step_size").expect("step_size");
            mean_final_energy(instances, &starts, |inst, w0| {
                lqa_adam_final_state(inst, w0, tau, step, 1.0)
            })
        },
        &space,
        settings.budget,
        settings.seed,
    )?;
    Ok(TuneResult {
        name: "step_size",
        best: search.best_params.get("step_size").expect("step_size"),
        search,
    })
}

/// Mean final `E_ising/N` of constant-step GD over `settings`' restarts.
pub fn gd_objective(
    instances: &[&IsingInstance],
    settings: &TuneSettings,
    eta: f64,
) -> Result<f64> {
    settings.validate()?;
    let sched = AnnealSchedule::constant(settings.tau, eta, 1.0)?;
    let starts = settings.initial_points(instances);
    Ok(mean_final_energy(instances, &starts, |inst, w0| {
        lqa_final_state(inst, w0, &sched)
    }))
}

/// Mean final `E_ising/N` of LQA-Adam over `settings`' restarts.
pub fn adam_objective(
    instances: &[&IsingInstance],
    settings: &TuneSettings,
    step: f64,
) -> Result<f64> {
    settings.validate()?;
    let starts = settings.initial_points(instances);
    Ok(mean_final_energy(instances, &starts, |inst, w0| {
        lqa_adam_final_state(inst, w0, settings.tau, step, 1.0)
    }))
}
