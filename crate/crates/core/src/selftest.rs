//! Self-test suite: finite-difference checks of every analytic derivative,
//! of the adjoint schedule gradients, and the exhaustive ground-state bound.

use std::sync::Arc;

use rand::Rng;

use crate::error::Result;
use crate::ising::{brute_force_ground_state, generate_sk, ising_energy, IsingInstance};
use crate::lqa::{
    cost, cost_dgamma, cost_grad_dgamma, cost_gradient, cost_hvp, lqa_adam_final_state,
    lqa_final_state, sign_readout, AnnealSchedule, RelaxedState,
};
use crate::rng::{Purpose, RngContract, Stream, StreamKey};
use crate::train::{backward, init_w0, loss, unroll, Batch, BatchItem};

/// Worst error of one family of checks against its tolerance.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        self.worst < self.tolerance
    }
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {}: {} cases, worst {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.cases,
            self.worst,
            self.tolerance
        )
    }
}

/// `‖a − b‖∞ / ‖b‖∞`.
pub fn max_norm_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let den = b.iter().map(|y| y.abs()).fold(0.0, f64::max);
    num / den.max(f64::MIN_POSITIVE)
}

/// Per-entry `|a − b| / max(|b|, 1e-3·‖b‖∞)`. The floor keeps entries that
/// vanish identically (`dL/dγ(0)` acts at `s = 0`) from dividing by noise.
pub fn entrywise_rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().map(|v| v.abs()).fold(0.0, f64::max);
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-3 * scale).max(f64::MIN_POSITIVE))
        .fold(0.0, f64::max)
}

fn stream(seed: u64, item: usize) -> Stream {
    RngContract::new(seed).stream(StreamKey::new(Purpose::SelfTest).item(item as u64))
}

fn with_random_fields(inst: IsingInstance, rng: &mut Stream) -> Result<IsingInstance> {
    let n = inst.n();
    let j: Vec<f64> = (0..n * n).map(|k| inst.coupling(k / n, k % n)).collect();
    let h = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    IsingInstance::new(n, j, h)
}

fn central<F: Fn(f64) -> Result<f64>>(f: F, h: f64) -> Result<f64> {
    Ok((f(h)? - f(-h)?) / (2.0 * h))
}

/// Gradient, HVP, `∂∇C/∂γ` and `∂C/∂γ` against central differences on
/// `cases` random `(J, h, w, s, γ)` tuples of size `n`.
pub fn derivative_checks(cases: usize, n: usize, seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut worst = [0.0f64; 4];
    for c in 0..cases {
        let mut rng = stream(seed, c);
        let inst = with_random_fields(generate_sk(n, rng.random())?, &mut rng)?;
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s: f64 = rng.random_range(0.0..=1.0);
        let gamma: f64 = rng.random_range(0.1..5.0);
        let st = RelaxedState::new(w.clone());
        let shifted = |dir: &[f64], h: f64| {
            RelaxedState::new(w.iter().zip(dir).map(|(a, b)| a + h * b).collect())
        };

        let g = cost_gradient(&st, &inst, s, gamma)?;
        let fd = (0..n)
            .map(|i| {
                let mut e = vec![0.0; n];
                e[i] = 1.0;
                central(|h| cost(&shifted(&e, h), &inst, s, gamma), 1e-5)
            })
            .collect::<Result<Vec<_>>>()?;
        worst[0] = worst[0].max(max_norm_rel_err(&g, &fd));

        let hv = cost_hvp(&st, &inst, s, gamma, &v)?;
        let eps = 1e-5;
        let gp = cost_gradient(&shifted(&v, eps), &inst, s, gamma)?;
        let gm = cost_gradient(&shifted(&v, -eps), &inst, s, gamma)?;
        let fd: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        worst[1] = worst[1].max(max_norm_rel_err(&hv, &fd));

        let eps = 1e-6;
        let gp = cost_gradient(&st, &inst, s, gamma + eps)?;
        let gm = cost_gradient(&st, &inst, s, gamma - eps)?;
        let fd: Vec<f64> = gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| (a - b) / (2.0 * eps))
            .collect();
        let an = cost_grad_dgamma(&st, &inst, s, gamma)?;
        if fd.iter().any(|x| *x != 0.0) {
            worst[2] = worst[2].max(max_norm_rel_err(&an, &fd));
        } else {
            worst[2] = worst[2].max(an.iter().map(|x| x.abs()).fold(0.0, f64::max));
        }

        let fd = central(|h| cost(&st, &inst, s, gamma + h), 1e-4)?;
        let an = cost_dgamma(&st, &inst, s, gamma)?;
        let err = if fd == 0.0 {
            an.abs()
        } else {
            (an - fd).abs() / fd.abs()
        };
        worst[3] = worst[3].max(err);
    }
    let names = [
        "cost_gradient",
        "cost_hvp",
        "cost_grad_dgamma",
        "cost_dgamma",
    ];
    let tolerances = [1e-6, 1e-5, 1e-6, 1e-6];
    Ok((0..4)
        .map(|k| CheckOutcome {
            name: names[k],
            cases,
            worst: worst[k],
            tolerance: tolerances[k],
        })
        .collect())
}

fn perturbed(
    sched: &AnnealSchedule,
    gamma_entry: bool,
    t: usize,
    delta: f64,
) -> Result<AnnealSchedule> {
    let mut eta = sched.eta().to_vec();
    let mut gamma = sched.gamma().to_vec();
    if gamma_entry {
        gamma[t] += delta;
    } else {
        eta[t] += delta;
    }
    AnnealSchedule::new(eta, gamma)
}

/// Relative error of the adjoint schedule gradient of one random
/// `(n, τ, |D|)` configuration against central differences of the loss.
pub fn adjoint_check(n: usize, tau: usize, batch_size: usize, rng: &mut Stream) -> Result<f64> {
    let batch = Batch {
        items: (0..batch_size)
            .map(|_| {
                Ok(BatchItem {
                    inst: Arc::new(generate_sk(n, rng.random())?),
                    w0: init_w0(n, 0.5, rng),
                })
            })
            .collect::<Result<_>>()?,
    };
    let sched = AnnealSchedule::new(
        (0..=tau).map(|_| rng.random_range(0.05..0.4)).collect(),
        (0..=tau).map(|_| rng.random_range(0.5..2.0)).collect(),
    )?;
    let snaps = batch
        .items
        .iter()
        .map(|it| unroll(&it.inst, &it.w0, &sched))
        .collect::<Result<Vec<_>>>()?;
    let g = backward(&batch, &snaps, &sched)?;
    let h = 1e-5;
    let mut worst = 0.0f64;
    for (gamma_entry, analytic) in [(false, &g.d_eta), (true, &g.d_gamma)] {
        let fd = (0..=tau)
            .map(|t| {
                let lp = loss(&batch, &perturbed(&sched, gamma_entry, t, h)?, tau)?;
                let lm = loss(&batch, &perturbed(&sched, gamma_entry, t, -h)?, tau)?;
                Ok((lp - lm) / (2.0 * h))
            })
            .collect::<Result<Vec<_>>>()?;
        worst = worst.max(entrywise_rel_err(analytic, &fd));
    }
    Ok(worst)
}

/// `configs` random adjoint checks with `n ≤ 12`, `τ ≤ 6`, `|D| ≤ 3`.
pub fn adjoint_checks(configs: usize, seed: u64) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for c in 0..configs {
        let mut rng = stream(seed ^ 0x005e_edad, c);
        let n = rng.random_range(3..=12);
        let tau = rng.random_range(1..=6);
        let size = rng.random_range(1..=3);
        worst = worst.max(adjoint_check(n, tau, size, &mut rng)?);
    }
    Ok(CheckOutcome {
        name: "adjoint_backward",
        cases: configs,
        worst,
        tolerance: 1e-5,
    })
}

/// Largest amount by which any solver's read-out energy falls below the
/// exhaustive ground state, over `instances` random size-`n` instances.
pub fn ground_state_bound_check(
    instances: usize,
    n: usize,
    restarts: usize,
    seed: u64,
) -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let sched = AnnealSchedule::constant(20, 0.1, 1.0)?;
    for k in 0..instances {
        let mut rng = stream(seed ^ 0xb0_0d, k);
        let inst = generate_sk(n, rng.random())?;
        let gs = brute_force_ground_state(&inst)?.energy;
        for _ in 0..restarts {
            let w0 = init_w0(n, 0.5, &mut rng);
            for w in [
                lqa_final_state(&inst, &w0, &sched)?,
                lqa_adam_final_state(&inst, &w0, 20, 0.05, 1.0)?,
            ] {
                let e = ising_energy(&inst, &sign_readout(&w))?;
                worst = worst.max(gs - e);
            }
        }
    }
    Ok(CheckOutcome {
        name: "ground_state_bound",
        cases: instances * restarts * 2,
        worst,
        tolerance: 1e-9,
    })
}

/// The full suite run by `verify`.
pub fn run_suite(seed: u64) -> Result<Vec<CheckOutcome>> {
    let mut out = derivative_checks(100, 20, seed)?;
    out.push(adjoint_checks(20, seed)?);
    out.push(ground_state_bound_check(10, 14, 5, seed)?);
    Ok(out)
}
