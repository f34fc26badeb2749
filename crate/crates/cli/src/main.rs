//! `dulqa` command-line tool: instance generation, rollouts, schedule
//! training, baseline tuning, experiments and the self-test suite.

mod spec_file;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use dulqa::bench::{
    crossover_experiment, generalization_experiment, mean, population_sd, scaling_experiment,
    trajectory_experiment, ExperimentKind, REFERENCE_OMEGA, REFERENCE_OMEGA_S,
};
use dulqa::io::{
    fmt_real, hash_file, load_checkpoint, load_instance, parse_train_state, sha256_hex,
    write_checkpoint, write_instance, write_loss_log, write_text, write_train_state,
    write_trial_log, Provenance, Table, TOOL_VERSION,
};
use dulqa::ising::generate_sk;
use dulqa::lqa::{lqa_adam_run, lqa_run, AnnealSchedule, Rollout};
use dulqa::rng::{Purpose, RngContract, StreamKey};
use dulqa::search::{tune_lqa_adam, tune_lqa_gd, TuneSettings};
use dulqa::selftest::run_suite;
use dulqa::train::{init_w0, Trainer};

const EXIT_VALIDATION: u8 = 2;
const EXIT_DIVERGENCE: u8 = 3;
const EXIT_SELFTEST: u8 = 4;

#[derive(Parser)]
#[command(
    name = "dulqa",
    version,
    about = "Local quantum annealing with trained schedules"
)]
struct Cli {
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Gd,
    Adam,
}

#[derive(Subcommand)]
enum Command {
    /// Write seeded SK instances `sk_n<n>_s<seed+i>.txt`.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Roll out LQA from seeded restarts and write per-step energies.
    Run {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        tau: usize,
        #[arg(long, default_value_t = 1)]
        restarts: usize,
        #[arg(long)]
        seed: u64,
        /// Constant step size.
        #[arg(long, conflicts_with_all = ["checkpoint", "adam_step"])]
        eta: Option<f64>,
        /// Constant coupling strength (with `--eta` or `--adam-step`).
        #[arg(long, default_value_t = 1.0, conflicts_with = "checkpoint")]
        gamma: f64,
        /// Trained schedule file.
        #[arg(long, conflicts_with = "adam_step")]
        checkpoint: Option<PathBuf>,
        /// Run LQA-Adam with this step size.
        #[arg(long)]
        adam_step: Option<f64>,
        /// Start every restart at `w = 0`.
        #[arg(long)]
        zero_init: bool,
        #[arg(long, default_value_t = 0.5)]
        f: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a schedule from a TOML config; resumes from its state file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Stop after this many completed stages (state file required).
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Random-search the step size of a baseline on given instances.
    Tune {
        #[arg(long, value_enum)]
        solver: Baseline,
        #[arg(long, required = true, num_args = 1..)]
        instance: Vec<PathBuf>,
        #[arg(long)]
        tau: usize,
        #[arg(long, default_value_t = 20)]
        restarts: usize,
        #[arg(long, default_value_t = dulqa::search::DEFAULT_BUDGET)]
        budget: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an experiment described by a TOML spec.
    Bench {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Finite-difference and exhaustive-search self-tests.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
        {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<dulqa::Error>()) {
        Some(d) if d.is_divergence() => EXIT_DIVERGENCE,
        _ => EXIT_VALIDATION,
    }
}

fn dispatch(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Generate {
            n,
            count,
            seed,
            out_dir,
        } => generate(n, count, seed, &out_dir)?,
        Command::Run {
            instance,
            tau,
            restarts,
            seed,
            eta,
            gamma,
            checkpoint,
            adam_step,
            zero_init,
            f,
            out,
        } => {
            let solver = match (eta, checkpoint, adam_step) {
                (Some(eta), None, None) => {
                    RunSolver::Gd(AnnealSchedule::constant(tau, eta, gamma)?)
                }
                (None, Some(p), None) => {
                    let sched = load_checkpoint(&p)?;
                    if sched.tau() != tau {
                        bail!(dulqa::Error::InvalidConfig(format!(
                            "checkpoint {} has tau {} but --tau is {tau}",
                            p.display(),
                            sched.tau()
                        )));
                    }
                    RunSolver::Checkpoint(sched, hash_file(&p)?)
                }
                (None, None, Some(step)) => RunSolver::Adam { tau, step, gamma },
                _ => bail!(dulqa::Error::InvalidConfig(
                    "give exactly one of --eta, --checkpoint or --adam-step".into()
                )),
            };
            run(&RunArgs {
                instance,
                restarts,
                seed,
                solver,
                zero_init,
                f,
                out,
            })?
        }
        Command::Train { config, stop_after } => train(&config, stop_after)?,
        Command::Tune {
            solver,
            instance,
            tau,
            restarts,
            budget,
            seed,
            out,
        } => tune(solver, &instance, tau, restarts, budget, seed, &out)?,
        Command::Bench { spec, out_dir } => bench(&spec, &out_dir)?,
        Command::Verify { seed } => return verify(seed),
    }
    Ok(ExitCode::SUCCESS)
}

fn generate(n: usize, count: usize, seed: u64, out_dir: &Path) -> Result<()> {
    for i in 0..count as u64 {
        let s = seed + i;
        let path = out_dir.join(format!("sk_n{n}_s{s}.txt"));
        write_text(&path, &write_instance(&generate_sk(n, s)?))?;
        println!("{}", path.display());
    }
    Ok(())
}

enum RunSolver {
    Gd(AnnealSchedule),
    Checkpoint(AnnealSchedule, String),
    Adam { tau: usize, step: f64, gamma: f64 },
}

struct RunArgs {
    instance: PathBuf,
    restarts: usize,
    seed: u64,
    solver: RunSolver,
    zero_init: bool,
    f: f64,
    out: PathBuf,
}

fn run(args: &RunArgs) -> Result<()> {
    use rayon::prelude::*;
    if args.restarts < 1 {
        bail!(dulqa::Error::InvalidConfig(
            "--restarts must be >= 1".into()
        ));
    }
    let inst = load_instance(&args.instance)?;
    let contract = RngContract::new(args.seed);
    let starts: Vec<Vec<f64>> = (0..args.restarts)
        .map(|r| {
            if args.zero_init {
                vec![0.0; inst.n()]
            } else {
                let key = StreamKey::new(Purpose::Restart).restart(r as u64);
                init_w0(inst.n(), args.f, &mut contract.stream(key))
            }
        })
        .collect();
    let runs: Vec<Rollout> = starts
        .par_iter()
        .map(|w0| match &args.solver {
            RunSolver::Gd(s) | RunSolver::Checkpoint(s, _) => lqa_run(&inst, w0, s, false),
            RunSolver::Adam { tau, step, gamma } => lqa_adam_run(&inst, w0, *tau, *step, *gamma),
        })
        .collect::<dulqa::Result<_>>()?;

    let mut prov = Provenance::seeded(args.seed).input("instance", hash_file(&args.instance)?);
    prov = match &args.solver {
        RunSolver::Gd(s) => prov
            .note("solver", "lqa_gd")
            .note("eta", fmt_real(s.eta()[0]))
            .note("gamma", fmt_real(s.gamma()[0])),
        RunSolver::Checkpoint(_, h) => prov.note("solver", "dulqa").input("checkpoint", h.clone()),
        RunSolver::Adam { step, gamma, .. } => prov
            .note("solver", "lqa_adam")
            .note("step_size", fmt_real(*step))
            .note("gamma", fmt_real(*gamma)),
    };
    if args.zero_init {
        prov = prov.note("init", "zero");
    }
    let mut table = Table::new(&["row", "t", "s", "e_w_per_spin", "e_ising_per_spin"]);
    for (r, run) in runs.iter().enumerate() {
        for o in &run.record.steps {
            table.push(vec![
                r.into(),
                o.t.into(),
                o.s.into(),
                o.e_w_per_spin.into(),
                o.e_ising_per_spin.into(),
            ]);
        }
    }
    let steps = runs[0].record.steps.len();
    for (label, stat) in [
        ("mean", mean as fn(&[f64]) -> f64),
        ("sd", population_sd),
        ("min", |x: &[f64]| {
            x.iter().copied().fold(f64::INFINITY, f64::min)
        }),
    ] {
        for t in 0..steps {
            let ew: Vec<f64> = runs
                .iter()
                .map(|r| r.record.steps[t].e_w_per_spin)
                .collect();
            let ei: Vec<f64> = runs
                .iter()
                .map(|r| r.record.steps[t].e_ising_per_spin)
                .collect();
            let o = &runs[0].record.steps[t];
            table.push(vec![
                label.into(),
                o.t.into(),
                o.s.into(),
                stat(&ew).into(),
                stat(&ei).into(),
            ]);
        }
    }
    write_text(&args.out, &table.to_csv(&prov))?;
    let last: Vec<f64> = runs
        .iter()
        .map(|r| r.record.final_step().e_ising_per_spin)
        .collect();
    println!(
        "final E_ising/N: mean {} min {}",
        fmt_real(mean(&last)),
        fmt_real(last.iter().copied().fold(f64::INFINITY, f64::min))
    );
    Ok(())
}

fn train(config_path: &Path, stop_after: Option<usize>) -> Result<()> {
    let file = spec_file::load_train(config_path)?;
    if stop_after.is_some() && file.state.is_none() {
        bail!(dulqa::Error::InvalidConfig(
            "--stop-after needs output.state in the config".into()
        ));
    }
    let config = file.config.clone();
    let mut trainer = match &file.state {
        Some(p) if p.exists() => {
            let text = dulqa::io::read_text(p)?;
            let t = parse_train_state(&text, config.clone(), &file.hash)
                .with_context(|| format!("resuming from {}", p.display()))?;
            eprintln!("resuming after stage {}", t.completed_stage());
            t
        }
        _ => Trainer::new(config.clone())?,
    };
    let prov = Provenance::seeded(config.master_seed)
        .input("config", file.hash.clone())
        .note("strategy", config.strategy.to_string())
        .note("n", config.n.to_string())
        .note("tau", config.tau.to_string());
    while trainer.run_stage()? {
        let stage = trainer.completed_stage();
        if let Some(p) = &file.state {
            write_text(p, &write_train_state(&trainer, &file.hash, &prov))?;
        }
        let last = trainer.log().last().map_or(f64::NAN, |e| e.loss);
        eprintln!("stage {stage}/{}: loss {}", config.tau, fmt_real(last));
        if stop_after.is_some_and(|k| stage >= k) && !trainer.is_done() {
            eprintln!("stopped after stage {stage}");
            return Ok(());
        }
    }
    write_text(
        &file.checkpoint,
        &write_checkpoint(&trainer.theta().schedule(), &prov),
    )?;
    write_text(&file.loss_log, &write_loss_log(trainer.log(), &prov))?;
    println!("{}", file.checkpoint.display());
    Ok(())
}

fn tune(
    solver: Baseline,
    paths: &[PathBuf],
    tau: usize,
    restarts: usize,
    budget: usize,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let insts = paths
        .iter()
        .map(|p| load_instance(p))
        .collect::<dulqa::Result<Vec<_>>>()?;
    let refs: Vec<_> = insts.iter().collect();
    let (name, result) = match solver {
        Baseline::Gd => (
            "lqa_gd",
            tune_lqa_gd(&refs, &TuneSettings::gd(tau, restarts, budget, seed))?,
        ),
        Baseline::Adam => (
            "lqa_adam",
            tune_lqa_adam(&refs, &TuneSettings::adam(tau, restarts, budget, seed))?,
        ),
    };
    let mut prov = Provenance::seeded(seed)
        .note("solver", name)
        .note("tau", tau.to_string())
        .note("best", format!("{}={}", result.name, fmt_real(result.best)))
        .note("best_objective", fmt_real(result.search.best_objective));
    for (i, p) in paths.iter().enumerate() {
        prov = prov.input(format!("instance{i}"), hash_file(p)?);
    }
    write_text(out, &write_trial_log(&result.search, &prov))?;
    println!("{}={}", result.name, fmt_real(result.best));
    Ok(())
}

fn bench(spec_path: &Path, out_dir: &Path) -> Result<()> {
    let file = spec_file::load_bench(spec_path)?;
    let spec = &file.spec;
    let mut prov = Provenance::seeded(spec.master_seed).note("experiment", spec.kind.name());
    for (label, hash) in &file.inputs {
        prov = prov.input(label.clone(), hash.clone());
    }
    let tables: Vec<(String, Table)> = match spec.kind {
        ExperimentKind::Trajectory => {
            vec![("trajectory.csv".into(), trajectory_experiment(spec)?.table)]
        }
        ExperimentKind::Crossover => {
            vec![("crossover.csv".into(), crossover_experiment(spec)?.table)]
        }
        ExperimentKind::Generalization => {
            vec![(
                "generalization.csv".into(),
                generalization_experiment(spec)?.table,
            )]
        }
        ExperimentKind::Scaling => vec![("scaling.csv".into(), scaling_experiment(spec)?.table)],
    };
    let mut manifest = prov.header();
    let _ = writeln!(manifest, "experiment={}", spec.kind.name());
    let _ = writeln!(manifest, "master_seed={}", spec.master_seed);
    for (label, hash) in &file.inputs {
        let _ = writeln!(manifest, "input.{label}=sha256:{hash}");
    }
    let _ = writeln!(manifest, "reference.omega={REFERENCE_OMEGA}");
    let _ = writeln!(manifest, "reference.omega_s={REFERENCE_OMEGA_S}");
    let _ = writeln!(
        manifest,
        "reference.e_gs_per_spin={}",
        dulqa::bench::E_GS_PER_SPIN
    );
    for (name, table) in &tables {
        let csv = table.to_csv(&prov);
        write_text(&out_dir.join(name), &csv)?;
        let _ = writeln!(
            manifest,
            "output.{name}=sha256:{}",
            sha256_hex(csv.as_bytes())
        );
        println!("{}", out_dir.join(name).display());
    }
    write_text(&out_dir.join("manifest.txt"), &manifest)?;
    Ok(())
}

fn verify(seed: u64) -> Result<ExitCode> {
    let outcomes = run_suite(seed)?;
    println!("# {TOOL_VERSION} self-test, seed {seed}");
    for o in &outcomes {
        println!("{o}");
    }
    Ok(if outcomes.iter().all(|o| o.passed()) {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_SELFTEST)
    })
}
