//! Regression values, rollout consistency, training and tuning sanity, and
//! properties of the experiment harness.

use dulqa::bench::{
    generalization_experiment, mean, scaling_experiment, trajectory_experiment, ExperimentKind,
    ExperimentSpec, SolverSpec,
};
use dulqa::io::fmt_real;
use dulqa::ising::{brute_force_ground_state, generate_sk, ising_energy};
use dulqa::lqa::{cost, lqa_run, sign_readout, AnnealSchedule, RelaxedState};
use dulqa::rng::{seeded_stream, Purpose};
use dulqa::search::{gd_objective, tune_lqa_gd, TuneSettings};
use dulqa::train::{init_w0, loss, make_batch, Batch, BatchItem, Strategy, TrainConfig, Trainer};
use rand::Rng;
use sha2::{Digest, Sha256};

fn record_hash(run: &dulqa::lqa::Rollout) -> String {
    let mut h = Sha256::new();
    for o in &run.record.steps {
        h.update(format!(
            "{},{},{},{}\n",
            o.t,
            fmt_real(o.s),
            fmt_real(o.e_w_per_spin),
            fmt_real(o.e_ising_per_spin)
        ));
    }
    hex::encode(h.finalize())
}

#[test]
fn golden_rollout_n50() {
    let inst = generate_sk(50, 2024).unwrap();
    let w0 = init_w0(50, 0.5, &mut seeded_stream(77, Purpose::Restart));
    let sched = AnnealSchedule::constant(20, 0.1, 1.0).unwrap();
    let run = lqa_run(&inst, &w0, &sched, false).unwrap();
    assert_eq!(run.record.steps.len(), 22);
    assert_eq!(
        record_hash(&run),
        "a8e99423f6bbd4d90848f33a4272e63745eb99d7b6ee2ee61ea791119d13217e"
    );
    let last = run.record.final_step();
    assert_eq!(last.e_w_per_spin, -8.245082065846923e-1);
    assert_eq!(last.e_ising_per_spin, -1.05680624877923e0);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let again = pool.install(|| lqa_run(&inst, &w0, &sched, false).unwrap());
    assert_eq!(again, run);
}

#[test]
fn golden_loss_n50_tau5() {
    let mut c = TrainConfig::reference(Strategy::Ensemble, 99);
    c.n = 50;
    c.tau = 5;
    c.batch_size = 4;
    c.n_epoch = 1;
    let b = make_batch(&c, 0).unwrap();
    let sched = AnnealSchedule::new(
        vec![0.1, 0.15, 0.2, 0.15, 0.1, 0.05],
        vec![1.0, 1.2, 0.9, 1.1, 1.0, 0.8],
    )
    .unwrap();
    assert_eq!(loss(&b, &sched, 5).unwrap(), -9.717654023183243e0);
}

#[test]
fn saturated_state_cost_equals_ising_energy() {
    let mut rng = seeded_stream(3, Purpose::SelfTest);
    for seed in 0..5 {
        let inst = generate_sk(40, seed).unwrap();
        let w: Vec<f64> = (0..40)
            .map(|_| if rng.random::<bool>() { 10.0 } else { -10.0 })
            .collect();
        let e = ising_energy(&inst, &sign_readout(&w)).unwrap();
        let c = cost(&RelaxedState::new(w), &inst, 1.0, 1.0).unwrap();
        assert!((e - c).abs() <= 1e-4 * 40.0, "{e} vs {c}");
    }
}

#[test]
fn readout_never_beats_ground_state_n16() {
    let sched = AnnealSchedule::constant(20, 0.2, 1.0).unwrap();
    for seed in 0..4 {
        let inst = generate_sk(16, 500 + seed).unwrap();
        let gs = brute_force_ground_state(&inst).unwrap().energy;
        let mut rng = seeded_stream(seed, Purpose::Restart);
        for _ in 0..10 {
            let w0 = init_w0(16, 0.5, &mut rng);
            let w = dulqa::lqa::lqa_final_state(&inst, &w0, &sched).unwrap();
            assert!(ising_energy(&inst, &sign_readout(&w)).unwrap() >= gs - 1e-12);
        }
    }
}

#[test]
fn training_does_not_hurt() {
    let config = TrainConfig {
        n: 50,
        tau: 10,
        n_epoch: 100,
        batch_size: 20,
        eta0: 0.1,
        gamma0: 1.0,
        f: 0.5,
        outer_lr: 1e-3,
        strategy: Strategy::OneInstance,
        master_seed: 8,
        reset_moments: true,
    };
    let trainer = Trainer::new(config.clone()).unwrap();
    let inst = trainer.source().fixed_instance().unwrap().clone();
    let initial = trainer.theta().schedule();
    let trained = trainer.finish().unwrap().theta.schedule();
    let mut rng = seeded_stream(1234, Purpose::Restart);
    let held = Batch {
        items: (0..40)
            .map(|_| BatchItem {
                inst: inst.clone(),
                w0: init_w0(50, 0.5, &mut rng),
            })
            .collect(),
    };
    let before = loss(&held, &initial, 10).unwrap();
    let after = loss(&held, &trained, 10).unwrap();
    assert!(after <= before, "trained {after} vs initial {before}");
}

#[test]
fn tuned_eta_beats_upper_edge() {
    let inst = generate_sk(50, 31).unwrap();
    let settings = TuneSettings::gd(20, 20, 50, 6);
    let tuned = tune_lqa_gd(&[&inst], &settings).unwrap();
    let edge = gd_objective(&[&inst], &settings, 10.0).unwrap();
    assert!(tuned.search.best_objective <= edge);
    assert_eq!(
        gd_objective(&[&inst], &settings, tuned.best).unwrap(),
        tuned.search.best_objective
    );
}

fn small_spec(kind: ExperimentKind) -> ExperimentSpec {
    let mut spec = ExperimentSpec::new(kind, 17);
    spec.sizes = vec![20];
    spec.tau = 8;
    spec.taus = vec![8];
    spec.restarts = 6;
    spec.tune_budget = 4;
    spec.tune_restarts = 3;
    spec.roster = vec![
        SolverSpec::dulqa("c", AnnealSchedule::constant(8, 0.3, 1.0).unwrap()),
        SolverSpec::LqaGd { eta: None },
        SolverSpec::LqaAdam {
            step_size: Some(0.05),
        },
    ];
    spec
}

#[test]
fn single_restart_has_zero_spread() {
    let mut spec = small_spec(ExperimentKind::Trajectory);
    spec.restarts = 1;
    let r = trajectory_experiment(&spec).unwrap();
    for s in &r.solvers {
        assert!(s.e_w_sd.iter().chain(&s.e_ising_sd).all(|&v| v == 0.0));
    }
}

#[test]
fn initial_variational_energy_is_transverse_mean() {
    let mut spec = small_spec(ExperimentKind::Trajectory);
    spec.sizes = vec![100];
    spec.restarts = 50;
    let r = trajectory_experiment(&spec).unwrap();
    let per_spin: Vec<f64> = (0..50)
        .map(|k| {
            let st = RelaxedState::new(spec.restart_point(100, 0, k));
            -st.x().iter().sum::<f64>() / 100.0
        })
        .collect();
    // E[cos(π/2·tanh w)] for w ~ Unif[−1/2, 1/2], by Simpson's rule
    let m = 2000;
    let expect = -(0..=m)
        .map(|i| {
            let w = -0.5 + i as f64 / m as f64;
            let wt = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            wt * (std::f64::consts::FRAC_PI_2 * w.tanh()).cos()
        })
        .sum::<f64>()
        / (3.0 * m as f64);
    let se = dulqa::bench::population_sd(&per_spin) / (50f64).sqrt();
    for s in &r.solvers {
        assert!((s.e_w_mean[0] - mean(&per_spin)).abs() < 1e-12);
        assert!(
            (s.e_w_mean[0] - expect).abs() < 1e-3 + 4.0 * se,
            "{} vs {expect}",
            s.e_w_mean[0]
        );
    }
}

#[test]
fn generalization_single_instance_and_double_size() {
    let mut spec = small_spec(ExperimentKind::Generalization);
    spec.sizes = vec![20, 40];
    spec.instances = 1;
    let r = generalization_experiment(&spec).unwrap();
    assert_eq!(r.series.len(), 6);
    assert!(r.series.iter().all(|s| s.sd.iter().all(|&v| v == 0.0)));
    assert!(r.series.iter().any(|s| s.n == 40 && s.label == "dulqa_c"));
}

#[test]
fn scaling_minima_bound_exact_ground_states() {
    let mut spec = small_spec(ExperimentKind::Scaling);
    spec.sizes = vec![10, 14];
    spec.instances = 4;
    spec.exact_gs = true;
    spec.residual_fit = (10, 14);
    spec.sd_fit = (10, 14);
    let r = scaling_experiment(&spec).unwrap();
    assert_eq!(r.results.len(), 1);
    for row in &r.results[0].rows {
        assert!(row.residual >= 0.0);
        assert!(row.sd_e_ising >= 0.0);
    }
}

#[test]
fn experiment_tables_ignore_thread_count() {
    let spec = small_spec(ExperimentKind::Trajectory);
    let prov = dulqa::io::Provenance::seeded(17);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| trajectory_experiment(&spec).unwrap().table.to_csv(&prov))
    };
    assert_eq!(run(1), run(5));
}
