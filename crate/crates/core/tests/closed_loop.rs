mod common;

use common::{random_instance, InstanceOptions};
use dsmpc::harness::{closed_loop_run, monte_carlo, violation_report, RunConfig, TrajectoryLog};
use dsmpc::mpc::{SampleMode, SolverChoice};
use dsmpc::network::ConstraintKind;
use dsmpc::solver::AdmmParams;
use dsmpc::tightening::TighteningTable;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn instance(seed: u64) -> common::Instance {
    random_instance(&mut ChaCha8Rng::seed_from_u64(seed), &InstanceOptions::default())
}

#[test]
fn zero_disturbance_from_the_origin_stays_at_rest() {
    let mut inst = random_instance(
        &mut ChaCha8Rng::seed_from_u64(1),
        &InstanceOptions {
            noise_std: 0.0,
            ..Default::default()
        },
    );
    inst.x0 = DVector::zeros(inst.model.state_dim());
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = vec![DVector::zeros(inst.model.disturbance_dim()); 20];
    let log = closed_loop_run(&inst.problem(&table, 6), &inst.x0, &w, &RunConfig { steps: 20, ..RunConfig::default() }).unwrap();
    for s in &log.steps {
        assert!(s.x.iter().chain(&s.u).all(|v| v.abs() < 1e-7), "t={} x={:?} u={:?}", s.t, s.x, s.u);
    }
}

#[test]
fn same_seeds_give_identical_logs() {
    let inst = instance(2);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let bank = inst.disturbance.generate_bank(30, 3, 9).unwrap();
    let cfg = RunConfig {
        steps: 15,
        cost_seed: 4,
        ..RunConfig::default()
    };
    let run = || -> Vec<TrajectoryLog> {
        monte_carlo(&inst.problem(&table, 6), &inst.x0, &bank, &cfg)
            .into_iter()
            .map(|r| r.unwrap())
            .collect()
    };
    assert_eq!(run(), run());
}

#[test]
fn sample_mode_leaves_the_error_path_unchanged() {
    let inst = instance(3);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = inst.disturbance.generate_bank(30, 1, 5).unwrap().trajectory(0);
    let p = inst.problem(&table, 6);
    let fresh = closed_loop_run(&p, &inst.x0, &w, &RunConfig { steps: 10, ..RunConfig::default() }).unwrap();
    let frozen = closed_loop_run(
        &p,
        &inst.x0,
        &w,
        &RunConfig {
            steps: 10,
            sample_mode: SampleMode::Frozen,
            ..RunConfig::default()
        },
    )
    .unwrap();
    for (a, b) in fresh.steps.iter().zip(&frozen.steps) {
        for (p, q) in a.e.iter().zip(&b.e) {
            assert!((p - q).abs() <= 1e-9);
        }
    }
}

#[test]
fn logged_quantities_satisfy_the_split() {
    let inst = instance(4);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = inst.disturbance.generate_bank(30, 1, 6).unwrap().trajectory(0);
    let log = closed_loop_run(&inst.problem(&table, 6), &inst.x0, &w, &RunConfig { steps: 20, ..RunConfig::default() }).unwrap();
    for s in &log.steps {
        for k in 0..s.x.len() {
            assert!((s.z[k] + s.e[k] - s.x[k]).abs() <= 1e-12);
        }
        for k in 0..s.u.len() {
            assert!((s.v[k] + s.pi[k] - s.u[k]).abs() <= 1e-12);
        }
    }
}

#[test]
fn admm_closed_loop_tracks_the_centralized_one() {
    let inst = instance(5);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = inst.disturbance.generate_bank(30, 1, 7).unwrap().trajectory(0);
    let p = inst.problem(&table, 6);
    let central = closed_loop_run(&p, &inst.x0, &w, &RunConfig { steps: 10, ..RunConfig::default() }).unwrap();
    let admm = closed_loop_run(
        &p,
        &inst.x0,
        &w,
        &RunConfig {
            steps: 10,
            solver: SolverChoice::Admm(AdmmParams {
                eps_abs: 1e-9,
                eps_rel: 1e-9,
                max_iters: 20_000,
                ..AdmmParams::default()
            }),
            ..RunConfig::default()
        },
    )
    .unwrap();
    assert_eq!(admm.metadata.solver, "admm");
    for (a, c) in admm.steps.iter().zip(&central.steps) {
        for (p, q) in a.x.iter().zip(&c.x) {
            assert!((p - q).abs() < 1e-5);
        }
    }
}

#[test]
fn logs_round_trip_through_json_and_csv() {
    let inst = instance(6);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = inst.disturbance.generate_bank(30, 1, 8).unwrap().trajectory(0);
    let log = closed_loop_run(&inst.problem(&table, 5), &inst.x0, &w, &RunConfig { steps: 5, ..RunConfig::default() }).unwrap();
    assert_eq!(TrajectoryLog::from_json(&log.to_json()).unwrap(), log);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    log.save(&path).unwrap();
    let csv = std::fs::read_to_string(&path).unwrap();
    assert!(csv.starts_with("t,quantity,i,value"));
    assert!(dir.path().join("run.csv.json").exists());
}

#[test]
fn infeasible_start_aborts_with_partial_log() {
    let mut inst = instance(7);
    inst.x0 = DVector::from_element(inst.model.state_dim(), 100.0);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let w = vec![DVector::zeros(inst.model.disturbance_dim()); 5];
    let err = closed_loop_run(&inst.problem(&table, 5), &inst.x0, &w, &RunConfig { steps: 5, ..RunConfig::default() }).unwrap_err();
    assert!(err.error.is_infeasible());
    assert!(err.partial.steps.is_empty());
}

#[test]
fn report_counts_actual_violations() {
    let inst = instance(8);
    let table = TighteningTable::zeros(&inst.constraints, 30);
    let bank = inst.disturbance.generate_bank(30, 4, 10).unwrap();
    let logs: Vec<TrajectoryLog> = monte_carlo(&inst.problem(&table, 5), &inst.x0, &bank, &RunConfig { steps: 8, ..RunConfig::default() })
        .into_iter()
        .map(|r| r.unwrap())
        .collect();
    let report = violation_report(&logs, &inst.constraints, 1.96);
    assert_eq!(report.runs, 4);
    let mut manual = 0;
    for log in &logs {
        for s in &log.steps {
            for c in inst.constraints.all().iter().filter(|c| c.kind == ConstraintKind::State) {
                if c.value(&s.x[inst.model.state_range(c.owner)]) > 1.0 {
                    manual += 1;
                }
            }
        }
    }
    assert!(report.total_violations(ConstraintKind::State) >= manual);
}
