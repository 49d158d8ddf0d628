// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{random_state, rng};
use decoshield::control::{effective_dynamics, tune_amplitude, ControlSchedule, Kick};
use decoshield::exactsim::*;
use decoshield::linalg::*;
use decoshield::reservoir::{discretize_modes, FormFactor, ModeSet};
use decoshield::system::SystemModel;
use decoshield::Error;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

const PERIOD: f64 = 0.1;

fn modes(n: usize) -> ModeSet {
    discretize_modes(&FormFactor::default_at(1.0).unwrap(), n, 6.0).unwrap()
}

fn tuned() -> ControlSchedule {
    let model = SystemModel::spin_fermion();
    let base = ControlSchedule::sinusoidal(PERIOD, 7.0, pauli_z()).unwrap();
    let mu = tune_amplitude(&model, &base, (5.0, 10.0)).unwrap().mu;
    base.with_amplitude(mu).unwrap()
}

fn echo() -> ControlSchedule {
    let kicks = vec![
        Kick { alpha: 0.25, c: std::f64::consts::FRAC_PI_2 },
        Kick { alpha: 0.75, c: -std::f64::consts::FRAC_PI_2 },
    ];
    ControlSchedule::bang_bang(PERIOD, kicks, pauli_z()).unwrap()
}

fn plus_state() -> CMatrix {
    CMatrix::from_element(2, 2, c64(0.5, 0.0))
}

fn total(n: usize, lambda: f64, schedule: ControlSchedule) -> TotalModel {
    TotalModel::new(SystemModel::spin_fermion(), modes(n), lambda, schedule).unwrap()
}

fn dense(a: &nalgebra_sparse::CsrMatrix<num_complex::Complex64>) -> CMatrix {
    DMatrix::from(a)
}

#[test]
fn jordan_wigner_operators_fulfil_the_car() {
    assert!(car_defect(6).unwrap() < 1e-12);
    assert_eq!(car_defect(1).unwrap(), 0.0);
    assert!(annihilator(3, 3).is_err());
    // a_1 on |11> picks up the string sign of mode 0
    let a1 = dense(&annihilator(2, 1).unwrap());
    assert_eq!(a1[(0b10, 0b11)], c64(-1.0, 0.0));
    assert_eq!(a1[(0b00, 0b01)], c64(1.0, 0.0));
}

#[test]
fn thermal_state_is_quasi_free_with_fermi_dirac_occupations() {
    let m = modes(5);
    let rho = thermal_reservoir_state(&m).unwrap();
    assert!((trace(&rho).re - 1.0).abs() < 1e-14);
    let ops: Vec<CMatrix> = (0..5).map(|j| dense(&annihilator(5, j).unwrap())).collect();
    for (j, a) in ops.iter().enumerate() {
        let n = trace(&(&rho * a.adjoint() * a)).re;
        let fd = 1.0 / (1.0 + (m.beta * m.frequencies[j]).exp());
        assert!((n - fd).abs() < 1e-12, "mode {j}");
        for b in &ops {
            assert!(trace(&(&rho * a * b)).norm() < 1e-15);
        }
    }
    let w = thermal_weights(&m);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-14);
}

#[test]
fn generator_is_hermitian_periodic_and_number_conserving_when_uncoupled() {
    let tm = total(3, 0.3, tuned());
    let mut r = rng(3);
    for _ in 0..10 {
        let t = r.random_range(0.0..5.0);
        let h = build_total_generator(&tm, t).unwrap();
        assert!(hermiticity_defect(&h) < 1e-12);
        let later = build_total_generator(&tm, t + PERIOD).unwrap();
        assert!(op_norm(&(&h - later)) < 1e-10);
    }
    let free = total(3, 0.0, tuned());
    let h = build_total_generator(&free, 0.37).unwrap();
    for j in 0..3 {
        let a = dense(&annihilator(3, j).unwrap());
        let number = kron(&identity(2), &(a.adjoint() * &a));
        assert!(op_norm(&commutator(&h, &number)) < 1e-12);
    }
}

#[test]
fn dimension_guard_is_a_resource_error() {
    let schedule = ControlSchedule::none(PERIOD, 2).unwrap();
    let err = TotalModel::new(SystemModel::spin_fermion(), modes(14), 0.1, schedule).unwrap_err();
    assert!(matches!(err, Error::Resource(_)), "{err}");
    assert!(TotalModel::new(SystemModel::spin_fermion(), modes(13), 0.1, ControlSchedule::none(PERIOD, 2).unwrap()).is_ok());
}

#[test]
fn uncoupled_runs_reproduce_the_decoupled_dynamics() {
    let mut r = rng(17);
    for schedule in [tuned(), echo(), ControlSchedule::none(PERIOD, 2).unwrap()] {
        let tm = total(3, 0.0, schedule.clone());
        let rho0 = random_state(&mut r, 2);
        let traj = evolve(&tm, &rho0, 10.0 * PERIOD, 0.3 * PERIOD).unwrap();
        assert_eq!(traj.times.len(), 35);
        for (t, rho) in traj.times.iter().zip(&traj.states) {
            let reference = effective_dynamics(tm.system(), &schedule, &rho0, *t).unwrap();
            assert!(trace_distance(rho, &reference) < 1e-8, "t = {t}");
        }
        assert!(traj.deviation.iter().all(|&x| x < 1e-8));
    }
}

#[test]
fn free_coherence_is_constant_without_control_or_coupling() {
    let tm = total(2, 0.0, ControlSchedule::none(PERIOD, 2).unwrap());
    let traj = evolve(&tm, &plus_state(), 20.0, 0.5).unwrap();
    for c in &traj.coherences {
        assert!((c[0] - 0.5).abs() < 1e-12);
    }
}

fn single_mode_oracle(tm: &TotalModel, rho0: &CMatrix, ops: &[(f64, Option<f64>)]) -> CMatrix {
    // ops: free evolution times, each optionally followed by a kick weight
    let h0 = dense(tm.static_generator());
    let rho_r = thermal_reservoir_state(tm.modes()).unwrap();
    let mut u = identity(4);
    for &(tau, kick) in ops {
        u = unitary_exp(&h0, tau) * u;
        if let Some(c) = kick {
            u = kron(&unitary_exp(&pauli_z(), c), &identity(2)) * u;
        }
    }
    let full = &u * kron(rho0, &rho_r) * u.adjoint();
    partial_trace(&full, &[2, 2], &[0]).unwrap()
}

#[test]
fn single_mode_matches_dense_diagonalization() {
    let rho0 = random_state(&mut rng(5), 2);
    let off = total(1, 0.4, ControlSchedule::none(PERIOD, 2).unwrap());
    let traj = evolve(&off, &rho0, 3.7, 0.37).unwrap();
    for (t, rho) in traj.times.iter().zip(&traj.states) {
        let oracle = single_mode_oracle(&off, &rho0, &[(*t, None)]);
        assert!(trace_distance(rho, &oracle) < 1e-8, "t = {t}");
    }

    // Echo kicks at T/4 and 3T/4; sample at t = 2.3 T.
    let bb = total(1, 0.4, echo());
    let traj = evolve(&bb, &rho0, 2.3 * PERIOD, 2.3 * PERIOD).unwrap();
    let (p, h) = (PERIOD, std::f64::consts::FRAC_PI_2);
    let seq = [
        (0.25 * p, Some(h)),
        (0.5 * p, Some(-h)),
        (0.5 * p, Some(h)),
        (0.5 * p, Some(-h)),
        (0.5 * p, Some(h)),
        (0.05 * p, None),
    ];
    let oracle = single_mode_oracle(&bb, &rho0, &seq);
    let err = trace_distance(traj.states.last().unwrap(), &oracle);
    assert!(err < 1e-8, "{err:e} at {:?}", traj.times);
}

#[test]
fn single_mode_smooth_control_matches_fine_ordered_propagation() {
    let rho0 = random_state(&mut rng(6), 2);
    let tm = total(1, 0.4, tuned());
    let opts = EvolveOptions { steps_per_period: 256, ..Default::default() };
    let traj = evolve_with(&tm, &rho0, 1.25 * PERIOD, 1.25 * PERIOD, &opts).unwrap();
    let u = ordered_propagator(|t| build_total_generator(&tm, t).unwrap(), 0.0, 1.25 * PERIOD, 2e-5).unwrap();
    let rho_r = thermal_reservoir_state(tm.modes()).unwrap();
    let full = &u * kron(&rho0, &rho_r) * u.adjoint();
    let oracle = partial_trace(&full, &[2, 2], &[0]).unwrap();
    let err = trace_distance(traj.states.last().unwrap(), &oracle);
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn splitting_converges_at_fourth_order() {
    let rho0 = plus_state();
    let tm = total(2, 0.5, tuned());
    let run = |steps| {
        let opts = EvolveOptions { steps_per_period: steps, ..Default::default() };
        evolve_with(&tm, &rho0, PERIOD, PERIOD, &opts).unwrap().states[1].clone()
    };
    let reference = run(512);
    let e8 = trace_distance(&run(8), &reference);
    let e16 = trace_distance(&run(16), &reference);
    assert!(e8 / e16 > 10.0, "ratio {}", e8 / e16);
}

#[test]
fn total_state_stays_pure_and_normalized() {
    let tm = total(4, 0.3, tuned());
    let traj = evolve(&tm, &plus_state(), 20.0, 1.0).unwrap();
    // the initial total state is a mixture, its purity is that of rho_R
    let w = thermal_weights(tm.modes());
    let purity0: f64 = w.iter().map(|x| x * x).sum();
    let purity = traj.total_purity.as_ref().unwrap();
    for (tr, p) in traj.total_trace.iter().zip(purity) {
        assert!((tr - 1.0).abs() < 1e-8);
        assert!((p - purity0).abs() < 1e-8);
    }
    traj.validate(1e-8).unwrap();
}

#[test]
fn uncoupled_reservoir_is_stationary() {
    let tm = total(3, 0.0, tuned());
    let opts = EvolveOptions { record_reservoir: true, ..Default::default() };
    let traj = evolve_with(&tm, &plus_state(), 5.0, 0.5, &opts).unwrap();
    let rho_r = thermal_reservoir_state(tm.modes()).unwrap();
    for r in &traj.reservoir_states {
        assert!(trace_distance(r, &rho_r) < 1e-10);
    }
}

#[test]
fn unraveling_is_deterministic_and_consistent() {
    let tm = total(2, 0.3, echo());
    let opts = EvolveOptions { method: Method::Unravel, samples: 256, seed: 9, ..Default::default() };
    let a = evolve_with(&tm, &plus_state(), 2.0, 0.5, &opts).unwrap();
    let b = evolve_with(&tm, &plus_state(), 2.0, 0.5, &opts).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert!(a.total_purity.is_none());
    let exact = evolve(&tm, &plus_state(), 2.0, 0.5).unwrap();
    for (x, y) in a.states.iter().zip(&exact.states) {
        assert!(trace_distance(x, y) < 0.02);
    }
    let free = total(2, 0.0, tuned());
    let c = evolve_with(&free, &plus_state(), 1.0, 0.25, &opts).unwrap();
    assert!(c.deviation.iter().all(|&x| x < 1e-8));
}

#[test]
fn comparison_report() {
    let schedule = tuned();
    let tm = total(2, 0.2, schedule.clone());
    let traj = evolve(&tm, &plus_state(), 2.0, 0.5).unwrap();
    let consts = BoundConstants { c: 0.5, big_c: 2.0 };
    let rep = compare_with_effective(&traj, tm.system(), &schedule, 0.2, &consts).unwrap();
    assert_eq!(rep.deviation[0], 0.0);
    assert_eq!(rep.retention.as_ref().unwrap()[0], 1.0);
    assert!((rep.sup_deviation - traj.deviation.iter().copied().fold(0.0, f64::max)).abs() < 1e-14);
    let d = schedule.strength_d();
    let expected = 2.0 * (0.2 + (d * 0.2 + 1.0) * PERIOD + 1.0 - (-0.5f64 * 2.0 * 0.2 * PERIOD).exp());
    assert!((rep.bound_shape.last().unwrap() - expected).abs() < 1e-12);

    let mut bad = traj.clone();
    bad.times.swap(1, 2);
    assert!(matches!(
        compare_with_effective(&bad, tm.system(), &schedule, 0.2, &consts),
        Err(Error::Argument(_))
    ));
    bad.times.pop();
    assert!(compare_with_effective(&bad, tm.system(), &schedule, 0.2, &consts).is_err());
}

#[test]
fn csv_layout() {
    let tm = total(1, 0.1, echo());
    let traj = evolve(&tm, &plus_state(), 0.2, 0.1).unwrap();
    let csv = traj.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "t,rho_00_re,rho_00_im,rho_01_re,rho_01_im,rho_10_re,rho_10_im,rho_11_re,rho_11_im,coherence_01,deviation,population_0,population_1"
    );
    let row: Vec<f64> = lines.next().unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(row.len(), 13);
    assert_eq!(row[3], 0.5);
    assert_eq!(csv.lines().count(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn uncoupled_deviation_vanishes(seed in 0u64..1000, t in 0.0f64..1.0) {
        let rho0 = random_state(&mut rng(seed), 2);
        let tm = total(2, 0.0, echo());
        let traj = evolve(&tm, &rho0, t, 0.1).unwrap();
        prop_assert!(traj.deviation.iter().all(|&x| x < 1e-8));
    }
}
