// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

mod common;

use std::f64::consts::PI;

use common::{bessel_j, j0_first_zero, max_abs_diff, random_state, rng};
use decoshield::control::*;
use decoshield::linalg::{c64, frobenius, op_norm, pauli_z, unitarity_defect, CMatrix};
use decoshield::quad::{integrate_with, QuadOptions};
use decoshield::system::SystemModel;
use decoshield::Error;
use num_complex::Complex64;
use rand::Rng;

fn spin() -> SystemModel {
    SystemModel::spin_fermion()
}

fn tuned_sinusoid(period: f64) -> ControlSchedule {
    let template = ControlSchedule::sinusoidal(period, 7.0, pauli_z()).unwrap();
    let mu = tune_amplitude(&spin(), &template, (6.0, 9.0)).unwrap().mu;
    template.with_amplitude(mu).unwrap()
}

fn echo(period: f64, alpha: f64, c: f64) -> ControlSchedule {
    ControlSchedule::bang_bang(
        period,
        vec![Kick { alpha, c }, Kick { alpha: alpha + 0.5, c: -c }],
        pauli_z(),
    )
    .unwrap()
}

#[test]
fn vc_is_unitary_at_random_times() {
    let mut r = rng(11);
    let s = ControlSchedule::smooth(
        0.2,
        3.1,
        Harmonics { mean: 0.1, cos: vec![1.0, -0.3], sin: vec![0.2] },
        pauli_z(),
    )
    .unwrap();
    for _ in 0..20 {
        let t = r.random_range(0.0..5.0);
        assert!(unitarity_defect(&vc_at(&s, t).unwrap()) < 1e-10);
    }
}

#[test]
fn vc_matches_time_ordered_solution() {
    let s = ControlSchedule::smooth(
        0.3,
        2.0,
        Harmonics { mean: 0.2, cos: vec![1.0], sin: vec![0.5] },
        pauli_z(),
    )
    .unwrap();
    // V' = i H_c V is the propagator of -H_c.
    let u = decoshield::linalg::ordered_propagator(|t| -s.h_c(t), 0.0, 0.45, 1e-3).unwrap();
    assert!(max_abs_diff(&u, &vc_at(&s, 0.45).unwrap()) < 1e-10);
}

#[test]
fn sinusoidal_q_of_t_matches_phase_display() {
    let (period, mu) = (0.1, 7.3);
    let s = ControlSchedule::sinusoidal(period, mu, pauli_z()).unwrap();
    let model = spin();
    assert_eq!(q_of_t(&model, &s, 0.0).unwrap(), *model.q());
    for t in [0.013, 0.04, 0.077, 0.31] {
        let q = q_of_t(&model, &s, t).unwrap();
        let phase = mu / PI * (2.0 * PI * t / period).sin();
        assert!((q[(0, 1)] - Complex64::from_polar(1.0, -phase)).norm() < 1e-12);
        assert!((q[(1, 0)] - Complex64::from_polar(1.0, phase)).norm() < 1e-12);
        assert!((op_norm(&q) - model.q_norm()).abs() < 1e-12);
    }
}

#[test]
fn untuned_sinusoid_fails_with_bessel_residual() {
    let period = 0.1;
    let s = ControlSchedule::sinusoidal(period, 1.0, pauli_z()).unwrap();
    let r = check_dd(&spin(), &s, DD_TOL).unwrap();
    assert!(!r.pass && !r.residual_pass);
    let expected = period * bessel_j(0, 1.0 / PI).abs();
    assert!((r.residual - expected).abs() < 1e-12, "{} vs {}", r.residual, expected);
    assert!(r.periodicity_defect < 1e-12);
}

#[test]
fn tuning_finds_first_bessel_zero() {
    let template = ControlSchedule::sinusoidal(0.1, 7.0, pauli_z()).unwrap();
    let res = tune_amplitude(&spin(), &template, (6.0, 9.0)).unwrap();
    let expected = PI * j0_first_zero();
    assert!((res.mu - expected).abs() < 1e-8, "{} vs {}", res.mu, expected);
    assert!(res.zero_mode_norm < 1e-8);
    let report = check_dd(&spin(), &template.with_amplitude(res.mu).unwrap(), DD_TOL).unwrap();
    assert!(report.pass && report.residual_pass && report.zero_mode_norm < 1e-8);

    let again = tune_amplitude(&spin(), &template, (res.mu - 0.1, res.mu + 0.1)).unwrap();
    assert!((again.mu - res.mu).abs() < 1e-8);
}

#[test]
fn tuning_without_root_reports_scan() {
    let template = ControlSchedule::sinusoidal(0.1, 1.0, pauli_z()).unwrap();
    match tune_amplitude(&spin(), &template, (0.1, 1.0)) {
        Err(Error::SearchFailure { trace, .. }) => {
            assert_eq!(trace.len(), 65);
            assert!(trace.iter().all(|(_, s)| *s > 0.0));
        }
        other => panic!("expected search failure, got {other:?}"),
    }
}

#[test]
fn trivial_control_fourier_table() {
    let s = ControlSchedule::none(0.1, 2).unwrap();
    let t = fourier_modes(&spin(), &s, 4).unwrap();
    assert!(max_abs_diff(t.mode(0).unwrap(), spin().q()) < 1e-14);
    for k in 1..=4 {
        assert!(frobenius(t.mode(k).unwrap()) < 1e-14);
        assert!(frobenius(t.mode(-k).unwrap()) < 1e-14);
    }
}

#[test]
fn sinusoidal_ladder_modes_are_bessel_values() {
    let s = tuned_sinusoid(0.1);
    let z = s.amplitude().unwrap() / PI;
    let t = fourier_modes(&spin(), &s, 16).unwrap();
    for k in 1..=8i64 {
        let expected = bessel_j(k as u32, z).abs();
        for a in [-1, 1] {
            let got = op_norm(t.ladder_mode(k, a).unwrap());
            assert!((got - expected).abs() < 1e-10, "k={k} a={a}: {got} vs {expected}");
        }
    }
    assert!((op_norm(t.ladder_mode(1, -1).unwrap()) - 0.5191).abs() < 1e-4);
    // Adjoint symmetry for Hermitian Q.
    for k in 1..=16i64 {
        assert!(max_abs_diff(t.mode(-k).unwrap(), &t.mode(k).unwrap().adjoint()) < 1e-13);
    }
}

#[test]
fn parseval_with_auto_cutoff() {
    let s = tuned_sinusoid(0.1);
    let t = fourier_modes_auto(&spin(), &s, 1e-12, 2047).unwrap();
    assert!(t.tail_bound < 1e-12);
    // Compare against the time-domain norm computed by adaptive quadrature.
    let q_norm = integrate_with(
        |x| frobenius(&q_of_t(&spin(), &s, x).unwrap()).powi(2),
        0.0,
        0.1,
        &[],
        QuadOptions::default(),
    )
    .unwrap()
    .value
        / 0.1;
    assert!((t.mode_norm_sq - q_norm).abs() < 1e-8);
}

#[test]
fn bang_bang_closed_form_matches_quadrature() {
    let period = 0.1;
    let s = echo(period, 0.2, PI / 2.0);
    let model = spin();
    let ladder = ladder_operators(&model).unwrap();
    for a in [-1i32, 1] {
        let q_a = &ladder[if a == -1 { 0 } else { 1 }];
        for k in (-50i64..=50).filter(|&k| k != 0) {
            let closed = qka_bangbang_closed_form(&model, &s, k, a).unwrap();
            // Defining integral over one period in rescaled time.
            let integrand = |u: f64| {
                let v = vc_at(&s, u * period).unwrap();
                v.adjoint() * q_a * v * Complex64::from_polar(1.0, -2.0 * PI * k as f64 * u)
            };
            let numeric: CMatrix = integrate_with(integrand, 0.0, 1.0, &[0.2, 0.7], QuadOptions::abs(1e-13))
                .unwrap()
                .value;
            let scale = op_norm(&numeric).max(1e-300);
            if op_norm(&numeric) > 1e-10 {
                assert!(op_norm(&(&closed - &numeric)) / scale < 1e-6, "k={k}");
            } else {
                assert!(op_norm(&closed) < 1e-10, "k={k}");
            }
        }
        assert!(frobenius(&qka_bangbang_closed_form(&model, &s, 0, a).unwrap()) == 0.0);
    }
}

#[test]
fn bang_bang_modes_scale_as_inverse_k_on_their_support() {
    let s = echo(0.1, 0.25, PI / 2.0);
    let model = spin();
    let norms: Vec<f64> = (1..=50i64)
        .map(|k| k as f64 * op_norm(&qka_bangbang_closed_form(&model, &s, k, -1).unwrap()))
        .collect();
    let reference = norms[0];
    for (i, n) in norms.iter().enumerate() {
        let k = i + 1;
        if k % 2 == 1 {
            assert!((n - reference).abs() < 1e-9, "k={k}");
        } else {
            assert!(*n < 1e-12, "k={k}");
        }
    }
    assert!((reference - 2.0 / PI).abs() < 1e-12);
}

#[test]
fn bang_bang_table_agrees_with_closed_form() {
    let s = echo(0.1, 0.1, 1.1);
    let model = spin();
    let table = fourier_modes(&model, &s, 20).unwrap();
    for k in (-20i64..=20).filter(|&k| k != 0) {
        for a in [-1, 1] {
            let closed = qka_bangbang_closed_form(&model, &s, k, a).unwrap();
            assert!(max_abs_diff(table.ladder_mode(k, a).unwrap(), &closed) < 1e-13);
        }
    }
}

fn random_passing(r: &mut impl Rng, i: usize) -> ControlSchedule {
    let period = r.random_range(0.05..0.5);
    if i % 2 == 0 {
        let shape = Harmonics {
            mean: 0.0,
            cos: vec![1.0, r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)],
            sin: vec![],
        };
        let template = ControlSchedule::smooth(period, 1.0, shape, pauli_z()).unwrap();
        let mu = tune_amplitude(&spin(), &template, (1.0, 12.0)).unwrap().mu;
        template.with_amplitude(mu).unwrap()
    } else {
        echo(period, r.random_range(0.05..0.45), PI / 2.0)
    }
}

fn random_failing(r: &mut impl Rng, i: usize) -> ControlSchedule {
    let period = r.random_range(0.05..0.5);
    match i % 3 {
        0 => ControlSchedule::smooth(
            period,
            r.random_range(0.5..4.0),
            Harmonics { mean: 0.0, cos: vec![1.0], sin: vec![r.random_range(0.2..0.8)] },
            pauli_z(),
        )
        .unwrap(),
        1 => ControlSchedule::smooth(
            period,
            r.random_range(2.0..6.0),
            Harmonics { mean: r.random_range(0.2..0.4), cos: vec![1.0], sin: vec![] },
            pauli_z(),
        )
        .unwrap(),
        _ => echo(period, r.random_range(0.05..0.45), r.random_range(0.2..1.2)),
    }
}

#[test]
fn decoupling_formulations_agree_on_random_schedules() {
    let mut r = rng(12);
    let model = spin();
    let mut passing = 0;
    for i in 0..10 {
        let s = if i < 5 { random_passing(&mut r, i) } else { random_failing(&mut r, i) };
        let rep = check_dd(&model, &s, DD_TOL).unwrap();
        assert!(rep.formulations_agree(), "schedule {i}: {rep:?}");
        assert_eq!(rep.pass, i < 5, "schedule {i}: {rep:?}");
        if rep.pass {
            passing += 1;
            assert!(satisfies_strength_lower_bound(&s));
        }
    }
    assert_eq!(passing, 5);
}

#[test]
fn rescaling_the_period_preserves_verdict_and_strength() {
    let model = spin();
    for s in [tuned_sinusoid(0.1), echo(0.1, 0.3, PI / 2.0), ControlSchedule::sinusoidal(0.1, 2.0, pauli_z()).unwrap()] {
        let verdict = check_dd(&model, &s, DD_TOL).unwrap().pass;
        for new_period in [0.03, 0.25, 0.7] {
            let scaled = s.rescaled(new_period).unwrap();
            assert_eq!(check_dd(&model, &scaled, DD_TOL).unwrap().pass, verdict);
            assert!((scaled.strength_d() - s.strength_d()).abs() < 1e-10);
        }
    }
}

#[test]
fn effective_dynamics_preserves_populations_and_coherence_moduli() {
    let mut r = rng(13);
    let model = spin();
    let s = tuned_sinusoid(0.1);
    let rho0 = random_state(&mut r, 2);
    assert!(max_abs_diff(&effective_dynamics(&model, &s, &rho0, 0.0).unwrap(), &rho0) < 1e-14);
    for t in [0.01, 0.37, 4.2, 55.0] {
        let rho = effective_dynamics(&model, &s, &rho0, t).unwrap();
        for m in 0..2 {
            for n in 0..2 {
                assert!((rho[(m, n)].norm() - rho0[(m, n)].norm()).abs() < 1e-12);
            }
        }
    }
    let diag = CMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![c64(0.3, 0.0), c64(0.7, 0.0)]));
    assert!(max_abs_diff(&effective_dynamics(&model, &s, &diag, 3.3).unwrap(), &diag) < 1e-14);
    assert!(effective_dynamics(&model, &s, &(diag * c64(2.0, 0.0)), 1.0).is_err());
}
