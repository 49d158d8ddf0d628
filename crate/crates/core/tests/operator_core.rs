// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{max_abs_diff, random_hermitian, random_matrix, random_state, rng};
use decoshield::linalg::*;
use proptest::prelude::*;

#[test]
fn hs_inner_is_positive_and_conjugate_symmetric() {
    let mut r = rng(1);
    for _ in 0..50 {
        let a = random_matrix(&mut r, 3, 1.0);
        let b = random_matrix(&mut r, 3, 1.0);
        let aa = hs_inner(&a, &a).unwrap();
        assert!(aa.re > 0.0 && aa.im.abs() < 1e-14);
        let ab = hs_inner(&a, &b).unwrap();
        let ba = hs_inner(&b, &a).unwrap();
        assert!((ab - ba.conj()).norm() < 1e-13);
    }
}

#[test]
fn superop_matrix_form_matches_direct_action() {
    let mut r = rng(2);
    for _ in 0..100 {
        let a = random_matrix(&mut r, 3, 1.0);
        let b = random_matrix(&mut r, 3, 1.0);
        let left = build_superop(SuperOpKind::Left, &a).unwrap();
        let right = build_superop(SuperOpKind::Right, &a).unwrap();
        let comm = build_superop(SuperOpKind::Commutator, &a).unwrap();
        assert!(max_abs_diff(&left.apply(&b), &(&a * &b)) < 1e-12);
        assert!(max_abs_diff(&right.apply(&b), &(&b * &a)) < 1e-12);
        assert!(max_abs_diff(&comm.apply(&b), &commutator(&a, &b)) < 1e-12);
    }
}

#[test]
fn left_and_right_actions_commute() {
    let mut r = rng(3);
    let a = random_matrix(&mut r, 2, 1.0);
    let b = random_matrix(&mut r, 2, 1.0);
    let c = random_matrix(&mut r, 2, 1.0);
    let l = SuperOp::left(&a);
    let rr = SuperOp::right(&b);
    let acb = &a * &c * &b;
    assert!(max_abs_diff(&l.compose(&rr).apply(&c), &acb) < 1e-13);
    assert!(max_abs_diff(&rr.compose(&l).apply(&c), &acb) < 1e-13);
}

#[test]
fn exponential_inverse_pairs() {
    let mut r = rng(4);
    for _ in 0..20 {
        let mut a = random_matrix(&mut r, 4, 1.0);
        let n = op_norm(&a);
        a *= c64(5.0 * 0.99 / n, 0.0);
        let prod = matrix_exp(&a).unwrap() * matrix_exp(&(-&a)).unwrap();
        assert!(max_abs_diff(&prod, &identity(4)) < 1e-12);
    }
}

#[test]
fn constant_hamiltonian_propagator_is_exponential() {
    let mut r = rng(5);
    let h = random_hermitian(&mut r, 3, 1.0);
    let u = ordered_propagator(|_| h.clone(), 0.2, 1.7, 0.01).unwrap();
    let expected = matrix_exp(&(&h * c64(0.0, -1.5))).unwrap();
    assert!(max_abs_diff(&u, &expected) < 1e-12);
    assert!(unitarity_defect(&u) < 1e-10);
}

#[test]
fn commuting_family_integrates_the_envelope() {
    let mut r = rng(6);
    let h0 = random_hermitian(&mut r, 2, 1.0);
    let g = |t: f64| 1.0 + 0.5 * (3.0 * t).sin();
    let u = ordered_propagator(|t| &h0 * c64(g(t), 0.0), 0.0, 2.0, 0.005).unwrap();
    let integral = 2.0 + 0.5 * (1.0 - 6f64.cos()) / 3.0;
    let expected = matrix_exp(&(&h0 * c64(0.0, -integral))).unwrap();
    assert!(max_abs_diff(&u, &expected) < 1e-11);
}

fn two_piece(t: f64) -> CMatrix {
    if t < 0.5 {
        pauli_z() + pauli_x() * c64(0.3, 0.0)
    } else {
        pauli_x() - pauli_y() * c64(0.7, 0.0)
    }
}

#[test]
fn piecewise_non_commuting_matches_product_and_step_halving() {
    // Steps dividing 0.5 keep the switch on a grid point.
    let coarse = ordered_propagator(two_piece, 0.0, 1.0, 0.01).unwrap();
    let fine = ordered_propagator(two_piece, 0.0, 1.0, 0.005).unwrap();
    assert!(max_abs_diff(&coarse, &fine) < 1e-9);
    let exact = matrix_exp(&(two_piece(0.75) * c64(0.0, -0.5))).unwrap()
        * matrix_exp(&(two_piece(0.25) * c64(0.0, -0.5))).unwrap();
    assert!(max_abs_diff(&coarse, &exact) < 1e-12);
}

#[test]
fn propagator_converges_at_fourth_order() {
    let h = |t: f64| pauli_z() + pauli_x() * c64((3.0 * t).cos(), 0.0);
    let reference = ordered_propagator(h, 0.0, 1.0, 1.0 / 640.0).unwrap();
    let e1 = max_abs_diff(&ordered_propagator(h, 0.0, 1.0, 0.1).unwrap(), &reference);
    let e2 = max_abs_diff(&ordered_propagator(h, 0.0, 1.0, 0.05).unwrap(), &reference);
    let ratio = e1 / e2;
    assert!(ratio > 12.0 && ratio < 20.0, "error ratio {ratio}");
}

#[test]
fn propagator_cocycle() {
    let h = |t: f64| pauli_z() * c64(1.0 + t, 0.0) + pauli_y() * c64((2.0 * t).sin(), 0.0);
    let u20 = ordered_propagator(h, 0.0, 2.0, 0.01).unwrap();
    let u21 = ordered_propagator(h, 1.0, 2.0, 0.01).unwrap();
    let u10 = ordered_propagator(h, 0.0, 1.0, 0.01).unwrap();
    assert!(max_abs_diff(&u20, &(u21 * u10)) < 1e-9);
}

#[test]
fn partial_trace_of_product_and_random_states() {
    let mut r = rng(7);
    let rs = random_state(&mut r, 2);
    let rr = random_state(&mut r, 3) * c64(2.5, 0.0);
    let prod = kron(&rs, &rr);
    let red = partial_trace(&prod, &[2, 3], &[0]).unwrap();
    assert!(max_abs_diff(&red, &(&rs * c64(2.5, 0.0))) < 1e-13);

    let big = random_state(&mut r, 8);
    for keep in [vec![0], vec![1], vec![2], vec![0, 2], vec![1, 2]] {
        let red = partial_trace(&big, &[2, 2, 2], &keep).unwrap();
        assert!((trace(&red) - trace(&big)).norm() < 1e-12);
        assert!(hermiticity_defect(&red) < 1e-14);
    }
    let id3 = identity(3);
    let embedded = kron(&rs, &id3);
    let back = partial_trace(&embedded, &[2, 3], &[0]).unwrap();
    assert!(max_abs_diff(&back, &(&rs * c64(3.0, 0.0))) < 1e-13);
}

fn arb_matrix(d: usize) -> impl Strategy<Value = CMatrix> {
    prop::collection::vec(-1.0f64..1.0, 2 * d * d)
        .prop_map(move |v| CMatrix::from_fn(d, d, |i, j| c64(v[2 * (i * d + j)], v[2 * (i * d + j) + 1])))
}

proptest! {
    #[test]
    fn superop_composition_is_associative(a in arb_matrix(2), b in arb_matrix(2), c in arb_matrix(2), x in arb_matrix(2)) {
        let (sa, sb, sc) = (SuperOp::left(&a), SuperOp::right(&b), build_superop(SuperOpKind::Commutator, &c).unwrap());
        let lhs = sa.compose(&sb).compose(&sc).apply(&x);
        let rhs = sa.compose(&sb.compose(&sc)).apply(&x);
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn superop_is_linear(a in arb_matrix(3), x in arb_matrix(3), y in arb_matrix(3), s in -2.0f64..2.0) {
        let op = build_superop(SuperOpKind::Commutator, &a).unwrap();
        let lhs = op.apply(&(&x + &y * c64(s, 0.0)));
        let rhs = op.apply(&x) + op.apply(&y) * c64(s, 0.0);
        prop_assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn spectral_projectors_resolve_identity(h in arb_matrix(4)) {
        let h = hermitian_part(&h);
        let sd = SpectralDecomposition::new(&h, 1e-9).unwrap();
        let sum = sd.projectors.iter().fold(CMatrix::zeros(4, 4), |acc, p| acc + p);
        prop_assert!(max_abs_diff(&sum, &identity(4)) < 1e-12);
        prop_assert!(max_abs_diff(&sd.reconstruct(), &h) < 1e-12);
        for (i, p) in sd.projectors.iter().enumerate() {
            prop_assert!(max_abs_diff(&(p * p), p) < 1e-12);
            for q in sd.projectors.iter().skip(i + 1) {
                prop_assert!(op_norm(&(p * q)) < 1e-12);
            }
        }
    }
}
