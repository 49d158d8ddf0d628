// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Independent reference values used by the integration tests. Nothing here
//! calls into the library's numerical routines.

#![allow(dead_code)]

use decoshield::linalg::{c64, CMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `J_n(z)` from its power series.
pub fn bessel_j(n: u32, z: f64) -> f64 {
    let half = 0.5 * z;
    let mut term = half.powi(n as i32) / (1..=n).map(f64::from).product::<f64>();
    let mut sum = term;
    for m in 1..200 {
        term *= -half * half / (m as f64 * (m + n) as f64);
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// First positive zero of `J_0` by bisection on the series.
pub fn j0_first_zero() -> f64 {
    let (mut lo, mut hi) = (2.0, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bessel_j(0, mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Dawson's integral `F(x) = e^{-x^2} int_0^x e^{t^2} dt`: positive-term
/// series of the integral for moderate `x`, asymptotic series beyond.
pub fn dawson(x: f64) -> f64 {
    if x.abs() > 10.0 {
        let y = 1.0 / (2.0 * x * x);
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..40 {
            term *= (2 * n - 1) as f64 * y;
            sum += term;
        }
        return sum / (2.0 * x);
    }
    let x2 = x * x;
    let mut power = x;
    let mut sum = x;
    for n in 1..600 {
        power *= x2 / n as f64;
        let term = power / (2 * n + 1) as f64;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    (-x2).exp() * sum
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| {
        c64(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
    })
}

pub fn random_hermitian(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> CMatrix {
    let a = random_matrix(rng, d, scale);
    (&a + a.adjoint()) * c64(0.5, 0.0)
}

pub fn random_state(rng: &mut ChaCha8Rng, d: usize) -> CMatrix {
    let a = random_matrix(rng, d, 1.0);
    let rho = &a * a.adjoint();
    let tr: f64 = (0..d).map(|i| rho[(i, i)].re).sum();
    rho / c64(tr, 0.0)
}

pub fn max_abs_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    (a - b).iter().fold(0.0, |m, z| m.max(z.norm()))
}
