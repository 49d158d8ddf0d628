// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Globally adaptive Gauss-Kronrod (7/15) quadrature and Brent root finding.
//!
//! The integrator is generic over the integrand's value type so that the same
//! code integrates scalars and operator-valued functions.

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{frobenius, CMatrix};

/// Values that can be accumulated by the quadrature rule.
pub trait QuadValue: Clone {
    fn zeros_like(&self) -> Self;
    fn add_scaled(&mut self, other: &Self, s: f64);
    fn norm(&self) -> f64;
}

impl QuadValue for f64 {
    fn zeros_like(&self) -> Self {
        0.0
    }
    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self += s * other;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl QuadValue for Complex64 {
    fn zeros_like(&self) -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn add_scaled(&mut self, other: &Self, s: f64) {
        *self += other * s;
    }
    fn norm(&self) -> f64 {
        Complex64::norm(*self)
    }
}

impl QuadValue for CMatrix {
    fn zeros_like(&self) -> Self {
        CMatrix::zeros(self.nrows(), self.ncols())
    }
    fn add_scaled(&mut self, other: &Self, s: f64) {
        self.zip_apply(other, |a, b| *a += b * s);
    }
    fn norm(&self) -> f64 {
        frobenius(self)
    }
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
// Gauss weights for XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        QuadOptions {
            abs_tol: 1e-12,
            rel_tol: 1e-12,
            max_intervals: 20_000,
        }
    }
}

impl QuadOptions {
    pub fn abs(tol: f64) -> Self {
        QuadOptions {
            abs_tol: tol,
            rel_tol: 0.0,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult<V> {
    pub value: V,
    pub error: f64,
    pub intervals: usize,
}

struct Segment<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

fn gk15<V: QuadValue, F: Fn(f64) -> V>(f: &F, a: f64, b: f64) -> (V, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut kronrod = fc.zeros_like();
    kronrod.add_scaled(&fc, WGK[7]);
    let mut gauss = fc.zeros_like();
    gauss.add_scaled(&fc, WG[3]);
    for (j, (&x, &wk)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        kronrod.add_scaled(&f1, wk);
        kronrod.add_scaled(&f2, wk);
        if j % 2 == 1 {
            let wg = WG[j / 2];
            gauss.add_scaled(&f1, wg);
            gauss.add_scaled(&f2, wg);
        }
    }
    let mut diff = kronrod.clone();
    diff.add_scaled(&gauss, -1.0);
    let err = (diff.norm() * half.abs()).max(f64::EPSILON * 50.0 * kronrod.norm() * half.abs());
    let mut value = kronrod.zeros_like();
    value.add_scaled(&kronrod, half);
    (value, err)
}

/// Integrates `f` over `[a, b]`, splitting first at `breakpoints` that lie
/// strictly inside the interval.
pub fn integrate_with<V, F>(
    f: F,
    a: f64,
    b: f64,
    breakpoints: &[f64],
    opts: QuadOptions,
) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: Fn(f64) -> V,
{
    if !(a.is_finite() && b.is_finite()) {
        return Err(Error::arg("integration limits must be finite"));
    }
    let (lo, hi, sign) = if a <= b { (a, b, 1.0) } else { (b, a, -1.0) };
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > lo && p < hi)
        .collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut edges = vec![lo];
    edges.extend(cuts);
    edges.push(hi);

    let mut segments: Vec<Segment<V>> = edges
        .windows(2)
        .map(|w| {
            let (value, error) = gk15(&f, w[0], w[1]);
            Segment {
                a: w[0],
                b: w[1],
                value,
                error,
            }
        })
        .collect();

    loop {
        let mut total = segments[0].value.zeros_like();
        let mut err = 0.0;
        for s in &segments {
            total.add_scaled(&s.value, 1.0);
            err += s.error;
        }
        let target = opts.abs_tol.max(opts.rel_tol * total.norm());
        if err <= target || lo == hi {
            let mut value = total.zeros_like();
            value.add_scaled(&total, sign);
            return Ok(QuadResult {
                value,
                error: err,
                intervals: segments.len(),
            });
        }
        if segments.len() >= opts.max_intervals {
            return Err(Error::Numeric(format!(
                "adaptive quadrature did not converge on [{lo}, {hi}]: error estimate {err:.3e} > {target:.3e} after {} intervals",
                segments.len()
            )));
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .unwrap();
        let s = segments.swap_remove(worst);
        let mid = 0.5 * (s.a + s.b);
        if mid <= s.a || mid >= s.b {
            return Err(Error::Numeric(format!(
                "adaptive quadrature: interval [{}, {}] cannot be bisected further",
                s.a, s.b
            )));
        }
        for (a, b) in [(s.a, mid), (mid, s.b)] {
            let (value, error) = gk15(&f, a, b);
            segments.push(Segment { a, b, value, error });
        }
    }
}

pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<f64> {
    integrate_with(f, a, b, &[], opts).map(|r| r.value)
}

/// Brent's method on a bracket with a sign change.
pub fn brent<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64, xtol: f64, ftol: f64) -> Result<f64> {
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::SearchFailure {
            message: format!("no sign change on [{a}, {b}]"),
            trace: vec![(a, fa), (b, fb)],
        });
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * xtol;
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb.abs() <= ftol {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qa = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qa * (qa - r) - (b - a) * (r - 1.0));
                q = (qa - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = d;
            }
        } else {
            d = m;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol * m.signum() };
        fb = f(b);
    }
    Err(Error::Numeric("brent: iteration limit reached".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_and_gaussian() {
        let v = integrate(|x| x * x, 0.0, 3.0, QuadOptions::default()).unwrap();
        assert!((v - 9.0).abs() < 1e-13);
        let g = integrate(|x: f64| (-x * x).exp(), -10.0, 10.0, QuadOptions::default()).unwrap();
        assert!((g - std::f64::consts::PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn reversed_limits_flip_sign() {
        let v = integrate(|x: f64| x.cos(), 1.0, 0.0, QuadOptions::default()).unwrap();
        assert!((v + 1f64.sin()).abs() < 1e-14);
    }

    #[test]
    fn breakpoints_handle_jumps() {
        let step = |x: f64| if x < 0.3 { 1.0 } else { -2.0 };
        let r = integrate_with(step, 0.0, 1.0, &[0.3], QuadOptions::default()).unwrap();
        assert!((r.value - (0.3 - 1.4)).abs() < 1e-14);
    }

    #[test]
    fn brent_finds_cosine_root() {
        let r = brent(|x: f64| x.cos(), 1.0, 2.0, 1e-14, 0.0).unwrap();
        assert!((r - std::f64::consts::FRAC_PI_2).abs() < 1e-13);
        assert!(matches!(
            brent(|x: f64| x * x + 1.0, -1.0, 1.0, 1e-12, 0.0),
            Err(Error::SearchFailure { .. })
        ));
    }
}
