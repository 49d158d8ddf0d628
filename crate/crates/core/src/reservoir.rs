// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Thermal fermionic reservoir: radial form factors, the glued form factor,
//! the spectral function `G_f`, principal values and finite-mode surrogates.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c64, I};
use crate::quad::{integrate_with, QuadOptions};
use crate::system::SystemModel;

/// Values of `G_f` below this are treated as outside the support.
pub const SUPPORT_FLOOR: f64 = 1e-16;
/// Absolute tolerance of [`pv_integral`].
pub const PV_TOL: f64 = 1e-9;
const SUPPORT_STEP: f64 = 1e-2;
const SUPPORT_LIMIT: f64 = 1e3;
const EVEN_STEP: f64 = 1e-3;
const EVEN_TOL: f64 = 1e-8;
/// Moments kept for the far-field expansion of the principal value.
const MOMENTS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormFactorKind {
    /// `f(p) = A p exp(-p^2 / 2w^2)`
    GaussianP,
    /// `f(p) = A exp(-p^2 / 2w^2)`
    Gaussian,
    /// `f(p) = A exp(-p / w)`
    OhmicExp,
}

impl FormFactorKind {
    pub fn name(self) -> &'static str {
        match self {
            FormFactorKind::GaussianP => "gaussian-p",
            FormFactorKind::Gaussian => "gaussian",
            FormFactorKind::OhmicExp => "ohmic-exp",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "gaussian-p" => Ok(FormFactorKind::GaussianP),
            "gaussian" => Ok(FormFactorKind::Gaussian),
            "ohmic-exp" => Ok(FormFactorKind::OhmicExp),
            other => Err(Error::arg(format!(
                "unknown form factor '{other}' (expected gaussian-p, gaussian or ohmic-exp)"
            ))),
        }
    }
}

impl fmt::Display for FormFactorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Isotropic form factor with its reservoir temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormFactor {
    pub kind: FormFactorKind,
    pub amplitude: f64,
    pub width: f64,
    pub beta: f64,
    /// Analyticity-strip proxy, only used by [`validate_a2`].
    pub r_max: f64,
}

impl FormFactor {
    pub fn new(kind: FormFactorKind, amplitude: f64, width: f64, beta: f64, r_max: f64) -> Result<Self> {
        if !(amplitude.is_finite() && width.is_finite() && width > 0.0) {
            return Err(Error::arg("form factor needs finite amplitude and width > 0"));
        }
        if !(beta > 0.0) || beta.is_nan() {
            return Err(Error::arg(format!("inverse temperature must be > 0, got {beta}")));
        }
        if !(r_max > 0.0) {
            return Err(Error::arg(format!("r_max must be > 0, got {r_max}")));
        }
        Ok(FormFactor { kind, amplitude, width, beta, r_max })
    }

    /// `f(p) = p exp(-p^2/2)` at inverse temperature `beta`, `r_max = 10`.
    pub fn default_at(beta: f64) -> Result<Self> {
        FormFactor::new(FormFactorKind::GaussianP, 1.0, 1.0, beta, 10.0)
    }

    /// Radial profile `f(p)` for `p >= 0`.
    pub fn profile(&self, p: f64) -> f64 {
        let s = p / self.width;
        self.amplitude
            * match self.kind {
                FormFactorKind::GaussianP => p * (-0.5 * s * s).exp(),
                FormFactorKind::Gaussian => (-0.5 * s * s).exp(),
                FormFactorKind::OhmicExp => (-s).exp(),
            }
    }
}

/// Logistic `1/(1+e^{-x})` without overflow.
fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Glued form factor `g_f(p) = |p| (1+e^{-beta p})^{-1/2} f(|p|)`, with
/// `conj(f)` on the negative branch (radial profiles are real).
pub fn glue_form_factor(ff: &FormFactor, p: f64) -> Complex64 {
    let radial = if p >= 0.0 {
        c64(ff.profile(p), 0.0)
    } else {
        c64(ff.profile(-p), 0.0).conj()
    };
    radial * (p.abs() * logistic(ff.beta * p).sqrt())
}

/// Mirrored glued form factor `i conj(g_f(-p))`.
pub fn glue_form_factor_mirror(ff: &FormFactor, p: f64) -> Complex64 {
    I * glue_form_factor(ff, -p).conj()
}

type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Real spectral weight on the line with a numerically determined support
/// `[lo, hi]` outside of which `|G| < 1e-16`.
#[derive(Clone)]
pub struct SpectralFunction {
    eval: RealFn,
    support: (f64, f64),
    tail_bound: f64,
    moments: Vec<f64>,
    abs_mass: f64,
}

impl fmt::Debug for SpectralFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralFunction")
            .field("support", &self.support)
            .field("tail_bound", &self.tail_bound)
            .finish()
    }
}

impl SpectralFunction {
    /// Wraps an arbitrary integrable weight. Fails when the weight is still
    /// above the floor at `|p| = 1000`.
    pub fn from_fn<F>(g: F) -> Result<Self>
    where
        F: Fn(f64) -> f64 + Send + Sync + 'static,
    {
        let eval: RealFn = Arc::new(g);
        let hi = support_edge(&eval, 1.0)?;
        let lo = support_edge(&eval, -1.0)?;
        let support = match (lo, hi) {
            (None, None) => (0.0, 0.0),
            (lo, hi) => (lo.unwrap_or(0.0), hi.unwrap_or(0.0)),
        };
        let span = (support.1 - support.0).max(1.0);
        let opts = QuadOptions::abs(1e-14);
        let tail = |a: f64, b: f64| {
            integrate_with(|p| eval(p).abs(), a, b, &[], opts).map(|r| r.value)
        };
        let tail_bound = tail(support.1, support.1 + span)? + tail(support.0 - span, support.0)?;
        let (moments, abs_mass) = if support.0 < support.1 {
            let opts = QuadOptions::default();
            let abs_mass = integrate_with(|p| eval(p).abs(), support.0, support.1, &[0.0], opts)?.value;
            let radius = support.0.abs().max(support.1.abs());
            let moments = (0..MOMENTS)
                .map(|n| {
                    // Odd moments may cancel to zero, so the target is absolute.
                    let scale = abs_mass * radius.powi(n as i32);
                    let opts = QuadOptions { abs_tol: 1e-12 * scale, rel_tol: 0.0, ..opts };
                    integrate_with(|p| p.powi(n as i32) * eval(p), support.0, support.1, &[0.0], opts)
                        .map(|r| r.value)
                })
                .collect::<Result<Vec<f64>>>()?;
            (moments, abs_mass)
        } else {
            (vec![0.0; MOMENTS], 0.0)
        };
        Ok(SpectralFunction { eval, support, tail_bound, moments, abs_mass })
    }

    /// `G_f(p) = 4 pi p^2 |g_f(p)|^2 / (1+e^{-beta p})`.
    pub fn from_form_factor(ff: &FormFactor) -> Result<Self> {
        let ff = ff.clone();
        SpectralFunction::from_fn(move |p| {
            let g = glue_form_factor(&ff, p).norm_sqr();
            4.0 * PI * p * p * g * logistic(ff.beta * p)
        })
    }

    pub fn eval(&self, p: f64) -> f64 {
        (self.eval)(p)
    }

    /// `(lo, hi)`; empty weights report `(0, 0)`.
    pub fn support(&self) -> (f64, f64) {
        self.support
    }

    /// Positive support cutoff `p_max`.
    pub fn p_max(&self) -> f64 {
        self.support.1
    }

    /// Integral of `|G|` over one support width beyond either edge.
    pub fn tail_bound(&self) -> f64 {
        self.tail_bound
    }

    pub fn is_zero(&self) -> bool {
        self.support.0 >= self.support.1
    }

    /// `int p^n G(p) dp` over the support, for `n < 64`.
    pub fn moment(&self, n: usize) -> Option<f64> {
        self.moments.get(n).copied()
    }

    /// `int |G|` over the support.
    pub fn abs_mass(&self) -> f64 {
        self.abs_mass
    }

    /// Largest `|p|` in the support.
    pub fn radius(&self) -> f64 {
        self.support.0.abs().max(self.support.1.abs())
    }

    /// `sup |G|` sampled on a 0.01 grid of the support.
    pub fn sup(&self) -> f64 {
        let (lo, hi) = self.support;
        let n = ((hi - lo) / SUPPORT_STEP).ceil() as usize;
        (0..=n)
            .map(|i| self.eval(lo + i as f64 * SUPPORT_STEP).abs())
            .fold(0.0, f64::max)
    }
}

/// Last point (in direction `dir`) where `|g| >= 1e-16`, scanning on a 0.01
/// grid and refining by bisection.
fn support_edge(g: &RealFn, dir: f64) -> Result<Option<f64>> {
    let steps = (SUPPORT_LIMIT / SUPPORT_STEP) as usize;
    let above = |p: f64| g(p).abs() >= SUPPORT_FLOOR;
    if above(dir * SUPPORT_LIMIT) {
        return Err(Error::Numeric(format!(
            "spectral weight is still {:.3e} at p = {}; tail does not converge",
            g(dir * SUPPORT_LIMIT),
            dir * SUPPORT_LIMIT
        )));
    }
    let last = (0..=steps).rev().find(|&i| above(dir * i as f64 * SUPPORT_STEP));
    let Some(i) = last else {
        return Ok(None);
    };
    let (mut a, mut b) = (i as f64 * SUPPORT_STEP, (i + 1) as f64 * SUPPORT_STEP);
    for _ in 0..60 {
        let m = 0.5 * (a + b);
        if above(dir * m) {
            a = m;
        } else {
            b = m;
        }
    }
    Ok(Some(dir * b))
}

/// `PV int G(p)/(p - x) dp`, i.e. `lim int_{|p|>eps} G(p + x)/p dp`.
pub fn pv_integral(g: &SpectralFunction, x: f64) -> Result<f64> {
    pv_integral_tol(g, x, PV_TOL)
}

/// [`pv_integral`] at a chosen absolute tolerance.
pub fn pv_integral_tol(g: &SpectralFunction, x: f64, tol: f64) -> Result<f64> {
    if !x.is_finite() {
        return Err(Error::arg("principal value needs a finite argument"));
    }
    if g.is_zero() {
        return Ok(0.0);
    }
    let (lo, hi) = g.support();
    let radius = g.radius();
    if x.abs() > 2.0 * radius {
        // -sum_n m_n / x^{n+1}; the ratio radius/|x| < 1/2 makes 64 terms
        // exact to rounding.
        let y = 1.0 / x;
        let ratio = radius * y.abs();
        let mut power = y;
        let mut bound = g.abs_mass * y.abs();
        let mut sum = 0.0;
        for m in &g.moments {
            sum += m * power;
            // |m_n| <= int|G| radius^n bounds every later term.
            bound *= ratio;
            if bound < 1e-18 * sum.abs() {
                break;
            }
            power *= y;
        }
        return Ok(-sum);
    }
    let opts = QuadOptions::abs(tol);
    if x < lo - 1.0 || x > hi + 1.0 {
        // No singularity on the support.
        return integrate_with(|p| g.eval(p) / (p - x), lo, hi, &[0.0], opts).map(|r| r.value);
    }
    let reach = (hi - x).max(x - lo);
    let h = 1e-6 * (1.0 + x.abs());
    let slope = (g.eval(x + h) - g.eval(x - h)) / h;
    let integrand = |p: f64| {
        if p < 1e-12 {
            slope
        } else {
            (g.eval(x + p) - g.eval(x - p)) / p
        }
    };
    integrate_with(integrand, 0.0, reach, &[hi - x, x - lo], opts).map(|r| r.value)
}

/// Finite set of reservoir modes on a midpoint grid of `(0, p_max]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModeSet {
    pub frequencies: Vec<f64>,
    pub couplings: Vec<f64>,
    pub occupations: Vec<f64>,
    pub spacing: f64,
    pub beta: f64,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }

    /// `sum_j |f_j|^2`.
    pub fn weight(&self) -> f64 {
        self.couplings.iter().map(|f| f * f).sum()
    }
}

/// Fermi-Dirac occupation `1/(1+e^{beta w})`.
pub fn fermi_dirac(beta: f64, omega: f64) -> f64 {
    logistic(-beta * omega)
}

/// `omega_j = (j - 1/2) p_max / N`, `f_j = sqrt(4 pi Delta) omega_j f(omega_j)`,
/// Fermi-Dirac occupations.
pub fn discretize_modes(ff: &FormFactor, n: usize, p_max: f64) -> Result<ModeSet> {
    if n == 0 {
        return Err(Error::arg("mode count must be at least 1"));
    }
    if !(p_max > 0.0 && p_max.is_finite()) {
        return Err(Error::arg(format!("p_max must be finite and > 0, got {p_max}")));
    }
    let spacing = p_max / n as f64;
    let frequencies: Vec<f64> = (0..n).map(|j| (j as f64 + 0.5) * spacing).collect();
    let couplings = frequencies
        .iter()
        .map(|&w| (4.0 * PI * spacing).sqrt() * w * ff.profile(w))
        .collect();
    let occupations = frequencies.iter().map(|&w| fermi_dirac(ff.beta, w)).collect();
    Ok(ModeSet { frequencies, couplings, occupations, spacing, beta: ff.beta })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Check {
    pub name: &'static str,
    pub pass: bool,
    pub value: f64,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct A2Report {
    pub checks: Vec<A2Check>,
}

impl A2Report {
    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&A2Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// `int (1+p^2) |g(p)|^2 dp` over the line, doubling the window until the
/// value settles. Returns infinity when it does not.
fn weighted_moment<F: Fn(f64) -> f64>(sq: F, scale: f64) -> f64 {
    let opts = QuadOptions { abs_tol: 1e-13, rel_tol: 1e-12, max_intervals: 20_000 };
    let mut window = 4.0 * scale;
    let mut prev = f64::NAN;
    while window <= 1e4 * scale {
        let Ok(r) = integrate_with(|p| (1.0 + p * p) * sq(p), -window, window, &[0.0], opts) else {
            return f64::INFINITY;
        };
        if !r.value.is_finite() {
            return f64::INFINITY;
        }
        if (r.value - prev).abs() <= 1e-10 * r.value.abs().max(1e-300) {
            return r.value;
        }
        prev = r.value;
        window *= 2.0;
    }
    f64::INFINITY
}

/// Numeric proxies for the analyticity assumption on the form factor:
/// strip width, even regular extension of `p f(p)` at 0, and finite
/// weighted moments of `g_f` and of its mirror.
pub fn validate_a2(ff: &FormFactor, model: &SystemModel) -> A2Report {
    let strip_needed = 8.0 * model.h_norm();
    let strip = A2Check {
        name: "strip",
        pass: ff.r_max > strip_needed,
        value: ff.r_max,
        threshold: strip_needed,
    };

    // An even regular extension of h(p) = p f(p) needs h'(0) = 0.
    let h = |p: f64| p * ff.profile(p);
    let d = EVEN_STEP;
    let slope = (-3.0 * h(0.0) + 4.0 * h(d) - h(2.0 * d)) / (2.0 * d);
    let scale = 1.0 + (1..=100).map(|i| h(0.05 * i as f64).abs()).fold(0.0, f64::max);
    let evenness = A2Check {
        name: "evenness",
        pass: slope.abs() <= EVEN_TOL * scale,
        value: slope.abs(),
        threshold: EVEN_TOL * scale,
    };

    let moment = weighted_moment(|p| glue_form_factor(ff, p).norm_sqr(), ff.width);
    let mirror = weighted_moment(|p| glue_form_factor_mirror(ff, p).norm_sqr(), ff.width);
    A2Report {
        checks: vec![
            strip,
            evenness,
            A2Check { name: "moment", pass: moment.is_finite(), value: moment, threshold: f64::INFINITY },
            A2Check { name: "mirror-moment", pass: mirror.is_finite(), value: mirror, threshold: f64::INFINITY },
        ],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logistic_is_stable_at_extremes() {
        assert_eq!(logistic(-1e4), 0.0);
        assert_eq!(logistic(1e4), 1.0);
        assert!((logistic(0.0) - 0.5).abs() < 1e-16);
    }

    #[test]
    fn registry_names_round_trip() {
        for k in [FormFactorKind::GaussianP, FormFactorKind::Gaussian, FormFactorKind::OhmicExp] {
            assert_eq!(FormFactorKind::from_name(k.name()).unwrap(), k);
        }
        assert!(FormFactorKind::from_name("lorentzian").is_err());
    }

    #[test]
    fn zero_weight_has_empty_support() {
        let g = SpectralFunction::from_fn(|_| 0.0).unwrap();
        assert!(g.is_zero());
        assert_eq!(pv_integral(&g, 0.3).unwrap(), 0.0);
        assert!(SpectralFunction::from_fn(|p| 1.0 / (1.0 + p * p)).is_err());
    }
}
