// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Periodic control schedules and the dynamical-decoupling machinery.
//!
//! Every schedule has the form `H_c(t) = h(t) H_dir` with a fixed Hermitian
//! direction `H_dir` commuting with `H_s`, so the control propagator is
//! `V_c(t) = exp(i Theta(t) H_dir)` with `Theta(t) = int_0^t h`. Smooth
//! schedules use `h(t) = (mu/T) kappa(t/T)` with a 1-periodic trigonometric
//! profile `kappa`; bang-bang schedules apply instantaneous kicks
//! `exp(i c_l H_dir)` to `V_c` at times `(j + alpha_l) T`.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    c64, commutator, frobenius, hs_inner, is_finite, is_hermitian, op_norm,
    unitary_exp, CMatrix, ZERO,
};
use crate::quad::{brent, integrate_with, QuadOptions};
use crate::system::{validate_state, SystemModel};

/// Default absolute tolerance for decoupling verdicts.
pub const DD_TOL: f64 = 1e-7;
/// Samples per period of the trapezoid rule used for Fourier modes.
pub const FOURIER_SAMPLES: usize = 4096;
/// Kicks closer than this fraction of a period to a query time count as
/// not yet applied.
pub const KICK_SNAP: f64 = 1e-9;
const DD_BASE_POINTS: usize = 16;
const COMMUTE_SAMPLES: usize = 64;

/// 1-periodic profile `kappa(s) = mean + sum_n a_n cos(2 pi n s) + b_n sin(2 pi n s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Harmonics {
    #[serde(default)]
    pub mean: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

impl Harmonics {
    /// `kappa(s) = cos(2 pi s)`.
    pub fn cosine() -> Self {
        Harmonics {
            mean: 0.0,
            cos: vec![1.0],
            sin: vec![],
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let mut v = self.mean;
        for (n, a) in self.cos.iter().enumerate() {
            v += a * (2.0 * PI * (n + 1) as f64 * s).cos();
        }
        for (n, b) in self.sin.iter().enumerate() {
            v += b * (2.0 * PI * (n + 1) as f64 * s).sin();
        }
        v
    }

    /// `int_0^u kappa(s) ds`.
    pub fn integral(&self, u: f64) -> f64 {
        let mut v = self.mean * u;
        for (n, a) in self.cos.iter().enumerate() {
            let w = 2.0 * PI * (n + 1) as f64;
            v += a * (w * u).sin() / w;
        }
        for (n, b) in self.sin.iter().enumerate() {
            let w = 2.0 * PI * (n + 1) as f64;
            v += b * (1.0 - (w * u).cos()) / w;
        }
        v
    }

    fn max_abs(&self) -> f64 {
        (0..FOURIER_SAMPLES)
            .map(|m| self.value(m as f64 / FOURIER_SAMPLES as f64).abs())
            .fold(0.0, f64::max)
    }

    fn is_finite(&self) -> bool {
        self.mean.is_finite() && self.cos.iter().chain(&self.sin).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kick {
    /// Position within the period, in `(0, 1)`.
    pub alpha: f64,
    /// Kick weight; the amplitude is folded in.
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Smooth { amplitude: f64, shape: Harmonics },
    BangBang { kicks: Vec<Kick> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Smooth,
    BangBang,
}

/// A `T`-periodic control Hamiltonian `H_c(t) = h(t) H_dir`.
#[derive(Debug, Clone)]
pub struct ControlSchedule {
    period: f64,
    direction: Arc<CMatrix>,
    direction_norm: f64,
    profile: Profile,
}

impl ControlSchedule {
    pub fn smooth(period: f64, amplitude: f64, shape: Harmonics, direction: CMatrix) -> Result<Self> {
        if !amplitude.is_finite() || !shape.is_finite() {
            return Err(Error::arg("control amplitude and profile must be finite"));
        }
        Self::build(period, direction, Profile::Smooth { amplitude, shape })
    }

    /// `kappa = cos(2 pi s)` with amplitude `mu`.
    pub fn sinusoidal(period: f64, mu: f64, direction: CMatrix) -> Result<Self> {
        Self::smooth(period, mu, Harmonics::cosine(), direction)
    }

    /// `H_c = 0`.
    pub fn none(period: f64, dim: usize) -> Result<Self> {
        Self::smooth(period, 0.0, Harmonics { mean: 0.0, cos: vec![], sin: vec![] }, CMatrix::zeros(dim, dim))
    }

    pub fn bang_bang(period: f64, kicks: Vec<Kick>, direction: CMatrix) -> Result<Self> {
        if kicks.is_empty() {
            return Err(Error::arg("bang-bang schedule needs at least one kick"));
        }
        let mut prev = 0.0;
        for k in &kicks {
            if !(k.alpha > prev && k.alpha < 1.0) || !k.c.is_finite() {
                return Err(Error::arg(
                    "kick positions must be strictly increasing inside (0, 1) with finite weights",
                ));
            }
            prev = k.alpha;
        }
        let total: f64 = kicks.iter().map(|k| k.c).sum();
        if total.abs() > 1e-12 {
            return Err(Error::arg(format!(
                "bang-bang weights must sum to zero, got {total:.3e}"
            )));
        }
        Self::build(period, direction, Profile::BangBang { kicks })
    }

    fn build(period: f64, direction: CMatrix, profile: Profile) -> Result<Self> {
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::arg("control period must be positive"));
        }
        if !direction.is_square() || !is_finite(&direction) || !is_hermitian(&direction, 1e-12 * (1.0 + frobenius(&direction))) {
            return Err(Error::arg("control direction must be a finite Hermitian matrix"));
        }
        let direction_norm = op_norm(&direction);
        Ok(ControlSchedule {
            period,
            direction: Arc::new(direction),
            direction_norm,
            profile,
        })
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn direction(&self) -> &CMatrix {
        &self.direction
    }

    pub fn profile(&self) -> &Profile {
        &self.profile
    }

    pub fn kind(&self) -> ScheduleKind {
        match self.profile {
            Profile::Smooth { .. } => ScheduleKind::Smooth,
            Profile::BangBang { .. } => ScheduleKind::BangBang,
        }
    }

    pub fn dim(&self) -> usize {
        self.direction.nrows()
    }

    pub fn amplitude(&self) -> Option<f64> {
        match &self.profile {
            Profile::Smooth { amplitude, .. } => Some(*amplitude),
            Profile::BangBang { .. } => None,
        }
    }

    /// True when `H_c` vanishes identically.
    pub fn is_trivial(&self) -> bool {
        if self.direction_norm == 0.0 {
            return true;
        }
        match &self.profile {
            Profile::Smooth { amplitude, shape } => {
                *amplitude == 0.0
                    || (shape.mean == 0.0 && shape.cos.iter().chain(&shape.sin).all(|&x| x == 0.0))
            }
            Profile::BangBang { kicks } => kicks.iter().all(|k| k.c == 0.0),
        }
    }

    /// Same schedule with another amplitude (smooth kind only).
    pub fn with_amplitude(&self, mu: f64) -> Result<Self> {
        match &self.profile {
            Profile::Smooth { shape, .. } => {
                Self::smooth(self.period, mu, shape.clone(), (*self.direction).clone())
            }
            Profile::BangBang { .. } => Err(Error::arg("bang-bang schedules have no amplitude")),
        }
    }

    /// `H'_c(t) = (T/T') H_c(t T/T')`, the period-rescaled schedule.
    pub fn rescaled(&self, new_period: f64) -> Result<Self> {
        Self::build(new_period, (*self.direction).clone(), self.profile.clone())
    }

    /// Scalar control strength `h(t)`; zero between bang-bang kicks.
    pub fn strength(&self, t: f64) -> f64 {
        match &self.profile {
            Profile::Smooth { amplitude, shape } => amplitude / self.period * shape.value(t / self.period),
            Profile::BangBang { .. } => 0.0,
        }
    }

    pub fn h_c(&self, t: f64) -> CMatrix {
        &*self.direction * c64(self.strength(t), 0.0)
    }

    /// Accumulated control phase `Theta(t) = int_0^t h(s) ds`, kicks at
    /// `(j + alpha_l) T` counted on `[0, t)`.
    pub fn phase(&self, t: f64) -> f64 {
        let u = t / self.period;
        match &self.profile {
            Profile::Smooth { amplitude, shape } => amplitude * shape.integral(u),
            Profile::BangBang { kicks } => kicks
                .iter()
                .map(|k| k.c * (u - k.alpha - KICK_SNAP).ceil().max(0.0))
                .sum(),
        }
    }

    /// Kick times and weights inside `[t0, t1)`, both ends moved back by
    /// `KICK_SNAP` periods.
    pub fn kicks_between(&self, t0: f64, t1: f64) -> Vec<(f64, f64)> {
        let Profile::BangBang { kicks } = &self.profile else {
            return Vec::new();
        };
        let mut out = Vec::new();
        let snap = KICK_SNAP * self.period;
        let first = (t0 / self.period).floor() as i64 - 1;
        let last = (t1 / self.period).ceil() as i64 + 1;
        for j in first..=last {
            for k in kicks {
                let tk = (j as f64 + k.alpha) * self.period;
                if tk >= t0 - snap && tk < t1 - snap {
                    out.push((tk, k.c));
                }
            }
        }
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    /// `max_t ||H_c(t)||`; infinite for bang-bang kicks.
    pub fn max_control_norm(&self) -> f64 {
        match &self.profile {
            Profile::Smooth { amplitude, shape } => {
                amplitude.abs() / self.period * shape.max_abs() * self.direction_norm
            }
            Profile::BangBang { .. } if self.is_trivial() => 0.0,
            Profile::BangBang { .. } => f64::INFINITY,
        }
    }

    /// Dimensionless control strength `D = T max ||H_c||`. For bang-bang
    /// schedules this is the total kick weight `sum |c_l| ||H_dir||`.
    pub fn strength_d(&self) -> f64 {
        match &self.profile {
            Profile::Smooth { .. } => self.period * self.max_control_norm(),
            Profile::BangBang { kicks } => {
                kicks.iter().map(|k| k.c.abs()).sum::<f64>() * self.direction_norm
            }
        }
    }

    /// Commutation defect `max_t ||[H_s, H_c(t)]||` over 64 sample times.
    pub fn commutation_defect(&self, model: &SystemModel) -> f64 {
        let base = op_norm(&commutator(model.h_s(), &self.direction));
        match &self.profile {
            Profile::Smooth { .. } => (0..COMMUTE_SAMPLES)
                .map(|m| {
                    let t = self.period * m as f64 / COMMUTE_SAMPLES as f64;
                    self.strength(t).abs() * base
                })
                .fold(0.0, f64::max),
            Profile::BangBang { kicks } => {
                kicks.iter().map(|k| k.c.abs()).fold(0.0, f64::max) * base
            }
        }
    }

    /// Checks dimension, commutation with `H_s`, and `T ||H_s|| < pi/2`.
    pub fn validate_for(&self, model: &SystemModel) -> Result<()> {
        if self.dim() != model.dim() {
            return Err(Error::DimensionMismatch {
                expected: model.dim(),
                got: self.dim(),
            });
        }
        let defect = self.commutation_defect(model);
        if defect > 1e-12 {
            return Err(Error::Precondition(format!(
                "control does not commute with H_s (defect {defect:.3e})"
            )));
        }
        check_period_bound(model, self.period)
    }
}

/// `T ||H_s|| < pi/2`.
pub fn check_period_bound(model: &SystemModel, period: f64) -> Result<()> {
    let v = period * model.h_norm();
    if v >= PI / 2.0 {
        return Err(Error::Precondition(format!(
            "T*||H_s|| = {v:.6} must be < pi/2"
        )));
    }
    Ok(())
}

/// Control propagator `V_c(t)`, solving `V' = i H_c(t) V`, `V(0) = 1`.
pub fn vc_at(schedule: &ControlSchedule, t: f64) -> Result<CMatrix> {
    if !(t >= 0.0) {
        return Err(Error::arg(format!("vc_at: time must be non-negative, got {t}")));
    }
    Ok(unitary_exp(schedule.direction(), -schedule.phase(t)))
}

/// Interaction-picture coupling `Q(t) = V_c(t)^* Q V_c(t)`.
pub fn q_of_t(model: &SystemModel, schedule: &ControlSchedule, t: f64) -> Result<CMatrix> {
    let v = vc_at(schedule, t)?;
    Ok(v.adjoint() * model.q() * v)
}

fn conjugated(schedule: &ControlSchedule, op: &CMatrix, t: f64) -> CMatrix {
    let v = unitary_exp(schedule.direction(), -schedule.phase(t));
    v.adjoint() * op * v
}

/// Breakpoints of the piecewise-constant `Q(t)` on `[t0, t1]`.
fn kick_breakpoints(schedule: &ControlSchedule, t0: f64, t1: f64) -> Vec<f64> {
    schedule
        .kicks_between(t0, t1 + 2.0 * KICK_SNAP * schedule.period)
        .into_iter()
        .map(|(t, _)| t)
        .collect()
}

/// `int_t0^t1 V_c^* A V_c ds` by adaptive quadrature.
fn integrate_conjugated(
    schedule: &ControlSchedule,
    op: &CMatrix,
    t0: f64,
    t1: f64,
    abs_tol: f64,
) -> Result<CMatrix> {
    let bps = kick_breakpoints(schedule, t0, t1);
    let opts = QuadOptions {
        abs_tol,
        rel_tol: 0.0,
        max_intervals: 50_000,
    };
    integrate_with(|s| conjugated(schedule, op, s), t0, t1, &bps, opts).map(|r| r.value)
}

/// Outcome of the decoupling check.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DdReport {
    /// `max_t ||int_t^{t+T} Q(s) ds||` over 16 base points in `[0, T)`.
    pub residual: f64,
    /// `residual / T`, compared against `tol` for the residual verdict.
    pub residual_normalized: f64,
    /// `||Q(T) - Q||`.
    pub periodicity_defect: f64,
    /// `||Q^(0)||`.
    pub zero_mode_norm: f64,
    pub tol: f64,
    /// Verdict of the residual formulation.
    pub residual_pass: bool,
    /// Verdict of the pair (periodicity, vanishing zero mode).
    pub pass: bool,
}

impl DdReport {
    pub fn formulations_agree(&self) -> bool {
        self.pass == self.residual_pass
    }
}

/// Checks the dynamical decoupling condition in both of its equivalent forms.
pub fn check_dd(model: &SystemModel, schedule: &ControlSchedule, tol: f64) -> Result<DdReport> {
    if !(tol > 0.0) {
        return Err(Error::arg("check_dd: tolerance must be positive"));
    }
    if schedule.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: schedule.dim(),
        });
    }
    let period = schedule.period();
    let q = model.q();
    let quad_tol = 1e-13 * period * (1.0 + frobenius(q));

    let mut residual: f64 = 0.0;
    for j in 0..DD_BASE_POINTS {
        let t = period * j as f64 / DD_BASE_POINTS as f64;
        let integral = integrate_conjugated(schedule, q, t, t + period, quad_tol)?;
        residual = residual.max(op_norm(&integral));
    }
    let zero_mode = integrate_conjugated(schedule, q, 0.0, period, quad_tol)? / c64(period, 0.0);
    let zero_mode_norm = op_norm(&zero_mode);
    let periodicity_defect = op_norm(&(conjugated(schedule, q, period) - q));

    let residual_normalized = residual / period;
    Ok(DdReport {
        residual,
        residual_normalized,
        periodicity_defect,
        zero_mode_norm,
        tol,
        residual_pass: residual_normalized <= tol,
        pass: periodicity_defect <= tol && zero_mode_norm <= tol,
    })
}

/// Zero Fourier mode `Q^(0) = (1/T) int_0^T Q(t) dt`.
pub fn zero_mode(model: &SystemModel, schedule: &ControlSchedule) -> Result<CMatrix> {
    let modes = mode_transform(schedule, model.q(), 0)?;
    Ok(modes.into_iter().next().unwrap())
}

/// Signed scalar whose zeros are the decoupling amplitudes: the component
/// of `Q^(0)` along `Q`, scaled so that it equals `||Q^(0)||` whenever
/// `Q^(0)` is a real multiple of `Q`.
pub fn zero_mode_surrogate(model: &SystemModel, schedule: &ControlSchedule) -> Result<f64> {
    let z = zero_mode(model, schedule)?;
    let q = model.q();
    let qq = hs_inner(q, q)?.re;
    if qq == 0.0 {
        return Ok(0.0);
    }
    Ok(hs_inner(q, &z)?.re / qq * model.q_norm())
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TuneResult {
    pub mu: f64,
    pub surrogate: f64,
    pub zero_mode_norm: f64,
    pub evaluations: usize,
}

/// Finds the amplitude `mu*` inside `bracket` at which the zero mode of
/// `Q(t)` vanishes, for the family `mu -> template.with_amplitude(mu)`.
pub fn tune_amplitude(
    model: &SystemModel,
    template: &ControlSchedule,
    bracket: (f64, f64),
) -> Result<TuneResult> {
    let (lo, hi) = bracket;
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::arg("tune_amplitude: bracket must be a finite interval lo < hi"));
    }
    let count = std::cell::Cell::new(0usize);
    let surrogate = |mu: f64| -> f64 {
        count.set(count.get() + 1);
        template
            .with_amplitude(mu)
            .and_then(|s| zero_mode_surrogate(model, &s))
            .unwrap_or(f64::NAN)
    };
    const SCAN: usize = 64;
    let trace: Vec<(f64, f64)> = (0..=SCAN)
        .map(|i| {
            let mu = lo + (hi - lo) * i as f64 / SCAN as f64;
            (mu, surrogate(mu))
        })
        .collect();
    if trace.iter().any(|(_, s)| !s.is_finite()) {
        return Err(Error::Numeric("tune_amplitude: surrogate not finite on bracket".into()));
    }
    let crossing = trace.windows(2).find(|w| w[0].1 == 0.0 || w[0].1.signum() != w[1].1.signum());
    let Some(w) = crossing else {
        return Err(Error::SearchFailure {
            message: format!("zero-mode surrogate has no sign change on [{lo}, {hi}]"),
            trace,
        });
    };
    let mu = brent(surrogate, w[0].0, w[1].0, 1e-14, 1e-15)?;
    let tuned = template.with_amplitude(mu)?;
    let s = zero_mode_surrogate(model, &tuned)?;
    let zn = op_norm(&zero_mode(model, &tuned)?);
    if s.abs() >= 1e-8 {
        return Err(Error::SearchFailure {
            message: format!("converged point mu={mu} leaves surrogate {s:.3e}"),
            trace,
        });
    }
    Ok(TuneResult {
        mu,
        surrogate: s,
        zero_mode_norm: zn,
        evaluations: count.get(),
    })
}

/// Fourier modes `(1/T) int_0^T e^{-2 pi i k t/T} V_c^* A V_c dt` for
/// `k = -K..=K`, returned in order of increasing `k`.
fn mode_transform(schedule: &ControlSchedule, op: &CMatrix, k_max: usize) -> Result<Vec<CMatrix>> {
    let d = op.nrows();
    match schedule.profile() {
        Profile::Smooth { .. } => {
            let m = FOURIER_SAMPLES;
            if k_max >= m / 2 {
                return Err(Error::arg(format!(
                    "Fourier cutoff {k_max} exceeds the sampling limit {}",
                    m / 2 - 1
                )));
            }
            let samples: Vec<CMatrix> = (0..m)
                .map(|j| conjugated(schedule, op, schedule.period() * j as f64 / m as f64))
                .collect();
            let fft = FftPlanner::<f64>::new().plan_fft_forward(m);
            let mut out = vec![CMatrix::zeros(d, d); 2 * k_max + 1];
            let mut buf = vec![ZERO; m];
            for r in 0..d {
                for c in 0..d {
                    for (b, s) in buf.iter_mut().zip(&samples) {
                        *b = s[(r, c)];
                    }
                    fft.process(&mut buf);
                    for (idx, k) in (-(k_max as i64)..=k_max as i64).enumerate() {
                        let bin = k.rem_euclid(m as i64) as usize;
                        out[idx][(r, c)] = buf[bin] / m as f64;
                    }
                }
            }
            Ok(out)
        }
        Profile::BangBang { kicks } => {
            let mut edges = vec![0.0];
            edges.extend(kicks.iter().map(|k| k.alpha));
            edges.push(1.0);
            let pieces: Vec<(f64, f64, CMatrix)> = edges
                .windows(2)
                .map(|w| {
                    let mid = 0.5 * (w[0] + w[1]) * schedule.period();
                    (w[0], w[1], conjugated(schedule, op, mid))
                })
                .collect();
            Ok((-(k_max as i64)..=k_max as i64)
                .map(|k| {
                    pieces.iter().fold(CMatrix::zeros(d, d), |acc, (u0, u1, piece)| {
                        let w = if k == 0 {
                            c64(u1 - u0, 0.0)
                        } else {
                            let kk = 2.0 * PI * k as f64;
                            (Complex64::from_polar(1.0, -kk * u1) - Complex64::from_polar(1.0, -kk * u0))
                                / c64(0.0, -kk)
                        };
                        acc + piece * w
                    })
                })
                .collect())
        }
    }
}

/// Ladder operators `[q_{-1}, q_{+1}]` of a two-level model: the parts of
/// `Q` lowering from, respectively raising to, the upper level of `H_s`.
pub fn ladder_operators(model: &SystemModel) -> Result<[CMatrix; 2]> {
    let sp = model.spectrum();
    if model.dim() != 2 || !sp.is_simple() {
        return Err(Error::UnsupportedModel(
            "ladder operators need a two-level system with non-degenerate H_s".into(),
        ));
    }
    let p_low = &sp.projectors[0];
    let p_high = &sp.projectors[1];
    let q = model.q();
    Ok([p_high * q * p_low, p_low * q * p_high])
}

/// Bohr gap `E_high - E_low` of a two-level model.
pub fn bohr_gap(model: &SystemModel) -> Result<f64> {
    let sp = model.spectrum();
    if model.dim() != 2 || !sp.is_simple() {
        return Err(Error::UnsupportedModel("Bohr gap needs a non-degenerate qubit".into()));
    }
    Ok(sp.eigenvalues[1] - sp.eigenvalues[0])
}

/// Fourier modes of `Q(t)` and, for qubits, of its ladder parts.
#[derive(Debug, Clone)]
pub struct FourierTable {
    pub period: f64,
    pub k_max: usize,
    /// `Q^(k)` for `k = -K..=K`.
    pub modes: Vec<CMatrix>,
    /// `Q_{k,a}` for `a = -1` and `a = +1`, each indexed like `modes`.
    pub ladder: Option<[Vec<CMatrix>; 2]>,
    /// `(1/T) int_0^T ||Q(t)||_HS^2 dt`.
    pub time_norm_sq: f64,
    /// `sum_{|k| <= K} ||Q^(k)||_HS^2`.
    pub mode_norm_sq: f64,
    /// `|time_norm_sq - mode_norm_sq|`, the missing Parseval mass.
    pub tail_bound: f64,
}

impl FourierTable {
    pub fn mode(&self, k: i64) -> Option<&CMatrix> {
        index(k, self.k_max).map(|i| &self.modes[i])
    }

    /// `Q_{k,a}` with `a = -1` or `a = +1`.
    pub fn ladder_mode(&self, k: i64, a: i32) -> Option<&CMatrix> {
        let ladder = self.ladder.as_ref()?;
        let slot = match a {
            -1 => 0,
            1 => 1,
            _ => return None,
        };
        index(k, self.k_max).map(|i| &ladder[slot][i])
    }

    pub fn parseval_defect(&self) -> f64 {
        self.tail_bound
    }
}

fn index(k: i64, k_max: usize) -> Option<usize> {
    (k.unsigned_abs() as usize <= k_max).then(|| (k + k_max as i64) as usize)
}

/// Fourier table with cutoff `K`.
pub fn fourier_modes(model: &SystemModel, schedule: &ControlSchedule, k_max: usize) -> Result<FourierTable> {
    if k_max == 0 {
        return Err(Error::arg("fourier_modes: cutoff K must be at least 1"));
    }
    if schedule.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: schedule.dim(),
        });
    }
    let modes = mode_transform(schedule, model.q(), k_max)?;
    let ladder = match ladder_operators(model) {
        Ok([qm, qp]) => Some([
            mode_transform(schedule, &qm, k_max)?,
            mode_transform(schedule, &qp, k_max)?,
        ]),
        Err(_) => None,
    };
    let time_norm_sq = time_norm_sq(model, schedule);
    let mode_norm_sq: f64 = modes.iter().map(|m| frobenius(m).powi(2)).sum();
    Ok(FourierTable {
        period: schedule.period(),
        k_max,
        modes,
        ladder,
        time_norm_sq,
        mode_norm_sq,
        tail_bound: (time_norm_sq - mode_norm_sq).abs(),
    })
}

/// Grows `K` (doubling from 8) until the Parseval tail drops below `tail_tol`
/// or `k_cap` is reached.
pub fn fourier_modes_auto(
    model: &SystemModel,
    schedule: &ControlSchedule,
    tail_tol: f64,
    k_cap: usize,
) -> Result<FourierTable> {
    let cap = match schedule.kind() {
        ScheduleKind::Smooth => k_cap.min(FOURIER_SAMPLES / 2 - 1),
        ScheduleKind::BangBang => k_cap,
    };
    let mut k = 8.min(cap).max(1);
    loop {
        let table = fourier_modes(model, schedule, k)?;
        if table.tail_bound < tail_tol || k >= cap {
            return Ok(table);
        }
        k = (2 * k).min(cap);
    }
}

/// Period average of `||Q(t)||_HS^2`, from time-domain samples.
fn time_norm_sq(model: &SystemModel, schedule: &ControlSchedule) -> f64 {
    match schedule.profile() {
        Profile::Smooth { .. } => {
            let m = FOURIER_SAMPLES;
            (0..m)
                .map(|j| {
                    let q = conjugated(schedule, model.q(), schedule.period() * j as f64 / m as f64);
                    frobenius(&q).powi(2)
                })
                .sum::<f64>()
                / m as f64
        }
        Profile::BangBang { kicks } => {
            let mut edges = vec![0.0];
            edges.extend(kicks.iter().map(|k| k.alpha));
            edges.push(1.0);
            edges
                .windows(2)
                .map(|w| {
                    let q = conjugated(schedule, model.q(), 0.5 * (w[0] + w[1]) * schedule.period());
                    (w[1] - w[0]) * frobenius(&q).powi(2)
                })
                .sum()
        }
    }
}

/// Jumps of the rotated ladder operator at each kick of a bang-bang
/// schedule: `(alpha_l, dQ_l)` with `dQ_l = Q_a(alpha_l T+) - Q_a(alpha_l T-)`.
#[derive(Debug, Clone)]
pub struct KickJumps {
    pub jumps: Vec<(f64, CMatrix)>,
}

impl KickJumps {
    pub fn new(model: &SystemModel, schedule: &ControlSchedule, a: i32) -> Result<Self> {
        let Profile::BangBang { kicks } = schedule.profile() else {
            return Err(Error::arg("closed-form coefficients need a bang-bang schedule"));
        };
        let slot = match a {
            -1 => 0,
            1 => 1,
            _ => return Err(Error::arg("ladder index a must be -1 or +1")),
        };
        let q_a = ladder_operators(model)?[slot].clone();
        let at_phase = |theta: f64| {
            let v = unitary_exp(schedule.direction(), -theta);
            v.adjoint() * &q_a * v
        };
        // Phase accumulated strictly before each kick, summed directly so
        // that rounding in alpha_l T / T cannot count the kick itself.
        let mut theta = 0.0;
        let mut jumps = Vec::with_capacity(kicks.len());
        for kick in kicks {
            jumps.push((kick.alpha, at_phase(theta + kick.c) - at_phase(theta)));
            theta += kick.c;
        }
        Ok(KickJumps { jumps })
    }

    /// `Q_{k,a}` for `k != 0`.
    pub fn coefficient(&self, k: i64) -> CMatrix {
        let d = self.jumps.first().map_or(0, |(_, m)| m.nrows());
        let mut sum = CMatrix::zeros(d, d);
        for (alpha, jump) in &self.jumps {
            sum += jump * Complex64::from_polar(1.0, -2.0 * PI * alpha * k as f64);
        }
        sum * c64(0.0, -1.0 / (2.0 * PI * k as f64))
    }

    /// `B` with `||Q_{k,a}|| <= B / |k|`.
    pub fn decay_constant(&self) -> f64 {
        self.jumps.iter().map(|(_, j)| op_norm(j)).sum::<f64>() / (2.0 * PI)
    }
}

/// Closed-form bang-bang Fourier coefficient
/// `Q_{k,a} = -(i / 2 pi k) sum_l e^{-2 pi i alpha_l k} dQ_l`.
pub fn qka_bangbang_closed_form(
    model: &SystemModel,
    schedule: &ControlSchedule,
    k: i64,
    a: i32,
) -> Result<CMatrix> {
    let jumps = KickJumps::new(model, schedule, a)?;
    if k == 0 {
        let report = check_dd(model, schedule, DD_TOL)?;
        if !report.pass {
            return Err(Error::Precondition(format!(
                "k = 0 coefficient vanishes only under decoupling; zero-mode norm is {:.3e}",
                report.zero_mode_norm
            )));
        }
        let d = model.dim();
        return Ok(CMatrix::zeros(d, d));
    }
    Ok(jumps.coefficient(k))
}

/// Schrödinger-picture state of the decoupled, driven system:
/// `rho(t) = e^{-itH_s} V_c(t)^* rho0 V_c(t) e^{itH_s}`.
pub fn effective_dynamics(
    model: &SystemModel,
    schedule: &ControlSchedule,
    rho0: &CMatrix,
    t: f64,
) -> Result<CMatrix> {
    validate_state(rho0, model.dim(), 1e-10)?;
    let v = vc_at(schedule, t)?;
    let u = unitary_exp(model.h_s(), t) * v.adjoint();
    Ok(&u * rho0 * u.adjoint())
}

/// Control phases `Theta_k(t) = <phi_k, (int_0^t H_c) phi_k>` on the
/// eigenvectors of `H_s` (ascending energy).
pub fn control_phases(model: &SystemModel, schedule: &ControlSchedule, t: f64) -> Vec<f64> {
    let sp = model.spectrum();
    let theta = schedule.phase(t);
    let dir = sp.to_eigenbasis(schedule.direction());
    (0..model.dim()).map(|k| theta * dir[(k, k)].re).collect()
}

/// `max ||H_c|| >= ln(2) / (2T)`, necessary for decoupling a non-zero `Q`.
pub fn satisfies_strength_lower_bound(schedule: &ControlSchedule) -> bool {
    schedule.max_control_norm() >= 2f64.ln() / (2.0 * schedule.period())
}
