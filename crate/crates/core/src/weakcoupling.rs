// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Second-order weak-coupling generator of a decoupled qubit.
//!
//! For a two-level model the coupling is split into ladder parts
//! `q_{-1}, q_{+1}` and each part into its Fourier modes `Q_{k,a}` under the
//! control. The level-shift generator is a Lindblad form with jump operators
//! `Q_{k,a}`, rates `pi G(k/T + a gap)` and a Hamiltonian part built from the
//! principal values `PV[1/(p - x)](G)`.

use std::f64::consts::PI;

use nalgebra::Matrix2;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize};

use crate::control::{
    bohr_gap, check_dd, fourier_modes, fourier_modes_auto, vc_at, ControlSchedule, FourierTable,
    KickJumps, Profile, DD_TOL, FOURIER_SAMPLES,
};
use crate::error::{Error, Result};
use crate::linalg::{build_superop, c64, op_norm, unitary_exp, CMatrix, SuperOp, SuperOpKind};
use crate::reservoir::{pv_integral, SpectralFunction};
use crate::system::{validate_state, SystemModel};

/// Terms with `|k|` up to at least this are listed in the generator.
const LISTED_K: usize = 64;
const CHUNK: usize = 1 << 14;

#[derive(Debug, Clone, Copy)]
pub struct LevelShiftOptions {
    /// Bound on `sum_{|k| > K} ||Q_{k,a}||^2 (pi G + |PV|)`.
    pub tail_tol: f64,
    /// Largest cutoff tried for bang-bang schedules. Smooth schedules are
    /// limited by the Fourier sampling instead.
    pub k_cap: usize,
}

impl Default for LevelShiftOptions {
    fn default() -> Self {
        LevelShiftOptions {
            tail_tol: 1e-12,
            k_cap: 1 << 23,
        }
    }
}

/// Which power of `G` enters the rate sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RatePower {
    /// `sum ||Q_{k,a}||^2 |G|^2`, the default.
    #[default]
    Squared,
    /// `sum ||Q_{k,a}||^2 G`.
    First,
}

/// Data of one `(k, a)` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateTerm {
    pub k: i64,
    pub a: i32,
    /// `k/T + a gap`
    pub x: f64,
    pub g: f64,
    /// Dissipator rate `pi G(x)`.
    pub rate: f64,
    pub pv: f64,
    /// `||Q_{k,a}||^2` (operator norm).
    pub q_norm_sq: f64,
}

#[derive(Debug, Clone)]
pub struct WeakCouplingGenerator {
    pub lambda: f64,
    pub period: f64,
    pub gap: f64,
    /// `lambda^2 A_2` as a superoperator.
    pub a2: SuperOp,
    /// Hamiltonian part `Delta = [S, .]`.
    pub delta: SuperOp,
    /// `S = -(lambda^2/2) sum PV Q_{k,a}^* Q_{k,a}`.
    pub s: CMatrix,
    /// Cutoff `K` of the assembled sum.
    pub k_used: usize,
    /// Bound on the neglected weight beyond `K`.
    pub tail_bound: f64,
    /// Every term with `|k| <= k_listed`; all terms with `G != 0` are listed.
    pub terms: Vec<RateTerm>,
    pub k_listed: usize,
    h_s: CMatrix,
    schedule: ControlSchedule,
}

impl WeakCouplingGenerator {
    pub fn schedule(&self) -> &ControlSchedule {
        &self.schedule
    }

    pub fn h_s(&self) -> &CMatrix {
        &self.h_s
    }

    /// Every listed dissipator rate is nonnegative.
    pub fn rates_nonnegative(&self) -> bool {
        self.terms.iter().all(|t| t.rate >= 0.0)
    }

    /// The same generator at coupling `lambda`; every part scales with
    /// `lambda^2`.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        if self.lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::arg("with_lambda: needs a finite target and a non-zero base coupling"));
        }
        let r = (lambda / self.lambda).powi(2);
        let z = c64(r, 0.0);
        Ok(WeakCouplingGenerator {
            lambda,
            a2: self.a2.scale(z),
            delta: self.delta.scale(z),
            s: &self.s * z,
            ..self.clone()
        })
    }
}

enum Coefficients {
    Table(FourierTable),
    Kicks([Vec<(f64, Matrix2<Complex64>)>; 2]),
}

fn to_fixed(m: &CMatrix) -> Matrix2<Complex64> {
    Matrix2::new(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)])
}

fn to_dynamic(m: &Matrix2<Complex64>) -> CMatrix {
    CMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

impl Coefficients {
    fn kicks(model: &SystemModel, schedule: &ControlSchedule) -> Result<Self> {
        let fixed = |a| -> Result<Vec<(f64, Matrix2<Complex64>)>> {
            Ok(KickJumps::new(model, schedule, a)?
                .jumps
                .iter()
                .map(|(alpha, j)| (*alpha, to_fixed(j)))
                .collect())
        };
        Ok(Coefficients::Kicks([fixed(-1)?, fixed(1)?]))
    }

    /// `Q_{k,a}` on the stack; the models here are qubits.
    fn get(&self, k: i64, a: i32) -> Matrix2<Complex64> {
        match self {
            Coefficients::Table(t) => to_fixed(t.ladder_mode(k, a).expect("k within table")),
            Coefficients::Kicks(j) => {
                let mut sum = Matrix2::zeros();
                for (alpha, jump) in &j[if a == -1 { 0 } else { 1 }] {
                    sum += jump * Complex64::from_polar(1.0, -2.0 * PI * alpha * k as f64);
                }
                sum * c64(0.0, -1.0 / (2.0 * PI * k as f64))
            }
        }
    }
}

/// `L_s = [H_s, .]` as a superoperator.
pub fn liouvillean(model: &SystemModel) -> SuperOp {
    build_superop(SuperOpKind::Commutator, model.h_s()).expect("H_s is square")
}

/// Assembles `lambda^2 A_2` with the default truncation.
pub fn level_shift(
    model: &SystemModel,
    schedule: &ControlSchedule,
    g: &SpectralFunction,
    lambda: f64,
) -> Result<WeakCouplingGenerator> {
    level_shift_with(model, schedule, g, lambda, LevelShiftOptions::default())
}

fn check_preconditions(model: &SystemModel, schedule: &ControlSchedule) -> Result<f64> {
    let gap = bohr_gap(model)?;
    schedule.validate_for(model)?;
    let dd = check_dd(model, schedule, DD_TOL)?;
    if !dd.pass {
        return Err(Error::Precondition(format!(
            "decoupling condition violated: zero mode ||Q^(0)|| = {:.3e}, periodicity defect {:.3e}",
            dd.zero_mode_norm, dd.periodicity_defect
        )));
    }
    Ok(gap)
}

/// Assembles `lambda^2 A_2`, choosing the cutoff so that the neglected weight
/// stays below `opts.tail_tol` where possible.
pub fn level_shift_with(
    model: &SystemModel,
    schedule: &ControlSchedule,
    g: &SpectralFunction,
    lambda: f64,
    opts: LevelShiftOptions,
) -> Result<WeakCouplingGenerator> {
    let gap = check_preconditions(model, schedule)?;
    let period = schedule.period();
    let radius = g.radius();
    let k_support = (period * (radius + gap)).ceil() as usize;
    match schedule.profile() {
        Profile::Smooth { .. } => {
            // ||Q_{k,a}||^2 <= ||Q^(k)||_HS^2, so the Parseval tail bounds the
            // neglected weight once scaled by the largest rate.
            let weight = PI * g.sup() + pv_sup(g)?;
            let auto = fourier_modes_auto(
                model,
                schedule,
                opts.tail_tol / weight.max(f64::MIN_POSITIVE),
                FOURIER_SAMPLES / 2 - 1,
            )?;
            let table = if auto.k_max < k_support {
                fourier_modes(model, schedule, k_support)?
            } else {
                auto
            };
            let k_used = table.k_max;
            let tail_bound = table.tail_bound * weight;
            assemble(model, schedule, g, lambda, gap, Coefficients::Table(table), k_used, tail_bound)
        }
        Profile::BangBang { .. } => {
            let b = KickJumps::new(model, schedule, -1)?
                .decay_constant()
                .max(KickJumps::new(model, schedule, 1)?.decay_constant());
            // Past k0 only the principal values survive, with
            // |PV(x)| <= int|G| / (|x| - radius) and ||Q_{k,a}|| <= b/|k|.
            let k0 = period * (gap + radius);
            let scale = 2.0 * period * b * b * g.abs_mass();
            let bound = |k: usize| {
                let k = k as f64;
                if k <= k0 {
                    f64::INFINITY
                } else {
                    scale / (k * (k - k0))
                }
            };
            // Smallest K with scale / (K (K - k0)) <= tail_tol.
            let needed = 0.5 * (k0 + (k0 * k0 + 4.0 * scale / opts.tail_tol).sqrt());
            let floor = (2.0 * k0).ceil() as usize;
            let k_used = (needed.ceil() as usize)
                .max(floor)
                .max(k_support)
                .max(LISTED_K)
                .min(opts.k_cap.max(floor));
            assemble(model, schedule, g, lambda, gap, Coefficients::kicks(model, schedule)?, k_used, bound(k_used))
        }
    }
}

/// Assembles `lambda^2 A_2` with the sum cut at `|k| <= k_cut`.
pub fn level_shift_with_cutoff(
    model: &SystemModel,
    schedule: &ControlSchedule,
    g: &SpectralFunction,
    lambda: f64,
    k_cut: usize,
) -> Result<WeakCouplingGenerator> {
    let gap = check_preconditions(model, schedule)?;
    if k_cut == 0 {
        return Err(Error::arg("cutoff must be at least 1"));
    }
    let coefficients = match schedule.profile() {
        Profile::Smooth { .. } => Coefficients::Table(fourier_modes(model, schedule, k_cut)?),
        Profile::BangBang { .. } => Coefficients::kicks(model, schedule)?,
    };
    assemble(model, schedule, g, lambda, gap, coefficients, k_cut, f64::NAN)
}

/// `sup |PV|`: sampled over the support, and `int|G| / dist` outside.
fn pv_sup(g: &SpectralFunction) -> Result<f64> {
    if g.is_zero() {
        return Ok(0.0);
    }
    let (lo, hi) = g.support();
    let mut best = g.abs_mass();
    for i in 0..=64 {
        let x = lo - 1.0 + (hi - lo + 2.0) * i as f64 / 64.0;
        best = best.max(pv_integral(g, x)?.abs());
    }
    Ok(best)
}

struct Partial {
    m: Matrix2<Complex64>,
    dissipator: CMatrix,
    terms: Vec<RateTerm>,
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    model: &SystemModel,
    schedule: &ControlSchedule,
    g: &SpectralFunction,
    lambda: f64,
    gap: f64,
    coefficients: Coefficients,
    k_used: usize,
    tail_bound: f64,
) -> Result<WeakCouplingGenerator> {
    let d = model.dim();
    let period = schedule.period();
    let k_support = (period * (g.radius() + gap)).ceil() as usize;
    let k_listed = k_support.max(LISTED_K).min(k_used);
    let ks: Vec<i64> = (-(k_used as i64)..=k_used as i64).filter(|&k| k != 0).collect();
    let zero = || Partial {
        m: Matrix2::zeros(),
        dissipator: CMatrix::zeros(d * d, d * d),
        terms: Vec::new(),
    };

    // Chunks are evaluated in parallel and reduced in (a, k) order.
    let mut total = zero();
    for a in [-1i32, 1] {
        let partials: Vec<Result<Partial>> = ks
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut part = zero();
                for &k in chunk {
                    let q = coefficients.get(k, a);
                    let qq = q.adjoint() * q;
                    let x = k as f64 / period + a as f64 * gap;
                    let pv = pv_integral(g, x)?;
                    let gx = g.eval(x);
                    part.m += qq * c64(pv, 0.0);
                    if gx != 0.0 {
                        let (q, qq) = (to_dynamic(&q), to_dynamic(&qq));
                        let rate = PI * gx;
                        let cross = SuperOp::left(&q.adjoint()).compose(&SuperOp::right(&q));
                        let jump = cross.matrix() * c64(2.0, 0.0)
                            - SuperOp::left(&qq).matrix()
                            - SuperOp::right(&qq).matrix();
                        part.dissipator += jump * c64(rate, 0.0);
                    }
                    if k.unsigned_abs() as usize <= k_listed {
                        part.terms.push(RateTerm {
                            k,
                            a,
                            x,
                            g: gx,
                            rate: PI * gx,
                            pv,
                            q_norm_sq: op_norm(&to_dynamic(&q)).powi(2),
                        });
                    }
                }
                Ok(part)
            })
            .collect();
        for p in partials {
            let p = p?;
            total.m += p.m;
            total.dissipator += p.dissipator;
            total.terms.extend(p.terms);
        }
    }
    let m = to_dynamic(&total.m);

    let half = 0.5 * lambda * lambda;
    let hamiltonian = SuperOp::right(&m).sub(&SuperOp::left(&m));
    let delta = hamiltonian.scale(c64(half, 0.0));
    let dissipative = SuperOp::from_matrix(d, total.dissipator)?.scale(Complex64::new(0.0, -half));
    let a2 = dissipative.add(&delta);
    let s = &m * c64(-half, 0.0);
    Ok(WeakCouplingGenerator {
        lambda,
        period,
        gap,
        a2,
        delta,
        s,
        k_used,
        tail_bound,
        terms: total.terms,
        k_listed,
        h_s: model.h_s().clone(),
        schedule: schedule.clone(),
    })
}

/// The Hamiltonian correction `Delta`.
pub fn delta_correction(gen: &WeakCouplingGenerator) -> SuperOp {
    gen.delta.clone()
}

/// `xi(T) = sum_{a, k != 0} ||Q_{k,a}||^2 |G(k/T + a gap)|^2`.
pub fn xi_rate(gen: &WeakCouplingGenerator) -> f64 {
    xi_rate_with(gen, RatePower::Squared)
}

pub fn xi_rate_with(gen: &WeakCouplingGenerator, power: RatePower) -> f64 {
    gen.terms
        .iter()
        .map(|t| {
            t.q_norm_sq
                * match power {
                    RatePower::Squared => t.g * t.g,
                    RatePower::First => t.g.abs(),
                }
        })
        .sum()
}

// Unbounded values are written as JSON null.
fn unbounded<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub lambda: f64,
    pub period: f64,
    pub rate_power: RatePower,
    pub xi: f64,
    /// `1 / (2 pi lambda^2 (xi + c lambda^2))`
    #[serde(deserialize_with = "unbounded")]
    pub t_dec: f64,
    pub c_const: f64,
    /// `T max ||H_c||`, unbounded for kicks.
    #[serde(deserialize_with = "unbounded")]
    pub d: f64,
    /// `1 / (c |lambda| T)`
    #[serde(deserialize_with = "unbounded")]
    pub theorem_horizon: f64,
    /// `(lambda^2 xi + lambda^4) / (|lambda| T)`; small values mean `t_dec`
    /// improves on the general horizon.
    #[serde(deserialize_with = "unbounded")]
    pub regime_ratio: f64,
    pub improves_on_theorem: bool,
    /// `1 / (2 pi c lambda^4)`, the `xi -> 0` limit of `t_dec`.
    #[serde(deserialize_with = "unbounded")]
    pub small_period_limit: f64,
    pub k_used: usize,
    #[serde(deserialize_with = "unbounded")]
    pub tail_bound: f64,
}

impl RateSummary {
    /// `t_dec` recomputed from the stored fields.
    pub fn t_dec_from_fields(&self) -> f64 {
        t_dec(self.lambda, self.xi, self.c_const)
    }
}

fn t_dec(lambda: f64, xi: f64, c: f64) -> f64 {
    let l2 = lambda * lambda;
    let denom = 2.0 * PI * l2 * (xi + c * l2);
    if denom == 0.0 {
        f64::INFINITY
    } else {
        1.0 / denom
    }
}

/// Threshold on [`RateSummary::regime_ratio`] for "much smaller than".
pub const REGIME_THRESHOLD: f64 = 0.1;

pub fn decoherence_time(gen: &WeakCouplingGenerator, c_const: f64) -> RateSummary {
    decoherence_time_with(gen, c_const, RatePower::Squared)
}

pub fn decoherence_time_with(gen: &WeakCouplingGenerator, c_const: f64, power: RatePower) -> RateSummary {
    let xi = xi_rate_with(gen, power);
    let lambda = gen.lambda;
    let l2 = lambda * lambda;
    let horizon_denom = c_const * lambda.abs() * gen.period;
    let regime_ratio = if lambda == 0.0 {
        0.0
    } else {
        (l2 * xi + l2 * l2) / (lambda.abs() * gen.period)
    };
    let small_denom = 2.0 * PI * c_const * l2 * l2;
    RateSummary {
        lambda,
        period: gen.period,
        rate_power: power,
        xi,
        t_dec: t_dec(lambda, xi, c_const),
        c_const,
        d: gen.schedule.strength_d(),
        theorem_horizon: if horizon_denom == 0.0 { f64::INFINITY } else { 1.0 / horizon_denom },
        regime_ratio,
        improves_on_theorem: regime_ratio < REGIME_THRESHOLD,
        small_period_limit: if small_denom == 0.0 { f64::INFINITY } else { 1.0 / small_denom },
        k_used: gen.k_used,
        tail_bound: gen.tail_bound,
    }
}

/// Coherence-preserving reference dynamics
/// `rho(t) = U rho0 U^*`, `U = e^{-it(H_s + S)} V_c(t)^*`.
pub fn corrected_propagate(gen: &WeakCouplingGenerator, rho0: &CMatrix, t: f64) -> Result<CMatrix> {
    validate_state(rho0, gen.h_s.nrows(), 1e-10)?;
    let u = unitary_exp(&(&gen.h_s + &gen.s), t) * vc_at(&gen.schedule, t)?.adjoint();
    Ok(&u * rho0 * u.adjoint())
}
