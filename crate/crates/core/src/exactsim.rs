// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Exact dynamics of the system coupled to `N` fermionic modes.
//!
//! The total space is `C^d (x) C^{2^N}`, indexed as `s * 2^N + b` where `b` is
//! the occupation bitstring of the modes with mode 0 as the most significant
//! bit. Fermion operators use Jordan-Wigner strings over the lower-numbered
//! modes.
//!
//! Propagation splits `H(t) = H_0 + h(t) H_dir (x) 1` into the static part
//! `H_0` and the control. Both flows are applied exactly (the control through
//! its accumulated phase), composed as a fourth-order triple-jump Strang
//! scheme for smooth schedules and as an exact product for bang-bang ones.
//! Since `H_dir` commutes with everything in `H_0` except the coupling, the
//! splitting error is proportional to `lambda` and vanishes at `lambda = 0`.

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use nalgebra_sparse::{CooMatrix, CsrMatrix};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{effective_dynamics, ControlSchedule, Profile};
use crate::error::{Error, Result};
use crate::linalg::{c64, hermitian_part, trace_distance, unitary_exp, CMatrix, ZERO};
use crate::reservoir::ModeSet;
use crate::system::{validate_state, SystemModel};

/// Largest total dimension `d 2^N` accepted.
pub const MAX_TOTAL_DIM: usize = 1 << 14;
/// Above this total dimension `Auto` switches to pure-state unraveling.
pub const DENSE_DIM_LIMIT: usize = 1 << 12;
pub const TRACE_DRIFT_TOL: f64 = 1e-6;
pub const DEFAULT_SAMPLES: usize = 256;
/// Default triple-jump steps per control period for smooth schedules.
pub const DEFAULT_STEPS: usize = 32;

const SNAP: f64 = 1e-9;

// Triple-jump weights lifting Strang splitting to fourth order.
const CBRT2: f64 = 1.259_921_049_894_873_2;
const W1: f64 = 1.0 / (2.0 - CBRT2);
const W0: f64 = -CBRT2 / (2.0 - CBRT2);

fn max_modulus(m: &CMatrix) -> f64 {
    m.iter().fold(0.0, |a, z| a.max(z.norm()))
}

fn mode_bit(n_modes: usize, j: usize) -> usize {
    1 << (n_modes - 1 - j)
}

// (-1)^(number of occupied modes before j)
fn jw_sign(b: usize, n_modes: usize, j: usize) -> f64 {
    if (b >> (n_modes - j)).count_ones() % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Jordan-Wigner annihilator `a_j` on `2^N` occupation states.
pub fn annihilator(n_modes: usize, j: usize) -> Result<CsrMatrix<Complex64>> {
    if n_modes == 0 || n_modes > 14 || j >= n_modes {
        return Err(Error::arg(format!(
            "annihilator: mode {j} out of range for {n_modes} modes"
        )));
    }
    let dim = 1usize << n_modes;
    let bit = mode_bit(n_modes, j);
    let mut coo = CooMatrix::new(dim, dim);
    for b in 0..dim {
        if b & bit != 0 {
            coo.push(b ^ bit, b, c64(jw_sign(b, n_modes, j), 0.0));
        }
    }
    Ok(CsrMatrix::from(&coo))
}

/// Largest entry of `{a_i, a_j^*} - delta_ij` and `{a_i, a_j}` over all pairs.
pub fn car_defect(n_modes: usize) -> Result<f64> {
    let ops: Vec<CMatrix> = (0..n_modes)
        .map(|j| annihilator(n_modes, j).map(|a| DMatrix::from(&a)))
        .collect::<Result<_>>()?;
    let eye = CMatrix::identity(1 << n_modes, 1 << n_modes);
    let mut worst = 0.0f64;
    for (i, ai) in ops.iter().enumerate() {
        for (j, aj) in ops.iter().enumerate() {
            let ajs = aj.adjoint();
            let mut mixed = ai * &ajs + &ajs * ai;
            if i == j {
                mixed -= &eye;
            }
            let pure = ai * aj + aj * ai;
            worst = worst.max(max_modulus(&mixed)).max(max_modulus(&pure));
        }
    }
    Ok(worst)
}

/// Occupation probabilities of each basis bitstring in the quasi-free
/// thermal state.
pub fn thermal_weights(modes: &ModeSet) -> Vec<f64> {
    let n = modes.len();
    (0..1usize << n)
        .map(|b| {
            (0..n)
                .map(|j| {
                    let nj = modes.occupations[j];
                    if b & mode_bit(n, j) != 0 {
                        nj
                    } else {
                        1.0 - nj
                    }
                })
                .product()
        })
        .collect()
}

/// `rho_R = (x)_j diag(1 - n_j, n_j)` as a dense matrix.
pub fn thermal_reservoir_state(modes: &ModeSet) -> Result<CMatrix> {
    if modes.is_empty() {
        return Err(Error::arg("reservoir has no modes"));
    }
    if 1usize.checked_shl(modes.len() as u32).is_none_or(|d| d > DENSE_DIM_LIMIT) {
        return Err(Error::Resource(format!(
            "dense reservoir state with {} modes exceeds {DENSE_DIM_LIMIT} states",
            modes.len()
        )));
    }
    let w = thermal_weights(modes);
    Ok(CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
        w.len(),
        w.iter().map(|&x| c64(x, 0.0)),
    )))
}

/// System, reservoir modes, coupling and control of one exact simulation.
#[derive(Debug, Clone)]
pub struct TotalModel {
    system: SystemModel,
    modes: ModeSet,
    lambda: f64,
    schedule: ControlSchedule,
    h0: CsrMatrix<Complex64>,
}

impl TotalModel {
    pub fn new(system: SystemModel, modes: ModeSet, lambda: f64, schedule: ControlSchedule) -> Result<Self> {
        let n = modes.len();
        if n == 0 {
            return Err(Error::arg("reservoir has no modes"));
        }
        if modes.couplings.len() != n || modes.occupations.len() != n {
            return Err(Error::arg("mode set fields have different lengths"));
        }
        if !lambda.is_finite() {
            return Err(Error::arg("coupling must be finite"));
        }
        let d = system.dim();
        let total = if n < 32 { d.saturating_mul(1 << n) } else { usize::MAX };
        if total > MAX_TOTAL_DIM {
            return Err(Error::Resource(format!(
                "total dimension d 2^N = {d} x 2^{n} exceeds {MAX_TOTAL_DIM}"
            )));
        }
        if schedule.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: schedule.dim(),
            });
        }
        schedule.validate_for(&system)?;
        let h0 = static_generator(&system, &modes, lambda);
        Ok(TotalModel {
            system,
            modes,
            lambda,
            schedule,
            h0,
        })
    }

    pub fn system(&self) -> &SystemModel {
        &self.system
    }

    pub fn modes(&self) -> &ModeSet {
        &self.modes
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn schedule(&self) -> &ControlSchedule {
        &self.schedule
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    pub fn reservoir_dim(&self) -> usize {
        1 << self.modes.len()
    }

    pub fn dim(&self) -> usize {
        self.system.dim() * self.reservoir_dim()
    }

    pub fn with_schedule(&self, schedule: ControlSchedule) -> Result<Self> {
        if schedule.dim() != self.system.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.system.dim(),
                got: schedule.dim(),
            });
        }
        schedule.validate_for(&self.system)?;
        Ok(TotalModel {
            schedule,
            ..self.clone()
        })
    }

    /// `H_0 = H_s (x) 1 + 1 (x) sum w_j n_j + lambda Q (x) Phi`.
    pub fn static_generator(&self) -> &CsrMatrix<Complex64> {
        &self.h0
    }
}

fn static_generator(system: &SystemModel, modes: &ModeSet, lambda: f64) -> CsrMatrix<Complex64> {
    let n = modes.len();
    let rd = 1usize << n;
    let d = system.dim();
    let (hs, q) = (system.h_s(), system.q());
    let mut coo = CooMatrix::new(d * rd, d * rd);
    for s in 0..d {
        for b in 0..rd {
            let row = s * rd + b;
            let mut diag = hs[(s, s)];
            for j in 0..n {
                if b & mode_bit(n, j) != 0 {
                    diag += modes.frequencies[j];
                }
            }
            coo.push(row, row, diag);
            for s2 in 0..d {
                if s2 != s && hs[(s, s2)] != ZERO {
                    coo.push(row, s2 * rd + b, hs[(s, s2)]);
                }
            }
        }
    }
    if lambda != 0.0 {
        let scale = lambda / 2f64.sqrt();
        for b in 0..rd {
            for j in 0..n {
                // <b ^ bit| (a_j + a_j^*) |b> carries the string sign of b
                let amp = scale * modes.couplings[j] * jw_sign(b, n, j);
                if amp == 0.0 {
                    continue;
                }
                let b2 = b ^ mode_bit(n, j);
                for s in 0..d {
                    for s2 in 0..d {
                        let qv = q[(s, s2)];
                        if qv != ZERO {
                            coo.push(s * rd + b2, s2 * rd + b, qv * amp);
                        }
                    }
                }
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// Dense `H(t) = H_0 + h(t) H_dir (x) 1`. Bang-bang kicks are delta
/// functions and do not appear; between kicks `H(t) = H_0`.
pub fn build_total_generator(tm: &TotalModel, t: f64) -> Result<CMatrix> {
    if !t.is_finite() {
        return Err(Error::arg("time must be finite"));
    }
    if tm.dim() > DENSE_DIM_LIMIT {
        return Err(Error::Resource(format!(
            "dense generator of dimension {} exceeds {DENSE_DIM_LIMIT}",
            tm.dim()
        )));
    }
    let mut h = DMatrix::from(&tm.h0);
    let strength = tm.schedule.strength(t);
    if strength != 0.0 {
        let dir = tm.schedule.direction();
        let rd = tm.reservoir_dim();
        for s in 0..dir.nrows() {
            for s2 in 0..dir.ncols() {
                let v = dir[(s, s2)] * strength;
                for b in 0..rd {
                    h[(s * rd + b, s2 * rd + b)] += v;
                }
            }
        }
    }
    Ok(h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    /// `exp(-i tau H_0)`
    Free(f64),
    /// `exp(-i phi H_dir) (x) 1`
    Control(f64),
}

/// Factors of `U(t1, t0)`, in order of application.
fn schedule_ops(schedule: &ControlSchedule, steps: usize, t0: f64, t1: f64) -> Vec<Op> {
    let mut ops = Vec::new();
    if t1 <= t0 {
        return ops;
    }
    if schedule.is_trivial() {
        ops.push(Op::Free(t1 - t0));
        return ops;
    }
    match schedule.profile() {
        Profile::BangBang { .. } => {
            let mut t = t0;
            for (tk, c) in schedule.kicks_between(t0, t1) {
                if tk > t {
                    ops.push(Op::Free(tk - t));
                }
                ops.push(Op::Control(c));
                t = tk;
            }
            if t1 > t {
                ops.push(Op::Free(t1 - t));
            }
        }
        Profile::Smooth { .. } => {
            let period = schedule.period();
            let n = ((t1 - t0) / period * steps as f64 - SNAP).ceil().max(1.0) as usize;
            let dt = (t1 - t0) / n as f64;
            let mut pending = 0.0;
            let mut u = t0;
            for step in 0..n {
                for (stage, w) in [W1, W0, W1].into_iter().enumerate() {
                    let tau = w * dt;
                    let mid = u + 0.5 * tau;
                    pending += schedule.phase(mid) - schedule.phase(u);
                    ops.push(Op::Control(pending));
                    ops.push(Op::Free(tau));
                    let end = if stage == 2 { t0 + (step + 1) as f64 * dt } else { u + tau };
                    pending = schedule.phase(end) - schedule.phase(mid);
                    u = end;
                }
            }
            ops.push(Op::Control(pending));
        }
    }
    ops
}

/// `M <- (K (x) 1) M` for a `d x d` matrix `K` acting on the system index.
fn apply_local(k: &CMatrix, m: &mut CMatrix, block: usize) {
    let d = k.nrows();
    let mut buf = vec![ZERO; d];
    for mut col in m.column_iter_mut() {
        for b in 0..block {
            for (s, slot) in buf.iter_mut().enumerate() {
                *slot = (0..d).map(|s2| k[(s, s2)] * col[s2 * block + b]).sum();
            }
            for (s, v) in buf.iter().enumerate() {
                col[s * block + b] = *v;
            }
        }
    }
}

/// Complex matrix stored as real and imaginary parts, so products run on the
/// real matrix kernels.
#[derive(Debug, Clone)]
struct Split {
    re: DMatrix<f64>,
    im: DMatrix<f64>,
}

impl Split {
    fn from_complex(m: &CMatrix) -> Self {
        Split {
            re: m.map(|z| z.re),
            im: m.map(|z| z.im),
        }
    }

    fn to_complex(&self) -> CMatrix {
        self.re.zip_map(&self.im, c64)
    }

    fn identity(n: usize) -> Self {
        Split {
            re: DMatrix::identity(n, n),
            im: DMatrix::zeros(n, n),
        }
    }

    fn mul(&self, o: &Split) -> Split {
        let mut re = &self.re * &o.re;
        re.gemm(-1.0, &self.im, &o.im, 1.0);
        let mut im = &self.re * &o.im;
        im.gemm(1.0, &self.im, &o.re, 1.0);
        Split { re, im }
    }

    fn adjoint(&self) -> Split {
        Split {
            re: self.re.transpose(),
            im: -self.im.transpose(),
        }
    }

    fn norm_sqr(&self) -> f64 {
        self.re.norm_squared() + self.im.norm_squared()
    }

    fn apply_local(&mut self, k: &CMatrix, block: usize) {
        let d = k.nrows();
        let ncols = self.re.ncols();
        let mut bre = vec![0.0; d];
        let mut bim = vec![0.0; d];
        for c in 0..ncols {
            for b in 0..block {
                for s in 0..d {
                    let (mut r, mut i) = (0.0, 0.0);
                    for s2 in 0..d {
                        let kv = k[(s, s2)];
                        let (xr, xi) = (self.re[(s2 * block + b, c)], self.im[(s2 * block + b, c)]);
                        r += kv.re * xr - kv.im * xi;
                        i += kv.re * xi + kv.im * xr;
                    }
                    bre[s] = r;
                    bim[s] = i;
                }
                for s in 0..d {
                    self.re[(s * block + b, c)] = bre[s];
                    self.im[(s * block + b, c)] = bim[s];
                }
            }
        }
    }

    /// Reduced system state `sum_b,c Psi[(i,b),c] conj(Psi[(j,b),c])`.
    fn reduce_system(&self, d: usize, block: usize) -> CMatrix {
        let mut rho = CMatrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let (ar, ai) = (self.re.rows(i * block, block), self.im.rows(i * block, block));
                let (br, bi) = (self.re.rows(j * block, block), self.im.rows(j * block, block));
                let v = c64(ar.dot(&br) + ai.dot(&bi), ai.dot(&br) - ar.dot(&bi));
                rho[(i, j)] = v;
                rho[(j, i)] = v.conj();
            }
        }
        rho
    }

    fn reduce_reservoir(&self, d: usize, block: usize) -> CMatrix {
        let mut re = DMatrix::zeros(block, block);
        let mut im = DMatrix::zeros(block, block);
        for i in 0..d {
            let (ar, ai) = (self.re.rows(i * block, block), self.im.rows(i * block, block));
            re.gemm(1.0, &ar, &ar.transpose(), 1.0);
            re.gemm(1.0, &ai, &ai.transpose(), 1.0);
            im.gemm(1.0, &ai, &ar.transpose(), 1.0);
            im.gemm(-1.0, &ar, &ai.transpose(), 1.0);
        }
        Split { re, im }.to_complex()
    }
}

/// Full propagators as dense matrices, built from one eigendecomposition of
/// `H_0`.
struct DenseEngine {
    vecs: Split,
    vecs_adj: Split,
    evals: Vec<f64>,
    free_cache: HashMap<u64, Split>,
    direction: CMatrix,
    block: usize,
}

impl DenseEngine {
    fn new(tm: &TotalModel) -> Self {
        let eig = SymmetricEigen::new(hermitian_part(&DMatrix::from(&tm.h0)));
        let vecs = Split::from_complex(&eig.eigenvectors);
        DenseEngine {
            vecs_adj: vecs.adjoint(),
            vecs,
            evals: eig.eigenvalues.iter().copied().collect(),
            free_cache: HashMap::new(),
            direction: tm.schedule.direction().clone(),
            block: tm.reservoir_dim(),
        }
    }

    fn free(&mut self, tau: f64) -> &Split {
        self.free_cache.entry(tau.to_bits()).or_insert_with(|| {
            let mut scaled = self.vecs.clone();
            for (c, e) in self.evals.iter().enumerate() {
                let (sn, cs) = (-e * tau).sin_cos();
                let (mut re, mut im) = (scaled.re.column_mut(c), scaled.im.column_mut(c));
                for r in 0..re.len() {
                    let (x, y) = (re[r], im[r]);
                    re[r] = x * cs - y * sn;
                    im[r] = x * sn + y * cs;
                }
            }
            scaled.mul(&self.vecs_adj)
        })
    }

    fn propagator(&mut self, ops: &[Op]) -> Split {
        let mut u: Option<Split> = None;
        for op in ops {
            match *op {
                Op::Free(tau) => {
                    let e = self.free(tau);
                    u = Some(match u {
                        None => e.clone(),
                        Some(m) => e.mul(&m),
                    });
                }
                Op::Control(phi) => {
                    if phi == 0.0 {
                        continue;
                    }
                    let k = unitary_exp(&self.direction, phi);
                    let m = u.get_or_insert_with(|| Split::identity(self.vecs.re.nrows()));
                    m.apply_local(&k, self.block);
                }
            }
        }
        u.unwrap_or_else(|| Split::identity(self.vecs.re.nrows()))
    }
}

fn split_power(u: &Split, mut m: usize) -> Split {
    let mut acc: Option<Split> = None;
    let mut base = u.clone();
    while m > 0 {
        if m & 1 == 1 {
            acc = Some(match acc {
                None => base.clone(),
                Some(a) => base.mul(&a),
            });
        }
        m >>= 1;
        if m > 0 {
            base = base.mul(&base);
        }
    }
    acc.unwrap_or_else(|| Split::identity(u.re.nrows()))
}

/// `exp(-i tau H) psi` by a scaled Taylor series on the sparse generator.
fn expm_action(h: &CsrMatrix<Complex64>, h_norm: f64, tau: f64, psi: &CMatrix) -> CMatrix {
    let subs = (tau.abs() * h_norm / 0.5).ceil().max(1.0) as usize;
    let dt = tau / subs as f64;
    let mut out = psi.clone();
    for _ in 0..subs {
        let mut term = out.clone();
        let mut acc = out.clone();
        for k in 1..60 {
            term = (h * &term) * c64(0.0, -dt / k as f64);
            acc += &term;
            if max_modulus(&term) <= 1e-17 * max_modulus(&acc) {
                break;
            }
        }
        out = acc;
    }
    out
}

fn apply_ops_to_vectors(tm: &TotalModel, h_norm: f64, ops: &[Op], psi: &mut CMatrix) {
    for op in ops {
        match *op {
            Op::Free(tau) => *psi = expm_action(&tm.h0, h_norm, tau, psi),
            Op::Control(phi) if phi != 0.0 => {
                apply_local(&unitary_exp(tm.schedule.direction(), phi), psi, tm.reservoir_dim())
            }
            Op::Control(_) => {}
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Dense below `DENSE_DIM_LIMIT`, unraveling above.
    Auto,
    /// Full propagators and the exact mixed initial state.
    Dense,
    /// Average over occupation bitstrings drawn from the thermal state.
    Unravel,
}

#[derive(Debug, Clone)]
pub struct EvolveOptions {
    pub method: Method,
    /// Triple-jump steps per period for smooth schedules.
    pub steps_per_period: usize,
    pub samples: usize,
    pub seed: u64,
    /// Also record the reduced reservoir state (dense method only).
    pub record_reservoir: bool,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            method: Method::Auto,
            steps_per_period: DEFAULT_STEPS,
            samples: DEFAULT_SAMPLES,
            seed: 0,
            record_reservoir: false,
        }
    }
}

/// Reduced system states sampled along one exact run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<CMatrix>,
    /// Index pairs `(m, n)`, `m < n`, of `H_s` eigenvectors.
    pub pairs: Vec<(usize, usize)>,
    /// `|<phi_m, rho_s(t) phi_n>|` per time, one entry per pair.
    pub coherences: Vec<Vec<f64>>,
    /// Trace distance to the decoupled reference dynamics.
    pub deviation: Vec<f64>,
    /// Populations on the `H_s` eigenvectors.
    pub populations: Vec<Vec<f64>>,
    /// Trace of the full state.
    pub total_trace: Vec<f64>,
    /// Purity of the full state; not available for unraveled runs.
    pub total_purity: Option<Vec<f64>>,
    pub reservoir_states: Vec<CMatrix>,
    pub method: Method,
}

fn sample_times(t_final: f64, sample_dt: f64) -> Result<Vec<f64>> {
    if !(t_final >= 0.0) || !t_final.is_finite() {
        return Err(Error::arg(format!("final time must be finite and non-negative, got {t_final}")));
    }
    if !(sample_dt > 0.0) || !sample_dt.is_finite() {
        return Err(Error::arg(format!("sample interval must be positive, got {sample_dt}")));
    }
    let n = (t_final / sample_dt + SNAP).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * sample_dt).collect();
    let last = *times.last().expect("at least t = 0");
    if t_final - last > SNAP * sample_dt {
        times.push(t_final);
    }
    Ok(times)
}

fn check_drift(t: f64, trace: f64) -> Result<()> {
    let drift = (trace - 1.0).abs();
    if !(drift <= TRACE_DRIFT_TOL) {
        return Err(Error::Numeric(format!(
            "trace drift {drift:.3e} at t = {t} exceeds {TRACE_DRIFT_TOL:.0e}; reduce the step or the horizon"
        )));
    }
    Ok(())
}

/// `evolve_with` under default options.
pub fn evolve(tm: &TotalModel, rho_s0: &CMatrix, t_final: f64, sample_dt: f64) -> Result<Trajectory> {
    evolve_with(tm, rho_s0, t_final, sample_dt, &EvolveOptions::default())
}

/// Evolves `rho_s0 (x) rho_R` under `H(t)` and samples the reduced system
/// state at multiples of `sample_dt` (and at `t_final`).
pub fn evolve_with(
    tm: &TotalModel,
    rho_s0: &CMatrix,
    t_final: f64,
    sample_dt: f64,
    opts: &EvolveOptions,
) -> Result<Trajectory> {
    let d = tm.system.dim();
    validate_state(rho_s0, d, 1e-10)?;
    if opts.steps_per_period == 0 {
        return Err(Error::arg("steps per period must be positive"));
    }
    let times = sample_times(t_final, sample_dt)?;
    let method = match opts.method {
        Method::Auto if tm.dim() > DENSE_DIM_LIMIT => Method::Unravel,
        Method::Auto => Method::Dense,
        m => m,
    };
    if method == Method::Dense && tm.dim() > DENSE_DIM_LIMIT {
        return Err(Error::Resource(format!(
            "dense propagation of dimension {} exceeds {DENSE_DIM_LIMIT}; use unraveling",
            tm.dim()
        )));
    }
    let mut traj = match method {
        Method::Unravel => evolve_unravel(tm, rho_s0, &times, opts)?,
        _ => evolve_dense(tm, rho_s0, &times, opts)?,
    };
    traj.method = method;
    fill_observables(&mut traj, tm.system(), tm.schedule(), rho_s0)?;
    Ok(traj)
}

/// Columns `sqrt(p_k) v_k`, eigencomponents of the system state.
fn system_components(rho: &CMatrix) -> Vec<(f64, nalgebra::DVector<Complex64>)> {
    let eig = SymmetricEigen::new(hermitian_part(rho));
    eig.eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 1e-15)
        .map(|(k, &p)| (p, eig.eigenvectors.column(k).into_owned()))
        .collect()
}

fn evolve_dense(tm: &TotalModel, rho_s0: &CMatrix, times: &[f64], opts: &EvolveOptions) -> Result<Trajectory> {
    let d = tm.system.dim();
    let rd = tm.reservoir_dim();
    let dim = tm.dim();
    let comps = system_components(rho_s0);
    let weights = thermal_weights(&tm.modes);
    let occupied: Vec<usize> = (0..rd).filter(|&b| weights[b] > 0.0).collect();
    let mut psi0 = CMatrix::zeros(dim, comps.len() * occupied.len());
    let mut col = 0;
    for (p, v) in &comps {
        for &b in &occupied {
            let amp = (p * weights[b]).sqrt();
            for s in 0..d {
                psi0[(s * rd + b, col)] = v[s] * amp;
            }
            col += 1;
        }
    }
    let mut engine = DenseEngine::new(tm);
    let schedule = &tm.schedule;
    let period = schedule.period();
    let steps = opts.steps_per_period;
    let u_period = engine.propagator(&schedule_ops(schedule, steps, 0.0, period));
    let mut powers: HashMap<usize, Split> = HashMap::new();
    let mut offsets: HashMap<u64, Split> = HashMap::new();
    let mut at_period = Split::from_complex(&psi0);
    let mut n_cur = 0usize;

    let mut traj = empty_trajectory(times.len());
    let mut purity = Vec::with_capacity(times.len());
    for &t in times {
        let mut n = (t / period + SNAP).floor().max(0.0) as usize;
        let mut s = t - n as f64 * period;
        if s < SNAP * period {
            s = 0.0;
        } else if s > period * (1.0 - SNAP) {
            n += 1;
            s = 0.0;
        }
        if n > n_cur {
            let jump = powers
                .entry(n - n_cur)
                .or_insert_with(|| split_power(&u_period, n - n_cur));
            at_period = jump.mul(&at_period);
            n_cur = n;
        }
        let psi = if s > 0.0 {
            let u = offsets
                .entry(s.to_bits())
                .or_insert_with(|| engine.propagator(&schedule_ops(schedule, steps, 0.0, s)));
            u.mul(&at_period)
        } else {
            at_period.clone()
        };
        let tr = psi.norm_sqr();
        check_drift(t, tr)?;
        let gram = psi.adjoint().mul(&psi);
        purity.push(gram.norm_sqr());
        traj.total_trace.push(tr);
        traj.states.push(psi.reduce_system(d, rd));
        if opts.record_reservoir {
            traj.reservoir_states.push(psi.reduce_reservoir(d, rd));
        }
    }
    traj.times = times.to_vec();
    traj.total_purity = Some(purity);
    Ok(traj)
}

fn empty_trajectory(n: usize) -> Trajectory {
    Trajectory {
        times: Vec::with_capacity(n),
        states: Vec::with_capacity(n),
        pairs: Vec::new(),
        coherences: Vec::new(),
        deviation: Vec::new(),
        populations: Vec::new(),
        total_trace: Vec::with_capacity(n),
        total_purity: None,
        reservoir_states: Vec::new(),
        method: Method::Dense,
    }
}

/// Draws a bitstring with independent bits `P(b_j = 1) = n_j`.
fn draw_bitstring(rng: &mut ChaCha8Rng, modes: &ModeSet) -> usize {
    let n = modes.len();
    (0..n).fold(0, |b, j| {
        if rng.random::<f64>() < modes.occupations[j] {
            b | mode_bit(n, j)
        } else {
            b
        }
    })
}

fn pairwise_sum(items: &[CMatrix]) -> CMatrix {
    match items.len() {
        0 => unreachable!("pairwise_sum of an empty slice"),
        1 => items[0].clone(),
        n => pairwise_sum(&items[..n / 2]) + pairwise_sum(&items[n / 2..]),
    }
}

fn evolve_unravel(tm: &TotalModel, rho_s0: &CMatrix, times: &[f64], opts: &EvolveOptions) -> Result<Trajectory> {
    if opts.samples == 0 {
        return Err(Error::arg("unraveling needs at least one sample"));
    }
    let d = tm.system.dim();
    let rd = tm.reservoir_dim();
    let comps = system_components(rho_s0);
    let h_norm = (0..tm.h0.nrows())
        .map(|r| tm.h0.row(r).values().iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let steps = opts.steps_per_period;
    let runs: Vec<Result<(Vec<CMatrix>, Vec<f64>)>> = (0..opts.samples)
        .into_par_iter()
        .map(|m| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(m as u64);
            let b = draw_bitstring(&mut rng, &tm.modes);
            let mut psi = CMatrix::zeros(tm.dim(), comps.len());
            for (c, (p, v)) in comps.iter().enumerate() {
                for s in 0..d {
                    psi[(s * rd + b, c)] = v[s] * p.sqrt();
                }
            }
            let mut states = Vec::with_capacity(times.len());
            let mut traces = Vec::with_capacity(times.len());
            let mut t_prev = 0.0;
            for &t in times {
                let ops = schedule_ops(&tm.schedule, steps, t_prev, t);
                apply_ops_to_vectors(tm, h_norm, &ops, &mut psi);
                t_prev = t;
                let tr = psi.norm_squared();
                check_drift(t, tr)?;
                traces.push(tr);
                states.push(Split::from_complex(&psi).reduce_system(d, rd));
            }
            Ok((states, traces))
        })
        .collect();
    let runs: Vec<(Vec<CMatrix>, Vec<f64>)> = runs.into_iter().collect::<Result<_>>()?;
    let scale = c64(1.0 / opts.samples as f64, 0.0);
    let mut traj = empty_trajectory(times.len());
    traj.times = times.to_vec();
    for i in 0..times.len() {
        let slice: Vec<CMatrix> = runs.iter().map(|(s, _)| s[i].clone()).collect();
        traj.states.push(pairwise_sum(&slice) * scale);
        traj.total_trace
            .push(runs.iter().map(|(_, tr)| tr[i]).sum::<f64>() / opts.samples as f64);
    }
    Ok(traj)
}

fn fill_observables(
    traj: &mut Trajectory,
    model: &SystemModel,
    schedule: &ControlSchedule,
    rho_s0: &CMatrix,
) -> Result<()> {
    let d = model.dim();
    traj.pairs = (0..d).flat_map(|m| (m + 1..d).map(move |n| (m, n))).collect();
    traj.coherences.clear();
    traj.populations.clear();
    traj.deviation.clear();
    for (&t, rho) in traj.times.iter().zip(&traj.states) {
        let eb = model.spectrum().to_eigenbasis(rho);
        traj.coherences
            .push(traj.pairs.iter().map(|&(m, n)| eb[(m, n)].norm()).collect());
        traj.populations.push((0..d).map(|k| eb[(k, k)].re).collect());
        let reference = effective_dynamics(model, schedule, rho_s0, t)?;
        traj.deviation.push(trace_distance(rho, &reference));
    }
    Ok(())
}

impl Trajectory {
    /// Checks Hermiticity, unit trace and positivity of every reduced state.
    pub fn validate(&self, tol: f64) -> Result<()> {
        for (t, rho) in self.times.iter().zip(&self.states) {
            validate_state(rho, rho.nrows(), tol)
                .map_err(|e| Error::Numeric(format!("reduced state at t = {t}: {e}")))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.states.first().map_or(0, |r| r.nrows())
    }

    pub fn csv_header(&self) -> String {
        let d = self.dim();
        let mut cols = vec!["t".to_string()];
        for i in 0..d {
            for j in 0..d {
                cols.push(format!("rho_{i}{j}_re"));
                cols.push(format!("rho_{i}{j}_im"));
            }
        }
        cols.extend(self.pairs.iter().map(|(m, n)| format!("coherence_{m}{n}")));
        cols.push("deviation".into());
        cols.extend((0..d).map(|k| format!("population_{k}")));
        cols.join(",")
    }

    /// CSV with one row per sample time, values in `{:.16e}`.
    pub fn to_csv(&self) -> String {
        let mut out = self.csv_header();
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            let mut row = vec![*t];
            for z in self.states[i].transpose().iter() {
                row.push(z.re);
                row.push(z.im);
            }
            row.extend(&self.coherences[i]);
            row.push(self.deviation[i]);
            row.extend(&self.populations[i]);
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Constants of the structural bound `C(|l| + (D|l| + 1)T + 1 - e^{-c t |l| T})`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct BoundConstants {
    pub c: f64,
    #[serde(rename = "C")]
    pub big_c: f64,
}

impl Default for BoundConstants {
    fn default() -> Self {
        BoundConstants { c: 1.0, big_c: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub times: Vec<f64>,
    pub deviation: Vec<f64>,
    pub sup_deviation: f64,
    pub horizon: f64,
    /// `|rho_01(t)| / |rho_01(0)|` on the `H_s` eigenbasis; absent when the
    /// initial state has no coherence.
    pub retention: Option<Vec<f64>>,
    pub final_retention: Option<f64>,
    /// Largest population change from `t = 0`.
    pub population_drift: f64,
    pub bound_shape: Vec<f64>,
}

/// Trace distance of every sample of `traj` to the decoupled dynamics of the
/// initial sample, with retention ratios and the structural bound shape.
pub fn compare_with_effective(
    traj: &Trajectory,
    model: &SystemModel,
    schedule: &ControlSchedule,
    lambda: f64,
    constants: &BoundConstants,
) -> Result<DeviationReport> {
    let n = traj.times.len();
    if n == 0 || traj.states.len() != n {
        return Err(Error::arg(format!(
            "trajectory has {} times and {} states",
            n,
            traj.states.len()
        )));
    }
    if traj.times[0] != 0.0 || traj.times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::arg("trajectory times must start at 0 and increase strictly"));
    }
    let d = model.dim();
    if traj.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: traj.dim(),
        });
    }
    let rho0 = &traj.states[0];
    let mut deviation = Vec::with_capacity(n);
    for (&t, rho) in traj.times.iter().zip(&traj.states) {
        deviation.push(trace_distance(rho, &effective_dynamics(model, schedule, rho0, t)?));
    }
    let sp = model.spectrum();
    let eb: Vec<CMatrix> = traj.states.iter().map(|r| sp.to_eigenbasis(r)).collect();
    let c0 = if d > 1 { eb[0][(0, 1)].norm() } else { 0.0 };
    let retention = (c0 > 1e-14).then(|| eb.iter().map(|m| m[(0, 1)].norm() / c0).collect::<Vec<_>>());
    let population_drift = eb
        .iter()
        .flat_map(|m| (0..d).map(|k| (m[(k, k)].re - eb[0][(k, k)].re).abs()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let (l, period, big_d) = (lambda.abs(), schedule.period(), schedule.strength_d());
    let bound_shape = traj
        .times
        .iter()
        .map(|t| constants.big_c * (l + (big_d * l + 1.0) * period + 1.0 - (-constants.c * t * l * period).exp()))
        .collect();
    Ok(DeviationReport {
        horizon: traj.times[n - 1],
        sup_deviation: deviation.iter().copied().fold(0.0, f64::max),
        final_retention: retention.as_ref().map(|r| r[n - 1]),
        times: traj.times.clone(),
        deviation,
        retention,
        population_drift,
        bound_shape,
    })
}
