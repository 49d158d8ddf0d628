// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

//! Config-driven experiments: decoupling check, rates, a controlled and an
//! uncontrolled exact run, optional parameter sweeps, and report files.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{
    check_dd, tune_amplitude, ControlSchedule, DdReport, Harmonics, Kick, TuneResult, DD_TOL,
};
use crate::error::{Error, Result};
use crate::exactsim::{
    compare_with_effective, evolve_with, BoundConstants, DeviationReport, EvolveOptions, Method,
    TotalModel, Trajectory, DEFAULT_SAMPLES, DEFAULT_STEPS, MAX_TOTAL_DIM,
};
use crate::linalg::{c64, pauli_x, pauli_z, CMatrix};
use crate::reservoir::{discretize_modes, FormFactor, FormFactorKind, ModeSet, SpectralFunction};
use crate::system::SystemModel;
use crate::weakcoupling::{decoherence_time_with, level_shift, RatePower, RateSummary};

pub const BUNDLED_SCENARIOS: [&str; 2] = ["spin-fermion-sinusoidal", "spin-fermion-echo"];
pub const THREADS_ENV: &str = "DECOSHIELD_THREADS";

/// Dense complex matrix as rows of real parts and, optionally, imaginary
/// parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub re: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub im: Vec<Vec<f64>>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &CMatrix) -> Self {
        let rows = |f: fn(&num_complex::Complex64) -> f64| -> Vec<Vec<f64>> {
            m.row_iter().map(|r| r.iter().map(f).collect()).collect()
        };
        let im = rows(|z| z.im);
        MatrixSpec {
            re: rows(|z| z.re),
            im: if im.iter().flatten().all(|&x| x == 0.0) { Vec::new() } else { im },
        }
    }

    fn to_matrix(&self, path: &str) -> Result<CMatrix> {
        let n = self.re.len();
        if n == 0 {
            return Err(Error::config(path, "matrix is empty"));
        }
        let square = |rows: &Vec<Vec<f64>>| rows.len() == n && rows.iter().all(|r| r.len() == n);
        if !square(&self.re) || !(self.im.is_empty() || square(&self.im)) {
            return Err(Error::config(path, format!("matrix must be square with {n} rows")));
        }
        Ok(CMatrix::from_fn(n, n, |i, j| {
            c64(self.re[i][j], self.im.get(i).map_or(0.0, |r| r[j]))
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub h_s: MatrixSpec,
    pub q: MatrixSpec,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec {
            h_s: MatrixSpec::from_matrix(&pauli_z()),
            q: MatrixSpec::from_matrix(&pauli_x()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ControlKind {
    Smooth,
    BangBang,
    None,
}

fn default_period() -> f64 {
    0.1
}

fn default_direction() -> MatrixSpec {
    MatrixSpec::from_matrix(&pauli_z())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub kind: ControlKind,
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_direction")]
    pub direction: MatrixSpec,
    /// Smooth amplitude; tuned inside `tune_bracket` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default = "default_bracket")]
    pub tune_bracket: [f64; 2],
    #[serde(default = "Harmonics::cosine")]
    pub shape: Harmonics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub kicks: Vec<Kick>,
}

fn default_bracket() -> [f64; 2] {
    [5.0, 10.0]
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec {
            kind: ControlKind::Smooth,
            period: default_period(),
            direction: default_direction(),
            mu: None,
            tune_bracket: default_bracket(),
            shape: Harmonics::cosine(),
            kicks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormFactorSpec {
    pub name: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
    #[serde(default = "default_r_max")]
    pub r_max: f64,
}

fn one() -> f64 {
    1.0
}

fn default_r_max() -> f64 {
    10.0
}

impl Default for FormFactorSpec {
    fn default() -> Self {
        FormFactorSpec {
            name: "gaussian-p".into(),
            amplitude: 1.0,
            width: 1.0,
            r_max: default_r_max(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirSpec {
    #[serde(default)]
    pub form_factor: FormFactorSpec,
    #[serde(default = "one")]
    pub beta: f64,
    #[serde(default = "default_modes")]
    pub modes: usize,
    #[serde(default = "default_p_max")]
    pub p_max: f64,
}

fn default_modes() -> usize {
    8
}

fn default_p_max() -> f64 {
    6.0
}

impl Default for ReservoirSpec {
    fn default() -> Self {
        ReservoirSpec {
            form_factor: FormFactorSpec::default(),
            beta: 1.0,
            modes: default_modes(),
            p_max: default_p_max(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsSpec {
    /// Constant of the `lambda^4` correction in `t_dec` and of the bound's
    /// exponent.
    #[serde(default)]
    pub c_const: f64,
    #[serde(rename = "C_const", default = "one")]
    pub big_c_const: f64,
}

impl Default for ConstantsSpec {
    fn default() -> Self {
        ConstantsSpec { c_const: 0.0, big_c_const: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_steps")]
    pub steps_per_period: usize,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_method() -> Method {
    Method::Auto
}

fn default_steps() -> usize {
    DEFAULT_STEPS
}

fn default_samples() -> usize {
    DEFAULT_SAMPLES
}

impl Default for SimulationSpec {
    fn default() -> Self {
        SimulationSpec {
            method: Method::Auto,
            steps_per_period: DEFAULT_STEPS,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    #[serde(rename = "lambda")]
    Lambda,
    #[serde(rename = "T")]
    Period,
    #[serde(rename = "mu")]
    Mu,
    #[serde(rename = "N")]
    Modes,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::Lambda => "lambda",
            SweepAxis::Period => "T",
            SweepAxis::Mu => "mu",
            SweepAxis::Modes => "N",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepAxis::Lambda),
            "T" => Ok(SweepAxis::Period),
            "mu" => Ok(SweepAxis::Mu),
            "N" => Ok(SweepAxis::Modes),
            other => Err(Error::arg(format!(
                "unknown sweep axis '{other}' (expected lambda, T, mu or N)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

/// One experiment. Every field has a default reproducing the bundled
/// sinusoidal scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_scenario")]
    pub scenario: String,
    #[serde(default)]
    pub system: SystemSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub reservoir: ReservoirSpec,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_sample_dt")]
    pub sample_dt: f64,
    #[serde(default)]
    pub constants: ConstantsSpec,
    #[serde(default)]
    pub rate_power: RatePower,
    #[serde(default)]
    pub simulation: SimulationSpec,
    /// Fail with a decoupling error when the schedule does not decouple.
    #[serde(default = "yes")]
    pub require_dd: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSpec>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

fn default_scenario() -> String {
    BUNDLED_SCENARIOS[0].into()
}

fn default_lambda() -> f64 {
    0.05
}

fn default_horizon() -> f64 {
    50.0
}

fn default_sample_dt() -> f64 {
    0.5
}

fn yes() -> bool {
    true
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scenario: default_scenario(),
            system: SystemSpec::default(),
            schedule: ScheduleSpec::default(),
            reservoir: ReservoirSpec::default(),
            lambda: default_lambda(),
            horizon: default_horizon(),
            sample_dt: default_sample_dt(),
            constants: ConstantsSpec::default(),
            rate_power: RatePower::Squared,
            simulation: SimulationSpec::default(),
            require_dd: true,
            sweep: None,
            output_dir: default_out(),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    /// Parses a JSON document; errors carry the dotted path of the field.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut de = serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." { "<root>".to_string() } else { path };
            Error::config(path, e.into_inner().to_string())
        })?;
        de.end().map_err(|e| Error::config("<root>", e.to_string()))?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_json(&text)
    }

    /// Built-in scenarios by name.
    pub fn bundled(name: &str) -> Result<Self> {
        match name {
            "spin-fermion-sinusoidal" => Ok(ExperimentConfig::default()),
            "spin-fermion-echo" => Ok(ExperimentConfig {
                scenario: name.into(),
                schedule: ScheduleSpec {
                    kind: ControlKind::BangBang,
                    kicks: vec![
                        Kick { alpha: 0.25, c: std::f64::consts::FRAC_PI_2 },
                        Kick { alpha: 0.75, c: -std::f64::consts::FRAC_PI_2 },
                    ],
                    ..ScheduleSpec::default()
                },
                ..ExperimentConfig::default()
            }),
            other => Err(Error::config(
                "scenario",
                format!("unknown scenario '{other}' (bundled: {})", BUNDLED_SCENARIOS.join(", ")),
            )),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_string(self)
    }

    /// SHA-256 of the compact JSON form with the output directory blanked.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical)?;
        Ok(Sha256::digest(&bytes).iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        }))
    }

    /// Checks every guard and builds the derived objects.
    pub fn validate(&self) -> Result<Setup> {
        Setup::new(self)
    }
}

/// Validated configuration with its derived objects.
#[derive(Debug, Clone)]
pub struct Setup {
    pub model: SystemModel,
    /// Schedule as configured; smooth schedules without `mu` carry a
    /// placeholder amplitude until tuned.
    pub template: ControlSchedule,
    pub form_factor: FormFactor,
    pub spectral: Arc<SpectralFunction>,
    pub modes: ModeSet,
    pub options: EvolveOptions,
}

fn finite(path: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be finite, got {v}")))
    }
}

fn positive(path: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::config(path, format!("must be positive and finite, got {v}")))
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl Setup {
    fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let h_s = cfg.system.h_s.to_matrix("system.h_s")?;
        let q = cfg.system.q.to_matrix("system.q")?;
        if h_s.nrows() != q.nrows() {
            return Err(Error::config(
                "system.q",
                format!("dimension {} differs from H_s dimension {}", q.nrows(), h_s.nrows()),
            ));
        }
        let model = SystemModel::new(h_s, q).map_err(at("system"))?;
        let spectrum = model.spectrum();
        if model.dim() != 2 || !spectrum.is_simple() {
            return Err(Error::config(
                "system.h_s",
                "rates need a two-level system with a non-degenerate H_s",
            ));
        }

        let s = &cfg.schedule;
        let period = positive("schedule.period", s.period)?;
        let bound = period * model.h_norm();
        if bound >= std::f64::consts::FRAC_PI_2 {
            return Err(Error::config(
                "schedule.period",
                format!("T ||H_s|| = {bound:.6} violates T ||H_s|| < pi/2"),
            ));
        }
        let direction = s.direction.to_matrix("schedule.direction")?;
        let template = match s.kind {
            ControlKind::Smooth => {
                let mu = match s.mu {
                    Some(mu) => finite("schedule.mu", mu)?,
                    None => {
                        let [lo, hi] = s.tune_bracket;
                        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                            return Err(Error::config("schedule.tune_bracket", "needs finite lo < hi"));
                        }
                        0.5 * (lo + hi)
                    }
                };
                ControlSchedule::smooth(period, mu, s.shape.clone(), direction)
                    .map_err(at("schedule.shape"))?
            }
            ControlKind::BangBang => {
                if s.kicks.is_empty() {
                    return Err(Error::config("schedule.kicks", "bang-bang schedule needs kicks"));
                }
                ControlSchedule::bang_bang(period, s.kicks.clone(), direction).map_err(at("schedule.kicks"))?
            }
            ControlKind::None => ControlSchedule::none(period, model.dim()).map_err(at("schedule"))?,
        };
        template.validate_for(&model).map_err(at("schedule.direction"))?;

        let r = &cfg.reservoir;
        let kind = FormFactorKind::from_name(&r.form_factor.name).map_err(at("reservoir.form_factor.name"))?;
        let beta = positive("reservoir.beta", r.beta)?;
        let ff = &r.form_factor;
        let form_factor =
            FormFactor::new(kind, ff.amplitude, ff.width, beta, ff.r_max).map_err(at("reservoir.form_factor"))?;
        positive("reservoir.p_max", r.p_max)?;
        if r.modes == 0 {
            return Err(Error::config("reservoir.modes", "needs at least one mode"));
        }
        let fits = r.modes < 32 && model.dim() << r.modes <= MAX_TOTAL_DIM;
        if !fits {
            return Err(Error::config(
                "reservoir.modes",
                format!("d 2^N exceeds {MAX_TOTAL_DIM} with N = {}", r.modes),
            ));
        }
        let modes = discretize_modes(&form_factor, r.modes, r.p_max).map_err(at("reservoir"))?;
        let spectral = Arc::new(SpectralFunction::from_form_factor(&form_factor).map_err(at("reservoir.form_factor"))?);

        finite("lambda", cfg.lambda)?;
        if !(cfg.horizon >= 0.0) || !cfg.horizon.is_finite() {
            return Err(Error::config("horizon", format!("must be finite and >= 0, got {}", cfg.horizon)));
        }
        positive("sample_dt", cfg.sample_dt)?;
        if cfg.constants.c_const < 0.0 || !cfg.constants.c_const.is_finite() {
            return Err(Error::config("constants.c_const", "must be finite and >= 0"));
        }
        finite("constants.C_const", cfg.constants.big_c_const)?;
        if cfg.simulation.steps_per_period == 0 {
            return Err(Error::config("simulation.steps_per_period", "must be positive"));
        }
        if cfg.simulation.samples == 0 {
            return Err(Error::config("simulation.samples", "must be positive"));
        }
        if let Some(sw) = &cfg.sweep {
            check_sweep(cfg, sw.axis, &sw.values).map_err(at("sweep.values"))?;
        }
        Ok(Setup {
            model,
            template,
            form_factor,
            spectral,
            modes,
            options: EvolveOptions {
                method: cfg.simulation.method,
                steps_per_period: cfg.simulation.steps_per_period,
                samples: cfg.simulation.samples,
                seed: cfg.seed,
                record_reservoir: false,
            },
        })
    }
}

fn check_sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<()> {
    if values.len() < 2 {
        return Err(Error::arg("a sweep needs at least two values"));
    }
    for &v in values {
        let ok = match axis {
            SweepAxis::Lambda | SweepAxis::Mu => v.is_finite(),
            SweepAxis::Period => v > 0.0 && v.is_finite(),
            SweepAxis::Modes => v >= 1.0 && v.fract() == 0.0 && v <= 31.0,
        };
        if !ok {
            return Err(Error::arg(format!("value {v} is not valid on the {} axis", axis.name())));
        }
        if axis == SweepAxis::Mu && cfg.schedule.kind != ControlKind::Smooth {
            return Err(Error::arg("the mu axis needs a smooth schedule"));
        }
    }
    Ok(())
}

/// Decoupling verdict of the schedule actually used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdSection {
    #[serde(flatten)]
    pub report: DdReport,
    /// Smooth amplitude in use.
    pub mu: Option<f64>,
    pub tuning: Option<TuneResult>,
}

/// Resolves the control (tuning the amplitude if the config leaves it open)
/// and checks decoupling.
pub fn resolve_control(cfg: &ExperimentConfig, setup: &Setup) -> Result<(ControlSchedule, DdSection)> {
    let (schedule, tuning) = match (cfg.schedule.kind, cfg.schedule.mu) {
        (ControlKind::Smooth, None) => {
            let [lo, hi] = cfg.schedule.tune_bracket;
            let tuned = tune_amplitude(&setup.model, &setup.template, (lo, hi))?;
            (setup.template.with_amplitude(tuned.mu)?, Some(tuned))
        }
        _ => (setup.template.clone(), None),
    };
    let report = check_dd(&setup.model, &schedule, DD_TOL)?;
    Ok((
        schedule.clone(),
        DdSection {
            report,
            mu: schedule.amplitude(),
            tuning,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub label: String,
    pub method: Method,
    pub samples: usize,
    pub horizon: f64,
    pub final_retention: Option<f64>,
    pub sup_deviation: f64,
    pub population_drift: f64,
    pub comparison: DeviationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Runs {
    pub on: RunSummary,
    pub off: RunSummary,
    /// Final retention with control over final retention without.
    pub retention_gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub dd_pass: bool,
    pub xi: Option<f64>,
    pub t_dec: Option<f64>,
    pub retention: Option<f64>,
    pub sup_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "value,dd_pass,xi,t_dec,retention,sup_deviation";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                num(r.value),
                r.dd_pass,
                opt(r.xi),
                opt(r.t_dec),
                opt(r.retention),
                num(r.sup_deviation)
            );
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub scenario: String,
    pub config_sha256: String,
    pub version: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub dd: DdSection,
    /// Absent when the schedule does not decouple.
    pub rates: Option<RateSummary>,
    pub runs: Runs,
    pub sweep: Option<SweepTable>,
    pub provenance: Provenance,
}

/// Output of one exact run and its comparison.
pub struct SimulationRun {
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

fn initial_state() -> CMatrix {
    CMatrix::from_element(2, 2, c64(0.5, 0.0))
}

/// Exact run of `schedule` from the equal superposition of the `H_s`
/// eigenvectors.
pub fn simulate(
    cfg: &ExperimentConfig,
    setup: &Setup,
    schedule: &ControlSchedule,
    label: &str,
) -> Result<SimulationRun> {
    let tm = TotalModel::new(setup.model.clone(), setup.modes.clone(), cfg.lambda, schedule.clone())?;
    let rho0 = setup.model.spectrum().from_eigenbasis(&initial_state());
    let trajectory = evolve_with(&tm, &rho0, cfg.horizon, cfg.sample_dt, &setup.options)?;
    let constants = BoundConstants {
        c: cfg.constants.c_const,
        big_c: cfg.constants.big_c_const,
    };
    let comparison = compare_with_effective(&trajectory, &setup.model, schedule, cfg.lambda, &constants)?;
    let summary = RunSummary {
        label: label.into(),
        method: trajectory.method,
        samples: trajectory.times.len(),
        horizon: comparison.horizon,
        final_retention: comparison.final_retention,
        sup_deviation: comparison.sup_deviation,
        population_drift: comparison.population_drift,
        comparison,
    };
    Ok(SimulationRun { trajectory, summary })
}

/// Weak-coupling rate summary of a decoupling schedule.
pub fn rates(cfg: &ExperimentConfig, setup: &Setup, schedule: &ControlSchedule) -> Result<RateSummary> {
    let gen = level_shift(&setup.model, schedule, &setup.spectral, cfg.lambda)?;
    Ok(decoherence_time_with(&gen, cfg.constants.c_const, cfg.rate_power))
}

fn vary(cfg: &ExperimentConfig, axis: SweepAxis, v: f64) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.sweep = None;
    match axis {
        SweepAxis::Lambda => c.lambda = v,
        SweepAxis::Period => c.schedule.period = v,
        SweepAxis::Mu => c.schedule.mu = Some(v),
        SweepAxis::Modes => c.reservoir.modes = v as usize,
    }
    c
}

/// One controlled run per value. The spectral function and, off the `mu`
/// axis, the control amplitude are shared; on the `lambda` axis the rates
/// are rescaled from a single assembly.
pub fn sweep(cfg: &ExperimentConfig, axis: SweepAxis, values: &[f64]) -> Result<SweepTable> {
    check_sweep(cfg, axis, values)?;
    let base = cfg.validate()?;
    let (base_schedule, _) = resolve_control(cfg, &base)?;
    let base_gen = match axis {
        SweepAxis::Lambda if cfg.lambda != 0.0 => check_dd(&base.model, &base_schedule, DD_TOL)?
            .pass
            .then(|| level_shift(&base.model, &base_schedule, &base.spectral, cfg.lambda))
            .transpose()?,
        _ => None,
    };
    let rows: Vec<Result<SweepRow>> = values
        .par_iter()
        .map(|&v| {
            let point = vary(cfg, axis, v);
            let mut setup = point.validate()?;
            setup.spectral = Arc::clone(&base.spectral);
            let schedule = match axis {
                SweepAxis::Mu => setup.template.clone(),
                SweepAxis::Period => base_schedule.rescaled(v)?,
                _ => base_schedule.clone(),
            };
            let dd = check_dd(&setup.model, &schedule, DD_TOL)?;
            let summary = if !dd.pass {
                None
            } else if let (Some(gen), true) = (&base_gen, v != 0.0) {
                Some(decoherence_time_with(&gen.with_lambda(v)?, point.constants.c_const, point.rate_power))
            } else {
                Some(rates(&point, &setup, &schedule)?)
            };
            let run = simulate(&point, &setup, &schedule, "on")?;
            Ok(SweepRow {
                value: v,
                dd_pass: dd.pass,
                xi: summary.as_ref().map(|s| s.xi),
                t_dec: summary.as_ref().map(|s| s.t_dec),
                retention: run.summary.final_retention,
                sup_deviation: run.summary.sup_deviation,
            })
        })
        .collect();
    Ok(SweepTable {
        axis,
        rows: rows.into_iter().collect::<Result<_>>()?,
    })
}

/// Runs the whole pipeline and writes `trajectory_on.csv`,
/// `trajectory_off.csv` and `report.json` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let setup = cfg.validate()?;
    let (schedule, dd) = resolve_control(cfg, &setup)?;
    if !dd.report.pass && cfg.require_dd {
        return Err(Error::Decoupling(format!(
            "zero mode ||Q^(0)|| = {:.3e}, periodicity defect {:.3e}",
            dd.report.zero_mode_norm, dd.report.periodicity_defect
        )));
    }
    let rates = if dd.report.pass {
        Some(rates(cfg, &setup, &schedule)?)
    } else {
        None
    };
    let on = simulate(cfg, &setup, &schedule, "on")?;
    let off_schedule = ControlSchedule::none(schedule.period(), setup.model.dim())?;
    let off = simulate(cfg, &setup, &off_schedule, "off")?;
    let sweep = match &cfg.sweep {
        Some(sw) => Some(sweep(cfg, sw.axis, &sw.values)?),
        None => None,
    };
    let retention_gain = match (on.summary.final_retention, off.summary.final_retention) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    };
    let report = Report {
        dd,
        rates,
        runs: Runs {
            on: on.summary,
            off: off.summary,
            retention_gain,
        },
        sweep,
        provenance: Provenance {
            scenario: cfg.scenario.clone(),
            config_sha256: cfg.hash()?,
            version: env!("CARGO_PKG_VERSION").into(),
            seed: cfg.seed,
        },
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    fs::write(dir.join("trajectory_on.csv"), on.trajectory.to_csv())?;
    fs::write(dir.join("trajectory_off.csv"), off.trajectory.to_csv())?;
    emit_report(&report, ReportFormat::Json, dir)?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::arg(format!("unknown format '{other}'"))),
        }
    }
}

pub const RUNS_CSV_HEADER: &str = "run,method,horizon,final_retention,sup_deviation,population_drift";

/// Writes the report in `format` into `dir` and returns the files written:
/// `report.json`; `runs.csv` (and `sweep.csv` with a sweep); `summary.md`.
pub fn emit_report(report: &Report, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    match format {
        ReportFormat::Json => put("report.json", to_json_string(report)? + "\n")?,
        ReportFormat::Csv => {
            let mut csv = format!("{RUNS_CSV_HEADER}\n");
            for r in [&report.runs.on, &report.runs.off] {
                let method = serde_json::to_value(r.method)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    r.label,
                    method.as_str().unwrap_or_default(),
                    num(r.horizon),
                    opt(r.final_retention),
                    num(r.sup_deviation),
                    num(r.population_drift)
                );
            }
            put("runs.csv", csv)?;
            if let Some(sw) = &report.sweep {
                put("sweep.csv", sw.to_csv())?;
            }
        }
        ReportFormat::Markdown => put("summary.md", markdown_summary(report))?,
    }
    Ok(written)
}

fn short(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        "unbounded".into()
    }
}

fn short_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), short)
}

pub fn markdown_summary(report: &Report) -> String {
    let mut md = format!("# Experiment `{}`\n\n", report.provenance.scenario);
    let dd = &report.dd.report;
    let _ = writeln!(
        md,
        "## Decoupling\n\n- verdict: **{}**\n- zero mode norm: {}\n- periodicity defect: {}\n- residual / T: {}",
        if dd.pass { "pass" } else { "fail" },
        short(dd.zero_mode_norm),
        short(dd.periodicity_defect),
        short(dd.residual_normalized)
    );
    if let Some(mu) = report.dd.mu {
        let _ = writeln!(md, "- amplitude mu: {mu:.10}");
    }
    md.push_str("\n## Rates\n\n");
    match &report.rates {
        Some(r) => {
            let _ = writeln!(
                md,
                "- lambda: {}\n- T: {}\n- xi(T): {}\n- t_dec: {}\n- regime ratio: {}",
                r.lambda,
                r.period,
                short(r.xi),
                short(r.t_dec),
                short(r.regime_ratio)
            );
        }
        None => md.push_str("- not available (schedule does not decouple)\n"),
    }
    md.push_str("\n## Exact runs\n\n| run | final retention | sup deviation | population drift |\n|---|---|---|---|\n");
    for r in [&report.runs.on, &report.runs.off] {
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} |",
            r.label,
            short_opt(r.final_retention),
            short(r.sup_deviation),
            short(r.population_drift)
        );
    }
    let _ = writeln!(md, "\nretention ratio (on / off): {}", short_opt(report.runs.retention_gain));
    if let Some(sw) = &report.sweep {
        let _ = writeln!(
            md,
            "\n## Sweep over {}\n\n| value | xi | t_dec | retention | sup deviation |\n|---|---|---|---|---|",
            sw.axis.name()
        );
        for r in &sw.rows {
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {} |",
                r.value,
                short_opt(r.xi),
                short_opt(r.t_dec),
                short_opt(r.retention),
                short(r.sup_deviation)
            );
        }
    }
    let _ = writeln!(
        md,
        "\n## Provenance\n\n- config sha256: `{}`\n- version: {}\n- seed: {}",
        report.provenance.config_sha256, report.provenance.version, report.provenance.seed
    );
    md
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// Pretty JSON with every float printed to 17 significant digits and
/// non-finite values as `null`.
pub fn to_json_string<T: Serialize + ?Sized>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SigDigits::default());
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

#[derive(Default)]
struct SigDigits {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

impl serde_json::ser::Formatter for SigDigits {
    fn write_f64<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f64) -> io::Result<()> {
        write!(w, "{v:.16e}")
    }

    fn write_f32<W: ?Sized + io::Write>(&mut self, w: &mut W, v: f32) -> io::Result<()> {
        write!(w, "{:.16e}", v as f64)
    }

    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_array(w)
    }

    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array(w)
    }

    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_array_value(w)
    }

    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object(w)
    }

    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object(w)
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.pretty.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.pretty.end_object_value(w)
    }
}

/// Runs `f` on a pool capped by `DECOSHIELD_THREADS` when it is set.
pub fn with_thread_limit<R: Send>(f: impl FnOnce() -> R + Send) -> Result<R> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(f()),
        Ok(v) => {
            let n: usize = v
                .trim()
                .parse()
                .ok()
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::config(THREADS_ENV, format!("expected a positive integer, got '{v}'")))?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Resource(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// Process exit code of an error: 1 configuration, 2 decoupling failure,
/// 3 numeric or I/O failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::Argument(_) | Error::Json(_) => 1,
        Error::Decoupling(_) => 2,
        _ => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_numbers_carry_seventeen_digits() {
        let s = to_json_string(&vec![0.1, 1.0, f64::INFINITY]).unwrap();
        assert!(s.contains("1.0000000000000001e-1"));
        assert!(s.contains("1.0000000000000000e0"));
        assert!(s.contains("null"));
        let back: Vec<Option<f64>> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![Some(0.1), Some(1.0), None]);
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::config("a", "b")), 1);
        assert_eq!(exit_code(&Error::Decoupling("x".into())), 2);
        assert_eq!(exit_code(&Error::Numeric("x".into())), 3);
    }
}
