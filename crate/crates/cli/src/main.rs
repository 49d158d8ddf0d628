// Copyright 2026 Decoshield Contributors
// SPDX-License-Identifier: Apache-2.0

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use decoshield::control::{fourier_modes, tune_amplitude};
use decoshield::experiment::{
    emit_report, exit_code, markdown_summary, rates, resolve_control, run_experiment, simulate, sweep,
    to_json_string, with_thread_limit, ControlKind, ExperimentConfig, ReportFormat, SweepAxis,
};
use decoshield::{Error, Result};

#[derive(Parser)]
#[command(name = "decoshield", version, about = "Decoherence suppression experiments for a spin-fermion model")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); the bundled scenario when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Bundled scenario to start from instead of a config file.
    #[arg(long, global = true, conflicts_with = "config")]
    scenario: Option<String>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// json, csv or markdown.
    #[arg(long, global = true, default_value = "json")]
    format: String,
}

#[derive(Subcommand)]
enum Verb {
    /// Check the decoupling condition of the configured schedule.
    CheckDd {
        #[command(flatten)]
        common: Common,
    },
    /// Tune the smooth amplitude so the zero Fourier mode vanishes.
    TuneMu {
        #[command(flatten)]
        common: Common,
        #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
        bracket: Option<Vec<f64>>,
    },
    /// Fourier modes of the coupling in the interaction picture.
    Fourier {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 16)]
        k_max: usize,
    },
    /// Weak-coupling level shift, xi(T) and t_dec.
    Rates {
        #[command(flatten)]
        common: Common,
    },
    /// Exact run of the configured schedule; writes trajectory.csv.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Run without control instead.
        #[arg(long)]
        off: bool,
    },
    /// Parameter sweep; falls back to the config's sweep section.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// lambda, T, mu or N.
        #[arg(long)]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
    },
    /// Full pipeline: decoupling check, rates, controlled and uncontrolled
    /// runs, comparison and report files.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

impl Verb {
    fn common(&self) -> &Common {
        match self {
            Verb::CheckDd { common }
            | Verb::TuneMu { common, .. }
            | Verb::Fourier { common, .. }
            | Verb::Rates { common }
            | Verb::Simulate { common, .. }
            | Verb::Sweep { common, .. }
            | Verb::Compare { common } => common,
        }
    }
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&common.config, &common.scenario) {
        (Some(path), _) => ExperimentConfig::from_file(path)?,
        (None, Some(name)) => ExperimentConfig::bundled(name)?,
        (None, None) => ExperimentConfig::default(),
    };
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Dotted-key view of a JSON value, for the csv and markdown renderings.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(map) => map.iter().for_each(|(k, x)| flatten(&key(k), x, out)),
        Value::Array(items) if items.iter().all(|x| !x.is_object() && !x.is_array()) => {
            let joined: Vec<String> = items.iter().map(scalar).collect();
            out.push((prefix.to_string(), joined.join(";")));
        }
        Value::Array(items) => items.iter().enumerate().for_each(|(i, x)| flatten(&key(&i.to_string()), x, out)),
        other => out.push((prefix.to_string(), scalar(other))),
    }
}

fn scalar(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Number(n) if n.is_f64() => format!("{:.16e}", n.as_f64().unwrap_or(f64::NAN)),
        other => other.to_string(),
    }
}

fn render(value: &Value, format: ReportFormat, title: &str) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => to_json_string(value)? + "\n",
        ReportFormat::Csv => {
            let mut rows = Vec::new();
            flatten("", value, &mut rows);
            let mut s = String::from("key,value\n");
            for (k, v) in rows {
                s.push_str(&format!("{k},{v}\n"));
            }
            s
        }
        ReportFormat::Markdown => {
            let mut rows = Vec::new();
            flatten("", value, &mut rows);
            let mut s = format!("# {title}\n\n| key | value |\n|---|---|\n");
            for (k, v) in rows {
                s.push_str(&format!("| {k} | {v} |\n"));
            }
            s
        }
    })
}

fn write_file(dir: &Path, name: &str, body: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    fs::write(&path, body)?;
    Ok(path)
}

fn run(verb: Verb) -> Result<()> {
    let common = verb.common().clone();
    let format: ReportFormat = common.format.parse()?;
    let cfg = load(&common)?;
    let setup = cfg.validate()?;
    let output = match verb {
        Verb::CheckDd { .. } => {
            let (_, dd) = resolve_control(&cfg, &setup)?;
            let verdict = dd.report.pass;
            print!("{}", render(&serde_json::to_value(&dd)?, format, "Decoupling check")?);
            if !verdict && cfg.require_dd {
                return Err(Error::Decoupling("schedule does not decouple the coupling".into()));
            }
            return Ok(());
        }
        Verb::TuneMu { bracket, .. } => {
            if cfg.schedule.kind != ControlKind::Smooth {
                return Err(Error::Config {
                    path: "schedule.kind".into(),
                    message: "amplitude tuning needs a smooth schedule".into(),
                });
            }
            let (lo, hi) = match bracket.as_deref() {
                Some([lo, hi]) => (*lo, *hi),
                _ => (cfg.schedule.tune_bracket[0], cfg.schedule.tune_bracket[1]),
            };
            serde_json::to_value(tune_amplitude(&setup.model, &setup.template, (lo, hi))?)?
        }
        Verb::Fourier { k_max, .. } => {
            let (schedule, _) = resolve_control(&cfg, &setup)?;
            let table = fourier_modes(&setup.model, &schedule, k_max)?;
            let k = k_max as i64;
            let norm = |m: Option<&decoshield::CMatrix>| m.map(|m| m.norm());
            let rows: Vec<Value> = (-k..=k)
                .map(|j| {
                    json!({
                        "k": j,
                        "norm": norm(table.mode(j)),
                        "ladder_minus": norm(table.ladder_mode(j, -1)),
                        "ladder_plus": norm(table.ladder_mode(j, 1)),
                    })
                })
                .collect();
            if format == ReportFormat::Csv {
                let mut s = String::from("k,norm,ladder_minus,ladder_plus\n");
                for r in &rows {
                    let cell = |key: &str| scalar(&r[key]);
                    s.push_str(&format!("{},{},{},{}\n", r["k"], cell("norm"), cell("ladder_minus"), cell("ladder_plus")));
                }
                print!("{s}");
                return Ok(());
            }
            json!({
                "period": table.period,
                "k_max": table.k_max,
                "parseval_defect": table.tail_bound,
                "modes": rows,
            })
        }
        Verb::Rates { .. } => {
            let (schedule, dd) = resolve_control(&cfg, &setup)?;
            if !dd.report.pass {
                return Err(Error::Decoupling("rates need a decoupling schedule".into()));
            }
            serde_json::to_value(rates(&cfg, &setup, &schedule)?)?
        }
        Verb::Simulate { off, .. } => {
            let (mut schedule, dd) = resolve_control(&cfg, &setup)?;
            if off {
                schedule = decoshield::control::ControlSchedule::none(schedule.period(), setup.model.dim())?;
            } else if !dd.report.pass && cfg.require_dd {
                return Err(Error::Decoupling("schedule does not decouple the coupling".into()));
            }
            let label = if off { "off" } else { "on" };
            let run = simulate(&cfg, &setup, &schedule, label)?;
            write_file(&cfg.output_dir, "trajectory.csv", &run.trajectory.to_csv())?;
            serde_json::to_value(&run.summary)?
        }
        Verb::Sweep { axis, values, .. } => {
            let (axis, values) = match (axis, values, &cfg.sweep) {
                (Some(a), Some(v), _) => (a.parse::<SweepAxis>()?, v),
                (None, None, Some(sw)) => (sw.axis, sw.values.clone()),
                _ => return Err(Error::Argument("sweep needs --axis and --values or a sweep section".into())),
            };
            let table = sweep(&cfg, axis, &values)?;
            write_file(&cfg.output_dir, "sweep.csv", &table.to_csv())?;
            if format == ReportFormat::Csv {
                print!("{}", table.to_csv());
                return Ok(());
            }
            serde_json::to_value(&table)?
        }
        Verb::Compare { .. } => {
            let report = run_experiment(&cfg)?;
            if format != ReportFormat::Json {
                emit_report(&report, format, &cfg.output_dir)?;
            }
            if format == ReportFormat::Markdown {
                print!("{}", markdown_summary(&report));
                return Ok(());
            }
            serde_json::to_value(&report)?
        }
    };
    print!("{}", render(&output, format, "decoshield")?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match with_thread_limit(move || run(cli.verb)).and_then(|r| r) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
