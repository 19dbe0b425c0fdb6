//! `geodesign` command-line tool.

mod manifest;

use std::fs::{self, File};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use geodesign::estimator::{self, TrimSpec};
use geodesign::geo_data::{self, GeoPanel};
use geodesign::pairing::{self, PairSet};
use geodesign::pipeline::{self, DesignConfig, DesignReport, PairingMethod};
use geodesign::power;
use geodesign::synthetic::{self, SynthConfig};
use geodesign::DesignError;

use manifest::RunManifest;

const EXIT_ERROR: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "geodesign", version, about = "Design and analyse paired geo experiments")]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Seed for every random step.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads for Monte Carlo replicates. Results do not depend on it.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Optimal,
    Rank,
}

impl From<Method> for PairingMethod {
    fn from(m: Method) -> Self {
        match m {
            Method::Optimal => PairingMethod::Optimal,
            Method::Rank => PairingMethod::Rank,
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic pretest panel (config: generator settings).
    Simulate {
        #[arg(long)]
        n_geos: Option<usize>,
        #[arg(long)]
        n_days: Option<usize>,
        /// 1 for spend proportional to response, 2 for squared response.
        #[arg(long)]
        proxy_power: Option<u8>,
    },
    /// Pair, evaluate every candidate size, choose and randomize a design.
    Design {
        pretest: PathBuf,
        #[arg(long, value_enum)]
        method: Option<Method>,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Build `n` pairs on the pairing period.
    Pair {
        pretest: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, value_enum)]
        method: Option<Method>,
    },
    /// Evaluate the RMSE of a given set of pairs.
    Evaluate {
        pretest: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        /// True iROAS for the simulated experiments.
        #[arg(long, default_value_t = 0.0)]
        theta: f64,
    },
    /// Trimmed Match estimate from `pair_id,x,y` experiment data.
    Estimate {
        experiment: PathBuf,
        #[arg(long, default_value_t = estimator::POST_ANALYSIS_MAX_TRIM_RATE)]
        max_trim_rate: f64,
        /// Trim exactly this many pairs per side.
        #[arg(long)]
        trim_count: Option<usize>,
    },
    /// RMSE of rank-based versus optimal pairing for every candidate size.
    Compare {
        pretest: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
    },
    /// Mean RMSE curves over synthetic panels, with and without cross
    /// validation and trimming (config: design settings).
    Curve {
        /// Generator settings.
        #[arg(long)]
        synth_config: Option<PathBuf>,
        /// Number of synthetic panels; seeds are 0..panels offset by --seed.
        #[arg(long, default_value_t = 10)]
        panels: u64,
        #[arg(long)]
        replicates: Option<usize>,
    },
}

#[derive(Debug)]
struct Failure {
    category: &'static str,
    message: String,
}

impl From<DesignError> for Failure {
    fn from(e: DesignError) -> Self {
        Failure {
            category: e.category(),
            message: e.to_string(),
        }
    }
}

impl From<geodesign::DataError> for Failure {
    fn from(e: geodesign::DataError) -> Self {
        DesignError::from(e).into()
    }
}

fn io_failure(path: &Path) -> impl FnOnce(io::Error) -> Failure + '_ {
    move |e| Failure {
        category: "io",
        message: format!("{}: {e}", path.display()),
    }
}

fn config_failure(message: String) -> Failure {
    Failure {
        category: "config",
        message,
    }
}

/// What a command produced.
enum Outcome {
    Done,
    Infeasible,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            report(&Failure {
                category: "usage",
                message: e.kind().to_string(),
            });
            return ExitCode::from(EXIT_USAGE);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Infeasible) => ExitCode::from(EXIT_INFEASIBLE),
        Err(f) => {
            report(&f);
            ExitCode::from(EXIT_ERROR)
        }
    }
}

fn report(f: &Failure) {
    let line = serde_json::json!({ "category": f.category, "message": f.message });
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<Outcome, Failure> {
    if let Some(w) = cli.workers {
        if w == 0 {
            return Err(config_failure("--workers must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| config_failure(e.to_string()))?;
    }
    let Cli {
        config,
        seed,
        out,
        command,
        ..
    } = cli;
    match command {
        Command::Simulate {
            n_geos,
            n_days,
            proxy_power,
        } => {
            let mut cfg: SynthConfig = load_config(config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.n_geos, n_geos);
            override_with(&mut cfg.n_days, n_days);
            override_with(&mut cfg.proxy_power, proxy_power);
            cfg.validate()?;
            let out = require_out(out)?;
            let inputs = config.into_iter().collect::<Vec<_>>();
            let files = [out.join("pretest.csv"), out.join("simulation.json")];
            with_manifest(&out, "simulate", Some(cfg.seed), &cfg, &inputs, &files, || {
                let synth = synthetic::generate(&cfg)?;
                write_with(&files[0], |w| geo_data::write_panel(&synth.panel, w))?;
                let echo = serde_json::json!({
                    "config": cfg,
                    "floored_responses": synth.floored,
                    "ar_start": "stationary",
                });
                write_json(&files[1], &echo)?;
                Ok(Outcome::Done)
            })
        }
        Command::Design {
            pretest,
            method,
            replicates,
            budget,
        } => {
            let mut cfg: DesignConfig = load_config(config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.pairing_method, method.map(Into::into));
            override_with(&mut cfg.replicates, replicates);
            override_with(&mut cfg.budget, budget);
            cfg.validate()?;
            let out = require_out(out)?;
            let inputs = inputs_of(&pretest, config.as_ref());
            let planned = [
                out.join("candidates.csv"),
                out.join("pairs.csv"),
                out.join("assignment.csv"),
                out.join("report.json"),
                out.join("rmse_plot.csv"),
            ];
            with_manifest(&out, "design", Some(cfg.seed), &cfg, &inputs, &planned, || {
                let panel = read_panel(&pretest)?;
                let run = pipeline::run_design(&panel, &cfg)?;
                write_with(&planned[0], |w| pipeline::write_candidate_table(&run.table.rows, w))?;
                let series = if run.provenance.periods.in_sample { "in_sample" } else { "cv" };
                write_with(&planned[4], |w| {
                    pipeline::write_rmse_series(&[(series, &run.table.rows)], w)
                })?;
                let report = match &run.design {
                    Some(d) => {
                        write_with(&planned[1], |w| pairing::write_pairs(&d.pairs, w))?;
                        write_with(&planned[2], |w| pipeline::write_assignment(&d.pairs, &d.assignment, w))?;
                        DesignReport::new(&run, Some("pairs.csv".into()), Some("assignment.csv".into()))
                    }
                    None => DesignReport::new(&run, None, None),
                };
                write_json(&planned[3], &report)?;
                Ok(if run.design.is_some() {
                    Outcome::Done
                } else {
                    Outcome::Infeasible
                })
            })
        }
        Command::Pair { pretest, n, method } => {
            let mut cfg: DesignConfig = load_config(config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.pairing_method, method.map(Into::into));
            cfg.validate()?;
            let out = require_out(out)?;
            let inputs = inputs_of(&pretest, config.as_ref());
            let files = [out.join("pairs.csv")];
            with_manifest(&out, "pair", None, &cfg, &inputs, &files, || {
                let panel = read_panel(&pretest)?;
                let periods = pipeline::design_periods(&panel, &cfg)?;
                let pairs = pipeline::candidate_pairs(&panel, &periods, cfg.pairing_method, &[n])?;
                write_with(&files[0], |w| pairing::write_pairs(&pairs[0], w))?;
                Ok(Outcome::Done)
            })
        }
        Command::Evaluate {
            pretest,
            pairs,
            replicates,
            theta,
        } => {
            let mut cfg: DesignConfig = load_config(config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.replicates, replicates);
            cfg.validate()?;
            let out = require_out(out)?;
            let mut inputs = inputs_of(&pretest, config.as_ref());
            inputs.push(pairs.clone());
            let files = [out.join("evaluation.csv")];
            let echo = serde_json::json!({ "design": cfg, "theta": theta });
            with_manifest(&out, "evaluate", Some(cfg.seed), &echo, &inputs, &files, || {
                let panel = read_panel(&pretest)?;
                let ps: PairSet = pairing::read_pairs(File::open(&pairs).map_err(io_failure(&pairs))?)?;
                let periods = pipeline::design_periods(&panel, &cfg)?;
                let data = pipeline::evaluation_data(&panel, &periods, cfg.spend_proxy)?;
                let mut eval_inputs = pipeline::eval_inputs(&ps, &data, &cfg);
                eval_inputs.theta = theta;
                let row = power::evaluate_rmse(&eval_inputs, cfg.alpha, cfg.beta)?;
                write_with(&files[0], |w| pipeline::write_candidate_table(&[row], w))?;
                Ok(Outcome::Done)
            })
        }
        Command::Estimate {
            experiment,
            max_trim_rate,
            trim_count,
        } => {
            let spec = match trim_count {
                Some(k) => TrimSpec::fixed(k),
                None => TrimSpec::data_driven(max_trim_rate),
            };
            let compute = || -> Result<serde_json::Value, Failure> {
                let data = estimator::read_pair_data(File::open(&experiment).map_err(io_failure(&experiment))?)?;
                let est = estimator::estimate(&data, &spec).map_err(DesignError::from)?;
                Ok(serde_json::json!({
                    "theta_hat": est.theta_hat,
                    "trim_count": est.trim_count,
                    "trimmed_pair_ids": est.trimmed_pair_ids,
                    "untrimmed_x_sum": est.untrimmed_x_sum,
                    "se_proxy": est.se_proxy.is_finite().then_some(est.se_proxy),
                    "n_pairs": data.len(),
                    "trim_spec": spec,
                }))
            };
            match out {
                None => {
                    let value = compute()?;
                    println!("{}", serde_json::to_string_pretty(&value).expect("json"));
                    Ok(Outcome::Done)
                }
                Some(out) => {
                    let files = [out.join("estimate.json")];
                    with_manifest(&out, "estimate", None, &spec, &[experiment.clone()], &files, || {
                        write_json(&files[0], &compute()?)?;
                        Ok(Outcome::Done)
                    })
                }
            }
        }
        Command::Compare { pretest, replicates } => {
            let mut cfg: DesignConfig = load_config(config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.replicates, replicates);
            cfg.validate()?;
            let out = require_out(out)?;
            let inputs = inputs_of(&pretest, config.as_ref());
            let files = [out.join("comparison.csv"), out.join("rmse_plot.csv")];
            with_manifest(&out, "compare", Some(cfg.seed), &cfg, &inputs, &files, || {
                let panel = read_panel(&pretest)?;
                let rows = pipeline::compare_pairing_methods(&panel, &cfg)?;
                write_with(&files[0], |w| pipeline::write_comparison(&rows, w))?;
                write_with(&files[1], |w| {
                    let mut w = io::BufWriter::new(w);
                    writeln!(w, "n,rmse,series")?;
                    for r in &rows {
                        writeln!(w, "{},{},optimal", r.n, r.rmse_optimal)?;
                    }
                    for r in &rows {
                        writeln!(w, "{},{},rank", r.n, r.rmse_rank)?;
                    }
                    w.flush()
                })?;
                Ok(Outcome::Done)
            })
        }
        Command::Curve {
            synth_config,
            panels,
            replicates,
        } => {
            let mut cfg: DesignConfig = load_config(config.as_deref())?;
            let synth: SynthConfig = load_config(synth_config.as_deref())?;
            override_with(&mut cfg.seed, seed);
            override_with(&mut cfg.replicates, replicates);
            cfg.validate()?;
            synth.validate()?;
            let out = require_out(out)?;
            let inputs: Vec<PathBuf> = config.into_iter().chain(synth_config).collect();
            let files = [out.join("rmse_curve.csv"), out.join("fixture.json")];
            let echo = serde_json::json!({ "design": cfg, "synthetic": synth, "panels": panels });
            with_manifest(&out, "curve", Some(cfg.seed), &echo, &inputs, &files, || {
                let seeds: Vec<u64> = (0..panels).map(|i| cfg.seed.wrapping_add(i)).collect();
                let fixture = synthetic::expected_rmse_curve_fixture(&synth, &cfg, &seeds)?;
                write_with(&files[0], |w| {
                    let mut w = io::BufWriter::new(w);
                    writeln!(w, "n,rmse,series")?;
                    let series: [(&str, fn(&synthetic::RmseCurveRow) -> f64); 4] = [
                        ("cv", |r| r.cv_trimmed),
                        ("in_sample", |r| r.in_sample_trimmed),
                        ("trimmed", |r| r.cv_trimmed),
                        ("untrimmed", |r| r.cv_untrimmed),
                    ];
                    for (name, get) in series {
                        for r in &fixture.rows {
                            writeln!(w, "{},{},{}", r.n, get(r), name)?;
                        }
                    }
                    w.flush()
                })?;
                write_json(&files[1], &fixture)?;
                Ok(Outcome::Done)
            })
        }
    }
}

fn override_with<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T, Failure> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(io_failure(path))?;
    serde_json::from_str(&text).map_err(|e| config_failure(format!("{}: {e}", path.display())))
}

fn require_out(out: Option<PathBuf>) -> Result<PathBuf, Failure> {
    out.ok_or_else(|| config_failure("--out is required for this command".into()))
}

fn inputs_of(data: &Path, config: Option<&PathBuf>) -> Vec<PathBuf> {
    std::iter::once(data.to_path_buf()).chain(config.cloned()).collect()
}

fn read_panel(path: &Path) -> Result<GeoPanel, Failure> {
    let file = File::open(path).map_err(io_failure(path))?;
    geo_data::load_panel(file).map_err(|e| Failure {
        category: "data",
        message: format!("{}: {e}", path.display()),
    })
}

fn write_with(path: &Path, f: impl FnOnce(File) -> io::Result<()>) -> Result<(), Failure> {
    let file = File::create(path).map_err(io_failure(path))?;
    f(file).map_err(io_failure(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure {
        category: "io",
        message: e.to_string(),
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_failure(path))
}

/// Run `body` between an incomplete and a final manifest in `out`.
fn with_manifest<C: Serialize>(
    out: &Path,
    command: &str,
    seed: Option<u64>,
    config: &C,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    body: impl FnOnce() -> Result<Outcome, Failure>,
) -> Result<Outcome, Failure> {
    fs::create_dir_all(out).map_err(io_failure(out))?;
    let config = serde_json::to_value(config).map_err(|e| config_failure(e.to_string()))?;
    let mut m = RunManifest::new(command, seed, config, inputs).map_err(|e| Failure {
        category: "io",
        message: format!("reading inputs: {e}"),
    })?;
    m.plan(outputs);
    m.write(out).map_err(io_failure(out))?;
    match body() {
        Ok(outcome) => {
            m.complete(out).map_err(io_failure(out))?;
            Ok(outcome)
        }
        Err(f) => {
            let _ = m.fail(out, &f.message);
            Err(f)
        }
    }
}
