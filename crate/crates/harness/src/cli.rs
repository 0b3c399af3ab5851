//! Command-line front end. [`run`] returns the process exit code: 0 on
//! success, 1 on usage or input errors, 2 when a solver fails.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use ucr_core::fit::{fit_log_utility_with, FitConfig, FitResult, RatingPoint};
use ucr_core::model;
use ucr_core::optimizer::OptimizerConfig;

use crate::policy::{run_policy, Outcome, Policy};
use crate::scenario::{gen_scenario, scenario_from_json, scenario_to_json, Overrides, Scenario, ScenarioFile, DEFAULT_SEED, DEFAULT_USERS};
use crate::sweep::{rows_to_csv, run_sweep, SweepSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ucr", version, about = "Utility-cost ratio resource allocation for multi-user VR delivery")]
struct Cli {
    /// Print every default (scenario, solver settings, sweep, fit settings) as JSON and exit.
    #[arg(long, global = true)]
    dump_defaults: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a scenario with the full optimizer.
    Solve {
        /// Scenario JSON; the default scenario for --seed when omitted.
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run a sweep specification and emit one row per value, seed and policy.
    Sweep {
        spec: PathBuf,
        /// Worker threads, overriding the specification; zero uses all cores.
        #[arg(long)]
        workers: Option<usize>,
        #[command(flatten)]
        common: Common,
    },
    /// Fit a logarithmic utility to `rate_bps,resolution_pixels,score` ratings.
    FitUtility {
        data: PathBuf,
        /// Ratio of video bitrate to wireless rate; rates are divided by it.
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one baseline policy (average, opt-bps, opt-f or full).
    Baseline {
        name: String,
        scenario: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Generate a scenario JSON.
    Generate {
        #[arg(long, default_value_t = DEFAULT_USERS)]
        n_users: usize,
        /// Draw log-normal shadowing.
        #[arg(long)]
        shadowing: bool,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Args)]
struct Common {
    /// Seed of the generated scenario, or the only seed of a sweep.
    #[arg(long)]
    seed: Option<u64>,
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Relative tolerance of the outer ratio loop.
    #[arg(long)]
    tol_dinkelbach: Option<f64>,
    /// Relative tolerance of the alternating loop.
    #[arg(long)]
    tol_ao: Option<f64>,
    /// Relative tolerance of the auxiliary-refresh loop.
    #[arg(long)]
    tol_fp: Option<f64>,
    /// Largest accepted KKT residual of an inner solve.
    #[arg(long)]
    tol_kkt: Option<f64>,
}

impl Common {
    fn config(&self) -> OptimizerConfig {
        let mut cfg = OptimizerConfig::default();
        if let Some(v) = self.tol_dinkelbach {
            cfg.dinkelbach_tol = v;
        }
        if let Some(v) = self.tol_ao {
            cfg.ao_tol = v;
        }
        if let Some(v) = self.tol_fp {
            cfg.fp_tol = v;
        }
        if let Some(v) = self.tol_kkt {
            cfg.p5.kkt_tol = v;
        }
        cfg
    }
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

fn solver(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_SOLVER,
        message: message.into(),
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))
}

fn emit(out: &Option<PathBuf>, stdout: &mut dyn Write, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes).map_err(|e| usage(format!("cannot write {}: {e}", path.display()))),
        None => stdout.write_all(bytes).map_err(|e| usage(format!("cannot write output: {e}"))),
    }
}

fn load_scenario(path: &Option<PathBuf>, seed: Option<u64>) -> Result<Scenario, Failure> {
    match path {
        Some(p) => {
            let text = read(p)?;
            scenario_from_json(&text).map_err(|e| usage(format!("{}: {e}", p.display())))
        }
        None => gen_scenario(seed.unwrap_or(DEFAULT_SEED), DEFAULT_USERS, &Overrides::default())
            .map_err(|e| usage(e.to_string())),
    }
}

/// JSON report of one policy run.
#[derive(Serialize)]
struct Report<'a> {
    policy: &'a str,
    ucr: f64,
    utility: f64,
    energy_j: f64,
    delay_s: f64,
    kkt_max_residual: Option<f64>,
    feasible: bool,
    converged: bool,
    outcome: &'a Outcome,
}

#[derive(Serialize)]
struct UserRow {
    user: usize,
    bandwidth_hz: f64,
    power_w: f64,
    resolution_px: f64,
    server_freq_hz: f64,
    user_freq_hz: f64,
    delay_s: f64,
}

fn render_outcome(o: &Outcome, scenario: &Scenario, format: Format) -> Result<Vec<u8>, Failure> {
    match format {
        Format::Json => {
            let report = Report {
                policy: o.policy.name(),
                ucr: o.ucr,
                utility: o.utility,
                energy_j: o.energy,
                delay_s: o.delay,
                kkt_max_residual: o.kkt_max_residual(),
                feasible: o.feasible,
                converged: o.converged,
                outcome: o,
            };
            let mut text = serde_json::to_vec_pretty(&report).map_err(|e| solver(e.to_string()))?;
            text.push(b'\n');
            Ok(text)
        }
        Format::Csv => {
            let a = &o.allocation;
            let delays = model::user_delays(a, &scenario.params).map_err(|e| solver(e.to_string()))?;
            let mut w = csv::Writer::from_writer(Vec::new());
            for n in 0..a.n_users() {
                w.serialize(UserRow {
                    user: n,
                    bandwidth_hz: a.bandwidth[n],
                    power_w: a.power[n],
                    resolution_px: a.resolution[n],
                    server_freq_hz: a.server_freq[n],
                    user_freq_hz: a.user_freq[n],
                    delay_s: delays[n],
                })
                .map_err(|e| solver(e.to_string()))?;
            }
            w.into_inner().map_err(|e| solver(e.to_string()))
        }
    }
}

fn run_one(policy: Policy, path: &Option<PathBuf>, common: &Common, stdout: &mut dyn Write) -> Result<(), Failure> {
    let cfg = common.config();
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let scenario = load_scenario(path, common.seed)?;
    let outcome = run_policy(policy, &scenario, &cfg).map_err(|e| solver(e.to_string()))?;
    let bytes = render_outcome(&outcome, &scenario, common.format)?;
    emit(&common.out, stdout, &bytes)
}

fn read_ratings(path: &Path, theta: f64) -> Result<Vec<RatingPoint>, Failure> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(usage(format!("--theta must be positive, got {theta}")));
    }
    let mut reader = csv::Reader::from_path(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    let mut points = Vec::new();
    for (i, rec) in reader.deserialize::<RatingPoint>().enumerate() {
        let mut p = rec.map_err(|e| usage(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        p.rate /= theta;
        points.push(p);
    }
    Ok(points)
}

#[derive(Serialize)]
struct Defaults {
    scenario: ScenarioFile,
    optimizer: OptimizerConfig,
    sweep: SweepSpec,
    fit: FitConfig,
}

fn dispatch(cli: Cli, stdout: &mut dyn Write) -> Result<(), Failure> {
    if cli.dump_defaults {
        let defaults = Defaults {
            scenario: ScenarioFile::from(&crate::scenario::default_scenario()),
            optimizer: OptimizerConfig::default(),
            sweep: SweepSpec::bandwidth(),
            fit: FitConfig::default(),
        };
        let mut text = serde_json::to_vec_pretty(&defaults).map_err(|e| solver(e.to_string()))?;
        text.push(b'\n');
        return emit(&None, stdout, &text);
    }
    let Some(command) = cli.command else {
        return Err(usage("no subcommand given; run with --help for usage"));
    };
    match command {
        Command::Solve { scenario, common } => run_one(Policy::Full, &scenario, &common, stdout),
        Command::Baseline { name, scenario, common } => {
            let policy: Policy = name.parse().map_err(|e: crate::policy::UnknownPolicy| usage(e.to_string()))?;
            run_one(policy, &scenario, &common, stdout)
        }
        Command::Sweep { spec, workers, common } => {
            let cfg = common.config();
            cfg.validate().map_err(|e| usage(e.to_string()))?;
            let text = read(&spec)?;
            let de = &mut serde_json::Deserializer::from_str(&text);
            let mut parsed: SweepSpec = serde_path_to_error::deserialize(de)
                .map_err(|e| usage(format!("{}: invalid field {}: {}", spec.display(), e.path(), e.inner())))?;
            if let Some(seed) = common.seed {
                parsed.seeds = vec![seed];
            }
            if let Some(w) = workers {
                parsed.workers = w;
            }
            parsed.validate().map_err(|e| usage(format!("{}: {e}", spec.display())))?;
            let rows = run_sweep(&parsed, &cfg).map_err(|e| solver(e.to_string()))?;
            let bytes = match common.format {
                Format::Csv => {
                    let mut buf = Vec::new();
                    rows_to_csv(&rows, &mut buf).map_err(|e| solver(e.to_string()))?;
                    buf
                }
                Format::Json => {
                    let mut t = serde_json::to_vec_pretty(&rows).map_err(|e| solver(e.to_string()))?;
                    t.push(b'\n');
                    t
                }
            };
            emit(&common.out, stdout, &bytes)?;
            if rows.iter().any(|r| r.error.is_some()) {
                return Err(solver("some sweep points failed; see the error column"));
            }
            Ok(())
        }
        Command::FitUtility { data, theta, out } => {
            let points = read_ratings(&data, theta)?;
            let fit: FitResult = fit_log_utility_with(&points, &FitConfig::default()).map_err(|e| usage(e.to_string()))?;
            let mut text = serde_json::to_vec_pretty(&fit).map_err(|e| solver(e.to_string()))?;
            text.push(b'\n');
            emit(&out, stdout, &text)
        }
        Command::Generate {
            n_users,
            shadowing,
            seed,
            out,
        } => {
            let overrides = Overrides {
                shadowing,
                ..Overrides::default()
            };
            let s = gen_scenario(seed, n_users, &overrides).map_err(|e| usage(e.to_string()))?;
            let mut text = scenario_to_json(&s).into_bytes();
            text.push(b'\n');
            emit(&out, stdout, &text)
        }
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                stderr.write_all(text.as_bytes())
            } else {
                stdout.write_all(text.as_bytes())
            };
            return code;
        }
    };
    match dispatch(cli, stdout) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}
