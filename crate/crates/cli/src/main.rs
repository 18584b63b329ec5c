//! `mpx` — command-line front end: parse model files, dispatch simulation
//! and estimation runs, emit machine-readable reports.
//!
//! Reports are deterministic: identical (model, seed, flags) produce
//! byte-identical JSON at any `--parallel` degree, so the parallelism
//! degree and output destination are deliberately not part of the echoed
//! config. Timing and progress go to stderr only.
//!
//! Exit codes: 0 success, 2 validation error, 3 coupling cap exceeded,
//! 1 internal error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use mpx_core::algebra::StateVector;
use mpx_core::engine;
use mpx_core::exec::Exec;
use mpx_core::models::{self, ModelSpec};
use mpx_core::stats;
use mpx_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "mpx", version, about = "Max-plus stochastic recursion toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// Model document (JSON)
    model: PathBuf,
    /// Override the model file's master seed
    #[arg(long)]
    seed: Option<u64>,
    /// Write the report to this path instead of stdout
    #[arg(long)]
    output: Option<PathBuf>,
    /// Report format
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Replica-level parallelism degree (1 = reference execution)
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    parallel: u32,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GammaMethodArg {
    Lln,
    Coupled,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a model; print its dimensions and mixing class
    Validate {
        #[command(flatten)]
        common: Common,
    },
    /// Run one trajectory and export it (CSV columns step,psi,xi,x_1..x_d)
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Steps to simulate
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Initial condition as comma-separated coordinates (default: origin)
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Replica id selecting the operator stream
        #[arg(long, default_value_t = 0)]
        replica: u64,
    },
    /// Estimate the probability of a rank-1 product per depth
    Mlp {
        #[command(flatten)]
        common: Common,
        /// Largest product depth probed
        #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
        horizon: u64,
        /// Monte Carlo trials
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
        trials: u64,
    },
    /// Draw backward couplings of the stationary projective state
    Couple {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = engine::DEFAULT_CAP as u64, value_parser = clap::value_parser!(u64).range(1..))]
        cap: u64,
    },
    /// Estimate the cycle time gamma
    Gamma {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = GammaMethodArg::Lln)]
        method: GammaMethodArg,
        /// Trajectory length for the LLN estimator
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Independent replicas for the LLN estimator
        #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
        replicas: u64,
        /// Samples for the coupled estimator
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = engine::DEFAULT_CAP as u64, value_parser = clap::value_parser!(u64).range(1..))]
        cap: u64,
    },
    /// Estimate the CLT variance sigma via the mean absolute deviation
    Sigma {
        #[command(flatten)]
        common: Common,
        /// Cycle time; estimated by the LLN route when omitted
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 4096, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
        replicas: u64,
    },
    /// Verify the Gaussian limit of the normalized tops
    Clt {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 512, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Samples per initial condition
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
        m: u64,
        /// Alternative initial condition (comma-separated; default: a small
        /// alternating vector)
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = engine::DEFAULT_CAP as u64, value_parser = clap::value_parser!(u64).range(1..))]
        cap: u64,
    },
    /// Structural zero-variance test for finite-support models
    Degeneracy {
        #[command(flatten)]
        common: Common,
        /// Maximum product word length enumerated
        #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(u64).range(1..))]
        depth: u64,
        /// Exact cycle time; when omitted it is estimated by the coupled
        /// route (the probe reports inconclusive if the interval is loose)
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Coupled-estimator samples used when gamma is omitted
        #[arg(long, default_value_t = 10_000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, default_value_t = engine::DEFAULT_CAP as u64, value_parser = clap::value_parser!(u64).range(1..))]
        cap: u64,
    },
    /// Probe boundedness of the centered trajectories
    Tightness {
        #[command(flatten)]
        common: Common,
        #[arg(long, allow_negative_numbers = true)]
        gamma: Option<f64>,
        /// Replicas per grid point
        #[arg(long, default_value_t = 400, value_parser = clap::value_parser!(u64).range(2..))]
        m: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

enum CliError {
    Validation(String),
    CapExceeded(String),
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::CapExceeded(_) => 3,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::CapExceeded(m) | CliError::Internal(m) => {
                write!(f, "{m}")
            }
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::CapExceeded { .. } => CliError::CapExceeded(e.to_string()),
            CoreError::InvalidModel(_)
            | CoreError::InvalidValue(_)
            | CoreError::DimensionMismatch(_)
            | CoreError::InvalidArgument(_)
            | CoreError::Json(_) => CliError::Validation(e.to_string()),
        }
    }
}

struct Loaded {
    spec: ModelSpec,
    model_path: String,
    model_sha256: String,
}

fn load_model(common: &Common) -> Result<Loaded, CliError> {
    let bytes = std::fs::read(&common.model).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", common.model.display()))
    })?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Validation("model file is not UTF-8".into()))?;
    let mut spec = models::parse_model(&text)?;
    if let Some(seed) = common.seed {
        spec.seed = seed;
    }
    let digest = Sha256::digest(&bytes);
    let mut model_sha256 = String::with_capacity(64);
    for b in digest {
        let _ = write!(model_sha256, "{b:02x}");
    }
    Ok(Loaded { spec, model_path: common.model.display().to_string(), model_sha256 })
}

fn exec_policy(common: &Common) -> Exec {
    if common.parallel > 1 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(common.parallel as usize)
            .build_global();
        Exec::Par
    } else {
        Exec::Seq
    }
}

#[derive(Serialize)]
struct Config {
    command: &'static str,
    model_path: String,
    model_sha256: String,
    model_kind: &'static str,
    dim: usize,
    seed: u64,
    params: Map<String, Value>,
}

#[derive(Serialize)]
struct Report<T: Serialize> {
    config: Config,
    result: T,
}

fn emit(common: &Common, text: String) -> Result<(), CliError> {
    match &common.output {
        None => {
            print!("{text}");
            Ok(())
        }
        Some(path) => {
            std::fs::write(path, text)
                .map_err(|e| CliError::Internal(format!("cannot write {}: {e}", path.display())))?;
            eprintln!("report written to {}", path.display());
            Ok(())
        }
    }
}

fn emit_report<T: Serialize>(
    common: &Common,
    loaded: &Loaded,
    command: &'static str,
    params: Map<String, Value>,
    result: T,
    csv: Option<String>,
) -> Result<(), CliError> {
    let text = match common.format {
        Format::Json => {
            let report = Report {
                config: Config {
                    command,
                    model_path: loaded.model_path.clone(),
                    model_sha256: loaded.model_sha256.clone(),
                    model_kind: loaded.spec.kind_name(),
                    dim: loaded.spec.dim,
                    seed: loaded.spec.seed,
                    params,
                },
                result,
            };
            let mut s = serde_json::to_string_pretty(&report)
                .map_err(|e| CliError::Internal(format!("serialization failed: {e}")))?;
            s.push('\n');
            s
        }
        Format::Csv => csv.ok_or_else(|| {
            CliError::Validation(format!("command {command} has no CSV representation"))
        })?,
    };
    emit(common, text)
}

fn parse_x0(text: &str, dim: usize) -> Result<StateVector, CliError> {
    let coords: Result<Vec<f64>, _> = text.split(',').map(|t| t.trim().parse::<f64>()).collect();
    let coords =
        coords.map_err(|e| CliError::Validation(format!("cannot parse x0 {text:?}: {e}")))?;
    if coords.len() != dim {
        return Err(CliError::Validation(format!(
            "x0 has {} coordinates, model dimension is {dim}",
            coords.len()
        )));
    }
    StateVector::new(coords).map_err(|e| CliError::Validation(e.to_string()))
}

/// Small alternating vector used as the default alternative start for the
/// initial-condition insensitivity check.
fn default_alt_x0(dim: usize) -> StateVector {
    let coords = (0..dim)
        .map(|i| 0.3 * if i % 2 == 0 { 1.0 } else { -1.0 } / (i + 1) as f64)
        .collect();
    StateVector::new(coords).expect("finite coordinates")
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Validate { common } => {
            let loaded = load_model(&common)?;
            let mix = models::mixing_class(&loaded.spec);
            let text = format!(
                "dim={}\nkind={}\nseed={}\nmixing_class={}\n",
                loaded.spec.dim,
                loaded.spec.kind_name(),
                loaded.spec.seed,
                mix.description
            );
            emit(&common, text)
        }
        Command::Simulate { common, n, x0, replica } => {
            let loaded = load_model(&common)?;
            let n = n as usize;
            if n > engine::STREAMING_THRESHOLD {
                return Err(CliError::Validation(format!(
                    "simulate records full states and is capped at {} steps",
                    engine::STREAMING_THRESHOLD
                )));
            }
            let x0 = match &x0 {
                Some(text) => parse_x0(text, loaded.spec.dim)?,
                None => StateVector::zeros(loaded.spec.dim),
            };
            let trajectory = engine::run_srs(&loaded.spec, &x0, n, replica);
            let csv = trajectory.to_csv().map_err(|e| CliError::Validation(e.to_string()))?;
            let mut params = Map::new();
            params.insert("n".into(), json!(n));
            params.insert("replica".into(), json!(replica));
            params.insert("x0".into(), json!(x0.coords()));
            let result = json!({
                "final_state": trajectory.final_state.coords(),
                "psi_final": trajectory.tops.last(),
                "tops": trajectory.tops,
                "xi": trajectory.xi,
            });
            emit_report(&common, &loaded, "simulate", params, result, Some(csv))
        }
        Command::Mlp { common, horizon, trials } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let report = engine::mlp_probe(&loaded.spec, horizon as usize, trials as usize, exec);
            let mut csv = String::from("depth,successes,trials,p_hat,wilson_low,wilson_high\n");
            for e in &report.estimates {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{}",
                    e.depth, e.successes, e.trials, e.p_hat, e.wilson_low, e.wilson_high
                );
            }
            let mut params = Map::new();
            params.insert("horizon".into(), json!(horizon));
            params.insert("trials".into(), json!(trials));
            emit_report(&common, &loaded, "mlp", params, report, Some(csv))
        }
        Command::Couple { common, samples, cap } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let spec = &loaded.spec;
            let results: Vec<Result<engine::CouplingResult, CoreError>> =
                mpx_core::exec::map_replicas(samples as usize, exec, |r| {
                    engine::backward_couple(spec, r, cap as usize)
                });
            let mut couplings = Vec::with_capacity(results.len());
            for r in results {
                couplings.push(r?);
            }
            let mean = |f: &dyn Fn(&engine::CouplingResult) -> f64| {
                couplings.iter().map(f).sum::<f64>() / couplings.len() as f64
            };
            let summary = json!({
                "samples": couplings.len(),
                "mean_n_backward": mean(&|c| c.n_backward as f64),
                "max_n_backward": couplings.iter().map(|c| c.n_backward).max(),
                "mean_r_forward": mean(&|c| c.r_forward as f64),
                "max_r_forward": couplings.iter().map(|c| c.r_forward).max(),
                "mean_z": mean(&|c| c.z),
            });
            let mut csv = String::from("index,n_backward,r_forward,z\n");
            for (i, c) in couplings.iter().enumerate() {
                let _ = writeln!(csv, "{i},{},{},{}", c.n_backward, c.r_forward, c.z);
            }
            let mut params = Map::new();
            params.insert("samples".into(), json!(samples));
            params.insert("cap".into(), json!(cap));
            let result = json!({ "summary": summary, "couplings": couplings });
            emit_report(&common, &loaded, "couple", params, result, Some(csv))
        }
        Command::Gamma { common, method, n, replicas, samples, cap } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let model_name = loaded.model_path.clone();
            let mut params = Map::new();
            params.insert("method".into(), json!(match method {
                GammaMethodArg::Lln => "lln",
                GammaMethodArg::Coupled => "coupled",
                GammaMethodArg::Both => "both",
            }));
            let mut csv = String::from(stats::CSV_HEADER);
            csv.push('\n');
            let lln = match method {
                GammaMethodArg::Lln | GammaMethodArg::Both => {
                    params.insert("n".into(), json!(n));
                    params.insert("replicas".into(), json!(replicas));
                    let report =
                        stats::estimate_gamma_lln(&loaded.spec, n as usize, replicas as usize, exec);
                    csv.push_str(&report.csv_rows(&model_name));
                    Some(report)
                }
                GammaMethodArg::Coupled => None,
            };
            let coupled = match method {
                GammaMethodArg::Coupled | GammaMethodArg::Both => {
                    params.insert("samples".into(), json!(samples));
                    params.insert("cap".into(), json!(cap));
                    let est = stats::estimate_gamma_coupled(
                        &loaded.spec,
                        samples as usize,
                        cap as usize,
                        exec,
                    )?;
                    csv.push_str(&est.csv_rows(&model_name));
                    Some(est)
                }
                GammaMethodArg::Lln => None,
            };
            let result = json!({ "lln": lln, "coupled": coupled });
            emit_report(&common, &loaded, "gamma", params, result, Some(csv))
        }
        Command::Sigma { common, gamma, n, replicas } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let (gamma_used, gamma_source) = match gamma {
                Some(g) => (g, "supplied"),
                None => {
                    let n_gamma = (2 * n as usize).max(4096);
                    let lln = stats::estimate_gamma_lln(&loaded.spec, n_gamma, 200, exec);
                    (lln.top.gamma_hat, "lln")
                }
            };
            let est = stats::estimate_sigma_mad(
                &loaded.spec,
                gamma_used,
                n as usize,
                replicas as usize,
                exec,
            );
            let csv = format!("{}\n{}", stats::CSV_HEADER, est.csv_rows(&loaded.model_path));
            let mut params = Map::new();
            params.insert("n".into(), json!(n));
            params.insert("replicas".into(), json!(replicas));
            params.insert("gamma".into(), json!(gamma_used));
            params.insert("gamma_source".into(), json!(gamma_source));
            emit_report(&common, &loaded, "sigma", params, est, Some(csv))
        }
        Command::Clt { common, n, m, x0, gamma, cap } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let x0_alt = match &x0 {
                Some(text) => parse_x0(text, loaded.spec.dim)?,
                None => default_alt_x0(loaded.spec.dim),
            };
            let report = stats::clt_test(
                &loaded.spec,
                n as usize,
                m as usize,
                &x0_alt,
                gamma,
                cap as usize,
                exec,
            )?;
            let csv = format!("{}\n{}", stats::CSV_HEADER, report.csv_rows(&loaded.model_path));
            let mut params = Map::new();
            params.insert("n".into(), json!(n));
            params.insert("m".into(), json!(m));
            params.insert("x0_alt".into(), json!(x0_alt.coords()));
            params.insert("cap".into(), json!(cap));
            if let Some(g) = gamma {
                params.insert("gamma".into(), json!(g));
            }
            emit_report(&common, &loaded, "clt", params, report, Some(csv))
        }
        Command::Degeneracy { common, depth, gamma, samples, cap } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let (gamma_used, half_width, gamma_source) = match gamma {
                Some(g) => (g, 0.0, "supplied"),
                None => {
                    let est = stats::estimate_gamma_coupled(
                        &loaded.spec,
                        samples as usize,
                        cap as usize,
                        exec,
                    )?;
                    (est.gamma_hat, 1.96 * est.stderr, "coupled")
                }
            };
            let report =
                stats::degeneracy_probe(&loaded.spec, depth as usize, gamma_used, half_width)?;
            let csv = format!("{}\n{}", stats::CSV_HEADER, report.csv_rows(&loaded.model_path));
            let mut params = Map::new();
            params.insert("depth".into(), json!(depth));
            params.insert("gamma".into(), json!(gamma_used));
            params.insert("gamma_ci_halfwidth".into(), json!(half_width));
            params.insert("gamma_source".into(), json!(gamma_source));
            emit_report(&common, &loaded, "degeneracy", params, report, Some(csv))
        }
        Command::Tightness { common, gamma, m } => {
            let loaded = load_model(&common)?;
            let exec = exec_policy(&common);
            let (gamma_used, gamma_source) = match gamma {
                Some(g) => (g, "supplied"),
                None => {
                    let lln = stats::estimate_gamma_lln(&loaded.spec, 8192, 200, exec);
                    (lln.top.gamma_hat, "lln")
                }
            };
            let grid = stats::default_tightness_grid();
            let report =
                stats::tightness_probe(&loaded.spec, gamma_used, &grid, m as usize, exec);
            let csv = format!("{}\n{}", stats::CSV_HEADER, report.csv_rows(&loaded.model_path));
            let mut params = Map::new();
            params.insert("m".into(), json!(m));
            params.insert("gamma".into(), json!(gamma_used));
            params.insert("gamma_source".into(), json!(gamma_source));
            params.insert("grid".into(), json!(grid));
            emit_report(&common, &loaded, "tightness", params, report, Some(csv))
        }
    }
}
