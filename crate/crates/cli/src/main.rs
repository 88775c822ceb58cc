//! `ebf`: compose end-to-end service pipelines from component models, drive
//! them with configurable load in simulation or over real TCP, and analyze
//! end-to-end vs. per-component tail latency against closed-form queueing
//! predictions.
//!
//! Exit codes: 0 success, 1 config error, 2 runtime error, 3 threshold
//! violation (for CI gates). `EBF_SEED` overrides the config seed;
//! `EBF_LOG_LEVEL` sets the log filter.

use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ebf_netbench::{ServiceRuntime, WorkMode, spawn_service};
use ebf_trainer::{EvalParams, choose_interval, evaluate_policy};

use ebf_cli::config::{self, Mode, ParsedConfig, parse_config, parse_duration};
use ebf_cli::kernels_cli;
use ebf_cli::orchestrate::{AppError, SimulateOptions, run_drive, run_simulate};
use ebf_cli::report::{
    self, Report, TimingMeta, pretty_print, read_report, write_breakdown_csv, write_report,
};

#[derive(Parser)]
#[command(
    name = "ebf",
    version,
    about = "End-to-end benchmark framework: compose service pipelines, drive them with load, analyze tail latency"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the configured topology in the deterministic simulator.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Write the JSON report here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write every trace as newline-delimited JSON.
        #[arg(long)]
        traces: Option<PathBuf>,
        /// Export the open-loop arrival stream (request_id,scheduled_time_ns,class).
        #[arg(long)]
        arrivals: Option<PathBuf>,
        /// Print the report to stdout as well.
        #[arg(long)]
        print: bool,
    },
    /// Run the configured rate sweep in the simulator.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run sweep points concurrently (each run is internally isolated).
        #[arg(long)]
        parallel: bool,
        #[arg(long)]
        print: bool,
    },
    /// Closed-form M/M/1 latency predictions.
    Predict {
        /// Arrival rate(s) per second; repeat for several settings.
        #[arg(long = "lambda", required = true)]
        lambdas: Vec<f64>,
        /// Service rate per second.
        #[arg(long)]
        mu: f64,
        /// Percentile(s) to predict.
        #[arg(long = "p", default_values_t = [50.0, 90.0, 99.0])]
        percentiles: Vec<f64>,
        /// Also print the Erlang-C M/M/k mean for this many servers.
        #[arg(long)]
        servers: Option<u32>,
    },
    /// Serve one component of a network-mode topology.
    Serve {
        /// Component id from the config.
        #[arg(long)]
        component: String,
        #[arg(long)]
        config: PathBuf,
        /// Listen address; port 0 picks an ephemeral port (printed on stdout).
        #[arg(long)]
        listen: String,
    },
    /// Drive load against a served topology and collect traces.
    Drive {
        /// Address of the entry component.
        #[arg(long)]
        entry: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[arg(long)]
        print: bool,
    },
    /// Evaluate a model-update policy: interval vs. overhead vs. accuracy.
    Tradeoff {
        /// Policy file (TOML, same schema as the [trainer] config section).
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Micro benchmarks for the fourteen units of computation.
    Kernels {
        #[command(subcommand)]
        cmd: KernelsCmd,
    },
    /// Pretty-print a JSON report (optionally exporting the breakdown CSV).
    Report {
        file: PathBuf,
        /// Write the breakdown table as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum KernelsCmd {
    /// Run one kernel and report timing plus a deterministic checksum.
    Run {
        /// Kernel name (see `kernels list`).
        #[arg(long)]
        name: String,
        /// Shape: `N`, `HxW`, or `HxW:KHxKW[:STRIDE]` for windowed kernels.
        #[arg(long)]
        shape: String,
        #[arg(long, default_value_t = 30)]
        reps: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dropout rate (dropout kernel only).
        #[arg(long, default_value_t = 0.5)]
        rate: f32,
        /// Append the result to this JSON report (created if missing).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the fourteen kernels.
    List,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("EBF_LOG_LEVEL", "warn"))
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("ebf: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_config(path: &Path) -> Result<ParsedConfig, AppError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", path.display())))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(parse_config(&text, base)?)
}

fn emit(
    report: &mut Report,
    started: TimingMeta,
    out: Option<&PathBuf>,
    print: bool,
) -> Result<(), AppError> {
    report.timing = TimingMeta {
        started_unix_ms: started.started_unix_ms,
        wall_ms: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or(0)
            .saturating_sub(started.started_unix_ms),
    };
    if let Some(path) = out {
        write_report(report, path)?;
        println!("report written to {}", path.display());
    }
    if print || out.is_none() {
        let mut stdout = std::io::stdout().lock();
        pretty_print(report, &mut stdout)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), AppError> {
    match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            traces,
            arrivals,
            print,
        } => {
            let started = TimingMeta::started_now();
            let cfg = load_config(&config)?;
            let opts = SimulateOptions {
                traces_out: traces.as_deref(),
                arrivals_out: arrivals.as_deref(),
                parallel_sweep: false,
            };
            let mut report = run_simulate(&cfg, &opts)?;
            emit(&mut report, started, out.as_ref(), print)
        }
        Cmd::Sweep {
            config,
            out,
            parallel,
            print,
        } => {
            let started = TimingMeta::started_now();
            let cfg = load_config(&config)?;
            if cfg.sweep.is_empty() {
                return Err(AppError::Config(
                    "sweep needs a [sweep] section with rates".into(),
                ));
            }
            let opts = SimulateOptions {
                traces_out: None,
                arrivals_out: None,
                parallel_sweep: parallel,
            };
            let mut report = run_simulate(&cfg, &opts)?;
            emit(&mut report, started, out.as_ref(), print)
        }
        Cmd::Predict {
            lambdas,
            mu,
            percentiles,
            servers,
        } => predict_cmd(&lambdas, mu, &percentiles, servers),
        Cmd::Serve {
            component,
            config,
            listen,
        } => serve_cmd(&component, &config, &listen),
        Cmd::Drive {
            entry,
            config,
            out,
            traces,
            print,
        } => {
            let started = TimingMeta::started_now();
            let cfg = load_config(&config)?;
            let entry: SocketAddr = entry
                .parse()
                .map_err(|e| AppError::Config(format!("bad entry address '{entry}': {e}")))?;
            let mut report = run_drive(&cfg, entry, traces.as_ref())?;
            emit(&mut report, started, Some(&out), print)
        }
        Cmd::Tradeoff { policy, out } => tradeoff_cmd(&policy, out.as_ref()),
        Cmd::Kernels { cmd } => kernels_cmd(cmd),
        Cmd::Report { file, csv } => {
            let report = read_report(&file)?;
            let mut stdout = std::io::stdout().lock();
            pretty_print(&report, &mut stdout)?;
            if let Some(path) = csv {
                let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
                write_breakdown_csv(&report, &mut f)?;
                f.flush()?;
                println!("breakdown CSV written to {}", path.display());
            }
            Ok(())
        }
    }
}

fn predict_cmd(
    lambdas: &[f64],
    mu: f64,
    percentiles: &[f64],
    servers: Option<u32>,
) -> Result<(), AppError> {
    println!(
        "{:>10} {:>10} {:>8} {:>14} {:>14}{}",
        "lambda/s",
        "mu/s",
        "p",
        "T_mean ms",
        "T_p ms",
        if servers.is_some() {
            format!(" {:>16}", "M/M/k mean ms")
        } else {
            String::new()
        }
    );
    for &lambda in lambdas {
        for &p in percentiles {
            let mean = ebf_queuing::mm1_mean_secs(lambda, mu)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let t_p = ebf_queuing::mm1_percentile_secs(lambda, mu, p)
                .map_err(|e| AppError::Config(e.to_string()))?;
            let mmk = match servers {
                Some(k) => format!(
                    " {:>16.1}",
                    ebf_queuing::mmk_mean_secs(lambda, mu, k)
                        .map_err(|e| AppError::Config(e.to_string()))?
                        * 1e3
                ),
                None => String::new(),
            };
            println!(
                "{:>10.2} {:>10.2} {:>8.1} {:>14.1} {:>14.1}{mmk}",
                lambda,
                mu,
                p,
                mean * 1e3,
                t_p * 1e3
            );
        }
    }
    Ok(())
}

fn serve_cmd(component: &str, config: &Path, listen: &str) -> Result<(), AppError> {
    let cfg = load_config(config)?;
    if cfg.mode != Mode::Network {
        return Err(AppError::Config(
            "serve needs a config with mode = \"network\"".into(),
        ));
    }
    let Some(topology) = &cfg.topology else {
        return Err(AppError::Config("serve needs a [topology] section".into()));
    };
    let Some(network) = &cfg.network else {
        return Err(AppError::Config("serve needs a [network] section".into()));
    };
    let spec = topology
        .component(component)
        .ok_or_else(|| AppError::Config(format!("unknown component '{component}'")))?
        .clone();
    let listen: SocketAddr = listen
        .parse()
        .map_err(|e| AppError::Config(format!("bad listen address '{listen}': {e}")))?;
    let work = match network.component_kernels.get(component) {
        Some(kernel) => WorkMode::Kernel(kernel.clone()),
        None => network.work.clone(),
    };
    let is_entry = component == topology.entry();
    let handle = spawn_service(ServiceRuntime {
        component: spec,
        listen,
        topology: is_entry.then(|| topology.clone()),
        addresses: network.addresses.clone(),
        work,
        rpc_timeout: network.request_timeout,
        seed: cfg.seed,
    })?;
    // Parseable readiness line for scripts and tests.
    println!("listening {} component={component}", handle.local_addr());
    std::io::stdout().flush().ok();
    loop {
        std::thread::park();
    }
}

/// Standalone policy file: the same schema as the `[trainer]` config section.
fn tradeoff_cmd(policy_path: &Path, out: Option<&PathBuf>) -> Result<(), AppError> {
    let started = TimingMeta::started_now();
    let text = std::fs::read_to_string(policy_path)
        .map_err(|e| AppError::Config(format!("cannot read {}: {e}", policy_path.display())))?;
    let de = toml::Deserializer::parse(&text)
        .map_err(|e| AppError::Config(format!("policy syntax: {}", e.message())))?;
    let cfg: config::TrainerCfg = serde_path_to_error::deserialize(de).map_err(|e| {
        AppError::Config(format!("policy at {}: {}", e.path(), e.inner().message()))
    })?;

    let mode = match cfg.mode.as_str() {
        "batch" => ebf_trainer::UpdateMode::Batch,
        "streaming" => ebf_trainer::UpdateMode::Streaming,
        other => return Err(AppError::Config(format!("unknown trainer mode '{other}'"))),
    };
    let policy = ebf_trainer::UpdatePolicy {
        mode,
        interval_ns: parse_duration(&cfg.interval, "interval")?,
        curve: cfg.curve.iter().map(|[f, g]| (*f, *g)).collect(),
        base_accuracy: cfg.base_accuracy,
    };
    policy
        .validate()
        .map_err(|e| AppError::Config(e.to_string()))?;
    if cfg.candidates.is_empty() {
        return Err(AppError::Config(
            "policy file needs candidate intervals".into(),
        ));
    }
    let candidates = cfg
        .candidates
        .iter()
        .map(|d| parse_duration(d, "candidates"))
        .collect::<Result<Vec<_>, _>>()?;
    let params = EvalParams {
        horizon_ns: match &cfg.horizon {
            Some(h) => parse_duration(h, "horizon")?,
            None => 24 * 3600 * 1_000_000_000,
        },
        per_update_cost_ns: parse_duration(&cfg.per_update_cost, "per_update_cost")?,
        objective_weight: cfg.objective_weight.unwrap_or(1.0),
        max_interval_ns: cfg
            .max_interval
            .as_ref()
            .map(|d| parse_duration(d, "max_interval"))
            .transpose()?,
    };
    let records = evaluate_policy(&policy, &candidates, &params)
        .map_err(|e| AppError::Config(e.to_string()))?;
    let chosen = choose_interval(&records).ok();

    let mut report = Report::new("tradeoff".to_string(), "tradeoff", 0);
    report.trainer = Some(report::TrainerReport {
        chosen_interval_ns: chosen,
        derived_accuracy: chosen.and_then(|c| {
            records
                .iter()
                .find(|r| r.interval_ns == c)
                .map(|r| (policy.base_accuracy + r.accuracy_gain).min(1.0))
        }),
        records,
    });
    emit(&mut report, started, out, true)
}

fn kernels_cmd(cmd: KernelsCmd) -> Result<(), AppError> {
    match cmd {
        KernelsCmd::List => {
            for k in ebf_kernels::ALL_KERNELS {
                println!("{}", k.name());
            }
            Ok(())
        }
        KernelsCmd::Run {
            name,
            shape,
            reps,
            seed,
            rate,
            out,
        } => {
            let mut spec = kernels_cli::parse_kernel_spec(&name, &shape, reps, seed)
                .map_err(|e| AppError::Config(e.to_string()))?;
            spec.rate = rate;
            spec.validate()
                .map_err(|e| AppError::Config(e.to_string()))?;
            let result =
                ebf_kernels::run_kernel(&spec).map_err(|e| AppError::Runtime(e.to_string()))?;
            println!(
                "{}: dims {:?} reps {} checksum {} min {:.2} us mean {:.2} us p99 {:.2} us ({} flops, {} bytes)",
                result.name,
                result.dims,
                result.reps,
                result.checksum,
                result.timing.min_ns as f64 / 1e3,
                result.timing.mean_ns / 1e3,
                result.timing.p99_ns as f64 / 1e3,
                result.flops,
                result.bytes_touched,
            );
            if let Some(path) = out {
                // Append to an existing report or start a fresh one.
                let mut report = if path.exists() {
                    read_report(&path)?
                } else {
                    Report::new("kernels".to_string(), "kernels", seed)
                };
                report.kernels.push(result);
                write_report(&report, &path)?;
                println!("appended to {}", path.display());
            }
            Ok(())
        }
    }
}
