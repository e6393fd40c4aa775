use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nicrpc::idl::{generate_stubs, parse_idl, GenOptions};
use nicrpc::ifmodel::{sweep, sweep_csv, Arrivals, InterfaceModelParams, Method};
use nicrpc_bench::config::{BenchConfig, Dataset, FlightMode};
use nicrpc_bench::report::trace_csv;
use nicrpc_bench::{echo, flight, kvs, BenchError};

#[derive(Parser)]
#[command(name = "nicrpc", version, about = "RPC runtime benchmarks and tools")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// TOML file with [echo], [kvs], [flight] and [ifmodel] sections.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write results as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Echo round trips between two tenants.
    EchoBench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        clients: Option<usize>,
        /// Offered requests per second; 0 runs closed loop.
        #[arg(long)]
        rate: Option<f64>,
        #[arg(long)]
        batch: Option<usize>,
    },
    /// Partitioned key-value store under Zipf load.
    KvsBench {
        #[command(flatten)]
        common: Common,
        /// Fraction of gets, e.g. 0.5 or 0.95.
        #[arg(long)]
        get_ratio: Option<f64>,
        #[arg(long, value_parser = parse_dataset)]
        dataset: Option<Dataset>,
        #[arg(long)]
        partitions: Option<usize>,
    },
    /// Eight-tier flight registration application.
    FlightBench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        threading: Option<FlightMode>,
        #[arg(long)]
        clients: Option<usize>,
        /// Write the raw request traces as CSV.
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Interface model latency/throughput curve.
    IfmodelSweep {
        #[command(flatten)]
        common: Common,
        /// mmio, doorbell, doorbell-batch or poll.
        #[arg(long)]
        method: Option<String>,
        /// Batch size, or `auto` for load-driven batching (poll only).
        #[arg(long)]
        batch: Option<String>,
        /// Comma-separated offered loads in Mrps.
        #[arg(long, value_delimiter = ',')]
        load_grid: Option<Vec<f64>>,
    },
    /// Generate Rust stubs from an interface definition.
    IdlGen {
        #[arg(long = "in")]
        input: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        /// Runtime crate path used by the generated code.
        #[arg(long, default_value = "nicrpc")]
        runtime: String,
    },
}

fn parse_dataset(s: &str) -> Result<Dataset, String> {
    match s {
        "tiny" => Ok(Dataset::Tiny),
        "small" => Ok(Dataset::Small),
        _ => Err(format!("unknown dataset {s:?} (tiny|small)")),
    }
}

enum Failure {
    /// Bad configuration or input.
    Config(String),
    /// The run finished but broke an SLA or consistency check.
    Violation(String),
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Config(_) | BenchError::ConfigFile(_) => Failure::Config(e.to_string()),
            other => Failure::Violation(other.to_string()),
        }
    }
}

fn load(common: &Common) -> Result<BenchConfig, Failure> {
    let mut cfg = match &common.config {
        Some(p) => BenchConfig::load(p).map_err(|e| Failure::Config(e.to_string()))?,
        None => BenchConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(d) = common.duration {
        cfg.echo.duration_s = d;
        cfg.kvs.duration_s = d;
        cfg.flight.duration_s = d;
    }
    Ok(cfg)
}

fn validated(cfg: BenchConfig) -> Result<BenchConfig, Failure> {
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn write_out(path: Option<&Path>, text: &str) -> Result<(), Failure> {
    if let Some(p) = path {
        std::fs::write(p, text).map_err(|e| Failure::Config(format!("cannot write {}: {e}", p.display())))?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.cmd {
        Cmd::EchoBench {
            common,
            clients,
            rate,
            batch,
        } => {
            let mut cfg = load(&common)?;
            cfg.echo.clients = clients.unwrap_or(cfg.echo.clients);
            cfg.echo.rate_rps = rate.unwrap_or(cfg.echo.rate_rps);
            cfg.echo.batch = batch.unwrap_or(cfg.echo.batch);
            let cfg = validated(cfg)?;
            let r = echo::run(&cfg.echo)?;
            println!("{}", r.summary());
            write_out(common.out.as_deref(), &r.csv_document())
        }
        Cmd::KvsBench {
            common,
            get_ratio,
            dataset,
            partitions,
        } => {
            let mut cfg = load(&common)?;
            cfg.kvs.get_ratio = get_ratio.unwrap_or(cfg.kvs.get_ratio);
            cfg.kvs.dataset = dataset.unwrap_or(cfg.kvs.dataset);
            cfg.kvs.partitions = partitions.unwrap_or(cfg.kvs.partitions);
            let cfg = validated(cfg)?;
            let r = kvs::run(&cfg.kvs, cfg.seed)?;
            println!("{}", r.run.summary());
            println!(
                "  gets {}  sets {}  violations {}  affinity {:.4}%  final window {}",
                r.gets,
                r.sets,
                r.violations.len(),
                r.affinity() * 100.0,
                r.final_window
            );
            write_out(common.out.as_deref(), &r.run.csv_document())?;
            if !r.violations.is_empty() || r.affinity_mismatches > 0 {
                return Err(Failure::Violation(format!(
                    "{} consistency violations, {} affinity mismatches",
                    r.violations.len(),
                    r.affinity_mismatches
                )));
            }
            if r.run.drop_rate() >= cfg.kvs.drop_budget {
                return Err(Failure::Violation(format!(
                    "drop rate {:.4} over budget {}",
                    r.run.drop_rate(),
                    cfg.kvs.drop_budget
                )));
            }
            Ok(())
        }
        Cmd::FlightBench {
            common,
            threading,
            clients,
            trace_out,
        } => {
            let mut cfg = load(&common)?;
            cfg.flight.mode = threading.unwrap_or(cfg.flight.mode);
            cfg.flight.clients = clients.unwrap_or(cfg.flight.clients);
            let cfg = validated(cfg)?;
            let r = flight::run(&cfg.flight)?;
            println!("{}", r.run.summary());
            println!(
                "  causality {}/{} ok  staff reads {}  server queue drops {}",
                r.causality_checked - r.causality_violations,
                r.causality_checked,
                r.staff_reads,
                r.server_queue_drops
            );
            write_out(common.out.as_deref(), &r.run.csv_document())?;
            write_out(trace_out.as_deref(), &trace_csv(&r.traces))?;
            if r.causality_violations > 0 {
                return Err(Failure::Violation(format!(
                    "{} check-ins broke causality",
                    r.causality_violations
                )));
            }
            Ok(())
        }
        Cmd::IfmodelSweep {
            common,
            method,
            batch,
            load_grid,
        } => {
            let mut cfg = load(&common)?;
            if let Some(m) = method {
                cfg.ifmodel.method = m;
            }
            if let Some(g) = load_grid {
                cfg.ifmodel.load_grid = g;
            }
            let auto = batch.as_deref() == Some("auto");
            if let Some(b) = batch.filter(|b| b != "auto") {
                cfg.ifmodel.batch = b
                    .parse()
                    .map_err(|_| Failure::Config(format!("--batch: expected a number or `auto`, got {b:?}")))?;
            }
            let cfg = validated(cfg)?;
            let method: Method = cfg.ifmodel.method.parse().map_err(|e: nicrpc::ifmodel::ModelError| Failure::Config(e.to_string()))?;
            let params = InterfaceModelParams::default().with_batch(cfg.ifmodel.batch);
            let kind = if cfg.ifmodel.poisson { Arrivals::Poisson } else { Arrivals::Paced };
            let rows = sweep(method, &params, &cfg.ifmodel.load_grid, cfg.ifmodel.requests, cfg.seed, kind, auto);
            let csv = sweep_csv(&rows);
            match common.out {
                Some(p) => write_out(Some(&p), &csv),
                None => {
                    print!("{csv}");
                    Ok(())
                }
            }
        }
        Cmd::IdlGen { input, out, runtime } => {
            let text = std::fs::read_to_string(&input)
                .map_err(|e| Failure::Config(format!("cannot read {}: {e}", input.display())))?;
            let spec = parse_idl(&text).map_err(|e| Failure::Config(format!("{}:{e}", input.display())))?;
            let opts = GenOptions {
                source_name: input.file_name().map_or_else(|| "input".into(), |n| n.to_string_lossy().into_owned()),
                file_stem: input.file_stem().map_or_else(|| "stubs".into(), |n| n.to_string_lossy().into_owned()),
                runtime,
            };
            std::fs::create_dir_all(&out)
                .map_err(|e| Failure::Config(format!("cannot create {}: {e}", out.display())))?;
            for f in generate_stubs(&spec, &opts) {
                let path = out.join(&f.path);
                write_out(Some(&path), &f.contents)?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Violation(m)) => {
            eprintln!("violation: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
