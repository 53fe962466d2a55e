//! `selnorm`: run the selective-inference experiments from JSON configs.

mod config;
mod experiments;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::{ExperimentConfig, Invalid};
use experiments::RunError;

/// Environment variable that overrides the output directory of a config.
const OUT_ENV: &str = "SELNORM_OUT";

#[derive(Parser)]
#[command(name = "selnorm", version, about = "Selective inference experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a JSON config.
    Run {
        config: PathBuf,
        /// Worker threads for replications; results do not depend on it.
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory (overrides SELNORM_OUT and the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run a coverage table at the full replication count.
        #[arg(long)]
        full_table: bool,
    },
    /// List the experiments and what each reproduces.
    List,
}

const EXPERIMENTS: [(&str, &str, &str); 8] = [
    ("expansion", "Figures 1-2", "log selection-probability ratio r_n against its Gaussian limit r*_n over h"),
    ("scores_tv", "-", "total variation between exact and limiting laws of the normalized score"),
    ("posterior", "Figure 3", "exact and limiting posterior densities of h for one observed sample mean"),
    ("winners_posterior", "Figure 4", "exact and limiting winners posteriors with 90% credible intervals"),
    ("pit", "Figure 5", "PIT of the true rate under exact and limiting selective posteriors"),
    ("undercoverage", "-", "coverage of flat-prior credible bounds and the matching transform"),
    ("coverage_table", "Table 1", "limit-posterior content of exact 90% credible intervals"),
    ("lemma1", "-", "selection-probability ratios at the MLE against the truth"),
];

fn list() {
    for (name, target, about) in EXPERIMENTS {
        println!("{name:<18} → {target:<12} {about}");
    }
}

fn error_record(kind: &str, message: &str, code: u8) -> Value {
    json!({ "kind": kind, "message": message, "exit_code": code })
}

fn fail_validation(e: &Invalid) -> ExitCode {
    eprintln!("{}", error_record("validation", &e.0, 2));
    ExitCode::from(2)
}

fn output_dir(cli_out: Option<PathBuf>, config: &ExperimentConfig) -> PathBuf {
    cli_out
        .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .or_else(|| config.output_dir().cloned())
        .unwrap_or_else(|| Path::new("out").join(config.name()))
}

fn write_all(dir: &Path, files: &[(String, Vec<u8>)]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in files {
        output::write_atomic(dir, name, bytes)?;
    }
    Ok(())
}

fn pretty(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(v).expect("JSON values serialize");
    s.push(b'\n');
    s
}

fn run(config_path: &Path, jobs: Option<usize>, out: Option<PathBuf>, full_table: bool) -> ExitCode {
    let text = match std::fs::read_to_string(config_path) {
        Ok(t) => t,
        Err(e) => return fail_validation(&Invalid(format!("cannot read {}: {e}", config_path.display()))),
    };
    let mut config = match ExperimentConfig::parse(&text) {
        Ok(c) => c,
        Err(e) => return fail_validation(&e),
    };
    if full_table {
        if let Err(e) = config.set_full_table() {
            return fail_validation(&e);
        }
    }
    let jobs = match jobs {
        Some(0) => return fail_validation(&Invalid("--jobs must be at least 1".into())),
        Some(j) => j,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let dir = output_dir(out, &config);
    let resolved = serde_json::to_value(&config).expect("configs serialize");

    let start = Instant::now();
    let result = experiments::run(&config, jobs);
    let wall = start.elapsed().as_secs_f64();

    let mut summary = json!({
        "artifact": "selnorm",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": config.name(),
        "seed": config.seed(),
        "jobs": jobs,
        "wall_time_secs": wall,
        "config": resolved,
        "headline": Value::Null,
        "files": [],
        "error": Value::Null,
    });
    let mut files = vec![("config.resolved.json".to_string(), pretty(&resolved))];
    let code = match result {
        Ok(outcome) => {
            for table in &outcome.tables {
                match table.to_bytes() {
                    Ok(bytes) => files.push((table.file.clone(), bytes)),
                    Err(e) => {
                        eprintln!("{}", error_record("io", &e.to_string(), 1));
                        return ExitCode::FAILURE;
                    }
                }
            }
            summary["headline"] = outcome.headline;
            summary["files"] = json!(outcome.tables.iter().map(|t| t.file.as_str()).collect::<Vec<_>>());
            0
        }
        Err(e) => {
            if let RunError::Invalid(inner) = &e {
                return fail_validation(inner);
            }
            let code = e.exit_code();
            let record = error_record(e.kind(), &e.message(), code);
            eprintln!("{record}");
            summary["error"] = record;
            code
        }
    };
    files.push(("summary.json".to_string(), pretty(&summary)));
    if let Err(e) = write_all(&dir, &files) {
        eprintln!("{}", error_record("io", &format!("{}: {e}", dir.display()), 1));
        return ExitCode::FAILURE;
    }
    if code == 0 {
        println!("{} finished in {wall:.1}s; outputs in {}", config.name(), dir.display());
    }
    ExitCode::from(code)
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::List => {
            list();
            ExitCode::SUCCESS
        }
        Command::Run {
            config,
            jobs,
            out,
            full_table,
        } => run(&config, jobs, out, full_table),
    }
}
