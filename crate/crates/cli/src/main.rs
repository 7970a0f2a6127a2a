use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

mod config;
mod error;
mod fixtures;
mod output;
mod run;
mod validate;

use config::{Format, RunConfig};
use error::CliError;
use output::Artifacts;

/// Default output directory when neither `--out` nor the config names one.
const OUT_ENV: &str = "RAPPI_OUT_DIR";
const DEFAULT_OUT: &str = "rappi-out";

#[derive(Parser)]
#[command(name = "rappi", version, about = "Photon-echo quantum memory simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Config file (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to $RAPPI_OUT_DIR, then ./rappi-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for photon-count sampling and scheduler restarts.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment and write its artifacts.
    Run,
    /// Check a config and report derived quantities and guards without running it.
    Validate,
    /// Write the bundled configurations.
    Fixtures,
}

fn load(cli: &Cli) -> Result<(RunConfig, PathBuf), CliError> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::config("cli", "--config PATH is required"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(f) = cli.format {
        cfg.format = f;
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, base))
}

fn out_dir(cli: &Cli, cfg: Option<&RunConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.output_dir.clone()))
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn cmd_run(cli: &Cli) -> Result<(), CliError> {
    let (cfg, base) = load(cli)?;
    let outcome = run::execute(&cfg, &base)?;
    let mut art = Artifacts::new(&out_dir(cli, Some(&cfg)), cfg.format)?;
    for t in &outcome.tables {
        art.table(t)?;
    }
    for (name, value) in &outcome.documents {
        art.json(name, value)?;
    }
    art.json("results", &outcome.results)?;
    let manifest = json!({
        "tool": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "outputs": art.written,
    });
    art.json("manifest", &manifest)?;
    println!("{}", output::to_json(&json!({ "out": art.dir(), "files": art.written })).trim_end());
    Ok(())
}

fn cmd_validate(cli: &Cli) -> Result<bool, CliError> {
    let (cfg, base) = load(cli)?;
    let report = validate::validate(&cfg, &base);
    match cli.format {
        Some(Format::Json) => print!("{}", output::to_json(&report)),
        _ => print!("{}", report.to_text()),
    }
    Ok(report.pass)
}

fn cmd_fixtures(cli: &Cli) -> Result<(), CliError> {
    let dir = out_dir(cli, None);
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    for (name, text) in fixtures::FIXTURES {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("{}", CliError::config("cli", e.to_string()).to_json());
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Run => cmd_run(&cli).map(|_| true),
        Command::Validate => cmd_validate(&cli),
        Command::Fixtures => cmd_fixtures(&cli).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
