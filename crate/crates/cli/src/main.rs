use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use relaysim::backend::http;
use relaysim::backend::{BackendConfig, HealthAuthority};
use relaysim::scenario::{self, emit_report, ReportFormat, ScenarioConfig};

#[derive(Parser)]
#[command(name = "relaysim", version, about = "Exposure-notification relay attack simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one or more scenarios (file paths or bundled names).
    Run {
        #[arg(required = true)]
        configs: Vec<String>,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Write the report here instead of stdout. With several
        /// scenarios this must be a directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List bundled scenarios.
    ListScenarios,
    /// Serve the health-authority backend over HTTP.
    ServeBackend {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = relaysim::backend::DEFAULT_OTP_TTL_S)]
        otp_ttl: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load(spec: &str) -> Result<ScenarioConfig> {
    if Path::new(spec).exists() {
        return Ok(scenario::load_config(spec)?);
    }
    match scenario::bundled(spec) {
        Some(cfg) => Ok(cfg?),
        None => bail!("{spec:?} is neither a file nor a bundled scenario (see list-scenarios)"),
    }
}

fn run(configs: &[String], seed: Option<u64>, format: ReportFormat, out: Option<&Path>) -> Result<()> {
    let mut cfgs = configs
        .iter()
        .map(|c| load(c).with_context(|| format!("loading {c}")))
        .collect::<Result<Vec<_>>>()?;
    if let Some(seed) = seed {
        for c in &mut cfgs {
            c.seed = seed;
        }
    }

    // independent runs share nothing
    let outputs: Vec<Vec<u8>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfgs
            .iter()
            .map(|c| s.spawn(move || scenario::run(c).map(|r| emit_report(&r, format))))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("scenario thread panicked"))
            .collect::<Result<Vec<_>, _>>()
    })?;

    match out {
        None => {
            let mut stdout = std::io::stdout().lock();
            for bytes in &outputs {
                stdout.write_all(bytes)?;
            }
        }
        Some(path) if cfgs.len() == 1 => {
            std::fs::write(path, &outputs[0]).with_context(|| format!("writing {}", path.display()))?;
        }
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let ext = match format {
                ReportFormat::Json => "json",
                ReportFormat::Table => "txt",
            };
            for (cfg, bytes) in cfgs.iter().zip(&outputs) {
                let path = dir.join(format!("{}.{ext}", cfg.name));
                std::fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
            }
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            configs,
            seed,
            format,
            out,
        } => run(&configs, seed, format, out.as_deref()),
        Command::ListScenarios => {
            for (name, json) in scenario::BUNDLED {
                let cfg = scenario::parse_config(json)?;
                println!("{name:<16} {}", cfg.description);
            }
            Ok(())
        }
        Command::ServeBackend {
            port,
            host,
            otp_ttl,
            seed,
        } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            let authority = HealthAuthority::new(BackendConfig {
                otp_ttl_s: otp_ttl,
                seed,
            });
            let server = http::spawn(addr, authority, http::system_clock())?;
            eprintln!("backend listening on {}", server.base_url());
            server.join()?;
            Ok(())
        }
    }
}
