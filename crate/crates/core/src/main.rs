use std::io::{self, Write};
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Parser, Subcommand};

use v6iot::addr::Addr128;
use v6iot::harness::serve::{serve_plant, ServeOptions};
use v6iot::harness::{build_universe, UniverseSpec};
use v6iot::pipeline::{emit_report, plan_probes, run_pipeline, CampaignConfig, ConfigError, Stage};

#[derive(Parser)]
#[command(name = "v6iot", version, about = "Find and assess IoT services over IPv6")]
struct Cli {
    /// Campaign config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the campaign seed.
    #[arg(long, global = true)]
    rng_seed: Option<u64>,
    /// Print the probe plan as JSON lines instead of probing.
    #[arg(long, global = true)]
    dry_run: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and merge seed sources.
    Seeds,
    /// Run the passive generators.
    Generate,
    /// Dedup, blocklist and probe seeds and scanlists, active generators included.
    Scan,
    /// Classify probe outcomes into deployments and the funnel.
    Validate,
    /// Detect aliased deployments.
    Alias,
    /// Compute provenance metrics and the minimal source combination.
    Trace,
    /// Grade (D)TLS configuration and access control.
    Assess,
    /// Rebuild the report tables from artifacts.
    Report {
        /// Artifact directory; defaults to the config's output directory.
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Every stage, in order.
    Run,
    /// Synthetic universe tools.
    Harness {
        #[command(subcommand)]
        command: HarnessCommand,
    },
}

#[derive(Subcommand)]
enum HarnessCommand {
    /// Materialize a universe spec and write its ground truth.
    Build {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Serve one planted deployment on real sockets.
    Serve {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        address: Addr128,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 30000)]
        port_offset: u16,
    },
}

fn load_config(cli: &Cli) -> Result<CampaignConfig, ConfigError> {
    let path = cli.config.as_deref().ok_or_else(|| ConfigError("--config is required".into()))?;
    let mut cfg = CampaignConfig::load(path)?;
    if let Some(seed) = cli.rng_seed {
        cfg.rng_seed = seed;
    }
    Ok(cfg)
}

fn stage_of(c: &Command) -> Option<Stage> {
    Some(match c {
        Command::Seeds => Stage::Seeds,
        Command::Generate => Stage::Generate,
        Command::Scan => Stage::Scan,
        Command::Validate => Stage::Validate,
        Command::Alias => Stage::Alias,
        Command::Trace => Stage::Trace,
        Command::Assess => Stage::Assess,
        Command::Run => Stage::Report,
        Command::Report { .. } | Command::Harness { .. } => return None,
    })
}

fn campaign(cli: &Cli, until: Stage) -> Result<u8, ConfigError> {
    let cfg = load_config(cli)?;
    if cli.dry_run {
        let (plan, summary) = plan_probes(&cfg)?;
        let mut out = io::BufWriter::new(io::stdout().lock());
        for p in &plan {
            serde_json::to_writer(&mut out, p).map_err(|e| ConfigError(e.to_string()))?;
            let _ = out.write_all(b"\n");
        }
        let _ = out.flush();
        eprintln!("{} planned probes", plan.len());
        return Ok(summary.exit_code() as u8);
    }
    let summary = run_pipeline(&cfg, until)?;
    print!("{summary}");
    Ok(summary.exit_code() as u8)
}

fn report(cli: &Cli, dir: Option<&Path>) -> Result<u8, ConfigError> {
    let dir = match dir {
        Some(d) => d.to_path_buf(),
        None => load_config(cli)?.output_dir,
    };
    match emit_report(&dir) {
        Ok(r) => {
            for (p, s) in &r.protocols {
                println!("{:<6} valid {:>6}  tls {:>6}  aliased {:>6}", p.name(), s.valid, s.tls_adopting, s.aliased);
            }
            Ok(0)
        }
        Err(e) => {
            eprintln!("report: {e}");
            Ok(2)
        }
    }
}

fn harness(command: &HarnessCommand) -> Result<u8, ConfigError> {
    let read_spec = |p: &Path| -> Result<UniverseSpec, ConfigError> {
        let text = std::fs::read_to_string(p).map_err(|e| ConfigError(format!("{}: {e}", p.display())))?;
        serde_json::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", p.display())))
    };
    match command {
        HarnessCommand::Build { spec, truth } => {
            let (u, t) = build_universe(&read_spec(spec)?).map_err(|e| ConfigError(e.to_string()))?;
            t.write_jsonl(truth).map_err(|e| ConfigError(format!("{}: {e}", truth.display())))?;
            println!("{} plants, ground truth in {}", u.plants().len(), truth.display());
            Ok(0)
        }
        HarnessCommand::Serve { spec, address, bind, port_offset } => {
            let (u, _) = build_universe(&read_spec(spec)?).map_err(|e| ConfigError(e.to_string()))?;
            let opts = ServeOptions { bind: *bind, port_offset: *port_offset };
            let stop = Arc::new(AtomicBool::new(false));
            let (bound, handles) =
                serve_plant(Arc::new(u), *address, opts, stop).map_err(|e| ConfigError(format!("serve: {e}")))?;
            for b in &bound {
                println!("listening on {b}");
            }
            for h in handles {
                let _ = h.join();
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Report { dir } => report(&cli, dir.as_deref()),
        Command::Harness { command } => harness(command),
        c => campaign(&cli, stage_of(c).expect("campaign command")),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
