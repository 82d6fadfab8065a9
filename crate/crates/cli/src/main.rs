//! `periph`: batch synthesis, parameter search, IQA, trial schedules,
//! simulated observers, analysis and the session service.

mod command;
mod commands;
mod error;
mod manifest;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use command::{Batch, Ctx, Done};
use commands::analyze::{Analyze, AnalyzeArgs, Replay, ReplayArgs};
use commands::iqa::{Iqa, IqaArgs};
use commands::optimize::{Optimize, OptimizeArgs};
use commands::synth::{Synth, SynthArgs};
use commands::texform::{Texform, TexformArgs};
use commands::trials::{Ingest, IngestArgs, Simulate, SimulateArgs, Trials, TrialsArgs};
use error::{CliError, Result};

#[derive(Parser, Debug)]
#[command(name = "periph", version, about = "Texform synthesis and peripheral discrimination experiments")]
struct Cli {
    /// Print diagnostics and results as JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// Worker threads for batch commands (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Allow writing into a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    /// More logging; repeat for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Feature-inversion metamers (standard and robust families).
    Synth {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SynthArgs,
    },
    /// Texforms: pooled texture statistics plus a coarse structural prior.
    Texform {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TexformArgs,
    },
    /// Grid search for texform pooling parameters.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: OptimizeArgs,
    },
    /// Pair distances at several pyramid levels.
    Iqa {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: IqaArgs,
    },
    /// Check a stimulus tree and write its index.
    Ingest {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: IngestArgs,
    },
    /// Generate a trial schedule.
    Trials {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrialsArgs,
    },
    /// Run simulated observers through a schedule.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: SimulateArgs,
    },
    /// Psychometric curves, sigmoid fits and curve comparisons.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: AnalyzeArgs,
    },
    /// Score a stored session from its response log.
    Replay {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: ReplayArgs,
    },
    /// Re-run a recorded command and compare its outputs.
    Rerun {
        /// manifest.json of the recorded run.
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Serve the experiment API.
    Serve {
        /// Stimulus set roots; repeatable, merged in order.
        #[arg(long = "set", value_name = "DIR")]
        sets: Vec<PathBuf>,
        /// Session storage.
        #[arg(long, value_name = "DIR")]
        data: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Experimenter token; falls back to PERIPH_TOKEN.
        #[arg(long, env = "PERIPH_TOKEN", hide_env_values = true)]
        token: Option<String>,
    },
}

fn batch<B: Batch>(common: &Common, flags: Value, ctx: &Ctx) -> Result<Done> {
    command::run::<B>(common.config.as_deref(), flags, &common.out, ctx)
}

fn flags<T: serde::Serialize>(args: &T) -> Result<Value> {
    Ok(serde_json::to_value(args)?)
}

fn serve(sets: &[PathBuf], data: &Path, addr: SocketAddr, token: Option<String>) -> Result<()> {
    let set = if sets.is_empty() {
        None
    } else {
        Some(commands::load_sets(sets)?)
    };
    let rt = tokio::runtime::Runtime::new().map_err(|e| CliError::io(data, e))?;
    rt.block_on(async {
        let opts = periph_service::ServiceOptions {
            data_dir: data.to_path_buf(),
            token,
        };
        let state = periph_service::AppState::open(opts, set).await?;
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| CliError::Usage(format!("cannot bind {addr}: {e}")))?;
        tracing::info!(%addr, "serving");
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        periph_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::io(data, e))
    })
}

fn run(cli: Cli) -> Result<Option<Done>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let ctx = Ctx { pool, force: cli.force };
    let done = match &cli.command {
        Cmd::Synth { common, args } => batch::<Synth>(common, flags(args)?, &ctx)?,
        Cmd::Texform { common, args } => batch::<Texform>(common, flags(args)?, &ctx)?,
        Cmd::Optimize { common, args } => batch::<Optimize>(common, flags(args)?, &ctx)?,
        Cmd::Iqa { common, args } => batch::<Iqa>(common, flags(args)?, &ctx)?,
        Cmd::Ingest { common, args } => batch::<Ingest>(common, flags(args)?, &ctx)?,
        Cmd::Trials { common, args } => batch::<Trials>(common, args.to_value()?, &ctx)?,
        Cmd::Simulate { common, args } => batch::<Simulate>(common, args.to_value()?, &ctx)?,
        Cmd::Analyze { common, args } => batch::<Analyze>(common, flags(args)?, &ctx)?,
        Cmd::Replay { common, args } => batch::<Replay>(common, flags(args)?, &ctx)?,
        Cmd::Rerun { manifest, out } => command::rerun(manifest, out, &ctx)?,
        Cmd::Serve {
            sets,
            data,
            addr,
            token,
        } => {
            serve(sets, data, *addr, token.clone())?;
            return Ok(None);
        }
    };
    Ok(Some(done))
}

fn report_error(e: &CliError, json: bool) {
    let items = e.items();
    if json {
        let doc = json!({
            "ok": false,
            "exit_code": e.exit_code(),
            "error": e.to_string(),
            "items": items,
        });
        println!("{doc}");
    } else {
        eprintln!("error: {e}");
        for i in items {
            eprintln!("  {}: {}", i.item, i.error);
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            if code != 0 && std::env::args().any(|a| a == "--json") {
                let doc = json!({ "ok": false, "exit_code": code, "error": e.to_string(), "items": [] });
                println!("{doc}");
            } else {
                let _ = e.print();
            }
            return ExitCode::from(code as u8);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into());
    tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .init();

    let json = cli.json;
    match run(cli) {
        Ok(Some(done)) => {
            if json {
                let doc = json!({
                    "ok": true,
                    "command": done.manifest.command,
                    "out": done.out,
                    "outputs": done.manifest.outputs,
                    "warnings": done.warnings,
                });
                println!("{doc}");
            } else {
                println!(
                    "{}: wrote {} files to {}",
                    done.manifest.command,
                    done.manifest.outputs.len() + 1,
                    done.out.display()
                );
            }
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e, json);
            ExitCode::from(e.exit_code())
        }
    }
}
