use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use imyo_core::runner::Mode;
use imyo_gateway::commands::{self, Failure, Metric, ReplayArgs, SimArgs, StatsArgs};
use imyo_gateway::serve;

#[derive(Parser)]
#[command(name = "imyo", version, about = "Gaze-switched myoelectric hand simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a headless session with the scripted subject.
    Sim {
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        agent: Option<PathBuf>,
        /// Seeds both the schedule and the subject.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        blocks: Option<usize>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        /// Session log (JSONL).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics_json: Option<PathBuf>,
        /// Input trace that `replay` turns back into the same log.
        #[arg(long)]
        inputs_out: Option<PathBuf>,
    },
    /// Metrics for one log; paired tests across several.
    Stats {
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        /// Per-trial time compared across logs: task or switch.
        #[arg(long, default_value = "task")]
        metric: Metric,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<Mode>,
        #[arg(long)]
        json: bool,
        /// Per-trial rows of a single log as CSV.
        #[arg(long, conflicts_with = "json")]
        csv: bool,
    },
    /// Serve live sessions over WebSocket plus the browser client.
    Serve {
        #[arg(long, env = serve::PORT_ENV, default_value_t = serve::DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Static asset directory for the browser client.
        #[arg(long)]
        assets: Option<PathBuf>,
    },
    /// Re-run a recorded input trace headlessly.
    Replay {
        trace: PathBuf,
        /// Used when the trace has no start line.
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: imyo_core::Error| e.to_string())
}

fn serve_blocking(host: &str, port: u16, assets: Option<PathBuf>) -> Result<String, Failure> {
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| Failure::usage(format!("address {host}:{port}: {e}")))?;
    let rt = tokio::runtime::Runtime::new().map_err(|e| Failure::internal(e.to_string()))?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::usage(format!("bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(|e| Failure::internal(e.to_string()))?;
        eprintln!("listening on http://{local} (WebSocket at /ws)");
        serve::run(listener, assets)
            .await
            .map_err(|e| Failure::internal(e.to_string()))?;
        Ok(String::new())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim {
            protocol,
            agent,
            seed,
            blocks,
            mode,
            out,
            metrics_json,
            inputs_out,
        } => commands::sim(&SimArgs {
            protocol,
            agent,
            seed,
            blocks,
            mode,
            out,
            metrics_json,
            inputs_out,
        }),
        Command::Stats {
            logs,
            metric,
            mode,
            json,
            csv,
        } => commands::stats(&StatsArgs {
            logs,
            metric,
            mode,
            json,
            csv,
        }),
        Command::Serve { port, host, assets } => serve_blocking(&host, port, assets),
        Command::Replay { trace, protocol, out } => commands::replay_cmd(&ReplayArgs { trace, protocol, out }),
    };
    match result {
        Ok(text) => {
            if !text.is_empty() {
                println!("{}", text.trim_end_matches('\n'));
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
