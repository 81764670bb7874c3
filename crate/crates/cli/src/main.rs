use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use metagfn_client::{ApiError, Client, ClientError, ErrorKind, JobRequest, JobState, Overrides, Update};
use metagfn_service::AppState;

/// Train continuous GFlowNets and run metadynamics sampling through the
/// metagfn job service.
#[derive(Parser)]
#[command(name = "metagfn", version)]
struct Cli {
    /// Service to submit to. Without it an in-process server is started.
    #[arg(long, global = true)]
    server: Option<String>,

    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the mode named in the config (training by default).
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Run the metadynamics sampler alone and dump its potential grids.
    SampleAm {
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Evaluate a checkpoint: histogram, L1 error and mode coverage.
    Eval {
        checkpoint: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        flags: Flags,
    },
    /// Serve the HTTP API until interrupted.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: std::net::SocketAddr,
        /// Jobs allowed to run at once (default: one per core).
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Args)]
struct Flags {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
}

impl From<Flags> for Overrides {
    fn from(f: Flags) -> Self {
        Overrides {
            seed: f.seed,
            out: f.out,
            repeats: f.repeats,
            batches: f.batches,
        }
    }
}

#[derive(Clone, Copy)]
enum Endpoint {
    Run,
    SampleAm,
    Eval,
}

fn exit_code(kind: ErrorKind) -> u8 {
    match kind {
        ErrorKind::Parse | ErrorKind::InvalidParameter => 2,
        ErrorKind::InvalidName => 3,
        ErrorKind::NonFiniteLoss => 4,
        ErrorKind::Io => 5,
        ErrorKind::Cancelled => 130,
        ErrorKind::NotFound | ErrorKind::Internal => 1,
    }
}

fn fail(e: &ApiError) -> ExitCode {
    eprintln!("error: {}", e.message);
    ExitCode::from(exit_code(e.kind))
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn request(config: &Path, flags: Flags, checkpoint: Option<&Path>) -> Result<JobRequest, ApiError> {
    let text = std::fs::read_to_string(config).map_err(|e| ApiError {
        kind: ErrorKind::Io,
        message: format!("cannot read {}: {e}", config.display()),
    })?;
    let config = absolute(config);
    Ok(JobRequest {
        config: text,
        config_dir: config.parent().map(Path::to_path_buf),
        cwd: std::env::current_dir().ok(),
        overrides: flags.into(),
        checkpoint: checkpoint.map(absolute),
    })
}

fn progress_line(u: Update<'_>) -> Option<String> {
    match u {
        Update::State(s) => match s.state {
            JobState::Queued => Some(format!("job {} queued", s.id)),
            JobState::Running => Some(format!("job {} running ({}), output in {}", s.id, s.mode, s.out.display())),
            _ => None,
        },
        Update::Event(e) => Some(match (&e.branch, e.loss_mean) {
            (Some(branch), Some(loss)) => format!(
                "seed {} episode {} loss {loss:.6} l1 {:.6} ({branch})",
                e.seed, e.episode, e.l1_error
            ),
            _ => format!("iteration {} l1 {:.6}", e.episode, e.l1_error),
        }),
    }
}

async fn submit_and_wait(client: &Client, endpoint: Endpoint, req: JobRequest, quiet: bool) -> ExitCode {
    let submitted = match endpoint {
        Endpoint::Run => client.submit_run(&req).await,
        Endpoint::SampleAm => client.submit_sample_am(&req).await,
        Endpoint::Eval => client.submit_eval(&req).await,
    };
    let job = match submitted {
        Ok(j) => j,
        Err(e) => return client_failure(e),
    };
    let waiting = client.wait(job.id, Duration::from_millis(200), |u| {
        if !quiet {
            if let Some(line) = progress_line(u) {
                eprintln!("{line}");
            }
        }
    });
    tokio::pin!(waiting);
    let status = tokio::select! {
        r = &mut waiting => r,
        _ = tokio::signal::ctrl_c() => {
            eprintln!("interrupted, cancelling job {}", job.id);
            if let Err(e) = client.cancel(job.id).await {
                return client_failure(e);
            }
            waiting.await
        }
    };
    match status {
        Ok(s) if s.state == JobState::Succeeded => {
            let result = s.result.unwrap_or_default();
            println!("{}", serde_json::to_string_pretty(&result).unwrap_or_default());
            ExitCode::SUCCESS
        }
        Ok(s) => fail(&s.error.unwrap_or(ApiError {
            kind: ErrorKind::Internal,
            message: format!("job ended in state {:?}", s.state),
        })),
        Err(e) => client_failure(e),
    }
}

fn client_failure(e: ClientError) -> ExitCode {
    match e {
        ClientError::Api(a) => fail(&a),
        other => {
            eprintln!("error: {other}");
            ExitCode::from(1)
        }
    }
}

async fn serve(addr: std::net::SocketAddr, jobs: Option<usize>) -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    let state = jobs.map_or_else(AppState::default, AppState::new);
    let (local, server) = metagfn_service::bind(addr, state).await?;
    println!("listening on {local}");
    tokio::select! {
        r = server => r?,
        _ = tokio::signal::ctrl_c() => {}
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let (endpoint, req) = match cli.command {
        Command::Serve { addr, jobs } => {
            return match serve(addr, jobs).await {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(5)
                }
            };
        }
        Command::Run { config, flags } => (Endpoint::Run, request(&config, flags, None)),
        Command::SampleAm { config, flags } => (Endpoint::SampleAm, request(&config, flags, None)),
        Command::Eval {
            checkpoint,
            config,
            flags,
        } => (Endpoint::Eval, request(&config, flags, Some(&checkpoint))),
    };
    let req = match req {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    let client = match cli.server {
        Some(url) => Client::new(url),
        None => match metagfn_service::bind(([127, 0, 0, 1], 0).into(), AppState::new(1)).await {
            Ok((addr, server)) => {
                tokio::spawn(server);
                Client::new(format!("http://{addr}"))
            }
            Err(e) => {
                eprintln!("error: cannot start the embedded server: {e}");
                return ExitCode::from(5);
            }
        },
    };
    submit_and_wait(&client, endpoint, req, cli.quiet).await
}
