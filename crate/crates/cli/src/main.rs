use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kshift_cli::{commands, mock, Failure};

#[derive(Parser)]
#[command(
    name = "kshift",
    version,
    about = "Knowledge-update benchmark generation and evaluation"
)]
struct Cli {
    /// Override the seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,
    /// Replace a non-empty output directory.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a benchmark bundle from a generation config.
    Generate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to the config's output_dir.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check probe and answer files against their schemas.
    Validate {
        #[arg(long)]
        probes: Vec<PathBuf>,
        #[arg(long)]
        answers: Vec<PathBuf>,
    },
    /// Score pre and post answer logs against probe keys.
    Evaluate {
        /// Probe file; repeat for the pre- and post-keyed files.
        #[arg(long, required = true)]
        probes: Vec<PathBuf>,
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare exported pre and post weight matrices.
    Geometry {
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long)]
        fisher: Option<PathBuf>,
        /// Singular directions compared per layer (default 32, capped by shape).
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plasticity curves and collapse points from reports at several scales.
    Report {
        /// TOML or JSON list of runs: domain, branch, mode, scale, report.
        #[arg(long)]
        index: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, answer with scripted models, evaluate, and check the outcomes.
    MockRun {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> kshift_cli::CmdResult {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::usage(anyhow::anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(Failure::runtime)?;
    }
    let force = cli.force;
    match cli.command {
        Command::Generate { config, out } => commands::generate(&config, out.as_deref(), cli.seed, force),
        Command::Validate { probes, answers } => commands::validate(&probes, &answers),
        Command::Evaluate {
            probes,
            pre,
            post,
            config,
            out,
        } => commands::evaluate(&probes, &pre, &post, config.as_deref(), &out, force),
        Command::Geometry {
            pre,
            post,
            fisher,
            rank,
            tol,
            out,
        } => commands::geometry(&pre, &post, fisher.as_deref(), rank, tol, &out, force),
        Command::Report { index, config, out } => commands::report(&index, config.as_deref(), &out, force),
        Command::MockRun { config, out } => mock::mock_run(&config, &out, cli.seed, force),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let _ = e.print();
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            println!("{}", serde_json::json!({ "error": first, "exit_code": 2 }));
            return ExitCode::from(2);
        }
    };
    env_logger::Builder::new()
        .filter_level(cli.log_level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(doc) => {
            println!("{}", serde_json::to_string_pretty(&doc).expect("serializable"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            let doc = serde_json::json!({ "error": e.to_string(), "exit_code": e.exit_code() });
            println!("{doc}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
