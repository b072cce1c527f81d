//! `mftgen`: run the test-suite generation pipeline stage by stage.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mftgen::config::validate_config;
use mftgen::llm::GatewayMode;
use mftgen::pipeline::{Pipeline, RunOptions, StageStatus};
use mftgen::Error;
use serde_json::json;

#[derive(Debug, Parser)]
#[command(name = "mftgen", version, about = "Generate and score behavioral test suites for sentiment classifiers")]
struct Cli {
    /// Pipeline config (TOML). Relative paths inside it resolve against its directory.
    #[arg(long, short, global = true, default_value = "mftgen.toml")]
    config: PathBuf,

    /// Chat gateway mode, overriding the config.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<GatewayMode>,

    /// Transcript file for record and replay.
    #[arg(long, global = true)]
    transcript: Option<PathBuf>,

    /// Rerun stages even when their artifacts are current.
    #[arg(long, global = true)]
    force: bool,

    /// Print results and errors as single-line JSON.
    #[arg(long, global = true)]
    machine: bool,

    /// More log output (repeatable).
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Read the raw review file, relabel, balance and split by date.
    Ingest,
    /// Embed every document of the configured splits.
    Embed,
    /// Reduce embeddings and cluster each split into topics.
    Cluster,
    /// Pick diverse representative documents per cluster and seed.
    Represent {
        /// Only this cluster.
        #[arg(long)]
        cluster: Option<usize>,
    },
    /// Ask the chat model for test cases, one suite per seed.
    Generate,
    /// Label every generated case with the chat model and export a triage file.
    QcLabel,
    /// Apply triage decisions to the generated suites.
    TriageApply {
        /// Triage CSV to apply instead of the exported one.
        #[arg(long)]
        triage: Option<PathBuf>,
        /// Use the proposed action for rows without a decision.
        #[arg(long)]
        accept_proposed: bool,
    },
    /// Paraphrase cases and build the Original and Extended suites.
    Assemble,
    /// Group the cases of each Original suite into topics.
    MftTopics,
    /// Score every configured model on every suite variant.
    Evaluate,
    /// Write tables, markdown and plots from the evaluation.
    Report,
    /// Every stage in order.
    RunAll,
    /// Check the config and print it with defaults filled in.
    ValidateConfig,
}

fn parse_mode(s: &str) -> Result<GatewayMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn status_name(s: StageStatus) -> &'static str {
    match s {
        StageStatus::Ran => "ran",
        StageStatus::UpToDate => "up to date",
    }
}

fn run(cli: &Cli) -> mftgen::Result<Vec<(&'static str, StageStatus)>> {
    let cfg = validate_config(&cli.config)?;
    if let Command::ValidateConfig = cli.command {
        print!("{}", cfg.to_toml());
        return Ok(Vec::new());
    }
    let mut options = RunOptions {
        mode: cli.mode,
        transcript: cli.transcript.clone(),
        force: cli.force,
        ..RunOptions::default()
    };
    if let Command::TriageApply {
        triage,
        accept_proposed,
    } = &cli.command
    {
        options.triage = triage.clone();
        options.accept_proposed = *accept_proposed;
    }
    let mut p = Pipeline::open(cfg, options)?;
    let one = |name, status| Ok(vec![(name, status)]);
    match &cli.command {
        Command::Ingest => one("ingest", p.ingest()?),
        Command::Embed => one("embed", p.embed()?),
        Command::Cluster => one("cluster", p.cluster()?),
        Command::Represent { cluster } => one("represent", p.represent(*cluster)?),
        Command::Generate => one("generate", p.generate()?),
        Command::QcLabel => one("qc-label", p.qc_label()?),
        Command::TriageApply { .. } => one("triage-apply", p.triage_apply()?),
        Command::Assemble => one("assemble", p.assemble()?),
        Command::MftTopics => one("mft-topics", p.mft_topics()?),
        Command::Evaluate => one("evaluate", p.evaluate()?),
        Command::Report => one("report", p.report()?),
        Command::RunAll => p.run_all(),
        Command::ValidateConfig => unreachable!("handled above"),
    }
}

fn error_json(e: &Error) -> serde_json::Value {
    let mut body = json!({ "kind": e.kind(), "message": e.to_string() });
    if let Error::Config(issues) = e {
        body["issues"] = issues.iter().map(|i| json!({ "path": i.path, "message": i.message })).collect();
    }
    json!({ "error": body })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if std::env::args().any(|a| a == "--machine") {
                let msg = e.render().to_string();
                let line = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
                eprintln!("{}", json!({ "error": { "kind": "usage", "message": line } }));
            } else {
                let _ = e.print();
            }
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match run(&cli) {
        Ok(done) => {
            for (stage, status) in done {
                if cli.machine {
                    println!("{}", json!({ "stage": stage, "status": status }));
                } else {
                    println!("{stage}: {}", status_name(status));
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.machine {
                eprintln!("{}", error_json(&e));
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}
