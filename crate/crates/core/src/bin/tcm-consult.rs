use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use base64::Engine as _;
use clap::{Parser, Subcommand};
use tcm_consult::config::AppConfig;
use tcm_consult::corpus::{ingest_manifest, DEFAULT_MAX_ATTACHMENTS};
use tcm_consult::eval::{
    load_benchmark, render_comparison, render_report, ComparisonRow, EvalRunner, ReferenceFigures, ReportFormat,
};
use tcm_consult::scenario::ScenarioId;
use tcm_consult::service::{http, Service};

#[derive(Parser)]
#[command(name = "tcm-consult", version, about = "TCM consultation service and evaluation tools")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Terminal client for a running service.
    Chat {
        /// Continue this session instead of starting a new one.
        #[arg(long)]
        session: Option<String>,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        server: String,
        /// Scenario hint for a new session.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Clean, merge and index a corpus manifest.
    Ingest {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_ATTACHMENTS)]
        max_attachments: usize,
    },
    /// Benchmark evaluation.
    Eval {
        #[command(subcommand)]
        command: EvalCommand,
    },
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Run a benchmark through the configured provider.
    Run {
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        model: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        resume: Option<String>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Score a finished run directory.
    Score {
        #[arg(long)]
        run: PathBuf,
        /// csv, json or plot
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Print the reference comparison table, plus one row per given run.
    Compare {
        #[arg(long = "run")]
        runs: Vec<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<AppConfig> {
    match path {
        Some(p) => Ok(AppConfig::load(p)?),
        None => Ok(AppConfig::default()),
    }
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(std::io::stderr)
        .init();
    match Cli::parse().command {
        Command::Serve { config, port, host } => {
            let cfg = load_config(config.as_ref())?;
            let svc = Arc::new(Service::from_config(&cfg)?);
            let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
            tokio::runtime::Runtime::new()?.block_on(http::serve(svc, addr))?;
        }
        Command::Chat { session, server, scenario } => chat(&server, session, scenario)?,
        Command::Ingest { manifest, out, max_attachments } => {
            let summary = ingest_manifest(&manifest, &out, max_attachments)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        Command::Eval { command } => eval(command)?,
    }
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    match cmd {
        EvalCommand::Run { bench, model, out, resume, parallel, config } => {
            let cfg = load_config(config.as_ref())?;
            let items = load_benchmark(&bench, cfg.eval.categories.as_deref())?;
            let runner = EvalRunner::new(cfg.gateway()?).with_parallel(parallel);
            let run = runner.run(&items, &model, &out, resume.as_deref())?;
            let report = tcm_consult::eval::score(&run, &items)?;
            println!("run {}", run.run_id);
            print!("{}", String::from_utf8(render_report(&report, ReportFormat::Csv)?)?);
        }
        EvalCommand::Score { run, format } => {
            let format: ReportFormat = format.parse().map_err(anyhow::Error::msg)?;
            let report = EvalRunner::score_dir(&run)?;
            std::io::stdout().write_all(&render_report(&report, format)?)?;
        }
        EvalCommand::Compare { runs } => {
            let refs = ReferenceFigures::defaults();
            let mut rows = refs.rows.clone();
            for dir in &runs {
                rows.push(ComparisonRow::from_report(&EvalRunner::score_dir(dir)?, &refs.tasks));
            }
            print!("{}", render_comparison(&refs.tasks, &rows));
        }
    }
    Ok(())
}

fn chat(server: &str, session: Option<String>, scenario: Option<String>) -> Result<()> {
    let base = server.trim_end_matches('/');
    let agent = ureq::AgentBuilder::new().build();
    let call = |req: ureq::Request, body: serde_json::Value| -> Result<serde_json::Value> {
        match req.send_json(body) {
            Ok(r) => Ok(r.into_json()?),
            Err(ureq::Error::Status(_, r)) => bail!("{}", r.into_string()?),
            Err(e) => Err(e.into()),
        }
    };
    let id = match session {
        Some(id) => id,
        None => {
            let hint: Option<ScenarioId> = match scenario {
                Some(s) => Some(serde_json::from_value(serde_json::Value::String(s)).context("unknown scenario")?),
                None => None,
            };
            let v = call(agent.post(&format!("{base}/v1/sessions")), serde_json::json!({ "scenario_hint": hint }))?;
            v["session_id"].as_str().context("no session id in response")?.to_string()
        }
    };
    eprintln!("session {id}. Type a message; '/image <path> <text>' attaches an image; Ctrl-D quits.");
    let stdin = std::io::stdin();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let body = match line.strip_prefix("/image ") {
            Some(rest) => {
                let (path, text) = rest.split_once(' ').unwrap_or((rest, ""));
                let bytes = std::fs::read(path).with_context(|| format!("reading {path}"))?;
                serde_json::json!({ "text": text, "image_base64": base64::engine::general_purpose::STANDARD.encode(bytes) })
            }
            None => serde_json::json!({ "text": line }),
        };
        match call(agent.post(&format!("{base}/v1/sessions/{id}/messages")), body) {
            Ok(r) => {
                println!("\n{}\n", r["reply"].as_str().unwrap_or_default());
                println!(
                    "[{} | {} | {} | coverage {:.2}]",
                    r["scenario"].as_str().unwrap_or("pending"),
                    r["stage"].as_str().unwrap_or_default(),
                    r["mode"]["mode"].as_str().unwrap_or_default(),
                    r["coverage"].as_f64().unwrap_or_default()
                );
            }
            Err(e) => eprintln!("error: {e}"),
        }
    }
    Ok(())
}
