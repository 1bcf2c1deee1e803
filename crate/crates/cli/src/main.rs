use std::fs;
use std::io::{BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use ward_sim::harness::bench::{bench_latency, bench_loopback};
use ward_sim::harness::console::ConsoleServer;
use ward_sim::harness::generate::{gen_fault_corpus, gen_null_lying, gen_part1, gen_part2, RequestDistribution};
use ward_sim::harness::realtime::run_realtime;
use ward_sim::harness::{compute_metrics, run_logical};
use ward_sim::taxonomy::{classify_trace, tally};
use ward_sim::trace::Trace;
use ward_sim::{ScenarioScript, SimConfig};

#[derive(Parser)]
#[command(name = "ward", version, about = "Ward simulation harness")]
struct Cli {
    /// JSON config file; defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Logical,
    Realtime,
}

#[derive(Subcommand)]
enum Command {
    /// Bed-exit protocol: 15 trials per participant, 5 of them tricks.
    GenPart1 {
        #[arg(long, default_value_t = 16)]
        participants: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fetch protocol: 3 requests per participant.
    GenPart2 {
        #[arg(long, default_value_t = 16)]
        participants: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Every request by touch.
        #[arg(long)]
        all_touch: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Patients lying still, for false-alarm checks.
    GenNull {
        #[arg(long, default_value_t = 32)]
        count: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Scenarios with one known error category each.
    GenFaults {
        #[arg(long, default_value_t = 3)]
        per_category: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a scenario and writes trace.jsonl, metrics.json and errors.json.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum, default_value = "logical")]
        mode: Mode,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Scores a trace against the scenario it was run from.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classifies a trace into error categories and prints the tally.
    Errors {
        #[arg(long)]
        trace: PathBuf,
        /// Writes the records and tally as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Broker publish-to-receive latency. Exits nonzero when p99 is over budget.
    Bench {
        /// Broker to measure; a loopback broker is started when absent.
        #[arg(long)]
        addr: Option<SocketAddr>,
        #[arg(long)]
        messages: Option<usize>,
        #[arg(long)]
        payload_bytes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// WebSocket bridge for the patient console. Stops when stdin closes.
    ServeConsole {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value = "bed1")]
        bed: String,
        /// Writes the live trace here on shutdown.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, body).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            match writeln!(stdout, "{body}") {
                Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => Ok(()),
                r => Ok(r?),
            }
        }
    }
}

fn load_script(path: &Path) -> Result<ScenarioScript> {
    ScenarioScript::load(path).with_context(|| format!("loading scenario {}", path.display()))
}

fn load_trace(path: &Path) -> Result<Trace> {
    Trace::load(path).with_context(|| format!("loading trace {}", path.display()))
}

fn write_trace(dir: &Path, trace: &Trace) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("trace.jsonl");
    let file = fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    trace.write_jsonl(std::io::BufWriter::new(file))?;
    Ok(path)
}

fn errors_json(trace: &Trace, cfg: &SimConfig) -> (serde_json::Value, String) {
    let records = classify_trace(&trace.events, &cfg.detectors);
    let report = tally(&records);
    let table = report.to_table();
    (serde_json::json!({ "records": records, "tally": report }), table)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cfg = match &cli.config {
        Some(p) => SimConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
        None => SimConfig::default(),
    };
    match cli.command {
        Command::GenPart1 { participants, seed, out } => {
            let script: ScenarioScript = gen_part1(participants, seed, &cfg.render.geometry);
            write_or_print(out.as_deref(), &script.to_json_pretty())
        }
        Command::GenPart2 { participants, seed, all_touch, out } => {
            let dist = if all_touch { RequestDistribution::all_touch() } else { cfg.requests.clone() };
            let script: ScenarioScript = gen_part2(participants, seed, &dist);
            write_or_print(out.as_deref(), &script.to_json_pretty())
        }
        Command::GenNull { count, seed, out } => {
            let script: ScenarioScript = gen_null_lying(count, seed);
            write_or_print(out.as_deref(), &script.to_json_pretty())
        }
        Command::GenFaults { per_category, seed, out } => {
            let script: ScenarioScript = gen_fault_corpus(per_category, seed);
            write_or_print(out.as_deref(), &script.to_json_pretty())
        }
        Command::Run { scenario, seed, mode, out_dir } => {
            let mut script = load_script(&scenario)?;
            if let Some(s) = seed {
                script.seed = s;
            }
            let trace = match mode {
                Mode::Logical => run_logical(&script, &cfg),
                Mode::Realtime => run_realtime(&script, &cfg),
            }
            .context("run failed")?;
            let trace_path = write_trace(&out_dir, &trace)?;
            let metrics = compute_metrics(&trace, &script)?;
            fs::write(out_dir.join("metrics.json"), metrics.to_json_pretty())?;
            let (errors, table) = errors_json(&trace, &cfg);
            fs::write(out_dir.join("errors.json"), serde_json::to_string_pretty(&errors)?)?;
            println!("{} events -> {}", trace.events.len(), trace_path.display());
            let c = metrics.confusion;
            println!(
                "TP {} FP {} TN {} FN {}  accuracy {:.3}  recall {:.3}",
                c.tp, c.fp, c.tn, c.fn_, metrics.accuracy, metrics.recall
            );
            println!("requests: touch {} voice {}", metrics.modality.touch, metrics.modality.voice);
            print!("{table}");
            Ok(())
        }
        Command::Metrics { trace, scenario, out } => {
            let metrics = compute_metrics(&load_trace(&trace)?, &load_script(&scenario)?)?;
            write_or_print(out.as_deref(), &metrics.to_json_pretty())
        }
        Command::Errors { trace, out } => {
            let (errors, table) = errors_json(&load_trace(&trace)?, &cfg);
            print!("{table}");
            if let Some(p) = out {
                fs::write(&p, serde_json::to_string_pretty(&errors)?)?;
            }
            Ok(())
        }
        Command::Bench { addr, messages, payload_bytes, out } => {
            let mut params = cfg.bench;
            params.messages = messages.unwrap_or(params.messages);
            params.payload_bytes = payload_bytes.unwrap_or(params.payload_bytes);
            let report = match addr {
                Some(a) => bench_latency(a, &params)?,
                None => bench_loopback(&cfg.broker, &params)?,
            };
            let body = serde_json::to_string_pretty(&report)?;
            write_or_print(out.as_deref(), &body)?;
            if !report.within_budget {
                bail!("p99 {:.3} ms is over the {:.3} ms budget", report.p99_ms, report.budget_ms);
            }
            Ok(())
        }
        Command::ServeConsole { port, seed, bed, out_dir } => {
            let server = ConsoleServer::start(&cfg, ("0.0.0.0", port), seed, &bed)?;
            eprintln!("console bridge on ws://{}; close stdin to stop", server.local_addr());
            for line in std::io::stdin().lock().lines() {
                if line.is_err() {
                    break;
                }
            }
            let trace = server.shutdown()?;
            if let Some(dir) = out_dir {
                let p = write_trace(&dir, &trace)?;
                eprintln!("{} events -> {}", trace.events.len(), p.display());
            }
            Ok(())
        }
    }
}
