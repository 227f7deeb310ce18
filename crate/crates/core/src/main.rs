use std::io::{self, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::Value;

use cie_core::bundled;
use cie_core::engine::Engine;
use cie_core::environment::Environment;
use cie_core::knowledge_base::Codebook;
use cie_core::query_service::{self, ToolRequest};
use cie_core::scenario::{render_metrics, run_scenario, RubricResult, Scenario};

#[derive(Parser)]
#[command(name = "cie", version, about = "Causal intelligence engine")]
struct Cli {
    /// Output format.
    #[arg(long, value_enum, global = true, default_value_t = Format::Table)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Command {
    /// Serve tool requests over stdio (or a unix socket).
    Serve {
        #[command(flatten)]
        model: ModelArgs,
        /// Listen on a unix socket instead of stdio.
        #[arg(long)]
        socket: Option<PathBuf>,
    },
    /// Scenario harness.
    Scenario {
        #[command(subcommand)]
        command: ScenarioCommand,
    },
    /// Issue a single tool request.
    Query {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        method: String,
        /// JSON object of method parameters.
        #[arg(long, default_value = "{}")]
        params: String,
    },
    /// Causality graph inspection.
    Graph {
        #[command(subcommand)]
        command: GraphCommand,
    },
}

#[derive(Subcommand)]
enum ScenarioCommand {
    /// Run a scenario and score it. Without --scenario both bundled
    /// scenarios run.
    Run {
        /// Scenario file, or `builtin:active_fault` / `builtin:healthy`.
        #[arg(long)]
        scenario: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write per-query metrics as JSON lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum GraphCommand {
    /// Print the causality graph with edge derivations.
    Dump {
        #[command(flatten)]
        model: ModelArgs,
    },
}

/// Environment and codebook files; the bundled model is used when both are
/// omitted.
#[derive(Args)]
struct ModelArgs {
    #[arg(long = "env", requires = "codebook")]
    env: Option<PathBuf>,
    #[arg(long, requires = "env")]
    codebook: Option<PathBuf>,
    /// NDJSON observations to ingest before answering.
    #[arg(long)]
    observations: Option<PathBuf>,
}

type Failure = Box<dyn std::error::Error>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()).into())
}

impl ModelArgs {
    fn engine(&self) -> Result<Engine, Failure> {
        let engine = match (&self.env, &self.codebook) {
            (Some(env), Some(cb)) => {
                let codebook = Codebook::from_json(&read(cb)?)?;
                let environment = Environment::from_json(&read(env)?, &codebook)?;
                Engine::new(environment, codebook)?
            }
            _ => Engine::new(bundled::environment(), bundled::codebook())?,
        };
        if let Some(path) = &self.observations {
            engine.ingest_ndjson(&read(path)?)?;
        }
        Ok(engine)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<bool, Failure> {
    match cli.command {
        Command::Serve { model, socket } => {
            let engine = model.engine()?;
            match socket {
                #[cfg(unix)]
                Some(path) => query_service::serve_unix(std::sync::Arc::new(engine), &path)?,
                #[cfg(not(unix))]
                Some(_) => return Err("unix sockets are not supported on this platform".into()),
                None => {
                    let stdin = io::stdin();
                    query_service::serve(&engine, BufReader::new(stdin.lock()), io::stdout().lock(), true)?;
                }
            }
            Ok(true)
        }
        Command::Query { model, method, params } => {
            let engine = model.engine()?;
            let params: Value = serde_json::from_str(&params).map_err(|e| format!("--params is not JSON: {e}"))?;
            let request = ToolRequest {
                id: Value::from("cli"),
                method,
                params,
            };
            let response = query_service::handle(&engine.snapshot(), &request);
            match cli.format {
                Format::Json => println!("{}", response.to_line()),
                Format::Table => {
                    println!("status: {:?}  revision: {}", response.status, response.revision);
                    if let Some(p) = &response.payload {
                        println!("{}", serde_json::to_string_pretty(p)?);
                    }
                    if let Some(e) = &response.error {
                        println!("error {}: {}", e.code.as_str(), e.message);
                    }
                }
            }
            Ok(response.is_ok())
        }
        Command::Graph {
            command: GraphCommand::Dump { model },
        } => {
            let engine = model.engine()?;
            let dump = engine.snapshot().causality.dump();
            match cli.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&dump)?),
                Format::Table => {
                    println!(
                        "causality graph: {} causes, {} symptoms, {} edges (max depth {})",
                        dump.causes.len(),
                        dump.symptoms.len(),
                        dump.edges.len(),
                        dump.max_depth
                    );
                    for e in &dump.edges {
                        let hops: Vec<String> = e
                            .derivation
                            .iter()
                            .map(|h| format!("{}:{}->{}", h.rule_id, h.from, h.to))
                            .collect();
                        println!("{:<60} {:<45} {:.6}  {}", e.cause.as_str(), e.symptom.as_str(), e.probability, hops.join(" "));
                    }
                    for c in &dump.truncated {
                        println!("truncated at depth limit: {c}");
                    }
                }
            }
            Ok(true)
        }
        Command::Scenario {
            command: ScenarioCommand::Run { scenario, seed, metrics },
        } => {
            let scenarios = match scenario.as_deref() {
                None => vec![bundled::fault_scenario(), bundled::healthy_scenario()],
                Some("builtin:active_fault") => vec![bundled::fault_scenario()],
                Some("builtin:healthy") => vec![bundled::healthy_scenario()],
                Some(path) => vec![Scenario::load(Path::new(path))?],
            };
            let mut all_passed = true;
            let mut reports: Vec<RubricResult> = Vec::new();
            let mut metric_lines = String::new();
            for s in &scenarios {
                let engine = s.engine()?;
                let run = run_scenario(s, &engine, seed.unwrap_or(s.seed))?;
                all_passed &= run.rubric.all_passed();
                metric_lines.push_str(&render_metrics(&run.metrics));
                reports.push(run.rubric);
            }
            match cli.format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&reports)?),
                Format::Table => {
                    for r in &reports {
                        println!("{}", r.to_table());
                    }
                }
            }
            if let Some(path) = metrics {
                std::fs::write(&path, metric_lines).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
            }
            Ok(all_passed)
        }
    }
}
