use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use num_rational::Ratio;

use flowcache_core::bench::{bench_compare, gen_workload, CompareOptions, WorkloadSpec};
use flowcache_core::engine::{Engine, EngineConfig};
use flowcache_core::miner::{rules_report, RuleSet, Thresholds};
use flowcache_core::model::{validate_graph, Catalog, WorkflowGraph};
use flowcache_core::recommend::{check, TimingIndex};
use flowcache_core::store::{parse_history, record_line, NodeOutcome, Store, StoreConfig, STORE_DIR_ENV};
use flowcache_service::{AppState, ServiceConfig};

#[derive(Parser)]
#[command(name = "flowcache", version, about = "Workflow engine with reusable intermediate results")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct StoreArgs {
    /// Store directory.
    #[arg(long, env = STORE_DIR_ENV, default_value = ".flowcache")]
    store: PathBuf,
    /// Module and dataset catalog [default: <store>/catalog.json].
    #[arg(long)]
    catalog: Option<PathBuf>,
}

impl StoreArgs {
    fn catalog(&self) -> Result<Catalog> {
        let path = self.catalog.clone().unwrap_or_else(|| self.store.join("catalog.json"));
        Catalog::load(&path).with_context(|| format!("loading catalog {}", path.display()))
    }

    fn open(&self) -> Result<Arc<Store>> {
        let store = Store::open(&self.store, StoreConfig::default())
            .with_context(|| format!("opening store {}", self.store.display()))?;
        Ok(Arc::new(store))
    }
}

#[derive(Args)]
struct ThresholdArgs {
    #[arg(long, default_value_t = 2)]
    min_support: u64,
    /// A fraction such as `1/2` or a decimal such as `0.5`.
    #[arg(long, default_value = "1/2", value_parser = parse_ratio)]
    min_confidence: Ratio<u64>,
}

impl ThresholdArgs {
    fn thresholds(&self) -> Thresholds {
        Thresholds::new(self.min_support, self.min_confidence)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Report every problem in a workflow file.
    Validate {
        #[arg(long)]
        workflow: PathBuf,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Execute a workflow, optionally loading stored intermediates.
    Run {
        #[arg(long)]
        workflow: PathBuf,
        /// Load a stored intermediate in place of a node, as `node=sid`.
        #[arg(long = "load", value_parser = parse_load)]
        loads: Vec<(String, String)>,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        /// Do not persist any outputs.
        #[arg(long)]
        no_persist: bool,
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Mine association rules from an execution history.
    Mine {
        /// History log [default: <store>/history.log].
        #[arg(long)]
        history: Option<PathBuf>,
        #[arg(long, env = STORE_DIR_ENV, default_value = ".flowcache")]
        store: PathBuf,
    },
    /// Check nodes of a workflow for reusable stored data.
    Recommend {
        #[arg(long)]
        workflow: PathBuf,
        /// Node to check [default: every node].
        #[arg(long)]
        node: Option<String>,
        #[command(flatten)]
        store: StoreArgs,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
        #[arg(long, default_value_t = 4)]
        workers: usize,
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Replay a synthetic workload with and without reuse.
    Bench {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        workflows: usize,
        #[command(flatten)]
        thresholds: ThresholdArgs,
        /// Also write the report to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        prefix: usize,
        #[arg(long, default_value_t = 2)]
        tail: usize,
        #[arg(long, default_value_t = 0.0)]
        diamond_ratio: f64,
        #[arg(long, default_value_t = 100)]
        duration_ms: u64,
        #[arg(long, default_value_t = 10)]
        load_delay_ms: u64,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 500.0)]
        apdex_threshold_ms: f64,
    },
}

fn parse_ratio(s: &str) -> Result<Ratio<u64>, String> {
    let bad = || format!("`{s}` is not a fraction in [0, 1]");
    let r = if let Some((n, d)) = s.split_once('/') {
        let n: u64 = n.trim().parse().map_err(|_| bad())?;
        let d: u64 = d.trim().parse().map_err(|_| bad())?;
        if d == 0 {
            return Err(bad());
        }
        Ratio::new(n, d)
    } else if let Some((int, frac)) = s.split_once('.') {
        if frac.is_empty() || frac.len() > 18 || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let den = 10u64.pow(frac.len() as u32);
        let num: u64 = frac.parse().map_err(|_| bad())?;
        Ratio::new(int * den + num, den)
    } else {
        Ratio::from_integer(s.parse().map_err(|_| bad())?)
    };
    if r > Ratio::from_integer(1) {
        return Err(bad());
    }
    Ok(r)
}

fn parse_load(s: &str) -> Result<(String, String), String> {
    match s.split_once('=') {
        Some((n, sid)) if !n.is_empty() && !sid.is_empty() => Ok((n.to_string(), sid.to_string())),
        _ => Err(format!("`{s}` is not of the form node=sid")),
    }
}

fn read_workflow(path: &Path, catalog: &Catalog) -> Result<WorkflowGraph> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    WorkflowGraph::from_json(&text, catalog).with_context(|| format!("parsing {}", path.display()))
}

/// Writes to stdout; a closed pipe (as with `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { workflow, store } => {
            let catalog = store.catalog()?;
            let graph = read_workflow(&workflow, &catalog)?;
            let violations = validate_graph(&graph, &catalog);
            if violations.is_empty() {
                println!("valid");
                return Ok(ExitCode::SUCCESS);
            }
            emit(&violations.iter().map(|v| format!("{v}\n")).collect::<String>())?;
            Ok(ExitCode::FAILURE)
        }
        Command::Run {
            workflow,
            loads,
            workers,
            no_persist,
            store,
            thresholds,
        } => {
            let catalog = Arc::new(store.catalog()?);
            let graph = read_workflow(&workflow, &catalog)?;
            let config = EngineConfig {
                thresholds: thresholds.thresholds(),
                persist: !no_persist,
            };
            let engine = Engine::from_store(catalog, store.open()?, config);
            let outcome = engine.run(&graph, &loads, workers.max(1))?;
            let r = &outcome.record;
            emit(&format!("{}\n", record_line(r)))?;
            eprintln!(
                "run {}: executed {} skipped {} failed {} cancelled {} stored {} in {:.1} ms",
                r.run_id,
                r.count(NodeOutcome::Executed),
                r.count(NodeOutcome::SkippedLoaded),
                r.count(NodeOutcome::Failed),
                r.count(NodeOutcome::Cancelled),
                outcome.stored.len(),
                outcome.wall_time_ms
            );
            for s in &outcome.stored {
                eprintln!("stored {} from {}", s.sid, s.producer.module_id);
            }
            for e in r.node_events.iter().filter_map(|e| e.error.as_ref().map(|m| (&e.node_id, m))) {
                eprintln!("failed {}: {}", e.0, e.1);
            }
            for (p, msg) in &outcome.storage_errors {
                eprintln!("not stored {}.{}: {msg}", p.node_id, p.port);
            }
            Ok(if outcome.succeeded() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Mine { history, store } => {
            let path = history.unwrap_or_else(|| store.join("history.log"));
            let text = match std::fs::read_to_string(&path) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
                Err(e) => return Err(e).with_context(|| format!("reading {}", path.display())),
            };
            let records = parse_history(&text)?;
            emit(&rules_report(&RuleSet::mine(&records)))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Recommend {
            workflow,
            node,
            store,
        } => {
            let catalog = store.catalog()?;
            let graph = read_workflow(&workflow, &catalog)?;
            let store = store.open()?;
            let rules = store.with_records(RuleSet::mine);
            let timing = store.with_records(TimingIndex::from_history);
            let nodes = match node {
                Some(n) => vec![n],
                None => graph.nodes.iter().map(|n| n.node_id.clone()).collect(),
            };
            let mut out = BTreeMap::new();
            for n in nodes {
                let r = check(&graph, &catalog, &n, &rules, &store, &timing)?;
                out.insert(n, r);
            }
            emit(&format!("{}\n", serde_json::to_string_pretty(&out)?))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Serve {
            port,
            host,
            workers,
            store,
            thresholds,
        } => {
            let catalog = store.catalog()?;
            let config = ServiceConfig {
                engine: EngineConfig {
                    thresholds: thresholds.thresholds(),
                    persist: true,
                },
                workers: workers.max(1),
            };
            let state = AppState::new(catalog, store.open()?, config);
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(async {
                let listener = tokio::net::TcpListener::bind(SocketAddr::new(host, port)).await?;
                println!("listening on http://{}", listener.local_addr()?);
                std::io::stdout().flush()?;
                flowcache_service::serve(listener, state).await?;
                anyhow::Ok(())
            })?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            seed,
            workflows,
            thresholds,
            report,
            prefix,
            tail,
            diamond_ratio,
            duration_ms,
            load_delay_ms,
            workers,
            apdex_threshold_ms,
        } => {
            if !(0.0..=1.0).contains(&diamond_ratio) {
                bail!("--diamond-ratio must lie in [0, 1]");
            }
            let spec = WorkloadSpec {
                workflows,
                shared_prefix: prefix,
                tail,
                diamond_ratio,
                duration_ms,
                seed,
                ..WorkloadSpec::default()
            };
            let workload = gen_workload(&spec)?;
            let options = CompareOptions {
                thresholds: thresholds.thresholds(),
                workers: workers.max(1),
                load_delay: Duration::from_millis(load_delay_ms),
                apdex_threshold_ms,
                ..CompareOptions::default()
            };
            let result = bench_compare(&workload, &options)?;
            let text = format!("{}\n{}", result.table(), result.lines());
            emit(&text)?;
            if let Some(path) = report {
                std::fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios_parse_exactly() {
        assert_eq!(parse_ratio("1/2").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_ratio("0.75").unwrap(), Ratio::new(3, 4));
        assert_eq!(parse_ratio(".5").unwrap(), Ratio::new(1, 2));
        assert_eq!(parse_ratio("1").unwrap(), Ratio::from_integer(1));
        assert_eq!(parse_ratio("0").unwrap(), Ratio::from_integer(0));
        for bad in ["3/2", "1/0", "x", "1.5", "0.", "-1", "0.5e1"] {
            assert!(parse_ratio(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn loads_parse() {
        assert_eq!(parse_load("m2=abc").unwrap(), ("m2".into(), "abc".into()));
        assert!(parse_load("m2").is_err());
        assert!(parse_load("=abc").is_err());
    }
}
