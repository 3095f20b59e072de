use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use super::apdex::{apdex, Apdex, DEFAULT_APDEX_THRESHOLD_MS};
use super::workload::Workload;
use crate::engine::{Engine, EngineConfig, EngineError};
use crate::miner::{RuleSet, Thresholds};
use crate::model::{Catalog, WorkflowGraph};
use crate::recommend::{check, CheckResult, RecommendError, TimingIndex};
use crate::store::{NodeOutcome, Store, StoreConfig, StoreError, DEFAULT_CAPACITY};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
    #[error("workflow `{0}` failed during replay")]
    RunFailed(String),
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub thresholds: Thresholds,
    pub workers: usize,
    /// Added to every store load, to model slower storage.
    pub load_delay: Duration,
    pub capacity: u64,
    pub apdex_threshold_ms: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            thresholds: Thresholds::default(),
            workers: 1,
            load_delay: Duration::ZERO,
            capacity: DEFAULT_CAPACITY,
            apdex_threshold_ms: DEFAULT_APDEX_THRESHOLD_MS,
        }
    }
}

/// Totals for one replay of a workload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmReport {
    pub label: String,
    /// Check requests plus one execute request and one job dispatch per
    /// executed module, per workflow.
    pub request_count: u64,
    pub module_executions: u64,
    pub skipped_modules: u64,
    pub loads: u64,
    /// Sum of per-workflow response times (check plus execute).
    pub total_time_ms: f64,
    pub avg_response_ms: f64,
    pub throughput_per_s: f64,
    /// Bytes read back from the store.
    pub bytes_in: u64,
    /// Bytes persisted to the store.
    pub bytes_out: u64,
    pub total_load_time_ms: f64,
    pub response_times_ms: Vec<f64>,
    /// Module executions per workflow, in replay order.
    pub executions_per_workflow: Vec<u64>,
    #[serde(skip)]
    pub apdex: Apdex,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub with_reuse: ArmReport,
    pub without_reuse: ArmReport,
}

impl BenchReport {
    /// `module_executions(with) / module_executions(without)`.
    pub fn execution_ratio(&self) -> f64 {
        ratio(self.with_reuse.module_executions as f64, self.without_reuse.module_executions as f64)
    }

    pub fn request_ratio(&self) -> f64 {
        ratio(self.with_reuse.request_count as f64, self.without_reuse.request_count as f64)
    }

    pub fn time_saved_ms(&self) -> f64 {
        self.without_reuse.total_time_ms - self.with_reuse.total_time_ms
    }

    /// Aligned plain-text table.
    pub fn table(&self) -> String {
        let (a, b) = (&self.with_reuse, &self.without_reuse);
        let mut out = String::new();
        let _ = writeln!(out, "{:<22}{:>16}{:>16}{:>12}", "metric", a.label, b.label, "ratio");
        let rows: [(&str, f64, f64); 10] = [
            ("requests", a.request_count as f64, b.request_count as f64),
            ("module executions", a.module_executions as f64, b.module_executions as f64),
            ("skipped modules", a.skipped_modules as f64, b.skipped_modules as f64),
            ("loads", a.loads as f64, b.loads as f64),
            ("total time (ms)", a.total_time_ms, b.total_time_ms),
            ("avg response (ms)", a.avg_response_ms, b.avg_response_ms),
            ("throughput (req/s)", a.throughput_per_s, b.throughput_per_s),
            ("bytes in", a.bytes_in as f64, b.bytes_in as f64),
            ("bytes out", a.bytes_out as f64, b.bytes_out as f64),
            ("load time (ms)", a.total_load_time_ms, b.total_load_time_ms),
        ];
        for (name, x, y) in rows {
            let r = if y == 0.0 { "-".to_string() } else { format!("{:.3}", x / y) };
            let _ = writeln!(out, "{name:<22}{x:>16.1}{y:>16.1}{r:>12}");
        }
        let _ = writeln!(out, "{:<22}{:>16}{:>16}{:>12}", "apdex", a.apdex.to_string(), b.apdex.to_string(), "-");
        out
    }

    /// One `arm key=value ...` line per arm.
    pub fn lines(&self) -> String {
        let mut out = String::new();
        for arm in [&self.with_reuse, &self.without_reuse] {
            let _ = writeln!(
                out,
                "arm={} requests={} module_executions={} skipped={} loads={} total_time_ms={:.3} avg_response_ms={:.3} throughput_per_s={:.3} bytes_in={} bytes_out={} load_time_ms={:.3} apdex={}",
                arm.label,
                arm.request_count,
                arm.module_executions,
                arm.skipped_modules,
                arm.loads,
                arm.total_time_ms,
                arm.avg_response_ms,
                arm.throughput_per_s,
                arm.bytes_in,
                arm.bytes_out,
                arm.total_load_time_ms,
                arm.apdex,
            );
        }
        out
    }
}

fn ratio(x: f64, y: f64) -> f64 {
    if y == 0.0 {
        1.0
    } else {
        x / y
    }
}

/// Checks every node of `graph`.
pub fn check_all(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    rules: &RuleSet,
    store: &Store,
    timing: &TimingIndex,
) -> Result<Vec<(String, CheckResult)>, RecommendError> {
    graph
        .nodes
        .iter()
        .map(|n| Ok((n.node_id.clone(), check(graph, catalog, &n.node_id, rules, store, timing)?)))
        .collect()
}

/// Picks exact (100%) suggestions to load: for each node with one, the
/// most recent per output port, keeping only nodes not upstream of another
/// picked node.
pub fn auto_select(graph: &WorkflowGraph, results: &[(String, CheckResult)]) -> Vec<(String, String)> {
    let exact: BTreeSet<&str> = results
        .iter()
        .filter(|(_, r)| r.suggestions.iter().any(|s| s.param_match_pct == 100))
        .map(|(n, _)| n.as_str())
        .collect();
    let covered: BTreeSet<String> = exact
        .iter()
        .flat_map(|n| graph.upstream_closure(n).into_iter().filter(move |a| a != n))
        .collect();
    let mut out = Vec::new();
    for (node, r) in results {
        if !exact.contains(node.as_str()) || covered.contains(node) {
            continue;
        }
        let mut ports = BTreeSet::new();
        for s in r.suggestions.iter().filter(|s| s.param_match_pct == 100) {
            if ports.insert(s.port.clone()) {
                out.push((node.clone(), s.sid.clone()));
            }
        }
    }
    out
}

/// Replays `workload` against a fresh store. With `reuse`, every workflow
/// is checked first, exact matches are loaded and frequent outputs
/// persisted; without it, every module runs and nothing is stored.
pub fn replay(workload: &Workload, reuse: bool, options: &CompareOptions) -> Result<ArmReport, BenchError> {
    let dir = tempfile::tempdir()?;
    let store = Arc::new(Store::open(
        dir.path(),
        StoreConfig {
            capacity: options.capacity,
            load_delay: options.load_delay,
        },
    )?);
    let engine = Engine::new(
        Arc::new(workload.catalog.clone()),
        Arc::clone(&store),
        Arc::new(RwLock::new(RuleSet::new())),
        EngineConfig {
            thresholds: options.thresholds,
            persist: reuse,
        },
    );
    let mut timing = TimingIndex::default();
    let mut arm = ArmReport {
        label: if reuse { "with-reuse" } else { "without-reuse" }.to_string(),
        request_count: 0,
        module_executions: 0,
        skipped_modules: 0,
        loads: 0,
        total_time_ms: 0.0,
        avg_response_ms: 0.0,
        throughput_per_s: 0.0,
        bytes_in: 0,
        bytes_out: 0,
        total_load_time_ms: 0.0,
        response_times_ms: Vec::new(),
        executions_per_workflow: Vec::new(),
        apdex: apdex(&[0.0], 1.0).expect("valid placeholder"),
    };
    for graph in &workload.workflows {
        let start = Instant::now();
        let mut selections = Vec::new();
        if reuse {
            let rules = engine.rules().read().unwrap().clone();
            let results = check_all(graph, &workload.catalog, &rules, &store, &timing)?;
            arm.request_count += results.len() as u64;
            selections = auto_select(graph, &results);
        }
        let plan = loop {
            match engine.plan(graph, &selections, options.workers) {
                Ok(p) => break p,
                Err(_) if !selections.is_empty() => {
                    selections.pop();
                }
                Err(e) => return Err(EngineError::from(e).into()),
            }
        };
        arm.bytes_in += plan
            .load_bindings
            .values()
            .filter_map(|sid| store.entry_by_sid(sid))
            .map(|e| e.size_bytes)
            .sum::<u64>();
        let outcome = engine.execute(&plan, graph, None)?;
        let elapsed = start.elapsed().as_secs_f64() * 1000.0;
        if !outcome.succeeded() {
            return Err(BenchError::RunFailed(graph.workflow_id.clone()));
        }
        timing.add(&outcome.record);
        let executed = outcome.record.count(NodeOutcome::Executed) as u64;
        arm.request_count += 1 + executed;
        arm.module_executions += executed;
        arm.executions_per_workflow.push(executed);
        arm.skipped_modules += outcome.record.count(NodeOutcome::SkippedLoaded) as u64;
        arm.loads += plan.load_bindings.len() as u64;
        arm.total_load_time_ms += outcome.record.node_events.iter().map(|e| e.load_time_ms).sum::<f64>();
        arm.bytes_out += outcome.stored.iter().map(|e| e.size_bytes).sum::<u64>();
        arm.total_time_ms += elapsed;
        arm.response_times_ms.push(elapsed);
    }
    let n = workload.workflows.len().max(1) as f64;
    arm.avg_response_ms = arm.total_time_ms / n;
    arm.throughput_per_s = if arm.total_time_ms > 0.0 {
        arm.request_count as f64 / (arm.total_time_ms / 1000.0)
    } else {
        0.0
    };
    if !arm.response_times_ms.is_empty() {
        arm.apdex = apdex(&arm.response_times_ms, options.apdex_threshold_ms)
            .expect("measured times are finite and non-negative");
    }
    Ok(arm)
}

/// Replays `workload` with and without reuse, each on a clean store.
pub fn bench_compare(workload: &Workload, options: &CompareOptions) -> Result<BenchReport, BenchError> {
    Ok(BenchReport {
        with_reuse: replay(workload, true, options)?,
        without_reuse: replay(workload, false, options)?,
    })
}
