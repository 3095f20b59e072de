//! Plans and runs workflow DAGs.
//!
//! A run skips the upstream closure of every selected load, runs the
//! remaining nodes on up to `worker_limit` threads (lowest node id first
//! among ready nodes), appends one [`ExecutionRecord`] and then persists the
//! outputs the storage plan selects.

mod executor;
mod plan;
mod progress;

pub use executor::{apply_transform, run_module, ExecError, ExecutorConfig, ModuleOutput, SyntheticTransform};
pub use plan::{plan, ExecutionPlan, PlanError};
pub use progress::{NodeProgress, NodeRunState, ProgressSnapshot, RunProgress};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, RwLock};
use std::time::Instant;

use thiserror::Error;

use crate::miner::{RuleSet, Thresholds};
use crate::model::{topological_order, Catalog, ModelError, PortRef, Provenance, WorkflowGraph};
use crate::recommend::{storage_plan, StoragePlan};
use crate::store::{
    now_ms, ExecutionRecord, IntermediateDataset, IntermediateMeta, NodeEvent, NodeOutcome,
    Store, StoreError,
};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("plan does not belong to this workflow")]
    PlanMismatch,
    #[error("this engine is already executing a run")]
    Busy,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub thresholds: Thresholds,
    /// Persist outputs selected by the storage plan after each run.
    pub persist: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            thresholds: Thresholds::default(),
            persist: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub record: ExecutionRecord,
    /// Declared outputs that were produced.
    pub outputs: BTreeMap<PortRef, Vec<u8>>,
    pub storage_plan: StoragePlan,
    pub stored: Vec<IntermediateDataset>,
    /// Planned outputs that could not be stored, with the reason.
    pub storage_errors: Vec<(PortRef, String)>,
    pub wall_time_ms: f64,
}

impl RunOutcome {
    pub fn succeeded(&self) -> bool {
        self.record.succeeded()
    }
}

/// Executes workflows against one store and one live rule set. One run at
/// a time per engine; several engines may share a store.
pub struct Engine {
    catalog: Arc<Catalog>,
    store: Arc<Store>,
    rules: Arc<RwLock<RuleSet>>,
    config: EngineConfig,
    busy: AtomicBool,
}

struct BusyGuard<'a>(&'a AtomicBool);

impl Drop for BusyGuard<'_> {
    fn drop(&mut self) {
        self.0.store(false, Ordering::Release);
    }
}

enum Finished {
    Ok { outputs: Vec<Vec<u8>>, exec_ms: f64 },
    Err(String),
}

impl Engine {
    pub fn new(
        catalog: Arc<Catalog>,
        store: Arc<Store>,
        rules: Arc<RwLock<RuleSet>>,
        config: EngineConfig,
    ) -> Self {
        Engine {
            catalog,
            store,
            rules,
            config,
            busy: AtomicBool::new(false),
        }
    }

    /// Engine whose rule set is mined from the store's history.
    pub fn from_store(catalog: Arc<Catalog>, store: Arc<Store>, config: EngineConfig) -> Self {
        let rules = store.with_records(RuleSet::mine);
        Self::new(catalog, store, Arc::new(RwLock::new(rules)), config)
    }

    pub fn rules(&self) -> &Arc<RwLock<RuleSet>> {
        &self.rules
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn catalog(&self) -> &Arc<Catalog> {
        &self.catalog
    }

    pub fn plan(
        &self,
        graph: &WorkflowGraph,
        selections: &[(String, String)],
        worker_limit: usize,
    ) -> Result<ExecutionPlan, PlanError> {
        plan(graph, &self.catalog, selections, &self.store, worker_limit)
    }

    pub fn execute(
        &self,
        plan: &ExecutionPlan,
        graph: &WorkflowGraph,
        progress: Option<&RunProgress>,
    ) -> Result<RunOutcome, EngineError> {
        if self.busy.swap(true, Ordering::AcqRel) {
            return Err(EngineError::Busy);
        }
        let _guard = BusyGuard(&self.busy);
        let result = self.execute_inner(plan, graph, progress);
        if let Some(p) = progress {
            match &result {
                Ok(o) => p.finish(Some(o.record.clone()), None),
                Err(e) => p.finish(None, Some(e.to_string())),
            }
        }
        result
    }

    fn execute_inner(
        &self,
        plan: &ExecutionPlan,
        graph: &WorkflowGraph,
        progress: Option<&RunProgress>,
    ) -> Result<RunOutcome, EngineError> {
        let prov = Provenance::new(graph, &self.catalog)?;
        let order = topological_order(graph).expect("validated graph is acyclic");
        if order != plan.topo_order {
            return Err(EngineError::PlanMismatch);
        }
        for (at, fp) in &plan.load_fingerprints {
            if prov.fingerprint(&at.node_id, &at.port).ok() != Some(*fp) {
                return Err(PlanError::StaleSelection {
                    node_id: at.node_id.clone(),
                    sid: plan.load_bindings.get(at).cloned().unwrap_or_default(),
                }
                .into());
            }
        }

        let clock = Instant::now();
        let offset = |t: Instant| t.duration_since(clock).as_secs_f64() * 1000.0;
        let started_at = now_ms();

        let mut payloads: BTreeMap<PortRef, Arc<Vec<u8>>> = BTreeMap::new();
        let mut events: BTreeMap<String, NodeEvent> = BTreeMap::new();
        let base_event = |node_id: &str, outcome: NodeOutcome| {
            let state = &graph.node(node_id).expect("planned node").state;
            NodeEvent {
                node_id: node_id.to_string(),
                module_id: state.module_id.clone(),
                state: state.digest,
                outcome,
                exec_time_ms: 0.0,
                load_time_ms: 0.0,
                started_ms: 0.0,
                finished_ms: 0.0,
                inputs: prov.input_fingerprints(node_id),
                outputs: Vec::new(),
                error: None,
            }
        };

        // loads
        let mut failed: BTreeSet<String> = BTreeSet::new();
        let mut load_time: BTreeMap<String, f64> = BTreeMap::new();
        let mut load_window: BTreeMap<String, (f64, f64)> = BTreeMap::new();
        for (at, fp) in &plan.load_fingerprints {
            let t0 = Instant::now();
            let res = self.store.get_intermediate(fp);
            let t1 = Instant::now();
            let elapsed = t1.duration_since(t0).as_secs_f64() * 1000.0;
            match res {
                Ok(Some((bytes, _))) => {
                    payloads.insert(at.clone(), Arc::new(bytes));
                    *load_time.entry(at.node_id.clone()).or_default() += elapsed;
                    let w = load_window
                        .entry(at.node_id.clone())
                        .or_insert((offset(t0), offset(t1)));
                    w.1 = offset(t1);
                }
                Ok(None) => {
                    let mut ev = base_event(&at.node_id, NodeOutcome::Failed);
                    ev.error = Some(format!("intermediate {fp} was evicted before loading"));
                    events.insert(at.node_id.clone(), ev);
                    failed.insert(at.node_id.clone());
                }
                Err(e) => {
                    let mut ev = base_event(&at.node_id, NodeOutcome::Failed);
                    ev.error = Some(e.to_string());
                    events.insert(at.node_id.clone(), ev);
                    failed.insert(at.node_id.clone());
                }
            }
        }
        for node in &plan.skip_set {
            if events.contains_key(node) {
                continue;
            }
            let mut ev = base_event(node, NodeOutcome::SkippedLoaded);
            ev.load_time_ms = load_time.get(node).copied().unwrap_or(0.0);
            if let Some((s, f)) = load_window.get(node) {
                ev.started_ms = *s;
                ev.finished_ms = *f;
            }
            ev.outputs = prov
                .output_ports(node)
                .iter()
                .map(|p| prov.fingerprint(node, p).expect("own port"))
                .collect();
            if let Some(p) = progress {
                p.advance(
                    node,
                    NodeProgress {
                        state: NodeRunState::SkippedLoaded,
                        exec_time_ms: Some(0.0),
                        load_time_ms: Some(ev.load_time_ms),
                        error: None,
                    },
                );
            }
            events.insert(node.clone(), ev);
        }

        // scheduling
        let parents = graph.parents();
        let mut waiting: BTreeMap<String, usize> = BTreeMap::new();
        let mut ready: BTreeSet<String> = BTreeSet::new();
        for n in &plan.topo_order {
            if plan.skip_set.contains(n) {
                continue;
            }
            let w = parents[n.as_str()]
                .iter()
                .filter(|p| !plan.skip_set.contains(**p))
                .count();
            if w == 0 {
                ready.insert(n.clone());
            } else {
                waiting.insert(n.clone(), w);
            }
        }
        let children = graph.children();
        let mut cancelled: BTreeSet<String> = BTreeSet::new();
        let cancel_downstream = |node: &str,
                                 cancelled: &mut BTreeSet<String>,
                                 ready: &mut BTreeSet<String>,
                                 waiting: &mut BTreeMap<String, usize>| {
            for d in graph.downstream_closure(node) {
                if d != node && !plan.skip_set.contains(&d) {
                    ready.remove(&d);
                    waiting.remove(&d);
                    cancelled.insert(d);
                }
            }
        };
        for f in failed.clone() {
            cancel_downstream(&f, &mut cancelled, &mut ready, &mut waiting);
        }

        std::thread::scope(|scope| {
            let (tx, rx) = mpsc::channel::<(String, Finished, f64, f64)>();
            let mut running = 0usize;
            loop {
                while running < plan.worker_limit {
                    let Some(node) = ready.pop_first() else { break };
                    let inputs = match self.gather_inputs(graph, &node, &payloads) {
                        Ok(i) => i,
                        Err(msg) => {
                            let mut ev = base_event(&node, NodeOutcome::Failed);
                            ev.error = Some(msg.clone());
                            ev.started_ms = offset(Instant::now());
                            ev.finished_ms = ev.started_ms;
                            events.insert(node.clone(), ev);
                            if let Some(p) = progress {
                                p.advance(&node, failed_progress(msg));
                            }
                            cancel_downstream(&node, &mut cancelled, &mut ready, &mut waiting);
                            continue;
                        }
                    };
                    let state = graph.node(&node).expect("planned node").state.clone();
                    let module = self.catalog.module(&state.module_id).expect("validated module");
                    let executor = module.executor.clone();
                    let n_out = module.output_ports.len();
                    if let Some(p) = progress {
                        p.set_state(&node, NodeRunState::Running);
                    }
                    let tx = tx.clone();
                    running += 1;
                    scope.spawn(move || {
                        let t0 = Instant::now();
                        let result = match run_module(&executor, &inputs, n_out, &state) {
                            Ok(out) => Finished::Ok {
                                outputs: out.outputs,
                                exec_ms: out.exec_time_ms,
                            },
                            Err(e) => Finished::Err(e.to_string()),
                        };
                        let t1 = Instant::now();
                        let _ = tx.send((node, result, offset(t0), offset(t1)));
                    });
                }
                if running == 0 {
                    break;
                }
                let (node, result, s, f) = rx.recv().expect("worker reports back");
                running -= 1;
                match result {
                    Finished::Ok { outputs, exec_ms } => {
                        let mut ev = base_event(&node, NodeOutcome::Executed);
                        ev.exec_time_ms = exec_ms;
                        ev.started_ms = s;
                        ev.finished_ms = f;
                        for (port, bytes) in prov.output_ports(&node).iter().zip(outputs) {
                            ev.outputs.push(prov.fingerprint(&node, port).expect("own port"));
                            payloads.insert(PortRef::new(&node, port), Arc::new(bytes));
                        }
                        events.insert(node.clone(), ev);
                        if let Some(p) = progress {
                            p.advance(
                                &node,
                                NodeProgress {
                                    state: NodeRunState::Executed,
                                    exec_time_ms: Some(exec_ms),
                                    load_time_ms: None,
                                    error: None,
                                },
                            );
                        }
                        for c in &children[node.as_str()] {
                            if let Some(w) = waiting.get_mut(*c) {
                                *w -= 1;
                                if *w == 0 {
                                    waiting.remove(*c);
                                    ready.insert(c.to_string());
                                }
                            }
                        }
                    }
                    Finished::Err(msg) => {
                        let mut ev = base_event(&node, NodeOutcome::Failed);
                        ev.started_ms = s;
                        ev.finished_ms = f;
                        ev.error = Some(msg.clone());
                        events.insert(node.clone(), ev);
                        if let Some(p) = progress {
                            p.advance(&node, failed_progress(msg));
                        }
                        cancel_downstream(&node, &mut cancelled, &mut ready, &mut waiting);
                    }
                }
            }
        });

        for n in &cancelled {
            if !events.contains_key(n) {
                events.insert(n.clone(), base_event(n, NodeOutcome::Cancelled));
                if let Some(p) = progress {
                    p.set_state(n, NodeRunState::Cancelled);
                }
            }
        }

        let mut record = ExecutionRecord::new(plan.run_id.clone(), graph.workflow_id.clone());
        record.started_at = started_at;
        record.node_events = plan
            .topo_order
            .iter()
            .map(|n| events.remove(n).expect("every node has an event"))
            .collect();
        let datasets: BTreeSet<&String> = graph.inputs.iter().map(|b| &b.dataset_id).collect();
        record.input_datasets = datasets.into_iter().cloned().collect();
        record.finished_at = now_ms().max(started_at);

        self.store.append_record(record.clone())?;
        let storage = {
            let mut rules = self.rules.write().unwrap();
            rules.incremental_update(&record);
            if self.config.persist {
                storage_plan(graph, &self.catalog, &rules, &self.config.thresholds, &self.store)?
            } else {
                StoragePlan::default()
            }
        };

        let mut stored = Vec::new();
        let mut storage_errors = Vec::new();
        for entry in &storage.entries {
            let at = PortRef::new(&entry.node_id, &entry.port);
            let Some(bytes) = payloads.get(&at) else {
                continue;
            };
            let meta = IntermediateMeta::describe(
                &prov,
                &entry.node_id,
                &entry.port,
                entry.rule.antecedent.clone(),
                Some(entry.rule.key()),
            )?;
            match self.store.put_intermediate(entry.fingerprint, bytes, meta, false) {
                Ok(e) => stored.push(e),
                Err(e @ (StoreError::Duplicate(_) | StoreError::CapacityExceeded { .. })) => {
                    storage_errors.push((at, e.to_string()))
                }
                Err(e) => return Err(e.into()),
            }
        }

        let outputs = graph
            .outputs
            .iter()
            .filter_map(|o| payloads.get(o).map(|b| (o.clone(), b.as_ref().clone())))
            .collect();
        Ok(RunOutcome {
            record,
            outputs,
            storage_plan: storage,
            stored,
            storage_errors,
            wall_time_ms: clock.elapsed().as_secs_f64() * 1000.0,
        })
    }

    fn gather_inputs(
        &self,
        graph: &WorkflowGraph,
        node: &str,
        payloads: &BTreeMap<PortRef, Arc<Vec<u8>>>,
    ) -> Result<Vec<Vec<u8>>, String> {
        let state = &graph.node(node).expect("planned node").state;
        let module = self.catalog.module(&state.module_id).expect("validated module");
        module
            .input_ports
            .iter()
            .map(|p| {
                if let Some(e) = graph.edges.iter().find(|e| e.to == node && e.to_port == p.name) {
                    return payloads
                        .get(&PortRef::new(&e.from, &e.from_port))
                        .map(|b| b.as_ref().clone())
                        .ok_or_else(|| format!("input `{}` from `{}.{}` unavailable", p.name, e.from, e.from_port));
                }
                let b = graph
                    .inputs
                    .iter()
                    .find(|b| b.node_id == node && b.port == p.name)
                    .expect("validated binding");
                let d = self
                    .catalog
                    .dataset(&b.dataset_id)
                    .expect("validated dataset");
                d.read()
                    .map_err(|e| format!("reading dataset `{}`: {e}", d.dataset_id))
            })
            .collect()
    }

    /// Plans with `selections` and executes in one step.
    pub fn run(
        &self,
        graph: &WorkflowGraph,
        selections: &[(String, String)],
        worker_limit: usize,
    ) -> Result<RunOutcome, EngineError> {
        let plan = self.plan(graph, selections, worker_limit)?;
        self.execute(&plan, graph, None)
    }
}

fn failed_progress(msg: String) -> NodeProgress {
    NodeProgress {
        state: NodeRunState::Failed,
        exec_time_ms: None,
        load_time_ms: None,
        error: Some(msg),
    }
}

/// A record for `graph` as if every node had executed instantly, without
/// running anything.
pub fn dry_run_record(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    run_id: &str,
    finished_at: u64,
) -> Result<ExecutionRecord, ModelError> {
    let prov = Provenance::new(graph, catalog)?;
    let order = topological_order(graph).expect("validated graph is acyclic");
    let mut record = ExecutionRecord::new(run_id, graph.workflow_id.clone());
    record.started_at = finished_at;
    record.finished_at = finished_at;
    record.node_events = order
        .iter()
        .map(|n| {
            let state = &graph.node(n).expect("ordered node").state;
            NodeEvent {
                node_id: n.clone(),
                module_id: state.module_id.clone(),
                state: state.digest,
                outcome: NodeOutcome::Executed,
                exec_time_ms: 0.0,
                load_time_ms: 0.0,
                started_ms: 0.0,
                finished_ms: 0.0,
                inputs: prov.input_fingerprints(n),
                outputs: prov
                    .output_ports(n)
                    .iter()
                    .map(|p| prov.fingerprint(n, p).expect("own port"))
                    .collect(),
                error: None,
            }
        })
        .collect();
    let datasets: BTreeSet<&String> = graph.inputs.iter().map(|b| &b.dataset_id).collect();
    record.input_datasets = datasets.into_iter().cloned().collect();
    Ok(record)
}
