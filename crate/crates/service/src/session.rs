//! Composition sessions: a mutable draft workflow with per-node check
//! results and selected loads.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use flowcache_core::engine::{Engine, PlanError, ProgressSnapshot, RunProgress};
use flowcache_core::miner::RuleSet;
use flowcache_core::model::{
    canonical_state_json, validate_graph, Catalog, Edge, InputBinding, ModelError, PortRef,
    Violation, WorkflowFile, WorkflowGraph, WorkflowNodeFile,
};
use flowcache_core::recommend::{self, CheckResult, NodeStatus, RecommendError, Suggestion, TimingIndex};
use flowcache_core::store::Store;
use flowcache_core::Digest;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{0}` already exists")]
    DuplicateNode(String),
    #[error("no such edge {}.{} -> {}.{}", .0.from, .0.from_port, .0.to, .0.to_port)]
    UnknownEdge(Edge),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("edit rejected: {}", summarize(.0))]
    Rejected(Vec<Violation>),
    #[error("draft is invalid: {}", summarize(.0))]
    InvalidDraft(Vec<Violation>),
    #[error("`{sid}` is not a current suggestion for node `{node_id}`")]
    StaleSuggestion { node_id: String, sid: String },
    #[error("`{sid}` matches node `{node_id}` only {pct}%; only exact matches can be loaded")]
    PartialMatch { node_id: String, sid: String, pct: u8 },
    #[error("run `{0}` of this session is still in progress")]
    Busy(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Recommend(#[from] RecommendError),
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}

/// One asynchronous run and, once done, digests of its declared outputs.
#[derive(Debug)]
pub struct RunHandle {
    pub progress: RunProgress,
    outputs: Mutex<Option<BTreeMap<String, Digest>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunView {
    #[serde(flatten)]
    pub progress: ProgressSnapshot,
    /// SHA-256 of each declared output produced, keyed `node.port`.
    pub outputs: BTreeMap<String, Digest>,
}

impl RunHandle {
    pub fn new(run_id: &str, nodes: impl IntoIterator<Item = String>) -> Self {
        RunHandle {
            progress: RunProgress::new(run_id, nodes),
            outputs: Mutex::new(None),
        }
    }

    pub fn run_id(&self) -> String {
        self.progress.snapshot().run_id
    }

    /// Finished only once the engine returned and outputs are recorded.
    pub fn is_finished(&self) -> bool {
        self.outputs.lock().unwrap().is_some()
    }

    pub fn view(&self) -> RunView {
        let mut progress = self.progress.snapshot();
        let outputs = self.outputs.lock().unwrap().clone();
        progress.finished &= outputs.is_some();
        RunView {
            progress,
            outputs: outputs.unwrap_or_default(),
        }
    }

    fn complete(&self, outputs: BTreeMap<String, Digest>) {
        *self.outputs.lock().unwrap() = Some(outputs);
    }
}

/// Snapshot of a session as returned by every session endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub workflow: WorkflowFile,
    pub status: BTreeMap<String, NodeStatus>,
    pub suggestions: BTreeMap<String, Vec<Suggestion>>,
    pub loads: BTreeMap<String, String>,
    pub violations: Vec<Violation>,
    pub active_run: Option<String>,
    pub runs: Vec<String>,
}

pub struct Session {
    id: String,
    graph: WorkflowGraph,
    status: BTreeMap<String, NodeStatus>,
    suggestions: BTreeMap<String, Vec<Suggestion>>,
    loads: BTreeMap<String, String>,
    active_run: Option<Arc<RunHandle>>,
    runs: Vec<String>,
    engine: Arc<Engine>,
}

impl Session {
    pub fn new(id: String, graph: WorkflowGraph, engine: Arc<Engine>) -> Self {
        let status = graph
            .nodes
            .iter()
            .map(|n| (n.node_id.clone(), NodeStatus::NotChecked))
            .collect();
        Session {
            id,
            graph,
            status,
            suggestions: BTreeMap::new(),
            loads: BTreeMap::new(),
            active_run: None,
            runs: Vec::new(),
            engine,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn graph(&self) -> &WorkflowGraph {
        &self.graph
    }

    fn catalog(&self) -> &Catalog {
        self.engine.catalog()
    }

    pub fn violations(&self) -> Vec<Violation> {
        validate_graph(&self.graph, self.catalog())
    }

    pub fn view(&self) -> SessionView {
        SessionView {
            session_id: self.id.clone(),
            workflow: self.graph.to_file(),
            status: self.status.clone(),
            suggestions: self.suggestions.clone(),
            loads: self.loads.clone(),
            violations: self.violations(),
            active_run: self
                .active_run
                .as_ref()
                .filter(|r| !r.is_finished())
                .map(|r| r.run_id()),
            runs: self.runs.clone(),
        }
    }

    fn require_node(&self, node_id: &str) -> Result<(), SessionError> {
        match self.graph.node(node_id) {
            Some(_) => Ok(()),
            None => Err(SessionError::UnknownNode(node_id.to_string())),
        }
    }

    /// Forgets checks and loads of `nodes`.
    fn reset(&mut self, nodes: impl IntoIterator<Item = String>) {
        for n in nodes {
            if let Some(s) = self.status.get_mut(&n) {
                *s = NodeStatus::NotChecked;
            }
            self.suggestions.remove(&n);
            self.loads.remove(&n);
        }
    }

    /// Applies `edit` to a copy of the draft and commits it unless it adds
    /// violations.
    fn try_edit(&mut self, edit: impl FnOnce(&mut WorkflowGraph)) -> Result<(), SessionError> {
        let before = self.violations();
        let mut draft = self.graph.clone();
        edit(&mut draft);
        let added: Vec<Violation> = validate_graph(&draft, self.catalog())
            .into_iter()
            .filter(|v| !before.contains(v))
            .collect();
        if !added.is_empty() {
            return Err(SessionError::Rejected(added));
        }
        self.graph = draft;
        Ok(())
    }

    pub fn add_node(&mut self, node: WorkflowNodeFile) -> Result<(), SessionError> {
        if self.graph.node(&node.node_id).is_some() {
            return Err(SessionError::DuplicateNode(node.node_id));
        }
        let module = self
            .catalog()
            .module(&node.module_id)
            .ok_or_else(|| SessionError::UnknownModule(node.module_id.clone()))?;
        let state = canonical_state_json(module, &node.params)?;
        self.status.insert(node.node_id.clone(), NodeStatus::NotChecked);
        self.graph.add_node(node.node_id, state);
        Ok(())
    }

    /// Removes a node with its edges, bindings and declared outputs.
    pub fn remove_node(&mut self, node_id: &str) -> Result<(), SessionError> {
        self.require_node(node_id)?;
        let affected = self.graph.downstream_closure(node_id);
        let g = &mut self.graph;
        g.nodes.retain(|n| n.node_id != node_id);
        g.edges.retain(|e| e.from != node_id && e.to != node_id);
        g.inputs.retain(|b| b.node_id != node_id);
        g.outputs.retain(|o| o.node_id != node_id);
        self.status.remove(node_id);
        self.reset(affected);
        Ok(())
    }

    /// Replaces a node's parameters; omitted parameters take defaults.
    pub fn set_params(
        &mut self,
        node_id: &str,
        params: &serde_json::Map<String, serde_json::Value>,
    ) -> Result<(), SessionError> {
        let module_id = match self.graph.node(node_id) {
            Some(n) => n.state.module_id.clone(),
            None => return Err(SessionError::UnknownNode(node_id.to_string())),
        };
        let module = self
            .catalog()
            .module(&module_id)
            .ok_or(SessionError::UnknownModule(module_id))?;
        let state = canonical_state_json(module, params)?;
        self.graph.node_mut(node_id).expect("checked above").state = state;
        let affected = self.graph.downstream_closure(node_id);
        self.reset(affected);
        Ok(())
    }

    pub fn connect(&mut self, edge: Edge) -> Result<(), SessionError> {
        let to = edge.to.clone();
        self.try_edit(|g| g.edges.push(edge))?;
        let affected = self.graph.downstream_closure(&to);
        self.reset(affected);
        Ok(())
    }

    pub fn disconnect(&mut self, edge: &Edge) -> Result<(), SessionError> {
        let Some(i) = self.graph.edges.iter().position(|e| e == edge) else {
            return Err(SessionError::UnknownEdge(edge.clone()));
        };
        let affected = self.graph.downstream_closure(&edge.to);
        self.graph.edges.remove(i);
        self.reset(affected);
        Ok(())
    }

    /// Binds a dataset to an input port, replacing any earlier binding of
    /// that port.
    pub fn bind_input(&mut self, binding: InputBinding) -> Result<(), SessionError> {
        let node_id = binding.node_id.clone();
        self.try_edit(|g| {
            g.inputs
                .retain(|b| !(b.node_id == binding.node_id && b.port == binding.port));
            g.inputs.push(binding);
        })?;
        let affected = self.graph.downstream_closure(&node_id);
        self.reset(affected);
        Ok(())
    }

    pub fn declare_output(&mut self, port: PortRef) -> Result<(), SessionError> {
        if self.graph.outputs.contains(&port) {
            return Ok(());
        }
        self.try_edit(|g| g.outputs.push(port))
    }

    fn require_valid(&self) -> Result<(), SessionError> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(SessionError::InvalidDraft(v))
        }
    }

    pub fn check(
        &mut self,
        node_id: &str,
        rules: &RuleSet,
        store: &Store,
        timing: &TimingIndex,
    ) -> Result<CheckResult, SessionError> {
        self.require_valid()?;
        self.require_node(node_id)?;
        let result = recommend::check(&self.graph, self.catalog(), node_id, rules, store, timing)?;
        self.status.insert(node_id.to_string(), result.status);
        self.suggestions
            .insert(node_id.to_string(), result.suggestions.clone());
        if let Some(sid) = self.loads.get(node_id) {
            if !result.suggestions.iter().any(|s| &s.sid == sid && s.param_match_pct == 100) {
                self.loads.remove(node_id);
            }
        }
        Ok(result)
    }

    pub fn check_all(
        &mut self,
        rules: &RuleSet,
        store: &Store,
        timing: &TimingIndex,
    ) -> Result<BTreeMap<String, CheckResult>, SessionError> {
        self.require_valid()?;
        let ids: Vec<String> = self.graph.nodes.iter().map(|n| n.node_id.clone()).collect();
        let mut out = BTreeMap::new();
        for id in ids {
            let r = self.check(&id, rules, store, timing)?;
            out.insert(id, r);
        }
        Ok(out)
    }

    /// Selects an exact suggestion from the node's latest check.
    pub fn select_load(&mut self, node_id: &str, sid: &str) -> Result<(), SessionError> {
        self.require_node(node_id)?;
        let suggestion = self
            .suggestions
            .get(node_id)
            .and_then(|ss| ss.iter().find(|s| s.sid == sid))
            .ok_or_else(|| SessionError::StaleSuggestion {
                node_id: node_id.to_string(),
                sid: sid.to_string(),
            })?;
        if suggestion.param_match_pct != 100 {
            return Err(SessionError::PartialMatch {
                node_id: node_id.to_string(),
                sid: sid.to_string(),
                pct: suggestion.param_match_pct,
            });
        }
        self.loads.insert(node_id.to_string(), sid.to_string());
        Ok(())
    }

    pub fn clear_load(&mut self, node_id: &str) -> Result<(), SessionError> {
        self.require_node(node_id)?;
        self.loads.remove(node_id);
        Ok(())
    }

    /// Plans the current draft with the selected loads and starts it on a
    /// background thread.
    pub fn execute(&mut self, workers: usize) -> Result<Arc<RunHandle>, SessionError> {
        if let Some(run) = self.active_run.as_ref().filter(|r| !r.is_finished()) {
            return Err(SessionError::Busy(run.run_id()));
        }
        self.require_valid()?;
        let selections: Vec<(String, String)> =
            self.loads.iter().map(|(n, s)| (n.clone(), s.clone())).collect();
        let plan = self.engine.plan(&self.graph, &selections, workers)?;
        let handle = Arc::new(RunHandle::new(&plan.run_id, plan.topo_order.iter().cloned()));
        let graph = self.graph.clone();
        let engine = self.engine.clone();
        let run = handle.clone();
        std::thread::spawn(move || {
            let result = catch_unwind(AssertUnwindSafe(|| {
                engine.execute(&plan, &graph, Some(&run.progress))
            }));
            let outputs = match result {
                Ok(Ok(outcome)) => outcome
                    .outputs
                    .iter()
                    .map(|(p, bytes)| (format!("{}.{}", p.node_id, p.port), Digest::of(bytes)))
                    .collect(),
                Ok(Err(_)) => BTreeMap::new(),
                Err(_) => {
                    run.progress.finish(None, Some("run aborted".into()));
                    BTreeMap::new()
                }
            };
            run.complete(outputs);
        });
        self.runs.push(handle.run_id());
        self.active_run = Some(handle.clone());
        Ok(handle)
    }
}
