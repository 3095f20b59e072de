//! Reuse suggestions for a workflow under construction, and the storage
//! plan deciding which outputs of a finished run to keep.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::miner::{AssociationRule, RuleSet, Thresholds};
use crate::model::{enumerate_rule_candidates, Catalog, ModelError, Provenance, ToolState, WorkflowGraph};
use crate::store::{ExecutionRecord, NodeOutcome, Store};

#[derive(Debug, Error)]
pub enum RecommendError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("candidate and composed sequences differ in modules")]
    ModuleMismatch,
}

/// Recommendation status of one node in a composition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum NodeStatus {
    #[default]
    NotChecked,
    CheckedNotFound,
    /// Stored data exists for the same modules under different parameters.
    CheckedFound,
    /// Stored data matches the node's upstream exactly.
    LoadData,
}

impl NodeStatus {
    /// Checks only leave `NotChecked`; edits reset to `NotChecked`.
    pub fn can_become(self, next: NodeStatus) -> bool {
        match next {
            NodeStatus::NotChecked => true,
            _ => self == NodeStatus::NotChecked,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            NodeStatus::NotChecked => "Not Checked",
            NodeStatus::CheckedNotFound => "Checked Not Found",
            NodeStatus::CheckedFound => "Checked Found",
            NodeStatus::LoadData => "Load Data",
        }
    }
}

/// A stored intermediate that could replace computing a node's upstream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub target_node: String,
    pub port: String,
    pub sid: String,
    pub fingerprint: Digest,
    pub param_match_pct: u8,
    /// Estimated time to compute the node's upstream from scratch; `None`
    /// when some module has no timing history.
    pub est_exec_time_ms: Option<f64>,
    /// The estimate fell back to module-level means for some state.
    pub estimate_fallback: bool,
    pub load_time_ms: f64,
    pub time_saved_ms: Option<f64>,
    pub load_warning: bool,
    pub rule_confidence: Option<f64>,
    pub created_at: u64,
    /// Parameters whose values differ from the composed workflow, as
    /// `module.param` in closure order.
    pub differing_params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub status: NodeStatus,
    pub suggestions: Vec<Suggestion>,
}

/// Percentage of output-affecting parameters with equal canonical values
/// across two aligned state sequences, rounded half away from zero. A
/// sequence without such parameters matches 100%.
pub fn parameter_match(candidate: &[ToolState], composed: &[ToolState]) -> Result<u8, RecommendError> {
    let (matched, total) = match_counts(candidate, composed)?;
    if total == 0 {
        return Ok(100);
    }
    // round(100 m / t), half away from zero, in integers
    Ok(((200 * matched + total) / (2 * total)) as u8)
}

fn match_counts(candidate: &[ToolState], composed: &[ToolState]) -> Result<(u64, u64), RecommendError> {
    if candidate.len() != composed.len()
        || candidate
            .iter()
            .zip(composed)
            .any(|(a, b)| a.module_id != b.module_id)
    {
        return Err(RecommendError::ModuleMismatch);
    }
    let mut matched = 0u64;
    let mut total = 0u64;
    for (cand, comp) in candidate.iter().zip(composed) {
        for (name, value) in comp.output_params() {
            total += 1;
            if cand.param(name) == Some(value) {
                matched += 1;
            }
        }
    }
    Ok((matched, total))
}

fn differing_params(candidate: &[ToolState], composed: &[ToolState]) -> Vec<String> {
    candidate
        .iter()
        .zip(composed)
        .flat_map(|(cand, comp)| {
            comp.output_params()
                .filter(|(n, v)| cand.param(n) != Some(*v))
                .map(|(n, _)| format!("{}.{}", comp.module_id, n))
                .collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub ms: f64,
    /// Derived from other states of the module rather than this state.
    pub fallback: bool,
}

/// Mean execution times per (module, state) and per module, over executed
/// events only.
#[derive(Debug, Clone, Default)]
pub struct TimingIndex {
    by_state: HashMap<(String, Digest), (f64, u64)>,
    by_module: HashMap<String, (f64, u64)>,
}

impl TimingIndex {
    pub fn from_history(history: &[ExecutionRecord]) -> Self {
        let mut idx = TimingIndex::default();
        for r in history {
            idx.add(r);
        }
        idx
    }

    pub fn add(&mut self, record: &ExecutionRecord) {
        for e in &record.node_events {
            if e.outcome != NodeOutcome::Executed {
                continue;
            }
            let s = self.by_state.entry((e.module_id.clone(), e.state)).or_default();
            s.0 += e.exec_time_ms;
            s.1 += 1;
            let m = self.by_module.entry(e.module_id.clone()).or_default();
            m.0 += e.exec_time_ms;
            m.1 += 1;
        }
    }

    pub fn estimate(&self, module_id: &str, state: &Digest) -> Option<Estimate> {
        if let Some((sum, n)) = self.by_state.get(&(module_id.to_string(), *state)) {
            return Some(Estimate {
                ms: sum / *n as f64,
                fallback: false,
            });
        }
        self.by_module.get(module_id).map(|(sum, n)| Estimate {
            ms: sum / *n as f64,
            fallback: true,
        })
    }
}

/// Mean execution time of a module state from history, falling back to the
/// module's mean over all states.
pub fn estimate_time(module_id: &str, state: &Digest, history: &[ExecutionRecord]) -> Option<Estimate> {
    TimingIndex::from_history(history).estimate(module_id, state)
}

/// Orders suggestions: parameter match descending, then time saved
/// descending (unknown last), then newest first. Stable.
pub fn rank(mut suggestions: Vec<Suggestion>) -> Vec<Suggestion> {
    suggestions.sort_by(|a, b| {
        b.param_match_pct
            .cmp(&a.param_match_pct)
            .then_with(|| match (a.time_saved_ms, b.time_saved_ms) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (Some(_), None) => std::cmp::Ordering::Less,
                (None, Some(_)) => std::cmp::Ordering::Greater,
                (None, None) => std::cmp::Ordering::Equal,
            })
            .then(b.created_at.cmp(&a.created_at))
    });
    suggestions
}

/// Looks for stored intermediates that could stand in for `node_id`'s
/// upstream computation.
pub fn check(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    node_id: &str,
    rules: &RuleSet,
    store: &Store,
    timing: &TimingIndex,
) -> Result<CheckResult, RecommendError> {
    let prov = Provenance::new(graph, catalog)?;
    if graph.node(node_id).is_none() {
        return Err(ModelError::UnknownNode(node_id.to_string()).into());
    }
    let composed = prov.closure_states(node_id)?;

    let mut est_total = Some(0.0);
    let mut fallback = false;
    for s in &composed {
        match (est_total, timing.estimate(&s.module_id, &s.digest)) {
            (Some(t), Some(e)) => {
                est_total = Some(t + e.ms);
                fallback |= e.fallback;
            }
            _ => est_total = None,
        }
    }

    let mut ports: BTreeMap<Digest, (String, Digest)> = BTreeMap::new();
    for p in prov.output_ports(node_id) {
        ports.insert(prov.shape(node_id, p)?, (p.clone(), prov.fingerprint(node_id, p)?));
    }

    let mut suggestions = Vec::new();
    for entry in store.entries() {
        let Some((port, fp)) = ports.get(&entry.shape) else {
            continue;
        };
        // equal fingerprints are the only exact matches
        let pct = match parameter_match(&entry.states, &composed) {
            _ if entry.fingerprint == *fp => 100,
            Ok(pct) => pct.min(99),
            Err(_) => continue,
        };
        let rule_confidence = entry.rule.as_ref().and_then(|k| {
            rules
                .confidence(&k.dataset_id, &k.sequence)
                .ok()
                .map(|r| *r.numer() as f64 / *r.denom() as f64)
        });
        suggestions.push(Suggestion {
            target_node: node_id.to_string(),
            port: port.clone(),
            sid: entry.sid.clone(),
            fingerprint: entry.fingerprint,
            param_match_pct: pct,
            est_exec_time_ms: est_total,
            estimate_fallback: est_total.is_some() && fallback,
            load_time_ms: entry.load_time_ms,
            time_saved_ms: est_total.map(|e| e - entry.load_time_ms),
            load_warning: est_total.is_some_and(|e| entry.load_time_ms > e),
            rule_confidence,
            created_at: entry.created_at,
            differing_params: differing_params(&entry.states, &composed),
        });
    }
    let suggestions = rank(suggestions);
    let status = if suggestions.iter().any(|s| s.param_match_pct == 100) {
        NodeStatus::LoadData
    } else if suggestions.is_empty() {
        NodeStatus::CheckedNotFound
    } else {
        NodeStatus::CheckedFound
    };
    Ok(CheckResult { status, suggestions })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageEntry {
    pub node_id: String,
    pub port: String,
    pub fingerprint: Digest,
    pub rule: AssociationRule,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoragePlan {
    pub entries: Vec<StorageEntry>,
}

impl StoragePlan {
    pub fn fingerprints(&self) -> std::collections::BTreeSet<Digest> {
        self.entries.iter().map(|e| e.fingerprint).collect()
    }
}

/// Outputs of `graph` worth persisting: a node qualifies when some
/// dataset-anchored path ending at it has a rule meeting `thresholds`;
/// each of its output ports without a live stored entry is planned.
pub fn storage_plan(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    rules: &RuleSet,
    thresholds: &Thresholds,
    store: &Store,
) -> Result<StoragePlan, ModelError> {
    let prov = Provenance::new(graph, catalog)?;
    let mut best: BTreeMap<String, AssociationRule> = BTreeMap::new();
    for cand in enumerate_rule_candidates(graph, catalog)? {
        let Some(rule) = rules.rule(&crate::miner::RuleKey::new(cand.dataset_id.clone(), cand.sequence.clone())) else {
            continue;
        };
        if !thresholds.admits(&rule) {
            continue;
        }
        let node = cand.last_node().to_string();
        let better = match best.get(&node) {
            None => true,
            Some(cur) => (rule.confidence, rule.support) > (cur.confidence, cur.support),
        };
        if better {
            best.insert(node, rule);
        }
    }
    let mut entries = Vec::new();
    for (node, rule) in best {
        for port in prov.output_ports(&node) {
            let fp = prov.fingerprint(&node, port)?;
            if store.contains(&fp) {
                continue;
            }
            entries.push(StorageEntry {
                node_id: node.clone(),
                port: port.clone(),
                fingerprint: fp,
                reason: format!(
                    "support {} >= {}, confidence {}/{} >= {}/{}",
                    rule.support,
                    thresholds.min_support,
                    rule.confidence.numer(),
                    rule.confidence.denom(),
                    thresholds.min_confidence.numer(),
                    thresholds.min_confidence.denom()
                ),
                rule: rule.clone(),
            });
        }
    }
    Ok(StoragePlan { entries })
}

#[cfg(test)]
mod tests;
