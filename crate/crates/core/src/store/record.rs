use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::digest::{Digest, DIGEST_ALGORITHM};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeOutcome {
    Executed,
    SkippedLoaded,
    Failed,
    /// Not run because an upstream node failed.
    Cancelled,
}

impl NodeOutcome {
    /// Whether the node's outputs existed during the run.
    pub fn produced(self) -> bool {
        matches!(self, NodeOutcome::Executed | NodeOutcome::SkippedLoaded)
    }
}

/// What happened to one node during a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEvent {
    pub node_id: String,
    pub module_id: String,
    /// Tool-state digest of the node.
    pub state: Digest,
    pub outcome: NodeOutcome,
    pub exec_time_ms: f64,
    pub load_time_ms: f64,
    /// Offsets from the run start, milliseconds.
    pub started_ms: f64,
    pub finished_ms: f64,
    /// Fingerprints consumed, input-port order. Raw datasets appear as
    /// their dataset fingerprint.
    pub inputs: Vec<Digest>,
    /// Fingerprints produced, output-port order.
    pub outputs: Vec<Digest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// One workflow run, as appended to the history log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionRecord {
    pub run_id: String,
    pub workflow_id: String,
    pub digest_alg: String,
    /// Wall clock, milliseconds since the Unix epoch.
    pub started_at: u64,
    pub finished_at: u64,
    pub node_events: Vec<NodeEvent>,
    pub input_datasets: Vec<String>,
}

impl ExecutionRecord {
    pub fn new(run_id: impl Into<String>, workflow_id: impl Into<String>) -> Self {
        ExecutionRecord {
            run_id: run_id.into(),
            workflow_id: workflow_id.into(),
            digest_alg: DIGEST_ALGORITHM.to_string(),
            started_at: 0,
            finished_at: 0,
            node_events: Vec::new(),
            input_datasets: Vec::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.node_events.iter().all(|e| e.outcome.produced())
    }

    pub fn count(&self, outcome: NodeOutcome) -> usize {
        self.node_events.iter().filter(|e| e.outcome == outcome).count()
    }

    /// Checks the record's internal invariants.
    pub fn check(&self) -> Result<(), String> {
        if self.run_id.is_empty() {
            return Err("empty run_id".into());
        }
        if self.finished_at < self.started_at {
            return Err("finished_at precedes started_at".into());
        }
        let mut seen_nodes = BTreeSet::new();
        let all_outputs: BTreeSet<Digest> = self
            .node_events
            .iter()
            .flat_map(|e| e.outputs.iter().copied())
            .collect();
        let mut produced = BTreeSet::new();
        for e in &self.node_events {
            if !seen_nodes.insert(&e.node_id) {
                return Err(format!("node `{}` appears twice", e.node_id));
            }
            for (name, v) in [("exec_time_ms", e.exec_time_ms), ("load_time_ms", e.load_time_ms)] {
                if !(v.is_finite() && v >= 0.0) {
                    return Err(format!("node `{}`: {name} = {v}", e.node_id));
                }
            }
            if e.outcome == NodeOutcome::SkippedLoaded && e.exec_time_ms != 0.0 {
                return Err(format!("node `{}`: skipped node with exec time", e.node_id));
            }
            if e
                .inputs
                .iter()
                .any(|i| all_outputs.contains(i) && !produced.contains(i))
            {
                return Err(format!(
                    "node `{}` precedes the producer of one of its inputs",
                    e.node_id
                ));
            }
            produced.extend(e.outputs.iter().copied());
        }
        Ok(())
    }
}
