use std::collections::BTreeMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::store::ExecutionRecord;

/// Live state of one node during a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeRunState {
    Pending,
    Running,
    Executed,
    SkippedLoaded,
    Failed,
    Cancelled,
}

impl NodeRunState {
    pub fn is_terminal(self) -> bool {
        !matches!(self, NodeRunState::Pending | NodeRunState::Running)
    }

    fn rank(self) -> u8 {
        match self {
            NodeRunState::Pending => 0,
            NodeRunState::Running => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeProgress {
    pub state: NodeRunState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exec_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load_time_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProgressSnapshot {
    pub run_id: String,
    pub finished: bool,
    pub nodes: BTreeMap<String, NodeProgress>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<ExecutionRecord>,
}

/// Shared, monotonically advancing view of a run for status polling.
#[derive(Debug)]
pub struct RunProgress {
    inner: Mutex<ProgressSnapshot>,
}

impl RunProgress {
    pub fn new(run_id: &str, nodes: impl IntoIterator<Item = String>) -> Self {
        let nodes = nodes
            .into_iter()
            .map(|n| {
                (
                    n,
                    NodeProgress {
                        state: NodeRunState::Pending,
                        exec_time_ms: None,
                        load_time_ms: None,
                        error: None,
                    },
                )
            })
            .collect();
        RunProgress {
            inner: Mutex::new(ProgressSnapshot {
                run_id: run_id.to_string(),
                finished: false,
                nodes,
                error: None,
                record: None,
            }),
        }
    }

    /// Moves a node forward. Backward or terminal-to-terminal moves are ignored.
    pub fn advance(&self, node: &str, update: NodeProgress) {
        let mut s = self.inner.lock().unwrap();
        if let Some(cur) = s.nodes.get_mut(node) {
            if update.state.rank() > cur.state.rank() {
                *cur = update;
            }
        }
    }

    pub fn set_state(&self, node: &str, state: NodeRunState) {
        self.advance(
            node,
            NodeProgress {
                state,
                exec_time_ms: None,
                load_time_ms: None,
                error: None,
            },
        );
    }

    pub fn finish(&self, record: Option<ExecutionRecord>, error: Option<String>) {
        let mut s = self.inner.lock().unwrap();
        if s.finished {
            return;
        }
        if error.is_some() {
            for n in s.nodes.values_mut() {
                if !n.state.is_terminal() {
                    n.state = NodeRunState::Cancelled;
                }
            }
        }
        s.finished = true;
        s.record = record;
        s.error = error;
    }

    pub fn snapshot(&self) -> ProgressSnapshot {
        self.inner.lock().unwrap().clone()
    }

    pub fn is_finished(&self) -> bool {
        self.inner.lock().unwrap().finished
    }
}
