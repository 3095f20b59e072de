//! Workflow data model: modules, tool states, graphs, validation and
//! provenance fingerprints.

mod candidates;
mod catalog;
mod graph;
mod provenance;
mod state;
mod validate;
mod value;

pub use candidates::{enumerate_rule_candidates, RuleCandidate, StateStep};
pub use catalog::{Catalog, DatasetRef, ModuleSpec, ParamSpec, Port};
pub use graph::{Edge, InputBinding, Node, PortRef, WorkflowFile, WorkflowGraph, WorkflowNodeFile};
pub use provenance::{dataset_fingerprint, fingerprint, Provenance};
pub use state::{canonical_state, canonical_state_json, ToolState};
pub use validate::{topological_order, validate_graph, Violation};
pub use value::{ParamValue, ValueKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("unknown module `{0}`")]
    UnknownModule(String),
    #[error("unknown dataset `{0}`")]
    UnknownDataset(String),
    #[error("module `{module}` has no parameter `{param}`")]
    UnknownParam { module: String, param: String },
    #[error("parameter `{param}` of module `{module}` expects {expected}, got {got}")]
    KindMismatch {
        module: String,
        param: String,
        expected: String,
        got: String,
    },
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("node `{node}` has no port `{port}`")]
    UnknownPort { node: String, port: String },
    #[error("duplicate identifier `{0}`")]
    Duplicate(String),
    #[error("invalid module definition `{module}`: {reason}")]
    BadModule { module: String, reason: String },
    #[error("workflow is invalid: {}", summarize(.0))]
    InvalidGraph(Vec<Violation>),
    #[error("malformed document: {0}")]
    Parse(#[from] serde_json::Error),
}

fn summarize(v: &[Violation]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join("; ")
}
