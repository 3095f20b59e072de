use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::Digest;
use crate::model::{topological_order, Catalog, ModelError, PortRef, Provenance, WorkflowGraph};
use crate::store::Store;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no stored intermediate with sid `{0}`")]
    UnknownSid(String),
    #[error("selection `{sid}` no longer matches node `{node_id}` (the workflow changed since it was checked)")]
    StaleSelection { node_id: String, sid: String },
    #[error("selection leaves `{node_id}.{port}` unavailable but `{consumer}` needs it")]
    MissingSiblingOutput {
        node_id: String,
        port: String,
        consumer: String,
    },
}

/// Which nodes run, which are satisfied by loads, and in what order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionPlan {
    pub run_id: String,
    pub topo_order: Vec<String>,
    pub skip_set: BTreeSet<String>,
    /// Loaded port -> stored intermediate sid.
    pub load_bindings: BTreeMap<PortRef, String>,
    /// Loaded port -> fingerprint at plan time.
    pub load_fingerprints: BTreeMap<PortRef, Digest>,
    pub worker_limit: usize,
}

/// Builds an execution plan. Each selection `(node, sid)` must name a live
/// intermediate whose fingerprint equals one of the node's output
/// fingerprints in `graph`. The node is skipped, and so is every ancestor
/// whose outputs are no longer needed by anything that runs.
pub fn plan(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    selections: &[(String, String)],
    store: &Store,
    worker_limit: usize,
) -> Result<ExecutionPlan, PlanError> {
    let prov = Provenance::new(graph, catalog)?;
    let topo_order = topological_order(graph).expect("validated graph is acyclic");

    let mut load_bindings = BTreeMap::new();
    let mut load_fingerprints = BTreeMap::new();
    let mut selected = BTreeSet::new();
    let mut candidates = BTreeSet::new();
    for (node_id, sid) in selections {
        if graph.node(node_id).is_none() {
            return Err(ModelError::UnknownNode(node_id.clone()).into());
        }
        let entry = store
            .entry_by_sid(sid)
            .ok_or_else(|| PlanError::UnknownSid(sid.clone()))?;
        let port = prov
            .output_ports(node_id)
            .iter()
            .find(|p| prov.fingerprint(node_id, p).ok() == Some(entry.fingerprint))
            .ok_or_else(|| PlanError::StaleSelection {
                node_id: node_id.clone(),
                sid: sid.clone(),
            })?;
        let at = PortRef::new(node_id, port);
        load_fingerprints.insert(at.clone(), entry.fingerprint);
        load_bindings.insert(at, sid.clone());
        selected.insert(node_id.clone());
        candidates.extend(graph.upstream_closure(node_id));
    }

    // Children first: an ancestor of a selection is skipped only when every
    // use of its outputs is satisfied without running it.
    let mut skip_set: BTreeSet<String> = BTreeSet::new();
    let satisfied = |skip: &BTreeSet<String>, node: &str, port: &str, consumer: Option<&str>| {
        load_bindings.contains_key(&PortRef::new(node, port)) || consumer.is_some_and(|c| skip.contains(c))
    };
    for node in topo_order.iter().rev() {
        if !candidates.contains(node) {
            continue;
        }
        let uses_ok = graph
            .edges
            .iter()
            .filter(|e| &e.from == node)
            .all(|e| satisfied(&skip_set, node, &e.from_port, Some(&e.to)))
            && graph
                .outputs
                .iter()
                .filter(|o| &o.node_id == node)
                .all(|o| satisfied(&skip_set, node, &o.port, None));
        if uses_ok {
            skip_set.insert(node.clone());
            continue;
        }
        if selected.contains(node) {
            let (port, consumer) = graph
                .edges
                .iter()
                .filter(|e| &e.from == node)
                .find(|e| !satisfied(&skip_set, node, &e.from_port, Some(&e.to)))
                .map(|e| (e.from_port.clone(), e.to.clone()))
                .or_else(|| {
                    graph
                        .outputs
                        .iter()
                        .find(|o| &o.node_id == node && !satisfied(&skip_set, node, &o.port, None))
                        .map(|o| (o.port.clone(), "declared outputs".to_string()))
                })
                .expect("an unsatisfied use exists");
            return Err(PlanError::MissingSiblingOutput {
                node_id: node.clone(),
                port,
                consumer,
            });
        }
    }

    Ok(ExecutionPlan {
        run_id: format!("run-{}", uuid::Uuid::new_v4().simple()),
        topo_order,
        skip_set,
        load_bindings,
        load_fingerprints,
        worker_limit: worker_limit.max(1),
    })
}
