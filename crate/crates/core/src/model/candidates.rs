use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{Catalog, ModelError, Provenance, WorkflowGraph};
use crate::digest::Digest;

/// One module occurrence in a state-qualified sequence.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateStep {
    pub module_id: String,
    pub state: Digest,
}

/// A dataset together with one path that starts at a node consuming it.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RuleCandidate {
    pub dataset_id: String,
    /// Node ids along the path, source first.
    pub path: Vec<String>,
    /// `(module, state)` of each node on the path.
    pub sequence: Vec<StateStep>,
}

impl RuleCandidate {
    pub fn last_node(&self) -> &str {
        self.path.last().expect("candidate paths are non-empty")
    }
}

/// Every path prefix reachable from each dataset binding, once each, sorted
/// by dataset then node path.
pub fn enumerate_rule_candidates(
    graph: &WorkflowGraph,
    catalog: &Catalog,
) -> Result<Vec<RuleCandidate>, ModelError> {
    // validation only; digests are not needed here
    Provenance::new(graph, catalog)?;
    let children = graph.children();
    let mut found: BTreeSet<(String, Vec<String>)> = BTreeSet::new();

    fn walk<'g>(
        node: &'g str,
        children: &std::collections::BTreeMap<&'g str, Vec<&'g str>>,
        path: &mut Vec<&'g str>,
        dataset: &str,
        found: &mut BTreeSet<(String, Vec<String>)>,
    ) {
        path.push(node);
        found.insert((dataset.to_string(), path.iter().map(|s| s.to_string()).collect()));
        for c in &children[node] {
            walk(c, children, path, dataset, found);
        }
        path.pop();
    }

    for b in &graph.inputs {
        walk(&b.node_id, &children, &mut Vec::new(), &b.dataset_id, &mut found);
    }

    Ok(found
        .into_iter()
        .map(|(dataset_id, path)| {
            let sequence = path
                .iter()
                .map(|n| {
                    let s = &graph.node(n).expect("path node exists").state;
                    StateStep {
                        module_id: s.module_id.clone(),
                        state: s.digest,
                    }
                })
                .collect();
            RuleCandidate {
                dataset_id,
                path,
                sequence,
            }
        })
        .collect())
}
