use std::collections::BTreeMap;

use super::{topological_order, validate_graph, Catalog, ModelError, ToolState, WorkflowGraph};
use crate::digest::{CanonicalHasher, Digest};

/// Digest identifying the raw dataset `dataset_id` as a dataflow value.
pub fn dataset_fingerprint(dataset_id: &str) -> Digest {
    let mut h = CanonicalHasher::new("flowcache/dataset/v1");
    h.str(dataset_id);
    h.finish()
}

#[derive(Debug, Clone)]
enum Source {
    Edge { from: String, from_port: String },
    Dataset(String),
}

/// Provenance digests for every node and output port of a valid graph.
///
/// Each node's digest is a Merkle hash over its module id, its
/// output-affecting tool state and, per input port in declaration order,
/// the digest of whatever feeds that port. A port fingerprint hashes the
/// node digest with the port name. Node ids never enter a digest, so two
/// workflows that build the same upstream computation under different
/// names or insertion orders agree on every fingerprint.
///
/// The *shape* digests follow the same recursion without tool states;
/// entries with equal shapes differ only in parameters.
#[derive(Debug, Clone)]
pub struct Provenance {
    node_digest: BTreeMap<String, Digest>,
    shape_digest: BTreeMap<String, Digest>,
    /// node -> ordered (input port, source)
    sources: BTreeMap<String, Vec<(String, Source)>>,
    output_ports: BTreeMap<String, Vec<String>>,
    states: BTreeMap<String, ToolState>,
}

impl Provenance {
    pub fn new(graph: &WorkflowGraph, catalog: &Catalog) -> Result<Self, ModelError> {
        let violations = validate_graph(graph, catalog);
        if !violations.is_empty() {
            return Err(ModelError::InvalidGraph(violations));
        }
        let order = topological_order(graph).expect("validated graph is acyclic");

        let mut sources: BTreeMap<String, Vec<(String, Source)>> = BTreeMap::new();
        let mut output_ports = BTreeMap::new();
        let mut states = BTreeMap::new();
        for n in &graph.nodes {
            let module = catalog.module(&n.state.module_id).expect("validated module");
            let ports = module
                .input_ports
                .iter()
                .map(|p| {
                    let src = graph
                        .edges
                        .iter()
                        .find(|e| e.to == n.node_id && e.to_port == p.name)
                        .map(|e| Source::Edge {
                            from: e.from.clone(),
                            from_port: e.from_port.clone(),
                        })
                        .or_else(|| {
                            graph
                                .inputs
                                .iter()
                                .find(|b| b.node_id == n.node_id && b.port == p.name)
                                .map(|b| Source::Dataset(b.dataset_id.clone()))
                        })
                        .expect("validated port is bound");
                    (p.name.clone(), src)
                })
                .collect();
            sources.insert(n.node_id.clone(), ports);
            output_ports.insert(
                n.node_id.clone(),
                module.output_ports.iter().map(|p| p.name.clone()).collect(),
            );
            states.insert(n.node_id.clone(), n.state.clone());
        }

        let mut node_digest = BTreeMap::new();
        let mut shape_digest = BTreeMap::new();
        for id in &order {
            let state = &states[id];
            let mut full = CanonicalHasher::new("flowcache/node/v1");
            let mut shape = CanonicalHasher::new("flowcache/shape/v1");
            full.str(&state.module_id).digest(&state.result_digest());
            shape.str(&state.module_id);
            for (port, src) in &sources[id] {
                full.str(port);
                shape.str(port);
                match src {
                    Source::Edge { from, from_port } => {
                        full.str("edge").digest(&node_digest[from]).str(from_port);
                        shape.str("edge").digest(&shape_digest[from]).str(from_port);
                    }
                    Source::Dataset(d) => {
                        let fp = dataset_fingerprint(d);
                        full.str("data").digest(&fp);
                        shape.str("data").digest(&fp);
                    }
                }
            }
            node_digest.insert(id.clone(), full.finish());
            shape_digest.insert(id.clone(), shape.finish());
        }

        Ok(Provenance {
            node_digest,
            shape_digest,
            sources,
            output_ports,
            states,
        })
    }

    fn check_port(&self, node_id: &str, port: &str) -> Result<(), ModelError> {
        let ports = self
            .output_ports
            .get(node_id)
            .ok_or_else(|| ModelError::UnknownNode(node_id.to_string()))?;
        if !ports.iter().any(|p| p == port) {
            return Err(ModelError::UnknownPort {
                node: node_id.to_string(),
                port: port.to_string(),
            });
        }
        Ok(())
    }

    /// Fingerprint of the value produced at `node_id.port`.
    pub fn fingerprint(&self, node_id: &str, port: &str) -> Result<Digest, ModelError> {
        self.check_port(node_id, port)?;
        let mut h = CanonicalHasher::new("flowcache/output/v1");
        h.digest(&self.node_digest[node_id]).str(port);
        Ok(h.finish())
    }

    /// Parameter-free structural digest of `node_id.port`.
    pub fn shape(&self, node_id: &str, port: &str) -> Result<Digest, ModelError> {
        self.check_port(node_id, port)?;
        let mut h = CanonicalHasher::new("flowcache/output-shape/v1");
        h.digest(&self.shape_digest[node_id]).str(port);
        Ok(h.finish())
    }

    pub fn output_ports(&self, node_id: &str) -> &[String] {
        self.output_ports.get(node_id).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Fingerprints of everything `node_id` consumes, in input-port order.
    pub fn input_fingerprints(&self, node_id: &str) -> Vec<Digest> {
        self.sources
            .get(node_id)
            .into_iter()
            .flatten()
            .map(|(_, src)| match src {
                Source::Edge { from, from_port } => self
                    .fingerprint(from, from_port)
                    .expect("validated edge source"),
                Source::Dataset(d) => dataset_fingerprint(d),
            })
            .collect()
    }

    /// The upstream closure of `node_id` in canonical order: post-order
    /// depth-first, visiting input ports in declaration order. The order
    /// depends only on graph structure, never on node names.
    pub fn closure_order(&self, node_id: &str) -> Result<Vec<String>, ModelError> {
        if !self.sources.contains_key(node_id) {
            return Err(ModelError::UnknownNode(node_id.to_string()));
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        self.post_order(node_id, &mut seen, &mut out);
        Ok(out)
    }

    fn post_order(
        &self,
        node_id: &str,
        seen: &mut std::collections::BTreeSet<String>,
        out: &mut Vec<String>,
    ) {
        if !seen.insert(node_id.to_string()) {
            return;
        }
        for (_, src) in &self.sources[node_id] {
            if let Source::Edge { from, .. } = src {
                self.post_order(from, seen, out);
            }
        }
        out.push(node_id.to_string());
    }

    /// Tool states of the upstream closure in [`Provenance::closure_order`].
    pub fn closure_states(&self, node_id: &str) -> Result<Vec<ToolState>, ModelError> {
        Ok(self
            .closure_order(node_id)?
            .iter()
            .map(|n| self.states[n].clone())
            .collect())
    }

    pub fn state(&self, node_id: &str) -> Option<&ToolState> {
        self.states.get(node_id)
    }
}

/// Fingerprint of one output port.
pub fn fingerprint(
    graph: &WorkflowGraph,
    catalog: &Catalog,
    node_id: &str,
    port: &str,
) -> Result<Digest, ModelError> {
    Provenance::new(graph, catalog)?.fingerprint(node_id, port)
}
