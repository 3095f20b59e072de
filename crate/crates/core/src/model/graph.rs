use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{canonical_state_json, Catalog, ModelError, ToolState};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub node_id: String,
    pub state: ToolState,
}

/// Directed dataflow edge from an output port to an input port.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub from: String,
    pub from_port: String,
    pub to: String,
    pub to_port: String,
}

impl Edge {
    pub fn new(from: &str, from_port: &str, to: &str, to_port: &str) -> Self {
        Edge {
            from: from.into(),
            from_port: from_port.into(),
            to: to.into(),
            to_port: to_port.into(),
        }
    }
}

/// Binds a raw dataset to a node's input port.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBinding {
    pub node_id: String,
    pub port: String,
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortRef {
    pub node_id: String,
    pub port: String,
}

impl PortRef {
    pub fn new(node_id: &str, port: &str) -> Self {
        PortRef {
            node_id: node_id.into(),
            port: port.into(),
        }
    }
}

/// A workflow: module instances, dataflow edges, dataset bindings and
/// declared outputs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowGraph {
    pub workflow_id: String,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub inputs: Vec<InputBinding>,
    pub outputs: Vec<PortRef>,
}

impl WorkflowGraph {
    pub fn new(workflow_id: impl Into<String>) -> Self {
        WorkflowGraph {
            workflow_id: workflow_id.into(),
            nodes: Vec::new(),
            edges: Vec::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn node(&self, node_id: &str) -> Option<&Node> {
        self.nodes.iter().find(|n| n.node_id == node_id)
    }

    pub fn node_mut(&mut self, node_id: &str) -> Option<&mut Node> {
        self.nodes.iter_mut().find(|n| n.node_id == node_id)
    }

    pub fn add_node(&mut self, node_id: impl Into<String>, state: ToolState) -> &mut Self {
        self.nodes.push(Node {
            node_id: node_id.into(),
            state,
        });
        self
    }

    pub fn connect(&mut self, from: &str, from_port: &str, to: &str, to_port: &str) -> &mut Self {
        self.edges.push(Edge::new(from, from_port, to, to_port));
        self
    }

    pub fn bind(&mut self, node_id: &str, port: &str, dataset_id: &str) -> &mut Self {
        self.inputs.push(InputBinding {
            node_id: node_id.into(),
            port: port.into(),
            dataset_id: dataset_id.into(),
        });
        self
    }

    pub fn declare_output(&mut self, node_id: &str, port: &str) -> &mut Self {
        self.outputs.push(PortRef::new(node_id, port));
        self
    }

    /// Direct predecessors of each node, deduplicated and sorted.
    pub fn parents(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> =
            self.nodes.iter().map(|n| (n.node_id.as_str(), Vec::new())).collect();
        for e in &self.edges {
            if let Some(v) = map.get_mut(e.to.as_str()) {
                if !v.contains(&e.from.as_str()) {
                    v.push(e.from.as_str());
                }
            }
        }
        for v in map.values_mut() {
            v.sort_unstable();
        }
        map
    }

    /// Direct successors of each node, deduplicated and sorted.
    pub fn children(&self) -> BTreeMap<&str, Vec<&str>> {
        let mut map: BTreeMap<&str, Vec<&str>> =
            self.nodes.iter().map(|n| (n.node_id.as_str(), Vec::new())).collect();
        for e in &self.edges {
            if let Some(v) = map.get_mut(e.from.as_str()) {
                if !v.contains(&e.to.as_str()) {
                    v.push(e.to.as_str());
                }
            }
        }
        for v in map.values_mut() {
            v.sort_unstable();
        }
        map
    }

    /// `node_id` and all of its ancestors.
    pub fn upstream_closure(&self, node_id: &str) -> std::collections::BTreeSet<String> {
        let parents = self.parents();
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![node_id];
        while let Some(n) = stack.pop() {
            if seen.insert(n.to_string()) {
                if let Some(ps) = parents.get(n) {
                    stack.extend(ps.iter().copied());
                }
            }
        }
        seen
    }

    /// `node_id` and all of its descendants.
    pub fn downstream_closure(&self, node_id: &str) -> std::collections::BTreeSet<String> {
        let children = self.children();
        let mut seen = std::collections::BTreeSet::new();
        let mut stack = vec![node_id];
        while let Some(n) = stack.pop() {
            if seen.insert(n.to_string()) {
                if let Some(cs) = children.get(n) {
                    stack.extend(cs.iter().copied());
                }
            }
        }
        seen
    }

    /// Parses a workflow document and canonicalizes every node's state.
    pub fn from_json(text: &str, catalog: &Catalog) -> Result<Self, ModelError> {
        let file: WorkflowFile = serde_json::from_str(text)?;
        Self::from_file(file, catalog)
    }

    pub fn from_file(file: WorkflowFile, catalog: &Catalog) -> Result<Self, ModelError> {
        let mut g = WorkflowGraph::new(file.workflow_id);
        for n in file.nodes {
            let module = catalog
                .module(&n.module_id)
                .ok_or_else(|| ModelError::UnknownModule(n.module_id.clone()))?;
            let state = canonical_state_json(module, &n.params)?;
            g.add_node(n.node_id, state);
        }
        g.edges = file.edges;
        g.inputs = file.inputs;
        g.outputs = file.outputs;
        Ok(g)
    }

    pub fn to_file(&self) -> WorkflowFile {
        WorkflowFile {
            workflow_id: self.workflow_id.clone(),
            nodes: self
                .nodes
                .iter()
                .map(|n| WorkflowNodeFile {
                    node_id: n.node_id.clone(),
                    module_id: n.state.module_id.clone(),
                    params: n
                        .state
                        .params
                        .iter()
                        .map(|(k, v)| (k.clone(), v.to_json()))
                        .collect(),
                })
                .collect(),
            edges: self.edges.clone(),
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("workflow serializes")
    }
}

/// On-disk workflow document. Field names are part of the file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowFile {
    pub workflow_id: String,
    pub nodes: Vec<WorkflowNodeFile>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub inputs: Vec<InputBinding>,
    #[serde(default)]
    pub outputs: Vec<PortRef>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowNodeFile {
    pub node_id: String,
    pub module_id: String,
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
}
