use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{Catalog, Edge, WorkflowGraph};

/// One problem found in a workflow graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateNode { node_id: String },
    UnknownModule { node_id: String, module_id: String },
    /// The node's parameters do not cover exactly the module's schema.
    StateMismatch { node_id: String },
    /// Nodes forming one strongly connected component, sorted.
    Cycle { nodes: Vec<String> },
    DanglingEdge { edge: Edge, reason: String },
    UnboundInput { node_id: String, port: String },
    MultiplyBound { node_id: String, port: String, count: usize },
    FormatMismatch {
        node_id: String,
        port: String,
        expected: String,
        found: String,
    },
    UnknownDataset { node_id: String, port: String, dataset_id: String },
    DanglingBinding { node_id: String, port: String },
    UnknownOutput { node_id: String, port: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateNode { node_id } => write!(f, "duplicate node `{node_id}`"),
            Violation::UnknownModule { node_id, module_id } => {
                write!(f, "node `{node_id}` uses unknown module `{module_id}`")
            }
            Violation::StateMismatch { node_id } => {
                write!(f, "node `{node_id}` parameters do not match its module schema")
            }
            Violation::Cycle { nodes } => write!(f, "cycle through {{{}}}", nodes.join(",")),
            Violation::DanglingEdge { edge, reason } => write!(
                f,
                "edge {}.{} -> {}.{}: {reason}",
                edge.from, edge.from_port, edge.to, edge.to_port
            ),
            Violation::UnboundInput { node_id, port } => {
                write!(f, "input `{node_id}.{port}` is not bound")
            }
            Violation::MultiplyBound {
                node_id,
                port,
                count,
            } => write!(f, "input `{node_id}.{port}` is bound {count} times"),
            Violation::FormatMismatch {
                node_id,
                port,
                expected,
                found,
            } => write!(
                f,
                "input `{node_id}.{port}` accepts `{expected}` but receives `{found}`"
            ),
            Violation::UnknownDataset {
                node_id,
                port,
                dataset_id,
            } => write!(f, "input `{node_id}.{port}` bound to unknown dataset `{dataset_id}`"),
            Violation::DanglingBinding { node_id, port } => {
                write!(f, "dataset binding targets missing input `{node_id}.{port}`")
            }
            Violation::UnknownOutput { node_id, port } => {
                write!(f, "declared output `{node_id}.{port}` does not exist")
            }
        }
    }
}

/// Audits a graph against the catalog. An empty list means the graph is valid.
pub fn validate_graph(graph: &WorkflowGraph, catalog: &Catalog) -> Vec<Violation> {
    let mut out = Vec::new();

    let mut modules = BTreeMap::new();
    for n in &graph.nodes {
        if modules.contains_key(n.node_id.as_str()) {
            out.push(Violation::DuplicateNode {
                node_id: n.node_id.clone(),
            });
            continue;
        }
        match catalog.module(&n.state.module_id) {
            Some(m) => {
                let schema: BTreeSet<&str> = m.param_schema.iter().map(|p| p.name.as_str()).collect();
                let have: BTreeSet<&str> = n.state.params.keys().map(String::as_str).collect();
                let kinds_ok = m
                    .param_schema
                    .iter()
                    .all(|p| n.state.params.get(&p.name).is_some_and(|v| v.conforms_to(&p.kind)));
                if schema != have || !kinds_ok {
                    out.push(Violation::StateMismatch {
                        node_id: n.node_id.clone(),
                    });
                }
                modules.insert(n.node_id.as_str(), Some(m));
            }
            None => {
                out.push(Violation::UnknownModule {
                    node_id: n.node_id.clone(),
                    module_id: n.state.module_id.clone(),
                });
                modules.insert(n.node_id.as_str(), None);
            }
        }
    }

    // (node, input port) -> number of sources
    let mut bound: BTreeMap<(&str, &str), usize> = BTreeMap::new();

    for e in &graph.edges {
        let (Some(from), Some(to)) = (modules.get(e.from.as_str()), modules.get(e.to.as_str()))
        else {
            let missing = if !modules.contains_key(e.from.as_str()) {
                &e.from
            } else {
                &e.to
            };
            out.push(Violation::DanglingEdge {
                edge: e.clone(),
                reason: format!("no node `{missing}`"),
            });
            continue;
        };
        let (Some(from), Some(to)) = (from, to) else {
            continue;
        };
        let Some(src) = from.output_port(&e.from_port) else {
            out.push(Violation::DanglingEdge {
                edge: e.clone(),
                reason: format!("`{}` has no output port `{}`", e.from, e.from_port),
            });
            continue;
        };
        let Some(dst) = to.input_port(&e.to_port) else {
            out.push(Violation::DanglingEdge {
                edge: e.clone(),
                reason: format!("`{}` has no input port `{}`", e.to, e.to_port),
            });
            continue;
        };
        if src.format != dst.format {
            out.push(Violation::FormatMismatch {
                node_id: e.to.clone(),
                port: e.to_port.clone(),
                expected: dst.format.clone(),
                found: src.format.clone(),
            });
        }
        *bound.entry((e.to.as_str(), e.to_port.as_str())).or_default() += 1;
    }

    for b in &graph.inputs {
        let Some(Some(m)) = modules.get(b.node_id.as_str()) else {
            out.push(Violation::DanglingBinding {
                node_id: b.node_id.clone(),
                port: b.port.clone(),
            });
            continue;
        };
        let Some(port) = m.input_port(&b.port) else {
            out.push(Violation::DanglingBinding {
                node_id: b.node_id.clone(),
                port: b.port.clone(),
            });
            continue;
        };
        match catalog.dataset(&b.dataset_id) {
            None => out.push(Violation::UnknownDataset {
                node_id: b.node_id.clone(),
                port: b.port.clone(),
                dataset_id: b.dataset_id.clone(),
            }),
            Some(d) if d.format != port.format => out.push(Violation::FormatMismatch {
                node_id: b.node_id.clone(),
                port: b.port.clone(),
                expected: port.format.clone(),
                found: d.format.clone(),
            }),
            Some(_) => {}
        }
        *bound.entry((b.node_id.as_str(), b.port.as_str())).or_default() += 1;
    }

    for n in &graph.nodes {
        let Some(Some(m)) = modules.get(n.node_id.as_str()) else {
            continue;
        };
        for p in &m.input_ports {
            match bound.get(&(n.node_id.as_str(), p.name.as_str())).copied().unwrap_or(0) {
                0 => out.push(Violation::UnboundInput {
                    node_id: n.node_id.clone(),
                    port: p.name.clone(),
                }),
                1 => {}
                count => out.push(Violation::MultiplyBound {
                    node_id: n.node_id.clone(),
                    port: p.name.clone(),
                    count,
                }),
            }
        }
    }

    for o in &graph.outputs {
        let ok = matches!(modules.get(o.node_id.as_str()), Some(Some(m)) if m.output_port(&o.port).is_some());
        if !ok {
            out.push(Violation::UnknownOutput {
                node_id: o.node_id.clone(),
                port: o.port.clone(),
            });
        }
    }

    for scc in cyclic_components(graph) {
        out.push(Violation::Cycle { nodes: scc });
    }
    out
}

/// Strongly connected components that contain a cycle (size > 1 or a
/// self-loop), each sorted, ordered by first member.
fn cyclic_components(graph: &WorkflowGraph) -> Vec<Vec<String>> {
    let children = graph.children();
    let ids: Vec<&str> = children.keys().copied().collect();
    let index_of: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, n)| (*n, i)).collect();
    let adj: Vec<Vec<usize>> = ids
        .iter()
        .map(|n| children[n].iter().filter_map(|c| index_of.get(c).copied()).collect())
        .collect();

    struct Tarjan<'a> {
        adj: &'a [Vec<usize>],
        index: Vec<Option<usize>>,
        low: Vec<usize>,
        on_stack: Vec<bool>,
        stack: Vec<usize>,
        next: usize,
        comps: Vec<Vec<usize>>,
    }

    impl Tarjan<'_> {
        fn visit(&mut self, v: usize) {
            self.index[v] = Some(self.next);
            self.low[v] = self.next;
            self.next += 1;
            self.stack.push(v);
            self.on_stack[v] = true;
            for i in 0..self.adj[v].len() {
                let w = self.adj[v][i];
                match self.index[w] {
                    None => {
                        self.visit(w);
                        self.low[v] = self.low[v].min(self.low[w]);
                    }
                    Some(iw) if self.on_stack[w] => self.low[v] = self.low[v].min(iw),
                    Some(_) => {}
                }
            }
            if Some(self.low[v]) == self.index[v] {
                let mut comp = Vec::new();
                while let Some(w) = self.stack.pop() {
                    self.on_stack[w] = false;
                    comp.push(w);
                    if w == v {
                        break;
                    }
                }
                self.comps.push(comp);
            }
        }
    }

    let n = ids.len();
    let mut t = Tarjan {
        adj: &adj,
        index: vec![None; n],
        low: vec![0; n],
        on_stack: vec![false; n],
        stack: Vec::new(),
        next: 0,
        comps: Vec::new(),
    };
    for v in 0..n {
        if t.index[v].is_none() {
            t.visit(v);
        }
    }
    let mut cyclic: Vec<Vec<String>> = t
        .comps
        .into_iter()
        .filter(|c| c.len() > 1 || adj[c[0]].contains(&c[0]))
        .map(|c| {
            let mut names: Vec<String> = c.into_iter().map(|i| ids[i].to_string()).collect();
            names.sort();
            names
        })
        .collect();
    cyclic.sort();
    cyclic
}

/// Kahn's algorithm, lowest node id first among ready nodes. Returns the
/// nodes left over when the graph has a cycle.
pub fn topological_order(graph: &WorkflowGraph) -> Result<Vec<String>, Vec<String>> {
    let parents = graph.parents();
    let children = graph.children();
    let mut indegree: BTreeMap<&str, usize> =
        parents.iter().map(|(n, ps)| (*n, ps.len())).collect();
    let mut ready: BTreeSet<&str> = indegree
        .iter()
        .filter(|(_, d)| **d == 0)
        .map(|(n, _)| *n)
        .collect();
    let mut order = Vec::with_capacity(indegree.len());
    while let Some(n) = ready.pop_first() {
        order.push(n.to_string());
        for c in &children[n] {
            let d = indegree.get_mut(c).expect("child is a node");
            *d -= 1;
            if *d == 0 {
                ready.insert(c);
            }
        }
    }
    if order.len() == indegree.len() {
        Ok(order)
    } else {
        let done: BTreeSet<&str> = order.iter().map(String::as_str).collect();
        Err(indegree
            .keys()
            .filter(|n| !done.contains(*n))
            .map(|n| n.to_string())
            .collect())
    }
}
