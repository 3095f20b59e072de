use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::engine::{ExecutorConfig, SyntheticTransform};
use crate::model::{
    canonical_state, Catalog, DatasetRef, ModuleSpec, ParamSpec, ParamValue, Port, ToolState,
    WorkflowGraph,
};

pub const BLOB: &str = "blob";

/// A synthetic module with ports `in0..`, `out0..` and int params `p0..`
/// defaulting to 0.
pub fn synthetic_module(
    id: &str,
    inputs: usize,
    outputs: usize,
    params: usize,
    duration_ms: u64,
    transform: SyntheticTransform,
) -> ModuleSpec {
    ModuleSpec {
        id: id.to_string(),
        input_ports: (0..inputs).map(|i| Port::new(format!("in{i}"), BLOB)).collect(),
        output_ports: (0..outputs).map(|i| Port::new(format!("out{i}"), BLOB)).collect(),
        param_schema: (0..params).map(|i| ParamSpec::int(format!("p{i}"), 0)).collect(),
        executor: ExecutorConfig::synthetic(duration_ms, transform),
        source_ref: format!("synthetic:{id}"),
    }
}

/// State of `module` with int params `p0..` set from `values`.
pub fn int_state(module: &ModuleSpec, values: &[i64]) -> ToolState {
    let o: BTreeMap<String, ParamValue> = module
        .param_schema
        .iter()
        .zip(values)
        .map(|(p, v)| (p.name.clone(), ParamValue::Int(*v)))
        .collect();
    canonical_state(module, &o).expect("int params fit the synthetic schema")
}

/// Catalog for random DAGs: `src`/`step` (1 in, 1 out), `join` (2 in),
/// `split` (2 out), `mix` (2 in, 2 out), all concat-digest with the given
/// delay, plus `datasets` inline raw datasets `D1..`.
pub fn random_dag_catalog(duration_ms: u64, datasets: usize) -> Catalog {
    let mut c = Catalog::new();
    let t = SyntheticTransform::ConcatDigest;
    for m in [
        synthetic_module("src", 1, 1, 2, duration_ms, t),
        synthetic_module("step", 1, 1, 1, duration_ms, t),
        synthetic_module("join", 2, 1, 1, duration_ms, t),
        synthetic_module("split", 1, 2, 2, duration_ms, t),
        synthetic_module("mix", 2, 2, 3, duration_ms, t),
    ] {
        c.add_module(m).expect("fresh catalog");
    }
    for d in 1..=datasets {
        c.add_dataset(DatasetRef::inline(format!("D{d}"), BLOB, &format!("raw-{d}")))
            .expect("fresh catalog");
    }
    c
}

/// Random valid DAG with between 1 and `max_nodes` nodes. Node `vNN` only
/// reads from lower-numbered nodes or raw datasets, so the graph is
/// acyclic. Params take values in `0..param_variants`. Every output port of
/// every sink is declared.
pub fn random_dag(
    rng: &mut impl Rng,
    catalog: &Catalog,
    max_nodes: usize,
    param_variants: i64,
) -> WorkflowGraph {
    let kinds = ["src", "step", "join", "split", "mix"];
    let datasets: Vec<String> = catalog.datasets().map(|d| d.dataset_id.clone()).collect();
    let n = rng.gen_range(1..=max_nodes.max(1));
    let mut g = WorkflowGraph::new(format!("rand-{}", rng.gen::<u32>()));
    for i in 0..n {
        let kind = if i == 0 { "src" } else { kinds[rng.gen_range(0..kinds.len())] };
        let module = catalog.module(kind).expect("random catalog module");
        let values: Vec<i64> = (0..module.param_schema.len())
            .map(|_| rng.gen_range(0..param_variants.max(1)))
            .collect();
        let id = format!("v{i:02}");
        g.add_node(id.clone(), int_state(module, &values));
        for port in &module.input_ports {
            if i == 0 || rng.gen_bool(0.15) {
                let d = &datasets[rng.gen_range(0..datasets.len())];
                g.bind(&id, &port.name, d);
            } else {
                let j = rng.gen_range(0..i);
                let from = g.nodes[j].node_id.clone();
                let fm = catalog.module(&g.nodes[j].state.module_id).expect("known module");
                let fp = fm.output_ports[rng.gen_range(0..fm.output_ports.len())].name.clone();
                g.connect(&from, &fp, &id, &port.name);
            }
        }
    }
    let children = g.children();
    let sinks: Vec<String> = children
        .iter()
        .filter(|(_, c)| c.is_empty())
        .map(|(n, _)| n.to_string())
        .collect();
    for s in sinks {
        let module = catalog
            .module(&g.node(&s).expect("sink exists").state.module_id)
            .expect("known module");
        for p in &module.output_ports {
            g.declare_output(&s, &p.name);
        }
    }
    g
}

/// Parameters of a generated benchmark workload.
#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub workflows: usize,
    /// Leading modules shared by every workflow, always at default params.
    pub shared_prefix: usize,
    /// Modules after the prefix in each workflow.
    pub tail: usize,
    /// Probability that a workflow's tail ends in a diamond instead of a chain.
    pub diamond_ratio: f64,
    pub duration_ms: u64,
    /// Distinct values each tail parameter may take.
    pub param_variants: i64,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            workflows: 5,
            shared_prefix: 3,
            tail: 2,
            diamond_ratio: 0.0,
            duration_ms: 100,
            param_variants: 1000,
            seed: 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WorkloadError {
    #[error("a workload needs at least one module per workflow and one workflow")]
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub catalog: Catalog,
    pub workflows: Vec<WorkflowGraph>,
}

/// Deterministic workload: every workflow starts with the same prefix on
/// dataset `D1` (`pre0 -> pre1 -> ...`, default params) followed by a tail
/// of `tail` modules with seeded random params. A diamond tail forks after
/// the prefix into two branches joined by a final `join` node.
pub fn gen_workload(spec: &WorkloadSpec) -> Result<Workload, WorkloadError> {
    if spec.workflows == 0 || spec.shared_prefix + spec.tail == 0 {
        return Err(WorkloadError::Degenerate);
    }
    let t = SyntheticTransform::ConcatDigest;
    let mut catalog = Catalog::new();
    for i in 0..spec.shared_prefix {
        catalog
            .add_module(synthetic_module(&format!("pre{i}"), 1, 1, 2, spec.duration_ms, t))
            .expect("fresh catalog");
    }
    for i in 0..spec.tail {
        catalog
            .add_module(synthetic_module(&format!("tail{i}"), 1, 1, 2, spec.duration_ms, t))
            .expect("fresh catalog");
    }
    catalog
        .add_module(synthetic_module("join", 2, 1, 1, spec.duration_ms, t))
        .expect("fresh catalog");
    catalog
        .add_dataset(DatasetRef::inline("D1", BLOB, "raw-input-D1"))
        .expect("fresh catalog");

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut workflows = Vec::with_capacity(spec.workflows);
    for w in 0..spec.workflows {
        let mut g = WorkflowGraph::new(format!("wf{w:03}"));
        let mut prev: Option<String> = None;
        let attach = |g: &mut WorkflowGraph, id: &str, prev: &Option<String>, port: &str| match prev {
            Some(p) => {
                g.connect(p, "out0", id, port);
            }
            None => {
                g.bind(id, port, "D1");
            }
        };
        for i in 0..spec.shared_prefix {
            let id = format!("pre{i}");
            let m = catalog.module(&id).expect("prefix module");
            g.add_node(id.clone(), int_state(m, &[0, 0]));
            attach(&mut g, &id, &prev, "in0");
            prev = Some(id);
        }
        let diamond = spec.tail >= 2 && rng.gen_bool(spec.diamond_ratio.clamp(0.0, 1.0));
        let fork = prev.clone();
        let mut branch_ends = Vec::new();
        for i in 0..spec.tail {
            let id = format!("tail{i}");
            let m = catalog.module(&id).expect("tail module");
            let values = [
                rng.gen_range(0..spec.param_variants.max(1)),
                rng.gen_range(0..spec.param_variants.max(1)),
            ];
            g.add_node(id.clone(), int_state(m, &values));
            if diamond {
                attach(&mut g, &id, &fork, "in0");
                branch_ends.push(id);
            } else {
                attach(&mut g, &id, &prev, "in0");
                prev = Some(id);
            }
        }
        if diamond {
            let m = catalog.module("join").expect("join module");
            g.add_node("join", int_state(m, &[0]));
            g.connect(&branch_ends[0], "out0", "join", "in0");
            g.connect(&branch_ends[branch_ends.len() - 1], "out0", "join", "in1");
            // middle branches, if any, stay dangling sinks
            for b in &branch_ends[1..branch_ends.len() - 1] {
                g.declare_output(b, "out0");
            }
            g.declare_output("join", "out0");
        } else {
            g.declare_output(prev.as_deref().expect("non-empty workflow"), "out0");
        }
        workflows.push(g);
    }
    Ok(Workload { catalog, workflows })
}
