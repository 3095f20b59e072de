use std::sync::{Arc, RwLock};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use flowcache_core::bench::{int_state, synthetic_module};
use flowcache_core::engine::{Engine, EngineConfig, SyntheticTransform};
use flowcache_core::miner::{RuleSet, Thresholds};
use flowcache_core::model::{fingerprint, Catalog, DatasetRef, WorkflowGraph};
use flowcache_core::recommend::TimingIndex;
use flowcache_core::store::{Store, StoreConfig};
use flowcache_service::Session;

const NODES: [&str; 3] = ["m1", "m2", "m3"];

#[derive(Debug, Clone)]
enum Op {
    SetParam(usize, i64),
    Check(usize),
    Select(usize, usize),
    Clear(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..3usize, 0..3i64).prop_map(|(n, v)| Op::SetParam(n, v)),
        (0..3usize).prop_map(Op::Check),
        (0..3usize, 0..4usize).prop_map(|(n, i)| Op::Select(n, i)),
        (0..3usize).prop_map(Op::Clear),
    ]
}

fn chain(c: &Catalog, values: [i64; 3]) -> WorkflowGraph {
    let mut g = WorkflowGraph::new("chain");
    for (i, id) in NODES.iter().enumerate() {
        g.add_node(*id, int_state(c.module(id).unwrap(), &[values[i]]));
    }
    g.bind("m1", "in0", "D1")
        .connect("m1", "out0", "m2", "in0")
        .connect("m2", "out0", "m3", "in0")
        .declare_output("m3", "out0");
    g
}

/// After any edit sequence, every selected load names stored data whose
/// fingerprint equals the node's current output fingerprint, and planning
/// with the selections succeeds.
#[test]
fn selections_never_go_stale() {
    let dir = tempfile::tempdir().unwrap();
    let mut catalog = Catalog::new();
    for id in NODES {
        catalog
            .add_module(synthetic_module(id, 1, 1, 1, 0, SyntheticTransform::ConcatDigest))
            .unwrap();
    }
    catalog.add_dataset(DatasetRef::inline("D1", "blob", "xyz")).unwrap();
    let catalog = Arc::new(catalog);
    let store = Arc::new(Store::open(dir.path(), StoreConfig::default()).unwrap());
    let config = EngineConfig {
        thresholds: Thresholds::new(0, 0.into()),
        persist: true,
    };
    let engine = Arc::new(Engine::new(
        catalog.clone(),
        store.clone(),
        Arc::new(RwLock::new(RuleSet::new())),
        config,
    ));
    for a in 0..2 {
        for b in 0..2 {
            engine.run(&chain(&catalog, [a, b, 0]), &[], 1).unwrap();
        }
    }
    assert!(store.stats().entries >= 6);
    let timing = store.with_records(TimingIndex::from_history);

    let mut runner = TestRunner::new(Config::with_cases(128));
    runner
        .run(&prop::collection::vec(op(), 1..25), |ops| {
            let mut s = Session::new("s".into(), chain(&catalog, [0, 0, 0]), engine.clone());
            for op in ops {
                match op {
                    Op::SetParam(n, v) => {
                        let params = serde_json::json!({ "p0": v });
                        s.set_params(NODES[n], params.as_object().unwrap()).unwrap();
                    }
                    Op::Check(n) => {
                        let rules = engine.rules().read().unwrap();
                        s.check(NODES[n], &rules, &store, &timing).unwrap();
                    }
                    Op::Select(n, i) => {
                        let sid = s.view().suggestions.get(NODES[n]).and_then(|ss| ss.get(i).cloned());
                        if let Some(sg) = sid {
                            let r = s.select_load(NODES[n], &sg.sid);
                            prop_assert_eq!(r.is_ok(), sg.param_match_pct == 100);
                        }
                    }
                    Op::Clear(n) => s.clear_load(NODES[n]).unwrap(),
                }
                let loads = s.view().loads;
                for (node, sid) in &loads {
                    let stored = store.entry_by_sid(sid).unwrap().fingerprint;
                    let current = fingerprint(s.graph(), &catalog, node, "out0").unwrap();
                    prop_assert_eq!(stored, current);
                }
                let selections: Vec<(String, String)> = loads.into_iter().collect();
                prop_assert!(engine.plan(s.graph(), &selections, 1).is_ok());
            }
            Ok(())
        })
        .unwrap();
}
