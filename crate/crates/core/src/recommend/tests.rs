use std::collections::{BTreeMap, BTreeSet};

use num_rational::Ratio;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::bench::{int_state, random_dag, random_dag_catalog, synthetic_module};
use crate::engine::{dry_run_record, SyntheticTransform};
use crate::model::{canonical_state, DatasetRef, ParamSpec, ParamValue};
use crate::store::{IntermediateMeta, NodeEvent, StoreConfig};

fn catalog() -> Catalog {
    let mut c = Catalog::new();
    for id in ["m1", "m2", "m3"] {
        c.add_module(synthetic_module(id, 1, 1, 2, 0, SyntheticTransform::Identity))
            .unwrap();
    }
    for d in ["D1", "D2"] {
        c.add_dataset(DatasetRef::inline(d, "blob", d)).unwrap();
    }
    c
}

fn chain(c: &Catalog, dataset: &str, params: &[[i64; 2]]) -> WorkflowGraph {
    let mut g = WorkflowGraph::new("chain");
    for (i, p) in params.iter().enumerate() {
        let id = format!("n{i}");
        let m = format!("m{}", i + 1);
        g.add_node(id.clone(), int_state(c.module(&m).unwrap(), p));
        if i == 0 {
            g.bind(&id, "in0", dataset);
        } else {
            g.connect(&format!("n{}", i - 1), "out0", &id, "in0");
        }
    }
    g.declare_output(&format!("n{}", params.len() - 1), "out0");
    g
}

fn open_store() -> (tempfile::TempDir, Store) {
    let dir = tempfile::tempdir().unwrap();
    let s = Store::open(dir.path(), StoreConfig::default()).unwrap();
    (dir, s)
}

/// Stores every output port of `node` in `g` and returns the fingerprints.
fn store_outputs(store: &Store, c: &Catalog, g: &WorkflowGraph, node: &str) -> Vec<Digest> {
    let prov = Provenance::new(g, c).unwrap();
    prov.output_ports(node)
        .iter()
        .filter_map(|p| {
            let fp = prov.fingerprint(node, p).unwrap();
            if store.contains(&fp) {
                return None;
            }
            let meta = IntermediateMeta::describe(&prov, node, p, "D1", None).unwrap();
            store.put_intermediate(fp, fp.to_hex().as_bytes(), meta, false).unwrap();
            Some(fp)
        })
        .collect()
}

fn timed_record(run: &str, events: &[(&str, Digest, f64)]) -> ExecutionRecord {
    let mut r = ExecutionRecord::new(run, "wf");
    r.node_events = events
        .iter()
        .enumerate()
        .map(|(i, (m, s, t))| NodeEvent {
            node_id: format!("x{i}"),
            module_id: m.to_string(),
            state: *s,
            outcome: NodeOutcome::Executed,
            exec_time_ms: *t,
            load_time_ms: 0.0,
            started_ms: 0.0,
            finished_ms: 0.0,
            inputs: vec![],
            outputs: vec![],
            error: None,
        })
        .collect();
    r
}

fn suggestion(pct: u8, saved: Option<f64>, created_at: u64, sid: &str) -> Suggestion {
    Suggestion {
        target_node: "n".into(),
        port: "out0".into(),
        sid: sid.into(),
        fingerprint: Digest::of(sid.as_bytes()),
        param_match_pct: pct,
        est_exec_time_ms: None,
        estimate_fallback: false,
        load_time_ms: 0.0,
        time_saved_ms: saved,
        load_warning: false,
        rule_confidence: None,
        created_at,
        differing_params: vec![],
    }
}

#[test]
fn empty_store_is_checked_not_found() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let res = check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(res.status, NodeStatus::CheckedNotFound);
    assert!(res.suggestions.is_empty());
}

#[test]
fn exact_fingerprint_gives_load_data() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let fps = store_outputs(&store, &c, &g, "n1");
    let res = check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(res.status, NodeStatus::LoadData);
    assert_eq!(res.suggestions.len(), 1);
    assert_eq!(res.suggestions[0].param_match_pct, 100);
    assert_eq!(res.suggestions[0].fingerprint, fps[0]);
    assert!(res.suggestions[0].differing_params.is_empty());
}

#[test]
fn one_of_four_params_differing_is_75_percent() {
    let c = catalog();
    let (_d, store) = open_store();
    store_outputs(&store, &c, &chain(&c, "D1", &[[0, 0], [0, 1]]), "n1");
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let res = check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(res.status, NodeStatus::CheckedFound);
    assert_eq!(res.suggestions.len(), 1);
    assert_eq!(res.suggestions[0].param_match_pct, 75);
    assert_eq!(res.suggestions[0].differing_params, vec!["m2.p1".to_string()]);
}

#[test]
fn exact_match_ranks_before_partial() {
    let c = catalog();
    let (_d, store) = open_store();
    store_outputs(&store, &c, &chain(&c, "D1", &[[1, 0], [0, 0]]), "n1");
    store_outputs(&store, &c, &chain(&c, "D1", &[[0, 0], [0, 0]]), "n1");
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let res = check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(res.status, NodeStatus::LoadData);
    let pcts: Vec<u8> = res.suggestions.iter().map(|s| s.param_match_pct).collect();
    assert_eq!(pcts, vec![100, 75]);
}

#[test]
fn other_dataset_or_module_is_not_a_candidate() {
    let c = catalog();
    let (_d, store) = open_store();
    store_outputs(&store, &c, &chain(&c, "D2", &[[0, 0], [0, 0]]), "n1");
    store_outputs(&store, &c, &chain(&c, "D1", &[[0, 0]]), "n0");
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let res = check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(res.status, NodeStatus::CheckedNotFound);
    let upstream = check(&g, &c, "n0", &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
    assert_eq!(upstream.status, NodeStatus::LoadData);
}

#[test]
fn check_rejects_unknown_node_and_invalid_graph() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0]]);
    let t = TimingIndex::default();
    assert!(check(&g, &c, "nope", &RuleSet::new(), &store, &t).is_err());
    let mut bad = g.clone();
    bad.inputs.clear();
    assert!(matches!(
        check(&bad, &c, "n0", &RuleSet::new(), &store, &t),
        Err(RecommendError::Model(ModelError::InvalidGraph(_)))
    ));
}

#[test]
fn time_saved_and_load_warning_follow_estimate() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let fp = store_outputs(&store, &c, &g, "n1")[0];
    let s0 = g.node("n0").unwrap().state.digest;
    let s1 = g.node("n1").unwrap().state.digest;
    let timing = TimingIndex::from_history(&[timed_record("r", &[("m1", s0, 30.0), ("m2", s1, 40.0)])]);

    store.record_load_time(&fp, 50.0).unwrap();
    let s = &check(&g, &c, "n1", &RuleSet::new(), &store, &timing).unwrap().suggestions[0];
    assert_eq!(s.est_exec_time_ms, Some(70.0));
    assert_eq!(s.time_saved_ms, Some(20.0));
    assert!(!s.load_warning);

    // EMA: 0.5 * 150 + 0.5 * 50 = 100 > 70
    store.record_load_time(&fp, 150.0).unwrap();
    let s = &check(&g, &c, "n1", &RuleSet::new(), &store, &timing).unwrap().suggestions[0];
    assert_eq!(s.time_saved_ms, Some(-30.0));
    assert!(s.load_warning);

    let s = &check(&g, &c, "n1", &RuleSet::new(), &store, &TimingIndex::default())
        .unwrap()
        .suggestions[0];
    assert_eq!(s.est_exec_time_ms, None);
    assert_eq!(s.time_saved_ms, None);
    assert!(!s.load_warning);
}

#[test]
fn rule_confidence_comes_from_live_rules() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0]]);
    let other = chain(&c, "D1", &[[5, 5]]);
    let rules = RuleSet::mine(&[
        dry_run_record(&g, &c, "a", 1).unwrap(),
        dry_run_record(&other, &c, "b", 2).unwrap(),
    ]);
    let prov = Provenance::new(&g, &c).unwrap();
    let fp = prov.fingerprint("n0", "out0").unwrap();
    let key = rules.rules().into_iter().find(|r| r.consequent[0].state == g.nodes[0].state.digest).unwrap().key();
    let meta = IntermediateMeta::describe(&prov, "n0", "out0", "D1", Some(key)).unwrap();
    store.put_intermediate(fp, b"x", meta, false).unwrap();
    let s = &check(&g, &c, "n0", &rules, &store, &TimingIndex::default()).unwrap().suggestions[0];
    assert_eq!(s.rule_confidence, Some(0.5));
}

fn states(c: &Catalog, spec: &[(&str, &[i64])]) -> Vec<ToolState> {
    spec.iter().map(|(m, v)| int_state(c.module(m).unwrap(), v)).collect()
}

#[test]
fn parameter_match_examples() {
    let mut c = Catalog::new();
    c.add_module(synthetic_module("a", 1, 1, 2, 0, SyntheticTransform::Identity)).unwrap();
    c.add_module(synthetic_module("b", 1, 1, 3, 0, SyntheticTransform::Identity)).unwrap();
    c.add_module(synthetic_module("c", 1, 1, 5, 0, SyntheticTransform::Identity)).unwrap();
    c.add_module(synthetic_module("z", 1, 1, 0, 0, SyntheticTransform::Identity)).unwrap();

    let same = states(&c, &[("a", &[1, 2]), ("b", &[1, 2, 3])]);
    assert_eq!(parameter_match(&same, &same).unwrap(), 100);

    let x = states(&c, &[("a", &[1, 2])]);
    let y = states(&c, &[("a", &[1, 3])]);
    assert_eq!(parameter_match(&x, &y).unwrap(), 50);

    let x = states(&c, &[("a", &[0, 0]), ("b", &[0, 0, 0]), ("c", &[0, 0, 0, 0, 0])]);
    let y = states(&c, &[("a", &[0, 1]), ("b", &[0, 0, 0]), ("c", &[0, 0, 0, 0, 9])]);
    assert_eq!(parameter_match(&x, &y).unwrap(), 80);

    let z = states(&c, &[("z", &[])]);
    assert_eq!(parameter_match(&z, &z).unwrap(), 100);

    assert!(matches!(
        parameter_match(&states(&c, &[("a", &[0, 0])]), &states(&c, &[("b", &[0, 0, 0])])),
        Err(RecommendError::ModuleMismatch)
    ));
    assert!(parameter_match(&x[..1], &x).is_err());
}

#[test]
fn parameter_match_rounds_half_away_from_zero() {
    let mut c = Catalog::new();
    c.add_module(synthetic_module("e", 1, 1, 8, 0, SyntheticTransform::Identity)).unwrap();
    let x = states(&c, &[("e", &[0; 8])]);
    // 1 of 8 equal = 12.5% -> 13
    let y = states(&c, &[("e", &[0, 1, 1, 1, 1, 1, 1, 1])]);
    assert_eq!(parameter_match(&x, &y).unwrap(), 13);
    // 7 of 8 equal = 87.5% -> 88
    let y = states(&c, &[("e", &[0, 0, 0, 0, 0, 0, 0, 1])]);
    assert_eq!(parameter_match(&x, &y).unwrap(), 88);
}

#[test]
fn inert_params_do_not_count() {
    let mut c = Catalog::new();
    let mut m = synthetic_module("q", 1, 1, 1, 0, SyntheticTransform::Identity);
    m.param_schema.push(ParamSpec::int("threads", 1).inert());
    c.add_module(m).unwrap();
    let m = c.module("q").unwrap();
    let with = |p0: i64, threads: i64| {
        let o: BTreeMap<String, ParamValue> =
            [("p0".to_string(), ParamValue::Int(p0)), ("threads".to_string(), ParamValue::Int(threads))].into();
        canonical_state(m, &o).unwrap()
    };
    assert_eq!(parameter_match(&[with(0, 1)], &[with(0, 8)]).unwrap(), 100);
    assert_eq!(parameter_match(&[with(0, 1)], &[with(1, 1)]).unwrap(), 0);
}

#[test]
fn estimate_time_examples() {
    let s = Digest::of(b"s");
    let other = Digest::of(b"other");
    let h = vec![
        timed_record("a", &[("m", s, 100.0)]),
        timed_record("b", &[("m", s, 300.0)]),
    ];
    assert_eq!(estimate_time("m", &s, &h), Some(Estimate { ms: 200.0, fallback: false }));

    let h = vec![
        timed_record("a", &[("m", other, 400.0)]),
        timed_record("b", &[("m", Digest::of(b"third"), 600.0)]),
    ];
    assert_eq!(estimate_time("m", &s, &h), Some(Estimate { ms: 500.0, fallback: true }));
    assert_eq!(estimate_time("m", &s, &[]), None);
}

#[test]
fn estimates_ignore_skipped_events() {
    let s = Digest::of(b"s");
    let mut r = timed_record("a", &[("m", s, 100.0), ("m", s, 0.0)]);
    r.node_events[1].outcome = NodeOutcome::SkippedLoaded;
    assert_eq!(estimate_time("m", &s, &[r]).unwrap().ms, 100.0);
}

#[test]
fn rank_examples() {
    let ids = |v: Vec<Suggestion>| v.into_iter().map(|s| s.sid).collect::<Vec<_>>();
    assert_eq!(
        ids(rank(vec![suggestion(80, None, 0, "a"), suggestion(100, None, 0, "b")])),
        ["b", "a"]
    );
    assert_eq!(
        ids(rank(vec![suggestion(100, Some(50.0), 0, "a"), suggestion(100, Some(500.0), 0, "b")])),
        ["b", "a"]
    );
    assert_eq!(
        ids(rank(vec![suggestion(90, Some(1.0), 5, "a"), suggestion(90, Some(1.0), 5, "b")])),
        ["a", "b"]
    );
    assert_eq!(
        ids(rank(vec![suggestion(90, None, 9, "a"), suggestion(90, Some(-10.0), 1, "b")])),
        ["b", "a"]
    );
    assert_eq!(
        ids(rank(vec![suggestion(90, Some(1.0), 1, "a"), suggestion(90, Some(1.0), 9, "b")])),
        ["b", "a"]
    );
}

#[test]
fn status_transitions() {
    use NodeStatus::*;
    for s in [CheckedNotFound, CheckedFound, LoadData] {
        assert!(NotChecked.can_become(s));
        assert!(s.can_become(NotChecked));
        for t in [CheckedNotFound, CheckedFound, LoadData] {
            assert!(!s.can_become(t));
        }
    }
    assert_eq!(CheckedNotFound.label(), "Checked Not Found");
    assert_eq!(CheckedFound.label(), "Checked Found");
}

fn history(c: &Catalog, graphs: &[WorkflowGraph]) -> RuleSet {
    let recs: Vec<_> = graphs
        .iter()
        .enumerate()
        .map(|(i, g)| dry_run_record(g, c, &format!("r{i}"), i as u64).unwrap())
        .collect();
    RuleSet::mine(&recs)
}

#[test]
fn below_threshold_plans_nothing() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let rules = history(&c, std::slice::from_ref(&g));
    let plan = storage_plan(&g, &c, &rules, &Thresholds::default(), &store).unwrap();
    assert!(plan.entries.is_empty());
}

#[test]
fn three_of_four_rule_is_planned() {
    let c = catalog();
    let (_d, store) = open_store();
    let g = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let other = chain(&c, "D1", &[[7, 7]]);
    let rules = history(&c, &[g.clone(), g.clone(), g.clone(), other]);
    let plan = storage_plan(&g, &c, &rules, &Thresholds::default(), &store).unwrap();
    let prov = Provenance::new(&g, &c).unwrap();
    let want: BTreeSet<Digest> = ["n0", "n1"]
        .iter()
        .map(|n| prov.fingerprint(n, "out0").unwrap())
        .collect();
    assert_eq!(plan.fingerprints(), want);
    let n1 = plan.entries.iter().find(|e| e.node_id == "n1").unwrap();
    assert_eq!((n1.rule.support, n1.rule.confidence), (3, Ratio::new(3, 4)));

    store_outputs(&store, &c, &g, "n0");
    let plan = storage_plan(&g, &c, &rules, &Thresholds::default(), &store).unwrap();
    assert_eq!(plan.entries.len(), 1);
    assert_eq!(plan.entries[0].node_id, "n1");
}

#[test]
fn new_state_is_stored_separately() {
    let c = catalog();
    let (_d, store) = open_store();
    let s1 = chain(&c, "D1", &[[0, 0], [0, 0]]);
    let s2 = chain(&c, "D1", &[[0, 0], [0, 2]]);
    store_outputs(&store, &c, &s1, "n0");
    store_outputs(&store, &c, &s1, "n1");
    let rules = history(&c, &[s1.clone(), s1, s2.clone(), s2.clone()]);
    let plan = storage_plan(&s2, &c, &rules, &Thresholds::default(), &store).unwrap();
    let prov = Provenance::new(&s2, &c).unwrap();
    assert_eq!(
        plan.fingerprints(),
        BTreeSet::from([prov.fingerprint("n1", "out0").unwrap()])
    );
}

/// Textual rendering of everything `node` is computed from, ignoring
/// params and node ids.
fn structure(g: &WorkflowGraph, c: &Catalog, node: &str) -> String {
    let state = &g.node(node).unwrap().state;
    let module = c.module(&state.module_id).unwrap();
    let inputs: Vec<String> = module
        .input_ports
        .iter()
        .map(|p| {
            if let Some(e) = g.edges.iter().find(|e| e.to == node && e.to_port == p.name) {
                format!("{}={}.{}", p.name, structure(g, c, &e.from), e.from_port)
            } else {
                let b = g.inputs.iter().find(|b| b.node_id == node && b.port == p.name).unwrap();
                format!("{}=data:{}", p.name, b.dataset_id)
            }
        })
        .collect();
    format!("{}({})", state.module_id, inputs.join(","))
}

/// Pairs nodes of two structurally equal graphs by walking them in
/// lockstep. Fails if a node would pair with two different partners.
fn pair(
    g: &WorkflowGraph,
    a: &str,
    v: &WorkflowGraph,
    b: &str,
    fwd: &mut BTreeMap<String, String>,
    back: &mut BTreeMap<String, String>,
) -> bool {
    match (fwd.get(a), back.get(b)) {
        (Some(x), Some(y)) => return x == b && y == a,
        (None, None) => {}
        _ => return false,
    }
    fwd.insert(a.to_string(), b.to_string());
    back.insert(b.to_string(), a.to_string());
    for e in g.edges.iter().filter(|e| e.to == a) {
        let f = v.edges.iter().find(|f| f.to == b && f.to_port == e.to_port).unwrap();
        if !pair(g, &e.from, v, &f.from, fwd, back) {
            return false;
        }
    }
    true
}

/// Per-node variants of `g` with some params redrawn.
fn variants(rng: &mut impl Rng, c: &Catalog, g: &WorkflowGraph, n: usize) -> Vec<WorkflowGraph> {
    (0..n)
        .map(|_| {
            let mut v = g.clone();
            for node in &mut v.nodes {
                if rng.gen_bool(0.3) {
                    let m = c.module(&node.state.module_id).unwrap();
                    let vals: Vec<i64> = (0..m.param_schema.len()).map(|_| rng.gen_range(0..3)).collect();
                    node.state = int_state(m, &vals);
                }
            }
            v
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn suggestions_match_scan_oracle(seed in any::<u64>()) {
        let c = random_dag_catalog(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = random_dag(&mut rng, &c, 6, 3);
        let (_d, store) = open_store();
        // (node, fingerprint) -> variant it came from
        let mut stored: BTreeMap<(String, Digest), WorkflowGraph> = BTreeMap::new();
        for v in variants(&mut rng, &c, &g, 4) {
            for node in &v.nodes {
                if rng.gen_bool(0.5) {
                    for fp in store_outputs(&store, &c, &v, &node.node_id) {
                        stored.insert((node.node_id.clone(), fp), v.clone());
                    }
                }
            }
        }
        let prov = Provenance::new(&g, &c).unwrap();
        for node in &g.nodes {
            let n = &node.node_id;
            let res = check(&g, &c, n, &RuleSet::new(), &store, &TimingIndex::default()).unwrap();
            let got: Vec<Digest> = res.suggestions.iter().map(|s| s.fingerprint).collect();
            let got_set: BTreeSet<Digest> = got.iter().copied().collect();
            prop_assert_eq!(got.len(), got_set.len());
            let shape = structure(&g, &c, n);
            let mut want = BTreeSet::new();
            for ((m, fp), v) in &stored {
                if structure(v, &c, m) != shape {
                    continue;
                }
                let (mut fwd, mut back) = (BTreeMap::new(), BTreeMap::new());
                let exact = g.node(n).unwrap().state.module_id == v.node(m).unwrap().state.module_id
                    && prov.output_ports(n).iter().any(|p| prov.fingerprint(n, p).unwrap() == *fp);
                if pair(&g, n, v, m, &mut fwd, &mut back) || exact {
                    want.insert(*fp);
                }
            }
            prop_assert_eq!(&got_set, &want);

            for s in &res.suggestions {
                let (m, v) = stored
                    .iter()
                    .find(|((_, fp), _)| *fp == s.fingerprint)
                    .map(|((m, _), v)| (m.clone(), v))
                    .unwrap();
                let exact = s.fingerprint == prov.fingerprint(n, &s.port).unwrap();
                prop_assert_eq!(s.param_match_pct == 100, exact);
                let (mut fwd, mut back) = (BTreeMap::new(), BTreeMap::new());
                if !exact && pair(&g, n, v, &m, &mut fwd, &mut back) {
                    let (mut matched, mut total) = (0u64, 0u64);
                    for (a, b) in &fwd {
                        let sa = &g.node(a).unwrap().state;
                        let sb = &v.node(b).unwrap().state;
                        for (k, val) in &sa.params {
                            total += 1;
                            matched += u64::from(sb.params.get(k) == Some(val));
                        }
                    }
                    let pct = (100.0 * matched as f64 / total as f64).round().min(99.0) as u8;
                    prop_assert_eq!(s.param_match_pct, pct);
                    prop_assert!(matched < total);
                }
            }
            let any_exact = res.suggestions.iter().any(|s| s.param_match_pct == 100);
            let expected = if any_exact {
                NodeStatus::LoadData
            } else if res.suggestions.is_empty() {
                NodeStatus::CheckedNotFound
            } else {
                NodeStatus::CheckedFound
            };
            prop_assert_eq!(res.status, expected);
        }
    }

    #[test]
    fn raising_thresholds_never_adds_entries(seed in any::<u64>(), s in 0u64..4, ds in 0u64..3, n in 0u64..5, dn in 0u64..5) {
        let c = random_dag_catalog(0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_dag(&mut rng, &c, 6, 2);
        let mut graphs = variants(&mut rng, &c, &base, 6);
        graphs.push(base.clone());
        let rules = history(&c, &graphs);
        let (_d, store) = open_store();
        let lo = Thresholds::new(s, Ratio::new(n, 4));
        let hi = Thresholds::new(s + ds, Ratio::new((n + dn).min(4), 4));
        for g in &graphs {
            let a = storage_plan(g, &c, &rules, &lo, &store).unwrap().fingerprints();
            let b = storage_plan(g, &c, &rules, &hi, &store).unwrap().fingerprints();
            prop_assert!(b.is_subset(&a));
        }
    }
}
