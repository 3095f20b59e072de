//! Dataset ⇒ state-qualified path rules mined from execution history.
//!
//! A run supports the rule `D ⇒ s` when it consumed raw dataset `D` and
//! contains a dataflow path starting at a consumer of `D` whose
//! `(module, tool state)` steps equal `s`. Each run counts at most once per
//! rule, so `confidence = support(D ⇒ s) / support(D)` is a conditional
//! frequency in `(0, 1]`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{CanonicalHasher, Digest};
use crate::model::{dataset_fingerprint, StateStep};
use crate::store::ExecutionRecord;

/// Identity of a rule: antecedent dataset and consequent sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RuleKey {
    pub dataset_id: String,
    pub sequence: Vec<StateStep>,
}

impl RuleKey {
    pub fn new(dataset_id: impl Into<String>, sequence: Vec<StateStep>) -> Self {
        RuleKey {
            dataset_id: dataset_id.into(),
            sequence,
        }
    }

    pub fn sequence_digest(&self) -> Digest {
        sequence_digest(&self.sequence)
    }
}

pub fn sequence_digest(sequence: &[StateStep]) -> Digest {
    let mut h = CanonicalHasher::new("flowcache/sequence/v1");
    h.u64(sequence.len() as u64);
    for s in sequence {
        h.str(&s.module_id).digest(&s.state);
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssociationRule {
    pub antecedent: String,
    pub consequent: Vec<StateStep>,
    pub support: u64,
    #[serde(with = "ratio_serde")]
    pub confidence: Ratio<u64>,
    pub last_seen: u64,
}

impl AssociationRule {
    pub fn key(&self) -> RuleKey {
        RuleKey::new(self.antecedent.clone(), self.consequent.clone())
    }
}

mod ratio_serde {
    use num_rational::Ratio;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(r: &Ratio<u64>, s: S) -> Result<S::Ok, S::Error> {
        [*r.numer(), *r.denom()].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Ratio<u64>, D::Error> {
        let [n, den] = <[u64; 2]>::deserialize(d)?;
        if den == 0 {
            return Err(serde::de::Error::custom("zero denominator"));
        }
        Ok(Ratio::new(n, den))
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MinerError {
    #[error("dataset `{0}` has no recorded uses; confidence is undefined")]
    UndefinedConfidence(String),
}

/// Storage thresholds. A rule is frequent when both are met.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub min_support: u64,
    pub min_confidence: Ratio<u64>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            min_support: 2,
            min_confidence: Ratio::new(1, 2),
        }
    }
}

impl Thresholds {
    pub fn new(min_support: u64, min_confidence: Ratio<u64>) -> Self {
        Thresholds {
            min_support,
            min_confidence,
        }
    }

    pub fn admits(&self, rule: &AssociationRule) -> bool {
        rule.support >= self.min_support && rule.confidence >= self.min_confidence
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct RuleStats {
    support: u64,
    last_seen: u64,
}

/// Mined rules plus per-dataset run counts.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RuleSet {
    dataset_support: BTreeMap<String, u64>,
    /// (dataset, sequence digest) -> (sequence, stats)
    rules: BTreeMap<(String, Digest), (Vec<StateStep>, RuleStats)>,
}

/// Every `(dataset, sequence)` pair a run supports, deduplicated.
pub fn run_sequences(record: &ExecutionRecord) -> BTreeSet<(String, Vec<StateStep>)> {
    let events: Vec<_> = record
        .node_events
        .iter()
        .filter(|e| e.outcome.produced())
        .collect();
    let mut producers: HashMap<Digest, Vec<usize>> = HashMap::new();
    for (i, e) in events.iter().enumerate() {
        for o in &e.outputs {
            producers.entry(*o).or_default().push(i);
        }
    }
    let mut children: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); events.len()];
    for (c, e) in events.iter().enumerate() {
        for input in &e.inputs {
            for &p in producers.get(input).into_iter().flatten() {
                if p != c {
                    children[p].insert(c);
                }
            }
        }
    }

    fn walk(
        at: usize,
        events: &[&crate::store::NodeEvent],
        children: &[BTreeSet<usize>],
        path: &mut Vec<StateStep>,
        dataset: &str,
        out: &mut BTreeSet<(String, Vec<StateStep>)>,
    ) {
        path.push(StateStep {
            module_id: events[at].module_id.clone(),
            state: events[at].state,
        });
        out.insert((dataset.to_string(), path.clone()));
        for &c in &children[at] {
            walk(c, events, children, path, dataset, out);
        }
        path.pop();
    }

    let mut out = BTreeSet::new();
    let datasets: BTreeSet<&String> = record.input_datasets.iter().collect();
    for d in datasets {
        let dfp = dataset_fingerprint(d);
        for (i, e) in events.iter().enumerate() {
            if e.inputs.contains(&dfp) {
                walk(i, &events, &children, &mut Vec::new(), d, &mut out);
            }
        }
    }
    out
}

impl RuleSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mines the full rule set of a history.
    pub fn mine(history: &[ExecutionRecord]) -> Self {
        let mut rules = RuleSet::new();
        for r in history {
            rules.incremental_update(r);
        }
        rules
    }

    /// Folds one more run in; equal to re-mining the extended history.
    pub fn incremental_update(&mut self, record: &ExecutionRecord) {
        let datasets: BTreeSet<&String> = record.input_datasets.iter().collect();
        for d in datasets {
            *self.dataset_support.entry(d.clone()).or_default() += 1;
        }
        for (d, seq) in run_sequences(record) {
            let key = (d, sequence_digest(&seq));
            let slot = self
                .rules
                .entry(key)
                .or_insert_with(|| (seq, RuleStats::default()));
            slot.1.support += 1;
            slot.1.last_seen = slot.1.last_seen.max(record.finished_at);
        }
    }

    pub fn dataset_support(&self, dataset_id: &str) -> u64 {
        self.dataset_support.get(dataset_id).copied().unwrap_or(0)
    }

    pub fn support(&self, dataset_id: &str, sequence: &[StateStep]) -> u64 {
        self.rules
            .get(&(dataset_id.to_string(), sequence_digest(sequence)))
            .map(|(_, s)| s.support)
            .unwrap_or(0)
    }

    pub fn confidence(&self, dataset_id: &str, sequence: &[StateStep]) -> Result<Ratio<u64>, MinerError> {
        let base = self.dataset_support(dataset_id);
        if base == 0 {
            return Err(MinerError::UndefinedConfidence(dataset_id.to_string()));
        }
        Ok(Ratio::new(self.support(dataset_id, sequence), base))
    }

    pub fn rule(&self, key: &RuleKey) -> Option<AssociationRule> {
        let (seq, stats) = self
            .rules
            .get(&(key.dataset_id.clone(), key.sequence_digest()))?;
        Some(self.materialize(&key.dataset_id, seq, stats))
    }

    fn materialize(&self, d: &str, seq: &[StateStep], stats: &RuleStats) -> AssociationRule {
        AssociationRule {
            antecedent: d.to_string(),
            consequent: seq.to_vec(),
            support: stats.support,
            confidence: Ratio::new(stats.support, self.dataset_support(d)),
            last_seen: stats.last_seen,
        }
    }

    /// All rules, ordered by antecedent then sequence digest.
    pub fn rules(&self) -> Vec<AssociationRule> {
        self.rules
            .iter()
            .map(|((d, _), (seq, stats))| self.materialize(d, seq, stats))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }
}

/// One line per rule: dataset, `module@state` steps joined by `>`, support,
/// and confidence as an exact fraction, tab-separated.
pub fn rules_report(rules: &RuleSet) -> String {
    let mut out = String::new();
    for r in rules.rules() {
        let steps: Vec<String> = r
            .consequent
            .iter()
            .map(|s| format!("{}@{}", s.module_id, s.state))
            .collect();
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}/{}",
            r.antecedent,
            steps.join(">"),
            r.support,
            r.confidence.numer(),
            r.confidence.denom()
        );
    }
    out
}
