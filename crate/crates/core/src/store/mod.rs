//! Execution history plus a content-addressed repository of intermediate
//! datasets.
//!
//! Layout under the store root:
//!
//! ```text
//! history.log                    one ExecutionRecord per line (JSON)
//! index.json                     metadata of live intermediates, rewritten atomically
//! objects/<first2>/<rest>        payload bytes, named by fingerprint hex
//! ```

mod history;
mod record;

pub use history::{parse_history, record_line, RecordFilter};
pub use record::{ExecutionRecord, NodeEvent, NodeOutcome};

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::{Digest, DIGEST_ALGORITHM};
use crate::miner::RuleKey;
use crate::model::{ModelError, Provenance, ToolState};
use history::HistoryLog;

/// Environment variable naming the store root.
pub const STORE_DIR_ENV: &str = "FLOWCACHE_STORE_DIR";

pub const DEFAULT_CAPACITY: u64 = 1 << 30;

/// Weight of the newest observation in the load-time moving average.
const LOAD_EMA_ALPHA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("an intermediate with fingerprint {0} is already stored")]
    Duplicate(Digest),
    #[error("run `{0}` is already recorded")]
    DuplicateRun(String),
    #[error("invalid execution record: {0}")]
    InvalidRecord(String),
    #[error("payload of {needed} bytes does not fit in capacity {capacity}")]
    CapacityExceeded { needed: u64, capacity: u64 },
    #[error("stored payload for {0} failed its integrity check")]
    Corrupt(Digest),
    #[error("malformed store file: {0}")]
    Parse(String),
}

/// Which module, in which state, produced an intermediate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Producer {
    pub module_id: String,
    pub state: Digest,
}

/// Metadata of one stored intermediate dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntermediateDataset {
    pub sid: String,
    /// Raw dataset the producing computation started from.
    pub did: String,
    pub size_bytes: u64,
    pub save_time_ms: f64,
    /// Rolling estimate of the time to load the payload.
    pub load_time_ms: f64,
    /// Number of observed loads behind `load_time_ms`; zero means the
    /// estimate is still the save time.
    #[serde(default)]
    pub load_samples: u64,
    pub producer: Producer,
    pub fingerprint: Digest,
    /// Parameter-free structural digest of the producing computation.
    pub shape: Digest,
    /// Tool states of the upstream closure in canonical closure order.
    pub states: Vec<ToolState>,
    /// Association rule that justified storing this entry.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<RuleKey>,
    pub created_at: u64,
    pub payload_uri: String,
    pub content_digest: Digest,
    pub digest_alg: String,
}

/// Caller-supplied part of an intermediate's metadata.
#[derive(Debug, Clone)]
pub struct IntermediateMeta {
    pub producer: Producer,
    pub did: String,
    pub shape: Digest,
    pub states: Vec<ToolState>,
    pub rule: Option<RuleKey>,
}

impl IntermediateMeta {
    /// Metadata for the output `node_id.port` of an analysed graph.
    pub fn describe(
        prov: &Provenance,
        node_id: &str,
        port: &str,
        did: impl Into<String>,
        rule: Option<RuleKey>,
    ) -> Result<Self, ModelError> {
        let state = prov
            .state(node_id)
            .ok_or_else(|| ModelError::UnknownNode(node_id.to_string()))?;
        Ok(IntermediateMeta {
            producer: Producer {
                module_id: state.module_id.clone(),
                state: state.digest,
            },
            did: did.into(),
            shape: prov.shape(node_id, port)?,
            states: prov.closure_states(node_id)?,
            rule,
        })
    }
}

/// Supplies the rule confidence used to weigh entries during eviction.
pub trait BenefitSource: Send + Sync {
    /// Confidence in `[0, 1]` of the rule backing `entry`.
    fn confidence(&self, entry: &IntermediateDataset) -> f64;
}

/// Confidence 1 for every entry.
pub struct UnitConfidence;

impl BenefitSource for UnitConfidence {
    fn confidence(&self, _: &IntermediateDataset) -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvictionCandidate {
    pub sid: String,
    pub size_bytes: u64,
    pub benefit: f64,
    pub pinned: bool,
    pub created_at: u64,
}

/// Greedy benefit eviction: drop the lowest-benefit unpinned entries (older
/// first on ties, then by sid) until the total fits in `capacity`.
pub fn select_evictions(entries: &[EvictionCandidate], capacity: u64) -> Vec<String> {
    let mut total: u64 = entries.iter().map(|e| e.size_bytes).sum();
    if total <= capacity {
        return Vec::new();
    }
    let mut order: Vec<&EvictionCandidate> = entries.iter().filter(|e| !e.pinned).collect();
    order.sort_by(|a, b| {
        a.benefit
            .total_cmp(&b.benefit)
            .then(a.created_at.cmp(&b.created_at))
            .then_with(|| a.sid.cmp(&b.sid))
    });
    let mut out = Vec::new();
    for e in order {
        if total <= capacity {
            break;
        }
        total -= e.size_bytes;
        out.push(e.sid.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub entries: u64,
    pub bytes: u64,
    pub capacity: u64,
    pub hits: u64,
    pub misses: u64,
    pub records: u64,
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub capacity: u64,
    /// Extra latency added to every load, for modelling slow storage.
    pub load_delay: Duration,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            capacity: DEFAULT_CAPACITY,
            load_delay: Duration::ZERO,
        }
    }
}

/// The provenance store. Share it behind an `Arc`; all methods take `&self`.
pub struct Store {
    root: PathBuf,
    config: StoreConfig,
    index: RwLock<BTreeMap<Digest, IntermediateDataset>>,
    write_lock: Mutex<()>,
    history: RwLock<HistoryLog>,
    pins: Mutex<HashMap<Digest, usize>>,
    benefit: RwLock<Arc<dyn BenefitSource>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

/// Keeps an entry safe from eviction while alive.
pub struct PinGuard<'a> {
    store: &'a Store,
    fingerprint: Digest,
}

impl Drop for PinGuard<'_> {
    fn drop(&mut self) {
        let mut pins = self.store.pins.lock().unwrap();
        if let Some(n) = pins.get_mut(&self.fingerprint) {
            *n -= 1;
            if *n == 0 {
                pins.remove(&self.fingerprint);
            }
        }
    }
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

impl Store {
    pub fn open(root: impl AsRef<Path>, config: StoreConfig) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("objects"))?;
        let index_path = root.join("index.json");
        let index = if index_path.exists() {
            let text = std::fs::read_to_string(&index_path)?;
            let entries: Vec<IntermediateDataset> =
                serde_json::from_str(&text).map_err(|e| StoreError::Parse(e.to_string()))?;
            entries.into_iter().map(|e| (e.fingerprint, e)).collect()
        } else {
            BTreeMap::new()
        };
        let history = HistoryLog::open(&root.join("history.log"))?;
        Ok(Store {
            root,
            config,
            index: RwLock::new(index),
            write_lock: Mutex::new(()),
            history: RwLock::new(history),
            pins: Mutex::new(HashMap::new()),
            benefit: RwLock::new(Arc::new(UnitConfidence)),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        })
    }

    /// Opens the store named by `FLOWCACHE_STORE_DIR`, or `fallback`.
    pub fn open_from_env(fallback: &Path, config: StoreConfig) -> Result<Self, StoreError> {
        let root = std::env::var_os(STORE_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| fallback.to_path_buf());
        Self::open(root, config)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn capacity(&self) -> u64 {
        self.config.capacity
    }

    pub fn history_path(&self) -> PathBuf {
        self.history.read().unwrap().path().to_path_buf()
    }

    pub fn set_benefit_source(&self, source: Arc<dyn BenefitSource>) {
        *self.benefit.write().unwrap() = source;
    }

    // ---- history ----

    /// Appends a run record durably. Records are never rewritten.
    pub fn append_record(&self, record: ExecutionRecord) -> Result<String, StoreError> {
        self.history.write().unwrap().append(record)
    }

    /// Matching records in append order.
    pub fn query_records(&self, filter: &RecordFilter) -> Vec<ExecutionRecord> {
        self.history
            .read()
            .unwrap()
            .records()
            .iter()
            .filter(|r| filter.matches(r))
            .cloned()
            .collect()
    }

    pub fn with_records<T>(&self, f: impl FnOnce(&[ExecutionRecord]) -> T) -> T {
        f(self.history.read().unwrap().records())
    }

    // ---- intermediates ----

    fn object_path(&self, fp: &Digest) -> (PathBuf, String) {
        let hex = fp.to_hex();
        let rel = format!("objects/{}/{}", &hex[..2], &hex[2..]);
        (self.root.join(&rel), rel)
    }

    pub fn pin(&self, fingerprint: Digest) -> PinGuard<'_> {
        *self.pins.lock().unwrap().entry(fingerprint).or_default() += 1;
        PinGuard {
            store: self,
            fingerprint,
        }
    }

    fn is_pinned(&self, fp: &Digest) -> bool {
        self.pins.lock().unwrap().contains_key(fp)
    }

    pub fn contains(&self, fingerprint: &Digest) -> bool {
        self.index.read().unwrap().contains_key(fingerprint)
    }

    pub fn entry(&self, fingerprint: &Digest) -> Option<IntermediateDataset> {
        self.index.read().unwrap().get(fingerprint).cloned()
    }

    pub fn entry_by_sid(&self, sid: &str) -> Option<IntermediateDataset> {
        self.index
            .read()
            .unwrap()
            .values()
            .find(|e| e.sid == sid)
            .cloned()
    }

    /// Snapshot of all live entries, ordered by fingerprint.
    pub fn entries(&self) -> Vec<IntermediateDataset> {
        self.index.read().unwrap().values().cloned().collect()
    }

    pub fn live_bytes(&self) -> u64 {
        self.index.read().unwrap().values().map(|e| e.size_bytes).sum()
    }

    fn persist_index(&self, index: &BTreeMap<Digest, IntermediateDataset>) -> Result<(), StoreError> {
        let entries: Vec<&IntermediateDataset> = index.values().collect();
        let mut tmp = tempfile::NamedTempFile::new_in(&self.root)?;
        serde_json::to_writer(&mut tmp, &entries).map_err(|e| StoreError::Parse(e.to_string()))?;
        tmp.flush()?;
        tmp.as_file().sync_data()?;
        tmp.persist(self.root.join("index.json"))
            .map_err(|e| StoreError::Io(e.error))?;
        Ok(())
    }

    /// Stores a payload under its fingerprint, evicting other entries if
    /// needed to stay within capacity.
    pub fn put_intermediate(
        &self,
        fingerprint: Digest,
        payload: &[u8],
        meta: IntermediateMeta,
        overwrite: bool,
    ) -> Result<IntermediateDataset, StoreError> {
        let size = payload.len() as u64;
        if size > self.config.capacity {
            return Err(StoreError::CapacityExceeded {
                needed: size,
                capacity: self.config.capacity,
            });
        }
        let _w = self.write_lock.lock().unwrap();
        if !overwrite && self.contains(&fingerprint) {
            return Err(StoreError::Duplicate(fingerprint));
        }
        let _pin = self.pin(fingerprint);
        let (path, rel) = self.object_path(&fingerprint);
        std::fs::create_dir_all(path.parent().expect("object path has parent"))?;

        let start = Instant::now();
        let mut tmp = tempfile::NamedTempFile::new_in(path.parent().unwrap())?;
        tmp.write_all(payload)?;
        tmp.as_file().sync_data()?;
        tmp.persist(&path).map_err(|e| StoreError::Io(e.error))?;
        let save_time_ms = ms(start.elapsed());

        let entry = IntermediateDataset {
            sid: format!("sid-{}", uuid::Uuid::new_v4().simple()),
            did: meta.did,
            size_bytes: size,
            save_time_ms,
            load_time_ms: save_time_ms,
            load_samples: 0,
            producer: meta.producer,
            fingerprint,
            shape: meta.shape,
            states: meta.states,
            rule: meta.rule,
            created_at: now_ms(),
            payload_uri: rel,
            content_digest: Digest::of(payload),
            digest_alg: DIGEST_ALGORITHM.to_string(),
        };
        {
            let mut index = self.index.write().unwrap();
            index.insert(fingerprint, entry.clone());
            self.persist_index(&index)?;
        }
        self.evict_locked()?;
        if self.live_bytes() > self.config.capacity {
            // everything else is pinned; give the space back
            self.remove_locked(&[fingerprint])?;
            return Err(StoreError::CapacityExceeded {
                needed: size,
                capacity: self.config.capacity,
            });
        }
        Ok(entry)
    }

    /// Loads a payload. `Ok(None)` is a cache miss.
    pub fn get_intermediate(
        &self,
        fingerprint: &Digest,
    ) -> Result<Option<(Vec<u8>, IntermediateDataset)>, StoreError> {
        let _pin = self.pin(*fingerprint);
        let Some(entry) = self.entry(fingerprint) else {
            self.misses.fetch_add(1, Ordering::Relaxed);
            return Ok(None);
        };
        let start = Instant::now();
        if !self.config.load_delay.is_zero() {
            std::thread::sleep(self.config.load_delay);
        }
        let (path, _) = self.object_path(fingerprint);
        let payload = match std::fs::read(&path) {
            Ok(p) => p,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::Corrupt(*fingerprint))
            }
            Err(e) => return Err(e.into()),
        };
        if payload.len() as u64 != entry.size_bytes || Digest::of(&payload) != entry.content_digest {
            return Err(StoreError::Corrupt(*fingerprint));
        }
        let elapsed = ms(start.elapsed());
        self.hits.fetch_add(1, Ordering::Relaxed);
        let updated = self.record_load_time(fingerprint, elapsed)?.unwrap_or(entry);
        Ok(Some((payload, updated)))
    }

    /// Folds one observed load duration into the entry's estimate.
    pub fn record_load_time(
        &self,
        fingerprint: &Digest,
        observed_ms: f64,
    ) -> Result<Option<IntermediateDataset>, StoreError> {
        let _w = self.write_lock.lock().unwrap();
        let mut index = self.index.write().unwrap();
        let Some(e) = index.get_mut(fingerprint) else {
            return Ok(None);
        };
        e.load_time_ms = if e.load_samples == 0 {
            observed_ms
        } else {
            LOAD_EMA_ALPHA * observed_ms + (1.0 - LOAD_EMA_ALPHA) * e.load_time_ms
        };
        e.load_samples += 1;
        let updated = e.clone();
        self.persist_index(&index)?;
        Ok(Some(updated))
    }

    /// Mean `exec_time_ms` of executed events per (module, state).
    fn producer_means(&self) -> HashMap<(String, Digest), f64> {
        let mut acc: HashMap<(String, Digest), (f64, u64)> = HashMap::new();
        self.with_records(|records| {
            for e in records.iter().flat_map(|r| &r.node_events) {
                if e.outcome == NodeOutcome::Executed {
                    let slot = acc.entry((e.module_id.clone(), e.state)).or_default();
                    slot.0 += e.exec_time_ms;
                    slot.1 += 1;
                }
            }
        });
        acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
    }

    /// Benefit of keeping `entry`: expected compute time saved per load,
    /// weighted by the confidence of its rule.
    pub fn benefit(&self, entry: &IntermediateDataset) -> f64 {
        let means = self.producer_means();
        self.benefit_with(entry, &means)
    }

    fn benefit_with(&self, entry: &IntermediateDataset, means: &HashMap<(String, Digest), f64>) -> f64 {
        let exec = means
            .get(&(entry.producer.module_id.clone(), entry.producer.state))
            .copied()
            .unwrap_or(0.0);
        let confidence = self.benefit.read().unwrap().confidence(entry);
        (exec - entry.load_time_ms) * confidence
    }

    /// Evicts lowest-benefit entries until live bytes fit the capacity.
    pub fn evict(&self) -> Result<Vec<String>, StoreError> {
        let _w = self.write_lock.lock().unwrap();
        self.evict_locked()
    }

    fn evict_locked(&self) -> Result<Vec<String>, StoreError> {
        let means = self.producer_means();
        let candidates: Vec<(Digest, EvictionCandidate)> = self
            .index
            .read()
            .unwrap()
            .values()
            .map(|e| {
                (
                    e.fingerprint,
                    EvictionCandidate {
                        sid: e.sid.clone(),
                        size_bytes: e.size_bytes,
                        benefit: self.benefit_with(e, &means),
                        pinned: self.is_pinned(&e.fingerprint),
                        created_at: e.created_at,
                    },
                )
            })
            .collect();
        let plain: Vec<EvictionCandidate> = candidates.iter().map(|(_, c)| c.clone()).collect();
        let chosen = select_evictions(&plain, self.config.capacity);
        if chosen.is_empty() {
            return Ok(chosen);
        }
        let fps: Vec<Digest> = candidates
            .iter()
            .filter(|(_, c)| chosen.contains(&c.sid))
            .map(|(fp, _)| *fp)
            .collect();
        self.remove_locked(&fps)?;
        Ok(chosen)
    }

    fn remove_locked(&self, fps: &[Digest]) -> Result<(), StoreError> {
        let mut index = self.index.write().unwrap();
        for fp in fps {
            if index.remove(fp).is_some() {
                let (path, _) = self.object_path(fp);
                match std::fs::remove_file(&path) {
                    Ok(()) => {}
                    Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
                    Err(e) => return Err(e.into()),
                }
            }
        }
        self.persist_index(&index)
    }

    pub fn stats(&self) -> StoreStats {
        let index = self.index.read().unwrap();
        StoreStats {
            entries: index.len() as u64,
            bytes: index.values().map(|e| e.size_bytes).sum(),
            capacity: self.config.capacity,
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            records: self.history.read().unwrap().records().len() as u64,
        }
    }
}
